use thiserror::Error;

/// Errors raised by the toolkit. Each variant names the module that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lagrangian: f'' undefined at rho = {rho}")]
    UndefinedDerivative { rho: f64 },
    #[error("lagrangian: cannot invert f' at r = {r}: {reason}")]
    InversionFailure { r: f64, reason: String },
    #[error("lagrangian: no growth sandwich fits the samples: {0}")]
    FitFailure(String),
    #[error("lagrangian: unknown family `{0}`")]
    UnknownFamily(String),

    #[error("grid: degenerate grid ({0})")]
    DegenerateGrid(String),
    #[error("grid: precondition violated: {0}")]
    GridPrecondition(String),

    #[error("minimize: boundary mismatch at node {node}: u = {value}, psi = {expected}")]
    BoundaryMismatch { node: usize, value: f64, expected: f64 },
    #[error("minimize: no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("minimize: {count} degenerate cells with |grad u| < 1e-12 (first: {first:?})")]
    DegenerateCells { count: usize, first: Vec<usize> },
    #[error("minimize: {0}")]
    MinimizePrecondition(String),
    #[error("minimize: unknown optimizer `{0}`")]
    UnknownOptimizer(String),

    #[error("stream: singular cell {cell}: |grad u| = 0 with f'(0) > 0")]
    SingularCell { cell: usize },
    #[error("stream: linear solver stagnated after {iterations} iterations (relative residual {residual:e})")]
    SolverStagnation { iterations: usize, residual: f64 },
    #[error("stream: path is not a closed lattice loop: {0}")]
    OpenPath(String),

    #[error("critical: zero gradient on loop node {node}")]
    ZeroGradientOnLoop { node: usize },
    #[error("critical: ambiguous level crossing near angle {angle}")]
    AmbiguousCrossing { angle: f64 },
    #[error("critical: level extraction failed: {0}")]
    LevelExtraction(String),
    #[error("critical: precondition violated: {0}")]
    CriticalPrecondition(String),

    #[error("pde: coefficient requested outside its domain: {0}")]
    CoefficientDomain(String),
    #[error("pde: test function does not touch: {0}")]
    NotTouching(String),
    #[error("pde: |M(p)| = 0 at nonzero gradient (node {node})")]
    ZeroFlux { node: usize },
    #[error("pde: unknown equation form `{0}`")]
    UnknownForm(String),

    #[error("reference: point ({x}, {y}) outside the unit disk")]
    OutsideDomain { x: f64, y: f64 },

    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field file: {0}")]
    FieldFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
