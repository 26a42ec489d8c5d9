//! Discrete functionals `J(u) = sum_T f(|grad u|_T) |T|` on the piecewise
//! linear triangulation and their constrained minimization.
//!
//! Boundary nodes are pinned to `psi`; the unknowns are the interior nodal
//! values. Assembly maps over triangles in parallel and gathers per node in a
//! fixed order, so every energy and gradient is bitwise reproducible.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{BoundaryData, Grid2D, NodeKind, ScalarField};
use crate::lagrangian::Lagrangian;
use crate::numeric::{norm, pairwise_sum, pcg, vdot};
use crate::registry::Registry;
use crate::{Error, Result};

/// Cells with `|grad u|` below this carry zero flux.
pub const DEGENERATE_RHO: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// A Lagrangian, a grid and Dirichlet data on the grid's boundary nodes.
#[derive(Debug, Clone)]
pub struct EnergySpec {
    pub lagrangian: Arc<dyn Lagrangian>,
    pub grid: Arc<Grid2D>,
    pub bdata: Arc<BoundaryData>,
}

impl EnergySpec {
    pub fn new(lagrangian: Arc<dyn Lagrangian>, grid: Arc<Grid2D>, bdata: Arc<BoundaryData>) -> Result<Self> {
        if bdata.values().len() != grid.len() {
            return Err(Error::MinimizePrecondition("boundary data built for a different grid".into()));
        }
        if grid.boundary_nodes().iter().any(|&k| !bdata.psi(k).is_finite()) {
            return Err(Error::MinimizePrecondition("psi missing at a boundary node".into()));
        }
        Ok(Self { lagrangian, grid, bdata })
    }

    pub fn with_lagrangian(&self, lagrangian: Arc<dyn Lagrangian>) -> Self {
        Self { lagrangian, grid: self.grid.clone(), bdata: self.bdata.clone() }
    }

    /// Overwrites boundary entries of `values` with `psi`.
    pub fn pin(&self, values: &mut [f64]) {
        for &k in self.grid.boundary_nodes() {
            values[k] = self.bdata.psi(k);
        }
    }

    fn check_boundary(&self, u: &ScalarField) -> Result<()> {
        if !Arc::ptr_eq(u.grid(), &self.grid) && u.grid().kinds() != self.grid.kinds() {
            return Err(Error::MinimizePrecondition("field lives on a different grid".into()));
        }
        for &k in self.grid.boundary_nodes() {
            let (value, expected) = (u.get(k), self.bdata.psi(k));
            if (value - expected).abs() > 1e-12 * (1.0 + expected.abs()) {
                return Err(Error::BoundaryMismatch { node: k, value, expected });
            }
        }
        Ok(())
    }

    fn field(&self, values: Vec<f64>) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), values)
    }
}

/// `A(p) = f'(|p|) p / |p|`, zero below [`DEGENERATE_RHO`].
pub fn flux(l: &dyn Lagrangian, p: [f64; 2]) -> [f64; 2] {
    let rho = norm(p);
    if rho < DEGENERATE_RHO {
        return [0.0, 0.0];
    }
    let s = l.fp(rho) / rho;
    [s * p[0], s * p[1]]
}

/// `sum_T <F_T, grad phi_k> |T|` for every interior node `k` (zero elsewhere).
pub fn gather_divergence(grid: &Grid2D, fluxes: &[[f64; 2]]) -> Vec<f64> {
    let scale = 0.5 * grid.h();
    let tris = grid.triangles();
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if grid.kind(k) != NodeKind::Interior {
                return 0.0;
            }
            let mut acc = 0.0;
            for &(t, loc) in grid.node_triangles(k) {
                let hat = tris[t as usize].hat_gradient(loc as usize);
                let f = fluxes[t as usize];
                acc += f[0] * hat[0] + f[1] * hat[1];
            }
            acc * scale
        })
        .collect()
}

/// Energy and its gradient with respect to the interior nodal values.
pub fn energy_and_gradient(spec: &EnergySpec, values: &[f64]) -> (f64, Vec<f64>) {
    let grid = &spec.grid;
    let l = spec.lagrangian.as_ref();
    let h = grid.h();
    let (dens, fluxes): (Vec<f64>, Vec<[f64; 2]>) = grid
        .triangles()
        .par_iter()
        .map(|t| {
            let p = t.gradient(values, h);
            (l.f(norm(p)), flux(l, p))
        })
        .unzip();
    let energy = pairwise_sum(&dens) * grid.cell_area();
    (energy, gather_divergence(grid, &fluxes))
}

pub fn energy_of_values(spec: &EnergySpec, values: &[f64]) -> f64 {
    let grid = &spec.grid;
    let l = spec.lagrangian.as_ref();
    let h = grid.h();
    let dens: Vec<f64> = grid.triangles().par_iter().map(|t| l.f(norm(t.gradient(values, h)))).collect();
    pairwise_sum(&dens) * grid.cell_area()
}

/// Gradient of the discrete energy (the assembled Euler-Lagrange residual).
pub fn el_gradient(spec: &EnergySpec, values: &[f64]) -> Vec<f64> {
    let grid = &spec.grid;
    let l = spec.lagrangian.as_ref();
    let h = grid.h();
    let fluxes: Vec<[f64; 2]> = grid.triangles().par_iter().map(|t| flux(l, t.gradient(values, h))).collect();
    gather_divergence(grid, &fluxes)
}

/// `sum_T f(|grad u|_T) |T|`; `u` must agree with `psi` on the boundary.
pub fn energy(spec: &EnergySpec, u: &ScalarField) -> Result<f64> {
    spec.check_boundary(u)?;
    Ok(energy_of_values(spec, u.values()))
}

/// Largest weak Euler-Lagrange residual over interior hat functions.
///
/// Fails when some cell has `|grad u| < 1e-12` and the Lagrangian has
/// `f'(0) > 0`, since the flux is then undefined.
pub fn weak_el_residual(spec: &EnergySpec, u: &ScalarField) -> Result<f64> {
    let grads = u.cell_gradients();
    if spec.lagrangian.fp0() > 0.0 {
        let bad: Vec<usize> = grads
            .iter()
            .enumerate()
            .filter(|(_, p)| norm(**p) < DEGENERATE_RHO)
            .map(|(t, _)| t)
            .collect();
        if !bad.is_empty() {
            return Err(Error::DegenerateCells { count: bad.len(), first: bad.into_iter().take(8).collect() });
        }
    }
    let l = spec.lagrangian.as_ref();
    let fluxes: Vec<[f64; 2]> = grads.par_iter().map(|&p| flux(l, p)).collect();
    Ok(max_abs(&gather_divergence(&spec.grid, &fluxes)))
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest per-cell `|grad u|`.
pub fn sup_cell_gradient(u: &ScalarField) -> f64 {
    u.cell_gradients().iter().fold(0.0f64, |m, &p| m.max(norm(p)))
}

/// Result of one optimizer run.
#[derive(Debug, Clone)]
pub struct OptimizerOutcome {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// A method that drives the max-norm of the energy gradient below `tol`.
pub trait Optimizer: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn run(&self, spec: &EnergySpec, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<OptimizerOutcome>;
}

/// Knobs shared by the registered optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    /// Inner linear-solve tolerance (lagged diffusivity only).
    pub inner_rtol: f64,
    /// Cap on inner iterations.
    pub inner_max_iter: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self { inner_rtol: 1e-3, inner_max_iter: 2000 }
    }
}

pub fn optimizer_registry() -> Registry<dyn Optimizer, OptimizerParams> {
    let mut reg: Registry<dyn Optimizer, OptimizerParams> = Registry::new("optimizer");
    reg.register("accelerated", "accelerated gradient descent with backtracking and restart", |_| {
        Ok(Box::new(Accelerated))
    });
    reg.register("kacanov", "lagged-diffusivity steps with an Armijo line search", |p| {
        Ok(Box::new(LaggedDiffusivity { params: *p }))
    });
    reg
}

/// Nesterov/FISTA iteration with backtracking on the step `1/L` and
/// gradient-based restart, run in the diagonal metric of the lagged
/// diffusivity operator. The metric is rebuilt at a restart once at least
/// [`METRIC_REFRESH`] iterations have passed since the last rebuild.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accelerated;

/// Minimum number of iterations between metric rebuilds.
pub const METRIC_REFRESH: usize = 50;

/// Diagonal of `K_w` with `w_T = f'(rho_T)/rho_T` (rho floored), at free nodes.
fn lagged_diagonal(spec: &EnergySpec, values: &[f64]) -> Vec<f64> {
    let grid = &spec.grid;
    let l = spec.lagrangian.as_ref();
    let h = grid.h();
    let w: Vec<f64> = grid
        .triangles()
        .par_iter()
        .map(|t| {
            let rho = norm(t.gradient(values, h)).max(WEIGHT_RHO_FLOOR);
            l.fp(rho) / rho
        })
        .collect();
    let tris = grid.triangles();
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if grid.kind(k) != NodeKind::Interior {
                return 0.0;
            }
            grid.node_triangles(k)
                .iter()
                .map(|&(t, loc)| {
                    let hat = tris[t as usize].hat_gradient(loc as usize);
                    0.5 * w[t as usize] * (hat[0] * hat[0] + hat[1] * hat[1])
                })
                .sum()
        })
        .collect()
}

impl Optimizer for Accelerated {
    fn name(&self) -> &'static str {
        "accelerated"
    }

    fn run(&self, spec: &EnergySpec, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<OptimizerOutcome> {
        let free: Vec<usize> = spec.grid.interior_nodes().to_vec();
        let mut x = x0;
        let gx = el_gradient(spec, &x);
        let mut res = max_abs(&gx);
        if res <= tol {
            return Ok(OptimizerOutcome { values: x, iterations: 0, grad_norm: res, converged: true });
        }
        let mut metric = lagged_diagonal(spec, &x);
        let mut since_refresh = 0usize;
        let mut y = x.clone();
        let mut gy = gx;
        let mut t = 1.0f64;
        let mut lip = 1.0f64;
        let mut xn = x.clone();
        for it in 1..=max_iter {
            let gn = loop {
                for &k in &free {
                    xn[k] = y[k] - gy[k] / (lip * metric[k]);
                }
                let gn = el_gradient(spec, &xn);
                let (mut dg, mut dx) = (0.0, 0.0);
                for &k in &free {
                    dg += (gn[k] - gy[k]).powi(2) / metric[k];
                    dx += (xn[k] - y[k]).powi(2) * metric[k];
                }
                if dg <= lip * lip * dx * (1.0 + 1e-12) {
                    break gn;
                }
                lip *= 2.0;
                if !lip.is_finite() {
                    return Ok(OptimizerOutcome { values: x, iterations: it, grad_norm: res, converged: false });
                }
            };
            res = max_abs(&gn);
            if res <= tol {
                return Ok(OptimizerOutcome { values: xn, iterations: it, grad_norm: res, converged: true });
            }
            let restart = free.iter().map(|&k| (y[k] - xn[k]) * (xn[k] - x[k]) * metric[k]).sum::<f64>() > 0.0;
            since_refresh += 1;
            if restart && since_refresh >= METRIC_REFRESH {
                metric = lagged_diagonal(spec, &xn);
                since_refresh = 0;
                lip = 1.0;
            }
            let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
            let mom = if restart { 0.0 } else { (t - 1.0) / t_next };
            for &k in &free {
                y[k] = xn[k] + mom * (xn[k] - x[k]);
            }
            std::mem::swap(&mut x, &mut xn);
            gy = if mom == 0.0 { gn } else { el_gradient(spec, &y) };
            t = t_next;
            lip *= 0.95;
        }
        Ok(OptimizerOutcome { values: x, iterations: max_iter, grad_norm: res, converged: false })
    }
}

/// Lagged diffusivity (Kacanov) steps: solve `K_w d = -grad E` with
/// `w_T = f'(rho_T) / rho_T` frozen at the current iterate, then backtrack
/// along `d`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaggedDiffusivity {
    pub params: OptimizerParams,
}

/// Floor on `rho` when forming lagged weights.
const WEIGHT_RHO_FLOOR: f64 = 1e-8;

impl LaggedDiffusivity {
    /// Edge weights of the 5-point operator: east edge then north edge per node.
    fn edge_weights(spec: &EnergySpec, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let grid = &spec.grid;
        let l = spec.lagrangian.as_ref();
        let h = grid.h();
        let w: Vec<f64> = grid
            .triangles()
            .par_iter()
            .map(|t| {
                let rho = norm(t.gradient(values, h)).max(WEIGHT_RHO_FLOOR);
                l.fp(rho) / rho
            })
            .collect();
        let mut east = vec![0.0; grid.len()];
        let mut north = vec![0.0; grid.len()];
        for (idx, t) in grid.triangles().iter().enumerate() {
            let [a, b, c] = t.nodes;
            let half = 0.5 * w[idx];
            if t.upper {
                // a=(i,j), b=(i,j+1), c=(i+1,j+1): north edge of a, east edge of b
                north[a] += half;
                east[b] += half;
            } else {
                // a=(i,j), b=(i+1,j), c=(i+1,j+1): east edge of a, north edge of b
                east[a] += half;
                north[b] += half;
            }
            let _ = c;
        }
        (east, north)
    }
}

impl Optimizer for LaggedDiffusivity {
    fn name(&self) -> &'static str {
        "kacanov"
    }

    fn run(&self, spec: &EnergySpec, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<OptimizerOutcome> {
        let grid = spec.grid.clone();
        let nx = grid.nx();
        let n = grid.len();
        let free: Vec<bool> = (0..n).map(|k| grid.kind(k) == NodeKind::Interior).collect();
        let mut x = x0;
        let (mut e, mut g) = energy_and_gradient(spec, &x);
        let mut res = max_abs(&g);
        let mut trial = x.clone();
        for it in 1..=max_iter {
            if res <= tol {
                return Ok(OptimizerOutcome { values: x, iterations: it - 1, grad_norm: res, converged: true });
            }
            let (east, north) = Self::edge_weights(spec, &x);
            let diag: Vec<f64> = (0..n)
                .map(|k| {
                    if !free[k] {
                        return 0.0;
                    }
                    east[k] + north[k] + east[k - 1] + north[k - nx]
                })
                .collect();
            let apply = |v: &[f64], out: &mut [f64]| {
                out.par_iter_mut().enumerate().for_each(|(k, o)| {
                    *o = if free[k] {
                        let nb = |m: usize| if free[m] { v[m] } else { 0.0 };
                        diag[k] * v[k]
                            - east[k] * nb(k + 1)
                            - east[k - 1] * nb(k - 1)
                            - north[k] * nb(k + nx)
                            - north[k - nx] * nb(k - nx)
                    } else {
                        0.0
                    };
                });
            };
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut d = vec![0.0; n];
            pcg(apply, &diag, &rhs, &mut d, self.params.inner_rtol, self.params.inner_max_iter);
            let slope = vdot(&g, &d);
            if !(slope < 0.0) {
                return Ok(OptimizerOutcome { values: x, iterations: it, grad_norm: res, converged: false });
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                for k in 0..n {
                    trial[k] = x[k] + step * d[k];
                }
                let (et, gt) = energy_and_gradient(spec, &trial);
                let noise = 1e-14 * e.abs().max(1.0);
                if et <= e + 1e-4 * step * slope + noise && (et < e || max_abs(&gt) < res) {
                    accepted = Some((et, gt));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((et, gt)) => {
                    std::mem::swap(&mut x, &mut trial);
                    e = et;
                    g = gt;
                    res = max_abs(&g);
                }
                None => return Ok(OptimizerOutcome { values: x, iterations: it, grad_norm: res, converged: false }),
            }
        }
        let converged = res <= tol;
        Ok(OptimizerOutcome { values: x, iterations: max_iter, grad_norm: res, converged })
    }
}

/// Discrete harmonic extension of `psi` (5-point Laplace with Dirichlet data).
pub fn harmonic_extension(grid: &Arc<Grid2D>, bdata: &BoundaryData) -> Result<ScalarField> {
    let n = grid.len();
    let nx = grid.nx();
    let free: Vec<bool> = (0..n).map(|k| grid.kind(k) == NodeKind::Interior).collect();
    let mut x: Vec<f64> = (0..n)
        .map(|k| match grid.kind(k) {
            NodeKind::Boundary => bdata.psi(k),
            _ => 0.0,
        })
        .collect();
    let nbrs = |k: usize| [k + 1, k - 1, k + nx, k - nx];
    let rhs: Vec<f64> = (0..n)
        .map(|k| if free[k] { nbrs(k).iter().filter(|&&m| !free[m]).map(|&m| x[m]).sum() } else { 0.0 })
        .collect();
    let diag: Vec<f64> = (0..n).map(|k| if free[k] { 4.0 } else { 0.0 }).collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            *o = if free[k] {
                4.0 * v[k] - nbrs(k).iter().filter(|&&m| free[m]).map(|&m| v[m]).sum::<f64>()
            } else {
                0.0
            };
        });
    };
    let mut sol = vec![0.0; n];
    let out = pcg(apply, &diag, &rhs, &mut sol, 1e-12, 20 * n);
    if !out.converged {
        return Err(Error::SolverStagnation { iterations: out.iterations, residual: out.relative_residual });
    }
    for k in 0..n {
        if free[k] {
            x[k] = sol[k];
        } else if grid.kind(k) == NodeKind::Exterior {
            x[k] = f64::NAN;
        }
    }
    ScalarField::new(grid.clone(), x)
}

/// Settings for [`minimize_smooth`] and [`minimize_limit`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub optimizer: String,
    pub params: OptimizerParams,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, optimizer: "accelerated".into(), params: OptimizerParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: ScalarField,
    pub energy: f64,
    pub iterations: usize,
    /// Max-norm of the assembled Euler-Lagrange residual at the returned iterate.
    pub grad_norm: f64,
    pub sup_grad: f64,
    pub converged: bool,
    pub lagrangian: String,
}

/// Minimizes the smooth functional starting from `init`; non-convergence is
/// reported in the flag rather than as an error.
pub fn solve_smooth(spec: &EnergySpec, init: &ScalarField, opts: &SolveOptions) -> Result<SolveReport> {
    if spec.lagrangian.fp0() != 0.0 {
        return Err(Error::MinimizePrecondition(format!(
            "Lagrangian `{}` has f'(0) = {} and is not differentiable at 0",
            spec.lagrangian.name(),
            spec.lagrangian.fp0()
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::MinimizePrecondition("tol must be positive and max_iter nonzero".into()));
    }
    let optimizer = optimizer_registry().create(&opts.optimizer, &opts.params)?;
    let mut x0 = init.values().to_vec();
    spec.pin(&mut x0);
    let out = optimizer.run(spec, x0, opts.tol, opts.max_iter)?;
    let u = spec.field(out.values)?;
    Ok(SolveReport {
        energy: energy_of_values(spec, u.values()),
        sup_grad: sup_cell_gradient(&u),
        u,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        converged: out.converged,
        lagrangian: spec.lagrangian.name(),
    })
}

/// Minimizes from the harmonic extension of `psi`; errors on non-convergence.
pub fn minimize_smooth(spec: &EnergySpec, opts: &SolveOptions) -> Result<SolveReport> {
    let init = harmonic_extension(&spec.grid, &spec.bdata)?;
    let report = solve_smooth(spec, &init, opts)?;
    if !report.converged {
        return Err(Error::NonConvergence { iterations: report.iterations, residual: report.grad_norm });
    }
    Ok(report)
}

/// Final iterate of the approximation scheme and the per-`n` reports.
#[derive(Debug, Clone)]
pub struct LimitResult {
    pub u: ScalarField,
    pub trace: Vec<SolveReport>,
}

/// Runs [`solve_smooth`] over `specs` (increasing `n`), warm-starting each
/// solve from the previous minimizer. Stops at the first non-converged solve
/// and returns the partial trace in the error-free result; callers decide.
pub fn minimize_limit_partial(specs: &[EnergySpec], opts: &SolveOptions) -> Result<LimitResult> {
    minimize_schedule(specs, opts, false)
}

/// Warm-started sweep over the schedule. With `keep_going` a stage that
/// stops at `max_iter` (or where the optimizer stalls) still seeds the next
/// one, and the trace covers the whole schedule.
pub fn minimize_schedule(specs: &[EnergySpec], opts: &SolveOptions, keep_going: bool) -> Result<LimitResult> {
    let first = specs.first().ok_or_else(|| Error::MinimizePrecondition("empty schedule".into()))?;
    for s in specs {
        if !Arc::ptr_eq(&s.grid, &first.grid) && s.grid.kinds() != first.grid.kinds() {
            return Err(Error::MinimizePrecondition("schedule mixes grids".into()));
        }
    }
    let mut current = harmonic_extension(&first.grid, &first.bdata)?;
    let mut trace = Vec::with_capacity(specs.len());
    for spec in specs {
        let report = solve_smooth(spec, &current, opts)?;
        current = report.u.clone();
        let done = !report.converged && !keep_going;
        trace.push(report);
        if done {
            break;
        }
    }
    Ok(LimitResult { u: current, trace })
}

/// As [`minimize_limit_partial`], but non-convergence is an error.
pub fn minimize_limit(specs: &[EnergySpec], opts: &SolveOptions) -> Result<LimitResult> {
    let out = minimize_limit_partial(specs, opts)?;
    if let Some(last) = out.trace.last() {
        if !last.converged {
            return Err(Error::NonConvergence { iterations: last.iterations, residual: last.grad_norm });
        }
    }
    Ok(out)
}
