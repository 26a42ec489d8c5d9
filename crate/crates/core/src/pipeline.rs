//! End-to-end runs: domain, boundary data, the approximation schedule, stream
//! functions and the diagnostics, driven by a JSON [`RunConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical::{analyze, bernstein_check, default_eps, detect, CriticalReport};
use crate::grid::{build_disk, build_rect, gradient, verify_bsc, BoundaryData, Grid2D, ScalarField};
use crate::lagrangian::{alpha_of, beta_limit, conjugate, make_family, FamilyParams, Lagrangian, INVERSION_TOL};
use crate::minimize::{minimize_schedule, optimizer_registry, EnergySpec, OptimizerParams, SolveOptions, SolveReport};
use crate::pde::{infinity_harmonic_region, make_form, max_residual, residual, FormParams};
use crate::reference::remark_solution;
use crate::stream::stream_pair;
use crate::{Error, Result};

pub const SCHEMA: &str = "varcrit.run/1";

/// Exit status for a violated hard invariant.
pub const EXIT_INVARIANT: i32 = 2;
/// Exit status for numerical non-convergence.
pub const EXIT_NON_CONVERGENCE: i32 = 3;

/// Tolerance for the zero-mean normalization of `v`.
pub const MEAN_TOL: f64 = 1e-12;
/// Tolerance for the Fenchel defect sign.
pub const DEFECT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Disk { radius: f64 },
    Rect { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// `psi = a x + b y + c`.
    Affine { a: f64, b: f64, c: f64 },
    /// Trace of the closed-form reference solution (disk domains only).
    Reference,
    /// Boundary values from a field CSV written on the same grid.
    File { path: PathBuf },
    /// `amplitude * sum_k (a_k cos k θ + b_k sin k θ) / k²` with seeded
    /// coefficients uniform in `[-1, 1]`.
    RandomFourier { modes: u32, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub domain: DomainSpec,
    pub h: f64,
    pub family: String,
    pub schedule: Vec<u32>,
    #[serde(default = "default_s")]
    pub s: f64,
    pub boundary: BoundarySpec,
    pub q: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default)]
    pub optimizer_params: OptimizerParams,
    #[serde(default)]
    pub seed: u64,
    /// Keep sweeping the schedule past a stage that misses `tol`; the run
    /// still reports `non_convergence` but carries final diagnostics.
    #[serde(default)]
    pub continue_on_stall: bool,
    /// Candidate threshold; defaults to `2 h sup|∇u|`.
    #[serde(default)]
    pub critical_eps: Option<f64>,
    /// Loop radius for indices and branch counts; defaults to `6 h`.
    #[serde(default)]
    pub loop_radius: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_s() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    crate::minimize::DEFAULT_TOL
}
fn default_max_iter() -> usize {
    crate::minimize::DEFAULT_MAX_ITER
}
fn default_optimizer() -> String {
    "accelerated".into()
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses JSON; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Reference-disk configuration: `R = 0.9`, family `a`, schedule `{4, 8, 16, 32}`.
    pub fn reference(h: f64) -> Self {
        Self {
            schema: SCHEMA.into(),
            domain: DomainSpec::Disk { radius: 0.9 },
            h,
            family: "a".into(),
            schedule: vec![4, 8, 16, 32],
            s: 1.0,
            boundary: BoundarySpec::Reference,
            q: 10.0,
            tol: default_tol(),
            max_iter: default_max_iter(),
            optimizer: default_optimizer(),
            optimizer_params: OptimizerParams::default(),
            seed: 0,
            continue_on_stall: false,
            critical_eps: None,
            loop_radius: None,
            output_dir: default_output(),
        }
    }

    pub fn loop_radius(&self) -> f64 {
        self.loop_radius.unwrap_or(6.0 * self.h)
    }
}

/// All violations of the configuration invariants; empty means valid.
pub fn validate(cfg: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.schema != SCHEMA {
        v.push(format!("schema must be `{SCHEMA}`, got `{}`", cfg.schema));
    }
    if !(cfg.h > 0.0 && cfg.h.is_finite()) {
        v.push(format!("h must be positive, got {}", cfg.h));
    }
    if !(cfg.q >= 0.0 && cfg.q.is_finite()) {
        v.push(format!("q must be nonnegative, got {}", cfg.q));
    }
    if !(cfg.tol > 0.0) {
        v.push(format!("tol must be positive, got {}", cfg.tol));
    }
    if cfg.max_iter == 0 {
        v.push("max_iter must be positive".into());
    }
    if !(cfg.optimizer_params.inner_rtol > 0.0) || cfg.optimizer_params.inner_max_iter == 0 {
        v.push("optimizer_params must be positive".into());
    }
    if cfg.schedule.is_empty() {
        v.push("schedule is empty".into());
    } else if cfg.schedule.windows(2).any(|w| w[0] >= w[1]) {
        v.push(format!("schedule must be strictly increasing, got {:?}", cfg.schedule));
    }
    if cfg.schedule.first() == Some(&0) {
        v.push("schedule entries must be positive".into());
    }
    if !matches!(cfg.family.as_str(), "a" | "b") {
        v.push(format!("family must be `a` or `b`, got `{}`", cfg.family));
    }
    if !(cfg.s > 0.0 && cfg.s <= 1.0) {
        v.push(format!("s must lie in (0, 1], got {}", cfg.s));
    }
    if !optimizer_registry().contains(&cfg.optimizer) {
        v.push(format!("unknown optimizer `{}`", cfg.optimizer));
    }
    if let Some(e) = cfg.critical_eps {
        if !(e > 0.0) {
            v.push(format!("critical_eps must be positive, got {e}"));
        }
    }
    if let Some(r) = cfg.loop_radius {
        if !(r > 0.0) {
            v.push(format!("loop_radius must be positive, got {r}"));
        }
    }
    match &cfg.domain {
        DomainSpec::Disk { radius } => {
            if !(*radius > 0.0) {
                v.push(format!("disk radius must be positive, got {radius}"));
            } else if cfg.h > 0.0 && !(cfg.h < radius / 4.0) {
                v.push(format!("h = {} must be below radius / 4", cfg.h));
            }
        }
        DomainSpec::Rect { a, b } => {
            if !(*a > 0.0 && *b > 0.0) {
                v.push(format!("rectangle sides must be positive, got {a} x {b}"));
            }
        }
    }
    match &cfg.boundary {
        BoundarySpec::Reference => match cfg.domain {
            DomainSpec::Disk { radius } if radius > 0.0 && radius < 1.0 => {}
            _ => v.push("reference boundary needs a disk of radius in (0, 1)".into()),
        },
        BoundarySpec::RandomFourier { modes, amplitude } => {
            if *modes == 0 || !amplitude.is_finite() {
                v.push("random_fourier needs modes >= 1 and a finite amplitude".into());
            }
        }
        BoundarySpec::Affine { a, b, c } => {
            if ![a, b, c].iter().all(|x| x.is_finite()) {
                v.push("affine coefficients must be finite".into());
            }
        }
        BoundarySpec::File { .. } => {}
    }
    v
}

pub fn build_grid(cfg: &RunConfig) -> Result<Grid2D> {
    match cfg.domain {
        DomainSpec::Disk { radius } => build_disk(radius, cfg.h),
        DomainSpec::Rect { a, b } => build_rect(a, b, cfg.h),
    }
}

/// Seeded Fourier coefficients `(a_k, b_k)`, `k = 1..=modes`.
pub fn fourier_coefficients(modes: u32, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..modes).map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect()
}

pub fn boundary_data(cfg: &RunConfig, grid: &Arc<Grid2D>) -> Result<BoundaryData> {
    match &cfg.boundary {
        BoundarySpec::Affine { a, b, c } => BoundaryData::from_fn(grid, cfg.q, |x, y| a * x + b * y + c),
        BoundarySpec::Reference => {
            let DomainSpec::Disk { radius } = cfg.domain else {
                return Err(Error::Config("reference boundary needs a disk domain".into()));
            };
            let r = remark_solution(radius)?;
            let f = r.sample(grid.clone())?;
            BoundaryData::from_values(grid, cfg.q, f.into_values())
        }
        BoundarySpec::File { path } => {
            let f = ScalarField::read_csv_on(path, grid.clone())?;
            BoundaryData::from_values(grid, cfg.q, f.into_values())
        }
        BoundarySpec::RandomFourier { modes, amplitude } => {
            let coef = fourier_coefficients(*modes, cfg.seed);
            BoundaryData::from_fn(grid, cfg.q, |x, y| {
                let th = y.atan2(x);
                amplitude
                    * coef
                        .iter()
                        .enumerate()
                        .map(|(i, (a, b))| {
                            let k = (i + 1) as f64;
                            (a * (k * th).cos() + b * (k * th).sin()) / (k * k)
                        })
                        .sum::<f64>()
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageN {
    pub n: u32,
    pub energy: f64,
    pub sup_grad: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stream_misfit: Option<f64>,
    pub f_value: Option<f64>,
    pub max_defect: Option<f64>,
    pub min_defect: Option<f64>,
    pub mean_v: Option<f64>,
    pub median_gradient_mismatch: Option<f64>,
    /// `max |grad u_n - grad u_prev|` over cells; `None` for the first stage.
    pub gradient_increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BscSummary {
    pub ok: bool,
    pub slack: f64,
    pub failing_nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariant {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaCheck {
    pub samples: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalDiagnostics {
    pub critical: CriticalReport,
    pub bernstein_min_slack: Option<f64>,
    /// Max `|residual|` per equation form on nodes with `|∇w| > 0.1`.
    pub residuals: BTreeMap<String, f64>,
    pub infinity_harmonic_nodes: usize,
    pub beta_check: Option<BetaCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: String,
    pub h: f64,
    pub interior_nodes: usize,
    pub boundary_nodes: usize,
    pub bsc: BscSummary,
    pub per_n: Vec<StageN>,
    pub final_diagnostics: Option<FinalDiagnostics>,
    pub invariants: Vec<Invariant>,
    pub status: String,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        match self.status.as_str() {
            "ok" => 0,
            "non_convergence" => EXIT_NON_CONVERGENCE,
            _ => EXIT_INVARIANT,
        }
    }
}

/// In-memory result of [`execute`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub u: ScalarField,
    pub v: Option<ScalarField>,
    pub trace: Vec<ScalarField>,
}

/// Residual threshold on `|∇w|` used in the report.
pub const RESIDUAL_GRAD_FLOOR: f64 = 0.1;

fn conjugate_range(l: &dyn Lagrangian, q: f64) -> f64 {
    (2.0 * l.fp(q.max(1.0)) + 1.0).max(10.0)
}

/// Cellwise `max |grad u_n - grad u_prev|` between consecutive stages.
fn gradient_increments(trace: &[SolveReport]) -> Vec<Option<f64>> {
    let grads: Vec<Vec<[f64; 2]>> = trace.iter().map(|rep| rep.u.cell_gradients()).collect();
    (0..grads.len())
        .map(|i| {
            let prev = grads.get(i.checked_sub(1)?)?;
            Some(prev.iter().zip(&grads[i]).fold(0.0f64, |m, (a, b)| m.max((a[0] - b[0]).hypot(a[1] - b[1]))))
        })
        .collect()
}


/// Runs the pipeline without touching the filesystem (except for `file` boundaries).
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    let violations = validate(cfg);
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let grid = Arc::new(build_grid(cfg)?);
    let bdata = Arc::new(boundary_data(cfg, &grid)?);
    let bsc = verify_bsc(&grid, &bdata)?;
    let bsc_summary = BscSummary { ok: bsc.ok, slack: bsc.slack, failing_nodes: bsc.failing_nodes() };
    let mut invariants = vec![Invariant {
        name: "bounded_slope_condition".into(),
        ok: bsc.ok,
        detail: format!("{} failing boundary nodes", bsc_summary.failing_nodes.len()),
    }];

    let fam = |n: u32| make_family(&cfg.family, &FamilyParams::case_study(n, cfg.s));
    let lagrangians: Vec<Arc<dyn Lagrangian>> = cfg.schedule.iter().map(|&n| fam(n)).collect::<Result<_>>()?;
    let specs: Vec<EnergySpec> = lagrangians
        .iter()
        .map(|l| EnergySpec::new(l.clone(), grid.clone(), bdata.clone()))
        .collect::<Result<_>>()?;
    let opts = SolveOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        optimizer: cfg.optimizer.clone(),
        params: cfg.optimizer_params,
    };
    let limit = minimize_schedule(&specs, &opts, cfg.continue_on_stall)?;
    let mut per_n = Vec::with_capacity(limit.trace.len());
    let mut last_v = None;
    let mut all_converged = true;
    let increments = gradient_increments(&limit.trace);
    for (i, rep) in limit.trace.iter().enumerate() {
        let l = &lagrangians[i];
        let mut stage = StageN {
            n: cfg.schedule[i],
            energy: rep.energy,
            sup_grad: rep.sup_grad,
            el_residual: rep.grad_norm,
            iterations: rep.iterations,
            converged: rep.converged,
            stream_misfit: None,
            f_value: None,
            max_defect: None,
            min_defect: None,
            mean_v: None,
            median_gradient_mismatch: None,
            gradient_increment: increments[i],
        };
        all_converged &= rep.converged;
        if rep.converged {
            let conj = conjugate(l.clone(), conjugate_range(l.as_ref(), cfg.q.max(rep.sup_grad)), INVERSION_TOL)?;
            let pair = stream_pair(l.as_ref(), &conj, &rep.u)?;
            let s = pair.summary(l.as_ref())?;
            stage.stream_misfit = Some(s.misfit);
            stage.f_value = Some(s.f_value);
            stage.max_defect = Some(s.max_defect);
            stage.min_defect = Some(s.min_defect);
            stage.mean_v = Some(s.mean_v);
            stage.median_gradient_mismatch = Some(s.median_gradient_mismatch);
            invariants.push(Invariant {
                name: format!("null_mean_n{}", stage.n),
                ok: s.mean_v.abs() <= MEAN_TOL,
                detail: format!("mean(v) = {:.3e}", s.mean_v),
            });
            invariants.push(Invariant {
                name: format!("defect_nonnegative_n{}", stage.n),
                ok: s.min_defect >= -DEFECT_TOL,
                detail: format!("min defect = {:.3e}", s.min_defect),
            });
            last_v = Some(pair.v);
        }
        invariants.push(Invariant {
            name: format!("gradient_bound_n{}", stage.n),
            ok: rep.sup_grad <= cfg.q,
            detail: format!("sup |grad u| = {:.6} vs Q = {}", rep.sup_grad, cfg.q),
        });
        per_n.push(stage);
    }
    let complete = limit.trace.len() == cfg.schedule.len();
    all_converged &= complete;

    let final_diagnostics = if all_converged || (complete && cfg.continue_on_stall) {
        Some(final_stage(cfg, &limit.u, last_v.as_ref(), lagrangians.last().expect("nonempty schedule"))?)
    } else {
        None
    };
    let status = if !all_converged {
        "non_convergence"
    } else if invariants.iter().all(|i| i.ok) {
        "ok"
    } else {
        "invariant_failure"
    };
    let report = RunReport {
        schema: SCHEMA.into(),
        h: cfg.h,
        interior_nodes: grid.interior_nodes().len(),
        boundary_nodes: grid.boundary_nodes().len(),
        bsc: bsc_summary,
        per_n,
        final_diagnostics,
        invariants,
        status: status.into(),
    };
    Ok(RunOutput {
        report,
        u: limit.u,
        v: last_v,
        trace: limit.trace.into_iter().map(|r| r.u).collect(),
    })
}

fn final_stage(cfg: &RunConfig, u: &ScalarField, v: Option<&ScalarField>, ln: &Arc<dyn Lagrangian>) -> Result<FinalDiagnostics> {
    let eps = cfg.critical_eps.unwrap_or_else(|| default_eps(u));
    let mut critical = detect(u, eps);
    analyze(u, &mut critical, cfg.loop_radius(), cfg.h * cfg.h);
    let base = crate::lagrangian::make_case_study();
    let bernstein_min_slack = bernstein_check(base.as_ref(), u, RESIDUAL_GRAD_FLOOR)?.min_slack;
    let n = *cfg.schedule.last().expect("nonempty schedule");
    let params = FormParams { r_max: conjugate_range(ln.as_ref(), cfg.q), ..FormParams::case_study(&cfg.family, n, cfg.s) };
    let mut residuals = BTreeMap::new();
    let gu = gradient(u);
    for name in ["nondiv_u", "case_study_u", "approx_u", "general_m"] {
        let form = make_form(name, &params)?;
        let r = residual(form.as_ref(), u)?;
        residuals.insert(name.to_string(), max_residual(&r, |k| gu.magnitude(k) > RESIDUAL_GRAD_FLOOR));
    }
    let mut infinity_harmonic_nodes = 0;
    if let Some(v) = v {
        let gv = gradient(v);
        let mut names = vec!["v_approx", "v_limit_alpha"];
        if cfg.family == "b" {
            names.push("v_limit_beta");
        }
        for name in names {
            let form = make_form(name, &params)?;
            let r = residual(form.as_ref(), v)?;
            residuals.insert(name.to_string(), max_residual(&r, |k| gv.magnitude(k) > RESIDUAL_GRAD_FLOOR));
        }
        infinity_harmonic_nodes = infinity_harmonic_region(v, base.as_ref()).len();
    }
    let beta_check = if cfg.family == "b" { Some(beta_deviation(ln, cfg.s)?) } else { None };
    Ok(FinalDiagnostics { critical, bernstein_min_slack, residuals, infinity_harmonic_nodes, beta_check })
}

/// `max |alpha_n(g_n'(r)) - beta(r)|` over `r = 0.1, ..., 0.9`.
pub fn beta_deviation(ln: &Arc<dyn Lagrangian>, s: f64) -> Result<BetaCheck> {
    let base = crate::lagrangian::make_case_study();
    let conj_n = conjugate(ln.clone(), 10.0, INVERSION_TOL)?;
    let conj = conjugate(base.clone(), 10.0, INVERSION_TOL)?;
    let samples: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let mut max_deviation: f64 = 0.0;
    for &r in &samples {
        let a = alpha_of(ln.as_ref(), conj_n.gp(r)?)?;
        let b = beta_limit(base.as_ref(), &conj, s, r)?;
        max_deviation = max_deviation.max((a - b).abs());
    }
    Ok(BetaCheck { samples, max_deviation })
}

/// Runs the pipeline and writes `u.csv`, `v.csv` and `report.json` to the
/// output directory.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let out = execute(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    out.u.write_csv(&cfg.output_dir.join("u.csv"))?;
    if let Some(v) = &out.v {
        v.write_csv(&cfg.output_dir.join("v.csv"))?;
    }
    let json = serde_json::to_string_pretty(&out.report)?;
    std::fs::write(cfg.output_dir.join("report.json"), json + "\n")?;
    Ok(out.report)
}


/// Result of the minimization stage alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub schema: String,
    pub h: f64,
    pub bsc: BscSummary,
    pub per_n: Vec<StageN>,
    pub converged: bool,
}

/// Minimizes across the schedule only; returns the summary and the final field.
pub fn solve_schedule(cfg: &RunConfig) -> Result<(SolveSummary, ScalarField)> {
    let violations = validate(cfg);
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let grid = Arc::new(build_grid(cfg)?);
    let bdata = Arc::new(boundary_data(cfg, &grid)?);
    let bsc = verify_bsc(&grid, &bdata)?;
    let specs: Vec<EnergySpec> = cfg
        .schedule
        .iter()
        .map(|&n| EnergySpec::new(make_family(&cfg.family, &FamilyParams::case_study(n, cfg.s))?, grid.clone(), bdata.clone()))
        .collect::<Result<_>>()?;
    let opts = SolveOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        optimizer: cfg.optimizer.clone(),
        params: cfg.optimizer_params,
    };
    let limit = minimize_schedule(&specs, &opts, cfg.continue_on_stall)?;
    let increments = gradient_increments(&limit.trace);
    let per_n: Vec<StageN> = limit
        .trace
        .iter()
        .zip(&cfg.schedule)
        .zip(increments)
        .map(|((rep, &n), gradient_increment)| StageN {
            n,
            energy: rep.energy,
            sup_grad: rep.sup_grad,
            el_residual: rep.grad_norm,
            iterations: rep.iterations,
            converged: rep.converged,
            stream_misfit: None,
            f_value: None,
            max_defect: None,
            min_defect: None,
            mean_v: None,
            median_gradient_mismatch: None,
            gradient_increment,
        })
        .collect();
    let converged = per_n.len() == cfg.schedule.len() && per_n.iter().all(|s| s.converged);
    let summary = SolveSummary {
        schema: SCHEMA.into(),
        h: cfg.h,
        bsc: BscSummary { ok: bsc.ok, slack: bsc.slack, failing_nodes: bsc.failing_nodes() },
        per_n,
        converged,
    };
    Ok((summary, limit.u))
}
