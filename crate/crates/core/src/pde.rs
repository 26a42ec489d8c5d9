//! Pointwise residuals of the second-order equations satisfied by minimizers,
//! stream functions and their limits, plus a touching-quadratic viscosity probe.
//!
//! Conventions: `Δw` is the trace of the Hessian and `Δ∞w = <D²w ∇w, ∇w>`
//! (not normalized). Residuals are reported raw.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::ConvexPolygon;
use crate::grid::{gradient, hessian_at, NodeKind, ScalarField, VectorField};
use crate::lagrangian::{alpha_of, beta_limit, conjugate, make_case_study, make_family, ConjugatePair, FamilyParams, Lagrangian, INVERSION_TOL};
use crate::numeric::{norm, Sym2};
use crate::registry::Registry;
use crate::{Error, Result};

/// Finite-difference derivatives of a nodal field.
#[derive(Debug, Clone)]
pub struct DiffOps {
    pub grad: VectorField,
    pub hess: Vec<Option<Sym2>>,
    pub lap: Vec<Option<f64>>,
    pub inf_lap: Vec<Option<f64>>,
}

impl DiffOps {
    pub fn new(w: &ScalarField) -> Self {
        let grad = gradient(w);
        let hess: Vec<Option<Sym2>> = (0..w.grid().len()).into_par_iter().map(|k| hessian_at(w, k)).collect();
        let lap = hess.iter().map(|h| h.map(|h| h.trace())).collect();
        let inf_lap = hess
            .iter()
            .enumerate()
            .map(|(k, h)| h.map(|h| infinity_laplacian(grad.at(k), &h)))
            .collect();
        Self { grad, hess, lap, inf_lap }
    }
}

/// `<H p, p>`; exactly zero when `p = 0`.
pub fn infinity_laplacian(p: [f64; 2], h: &Sym2) -> f64 {
    if p == [0.0, 0.0] {
        0.0
    } else {
        h.quad(p)
    }
}

/// A second-order operator `F(∇w, D²w)` whose value is the residual.
pub trait EquationForm: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn lhs(&self, p: [f64; 2], h: &Sym2) -> Result<f64>;
}

/// `-a Δ∞w - b |∇w|² Δw`.
fn two_term(p: [f64; 2], h: &Sym2, a: f64, b: f64) -> f64 {
    let rho2 = p[0] * p[0] + p[1] * p[1];
    -a * infinity_laplacian(p, h) - b * rho2 * h.trace()
}

/// `-(α(|∇w|) - 1) Δ∞w - |∇w|² Δw` for a Lagrangian `L`.
#[derive(Debug, Clone)]
pub struct NondivForm {
    pub lagrangian: Arc<dyn Lagrangian>,
}

impl EquationForm for NondivForm {
    fn name(&self) -> String {
        format!("nondiv[{}]", self.lagrangian.name())
    }

    fn lhs(&self, p: [f64; 2], h: &Sym2) -> Result<f64> {
        let a = alpha_of(self.lagrangian.as_ref(), norm(p))?;
        Ok(two_term(p, h, a - 1.0, 1.0))
    }
}

/// `-(|∇w|⁴ + w_y²) w_xx + 2 w_x w_y w_xy - (|∇w|⁴ + w_x²) w_yy`.
#[derive(Debug, Clone, Copy)]
pub struct CaseStudyForm;

impl EquationForm for CaseStudyForm {
    fn name(&self) -> String {
        "case_study_u".into()
    }

    fn lhs(&self, p: [f64; 2], h: &Sym2) -> Result<f64> {
        let (wx, wy) = (p[0], p[1]);
        let r4 = (wx * wx + wy * wy).powi(2);
        Ok(-(r4 + wy * wy) * h.xx + 2.0 * wx * wy * h.xy - (r4 + wx * wx) * h.yy)
    }
}

/// `-(1 - γ(|∇v|)) Δ∞v - |∇v|² γ(|∇v|) Δv` for a coefficient `γ`.
#[derive(Clone)]
pub struct StreamForm {
    name: String,
    coefficient: Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>,
}

impl fmt::Debug for StreamForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StreamForm").field("name", &self.name).finish()
    }
}

impl StreamForm {
    pub fn new(name: &str, coefficient: impl Fn(f64) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self { name: name.into(), coefficient: Arc::new(coefficient) }
    }

    /// `γ = α ∘ g'` for a conjugate pair; requests beyond its range are domain errors.
    pub fn alpha_of_conjugate(name: &str, conj: ConjugatePair) -> Self {
        Self::new(name, move |r| {
            let rho = conj.gp_in_range(r)?;
            alpha_of(conj.lagrangian().as_ref(), rho)
        })
    }
}

impl EquationForm for StreamForm {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn lhs(&self, p: [f64; 2], h: &Sym2) -> Result<f64> {
        let gamma = (self.coefficient)(norm(p))?;
        if !gamma.is_finite() {
            return Err(Error::CoefficientDomain(format!("{} coefficient at |p| = {}", self.name, norm(p))));
        }
        Ok(two_term(p, h, 1.0 - gamma, gamma))
    }
}

/// A vector field `M(p)` together with its Jacobian.
pub trait FluxMap: Send + Sync + fmt::Debug {
    fn eval(&self, p: [f64; 2]) -> [f64; 2];
    /// Row-major `∂M_i/∂p_j`.
    fn jacobian(&self, p: [f64; 2]) -> Result<[[f64; 2]; 2]>;
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityMap;

impl FluxMap for IdentityMap {
    fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        p
    }

    fn jacobian(&self, _p: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        Ok([[1.0, 0.0], [0.0, 1.0]])
    }
}

/// `M(p) = f'(|p|) p / |p|`.
#[derive(Debug, Clone)]
pub struct RadialFlux(pub Arc<dyn Lagrangian>);

impl FluxMap for RadialFlux {
    fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        let rho = norm(p);
        if rho == 0.0 {
            return [0.0, 0.0];
        }
        let s = self.0.fp(rho) / rho;
        [s * p[0], s * p[1]]
    }

    fn jacobian(&self, p: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let rho = norm(p);
        if rho == 0.0 {
            return Err(Error::CoefficientDomain("radial flux Jacobian at p = 0".into()));
        }
        let phi = self.0.fp(rho) / rho;
        let d = self.0.fpp(rho)? - phi;
        let (ux, uy) = (p[0] / rho, p[1] / rho);
        Ok([[phi + d * ux * ux, d * ux * uy], [d * ux * uy, phi + d * uy * uy]])
    }
}

/// `-(|p|³ / |M(p)|) tr(∇M(p) H)`.
#[derive(Debug, Clone)]
pub struct GeneralForm {
    pub map: Arc<dyn FluxMap>,
}

impl EquationForm for GeneralForm {
    fn name(&self) -> String {
        "general_m".into()
    }

    fn lhs(&self, p: [f64; 2], h: &Sym2) -> Result<f64> {
        let rho = norm(p);
        if rho == 0.0 {
            return Ok(0.0);
        }
        let m = norm(self.map.eval(p));
        if m == 0.0 {
            return Err(Error::ZeroFlux { node: usize::MAX });
        }
        let j = self.map.jacobian(p)?;
        let tr = j[0][0] * h.xx + j[0][1] * h.xy + j[1][0] * h.xy + j[1][1] * h.yy;
        Ok(-rho.powi(3) / m * tr)
    }
}

/// Parameters shared by the registered equation forms.
#[derive(Debug, Clone)]
pub struct FormParams {
    pub base: Arc<dyn Lagrangian>,
    /// Smoothing family name (`a` or `b`).
    pub family: String,
    pub n: u32,
    pub s: f64,
    /// Largest `|∇v|` accepted by the stream-function forms.
    pub r_max: f64,
}

impl FormParams {
    pub fn case_study(family: &str, n: u32, s: f64) -> Self {
        Self { base: make_case_study(), family: family.into(), n, s, r_max: 100.0 }
    }

    fn approximant(&self) -> Result<Arc<dyn Lagrangian>> {
        make_family(&self.family, &FamilyParams { base: self.base.clone(), n: self.n, s: self.s })
    }
}

/// Registered forms: `nondiv_u`, `case_study_u`, `approx_u`, `v_approx`,
/// `v_limit_beta`, `v_limit_alpha`, `general_m`.
pub fn form_registry() -> Registry<dyn EquationForm, FormParams> {
    let mut reg: Registry<dyn EquationForm, FormParams> = Registry::new("form");
    reg.register("nondiv_u", "-(alpha - 1) Δ∞u - |∇u|² Δu for the base integrand", |p| {
        Ok(Box::new(NondivForm { lagrangian: p.base.clone() }))
    });
    reg.register("case_study_u", "polynomial form for f'(ρ) = sqrt(1 + ρ²)", |_| Ok(Box::new(CaseStudyForm)));
    reg.register("approx_u", "-(alpha_n - 1) Δ∞u - |∇u|² Δu", |p| {
        Ok(Box::new(NondivForm { lagrangian: p.approximant()? }))
    });
    reg.register("v_approx", "stream-function equation with alpha_n(g_n'(|∇v|))", |p| {
        let conj = conjugate(p.approximant()?, p.r_max, INVERSION_TOL)?;
        Ok(Box::new(StreamForm::alpha_of_conjugate("v_approx", conj)))
    });
    reg.register("v_limit_beta", "limit stream equation with beta(|∇v|)", |p| {
        let conj = conjugate(p.base.clone(), p.r_max, INVERSION_TOL)?;
        let (base, s, r_max) = (p.base.clone(), p.s, p.r_max);
        Ok(Box::new(StreamForm::new("v_limit_beta", move |r| {
            if r > r_max {
                return Err(Error::CoefficientDomain(format!("beta requested at r = {r} beyond r_max = {r_max}")));
            }
            beta_limit(base.as_ref(), &conj, s, r)
        })))
    });
    reg.register("v_limit_alpha", "limit stream equation with alpha(g'(|∇v|))", |p| {
        let conj = conjugate(p.base.clone(), p.r_max, INVERSION_TOL)?;
        Ok(Box::new(StreamForm::alpha_of_conjugate("v_limit_alpha", conj)))
    });
    reg.register("general_m", "-(|∇u|³/|M|) tr(∇M D²u) with M the smoothed flux", |p| {
        Ok(Box::new(GeneralForm { map: Arc::new(RadialFlux(p.approximant()?)) }))
    });
    reg
}

pub fn make_form(name: &str, params: &FormParams) -> Result<Arc<dyn EquationForm>> {
    Ok(Arc::from(form_registry().create(name, params)?))
}

/// Per-node residual on interior nodes with a full Hessian stencil.
pub fn residual(form: &dyn EquationForm, w: &ScalarField) -> Result<Vec<Option<f64>>> {
    let ops = DiffOps::new(w);
    residual_with(form, w, &ops)
}

pub fn residual_with(form: &dyn EquationForm, w: &ScalarField, ops: &DiffOps) -> Result<Vec<Option<f64>>> {
    let grid = w.grid();
    (0..grid.len())
        .into_par_iter()
        .map(|k| match (grid.kind(k), ops.hess[k]) {
            (NodeKind::Interior, Some(h)) => form.lhs(ops.grad.at(k), &h).map(Some).map_err(|e| match e {
                Error::ZeroFlux { .. } => Error::ZeroFlux { node: k },
                e => e,
            }),
            _ => Ok(None),
        })
        .collect()
}

/// `-(|∇w|³/|M(∇w)|) tr(∇M(∇w) D²w)` per node.
pub fn general_m_residual(map: Arc<dyn FluxMap>, w: &ScalarField) -> Result<Vec<Option<f64>>> {
    residual(&GeneralForm { map }, w)
}

/// Largest `|residual|` over nodes passing `keep`.
pub fn max_residual(res: &[Option<f64>], keep: impl Fn(usize) -> bool) -> f64 {
    res.iter()
        .enumerate()
        .filter(|(k, _)| keep(*k))
        .filter_map(|(_, r)| r.map(f64::abs))
        .fold(0.0, f64::max)
}

/// Interior nodes where `|∇v| <= f'(0)`.
pub fn infinity_harmonic_region(v: &ScalarField, l: &dyn Lagrangian) -> Vec<usize> {
    let g = gradient(v);
    let fp0 = l.fp0();
    v.grid()
        .interior_nodes()
        .iter()
        .copied()
        .filter(|&k| g.magnitude(k) <= fp0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Test function touching from above.
    Sub,
    /// Test function touching from below.
    Super,
}

/// `phi(x) = c + <p, x - x0> + ½ <H (x - x0), x - x0>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub x0: [f64; 2],
    pub c: f64,
    pub p: [f64; 2],
    pub h: Sym2,
}

impl Quadratic {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.x0[0], x[1] - self.x0[1]];
        self.c + self.p[0] * d[0] + self.p[1] * d[1] + 0.5 * self.h.quad(d)
    }
}

/// Tolerance for the touching check.
pub const TOUCH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub lhs: f64,
    pub holds: bool,
}

fn stencil(w: &ScalarField, node: usize) -> Result<Vec<(usize, [f64; 2])>> {
    let grid = w.grid();
    let mut out = Vec::with_capacity(24);
    for dj in -2..=2 {
        for di in -2..=2 {
            if di == 0 && dj == 0 {
                continue;
            }
            let m = grid
                .offset(node, di, dj)
                .filter(|&m| grid.is_active(m))
                .ok_or_else(|| Error::NotTouching(format!("node {node} lacks an active 5x5 neighborhood")))?;
            let h = grid.h();
            out.push((m, [di as f64 * h, dj as f64 * h]));
        }
    }
    Ok(out)
}

/// Checks that `phi` touches `w` at `node` from the requested side on the 5x5
/// neighborhood and evaluates the sub- (`<= slack`) or supersolution
/// (`>= -slack`) inequality on `phi`'s exact derivatives.
pub fn viscosity_probe(
    w: &ScalarField,
    phi: &Quadratic,
    node: usize,
    side: Side,
    form: &dyn EquationForm,
    slack: f64,
) -> Result<Verdict> {
    let grid = w.grid();
    let x0 = grid.xy(node);
    let gap0 = w.get(node) - phi.eval(x0);
    if gap0.abs() > TOUCH_TOL {
        return Err(Error::NotTouching(format!("phi misses w by {gap0:.3e} at node {node}")));
    }
    for (m, _) in stencil(w, node)? {
        let gap = w.get(m) - phi.eval(grid.xy(m));
        let wrong = match side {
            Side::Sub => gap > TOUCH_TOL,
            Side::Super => gap < -TOUCH_TOL,
        };
        if wrong {
            return Err(Error::NotTouching(format!("w - phi = {gap:.3e} at node {m} has the wrong sign")));
        }
    }
    let d = [x0[0] - phi.x0[0], x0[1] - phi.x0[1]];
    let hd = phi.h.apply(d);
    let p = [phi.p[0] + hd[0], phi.p[1] + hd[1]];
    let lhs = form.lhs(p, &phi.h)?;
    let holds = match side {
        Side::Sub => lhs <= slack,
        Side::Super => lhs >= -slack,
    };
    Ok(Verdict { lhs, holds })
}

/// Builds a quadratic touching `w` at `node` from `side` with Hessian `h`,
/// choosing the slope closest to `target`; `None` if no slope works.
pub fn touching_quadratic(w: &ScalarField, node: usize, side: Side, h: Sym2, target: [f64; 2]) -> Result<Option<Quadratic>> {
    let st = stencil(w, node)?;
    let w0 = w.get(node);
    let bound = 10.0 * (norm(target) + 1.0) + st.iter().map(|(m, d)| (w.get(*m) - w0).abs() / norm(*d)).fold(0.0, f64::max);
    let mut poly = ConvexPolygon::square(target, bound);
    // margin keeps the rounded quadratic on the correct side
    let margin = 1e-12 * (1.0 + w0.abs());
    for (m, d) in &st {
        let c = w.get(*m) - w0 - 0.5 * h.quad(*d);
        match side {
            Side::Sub => poly.clip(*d, c + margin),
            Side::Super => poly.clip([-d[0], -d[1]], -c + margin),
        }
        if poly.is_empty() {
            return Ok(None);
        }
    }
    Ok(poly.closest_point(target).map(|p| Quadratic { x0: w.grid().xy(node), c: w0, p, h }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub nodes: usize,
    pub trials: usize,
    pub seed: u64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFailure {
    pub node: usize,
    pub side: Side,
    pub lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub form: String,
    pub nodes: Vec<usize>,
    pub attempted: usize,
    pub tested: usize,
    pub skipped: usize,
    /// Largest `lhs` over sub trials and largest `-lhs` over super trials.
    pub worst: f64,
    pub failures: Vec<ProbeFailure>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.tested > 0
    }
}

/// Interior nodes whose 5x5 neighborhood is active.
pub fn probe_candidates(w: &ScalarField) -> Vec<usize> {
    let grid = w.grid();
    grid.interior_nodes()
        .iter()
        .copied()
        .filter(|&k| {
            (-2..=2).all(|dj| (-2..=2).all(|di| grid.offset(k, di, dj).map_or(false, |m| grid.is_active(m))))
        })
        .collect()
}

/// Seeded probe campaign: `cfg.trials` touching quadratics per side at each of
/// `cfg.nodes` random nodes. Hessians are the finite-difference Hessian plus a
/// rotated `diag(l1, l2)` with `l1, l2` in `{-2, ..., 2}`; trials without a
/// touching slope are skipped.
pub fn probe_campaign(w: &ScalarField, form: &dyn EquationForm, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let cands = probe_candidates(w);
    if cands.is_empty() {
        return Err(Error::NotTouching("no node has an active 5x5 neighborhood".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nodes: Vec<usize> = rand::seq::index::sample(&mut rng, cands.len(), cfg.nodes.min(cands.len()))
        .into_iter()
        .map(|i| cands[i])
        .collect();
    let ops = DiffOps::new(w);
    let node_seeds: Vec<u64> = nodes.iter().map(|_| rng.gen()).collect();
    let per_node: Vec<Result<(usize, usize, f64, Vec<ProbeFailure>)>> = nodes
        .par_iter()
        .zip(node_seeds)
        .map(|(&node, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = ops.hess[node].ok_or_else(|| Error::NotTouching(format!("no Hessian at node {node}")))?;
            let target = ops.grad.at(node);
            let (mut tested, mut skipped, mut worst) = (0, 0, f64::NEG_INFINITY);
            let mut failures = Vec::new();
            for side in [Side::Sub, Side::Super] {
                for _ in 0..cfg.trials {
                    let l1 = rng.gen_range(-2..=2) as f64;
                    let l2 = rng.gen_range(-2..=2) as f64;
                    let theta = rng.gen_range(0.0..std::f64::consts::PI);
                    let h = base.plus(&Sym2::from_eigen(l1, l2, theta));
                    let Some(phi) = touching_quadratic(w, node, side, h, target)? else {
                        skipped += 1;
                        continue;
                    };
                    let v = match viscosity_probe(w, &phi, node, side, form, cfg.slack) {
                        Ok(v) => v,
                        Err(Error::NotTouching(_)) => {
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    tested += 1;
                    let excess = match side {
                        Side::Sub => v.lhs,
                        Side::Super => -v.lhs,
                    };
                    worst = worst.max(excess);
                    if !v.holds {
                        failures.push(ProbeFailure { node, side, lhs: v.lhs });
                    }
                }
            }
            Ok((tested, skipped, worst, failures))
        })
        .collect();
    let mut report = ProbeReport {
        form: form.name(),
        nodes: nodes.clone(),
        attempted: 2 * cfg.trials * nodes.len(),
        tested: 0,
        skipped: 0,
        worst: f64::NEG_INFINITY,
        failures: Vec::new(),
    };
    for r in per_node {
        let (t, s, w, f) = r?;
        report.tested += t;
        report.skipped += s;
        report.worst = report.worst.max(w);
        report.failures.extend(f);
    }
    Ok(report)
}
