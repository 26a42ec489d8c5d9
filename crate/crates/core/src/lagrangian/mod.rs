//! One-dimensional convex analysis: radial Lagrangians `f`, the ellipticity
//! ratio `alpha`, Fenchel conjugates, smoothing families and the limit
//! coefficient `beta`.
//!
//! Every integrand is a [`Lagrangian`] trait object. Families are registered
//! by name in [`family_registry`] (`base`, `a`, `b`) so the CLI and run
//! configs can select them at runtime.

mod smoothing;
mod conjugate;
mod growth;
mod table;

pub use smoothing::{approx_lagrangian, ApproxFamily, Approximant, FamilyKind};
pub use conjugate::{conjugate, ConjugatePair, INVERSION_TOL};
pub use growth::{growth_constants, GrowthBounds};
pub use table::{table_rows, write_table, TableRow};

use std::fmt;
use std::sync::Arc;

use crate::numeric::extrapolate_to_zero;
use crate::registry::Registry;
use crate::{Error, Result};

/// A convex radial integrand `f(|grad u|)` together with its derivatives.
pub trait Lagrangian: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn f(&self, rho: f64) -> f64;

    /// First derivative `f'`.
    fn fp(&self, rho: f64) -> f64;

    /// Second derivative `f''`, which may be unavailable (e.g. at `rho = 0`).
    fn fpp(&self, rho: f64) -> Result<f64>;

    fn fp0(&self) -> f64 {
        self.fp(0.0)
    }

    /// `rho f''(rho) / f'(rho)` for `rho > 0`.
    fn alpha_ratio(&self, rho: f64) -> Result<f64> {
        Ok(rho * self.fpp(rho)? / self.fp(rho))
    }

    /// Limit of the ratio as `rho -> 0+`. Zero when `f'(0) > 0`; otherwise
    /// extrapolated from samples at `1e-3, 1e-4, 1e-5`.
    fn alpha_at_zero(&self) -> Result<f64> {
        if self.fp0() > 0.0 {
            return Ok(0.0);
        }
        let xs = [1e-3, 1e-4, 1e-5];
        let ys = xs
            .iter()
            .map(|&r| self.alpha_ratio(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(extrapolate_to_zero(&xs, &ys))
    }

    /// `lim_{rho -> inf} alpha(rho)` when known in closed form.
    fn alpha_inf(&self) -> Option<f64> {
        None
    }
}

/// `alpha(rho)`: the ratio for `rho > 0` and its limit at `rho = 0`.
pub fn alpha_of(l: &dyn Lagrangian, rho: f64) -> Result<f64> {
    if rho < 0.0 || rho.is_nan() {
        return Err(Error::UndefinedDerivative { rho });
    }
    if rho == 0.0 {
        l.alpha_at_zero()
    } else {
        l.alpha_ratio(rho)
    }
}

/// The case-study integrand `f(rho) = (rho sqrt(1+rho^2) + asinh rho) / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaseStudy;

impl Lagrangian for CaseStudy {
    fn name(&self) -> String {
        "base".into()
    }

    fn f(&self, rho: f64) -> f64 {
        0.5 * (rho * (1.0 + rho * rho).sqrt() + rho.asinh())
    }

    fn fp(&self, rho: f64) -> f64 {
        rho.hypot(1.0)
    }

    fn fpp(&self, rho: f64) -> Result<f64> {
        Ok(rho / rho.hypot(1.0))
    }

    fn alpha_ratio(&self, rho: f64) -> Result<f64> {
        let r2 = rho * rho;
        Ok(r2 / (1.0 + r2))
    }

    fn alpha_inf(&self) -> Option<f64> {
        Some(1.0)
    }
}

pub fn make_case_study() -> Arc<dyn Lagrangian> {
    Arc::new(CaseStudy)
}

type Map = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A Lagrangian given by closures, for ad-hoc integrands.
#[derive(Clone)]
pub struct FnLagrangian {
    name: String,
    f: Map,
    fp: Map,
    fpp: Option<Map>,
    alpha_inf: Option<f64>,
}

impl FnLagrangian {
    pub fn new(
        name: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        fp: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            f: Arc::new(f),
            fp: Arc::new(fp),
            fpp: None,
            alpha_inf: None,
        }
    }

    pub fn with_fpp(mut self, fpp: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.fpp = Some(Arc::new(fpp));
        self
    }

    pub fn with_alpha_inf(mut self, a: f64) -> Self {
        self.alpha_inf = Some(a);
        self
    }
}

impl fmt::Debug for FnLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnLagrangian").field("name", &self.name).finish()
    }
}

impl Lagrangian for FnLagrangian {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn f(&self, rho: f64) -> f64 {
        (self.f)(rho)
    }
    fn fp(&self, rho: f64) -> f64 {
        (self.fp)(rho)
    }
    fn fpp(&self, rho: f64) -> Result<f64> {
        match &self.fpp {
            Some(g) => Ok(g(rho)),
            None => Err(Error::UndefinedDerivative { rho }),
        }
    }
    fn alpha_inf(&self) -> Option<f64> {
        self.alpha_inf
    }
}

/// Limit coefficient for the family-`b` smoothing with exponent `s`:
/// `-s (f'(0) - r)/r log(1 - r/f'(0))` below `f'(0)`, `alpha(g'(r))` above.
pub fn beta_limit(l: &dyn Lagrangian, conj: &ConjugatePair, s: f64, r: f64) -> Result<f64> {
    let f0 = l.fp0();
    if r < 0.0 || r.is_nan() {
        return Err(Error::CoefficientDomain(format!("beta at r = {r}")));
    }
    if r <= f0 {
        if r == 0.0 {
            return Ok(s);
        }
        if r == f0 {
            return Ok(0.0);
        }
        let x = r / f0;
        Ok(-s * (f0 - r) / r * (-x).ln_1p())
    } else {
        alpha_of(l, conj.gp(r)?)
    }
}

/// Parameters for building a Lagrangian from the family registry.
#[derive(Debug, Clone)]
pub struct FamilyParams {
    pub base: Arc<dyn Lagrangian>,
    pub n: u32,
    pub s: f64,
}

impl FamilyParams {
    pub fn case_study(n: u32, s: f64) -> Self {
        Self { base: make_case_study(), n, s }
    }
}

/// Registry of Lagrangian families: `base` (the integrand itself), `a` and
/// `b` (the two smoothing families).
pub fn family_registry() -> Registry<dyn Lagrangian, FamilyParams> {
    let mut reg: Registry<dyn Lagrangian, FamilyParams> = Registry::new("family");
    reg.register("base", "the unsmoothed integrand", |p| Ok(Box::new(BaseRef(p.base.clone()))));
    reg.register("a", "sigma = 1 - (1 - rho^(1/n))^n on [0,1]", |p| {
        Ok(Box::new(approx_lagrangian(p.base.clone(), ApproxFamily::a(p.n)?)))
    });
    reg.register("b", "sigma = 1 - (1 - rho^s)^n on [0,1]", |p| {
        Ok(Box::new(approx_lagrangian(p.base.clone(), ApproxFamily::b(p.n, p.s)?)))
    });
    reg
}

/// Builds a family member by name, as an `Arc`.
pub fn make_family(name: &str, params: &FamilyParams) -> Result<Arc<dyn Lagrangian>> {
    Ok(Arc::from(family_registry().create(name, params)?))
}

#[derive(Debug)]
struct BaseRef(Arc<dyn Lagrangian>);

impl Lagrangian for BaseRef {
    fn name(&self) -> String {
        self.0.name()
    }
    fn f(&self, rho: f64) -> f64 {
        self.0.f(rho)
    }
    fn fp(&self, rho: f64) -> f64 {
        self.0.fp(rho)
    }
    fn fpp(&self, rho: f64) -> Result<f64> {
        self.0.fpp(rho)
    }
    fn fp0(&self) -> f64 {
        self.0.fp0()
    }
    fn alpha_ratio(&self, rho: f64) -> Result<f64> {
        self.0.alpha_ratio(rho)
    }
    fn alpha_at_zero(&self) -> Result<f64> {
        self.0.alpha_at_zero()
    }
    fn alpha_inf(&self) -> Option<f64> {
        self.0.alpha_inf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn case_study_values() {
        let l = CaseStudy;
        assert_eq!(l.f(0.0), 0.0);
        assert_eq!(l.fp(0.0), 1.0);
        // 50-digit evaluation of (sqrt 2 + log(1 + sqrt 2)) / 2
        assert_abs_diff_eq!(l.f(1.0), 1.147_793_574_696_319_037, epsilon = 1e-15);
    }

    #[test]
    fn alpha_matches_finite_differences() {
        let l = CaseStudy;
        assert_eq!(alpha_of(&l, 0.0).unwrap(), 0.0);
        let h = 1e-5;
        let fd = (l.fp(1.0 + h) - l.fp(1.0 - h)) / (2.0 * h) / l.fp(1.0);
        assert_abs_diff_eq!(alpha_of(&l, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha_of(&l, 1.0).unwrap(), fd, epsilon = 1e-9);
        assert!((alpha_of(&l, 1e3).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn fd_derivative_of_f_matches_fp() {
        let l = CaseStudy;
        for &rho in &[0.1, 0.7, 2.0, 9.0] {
            let h = 1e-4;
            let fd = (l.f(rho + h) - l.f(rho - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, l.fp(rho), epsilon = 1e-8);
        }
    }

    #[test]
    fn generic_fallback_uses_extrapolation() {
        // f = rho^3/3 + rho^2/2: f' = rho^2 + rho, ratio -> 1 at 0.
        let l = FnLagrangian::new("poly", |r| r * r * r / 3.0 + r * r / 2.0, |r| r * r + r)
            .with_fpp(|r| 2.0 * r + 1.0);
        assert_abs_diff_eq!(alpha_of(&l, 0.0).unwrap(), 1.0, epsilon = 1e-9);
        let no_fpp = FnLagrangian::new("nofpp", |r| r * r, |r| 2.0 * r);
        assert!(matches!(alpha_of(&no_fpp, 1.0), Err(Error::UndefinedDerivative { .. })));
    }

    #[test]
    fn registry_builds_all_families() {
        let p = FamilyParams::case_study(4, 1.0);
        for name in ["base", "a", "b"] {
            let l = make_family(name, &p).unwrap();
            assert!(l.fp(2.0) > 0.0);
        }
        assert!(make_family("c", &p).is_err());
        assert_eq!(make_family("a", &p).unwrap().fp0(), 0.0);
    }

    #[test]
    fn beta_branches() {
        let l = make_case_study();
        let conj = conjugate(l.clone(), 30.0, INVERSION_TOL).unwrap();
        assert_abs_diff_eq!(beta_limit(&*l, &conj, 1.0, 0.5).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(beta_limit(&*l, &conj, 1.0, 1.0).unwrap(), 0.0);
        assert!(beta_limit(&*l, &conj, 1.0, 1.0 - 1e-9).unwrap().abs() < 1e-7);
        assert!(beta_limit(&*l, &conj, 1.0, 1.0 + 1e-9).unwrap().abs() < 1e-7);
        // alpha(sqrt 3) = 3/4
        assert_abs_diff_eq!(beta_limit(&*l, &conj, 1.0, 2.0).unwrap(), 0.75, epsilon = 1e-10);
        assert_eq!(beta_limit(&*l, &conj, 2.5, 0.0).unwrap(), 2.5);
    }
}
