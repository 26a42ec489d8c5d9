use std::sync::Arc;

use super::Lagrangian;
use crate::{Error, Result};

/// Default tolerance on `|f'(g'(r)) - r|`.
pub const INVERSION_TOL: f64 = 1e-12;

const MONOTONE_SAMPLES: usize = 200;
const MAX_STEPS: usize = 4000;

/// Fenchel conjugate `g(r) = sup_{rho >= 0} (rho r - f(rho))` and its
/// derivative `g' = (f')^{-1}`, which vanishes on `[0, f'(0)]`.
#[derive(Debug, Clone)]
pub struct ConjugatePair {
    l: Arc<dyn Lagrangian>,
    r_max: f64,
    tol: f64,
}

/// Builds the conjugate of `l` on `[0, r_max]`.
pub fn conjugate(l: Arc<dyn Lagrangian>, r_max: f64, tol: f64) -> Result<ConjugatePair> {
    let fp0 = l.fp0();
    if !(r_max > fp0) {
        return Err(Error::InversionFailure {
            r: r_max,
            reason: format!("r_max must exceed f'(0) = {fp0}"),
        });
    }
    let pair = ConjugatePair { l, r_max, tol };
    // strict monotonicity of f' on the bracketing interval
    let rho_max = pair.gp(r_max)?;
    let mut prev = pair.l.fp(0.0);
    for k in 1..=MONOTONE_SAMPLES {
        let rho = rho_max * k as f64 / MONOTONE_SAMPLES as f64;
        let cur = pair.l.fp(rho);
        if !(cur > prev) {
            return Err(Error::InversionFailure {
                r: r_max,
                reason: format!("f' not strictly increasing near rho = {rho}"),
            });
        }
        prev = cur;
    }
    Ok(pair)
}

impl ConjugatePair {
    pub fn lagrangian(&self) -> &Arc<dyn Lagrangian> {
        &self.l
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `g'(r)`: zero up to `f'(0)`, the inverse of `f'` above.
    pub fn gp(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InversionFailure { r, reason: "argument must be finite and >= 0".into() });
        }
        let fp0 = self.l.fp0();
        if r <= fp0 {
            return Ok(0.0);
        }
        self.invert(r)
    }

    /// `g(r)`.
    pub fn g(&self, r: f64) -> Result<f64> {
        let rho = self.gp(r)?;
        Ok(rho * r - self.l.f(rho))
    }

    /// `g'(r)` restricted to `[0, r_max]`; outside it is a domain error.
    pub fn gp_in_range(&self, r: f64) -> Result<f64> {
        if r > self.r_max {
            return Err(Error::CoefficientDomain(format!(
                "g' requested at r = {r} beyond r_max = {}",
                self.r_max
            )));
        }
        self.gp(r)
    }

    fn invert(&self, r: f64) -> Result<f64> {
        let fp = |rho: f64| self.l.fp(rho);
        let mut lo = 0.0;
        let mut flo = fp(lo) - r;
        let mut hi = 1.0;
        let mut fhi = fp(hi) - r;
        while fhi < 0.0 {
            if hi > 1e15 {
                return Err(Error::InversionFailure { r, reason: "f' stays below r".into() });
            }
            let next = 2.0 * hi;
            let fnext = fp(next) - r;
            if fnext < fhi {
                return Err(Error::InversionFailure {
                    r,
                    reason: format!("f' not strictly increasing on [{hi}, {next}]"),
                });
            }
            lo = hi;
            flo = fhi;
            hi = next;
            fhi = fnext;
        }
        if fhi.abs() <= self.tol {
            return Ok(hi);
        }
        for step in 0..MAX_STEPS {
            // bisection on even steps, secant inside the bracket on odd steps
            let mut mid = 0.5 * (lo + hi);
            if step % 2 == 1 && fhi != flo {
                let sec = lo - flo * (hi - lo) / (fhi - flo);
                if sec > lo && sec < hi {
                    mid = sec;
                }
            }
            if mid <= lo || mid >= hi {
                // bracket exhausted at floating-point resolution
                return Ok(if fhi.abs() < flo.abs() { hi } else { lo });
            }
            let fm = fp(mid) - r;
            if fm.abs() <= self.tol {
                return Ok(mid);
            }
            if fm < 0.0 {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
                fhi = fm;
            }
        }
        Err(Error::InversionFailure { r, reason: "no convergence".into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{alpha_of, approx_lagrangian, make_case_study, ApproxFamily, FnLagrangian};
    use approx::assert_abs_diff_eq;

    #[test]
    fn case_study_conjugate() {
        let l = make_case_study();
        let c = conjugate(l, 30.0, INVERSION_TOL).unwrap();
        assert_eq!(c.g(0.5).unwrap(), 0.0);
        assert_eq!(c.gp(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(c.gp(2.0).unwrap(), 3f64.sqrt(), epsilon = 1e-11);
        // 50-digit oracle: sqrt(3)*2 - f(sqrt(3))
        assert_abs_diff_eq!(c.g(2.0).unwrap(), 1.073_571_859_106_468_939, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_matches_brute_force_sup() {
        let l = make_case_study();
        let c = conjugate(l.clone(), 30.0, INVERSION_TOL).unwrap();
        let r = 2.0;
        let brute = (0..=100_000)
            .map(|k| {
                let rho = k as f64 * 1e-4;
                rho * r - l.f(rho)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((c.g(r).unwrap() - brute).abs() < 1e-8);
        assert!(c.g(r).unwrap() >= brute - 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let l = make_case_study();
        assert!(conjugate(l.clone(), 0.5, INVERSION_TOL).is_err());
        let wavy = FnLagrangian::new("wavy", |r| r * r, |r| 1.0 + r + (5.0 * r).sin());
        assert!(conjugate(std::sync::Arc::new(wavy), 20.0, INVERSION_TOL).is_err());
        let c = conjugate(l, 5.0, INVERSION_TOL).unwrap();
        assert!(matches!(c.gp_in_range(6.0), Err(Error::CoefficientDomain(_))));
    }

    #[test]
    fn dual_ratio_is_reciprocal_of_alpha() {
        // r g''(r) / g'(r) = 1 / alpha_n(g'(r))
        let base = make_case_study();
        let lags: Vec<std::sync::Arc<dyn Lagrangian>> = vec![
            base.clone(),
            std::sync::Arc::new(approx_lagrangian(base.clone(), ApproxFamily::b(6, 1.0).unwrap())),
            std::sync::Arc::new(approx_lagrangian(base, ApproxFamily::a(3).unwrap())),
        ];
        for l in lags {
            let c = conjugate(l.clone(), 40.0, INVERSION_TOL).unwrap();
            for k in 0..100 {
                let r = l.fp0() + 0.05 + 0.3 * k as f64;
                let h = 1e-5 * r;
                let gpp = (c.gp(r + h).unwrap() - c.gp(r - h).unwrap()) / (2.0 * h);
                let lhs = r * gpp / c.gp(r).unwrap();
                let rhs = 1.0 / alpha_of(&*l, c.gp(r).unwrap()).unwrap();
                assert!((lhs - rhs).abs() <= 1e-6 * rhs.max(1.0), "{} r={r}: {lhs} vs {rhs}", l.name());
            }
        }
    }
}
