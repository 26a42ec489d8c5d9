use serde::{Deserialize, Serialize};

use super::Lagrangian;
use crate::{Error, Result};

const SAMPLES: usize = 10_000;

/// Constants in `c1 rho^q1 - c2 <= f <= c1 rho^q2 + c2` (and the same with
/// exponents lowered by one for `f'`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBounds {
    pub q1: f64,
    pub q2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl GrowthBounds {
    /// Largest violation of either sandwich over `samples` uniform points of
    /// `[0, rho_max]`; nonpositive means the bounds hold there.
    pub fn worst_violation(&self, l: &dyn Lagrangian, rho_max: f64, samples: usize) -> f64 {
        (0..=samples)
            .map(|k| {
                let rho = rho_max * k as f64 / samples as f64;
                let (f, fp) = (l.f(rho), l.fp(rho));
                let lo = self.c1 * rho.powf(self.q1) - self.c2;
                let hi = self.c1 * rho.powf(self.q2) + self.c2;
                let dlo = self.c1 * rho.powf(self.q1 - 1.0) - self.c2;
                let dhi = self.c1 * rho.powf(self.q2 - 1.0) + self.c2;
                (lo - f).max(f - hi).max(dlo - fp).max(fp - dhi)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds_on(&self, l: &dyn Lagrangian, rho_max: f64, samples: usize) -> bool {
        self.worst_violation(l, rho_max, samples) <= 0.0
    }
}

/// Fits admissible growth constants: the exponent comes from a log-log
/// regression of `f` over the top decade of `[0, rho_max]`, `c2` is the
/// smallest offset that makes both sandwiches hold on 10^4 samples.
pub fn growth_constants(l: &dyn Lagrangian, rho_max: f64) -> Result<GrowthBounds> {
    if !(rho_max > 1.0) {
        return Err(Error::FitFailure(format!("rho_max = {rho_max} must be well above 1")));
    }
    let pts = 200;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..pts {
        let rho = rho_max * (0.1 + 0.9 * k as f64 / (pts - 1) as f64);
        let f = l.f(rho);
        if !(f > 0.0) {
            return Err(Error::FitFailure(format!("f({rho}) = {f} is not positive")));
        }
        let (x, y) = (rho.ln(), f.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let n = pts as f64;
    let q = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(q > 1.02) {
        return Err(Error::FitFailure(format!("growth exponent {q:.4} is not superlinear")));
    }
    let delta = (0.5 * (q - 1.0)).min(0.05);
    let (q1, q2) = (q - delta, q + delta);
    let c1 = l.f(rho_max) / rho_max.powf(q);
    let mut bounds = GrowthBounds { q1, q2, c1, c2: 0.0 };
    let gap = bounds.worst_violation(l, rho_max, SAMPLES).max(0.0);
    bounds.c2 = gap + 1e-9 * (1.0 + gap);
    if !bounds.holds_on(l, rho_max, SAMPLES) {
        return Err(Error::FitFailure("sandwich fails after offset".into()));
    }
    Ok(bounds)
}
