use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Lagrangian;
use crate::numeric::{adaptive_simpson, HermiteTable};
use crate::{Error, Result};

/// Knot spacing of the tabulated energy defect.
const TABLE_STEP: f64 = 1e-3;
const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    A,
    B,
}

/// Which smoothing `sigma_n` multiplies `f'` near the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxFamily {
    pub kind: FamilyKind,
    pub n: u32,
    pub s: f64,
}

impl ApproxFamily {
    pub fn a(n: u32) -> Result<Self> {
        Self::new(FamilyKind::A, n, 1.0)
    }

    pub fn b(n: u32, s: f64) -> Result<Self> {
        Self::new(FamilyKind::B, n, s)
    }

    pub fn new(kind: FamilyKind, n: u32, s: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("family index n must be >= 1".into()));
        }
        if kind == FamilyKind::B && !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("family b needs s > 0, got {s}")));
        }
        Ok(Self { kind, n, s })
    }

    /// `sigma_n(rho)`; identically one for `rho >= 1`.
    pub fn sigma(&self, rho: f64) -> f64 {
        if rho >= 1.0 {
            return 1.0;
        }
        let n = self.n as f64;
        -(n * (-self.inner(rho)).ln_1p()).exp_m1()
    }

    /// `1 - sigma_n(rho)`, computed without cancellation.
    pub fn one_minus_sigma(&self, rho: f64) -> f64 {
        if rho >= 1.0 {
            return 0.0;
        }
        let n = self.n as f64;
        let t = self.inner(rho);
        (n * (-t).ln_1p()).exp()
    }

    /// `rho sigma_n'(rho)`.
    pub fn rho_dsigma(&self, rho: f64) -> f64 {
        if rho >= 1.0 || rho <= 0.0 {
            return 0.0;
        }
        let n = self.n as f64;
        let t = self.inner(rho);
        let tail = ((n - 1.0) * (-t).ln_1p()).exp();
        match self.kind {
            FamilyKind::A => t * tail,
            FamilyKind::B => n * self.s * t * tail,
        }
    }

    /// `lim_{rho->0} rho sigma' / sigma`.
    pub fn ratio_at_zero(&self) -> f64 {
        match self.kind {
            FamilyKind::A => 1.0 / self.n as f64,
            FamilyKind::B => self.s,
        }
    }

    /// Smallest `rho` from which `sigma` rounds to exactly one in `f64`
    /// (there `(1 - t)^n < e^-45`).
    pub fn saturation(&self) -> f64 {
        let n = self.n as f64;
        let t = -(-45.0 / n).exp_m1();
        match self.kind {
            FamilyKind::A => t.powf(n).min(1.0),
            FamilyKind::B => t.powf(1.0 / self.s).min(1.0),
        }
    }

    fn inner(&self, rho: f64) -> f64 {
        match self.kind {
            FamilyKind::A => rho.powf(1.0 / self.n as f64),
            FamilyKind::B => rho.powf(self.s),
        }
    }
}

/// A smoothed Lagrangian `f_n` with `f_n' = sigma_n f'`.
///
/// `f_n = f - D` where `D(rho) = int_0^min(rho,1) (1 - sigma_n) f'` is tabulated
/// once by adaptive Simpson quadrature and interpolated by cubic Hermite
/// splines with exact slopes.
#[derive(Debug, Clone)]
pub struct Approximant {
    base: Arc<dyn Lagrangian>,
    family: ApproxFamily,
    defect: HermiteTable,
    saturation: f64,
}

pub fn approx_lagrangian(base: Arc<dyn Lagrangian>, family: ApproxFamily) -> Approximant {
    Approximant::new(base, family)
}

impl Approximant {
    pub fn new(base: Arc<dyn Lagrangian>, family: ApproxFamily) -> Self {
        let knots = (1.0 / TABLE_STEP).round() as usize;
        let integrand = |r: f64| family.one_minus_sigma(r) * base.fp(r);
        let mut values = Vec::with_capacity(knots + 1);
        let mut slopes = Vec::with_capacity(knots + 1);
        let mut acc = 0.0;
        values.push(0.0);
        slopes.push(integrand(0.0));
        for k in 0..knots {
            let a = k as f64 * TABLE_STEP;
            let b = (k + 1) as f64 * TABLE_STEP;
            acc += adaptive_simpson(&integrand, a, b, QUAD_TOL / knots as f64);
            values.push(acc);
            slopes.push(integrand(b));
        }
        Self {
            base,
            family,
            defect: HermiteTable::new(0.0, TABLE_STEP, values, slopes),
            saturation: family.saturation(),
        }
    }

    pub fn family(&self) -> ApproxFamily {
        self.family
    }

    pub fn base(&self) -> &Arc<dyn Lagrangian> {
        &self.base
    }

    pub fn sigma(&self, rho: f64) -> f64 {
        self.family.sigma(rho)
    }

    /// `f(rho) - f_n(rho)`.
    pub fn energy_gap(&self, rho: f64) -> f64 {
        self.defect.eval(rho.min(1.0))
    }
}

impl Lagrangian for Approximant {
    fn name(&self) -> String {
        let fam = self.family;
        match fam.kind {
            FamilyKind::A => format!("a(n={})", fam.n),
            FamilyKind::B => format!("b(n={}, s={})", fam.n, fam.s),
        }
    }

    fn f(&self, rho: f64) -> f64 {
        self.base.f(rho) - self.energy_gap(rho)
    }

    fn fp(&self, rho: f64) -> f64 {
        if rho >= self.saturation {
            return self.base.fp(rho);
        }
        self.family.sigma(rho) * self.base.fp(rho)
    }

    fn fpp(&self, rho: f64) -> Result<f64> {
        let fam = self.family;
        let dsigma = if rho > 0.0 {
            fam.rho_dsigma(rho) / rho
        } else {
            match fam.kind {
                FamilyKind::A if fam.n == 1 => 1.0,
                FamilyKind::B if fam.s == 1.0 => fam.n as f64,
                FamilyKind::B if fam.s > 1.0 => 0.0,
                _ => return Err(Error::UndefinedDerivative { rho }),
            }
        };
        Ok(dsigma * self.base.fp(rho) + fam.sigma(rho) * self.base.fpp(rho)?)
    }

    fn fp0(&self) -> f64 {
        0.0
    }

    fn alpha_ratio(&self, rho: f64) -> Result<f64> {
        let fam = self.family;
        let own = if rho >= 1.0 { 0.0 } else { fam.rho_dsigma(rho) / fam.sigma(rho) };
        Ok(own + self.base.alpha_ratio(rho)?)
    }

    fn alpha_at_zero(&self) -> Result<f64> {
        Ok(self.family.ratio_at_zero() + self.base.alpha_at_zero()?)
    }

    fn alpha_inf(&self) -> Option<f64> {
        self.base.alpha_inf()
    }
}
