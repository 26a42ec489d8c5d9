//! Small numerical building blocks shared across modules.

use serde::{Deserialize, Serialize};

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [self.xx * p[0] + self.xy * p[1], self.xy * p[0] + self.yy * p[1]]
    }

    /// `<M p, p>`.
    pub fn quad(&self, p: [f64; 2]) -> f64 {
        let mp = self.apply(p);
        mp[0] * p[0] + mp[1] * p[1]
    }

    pub fn add_identity(&self, t: f64) -> Self {
        Self::new(self.xx + t, self.xy, self.yy + t)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self::new(self.xx * t, self.xy * t, self.yy * t)
    }

    pub fn plus(&self, o: &Sym2) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    /// `R diag(l1, l2) R^T` with `R` the rotation by `theta`.
    pub fn from_eigen(l1: f64, l2: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(
            l1 * c * c + l2 * s * s,
            (l1 - l2) * c * s,
            l1 * s * s + l2 * c * c,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

pub fn norm(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

pub fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Sum with a fixed pairwise tree; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Parallel map followed by a deterministic pairwise reduction.
pub fn par_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    let parts: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    pairwise_sum(&parts)
}

/// Deterministic dot product of two equal-length vectors.
pub fn vdot(a: &[f64], b: &[f64]) -> f64 {
    par_sum(a.len(), |k| a[k] * b[k])
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// semidefinite operator. Entries with `diag[k] == 0` are treated as fixed
/// (their residual is ignored and `x[k]` is left unchanged).
pub fn pcg<A>(apply: A, diag: &[f64], b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> CgOutcome
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mask = |k: usize| diag[k] > 0.0;
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for k in 0..n {
        r[k] = if mask(k) { b[k] - ap[k] } else { 0.0 };
    }
    let bnorm = vdot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = (0..n).map(|k| if mask(k) { r[k] / diag[k] } else { 0.0 }).collect();
    let mut p = z.clone();
    let mut rz = vdot(&r, &z);
    let mut rel = vdot(&r, &r).sqrt() / bnorm;
    if rel <= rtol {
        return CgOutcome { iterations: 0, relative_residual: rel, converged: true };
    }
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        for k in 0..n {
            if !mask(k) {
                ap[k] = 0.0;
            }
        }
        let pap = vdot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome { iterations: it, relative_residual: rel, converged: false };
        }
        let step = rz / pap;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        rel = vdot(&r, &r).sqrt() / bnorm;
        if rel <= rtol {
            return CgOutcome { iterations: it, relative_residual: rel, converged: true };
        }
        for k in 0..n {
            z[k] = if mask(k) { r[k] / diag[k] } else { 0.0 };
        }
        let rz_new = vdot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    CgOutcome { iterations: max_iter, relative_residual: rel, converged: false }
}

/// Median of the finite entries; `NaN` if there are none.
pub fn median(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Piecewise cubic Hermite interpolant on a uniform grid with exact slopes.
#[derive(Debug, Clone)]
pub struct HermiteTable {
    x0: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    pub fn new(x0: f64, step: f64, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        assert_eq!(values.len(), slopes.len());
        assert!(values.len() >= 2);
        Self { x0, step, values, slopes }
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.step * (self.values.len() - 1) as f64
    }

    /// Evaluates the interpolant; arguments are clamped to the table range.
    pub fn eval(&self, x: f64) -> f64 {
        let last = self.values.len() - 1;
        if x <= self.x0 {
            return self.values[0];
        }
        if x >= self.x_max() {
            return self.values[last];
        }
        let s = (x - self.x0) / self.step;
        let k = (s.floor() as usize).min(last - 1);
        let t = s - k as f64;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.step, self.slopes[k + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1
    }
}

/// Neville extrapolation to `x = 0` of samples `(x_i, y_i)`.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mut p = ys.to_vec();
    for m in 1..n {
        for i in 0..n - m {
            let (xi, xj) = (xs[i], xs[i + m]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    p[0]
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_angle(mut d: f64) -> f64 {
    use std::f64::consts::PI;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d <= -PI {
        d += 2.0 * PI;
    }
    d
}
