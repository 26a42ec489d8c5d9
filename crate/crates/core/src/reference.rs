//! Closed-form test solutions.
//!
//! [`RemarkSolution`] is a `C^{1,1}` solution of the case-study equation on
//! disks `B(0, R)`, `R < 1`, whose gradient vanishes on the whole segment
//! `{x = 0}`. [`morse_fields`] lists smooth fields with a single
//! non-degenerate (or monkey-saddle) critical point at the origin.

use std::sync::Arc;

use crate::grid::{Grid2D, ScalarField};
use crate::{Error, Result};

/// `u(x, y) = sgn(x) (1 - sqrt(W))` with `A = 1 - x^2 - y^2`,
/// `W = (A + sqrt(A^2 + 4 y^2)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemarkSolution {
    radius: f64,
}

pub fn remark_solution(radius: f64) -> Result<RemarkSolution> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(Error::Config(format!("reference radius must lie in (0, 1), got {radius}")));
    }
    Ok(RemarkSolution { radius })
}

impl RemarkSolution {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn parts(x: f64, y: f64) -> Result<(f64, f64, f64)> {
        let r2 = x * x + y * y;
        if !(r2 < 1.0) {
            return Err(Error::OutsideDomain { x, y });
        }
        let a = 1.0 - r2;
        let s = (a * a + 4.0 * y * y).sqrt();
        let w = 0.5 * (a + s);
        Ok((a, s, w))
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let (_, _, w) = Self::parts(x, y)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(x.signum() * (1.0 - w.sqrt()))
    }

    /// Analytic gradient; `(0, 0)` on the segment `x = 0`.
    pub fn grad(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let (a, s, w) = Self::parts(x, y)?;
        if x == 0.0 {
            return Ok([0.0, 0.0]);
        }
        let root = 2.0 * w.sqrt();
        let ux = x.abs() * (1.0 + a / s) / root;
        let uy = x.signum() * y * (1.0 - (2.0 - a) / s) / root;
        Ok([ux, uy])
    }

    /// Samples `u` at every active node of `grid`.
    pub fn sample(&self, grid: Arc<Grid2D>) -> Result<ScalarField> {
        ScalarField::try_from_fn(grid, |x, y| self.eval(x, y))
    }
}

/// A smooth field with one critical point at the origin and known index.
#[derive(Debug, Clone, Copy)]
pub struct MorseField {
    pub name: &'static str,
    pub eval: fn(f64, f64) -> f64,
    pub grad: fn(f64, f64) -> [f64; 2],
    pub expected_index: i32,
}

/// Extremum `x^2 + y^2` (+1), saddle `x^2 - y^2` (-1), monkey saddle `Re z^3` (-2).
pub fn morse_fields() -> Vec<MorseField> {
    vec![
        MorseField {
            name: "extremum",
            eval: |x, y| x * x + y * y,
            grad: |x, y| [2.0 * x, 2.0 * y],
            expected_index: 1,
        },
        MorseField {
            name: "saddle",
            eval: |x, y| x * x - y * y,
            grad: |x, y| [2.0 * x, -2.0 * y],
            expected_index: -1,
        },
        MorseField {
            name: "monkey_saddle",
            eval: |x, y| x * x * x - 3.0 * x * y * y,
            grad: |x, y| [3.0 * (x * x - y * y), -6.0 * x * y],
            expected_index: -2,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn axis_values() {
        let u = remark_solution(0.9).unwrap();
        assert_eq!(u.eval(0.0, 0.0).unwrap(), 0.0);
        for y in [-0.8, -0.3, 0.5] {
            assert_eq!(u.eval(0.0, y).unwrap(), 0.0);
            assert_eq!(u.grad(0.0, y).unwrap(), [0.0, 0.0]);
        }
        for x in [0.1, 0.5, 0.85] {
            assert_abs_diff_eq!(u.eval(x, 0.0).unwrap(), 1.0 - (1.0f64 - x * x).sqrt(), epsilon = 1e-15);
        }
        assert!(matches!(u.eval(0.8, 0.7), Err(Error::OutsideDomain { .. })));
        assert!(remark_solution(1.0).is_err());
    }

    #[test]
    fn odd_in_x() {
        let u = remark_solution(0.9).unwrap();
        for (x, y) in [(0.2, 0.3), (0.6, -0.1), (0.05, 0.7)] {
            assert_abs_diff_eq!(u.eval(-x, y).unwrap(), -u.eval(x, y).unwrap(), epsilon = 1e-15);
        }
    }
}
