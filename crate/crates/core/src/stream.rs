//! The rotated flux 1-form of a minimizer, its least-squares potential (the
//! stream function), periods along lattice loops, and the Fenchel coupling
//! diagnostics for the pair `(u, v)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{Grid2D, ScalarField};
use crate::lagrangian::{ConjugatePair, Lagrangian};
use crate::minimize::DEGENERATE_RHO;
use crate::numeric::{median, norm, pairwise_sum, pcg};
use crate::{Error, Result};

/// Relative residual at which the potential solve stops.
pub const STREAM_RTOL: f64 = 1e-10;

/// A per-triangle 1-form `a dx + b dy`.
#[derive(Debug, Clone)]
pub struct OneForm {
    grid: Arc<Grid2D>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl OneForm {
    pub fn new(grid: Arc<Grid2D>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = grid.triangles().len();
        if a.len() != n || b.len() != n {
            return Err(Error::GridPrecondition(format!("1-form needs {n} cell values")));
        }
        Ok(Self { grid, a, b })
    }

    /// Samples a smooth form at triangle centroids.
    pub fn from_fn(grid: Arc<Grid2D>, f: impl Fn(f64, f64) -> [f64; 2] + Sync) -> Self {
        let (a, b) = grid
            .triangles()
            .par_iter()
            .map(|t| {
                let [x, y] = grid.centroid(t);
                let w = f(x, y);
                (w[0], w[1])
            })
            .unzip();
        Self { grid, a, b }
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn at(&self, t: usize) -> [f64; 2] {
        [self.a[t], self.b[t]]
    }
}

/// `omega = f'(|grad u|)/|grad u| (-u_y dx + u_x dy)` per cell, extended by
/// zero on flat cells when `f'(0) = 0`.
pub fn one_form(l: &dyn Lagrangian, u: &ScalarField) -> Result<OneForm> {
    let grads = u.cell_gradients();
    let singular = l.fp0() > 0.0;
    let pairs = grads
        .par_iter()
        .enumerate()
        .map(|(cell, &p)| {
            let rho = norm(p);
            if rho < DEGENERATE_RHO {
                return if singular { Err(Error::SingularCell { cell }) } else { Ok((0.0, 0.0)) };
            }
            let s = l.fp(rho) / rho;
            Ok((-s * p[1], s * p[0]))
        })
        .collect::<Result<Vec<_>>>()?;
    let (a, b) = pairs.into_iter().unzip();
    Ok(OneForm { grid: u.grid().clone(), a, b })
}

/// Potential recovered from a 1-form.
#[derive(Debug, Clone)]
pub struct StreamSolution {
    pub v: ScalarField,
    /// `sum_T |grad v - omega|^2 |T|` at the solution.
    pub misfit: f64,
    pub iterations: usize,
}

/// Least-squares potential of `w` on its grid, normalized to zero mean over
/// the interior nodes.
pub fn integrate_stream(w: &OneForm) -> Result<StreamSolution> {
    let grid = w.grid().clone();
    let n = grid.len();
    let nx = grid.nx();
    let h = grid.h();
    let mut east = vec![0.0; n];
    let mut north = vec![0.0; n];
    for t in grid.triangles() {
        let [a, b, _] = t.nodes;
        if t.upper {
            north[a] += 0.5;
            east[b] += 0.5;
        } else {
            east[a] += 0.5;
            north[b] += 0.5;
        }
    }
    let west = |k: usize| if k >= 1 { east[k - 1] } else { 0.0 };
    let south = |k: usize| if k >= nx { north[k - nx] } else { 0.0 };
    let diag: Vec<f64> = (0..n).map(|k| east[k] + north[k] + west(k) + south(k)).collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            if diag[k] == 0.0 {
                *o = 0.0;
                return;
            }
            let mut acc = diag[k] * v[k];
            if east[k] > 0.0 {
                acc -= east[k] * v[k + 1];
            }
            if north[k] > 0.0 {
                acc -= north[k] * v[k + nx];
            }
            let we = west(k);
            if we > 0.0 {
                acc -= we * v[k - 1];
            }
            let so = south(k);
            if so > 0.0 {
                acc -= so * v[k - nx];
            }
            *o = acc;
        });
    };
    let tris = grid.triangles();
    let scale = 0.5 * h;
    let rhs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            grid.node_triangles(k)
                .iter()
                .map(|&(t, loc)| {
                    let hat = tris[t as usize].hat_gradient(loc as usize);
                    (w.a[t as usize] * hat[0] + w.b[t as usize] * hat[1]) * scale
                })
                .sum()
        })
        .collect();
    let mut v = vec![0.0; n];
    let out = pcg(apply, &diag, &rhs, &mut v, STREAM_RTOL, 20 * n + 1000);
    if !out.converged {
        return Err(Error::SolverStagnation { iterations: out.iterations, residual: out.relative_residual });
    }
    let interior = grid.interior_nodes();
    let mean = pairwise_sum(&interior.iter().map(|&k| v[k]).collect::<Vec<_>>()) / interior.len() as f64;
    for (k, x) in v.iter_mut().enumerate() {
        *x = if grid.is_active(k) { *x - mean } else { f64::NAN };
    }
    let field = ScalarField::new(grid.clone(), v)?;
    let grads = field.cell_gradients();
    let parts: Vec<f64> = grads
        .iter()
        .enumerate()
        .map(|(t, p)| (p[0] - w.a[t]).powi(2) + (p[1] - w.b[t]).powi(2))
        .collect();
    let misfit = pairwise_sum(&parts) * grid.cell_area();
    Ok(StreamSolution { v: field, misfit, iterations: out.iterations })
}

/// Mean of `v` over interior nodes.
pub fn interior_mean(v: &ScalarField) -> f64 {
    let interior = v.grid().interior_nodes();
    pairwise_sum(&interior.iter().map(|&k| v.get(k)).collect::<Vec<_>>()) / interior.len() as f64
}

/// Line integral of `w` along a closed lattice path of axis-adjacent nodes.
/// Each edge uses the average of `w` over the triangles sharing that edge.
pub fn period(w: &OneForm, path: &[usize]) -> Result<f64> {
    let grid = w.grid();
    let mut nodes = path.to_vec();
    if nodes.len() >= 2 && nodes.first() == nodes.last() {
        nodes.pop();
    }
    if nodes.len() < 4 {
        return Err(Error::OpenPath(format!("{} distinct nodes", nodes.len())));
    }
    let mut parts = Vec::with_capacity(nodes.len());
    for idx in 0..nodes.len() {
        let (p, q) = (nodes[idx], nodes[(idx + 1) % nodes.len()]);
        let (pi, pj) = grid.ij(p);
        let (qi, qj) = grid.ij(q);
        let step = (qi as i64 - pi as i64).abs() + (qj as i64 - pj as i64).abs();
        if step != 1 {
            return Err(Error::OpenPath(format!("nodes {p} and {q} are not lattice neighbors")));
        }
        let cells = grid.edge_triangles(p, q);
        if cells.is_empty() {
            return Err(Error::OpenPath(format!("edge {p}-{q} lies outside the triangulation")));
        }
        let mut avg = [0.0; 2];
        for &t in &cells {
            avg[0] += w.a[t as usize] / cells.len() as f64;
            avg[1] += w.b[t as usize] / cells.len() as f64;
        }
        let (x0, x1) = (grid.xy(p), grid.xy(q));
        parts.push(avg[0] * (x1[0] - x0[0]) + avg[1] * (x1[1] - x0[1]));
    }
    Ok(pairwise_sum(&parts))
}

fn same_grid(u: &ScalarField, v: &ScalarField) -> Result<()> {
    if Arc::ptr_eq(u.grid(), v.grid()) || u.grid().kinds() == v.grid().kinds() {
        Ok(())
    } else {
        Err(Error::GridPrecondition("u and v live on different grids".into()))
    }
}

/// Value `F = sum_T defect_T |T|` and the per-cell Fenchel-Young defect
/// `f(|grad u|) + g(|grad v|) - (u_x v_y - u_y v_x)`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub value: f64,
    pub defect: Vec<f64>,
}

pub fn coupling_functional(lf: &dyn Lagrangian, lg: &ConjugatePair, u: &ScalarField, v: &ScalarField) -> Result<Coupling> {
    same_grid(u, v)?;
    let gu = u.cell_gradients();
    let gv = v.cell_gradients();
    let defect = gu
        .par_iter()
        .zip(gv.par_iter())
        .map(|(p, q)| Ok(lf.f(norm(*p)) + lg.g(norm(*q))? - (p[0] * q[1] - p[1] * q[0])))
        .collect::<Result<Vec<f64>>>()?;
    let value = pairwise_sum(&defect) * u.grid().cell_area();
    Ok(Coupling { value, defect })
}

/// Per-cell residual of `u_x = g'(|grad v|) v_y/|grad v|`,
/// `u_y = -g'(|grad v|) v_x/|grad v|` (max of the two), with `0/0 = 0`.
pub fn inverse_system_residual(lg: &ConjugatePair, u: &ScalarField, v: &ScalarField) -> Result<Vec<f64>> {
    same_grid(u, v)?;
    let gu = u.cell_gradients();
    let gv = v.cell_gradients();
    gu.par_iter()
        .zip(gv.par_iter())
        .map(|(p, q)| {
            let r = norm(*q);
            let gp = lg.gp(r)?;
            let s = if r < DEGENERATE_RHO { 0.0 } else { gp / r };
            Ok((p[0] - s * q[1]).abs().max((p[1] + s * q[0]).abs()))
        })
        .collect()
}

/// `K(v) = sum_T g(|grad v|) |T|` (diagnostic only).
pub fn k_functional(lg: &ConjugatePair, v: &ScalarField) -> Result<f64> {
    let parts = v
        .cell_gradients()
        .par_iter()
        .map(|q| lg.g(norm(*q)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&parts) * v.grid().cell_area())
}

/// Per-cell relative mismatch `| |grad v| - f'(|grad u|) | / f'(|grad u|)`
/// over cells where `f'(|grad u|) > 0`.
pub fn gradient_mismatch(l: &dyn Lagrangian, u: &ScalarField, v: &ScalarField) -> Result<Vec<f64>> {
    same_grid(u, v)?;
    let gu = u.cell_gradients();
    let gv = v.cell_gradients();
    Ok(gu
        .iter()
        .zip(&gv)
        .filter_map(|(p, q)| {
            let target = l.fp(norm(*p));
            (target > 0.0).then(|| (norm(*q) - target).abs() / target)
        })
        .collect())
}

/// Coupled fields with their Fenchel diagnostics.
#[derive(Debug, Clone)]
pub struct StreamPair {
    pub u: ScalarField,
    pub v: ScalarField,
    pub defect: Vec<f64>,
    pub f_value: f64,
    pub misfit: f64,
}

/// Summary numbers for a [`StreamPair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamSummary {
    pub misfit: f64,
    pub f_value: f64,
    pub max_defect: f64,
    pub min_defect: f64,
    pub sup_grad_v: f64,
    pub mean_v: f64,
    pub median_gradient_mismatch: f64,
}

/// Builds `v` from `u` and evaluates the coupling with the conjugate of `lf`.
pub fn stream_pair(lf: &dyn Lagrangian, lg: &ConjugatePair, u: &ScalarField) -> Result<StreamPair> {
    let w = one_form(lf, u)?;
    let sol = integrate_stream(&w)?;
    let c = coupling_functional(lf, lg, u, &sol.v)?;
    Ok(StreamPair { u: u.clone(), v: sol.v, defect: c.defect, f_value: c.value, misfit: sol.misfit })
}

impl StreamPair {
    pub fn summary(&self, lf: &dyn Lagrangian) -> Result<StreamSummary> {
        let sup_grad_v = self.v.cell_gradients().iter().fold(0.0f64, |m, q| m.max(norm(*q)));
        Ok(StreamSummary {
            misfit: self.misfit,
            f_value: self.f_value,
            max_defect: self.defect.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min_defect: self.defect.iter().cloned().fold(f64::INFINITY, f64::min),
            sup_grad_v,
            mean_v: interior_mean(&self.v),
            median_gradient_mismatch: median(gradient_mismatch(lf, &self.u, &self.v)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_rect;
    use crate::lagrangian::make_case_study;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_form_integrates_to_linear_potential() {
        let g = Arc::new(build_rect(1.0, 1.0, 1.0 / 16.0).unwrap());
        let w = OneForm::from_fn(g.clone(), |_, _| [0.0, 2.5]);
        let sol = integrate_stream(&w).unwrap();
        let mean_y = interior_mean(&ScalarField::from_fn(g.clone(), |_, y| y).unwrap());
        for k in 0..g.len() {
            let [_, y] = g.xy(k);
            assert_abs_diff_eq!(sol.v.get(k), 2.5 * (y - mean_y), epsilon = 1e-8);
        }
        assert!(sol.misfit < 1e-16);
    }

    #[test]
    fn singular_cells_are_reported() {
        let g = Arc::new(build_rect(1.0, 1.0, 0.125).unwrap());
        let u = ScalarField::from_fn(g, |_, _| 0.0).unwrap();
        assert!(matches!(one_form(make_case_study().as_ref(), &u), Err(Error::SingularCell { .. })));
    }
}
