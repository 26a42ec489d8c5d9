//! Critical points of nodal fields: detection, winding index, level-curve
//! branch counts, the Bernstein slack and the coarea/index identity.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::Serialize;

use crate::grid::{gradient, hessian_at, NodeKind, ScalarField, VectorField};
use crate::lagrangian::{alpha_of, Lagrangian};
use crate::numeric::{norm, pairwise_sum, wrap_angle};
use crate::{Error, Result};

/// Samples on the circle used by [`branch_count`].
pub const BRANCH_SAMPLES: usize = 720;
/// Longest run of near-zero samples tolerated before a crossing is ambiguous.
pub const MAX_ZERO_RUN: usize = 36;
/// Number of level values in the coarea quadrature.
pub const COAREA_LEVELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub node: usize,
    /// Mean of `|grad u|` over the triangles around the node.
    pub grad: f64,
}

/// Index and branch data for one isolated candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateAnalysis {
    pub node: usize,
    pub index: Option<i32>,
    pub raw_index: Option<f64>,
    pub branches: Option<u32>,
    /// Angles (radians) where the level curve through the candidate crosses the circle.
    pub crossing_angles: Vec<f64>,
    pub note: Option<String>,
}

/// Winding index around a whole candidate component, when a loop fits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentIndex {
    pub component: usize,
    pub size: usize,
    pub index: Option<i32>,
    pub raw_index: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CriticalReport {
    pub eps: f64,
    pub candidates: Vec<Candidate>,
    /// 4-connected clusters of candidate nodes.
    pub components: Vec<Vec<usize>>,
    pub isolated: Vec<usize>,
    pub analyses: Vec<CandidateAnalysis>,
    pub component_indices: Vec<ComponentIndex>,
}

/// `2 h` times the largest cell gradient (at least `2 h`).
pub fn default_eps(u: &ScalarField) -> f64 {
    let sup = u.cell_gradients().iter().fold(0.0f64, |m, p| m.max(norm(*p)));
    2.0 * u.grid().h() * sup.max(1.0)
}

/// Interior nodes whose cell-averaged `|grad u|` is below `eps`, grouped into
/// 4-connected components.
pub fn detect(u: &ScalarField, eps: f64) -> CriticalReport {
    let grid = u.grid();
    let grads = u.cell_gradients();
    let mut candidates = Vec::new();
    let mut is_cand = vec![false; grid.len()];
    for &k in grid.interior_nodes() {
        let tris = grid.node_triangles(k);
        if tris.is_empty() {
            continue;
        }
        let mean = tris.iter().map(|&(t, _)| norm(grads[t as usize])).sum::<f64>() / tris.len() as f64;
        if mean < eps {
            candidates.push(Candidate { node: k, grad: mean });
            is_cand[k] = true;
        }
    }
    let mut seen = vec![false; grid.len()];
    let mut components = Vec::new();
    for c in &candidates {
        if seen[c.node] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![c.node];
        seen[c.node] = true;
        while let Some(k) = stack.pop() {
            comp.push(k);
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if let Some(m) = grid.offset(k, di, dj) {
                    if is_cand[m] && !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    let isolated = components
        .iter()
        .filter(|comp| comp.len() == 1)
        .map(|comp| comp[0])
        .filter(|&k| {
            (-2..=2).all(|dj| {
                (-2..=2).all(|di| (di == 0 && dj == 0) || grid.offset(k, di, dj).map_or(true, |m| !is_cand[m]))
            })
        })
        .collect();
    CriticalReport { eps, candidates, components, isolated, ..Default::default() }
}

/// A closed, simple, counterclockwise path of axis-adjacent lattice nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub nodes: Vec<usize>,
}

impl LoopSpec {
    /// Lattice approximation of the circle `|x - center| = radius`; every node
    /// must be an interior node.
    pub fn circle(u_grid: &crate::grid::Grid2D, center: [f64; 2], radius: f64) -> Result<Self> {
        let h = u_grid.h();
        if !(radius >= 2.0 * h) {
            return Err(Error::CriticalPrecondition(format!("loop radius {radius} below 2h")));
        }
        let samples = ((16.0 * PI * radius / h).ceil() as usize).max(64);
        let mut cells: Vec<(i64, i64)> = Vec::with_capacity(samples);
        let o = u_grid.origin();
        for s in 0..samples {
            let th = 2.0 * PI * s as f64 / samples as f64;
            let x = center[0] + radius * th.cos();
            let y = center[1] + radius * th.sin();
            let ij = (((x - o[0]) / h).round() as i64, ((y - o[1]) / h).round() as i64);
            if cells.last() != Some(&ij) {
                cells.push(ij);
            }
        }
        while cells.len() > 1 && cells.first() == cells.last() {
            cells.pop();
        }
        // make 4-connected: insert the corner closer to the circle on diagonal steps
        let dist = |c: (i64, i64)| {
            let x = o[0] + c.0 as f64 * h - center[0];
            let y = o[1] + c.1 as f64 * h - center[1];
            (x.hypot(y) - radius).abs()
        };
        let mut path: Vec<(i64, i64)> = Vec::with_capacity(cells.len() * 2);
        for idx in 0..cells.len() {
            let a = cells[idx];
            let b = cells[(idx + 1) % cells.len()];
            path.push(a);
            let (di, dj) = (b.0 - a.0, b.1 - a.1);
            if di.abs() == 1 && dj.abs() == 1 {
                let c1 = (a.0 + di, a.1);
                let c2 = (a.0, a.1 + dj);
                path.push(if dist(c1) <= dist(c2) { c1 } else { c2 });
            } else if di.abs() + dj.abs() > 1 {
                return Err(Error::CriticalPrecondition("loop sampling skipped a node".into()));
            }
        }
        // remove immediate backtracks a, b, a
        let mut changed = true;
        while changed {
            changed = false;
            let n = path.len();
            for idx in 0..n {
                if path[idx] == path[(idx + 2) % n] && n > 4 {
                    let drop = [(idx + 1) % n, (idx + 2) % n];
                    let mut keep = Vec::with_capacity(n - 2);
                    for (m, &p) in path.iter().enumerate() {
                        if !drop.contains(&m) {
                            keep.push(p);
                        }
                    }
                    path = keep;
                    changed = true;
                    break;
                }
            }
        }
        let unique: HashSet<_> = path.iter().collect();
        if unique.len() != path.len() {
            return Err(Error::CriticalPrecondition("lattice loop is not simple".into()));
        }
        let mut nodes = Vec::with_capacity(path.len());
        for &(i, j) in &path {
            if i < 0 || j < 0 || i as usize >= u_grid.nx() || j as usize >= u_grid.ny() {
                return Err(Error::CriticalPrecondition("loop leaves the grid".into()));
            }
            let k = u_grid.index(i as usize, j as usize);
            if u_grid.kind(k) != NodeKind::Interior {
                return Err(Error::CriticalPrecondition("loop leaves the interior".into()));
            }
            nodes.push(k);
        }
        Ok(Self { center, radius, nodes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Winding {
    pub index: i32,
    pub raw: f64,
}

/// Angle swept by the direction of `a -> b` (linearly interpolated), refined
/// until every sub-step turns by less than `pi/2`.
fn swept_angle(a: [f64; 2], b: [f64; 2], depth: u32) -> Option<f64> {
    let d = wrap_angle(b[1].atan2(b[0]) - a[1].atan2(a[0]));
    if d.abs() < PI / 2.0 {
        return Some(d);
    }
    if depth == 0 {
        return None;
    }
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let scale = norm(a).max(norm(b));
    if norm(mid) <= 1e-14 * scale {
        return None;
    }
    Some(swept_angle(a, mid, depth - 1)? + swept_angle(mid, b, depth - 1)?)
}

/// Degree of `grad u / |grad u|` along the loop, from nodal gradients.
pub fn winding_index(u: &ScalarField, lp: &LoopSpec) -> Result<Winding> {
    let g = gradient(u);
    winding_with_gradient(&g, lp)
}

pub fn winding_with_gradient(g: &VectorField, lp: &LoopSpec) -> Result<Winding> {
    let n = lp.nodes.len();
    if n < 4 {
        return Err(Error::CriticalPrecondition("loop too short".into()));
    }
    let mut total = 0.0;
    for idx in 0..n {
        let (p, q) = (lp.nodes[idx], lp.nodes[(idx + 1) % n]);
        for &k in &[p, q] {
            let m = g.magnitude(k);
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::ZeroGradientOnLoop { node: k });
            }
        }
        total += swept_angle(g.at(p), g.at(q), 20).ok_or(Error::ZeroGradientOnLoop { node: p })?;
    }
    let raw = total / (2.0 * PI);
    Ok(Winding { index: raw.round() as i32, raw })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branches {
    /// Number `L` of level curves through the center (half the crossings).
    pub count: u32,
    pub crossing_angles: Vec<f64>,
}

/// Counts sign changes of `u - u(center)` on a circle of 720 bilinear samples.
///
/// Samples with `|u - u(center)| < tol` are skipped; a run of more than
/// [`MAX_ZERO_RUN`] such samples is reported as ambiguous.
pub fn branch_count(u: &ScalarField, center: [f64; 2], radius: f64, tol: f64) -> Result<Branches> {
    let uc = u
        .sample(center)
        .ok_or_else(|| Error::CriticalPrecondition("center outside the grid".into()))?;
    let g = gradient(u);
    let gc = sample_vector(u, &g, center)
        .ok_or_else(|| Error::CriticalPrecondition("center outside the grid".into()))?;
    let mut diffs = Vec::with_capacity(BRANCH_SAMPLES);
    for s in 0..BRANCH_SAMPLES {
        let th = 2.0 * PI * s as f64 / BRANCH_SAMPLES as f64;
        let p = [center[0] + radius * th.cos(), center[1] + radius * th.sin()];
        let v = u
            .sample(p)
            .ok_or_else(|| Error::CriticalPrecondition("circle leaves the grid".into()))?;
        diffs.push(v - uc);
    }
    let osc = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if norm(gc) * radius >= 0.5 * osc {
        return Err(Error::CriticalPrecondition(format!(
            "center is not a critical candidate (|grad u| = {:.3e})",
            norm(gc)
        )));
    }
    let sign = |d: f64| if d.abs() < tol { 0 } else if d > 0.0 { 1 } else { -1 };
    let start = match (0..BRANCH_SAMPLES).find(|&s| sign(diffs[s]) != 0) {
        Some(s) => s,
        None => return Err(Error::AmbiguousCrossing { angle: 0.0 }),
    };
    let mut crossings = Vec::new();
    let mut last = sign(diffs[start]);
    let mut last_idx = start;
    for step in 1..=BRANCH_SAMPLES {
        let s = (start + step) % BRANCH_SAMPLES;
        let c = sign(diffs[s]);
        if c == 0 {
            continue;
        }
        let gap = step - (last_idx + BRANCH_SAMPLES - start) % BRANCH_SAMPLES;
        let mid = (last_idx as f64 + 0.5 * gap as f64) * 2.0 * PI / BRANCH_SAMPLES as f64;
        if gap > MAX_ZERO_RUN + 1 {
            return Err(Error::AmbiguousCrossing { angle: mid % (2.0 * PI) });
        }
        if c != last {
            crossings.push(mid % (2.0 * PI));
        }
        last = c;
        last_idx = s;
    }
    Ok(Branches { count: (crossings.len() / 2) as u32, crossing_angles: crossings })
}

/// Bilinear interpolation of a nodal vector field.
pub fn sample_vector(u: &ScalarField, g: &VectorField, p: [f64; 2]) -> Option<[f64; 2]> {
    let gx = ScalarField::new(u.grid().clone(), fill_exterior(u, &g.vx)).ok()?;
    let gy = ScalarField::new(u.grid().clone(), fill_exterior(u, &g.vy)).ok()?;
    Some([gx.sample(p)?, gy.sample(p)?])
}

fn fill_exterior(u: &ScalarField, v: &[f64]) -> Vec<f64> {
    let grid = u.grid();
    (0..grid.len()).map(|k| if grid.is_active(k) && v[k].is_finite() { v[k] } else if grid.is_active(k) { 0.0 } else { f64::NAN }).collect()
}

/// Runs [`winding_index`] and [`branch_count`] around each isolated candidate
/// and around each component whose enclosing loop fits in the interior.
pub fn analyze(u: &ScalarField, report: &mut CriticalReport, radius: f64, tol: f64) {
    let grid = u.grid().clone();
    let g = gradient(u);
    let cand_set: HashSet<usize> = report.candidates.iter().map(|c| c.node).collect();
    let encloses_only = |lp: &LoopSpec, own: &[usize]| {
        let inside = |k: usize| {
            let p = grid.xy(k);
            (p[0] - lp.center[0]).hypot(p[1] - lp.center[1]) < lp.radius + grid.h()
        };
        lp.nodes.iter().all(|k| !cand_set.contains(k))
            && cand_set.iter().all(|&k| own.contains(&k) || !inside(k))
    };
    report.analyses = report
        .isolated
        .iter()
        .map(|&node| {
            let center = grid.xy(node);
            let mut a = CandidateAnalysis { node, index: None, raw_index: None, branches: None, crossing_angles: vec![], note: None };
            match LoopSpec::circle(&grid, center, radius) {
                Ok(lp) if encloses_only(&lp, &[node]) => match winding_with_gradient(&g, &lp) {
                    Ok(w) => {
                        a.index = Some(w.index);
                        a.raw_index = Some(w.raw);
                    }
                    Err(e) => a.note = Some(e.to_string()),
                },
                Ok(_) => a.note = Some("loop encloses other candidates".into()),
                Err(e) => a.note = Some(e.to_string()),
            }
            match branch_count(u, center, radius, tol) {
                Ok(b) => {
                    a.branches = Some(b.count);
                    a.crossing_angles = b.crossing_angles;
                }
                Err(e) => a.note = Some(a.note.take().map_or(e.to_string(), |n| format!("{n}; {e}"))),
            }
            a
        })
        .collect();
    report.component_indices = report
        .components
        .iter()
        .enumerate()
        .map(|(ci, comp)| {
            let pts: Vec<[f64; 2]> = comp.iter().map(|&k| grid.xy(k)).collect();
            let c = [
                pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64,
                pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64,
            ];
            let extent = pts.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).fold(0.0, f64::max);
            let r = (extent + 3.0 * grid.h()).max(radius);
            let w = LoopSpec::circle(&grid, c, r)
                .ok()
                .filter(|lp| encloses_only(lp, comp))
                .and_then(|lp| winding_with_gradient(&g, &lp).ok());
            ComponentIndex { component: ci, size: comp.len(), index: w.map(|w| w.index), raw_index: w.map(|w| w.raw) }
        })
        .collect();
}

/// Per-node Bernstein slack `-det(D2u) (alpha + 1/alpha) - |D2u|^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinReport {
    pub slack: Vec<Option<f64>>,
    pub evaluated: usize,
    pub min_slack: Option<f64>,
    pub argmin: Option<usize>,
}

pub fn bernstein_check(l: &dyn Lagrangian, u: &ScalarField, eps: f64) -> Result<BernsteinReport> {
    let grid = u.grid();
    let g = gradient(u);
    let mut slack = vec![None; grid.len()];
    let mut best: Option<(usize, f64)> = None;
    let mut evaluated = 0;
    for &k in grid.interior_nodes() {
        let rho = g.magnitude(k);
        if !(rho > eps) {
            continue;
        }
        let Some(hs) = hessian_at(u, k) else { continue };
        let a = alpha_of(l, rho)?;
        let s = -hs.det() * (a + 1.0 / a) - hs.norm_sq();
        slack[k] = Some(s);
        evaluated += 1;
        if best.map_or(true, |(_, m)| s < m) {
            best = Some((k, s));
        }
    }
    Ok(BernsteinReport { slack, evaluated, min_slack: best.map(|b| b.1), argmin: best.map(|b| b.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoareaPair {
    pub lhs: f64,
    pub rhs: f64,
}

/// Both sides of the coarea identity on `{eps < |grad u| < eps0}`: the area sum
/// of `det(D2u)/|grad u|` and the `t`-integral of the turning of `grad u` along
/// the level curves `{|grad u| = t}` oriented with `{|grad u| < t}` on the left.
pub fn coarea_index_identity(u: &ScalarField, eps: f64, eps0: f64) -> Result<CoareaPair> {
    if !(eps >= 0.0 && eps0 > eps) {
        return Err(Error::CriticalPrecondition(format!("need 0 <= eps < eps0, got {eps}, {eps0}")));
    }
    let grid = u.grid();
    let h = grid.h();
    let g = gradient(u);
    let mag: Vec<f64> = (0..grid.len()).map(|k| g.magnitude(k)).collect();
    let mut parts = Vec::new();
    for k in 0..grid.len() {
        if !grid.is_active(k) || !(mag[k] > eps && mag[k] < eps0) {
            continue;
        }
        if grid.kind(k) != NodeKind::Interior {
            return Err(Error::CriticalPrecondition("gradient annulus reaches the boundary".into()));
        }
        let hs = hessian_at(u, k)
            .ok_or_else(|| Error::CriticalPrecondition("Hessian undefined inside the annulus".into()))?;
        parts.push(hs.det() / mag[k] * h * h);
    }
    if parts.is_empty() {
        return Err(Error::CriticalPrecondition("empty gradient annulus".into()));
    }
    let lhs = pairwise_sum(&parts);
    let dt = (eps0 - eps) / COAREA_LEVELS as f64;
    let mut per_level = Vec::with_capacity(COAREA_LEVELS);
    for m in 0..COAREA_LEVELS {
        let t = eps + (m as f64 + 0.5) * dt;
        per_level.push(level_turning(u, &g, &mag, t)? * dt);
    }
    Ok(CoareaPair { lhs, rhs: pairwise_sum(&per_level) })
}

/// Total turning of `grad u` along the oriented marching-squares curves `{|grad u| = t}`.
fn level_turning(u: &ScalarField, g: &VectorField, mag: &[f64], t: f64) -> Result<f64> {
    let grid = u.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.h();
    let mut total = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = [grid.index(i, j), grid.index(i + 1, j), grid.index(i + 1, j + 1), grid.index(i, j + 1)];
            let active = c.iter().all(|&k| grid.is_active(k) && mag[k].is_finite());
            let inside: Vec<Option<bool>> = c
                .iter()
                .map(|&k| (grid.is_active(k) && mag[k].is_finite()).then(|| mag[k] < t))
                .collect();
            let known: Vec<bool> = inside.iter().flatten().cloned().collect();
            let mixed = known.iter().any(|&b| b) && known.iter().any(|&b| !b);
            if !mixed {
                continue;
            }
            if !active || c.iter().any(|&k| grid.kind(k) != NodeKind::Interior) {
                return Err(Error::LevelExtraction(format!("level {t:.3e} reaches the boundary near node {}", c[0])));
            }
            let ins: [bool; 4] = [mag[c[0]] < t, mag[c[1]] < t, mag[c[2]] < t, mag[c[3]] < t];
            let pos = |k: usize| [grid.xy(k)[0], grid.xy(k)[1]];
            // crossing point and interpolated gradient on edge e (corner e -> e+1)
            let cross = |e: usize| -> Option<([f64; 2], [f64; 2])> {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if ins[e] == ins[(e + 1) % 4] {
                    return None;
                }
                let s = ((t - mag[a]) / (mag[b] - mag[a])).clamp(0.0, 1.0);
                let (pa, pb) = (pos(a), pos(b));
                let p = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let ga = g.at(a);
                let gb = g.at(b);
                Some((p, [ga[0] + s * (gb[0] - ga[0]), ga[1] + s * (gb[1] - ga[1])]))
            };
            let edges: Vec<usize> = (0..4).filter(|&e| ins[e] != ins[(e + 1) % 4]).collect();
            // segments as (edge, edge, reference corner)
            let mut segs: Vec<(usize, usize, usize)> = Vec::new();
            if edges.len() == 2 {
                let (e1, e2) = (edges[0], edges[1]);
                segs.push((e1, e2, usize::MAX));
            } else if edges.len() == 4 {
                let center_inside = mag[c[0]] + mag[c[1]] + mag[c[2]] + mag[c[3]] < 4.0 * t;
                for k in 0..4 {
                    if ins[k] != center_inside {
                        segs.push(((k + 3) % 4, k, k));
                    }
                }
            }
            for (e1, e2, refc) in segs {
                let (Some((p, gp)), Some((q, gq))) = (cross(e1), cross(e2)) else { continue };
                let d = [q[0] - p[0], q[1] - p[1]];
                let side = |k: usize| {
                    let r = pos(c[k]);
                    d[0] * (r[1] - p[1]) - d[1] * (r[0] - p[0])
                };
                let refk = if refc == usize::MAX {
                    (0..4).max_by(|&a, &b| side(a).abs().partial_cmp(&side(b).abs()).unwrap()).unwrap()
                } else {
                    refc
                };
                let left = side(refk) > 0.0;
                let (ga, gb) = if left == ins[refk] { (gp, gq) } else { (gq, gp) };
                if norm(ga) == 0.0 || norm(gb) == 0.0 {
                    continue;
                }
                let _ = h;
                total.push(wrap_angle(gb[1].atan2(gb[0]) - ga[1].atan2(ga[0])));
            }
        }
    }
    Ok(pairwise_sum(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_rect;
    use std::sync::Arc;

    #[test]
    fn radial_quadratic_has_single_isolated_candidate() {
        let g = Arc::new(build_rect(1.0, 1.0, 1.0 / 32.0).unwrap());
        let u = ScalarField::from_fn(g.clone(), |x, y| x * x + y * y).unwrap();
        let r = detect(&u, 1.8 * g.h());
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.isolated.len(), 1);
        assert_eq!(g.xy(r.isolated[0]), [0.0, 0.0]);
    }

    #[test]
    fn lattice_circle_is_closed_and_simple() {
        let g = build_rect(1.0, 1.0, 1.0 / 64.0).unwrap();
        let lp = LoopSpec::circle(&g, [0.0, 0.0], 0.3).unwrap();
        let n = lp.nodes.len();
        for idx in 0..n {
            let (a, b) = (g.ij(lp.nodes[idx]), g.ij(lp.nodes[(idx + 1) % n]));
            assert_eq!((a.0 as i64 - b.0 as i64).abs() + (a.1 as i64 - b.1 as i64).abs(), 1);
        }
    }
}
