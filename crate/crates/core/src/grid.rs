//! Masked rectangular lattices, boundary data, nodal fields and their
//! finite-difference derivatives.
//!
//! Every grid square `(i, j) .. (i+1, j+1)` whose four corners are not exterior
//! is split along its north-east diagonal into a lower triangle
//! `(i,j) (i+1,j) (i+1,j+1)` and an upper triangle `(i,j) (i,j+1) (i+1,j+1)`.
//! The triangles carry the piecewise-linear discretization used by the
//! energy, the stream-function solve and all per-cell diagnostics.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::ConvexPolygon;
use crate::numeric::{norm, Sym2};
use crate::{Error, Result};

/// Minimum number of interior nodes a builder accepts.
pub const MIN_INTERIOR: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

impl NodeKind {
    fn code(self) -> char {
        match self {
            NodeKind::Interior => 'I',
            NodeKind::Boundary => 'B',
            NodeKind::Exterior => 'E',
        }
    }

    fn from_code(c: char) -> Option<Self> {
        match c {
            'I' => Some(NodeKind::Interior),
            'B' => Some(NodeKind::Boundary),
            'E' => Some(NodeKind::Exterior),
            _ => None,
        }
    }
}

/// One piecewise-linear cell. `upper` selects the vertex convention above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triangle {
    pub nodes: [usize; 3],
    pub upper: bool,
}

/// Gradients of the three hat functions on a lower / upper triangle, in units of `1/h`.
const LOWER_HATS: [[f64; 2]; 3] = [[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]];
const UPPER_HATS: [[f64; 2]; 3] = [[0.0, -1.0], [-1.0, 1.0], [1.0, 0.0]];

impl Triangle {
    /// Gradient of the hat function of local vertex `k`, scaled by `h`.
    pub fn hat_gradient(&self, k: usize) -> [f64; 2] {
        if self.upper {
            UPPER_HATS[k]
        } else {
            LOWER_HATS[k]
        }
    }

    /// Exact gradient of the linear interpolant of `values`.
    pub fn gradient(&self, values: &[f64], h: f64) -> [f64; 2] {
        let [a, b, c] = self.nodes;
        let (u0, u1, u2) = (values[a], values[b], values[c]);
        if self.upper {
            [(u2 - u1) / h, (u1 - u0) / h]
        } else {
            [(u1 - u0) / h, (u2 - u1) / h]
        }
    }
}

/// A uniform lattice with spacing `h`, `nx * ny` nodes stored row-major
/// (`k = j * nx + i`), node `(i, j)` at `origin + h (i, j)`.
#[derive(Debug, Clone)]
pub struct Grid2D {
    h: f64,
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    kinds: Vec<NodeKind>,
    triangles: Vec<Triangle>,
    node_tris: Vec<Vec<(u32, u8)>>,
    square_tris: Vec<Option<[u32; 2]>>,
    boundary: Vec<usize>,
    interior: Vec<usize>,
}

/// Disk `|z| < radius` centered at the origin.
pub fn build_disk(radius: f64, h: f64) -> Result<Grid2D> {
    if !(radius > 0.0 && h > 0.0) || !radius.is_finite() {
        return Err(Error::GridPrecondition(format!("need R > 0 and h > 0, got R = {radius}, h = {h}")));
    }
    if h >= radius / 4.0 {
        return Err(Error::GridPrecondition(format!("need h < R/4, got h = {h}, R = {radius}")));
    }
    let half = (radius / h).ceil() as usize + 2;
    let n = 2 * half + 1;
    let origin = [-(half as f64) * h, -(half as f64) * h];
    let inside = |i: usize, j: usize| {
        let x = origin[0] + i as f64 * h;
        let y = origin[1] + j as f64 * h;
        x.hypot(y) < radius
    };
    let mut kinds = vec![NodeKind::Exterior; n * n];
    for j in 0..n {
        for i in 0..n {
            if inside(i, j) {
                kinds[j * n + i] = NodeKind::Interior;
            }
        }
    }
    mark_boundary_ring(&mut kinds, n, n);
    Grid2D::from_kinds(h, n, n, origin, kinds)
}

/// Rectangle `[-a/2, a/2] x [-b/2, b/2]`; the outer ring of nodes is boundary.
pub fn build_rect(a: f64, b: f64, h: f64) -> Result<Grid2D> {
    if !(a > 0.0 && b > 0.0 && h > 0.0) {
        return Err(Error::GridPrecondition(format!("need a, b, h > 0, got a = {a}, b = {b}, h = {h}")));
    }
    let nx = (a / h).round() as usize + 1;
    let ny = (b / h).round() as usize + 1;
    if nx < 3 || ny < 3 {
        return Err(Error::DegenerateGrid(format!("{nx} x {ny} nodes")));
    }
    let origin = [-((nx - 1) as f64) * h / 2.0, -((ny - 1) as f64) * h / 2.0];
    let mut kinds = vec![NodeKind::Boundary; nx * ny];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            kinds[j * nx + i] = NodeKind::Interior;
        }
    }
    Grid2D::from_kinds(h, nx, ny, origin, kinds)
}

/// Marks every non-interior node 8-adjacent to an interior node as boundary.
fn mark_boundary_ring(kinds: &mut [NodeKind], nx: usize, ny: usize) {
    let snapshot = kinds.to_vec();
    for j in 0..ny {
        for i in 0..nx {
            if snapshot[j * nx + i] == NodeKind::Interior {
                continue;
            }
            let touches = (-1i64..=1).any(|dj| {
                (-1i64..=1).any(|di| {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    ii >= 0
                        && jj >= 0
                        && (ii as usize) < nx
                        && (jj as usize) < ny
                        && snapshot[jj as usize * nx + ii as usize] == NodeKind::Interior
                })
            });
            kinds[j * nx + i] = if touches { NodeKind::Boundary } else { NodeKind::Exterior };
        }
    }
}

impl Grid2D {
    /// Builds a grid from an explicit mask, deriving triangles and adjacency.
    pub fn from_kinds(h: f64, nx: usize, ny: usize, origin: [f64; 2], kinds: Vec<NodeKind>) -> Result<Self> {
        if kinds.len() != nx * ny {
            return Err(Error::DegenerateGrid(format!("mask has {} entries for {nx} x {ny}", kinds.len())));
        }
        let mut grid = Self {
            h,
            nx,
            ny,
            origin,
            kinds,
            triangles: Vec::new(),
            node_tris: Vec::new(),
            square_tris: Vec::new(),
            boundary: Vec::new(),
            interior: Vec::new(),
        };
        for k in 0..nx * ny {
            match grid.kinds[k] {
                NodeKind::Interior => {
                    let (i, j) = grid.ij(k);
                    let ok = i > 0
                        && j > 0
                        && i + 1 < nx
                        && j + 1 < ny
                        && [k - 1, k + 1, k - nx, k + nx].iter().all(|&m| grid.kinds[m] != NodeKind::Exterior);
                    if !ok {
                        return Err(Error::DegenerateGrid(format!("interior node {k} has an exterior axis neighbor")));
                    }
                    grid.interior.push(k);
                }
                NodeKind::Boundary => grid.boundary.push(k),
                NodeKind::Exterior => {}
            }
        }
        if grid.interior.len() < MIN_INTERIOR {
            return Err(Error::DegenerateGrid(format!(
                "{} interior nodes, need at least {MIN_INTERIOR}",
                grid.interior.len()
            )));
        }
        grid.build_triangles();
        Ok(grid)
    }

    fn build_triangles(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        self.node_tris = vec![Vec::new(); nx * ny];
        self.square_tris = vec![None; (nx - 1) * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let a = j * nx + i;
                let b = a + 1;
                let c = a + nx;
                let d = c + 1;
                if [a, b, c, d].iter().any(|&m| self.kinds[m] == NodeKind::Exterior) {
                    continue;
                }
                let base = self.triangles.len() as u32;
                for t in [Triangle { nodes: [a, b, d], upper: false }, Triangle { nodes: [a, c, d], upper: true }] {
                    let idx = self.triangles.len() as u32;
                    for (loc, &m) in t.nodes.iter().enumerate() {
                        self.node_tris[m].push((idx, loc as u8));
                    }
                    self.triangles.push(t);
                }
                self.square_tris[j * (nx - 1) + i] = Some([base, base + 1]);
            }
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        self.kinds[k]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.kinds[k] != NodeKind::Exterior
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    /// Triangles containing node `k`, with the node's local vertex number.
    pub fn node_triangles(&self, k: usize) -> &[(u32, u8)] {
        &self.node_tris[k]
    }

    /// Area of every triangle.
    pub fn cell_area(&self) -> f64 {
        0.5 * self.h * self.h
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Index of node `(i + di, j + dj)` if it lies on the lattice.
    pub fn offset(&self, k: usize, di: i64, dj: i64) -> Option<usize> {
        let (i, j) = self.ij(k);
        let (ii, jj) = (i as i64 + di, j as i64 + dj);
        if ii < 0 || jj < 0 || ii as usize >= self.nx || jj as usize >= self.ny {
            None
        } else {
            Some(self.index(ii as usize, jj as usize))
        }
    }

    pub fn xy(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }

    /// Nearest lattice node to `p`, if `p` projects onto the lattice.
    pub fn nearest_node(&self, p: [f64; 2]) -> Option<usize> {
        let fi = ((p[0] - self.origin[0]) / self.h).round();
        let fj = ((p[1] - self.origin[1]) / self.h).round();
        if fi < 0.0 || fj < 0.0 || fi as usize >= self.nx || fj as usize >= self.ny {
            return None;
        }
        Some(self.index(fi as usize, fj as usize))
    }

    pub fn centroid(&self, t: &Triangle) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &m in &t.nodes {
            let p = self.xy(m);
            c[0] += p[0] / 3.0;
            c[1] += p[1] / 3.0;
        }
        c
    }

    /// The two triangles of the square with lower-left node `(i, j)`, if active.
    pub fn square_triangles(&self, i: usize, j: usize) -> Option<[u32; 2]> {
        if i + 1 >= self.nx || j + 1 >= self.ny {
            return None;
        }
        self.square_tris[j * (self.nx - 1) + i]
    }

    /// Triangles adjacent to the lattice edge `a -- b` (axis neighbors).
    pub fn edge_triangles(&self, a: usize, b: usize) -> Vec<u32> {
        self.node_tris[a]
            .iter()
            .filter(|(t, _)| self.triangles[*t as usize].nodes.contains(&b))
            .map(|(t, _)| *t)
            .collect()
    }

    /// Connected components of the boundary node set under 8-adjacency.
    pub fn boundary_components(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        for &start in &self.boundary {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(k) = stack.pop() {
                for dj in -1..=1 {
                    for di in -1..=1 {
                        if let Some(m) = self.offset(k, di, dj) {
                            if !seen[m] && self.kinds[m] == NodeKind::Boundary {
                                seen[m] = true;
                                stack.push(m);
                            }
                        }
                    }
                }
            }
        }
        count
    }

    /// Mask as run-length string, e.g. `"12E3B40I"`.
    pub fn mask_rle(&self) -> String {
        let mut out = String::new();
        let mut iter = self.kinds.iter().peekable();
        while let Some(&kind) = iter.next() {
            let mut run = 1;
            while iter.peek() == Some(&&kind) {
                iter.next();
                run += 1;
            }
            out.push_str(&run.to_string());
            out.push(kind.code());
        }
        out
    }

    pub fn describe(&self) -> GridDescription {
        GridDescription { h: self.h, nx: self.nx, ny: self.ny, origin: self.origin, mask: self.mask_rle() }
    }

    pub fn from_description(d: &GridDescription) -> Result<Self> {
        let mut kinds = Vec::with_capacity(d.nx * d.ny);
        let mut digits = String::new();
        for c in d.mask.chars() {
            if c.is_ascii_digit() {
                digits.push(c);
                continue;
            }
            let kind = NodeKind::from_code(c).ok_or_else(|| Error::FieldFormat(format!("bad mask code `{c}`")))?;
            let run: usize = digits.parse().map_err(|_| Error::FieldFormat("mask run without length".into()))?;
            digits.clear();
            kinds.extend(std::iter::repeat(kind).take(run));
        }
        if !digits.is_empty() {
            return Err(Error::FieldFormat("dangling mask run length".into()));
        }
        Self::from_kinds(d.h, d.nx, d.ny, d.origin, kinds)
    }
}

/// JSON sidecar describing a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDescription {
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub mask: String,
}

/// Dirichlet data `psi` on the boundary nodes and the slope constant `Q`.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    values: Vec<f64>,
    q: f64,
}

impl BoundaryData {
    /// Samples `psi` at every boundary node.
    pub fn from_fn(grid: &Grid2D, q: f64, psi: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = vec![f64::NAN; grid.len()];
        for &k in grid.boundary_nodes() {
            let [x, y] = grid.xy(k);
            values[k] = psi(x, y);
        }
        Self::from_values(grid, q, values)
    }

    /// Takes boundary values from a full nodal vector (other entries ignored).
    pub fn from_values(grid: &Grid2D, q: f64, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridPrecondition("boundary vector length differs from grid".into()));
        }
        if !(q >= 0.0) {
            return Err(Error::GridPrecondition(format!("Q must be nonnegative, got {q}")));
        }
        for (k, v) in values.iter_mut().enumerate() {
            if grid.kind(k) == NodeKind::Boundary {
                if !v.is_finite() {
                    return Err(Error::GridPrecondition(format!("psi not finite at boundary node {k}")));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { values, q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn with_q(&self, q: f64) -> Self {
        Self { values: self.values.clone(), q }
    }

    /// `psi` at boundary node `k` (`NaN` elsewhere).
    pub fn psi(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Slopes of the affine functions `L-` and `L+` through one boundary node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BscWitness {
    pub node: usize,
    pub lower: Option<[f64; 2]>,
    pub upper: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BscReport {
    pub ok: bool,
    pub slack: f64,
    pub witnesses: Vec<BscWitness>,
}

impl BscReport {
    pub fn failing_nodes(&self) -> Vec<usize> {
        self.witnesses
            .iter()
            .filter(|w| w.lower.is_none() || w.upper.is_none())
            .map(|w| w.node)
            .collect()
    }
}

/// Bounded slope condition with the default slack `Q h`.
pub fn verify_bsc(grid: &Grid2D, b: &BoundaryData) -> Result<BscReport> {
    verify_bsc_with_slack(grid, b, b.q() * grid.h())
}

/// For every boundary node `x0`, looks for slopes `p` with `|p| <= Q` such that
/// `psi(x0) + <p, x - x0>` stays below (resp. above) `psi(x) + slack`
/// (resp. `psi(x) - slack`) at every boundary node `x`.
///
/// Each search intersects the half-planes exactly and then takes the feasible
/// slope of least norm.
pub fn verify_bsc_with_slack(grid: &Grid2D, b: &BoundaryData, slack: f64) -> Result<BscReport> {
    let nodes = grid.boundary_nodes();
    if nodes.len() < 3 {
        return Err(Error::GridPrecondition("BSC needs at least 3 boundary nodes".into()));
    }
    let q = b.q();
    let pts: Vec<([f64; 2], f64)> = nodes.iter().map(|&k| (grid.xy(k), b.psi(k))).collect();
    let witnesses: Vec<BscWitness> = nodes
        .par_iter()
        .enumerate()
        .map(|(idx, &node)| {
            let (x0, psi0) = pts[idx];
            let search = |sign: f64| -> Option<[f64; 2]> {
                let mut poly = ConvexPolygon::square([0.0, 0.0], q);
                for (jdx, &(x, psi)) in pts.iter().enumerate() {
                    if jdx == idx {
                        continue;
                    }
                    let d = [x[0] - x0[0], x[1] - x0[1]];
                    let rhs = psi - psi0 + sign * slack;
                    // lower: <p,d> <= rhs ; upper: <p,d> >= rhs
                    if sign > 0.0 {
                        poly.clip([-d[0], -d[1]], -rhs);
                    } else {
                        poly.clip(d, rhs);
                    }
                    if poly.is_empty() {
                        return None;
                    }
                }
                let p = poly.closest_point([0.0, 0.0])?;
                (norm(p) <= q * (1.0 + 1e-12) + 1e-14).then_some(p)
            };
            BscWitness { node, lower: search(1.0), upper: search(-1.0) }
        })
        .collect();
    let ok = witnesses.iter().all(|w| w.lower.is_some() && w.upper.is_some());
    Ok(BscReport { ok, slack, witnesses })
}

/// Nodal values on a grid; exterior entries are `NaN`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid2D>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid2D>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridPrecondition(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        for (k, v) in values.iter_mut().enumerate() {
            if grid.is_active(k) {
                if !v.is_finite() {
                    return Err(Error::GridPrecondition(format!("field not finite at node {k}")));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid2D>, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| if grid.is_active(k) { let [x, y] = grid.xy(k); f(x, y) } else { f64::NAN })
            .collect();
        Self::new(grid, values)
    }

    /// Fallible sampling, e.g. of an evaluator with a restricted domain.
    pub fn try_from_fn(grid: Arc<Grid2D>, f: impl Fn(f64, f64) -> Result<f64> + Sync) -> Result<Self> {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| if grid.is_active(k) { let [x, y] = grid.xy(k); f(x, y) } else { Ok(f64::NAN) })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Exact per-triangle gradients of the piecewise-linear interpolant.
    pub fn cell_gradients(&self) -> Vec<[f64; 2]> {
        let h = self.grid.h();
        self.grid.triangles().par_iter().map(|t| t.gradient(&self.values, h)).collect()
    }

    /// Bilinear interpolation at `p`; `None` outside the active squares.
    pub fn sample(&self, p: [f64; 2]) -> Option<f64> {
        let g = &self.grid;
        let s = (p[0] - g.origin[0]) / g.h;
        let t = (p[1] - g.origin[1]) / g.h;
        if s < 0.0 || t < 0.0 {
            return None;
        }
        let i = (s.floor() as usize).min(g.nx.saturating_sub(2));
        let j = (t.floor() as usize).min(g.ny.saturating_sub(2));
        if s > (g.nx - 1) as f64 || t > (g.ny - 1) as f64 {
            return None;
        }
        let (fs, ft) = (s - i as f64, t - j as f64);
        let k = g.index(i, j);
        let corners = [k, k + 1, k + g.nx, k + g.nx + 1];
        if corners.iter().any(|&m| !g.is_active(m)) {
            return None;
        }
        let v = &self.values;
        Some(
            v[k] * (1.0 - fs) * (1.0 - ft)
                + v[k + 1] * fs * (1.0 - ft)
                + v[k + g.nx] * (1.0 - fs) * ft
                + v[k + g.nx + 1] * fs * ft,
        )
    }

    /// Writes `x,y,value` rows (all nodes, row-major) and the JSON grid sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "x,y,value")?;
        for k in 0..self.grid.len() {
            let [x, y] = self.grid.xy(k);
            writeln!(out, "{:.16e},{:.16e},{:.16e}", x, y, self.values[k])?;
        }
        out.flush()?;
        let sidecar = serde_json::to_string_pretty(&self.grid.describe())?;
        fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    /// Reads a field written by [`ScalarField::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let desc: GridDescription = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let grid = Arc::new(Grid2D::from_description(&desc)?);
        Self::read_csv_on(path, grid)
    }

    /// Reads field values onto an existing grid.
    pub fn read_csv_on(path: &Path, grid: Arc<Grid2D>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(header)) if header.trim() == "x,y,value" => {}
            _ => return Err(Error::FieldFormat("missing `x,y,value` header".into())),
        }
        let mut values = Vec::with_capacity(grid.len());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::FieldFormat(format!("row {row}: expected 3 columns")));
            }
            let v: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::FieldFormat(format!("row {row}: bad value `{}`", cols[2])))?;
            values.push(v);
        }
        if values.len() != grid.len() {
            return Err(Error::FieldFormat(format!("{} rows for {} nodes", values.len(), grid.len())));
        }
        Self::new(grid, values)
    }
}

/// `u.csv` -> `u.grid.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("grid.json")
}

/// Nodal vector field; `NaN` where undefined.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VectorField {
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.vx[k], self.vy[k]]
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        self.vx[k].hypot(self.vy[k])
    }
}

/// One derivative along an axis: central where both neighbors exist,
/// otherwise a one-sided second-order stencil, otherwise first order.
fn axis_derivative(f: &ScalarField, k: usize, di: i64, dj: i64) -> f64 {
    let g = f.grid();
    let h = g.h();
    let v = f.values();
    let active = |m: Option<usize>| m.filter(|&m| g.is_active(m));
    let plus = active(g.offset(k, di, dj));
    let minus = active(g.offset(k, -di, -dj));
    match (minus, plus) {
        (Some(m), Some(p)) => (v[p] - v[m]) / (2.0 * h),
        (None, Some(p)) => match active(g.offset(k, 2 * di, 2 * dj)) {
            Some(p2) => (-3.0 * v[k] + 4.0 * v[p] - v[p2]) / (2.0 * h),
            None => (v[p] - v[k]) / h,
        },
        (Some(m), None) => match active(g.offset(k, -2 * di, -2 * dj)) {
            Some(m2) => (3.0 * v[k] - 4.0 * v[m] + v[m2]) / (2.0 * h),
            None => (v[k] - v[m]) / h,
        },
        (None, None) => f64::NAN,
    }
}

/// Nodal gradient by finite differences.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid();
    let (vx, vy): (Vec<f64>, Vec<f64>) = (0..g.len())
        .into_par_iter()
        .map(|k| {
            if g.is_active(k) {
                (axis_derivative(f, k, 1, 0), axis_derivative(f, k, 0, 1))
            } else {
                (f64::NAN, f64::NAN)
            }
        })
        .unzip();
    VectorField { vx, vy }
}

/// Hessian at node `k`, if its 3x3 neighborhood is active.
pub fn hessian_at(f: &ScalarField, k: usize) -> Option<Sym2> {
    let g = f.grid();
    let v = f.values();
    let mut nb = [[0.0; 3]; 3];
    for (a, dj) in (-1..=1).enumerate() {
        for (b, di) in (-1..=1).enumerate() {
            let m = g.offset(k, di, dj).filter(|&m| g.is_active(m))?;
            nb[a][b] = v[m];
        }
    }
    let h2 = g.h() * g.h();
    let c = nb[1][1];
    Some(Sym2::new(
        (nb[1][2] - 2.0 * c + nb[1][0]) / h2,
        (nb[2][2] - nb[0][2] - nb[2][0] + nb[0][0]) / (4.0 * h2),
        (nb[2][1] - 2.0 * c + nb[0][1]) / h2,
    ))
}

/// Nodal Hessians; `None` marks nodes without a full neighborhood.
pub fn hessian(f: &ScalarField) -> Vec<Option<Sym2>> {
    (0..f.grid().len()).into_par_iter().map(|k| hessian_at(f, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rle_roundtrip() {
        let g = build_disk(0.9, 0.1).unwrap();
        let back = Grid2D::from_description(&g.describe()).unwrap();
        assert_eq!(back.kinds(), g.kinds());
        assert_eq!(back.triangles().len(), g.triangles().len());
    }

    #[test]
    fn triangle_gradients_are_exact_on_affine() {
        let g = Arc::new(build_rect(1.0, 1.0, 0.125).unwrap());
        let u = ScalarField::from_fn(g.clone(), |x, y| 2.0 * x - 3.0 * y + 1.0).unwrap();
        for p in u.cell_gradients() {
            assert_abs_diff_eq!(p[0], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], -3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hat_gradients_match_triangle_gradient() {
        let g = build_rect(1.0, 1.0, 0.125).unwrap();
        let h = g.h();
        for t in g.triangles().iter().take(4) {
            for loc in 0..3 {
                let mut vals = vec![0.0; g.len()];
                vals[t.nodes[loc]] = 1.0;
                let grad = t.gradient(&vals, h);
                let hat = t.hat_gradient(loc);
                assert_abs_diff_eq!(grad[0], hat[0] / h, epsilon = 1e-12);
                assert_abs_diff_eq!(grad[1], hat[1] / h, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_sample_is_exact_on_bilinear() {
        let g = Arc::new(build_rect(1.0, 1.0, 0.1).unwrap());
        let u = ScalarField::from_fn(g, |x, y| 1.0 + x - 2.0 * y + 3.0 * x * y).unwrap();
        let p = [0.123, -0.271];
        assert_abs_diff_eq!(u.sample(p).unwrap(), 1.0 + p[0] - 2.0 * p[1] + 3.0 * p[0] * p[1], epsilon = 1e-12);
        assert!(u.sample([5.0, 0.0]).is_none());
    }
}
