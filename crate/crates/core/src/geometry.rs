//! Convex polygons cut by half-planes, used for slope feasibility problems.

use crate::numeric::{dot, norm};

/// A convex polygon stored as counterclockwise vertices.
#[derive(Debug, Clone)]
pub struct ConvexPolygon {
    verts: Vec<[f64; 2]>,
}

impl ConvexPolygon {
    /// Axis-aligned square `center ± half`.
    pub fn square(center: [f64; 2], half: f64) -> Self {
        let [cx, cy] = center;
        Self {
            verts: vec![
                [cx - half, cy - half],
                [cx + half, cy - half],
                [cx + half, cy + half],
                [cx - half, cy + half],
            ],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.verts
    }

    /// Keeps the part where `<a, p> >= c`.
    pub fn clip(&mut self, a: [f64; 2], c: f64) {
        if self.verts.is_empty() {
            return;
        }
        let n = self.verts.len();
        let mut out = Vec::with_capacity(n + 1);
        for k in 0..n {
            let p = self.verts[k];
            let q = self.verts[(k + 1) % n];
            let sp = dot(a, p) - c;
            let sq = dot(a, q) - c;
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        self.verts = out;
    }

    /// Point of the polygon closest to `target` (the polygon is assumed nonempty).
    pub fn closest_point(&self, target: [f64; 2]) -> Option<[f64; 2]> {
        match self.verts.len() {
            0 => None,
            1 => Some(self.verts[0]),
            n => {
                if self.contains(target) {
                    return Some(target);
                }
                let mut best = self.verts[0];
                let mut best_d = f64::INFINITY;
                for k in 0..n {
                    let p = self.verts[k];
                    let q = self.verts[(k + 1) % n];
                    let cand = project_segment(target, p, q);
                    let d = norm([cand[0] - target[0], cand[1] - target[1]]);
                    if d < best_d {
                        best_d = d;
                        best = cand;
                    }
                }
                Some(best)
            }
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.verts.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|k| {
            let a = self.verts[k];
            let b = self.verts[(k + 1) % n];
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        })
    }
}

fn project_segment(x: [f64; 2], p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    let d = [q[0] - p[0], q[1] - p[1]];
    let len2 = dot(d, d);
    if len2 == 0.0 {
        return p;
    }
    let t = (dot([x[0] - p[0], x[1] - p[1]], d) / len2).clamp(0.0, 1.0);
    [p[0] + t * d[0], p[1] + t * d[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_to_triangle_and_project() {
        let mut poly = ConvexPolygon::square([0.0, 0.0], 2.0);
        poly.clip([1.0, 0.0], 1.0); // x >= 1
        poly.clip([0.0, 1.0], 0.5); // y >= 0.5
        let p = poly.closest_point([0.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
        poly.clip([-1.0, 0.0], -0.5); // x <= 0.5: empty
        assert!(poly.is_empty());
    }

    #[test]
    fn interior_target_is_returned() {
        let poly = ConvexPolygon::square([1.0, 1.0], 1.0);
        assert_eq!(poly.closest_point([1.2, 0.7]), Some([1.2, 0.7]));
    }
}
