use std::sync::Arc;

use approx::assert_abs_diff_eq;
use varcrit::grid::build_disk;
use varcrit::reference::{morse_fields, remark_solution};

#[test]
fn closed_form_on_the_axes() {
    let u = remark_solution(0.9).unwrap();
    assert_eq!(u.eval(0.0, 0.0).unwrap(), 0.0);
    for y in [-0.85, -0.2, 0.6] {
        assert_eq!(u.eval(0.0, y).unwrap(), 0.0);
        assert_eq!(u.grad(0.0, y).unwrap(), [0.0, 0.0]);
    }
    for x in [0.05, 0.4, 0.8] {
        assert_abs_diff_eq!(u.eval(x, 0.0).unwrap(), 1.0 - (1.0 - x * x).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(u.eval(-x, 0.0).unwrap(), -(1.0 - (1.0 - x * x).sqrt()), epsilon = 1e-15);
    }
}

#[test]
fn analytic_gradient_matches_differences() {
    let u = remark_solution(0.9).unwrap();
    let d = 1e-6;
    for &(x, y) in &[(0.3, 0.2), (-0.5, 0.4), (0.1, -0.7), (0.6, 0.0)] {
        let g = u.grad(x, y).unwrap();
        let fx = (u.eval(x + d, y).unwrap() - u.eval(x - d, y).unwrap()) / (2.0 * d);
        let fy = (u.eval(x, y + d).unwrap() - u.eval(x, y - d).unwrap()) / (2.0 * d);
        assert_abs_diff_eq!(g[0], fx, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], fy, epsilon = 1e-8);
    }
}

#[test]
fn sampled_field_has_the_grid_of_the_disk() {
    let g = Arc::new(build_disk(0.9, 1.0 / 16.0).unwrap());
    let f = remark_solution(0.9).unwrap().sample(g.clone()).unwrap();
    for &k in g.interior_nodes() {
        assert!(f.get(k).is_finite());
    }
}

#[test]
fn morse_gradients_are_consistent() {
    let d = 1e-6;
    for m in morse_fields() {
        for &(x, y) in &[(0.3, -0.1), (-0.2, 0.25)] {
            let g = (m.grad)(x, y);
            let fx = ((m.eval)(x + d, y) - (m.eval)(x - d, y)) / (2.0 * d);
            let fy = ((m.eval)(x, y + d) - (m.eval)(x, y - d)) / (2.0 * d);
            assert_abs_diff_eq!(g[0], fx, epsilon = 1e-8);
            assert_abs_diff_eq!(g[1], fy, epsilon = 1e-8);
        }
        assert_eq!((m.grad)(0.0, 0.0), [0.0, 0.0], "{}", m.name);
    }
}
