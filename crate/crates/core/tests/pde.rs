use std::sync::Arc;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varcrit::grid::{build_disk, build_rect, ScalarField};
use varcrit::lagrangian::{make_case_study, make_family, FamilyParams};
use varcrit::numeric::Sym2;
use varcrit::pde::{
    form_registry, general_m_residual, infinity_harmonic_region, make_form, max_residual, probe_campaign, residual,
    touching_quadratic, viscosity_probe, FormParams, IdentityMap, ProbeConfig, Quadratic, RadialFlux, Side,
};
use varcrit::reference::remark_solution;
use varcrit::Error;

fn params() -> FormParams {
    FormParams::case_study("a", 8, 1.0)
}

#[test]
fn every_form_vanishes_on_affine_fields() {
    let g = Arc::new(build_disk(0.9, 1.0 / 16.0).unwrap());
    let w = ScalarField::from_fn(g, |x, y| 0.4 * x - 0.9 * y + 0.2).unwrap();
    let reg = form_registry();
    for name in reg.names() {
        let form = make_form(name, &params()).unwrap();
        let res = residual(form.as_ref(), &w).unwrap();
        assert!(max_residual(&res, |_| true) < 1e-10, "{name}");
    }
    assert!(matches!(make_form("heat", &params()), Err(Error::UnknownForm(_))));
}

#[test]
fn identity_flux_is_the_scaled_laplacian() {
    let g = Arc::new(build_rect(1.0, 1.0, 1.0 / 16.0).unwrap());
    let harmonic = ScalarField::from_fn(g.clone(), |x, y| x * x - y * y + x * y).unwrap();
    let res = general_m_residual(Arc::new(IdentityMap), &harmonic).unwrap();
    assert!(max_residual(&res, |_| true) < 1e-9);

    let bowl = ScalarField::from_fn(g.clone(), |x, y| x * x + y * y + 0.5 * x).unwrap();
    let res = general_m_residual(Arc::new(IdentityMap), &bowl).unwrap();
    for &k in g.interior_nodes() {
        let Some(r) = res[k] else { continue };
        let [x, y] = g.xy(k);
        let rho2 = (2.0 * x + 0.5).powi(2) + (2.0 * y).powi(2);
        assert_abs_diff_eq!(r, -rho2 * 4.0, epsilon = 1e-8);
    }
}

#[test]
fn smoothed_flux_matches_approx_form() {
    let g = Arc::new(build_disk(0.9, 1.0 / 32.0).unwrap());
    let w = remark_solution(0.9).unwrap().sample(g.clone()).unwrap();
    let l = make_family("a", &FamilyParams::case_study(8, 1.0)).unwrap();
    let m = general_m_residual(Arc::new(RadialFlux(l)), &w).unwrap();
    let a = residual(make_form("approx_u", &params()).unwrap().as_ref(), &w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let interior = g.interior_nodes();
    let mut checked = 0;
    while checked < 100 {
        let k = interior[rng.gen_range(0..interior.len())];
        if let (Some(x), Some(y)) = (m[k], a[k]) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8 * (1.0 + y.abs()));
            checked += 1;
        }
    }
}

#[test]
fn case_study_residual_shrinks_away_from_the_segment() {
    let mut worst = Vec::new();
    for inv in [32.0, 64.0, 128.0] {
        let g = Arc::new(build_disk(0.9, 1.0 / inv).unwrap());
        let w = remark_solution(0.9).unwrap().sample(g.clone()).unwrap();
        let form = make_form("case_study_u", &params()).unwrap();
        let res = residual(form.as_ref(), &w).unwrap();
        let grads = varcrit::grid::gradient(&w);
        worst.push(max_residual(&res, |k| grads.magnitude(k) > 0.1));
    }
    assert!(worst[1] < worst[0] && worst[2] < worst[1], "{worst:?}");
}

#[test]
fn infinity_harmonic_region_examples() {
    let g = Arc::new(build_disk(0.9, 1.0 / 16.0).unwrap());
    let l = make_case_study();
    let slow = ScalarField::from_fn(g.clone(), |x, y| 0.3 * x + 0.4 * y).unwrap();
    assert_eq!(infinity_harmonic_region(&slow, l.as_ref()).len(), g.interior_nodes().len());
    let steep = ScalarField::from_fn(g.clone(), |x, _| 2.0 * x).unwrap();
    assert!(infinity_harmonic_region(&steep, l.as_ref()).is_empty());
}

#[test]
fn probe_on_exact_quadratic() {
    let g = Arc::new(build_rect(1.0, 1.0, 1.0 / 16.0).unwrap());
    let w = ScalarField::from_fn(g.clone(), |x, y| 0.5 * x + 0.25 * y).unwrap();
    let node = g.nearest_node([0.0, 0.0]).unwrap();
    let phi = Quadratic { x0: g.xy(node), c: w.get(node), p: [0.5, 0.25], h: Sym2::new(0.0, 0.0, 0.0) };
    let form = make_form("case_study_u", &params()).unwrap();
    for side in [Side::Sub, Side::Super] {
        let v = viscosity_probe(&w, &phi, node, side, form.as_ref(), 0.0).unwrap();
        assert!(v.holds);
        assert_eq!(v.lhs, 0.0);
    }
    let lifted = Quadratic { c: phi.c + 1e-3, ..phi };
    assert!(matches!(viscosity_probe(&w, &lifted, node, Side::Sub, form.as_ref(), 0.0), Err(Error::NotTouching(_))));
    let tilted = Quadratic { p: [0.6, 0.25], ..phi };
    assert!(matches!(viscosity_probe(&w, &tilted, node, Side::Sub, form.as_ref(), 0.0), Err(Error::NotTouching(_))));
}

#[test]
fn constructed_quadratics_touch() {
    let g = Arc::new(build_disk(0.9, 1.0 / 32.0).unwrap());
    let w = remark_solution(0.9).unwrap().sample(g.clone()).unwrap();
    let form = make_form("case_study_u", &params()).unwrap();
    let node = g.nearest_node([0.3, 0.2]).unwrap();
    let h = varcrit::grid::hessian_at(&w, node).unwrap().add_identity(1.0);
    let phi = touching_quadratic(&w, node, Side::Sub, h, [0.0, 0.0]).unwrap().expect("a touching slope");
    assert!(viscosity_probe(&w, &phi, node, Side::Sub, form.as_ref(), 1e9).is_ok());
}

#[test]
fn probe_campaign_is_seeded() {
    let g = Arc::new(build_disk(0.9, 1.0 / 32.0).unwrap());
    let w = remark_solution(0.9).unwrap().sample(g).unwrap();
    let form = make_form("case_study_u", &params()).unwrap();
    let cfg = ProbeConfig { nodes: 6, trials: 40, seed: 17, slack: 10.0 / 32.0 };
    let a = probe_campaign(&w, form.as_ref(), &cfg).unwrap();
    let b = probe_campaign(&w, form.as_ref(), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.tested > 0);
    assert_eq!(a.tested + a.skipped, a.attempted);
}
