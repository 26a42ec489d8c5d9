//! Acceptance criteria 1-11. Runs as a plain binary (no libtest harness) so
//! the PASS/FAIL lines are always printed; exits non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varcrit::critical::{bernstein_check, branch_count, winding_index, LoopSpec};
use varcrit::grid::{build_disk, build_rect, gradient, ScalarField};
use varcrit::lagrangian::{
    alpha_of, approx_lagrangian, beta_limit, conjugate, make_case_study, ApproxFamily, Lagrangian, INVERSION_TOL,
};
use varcrit::pde::{make_form, probe_campaign, residual, max_residual, CaseStudyForm, FormParams, ProbeConfig};
use varcrit::pipeline::{execute, BoundarySpec, RunConfig, RunOutput};
use varcrit::reference::{morse_fields, remark_solution};
use varcrit::stream::{one_form, period};

// Tolerances and budgets, pinned.
const C1_INVERSE_TOL: f64 = 1e-9;
const C1_ZERO_TOL: f64 = 1e-12;
const C2_ALPHA_TOL: f64 = 1e-6;
const C2_INF_TOL: f64 = 1e-5;
const C3_GAP_N32: f64 = 1e-2;
/// Calibrated sup |f_32 - f| on [0, 2] (first run: 8.67e-19), frozen with headroom.
const C3_GAP_N32_REGRESSION: f64 = 1e-17;
const C4_BETA_TOL: f64 = 1e-2;
const C5_MIN_ORDER: f64 = 0.8;
const C6_DEFECT_FLOOR: f64 = -1e-10;
const C7_MEAN_TOL: f64 = 1e-12;
const C8_RADII: [f64; 2] = [0.25, 0.4];
const C9_MODES: u32 = 4;
const C9_AMPLITUDE: f64 = 0.5;
/// Optimizer iterations per schedule stage for the random-boundary runs.
const C9_STAGE_BUDGET: usize = 2000;
const C10_TRIALS: usize = 1000;
const C10_NODES: usize = 20;
/// Bernstein constant: calibrated at h = 1/32 (min slack -1.487 = -47.6 h), frozen.
const C11_C: f64 = 50.0;

const BUDGET_1: Duration = Duration::from_secs(1);
const BUDGET_2: Duration = Duration::from_secs(1);
const BUDGET_3: Duration = Duration::from_secs(5);
const BUDGET_4: Duration = Duration::from_secs(10);
const BUDGET_5: Duration = Duration::from_secs(300);
const BUDGET_7: Duration = Duration::from_secs(30);
const BUDGET_8: Duration = Duration::from_secs(10);
const BUDGET_9: Duration = Duration::from_secs(300);
const BUDGET_10: Duration = Duration::from_secs(120);

const REF_INV_H: [f64; 3] = [32.0, 64.0, 128.0];

// Independent closed forms for the case study f(ρ) = ½[ρ sqrt(1+ρ²) + asinh ρ].
fn oracle_f(rho: f64) -> f64 {
    0.5 * (rho * (1.0 + rho * rho).sqrt() + rho.asinh())
}
fn oracle_fp(rho: f64) -> f64 {
    (1.0 + rho * rho).sqrt()
}
fn oracle_gp(r: f64) -> f64 {
    if r <= 1.0 {
        0.0
    } else {
        (r * r - 1.0).sqrt()
    }
}

struct Line {
    id: u32,
    pass: bool,
    elapsed: Duration,
}

fn report(lines: &mut Vec<Line>, id: u32, pass: bool, detail: String, elapsed: Duration) {
    println!(
        "{} [{id:>2}] {detail} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    lines.push(Line { id, pass, elapsed });
}

fn orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn criterion_1() -> (bool, String) {
    let l = make_case_study();
    let conj = conjugate(l.clone(), 25.0, INVERSION_TOL).unwrap();
    let mut inv = 0.0f64;
    let mut vs_oracle = 0.0f64;
    for k in 0..1000 {
        let r = 1.001 + (20.0 - 1.001) * k as f64 / 999.0;
        let rho = conj.gp(r).unwrap();
        inv = inv.max((l.fp(rho) - r).abs());
        vs_oracle = vs_oracle.max((rho - oracle_gp(r)).abs() / (1.0 + oracle_gp(r)));
    }
    let mut zero = 0.0f64;
    for k in 0..=1000 {
        let r = k as f64 / 1000.0;
        zero = zero.max(conj.g(r).unwrap().abs()).max(conj.gp(r).unwrap().abs());
    }
    let pass = inv <= C1_INVERSE_TOL && zero <= C1_ZERO_TOL && vs_oracle <= C1_INVERSE_TOL;
    (pass, format!("conjugate identity: max|f'(g'(r)) - r| = {inv:.2e}, rel |g' - sqrt(r²-1)| = {vs_oracle:.2e}, max|g| on [0,1] = {zero:.1e}"))
}

fn criterion_2() -> (bool, String) {
    let l = make_case_study();
    let mut worst = 0.0f64;
    for k in 0..=600 {
        let rho = 10f64.powf(-3.0 + 6.0 * k as f64 / 600.0);
        let d = 1e-4 * rho;
        let fd = rho * (oracle_fp(rho + d) - oracle_fp(rho - d)) / (2.0 * d) / oracle_fp(rho);
        worst = worst.max((alpha_of(l.as_ref(), rho).unwrap() - fd).abs());
    }
    let a0 = alpha_of(l.as_ref(), 0.0).unwrap();
    let a_inf = alpha_of(l.as_ref(), 1e3).unwrap();
    let pass = worst <= C2_ALPHA_TOL && a0 == 0.0 && (a_inf - 1.0).abs() <= C2_INF_TOL;
    (pass, format!("alpha profile: max|alpha - FD| = {worst:.2e}, alpha(0) = {a0}, |alpha(1e3) - 1| = {:.1e}", (a_inf - 1.0).abs()))
}

/// `∫_0^1 (1 - ρ^{1/n})^n f'(ρ) dρ` after the substitution `ρ = t^n`, by
/// composite 5-point Gauss-Legendre on 2000 panels.
fn oracle_gap_a(n: u32) -> f64 {
    let nodes = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189),
        (-0.538_469_310_105_683, 0.478_628_670_499_366),
        (0.0, 0.568_888_888_888_889),
        (0.538_469_310_105_683, 0.478_628_670_499_366),
        (0.906_179_845_938_664, 0.236_926_885_056_189),
    ];
    let panels = 2000;
    let w = 1.0 / panels as f64;
    let nf = n as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * w;
        for (x, wt) in nodes {
            let t: f64 = mid + 0.5 * w * x;
            acc += 0.5 * w * wt * (1.0 - t).powi(n as i32) * oracle_fp(t.powi(n as i32)) * nf * t.powf(nf - 1.0);
        }
    }
    acc
}

fn criterion_3() -> (bool, String) {
    let base = make_case_study();
    let sched = [2u32, 4, 8, 16, 32];
    let mut gaps = Vec::new();
    let mut alpha_gaps = Vec::new();
    let mut oracle_dev = 0.0f64;
    for &n in &sched {
        let ln = approx_lagrangian(base.clone(), ApproxFamily::a(n).unwrap());
        let (mut g, mut a) = (0.0f64, 0.0f64);
        for k in 0..=2000 {
            let rho = 2.0 * k as f64 / 2000.0;
            g = g.max((ln.f(rho) - oracle_f(rho)).abs());
            a = a.max((alpha_of(&ln, rho).unwrap() - rho * rho / (1.0 + rho * rho)).abs());
        }
        oracle_dev = oracle_dev.max((g - oracle_gap_a(n)).abs());
        gaps.push(g);
        alpha_gaps.push(a);
    }
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let last = *gaps.last().unwrap();
    let pass = dec(&gaps) && dec(&alpha_gaps) && last < C3_GAP_N32 && last <= C3_GAP_N32_REGRESSION && oracle_dev < 1e-9;
    (
        pass,
        format!(
            "approximation families: sup|f_n - f| = {:?}, sup|alpha_n - alpha| = {:?}, |gap - quadrature oracle| = {oracle_dev:.1e}",
            gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>(),
            alpha_gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_4() -> (bool, String) {
    let base = make_case_study();
    let ln: Arc<dyn Lagrangian> = Arc::new(approx_lagrangian(base.clone(), ApproxFamily::b(1 << 10, 1.0).unwrap()));
    let conj_n = conjugate(ln.clone(), 10.0, INVERSION_TOL).unwrap();
    let conj = conjugate(base.clone(), 10.0, INVERSION_TOL).unwrap();
    let mut worst = 0.0f64;
    let mut oracle = 0.0f64;
    for k in 1..=9 {
        let r = k as f64 / 10.0;
        let a = alpha_of(ln.as_ref(), conj_n.gp(r).unwrap()).unwrap();
        let b = beta_limit(base.as_ref(), &conj, 1.0, r).unwrap();
        // direct formula: -(1 - r)/r log(1 - r)
        oracle = oracle.max((b - (-(1.0 - r) / r * (1.0 - r).ln())).abs());
        worst = worst.max((a - b).abs());
    }
    (worst <= C4_BETA_TOL && oracle < 1e-12, format!("beta limit (family b, s=1, n=1024): max|alpha_n(g_n') - beta| = {worst:.2e}, |beta - closed form| = {oracle:.1e}"))
}

struct RefRun {
    h: f64,
    out: RunOutput,
    error: f64,
    residual: f64,
    elapsed: Duration,
}

fn reference_runs() -> Vec<RefRun> {
    REF_INV_H
        .iter()
        .map(|&inv| {
            let h = 1.0 / inv;
            let t0 = Instant::now();
            let out = execute(&RunConfig::reference(h)).expect("reference run");
            let exact = remark_solution(0.9).unwrap().sample(out.u.grid().clone()).unwrap();
            let error = out
                .u
                .values()
                .iter()
                .zip(exact.values())
                .filter(|(a, _)| a.is_finite())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let res = residual(&CaseStudyForm, &out.u).unwrap();
            let g = gradient(&out.u);
            let residual = max_residual(&res, |k| g.magnitude(k) > 0.1);
            RefRun { h, out, error, residual, elapsed: t0.elapsed() }
        })
        .collect()
}

fn criterion_5(runs: &[RefRun]) -> (bool, String, Duration) {
    let errs: Vec<f64> = runs.iter().map(|r| r.error).collect();
    let res: Vec<f64> = runs.iter().map(|r| r.residual).collect();
    let (oe, or) = (orders(&errs), orders(&res));
    let converged = runs.iter().all(|r| r.out.report.status != "non_convergence");
    let total: Duration = runs.iter().map(|r| r.elapsed).sum();
    let pass = converged
        && oe.iter().all(|&o| o >= C5_MIN_ORDER)
        && or.iter().all(|&o| o >= C5_MIN_ORDER)
        && total <= BUDGET_5;
    (
        pass,
        format!(
            "reference reproduction h=1/32,1/64,1/128: sup error {:?} (orders {:?}); CASE_STUDY_U residual {:?} (orders {:?})",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            oe.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>(),
            res.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>(),
            or.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ),
        total,
    )
}

fn criterion_6(runs: &[RefRun]) -> (bool, String) {
    let f: Vec<f64> = runs.iter().map(|r| r.out.report.per_n.last().unwrap().f_value.unwrap().abs()).collect();
    let min_defect = runs
        .iter()
        .flat_map(|r| r.out.report.per_n.iter().filter_map(|s| s.min_defect))
        .fold(f64::INFINITY, f64::min);
    let pass = f.windows(2).all(|w| w[1] < w[0]) && min_defect >= C6_DEFECT_FLOOR;
    (pass, format!("coupling functional |F_32| = {:?}, min per-cell defect = {min_defect:.2e}", f.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()))
}

fn criterion_7(runs: &[RefRun]) -> (bool, String, Duration) {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut slowest = Duration::ZERO;
    let l32: Arc<dyn Lagrangian> = Arc::new(approx_lagrangian(make_case_study(), ApproxFamily::a(32).unwrap()));
    for run in runs {
        let t0 = Instant::now();
        let h = run.h;
        let last = run.out.report.per_n.last().unwrap();
        let mismatch = last.median_gradient_mismatch.unwrap();
        let mean = last.mean_v.unwrap();
        let w = one_form(l32.as_ref(), &run.out.u).unwrap();
        let grid = run.out.u.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst_ratio = 0.0f64;
        let mut loops = 0;
        while loops < 5 {
            let c: [f64; 2] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let r = rng.gen_range(0.1..0.3);
            if c[0].hypot(c[1]) + r > 0.8 {
                continue;
            }
            let lp = LoopSpec::circle(grid, c, r).unwrap();
            let length = lp.nodes.len() as f64 * h;
            let p = period(&w, &lp.nodes).unwrap();
            worst_ratio = worst_ratio.max(p.abs() / (10.0 * h * length));
            loops += 1;
        }
        let ok = mismatch <= 10.0 * h && mean.abs() <= C7_MEAN_TOL && worst_ratio <= 1.0;
        pass &= ok;
        slowest = slowest.max(t0.elapsed());
        parts.push(format!("h=1/{}: mismatch {mismatch:.2e}, mean {mean:.0e}, period/(10 h L) {worst_ratio:.1e}", (1.0 / h).round()));
    }
    pass &= slowest <= BUDGET_7;
    (pass, format!("stream identities: {}", parts.join("; ")), slowest)
}

fn criterion_8() -> (bool, String) {
    let h = 1.0 / 128.0;
    let g = Arc::new(build_rect(1.0, 1.0, h).unwrap());
    let mut pass = true;
    let mut parts = Vec::new();
    for m in morse_fields() {
        let u = ScalarField::from_fn(g.clone(), m.eval).unwrap();
        let idx: Vec<i32> = C8_RADII
            .iter()
            .map(|&r| winding_index(&u, &LoopSpec::circle(&g, [0.0, 0.0], r).unwrap()).unwrap().index)
            .collect();
        let l = branch_count(&u, [0.0, 0.0], 0.25, h * h).unwrap().count as i32;
        let ok = idx.iter().all(|&i| i == m.expected_index) && 1 - l == m.expected_index;
        pass &= ok;
        parts.push(format!("{} {:?} L={l}", m.name, idx));
    }
    (pass, format!("index machinery: {}", parts.join(", ")))
}

fn no_isolated(out: &RunOutput) -> (bool, String) {
    let Some(fd) = &out.report.final_diagnostics else { return (false, "no diagnostics".into()) };
    let c = &fd.critical;
    let defined: Vec<i32> = c
        .component_indices
        .iter()
        .filter_map(|ci| ci.index)
        .chain(c.analyses.iter().filter_map(|a| a.index))
        .collect();
    let ok = c.isolated.is_empty() && defined.iter().all(|&i| i == 0);
    (ok, format!("{} comps, {} isolated, indices {:?}", c.components.len(), c.isolated.len(), defined))
}

fn criterion_9(runs: &[RefRun]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in &runs[1..] {
        let (ok, d) = no_isolated(&run.out);
        pass &= ok;
        parts.push(format!("ref h=1/{}: {d}", (1.0 / run.h).round()));
    }
    for seed in 1..=3u64 {
        for inv in [32.0, 64.0] {
            let mut cfg = RunConfig::reference(1.0 / inv);
            cfg.boundary = BoundarySpec::RandomFourier { modes: C9_MODES, amplitude: C9_AMPLITUDE };
            cfg.seed = seed;
            cfg.max_iter = C9_STAGE_BUDGET;
            cfg.continue_on_stall = true;
            let out = execute(&cfg).expect("random run");
            let (ok, d) = no_isolated(&out);
            let ok = ok && out.report.bsc.ok;
            pass &= ok;
            let last = out.report.per_n.last().expect("stages");
            parts.push(format!("seed {seed} h=1/{inv}: {d}, n={} residual {:.1e}", last.n, last.el_residual));
        }
    }
    (pass, format!("no isolated critical points: {}", parts.join("; ")))
}

fn criterion_10(runs: &[RefRun]) -> (bool, String) {
    let run = &runs[1];
    let form = make_form("approx_u", &FormParams::case_study("a", 32, 1.0)).unwrap();
    let cfg = ProbeConfig { nodes: C10_NODES, trials: C10_TRIALS, seed: 2024, slack: 10.0 * run.h };
    let rep = probe_campaign(&run.out.u, form.as_ref(), &cfg).unwrap();
    (
        rep.passed(),
        format!(
            "viscosity probe (h=1/64, n=32): {} tested, {} without touching slope, {} failures, worst excess {:.2e} vs slack {:.2e}",
            rep.tested,
            rep.skipped,
            rep.failures.len(),
            rep.worst,
            cfg.slack
        ),
    )
}

fn criterion_11() -> (bool, String) {
    let l = make_case_study();
    let mut scaled = Vec::new();
    for inv in REF_INV_H {
        let g = Arc::new(build_disk(0.9, 1.0 / inv).unwrap());
        let u = remark_solution(0.9).unwrap().sample(g).unwrap();
        let rep = bernstein_check(l.as_ref(), &u, 0.1).unwrap();
        scaled.push(rep.min_slack.unwrap() * inv);
    }
    let pass = scaled.iter().all(|&s| s >= -C11_C) && scaled.windows(2).all(|w| w[1] >= w[0]);
    (pass, format!("Bernstein slack: min slack / h = {:?} vs -C = {}", scaled.iter().map(|s| format!("{s:.1}")).collect::<Vec<_>>(), -C11_C))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lines = Vec::new();
    let ((p, d), t) = timed(criterion_1);
    report(&mut lines, 1, p && t <= BUDGET_1, d, t);
    let ((p, d), t) = timed(criterion_2);
    report(&mut lines, 2, p && t <= BUDGET_2, d, t);
    let ((p, d), t) = timed(criterion_3);
    report(&mut lines, 3, p && t <= BUDGET_3, d, t);
    let ((p, d), t) = timed(criterion_4);
    report(&mut lines, 4, p && t <= BUDGET_4, d, t);

    let runs = reference_runs();
    let (p, d, t) = criterion_5(&runs);
    report(&mut lines, 5, p, d, t);
    let ((p, d), t) = timed(|| criterion_6(&runs));
    report(&mut lines, 6, p, d, t);
    let (p, d, t) = criterion_7(&runs);
    report(&mut lines, 7, p, d, t);
    let ((p, d), t) = timed(criterion_8);
    report(&mut lines, 8, p && t <= BUDGET_8, d, t);
    let ((p, d), t) = timed(|| criterion_9(&runs));
    report(&mut lines, 9, p && t <= BUDGET_9, d, t);
    let ((p, d), t) = timed(|| criterion_10(&runs));
    report(&mut lines, 10, p && t <= BUDGET_10, d, t);
    let ((p, d), t) = timed(criterion_11);
    report(&mut lines, 11, p, d, t);

    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    let total: Duration = lines.iter().map(|l| l.elapsed).sum();
    println!("acceptance: {}/{} criteria passed ({:.1} s)", lines.len() - failed.len(), lines.len(), total.as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
