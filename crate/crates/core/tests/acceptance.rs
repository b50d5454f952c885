//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured numbers (run with --nocapture to see them). Tolerances are
//! pinned here, not configurable.

use waveobs::carleman::{check_identity, PsiField};
use waveobs::coeff::CoefficientField;
use waveobs::elliptic::assemble_elliptic;
use waveobs::geometry::{
    build_neighborhoods, build_observation_region, build_shifted_regions, compute_gamma0,
    compute_times, compute_times_shifted,
};
use waveobs::grid::Grid;
use waveobs::pipeline::{
    k_region_mu_min, prepare_geometry, run_energy, run_identity, run_observe, run_regions,
    run_sweep, test_function_panel,
};
use waveobs::region::Axis;
use waveobs::scenario::{Scenario, TimeSpec};
use waveobs::wave::{interval_mode, simulate_wave, LowerOrderTerms};
use waveobs::weight::{check_condition2, WeightField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn reference(space: usize) -> Scenario {
    let mut sc = Scenario::reference_1d();
    sc.resolution.space = space;
    sc
}

/// 1. Pointwise identity: max relative residual <= 1e-6 over 1000 random
/// points x 3 test-function families x {n=1, n=2}, h = I and h = diag(2,3),
/// within one minute.
#[test]
fn criterion_01_identity_residual() {
    let start = Instant::now();
    let weights = [
        WeightField::paraboloid([-0.1, 0.0]),
        WeightField::paraboloid([-0.2, -0.3]),
    ];
    let coeffs = [
        CoefficientField::Identity,
        CoefficientField::Diagonal { values: [2.0, 3.0] },
    ];
    let t_horizon = 2.0;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce97);
    for dim in [1usize, 2] {
        let d = &weights[dim - 1];
        for h in &coeffs {
            for (name, u) in test_function_panel(17 + dim as u64, dim) {
                if name == "zero" {
                    continue; // the three substantive families
                }
                let lambda = rng.gen_range(0.5..25.0);
                let alpha = rng.gen_range(0.6..0.999);
                let psi = PsiField::Step3 { lambda, alpha };
                for _ in 0..1000 {
                    let t = rng.gen_range(0.0..t_horizon);
                    let s = rng.gen_range(0.0..t_horizon);
                    let x = [
                        rng.gen_range(0.0..1.0),
                        if dim == 2 { rng.gen_range(0.0..1.0) } else { 0.0 },
                    ];
                    let (_, rep) = check_identity(
                        &u, t, s, x, lambda, alpha, t_horizon, d, h, &psi, dim,
                    )
                    .unwrap();
                    worst = worst.max(rep.relative);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(worst <= 1e-6, "max relative residual {worst}");
    assert!(elapsed.as_secs() < 60, "identity sweep took {elapsed:?}");
    println!(
        "criterion 1 PASS: max relative identity residual {worst:.3e} over 12000 points in {elapsed:?}"
    );
}

/// 2. Pseudoconvexity certification reproduces mu0 = 4 +- 1e-6 for the flat
/// paraboloid, and the observed boundary portion matches the sign formula
/// (x - x0) . nu > 0 node-exactly.
#[test]
fn criterion_02_mu0_and_gamma0() {
    let h = CoefficientField::Identity;

    let g1 = Grid::interval(0.0, 1.0, 201);
    let d1 = WeightField::paraboloid([-0.1, 0.0]);
    let rep = waveobs::weight::check_condition1(&h, &d1, &g1).unwrap();
    assert!((rep.mu0 - 4.0).abs() <= 1e-6, "mu0 = {}", rep.mu0);

    let g2 = Grid::rectangle([0.0, 0.0], [1.0, 1.0], [41, 41]);
    let x0 = [-0.35, 0.55];
    let d2 = WeightField::paraboloid(x0);
    let rep2 = waveobs::weight::check_condition1(&h, &d2, &g2).unwrap();
    assert!((rep2.mu0 - 4.0).abs() <= 1e-6, "mu0 = {}", rep2.mu0);
    for (g, d, x0) in [(&g1, &d1, [-0.1, 0.0]), (&g2, &d2, x0)] {
        let got = compute_gamma0(&h, d, g);
        let expect: Vec<usize> = g
            .boundary
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                (b.pos[0] - x0[0]) * b.normal[0] + (b.pos[1] - x0[1]) * b.normal[1] > 0.0
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, expect, "boundary portion differs from the sign formula");
    }
    println!("criterion 2 PASS: mu0 = 4 within 1e-6 and node-exact boundary portion, n = 1 and 2");
}

/// 3. Parameter selection succeeds on the reference scenario and the
/// inclusion chain holds with zero violating nodes at 200 x 200 x 200.
#[test]
fn criterion_03_parameter_selection_chain() {
    let rep = run_regions(&reference(200), None).unwrap();
    let params = rep.params.expect("parameters must be selected");
    let chain = rep.chain.expect("chain must be checked");
    let violations: usize = chain.links.iter().map(|l| l.violations).sum();
    assert!(chain.ok(), "chain violations: {violations}");
    assert!(params.alpha > 1.0 - 2.0 * params.c * params.c / (params.t_horizon * params.t_horizon));
    assert!(params.alpha < 1.0);
    println!(
        "criterion 3 PASS: selection ok (c = {:.4}, alpha = {:.6}), chain zero violations at 200^3",
        params.c, params.alpha
    );
}

/// 4. A finite spectral threshold lambda0 <= 100 exists on the sweep grid
/// for the reference scenario panel.
#[test]
fn criterion_04_sweep_threshold() {
    let rep = run_sweep(&reference(200), None).unwrap();
    let lambda0 = rep.lambda0.expect("finite threshold expected");
    assert!(lambda0 <= 100.0, "lambda0 = {lambda0}");
    println!(
        "criterion 4 PASS: lambda0 = {lambda0} over {} sampled level-set points",
        rep.sample_count
    );
}

/// 5. Waiting-time improvement: T_new = 1.6 and T_old = 2.2 to 1e-12.
#[test]
fn criterion_05_waiting_time() {
    let rep = run_regions(&reference(200), None).unwrap();
    let w = rep.waiting.expect("flat scenario must report waiting times");
    assert!((w.t_new - 1.6).abs() <= 1e-12, "t_new = {}", w.t_new);
    assert!((w.t_old - 2.2).abs() <= 1e-12, "t_old = {}", w.t_old);
    assert!(w.t_new < w.t_old);
    println!("criterion 5 PASS: T_new = {} < T_old = {}", w.t_new, w.t_old);
}

/// 6. Region improvement: measure(K)/measure(K1) < 0.9 at 200 x 200 and
/// K inside K1 node-exactly.
#[test]
fn criterion_06_region_measure() {
    let rep = run_regions(&reference(200), None).unwrap();
    assert!(rep.k_subset_k1, "K must be contained in the cylinder");
    assert!(
        rep.measure_ratio_k_over_k1 < 0.9,
        "ratio = {}",
        rep.measure_ratio_k_over_k1
    );
    println!(
        "criterion 6 PASS: measure(K)/measure(K1) = {:.4}, node-exact containment",
        rep.measure_ratio_k_over_k1
    );
}

/// 7. Observability positivity: mu_min > 0 at m = 20, stable within 20%
/// under simultaneous grid and mode doubling, Loewner order between K and
/// K1, all within five minutes.
#[test]
fn criterion_07_observability_positive_and_stable() {
    let start = Instant::now();
    let base = run_observe(&reference(200), None).unwrap();
    assert!(base.rows[0].mu_min > 0.0);
    assert!(base.loewner_order_holds, "mu_min(K) <= mu_min(K1) must hold");

    let mut doubled = reference(400);
    doubled.modes = 40;
    let fine = run_observe(&doubled, None).unwrap();
    let rel = (fine.rows[0].mu_min - base.rows[0].mu_min).abs() / base.rows[0].mu_min;
    let elapsed = start.elapsed();
    assert!(rel <= 0.2, "mu_min moved by {rel:.3} under doubling");
    assert!(elapsed.as_secs() < 300, "observability runs took {elapsed:?}");
    println!(
        "criterion 7 PASS: mu_min = {:.6e} (200, m20) vs {:.6e} (400, m40), drift {:.3}, {elapsed:?}",
        base.rows[0].mu_min, fine.rows[0].mu_min, rel
    );
}

/// 8. Non-observability trend: at T = 0.5 Tstar the smallest pencil
/// eigenvalue should collapse by >= 10x under each 2x refinement step.
///
/// EXPECTED RED. Measured behavior (see also the horizon scan below): at
/// T = 0.8 the smallest pencil eigenvalue already sits at the double
/// precision noise floor (mu_min/mu_max ~ 1e-16, against a non-observability
/// flag floor of ~1e-11) at EVERY lattice from 25 to 800 nodes, so there is
/// no 10x-per-refinement decay left to observe; the measured values are
/// rounding noise (7.6e-17 -> 3.1e-16 -> 0.0, non-monotone). The mechanism
/// the criterion presumes - spurious observability at coarse grids that
/// refinement removes - does not exist for this discretization: the leapfrog
/// group velocity never exceeds the continuum speed, so coarse grids cannot
/// leak energy into the region early, and the hidden-data margin (~e^{-70})
/// is far below any floating-point resolution. The artifact's honest signal
/// at this horizon is the non-observability flag (C_obs = infinity at every
/// resolution), and the sharp collapse of mu_min as T crosses the waiting
/// time, asserted below.
#[test]
fn criterion_08_nonobservability_trend() {
    let mu_at = |space: usize| {
        let mut sc = reference(space);
        sc.time = TimeSpec::Absolute { value: 0.8 }; // 0.5 * Tstar
        k_region_mu_min(&sc).unwrap()
    };
    let mu0 = mu_at(200);
    let mu1 = mu_at(400);
    let mu2 = mu_at(800);
    println!(
        "criterion 8 measured mu_min at T = 0.5 Tstar: {mu0:.3e} -> {mu1:.3e} -> {mu2:.3e}          (all at the f64 noise floor; see the test comment)"
    );
    assert!(
        mu0 > 0.0 && mu1 > 0.0 && mu2 > 0.0 && mu1 * 10.0 <= mu0 && mu2 * 10.0 <= mu1,
        "no measurable refinement trend: mu_min = {mu0:.3e} -> {mu1:.3e} -> {mu2:.3e}          is eigensolver noise at every resolution (documented limitation)"
    );
    println!("criterion 8 PASS: mu_min trend {mu0:.3e} -> {mu1:.3e} -> {mu2:.3e}");
}

/// Companion to the criterion above: the non-observability signal that IS
/// measurable. mu_min collapses by many orders of magnitude as the horizon
/// drops through the waiting time, and the short-horizon pencil sits under
/// the non-observability floor at every resolution.
#[test]
fn nonobservability_horizon_collapse() {
    let mu_at = |t: f64, space: usize| {
        let mut sc = reference(space);
        sc.time = TimeSpec::Absolute { value: t };
        k_region_mu_min(&sc).unwrap()
    };
    let at_tstar = mu_at(1.6, 200);
    let below = mu_at(1.1, 200);
    let far_below = mu_at(0.8, 200);
    assert!(at_tstar > 1e-3, "near the waiting time: {at_tstar:.3e}");
    assert!(below < at_tstar / 1e5, "T = 1.1: {below:.3e}");
    assert!(far_below < at_tstar / 1e10, "T = 0.5 Tstar: {far_below:.3e}");
    println!(
        "horizon collapse: mu_min {at_tstar:.3e} (T = Tstar) -> {below:.3e} (T = 1.1) -> {far_below:.3e} (T = 0.8)"
    );
}

/// 9. Wave solver accuracy: free-mode error <= 1% at the reference
/// resolution, halving the spacing reduces it by >= 3x.
#[test]
fn criterion_09_wave_accuracy() {
    let error_at = |n: usize| {
        let g = Grid::interval(0.0, 1.0, n);
        let h = CoefficientField::Identity;
        let w0 = interval_mode(&g, 1);
        let w1 = vec![0.0; g.n_nodes()];
        let traj =
            simulate_wave(&w0, &w1, &LowerOrderTerms::free(), 1.76, &g, &h, None).unwrap();
        let last = traj.n_steps();
        let t = traj.time(last);
        let (mut num, mut den) = (0.0, 0.0);
        for i in g.inside_indices() {
            let x = g.node_pos(i)[0];
            let exact = (std::f64::consts::PI * t).cos() * (std::f64::consts::PI * x).sin();
            num += (traj.snaps[last][i] - exact).powi(2);
            den += exact * exact;
        }
        (num / den).sqrt()
    };
    let coarse = error_at(200);
    let fine = error_at(399);
    assert!(coarse <= 0.01, "reference-resolution error {coarse}");
    assert!(fine * 3.0 <= coarse, "{coarse} -> {fine}");
    println!("criterion 9 PASS: free-mode error {coarse:.2e} -> {fine:.2e} under halving");
}

/// 10. Energy bounds: free fit <= 0.05; fitted constant and window ratio
/// finite and stable within 30% across ten seeded draws with r = 2.
#[test]
fn criterion_10_energy_bounds() {
    let rep = run_energy(&reference(200), 10, None).unwrap();
    assert!(rep.free_fitted_c <= 0.05, "free fit {}", rep.free_fitted_c);
    assert!(rep
        .draws
        .iter()
        .all(|d| d.fitted_c.is_finite() && d.integral_ratio.is_finite()));
    assert!(rep.draws.iter().all(|d| d.r <= 2.0 + 1e-12));
    assert!(rep.fitted_c_spread <= 0.30, "fit spread {}", rep.fitted_c_spread);
    assert!(rep.ratio_spread <= 0.30, "ratio spread {}", rep.ratio_spread);
    println!(
        "criterion 10 PASS: free fit {:.4}, spreads {:.3} (fit) / {:.3} (ratio) over 10 draws",
        rep.free_fitted_c, rep.fitted_c_spread, rep.ratio_spread
    );
}

/// 11. Shifted pipeline: the interior-critical-point scenario certifies
/// s = 4 +- 1e-3, builds the shifted region, the union bound W contains both
/// closures node-exactly, and a zero shift reproduces the plain pipeline
/// byte-identically.
#[test]
fn criterion_11_shifted_pipeline() {
    let mut sc = Scenario::interior_shift_1d();
    sc.resolution.space = 200;
    let rep = run_regions(&sc, None).unwrap();
    let shifted = rep.shifted.expect("shifted summary required");
    assert!((shifted.cond2.s - 4.0).abs() <= 1e-3, "s = {}", shifted.cond2.s);
    assert!(!shifted.cond2.degenerate);
    assert!(shifted.w_contains_closures);
    assert!(shifted.k_zeta_measure > 0.0);

    // zero shift: identical boundary portion, scales and region bytes
    let stage = prepare_geometry(&sc).unwrap();
    let g = &stage.grid;
    let gamma0 = compute_gamma0(&stage.h, &stage.weight, g);
    let (omega, omega0) = build_neighborhoods(&gamma0, 0.3, 0.1, g).unwrap();
    let taxis = Axis::cells(0.0, stage.t_horizon, 64);
    let zero = build_shifted_regions(
        &stage.weight, [0.0, 0.0], stage.t_horizon, 0.25, &stage.h, g, &omega, &omega0,
        &gamma0, 0.3, 0.1, taxis.clone(),
    )
    .unwrap();
    let plain_k = build_observation_region(
        &stage.weight, stage.t_horizon, 0.25, &omega, &omega0, taxis, g, false,
    );
    let mut a = Vec::new();
    let mut b = Vec::new();
    zero.k_zeta.write_pgm(&mut a, g.shape).unwrap();
    plain_k.write_pgm(&mut b, g.shape).unwrap();
    assert_eq!(a, b, "zero-shift region must serialize byte-identically");
    let plain = compute_times(&stage.weight, g, &gamma0, 0.3).unwrap();
    let shifted0 = compute_times_shifted(&stage.weight, [0.0, 0.0], g, &gamma0, 0.3).unwrap();
    assert_eq!(plain.tstar, shifted0.tstar);
    println!(
        "criterion 11 PASS: s = {:.6}, W contains both closures, zero shift byte-identical",
        shifted.cond2.s
    );
}

/// Interior-shift second-critical-point guard: the condition-2 certifier is
/// exercised directly on the shifted weight pair used above.
#[test]
fn shifted_weights_satisfy_condition2() {
    let g = Grid::interval(0.0, 1.0, 200);
    let h = CoefficientField::Identity;
    let d = WeightField::paraboloid([0.5, 0.0]);
    let rep = check_condition2(&h, &d, [0.5, 0.0], &g).unwrap();
    assert!((rep.s - 4.0).abs() <= 1e-3);
    let dz = d.shifted([0.05, 0.0]);
    let rep_z = check_condition2(&h, &dz, [0.45, 0.0], &g).unwrap();
    assert!((rep_z.s - 4.0).abs() <= 1e-3);
}

/// The identity pipeline over the shipped reference scenario, as the CLI
/// would run it.
#[test]
fn identity_pipeline_reference_scenario() {
    let rep = run_identity(&reference(200), 1000, None).unwrap();
    assert!(rep.passed, "max relative residual {}", rep.max_relative_residual);
    assert_eq!(rep.rows.len(), 4);
}
