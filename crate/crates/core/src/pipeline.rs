//! Scenario-driven pipelines shared by the CLI and the acceptance suite:
//! geometry + regions, identity verification, the lambda sweep, Gramian
//! observability and the energy-bound fits. Every run returns a serializable
//! report embedding the resolved scenario; artifact files (CSV, PGM) land in
//! an optional output directory.

use crate::carleman::{
    check_pointwise_inequality, identity_reports, PsiField, SweepReport, TestFunction,
};
use crate::coeff::{verify_coefficients, CoefficientField};
use crate::elliptic::assemble_elliptic;
use crate::error::{Error, Result};
use crate::geometry::{
    build_cone_region, build_cylinder_region, build_k2_region, build_neighborhoods,
    build_observation_region, build_shifted_regions, choose_inner_neighborhoods,
    compute_gamma0, compute_times, compute_times_shifted, select_carleman_parameters,
    verify_inclusion_chain, verify_return_containment, CarlemanParameters, ChainReport,
    TimeScales,
};
use crate::grid::{mask_count, Grid, SpatialMask};
use crate::observability::{
    build_basis, compare_regions, estimate_constant, theoretical_constant, waiting_time_comparison,
    RegionRow, TheoreticalConstant, WaitingTimes,
};
use crate::region::{Axis, SpaceTimeRegion};
use crate::report::{artifact, ensure_dir, write_csv, write_json, write_mask_pgm};
use crate::scenario::{Scenario, TimeSpec};
use crate::wave::{
    check_energy_bound, check_integral_bound, interval_mode, simulate_wave, stable_steps,
    CoefFn, LowerOrderTerms,
};
use crate::weight::{
    check_condition1, check_condition2, normalize_weight, Condition1Report, Condition2Report,
    Normalization, WeightField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

const LAMBDA0_ELLIPTIC: f64 = 1.0;

/// Everything the geometry stage certifies before regions are built.
pub struct GeometryStage {
    pub grid: Grid,
    pub h: CoefficientField,
    pub h0: f64,
    /// normalized weight on the no-critical-point path, raw weight otherwise
    pub weight: WeightField,
    pub cond1: Option<Condition1Report>,
    pub normalization: Option<Normalization>,
    pub interior_critical: bool,
    pub gamma0: Vec<usize>,
    pub omega: SpatialMask,
    pub omega0: SpatialMask,
    pub scales: TimeScales,
    pub t_horizon: f64,
}

pub fn prepare_geometry(sc: &Scenario) -> Result<GeometryStage> {
    sc.validate()?;
    let grid = sc.build_grid();
    grid.validate()?;
    let h = sc.coefficients.clone();
    let coeff_report = verify_coefficients(&h, &grid)?;

    let raw = sc.weight.clone();
    let interior_critical = raw
        .critical_point()
        .map(|x0| {
            let (lo, hi) = grid.domain.bounding_box();
            match grid.domain {
                crate::grid::Domain::Disk { center, radius } => {
                    ((x0[0] - center[0]).powi(2) + (x0[1] - center[1]).powi(2)).sqrt()
                        <= radius + 1e-12
                }
                _ => {
                    (lo[0]..=hi[0]).contains(&x0[0])
                        && (grid.dim == 1 || (lo[1]..=hi[1]).contains(&x0[1]))
                }
            }
        })
        .unwrap_or(false);

    let (weight, cond1, normalization) = if interior_critical {
        // single-critical-point route: certified separately by the caller
        (raw, None, None)
    } else {
        let rep = check_condition1(&h, &raw, &grid)?;
        if !(rep.mu0 > 0.0) || !(rep.min_grad > 0.0) {
            return Err(Error::WeightCondition {
                detail: format!(
                    "pseudoconvexity bracket mu0 = {:.3e}, min |grad d| = {:.3e}",
                    rep.mu0, rep.min_grad
                ),
            });
        }
        let (normalized, nz) = normalize_weight(&raw, rep.mu0, &h, &grid)?;
        let rep = check_condition1(&h, &normalized, &grid)?;
        (normalized, Some(rep), Some(nz))
    };

    let gamma0 = compute_gamma0(&h, &weight, &grid);
    if gamma0.is_empty() {
        return Err(Error::EmptyGamma0);
    }
    let (omega, omega0) =
        build_neighborhoods(&gamma0, sc.geometry.delta, sc.geometry.delta0, &grid)?;
    let scales = match sc.shift {
        Some(zeta) => compute_times_shifted(&weight, zeta, &grid, &gamma0, sc.geometry.delta)?,
        None => compute_times(&weight, &grid, &gamma0, sc.geometry.delta)?,
    };
    let t_horizon = match sc.time {
        TimeSpec::FactorOfTstar { factor } => factor * scales.tstar,
        TimeSpec::Absolute { value } => value,
    };
    Ok(GeometryStage {
        grid,
        h,
        h0: coeff_report.h0,
        weight,
        cond1,
        normalization,
        interior_critical,
        gamma0,
        omega,
        omega0,
        scales,
        t_horizon,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ShiftedSummary {
    pub cond2: Condition2Report,
    pub r1: f64,
    pub tstar2: f64,
    pub k_zeta_measure: f64,
    pub w_measure: f64,
    pub w_contains_closures: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RegionsReport {
    pub scenario: Scenario,
    pub h0: f64,
    pub cond1: Option<Condition1Report>,
    pub normalization: Option<Normalization>,
    pub gamma0_count: usize,
    pub omega_count: usize,
    pub omega0_count: usize,
    pub scales: TimeScales,
    pub t_horizon: f64,
    pub waiting: Option<WaitingTimes>,
    pub measures: Vec<(String, f64)>,
    pub k_subset_k1: bool,
    pub measure_ratio_k_over_k1: f64,
    pub params: Option<CarlemanParameters>,
    pub chain: Option<ChainReport>,
    pub return_containment_violations: Option<usize>,
    pub shifted: Option<ShiftedSummary>,
    pub passed: bool,
}

/// Geometry + region construction + every structural verification the run
/// can decide: K inside the cylinder, the proof-layer inclusion chain, the
/// slab-and-cone return containment and (with a shift) the union bound.
pub fn run_regions(sc: &Scenario, out: Option<&Path>) -> Result<RegionsReport> {
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let stage = prepare_geometry(sc)?;
    let g = &stage.grid;
    let d = &stage.weight;
    let t_horizon = stage.t_horizon;
    let taxis = Axis::cells(0.0, t_horizon, sc.resolution.time);

    let d_region = build_cone_region(d, t_horizon, taxis.clone(), g);
    let k = build_observation_region(
        d, t_horizon, sc.geometry.delta1, &stage.omega, &stage.omega0, taxis.clone(), g, false,
    );
    let k1 = build_cylinder_region(&stage.omega, taxis.clone(), g);
    let flat = matches!(stage.h, CoefficientField::Identity)
        && matches!(d.kind, crate::weight::WeightKind::Paraboloid { .. });
    let k2 = flat.then(|| build_k2_region(d, &stage.omega, taxis.clone(), g));

    let k_subset_k1 = k.is_subset_of(&k1);
    let ratio = k.measure() / k1.measure();
    let mut measures = vec![
        ("D".to_string(), d_region.measure()),
        ("K".to_string(), k.measure()),
        ("K1".to_string(), k1.measure()),
    ];
    if let Some(ref k2r) = k2 {
        measures.push(("K2".to_string(), k2r.measure()));
    }

    let waiting = flat
        .then(|| waiting_time_comparison(d, g, &stage.gamma0, sc.geometry.delta))
        .transpose()?;

    // proof layer: only on the no-critical-point route, where min d > 0
    let (params, chain, aa3) = if stage.interior_critical {
        (None, None, None)
    } else {
        let (rho1, rho2, omega1, omega2) = choose_inner_neighborhoods(
            d, t_horizon, g, &stage.gamma0, sc.geometry.delta0, sc.geometry.delta,
        )?;
        let params = select_carleman_parameters(
            d,
            t_horizon,
            &omega1,
            rho1,
            rho2,
            g,
            &stage.gamma0,
            sc.geometry.delta,
            sc.geometry.delta0,
            sc.geometry.delta1,
            [sc.resolution.proof, sc.resolution.proof, sc.resolution.space],
            sc.shift,
        )?;
        let taxes = [
            Axis::cells(0.0, t_horizon, sc.resolution.proof),
            Axis::cells(0.0, t_horizon, sc.resolution.proof),
        ];
        let chain = verify_inclusion_chain(d, &params, &omega1, taxes, g);
        let aa3 = verify_return_containment(
            d, &params, &stage.omega, &stage.omega0, &omega2, &taxis, g,
        );
        (Some(params), Some(chain), Some(aa3))
    };

    // shifted constructions and the union bound W
    let shifted = match sc.shift {
        None => None,
        Some(zeta) => {
            let x0 = d
                .critical_point()
                .ok_or_else(|| Error::WeightCondition {
                    detail: "shifted pipeline needs a weight with a critical point".into(),
                })?;
            let cond2 = check_condition2(&stage.h, d, x0, g)?;
            let shifted_regions = build_shifted_regions(
                d,
                zeta,
                t_horizon,
                sc.geometry.delta1,
                &stage.h,
                g,
                &stage.omega,
                &stage.omega0,
                &stage.gamma0,
                sc.geometry.delta,
                sc.geometry.delta0,
                taxis.clone(),
            )?;
            let k_closed = build_observation_region(
                d, t_horizon, sc.geometry.delta1, &stage.omega, &stage.omega0,
                taxis.clone(), g, true,
            );
            let dz = d.shifted(zeta);
            let k_zeta_closed = build_observation_region(
                &dz, t_horizon, sc.geometry.delta1, &stage.omega, &stage.omega0,
                taxis.clone(), g, true,
            );
            let closures = k_closed.union(&k_zeta_closed)?;
            let w = closures.dilate(g.shape);
            let w_contains = closures.is_subset_of(&w)
                && k.is_subset_of(&w)
                && shifted_regions.k_zeta.is_subset_of(&w);
            if let Some(dir) = out {
                if g.dim == 1 {
                    let f = std::fs::File::create(artifact(dir, "k_zeta.pgm"))?;
                    shifted_regions.k_zeta.write_pgm(std::io::BufWriter::new(f), g.shape)?;
                    let f = std::fs::File::create(artifact(dir, "w_union.pgm"))?;
                    w.write_pgm(std::io::BufWriter::new(f), g.shape)?;
                }
                let f = std::fs::File::create(artifact(dir, "k_zeta.csv"))?;
                shifted_regions.k_zeta.write_csv(std::io::BufWriter::new(f), g)?;
            }
            Some(ShiftedSummary {
                cond2,
                r1: shifted_regions.scales.r1,
                tstar2: shifted_regions.scales.tstar,
                k_zeta_measure: shifted_regions.k_zeta.measure(),
                w_measure: w.measure(),
                w_contains_closures: w_contains,
            })
        }
    };

    if let Some(dir) = out {
        write_mask_pgm(&artifact(dir, "omega.pgm"), g, &stage.omega)?;
        write_mask_pgm(&artifact(dir, "omega0.pgm"), g, &stage.omega0)?;
        for (name, region) in [("d_region", &d_region), ("k", &k), ("k1", &k1)] {
            if g.dim == 1 {
                let f = std::fs::File::create(artifact(dir, &format!("{name}.pgm")))?;
                region.write_pgm(std::io::BufWriter::new(f), g.shape)?;
            }
            let f = std::fs::File::create(artifact(dir, &format!("{name}.csv")))?;
            region.write_csv(std::io::BufWriter::new(f), g)?;
        }
        if let Some(ref k2r) = k2 {
            if g.dim == 1 {
                let f = std::fs::File::create(artifact(dir, "k2.pgm"))?;
                k2r.write_pgm(std::io::BufWriter::new(f), g.shape)?;
            }
            let f = std::fs::File::create(artifact(dir, "k2.csv"))?;
            k2r.write_csv(std::io::BufWriter::new(f), g)?;
        }
    }

    let chain_ok = chain.as_ref().map_or(true, |c| c.ok());
    let aa3_ok = aa3.map_or(true, |v| v == 0);
    let shift_ok = shifted.as_ref().map_or(true, |s| s.w_contains_closures);
    let passed = k_subset_k1 && chain_ok && aa3_ok && shift_ok;

    let report = RegionsReport {
        scenario: sc.clone(),
        h0: stage.h0,
        cond1: stage.cond1,
        normalization: stage.normalization,
        gamma0_count: stage.gamma0.len(),
        omega_count: mask_count(&stage.omega),
        omega0_count: mask_count(&stage.omega0),
        scales: stage.scales,
        t_horizon,
        waiting,
        measures,
        k_subset_k1,
        measure_ratio_k_over_k1: ratio,
        params,
        chain,
        return_containment_violations: aa3,
        shifted,
        passed,
    };
    if let Some(dir) = out {
        write_json(&artifact(dir, "summary.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentityFamilyRow {
    pub family: String,
    pub points: usize,
    pub max_relative_residual: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentityRunReport {
    pub scenario: Scenario,
    pub rows: Vec<IdentityFamilyRow>,
    pub max_relative_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random test functions of the three families, drawn from the scenario
/// seed.
pub fn test_function_panel(seed: u64, dim: usize) -> Vec<(String, TestFunction)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poly_terms = Vec::new();
    for _ in 0..6 {
        let powers = [
            rng.gen_range(0..3u8),
            rng.gen_range(0..3u8),
            rng.gen_range(0..3u8),
            if dim == 2 { rng.gen_range(0..3u8) } else { 0 },
        ];
        poly_terms.push((powers, rng.gen_range(-1.5..1.5)));
    }
    let freq = [
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.5..3.0),
        if dim == 2 { rng.gen_range(0.5..3.0) } else { 0.0 },
    ];
    let phase = [
        rng.gen_range(0.0..1.5),
        rng.gen_range(0.0..1.5),
        rng.gen_range(0.0..1.5),
        if dim == 2 { rng.gen_range(0.0..1.5) } else { std::f64::consts::FRAC_PI_2 },
    ];
    let center = [
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
    ];
    let gamma = [
        rng.gen_range(0.5..2.5),
        rng.gen_range(0.5..2.5),
        rng.gen_range(0.5..2.5),
        if dim == 2 { rng.gen_range(0.5..2.5) } else { 0.0 },
    ];
    vec![
        ("zero".into(), TestFunction::Zero),
        ("polynomial".into(), TestFunction::Polynomial { terms: poly_terms }),
        ("trigonometric".into(), TestFunction::SeparableTrig { amp: 1.2, freq, phase }),
        ("gaussian".into(), TestFunction::GaussianBump { amp: 0.9, center, gamma }),
    ]
}

/// Identity verification over random points for every test-function family.
pub fn run_identity(sc: &Scenario, points_per_family: usize, out: Option<&Path>) -> Result<IdentityRunReport> {
    sc.validate()?;
    let grid = sc.build_grid();
    let h = sc.coefficients.clone();
    if !h.is_analytic() {
        return Err(Error::NeedsAnalyticCoefficients);
    }
    let d = sc.weight.clone();
    let t_horizon = match sc.time {
        TimeSpec::Absolute { value } => value,
        TimeSpec::FactorOfTstar { .. } => 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x1d);
    let (lo, hi) = grid.domain.bounding_box();
    let points: Vec<(f64, f64, [f64; 2])> = (0..points_per_family)
        .map(|_| {
            (
                rng.gen_range(0.0..t_horizon),
                rng.gen_range(0.0..t_horizon),
                [
                    rng.gen_range(lo[0]..hi[0]),
                    if grid.dim == 2 { rng.gen_range(lo[1]..hi[1]) } else { 0.0 },
                ],
            )
        })
        .collect();

    let tolerance = 1e-6;
    let mut rows = Vec::new();
    let mut point_rows: Vec<Vec<f64>> = Vec::new();
    let mut max_rel = 0.0f64;
    for (fi, (name, u)) in test_function_panel(sc.seed, grid.dim).into_iter().enumerate() {
        let lambda = rng.gen_range(0.5..30.0);
        let alpha = rng.gen_range(0.6..0.999);
        let psi = PsiField::Step3 { lambda, alpha };
        let reports =
            identity_reports(&u, &points, lambda, alpha, t_horizon, &d, &h, &psi, grid.dim)?;
        let rel = reports.iter().map(|r| r.relative).fold(0.0f64, f64::max);
        max_rel = max_rel.max(rel);
        if out.is_some() {
            for (&(t, s, x), rep) in points.iter().zip(&reports) {
                point_rows.push(vec![
                    fi as f64,
                    t,
                    s,
                    x[0],
                    x[1],
                    rep.residual,
                    rep.largest_summand,
                    rep.relative,
                ]);
            }
        }
        rows.push(IdentityFamilyRow {
            family: name,
            points: points.len(),
            max_relative_residual: rel,
        });
    }
    let report = IdentityRunReport {
        scenario: sc.clone(),
        max_relative_residual: max_rel,
        tolerance,
        passed: max_rel <= tolerance,
        rows,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&artifact(dir, "summary.json"), &report)?;
        let rows_csv: Vec<Vec<f64>> = report
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| vec![i as f64, r.points as f64, r.max_relative_residual])
            .collect();
        write_csv(
            &artifact(dir, "identity.csv"),
            &["family_index", "points", "max_relative_residual"],
            &rows_csv,
        )?;
        write_csv(
            &artifact(dir, "identity_points.csv"),
            &["family_index", "t", "s", "x", "y", "residual", "largest_summand", "relative"],
            &point_rows,
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRunReport {
    pub scenario: Scenario,
    pub params: CarlemanParameters,
    pub sample_count: usize,
    pub reports: Vec<(String, SweepReport)>,
    /// least sweep lambda that certifies every panel function
    pub lambda0: Option<f64>,
    pub passed: bool,
}

/// Draw sample nodes from the proof-layer super-level region Q(c).
pub fn sample_level_region(
    d: &WeightField,
    params: &CarlemanParameters,
    omega1: &SpatialMask,
    g: &Grid,
    cells: usize,
    max_samples: usize,
    seed: u64,
) -> Vec<(f64, f64, [f64; 2])> {
    let taxes = [
        Axis::cells(0.0, params.t_horizon, cells),
        Axis::cells(0.0, params.t_horizon, cells),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut seen = 0usize;
    for &t in &taxes[0].coords {
        for &s in &taxes[1].coords {
            for node in g.inside_indices() {
                if omega1[node] {
                    continue;
                }
                let x = g.node_pos(node);
                if params.phi(d.value(g.dim, x), t, s) > params.c * params.c {
                    seen += 1;
                    // reservoir sampling keeps the draw uniform and seeded
                    if samples.len() < max_samples {
                        samples.push((t, s, x));
                    } else {
                        let k = rng.gen_range(0..seen);
                        if k < max_samples {
                            samples[k] = (t, s, x);
                        }
                    }
                }
            }
        }
    }
    samples
}

/// Lambda sweep of the spectral lower bound over the reference test panel.
pub fn run_sweep(sc: &Scenario, out: Option<&Path>) -> Result<SweepRunReport> {
    let stage = prepare_geometry(sc)?;
    if stage.interior_critical {
        return Err(Error::WeightCondition {
            detail: "the sweep needs the no-critical-point route (min d > 0)".into(),
        });
    }
    let g = &stage.grid;
    let d = &stage.weight;
    let (rho1, rho2, omega1, _) = choose_inner_neighborhoods(
        d, stage.t_horizon, g, &stage.gamma0, sc.geometry.delta0, sc.geometry.delta,
    )?;
    let params = select_carleman_parameters(
        d,
        stage.t_horizon,
        &omega1,
        rho1,
        rho2,
        g,
        &stage.gamma0,
        sc.geometry.delta,
        sc.geometry.delta0,
        sc.geometry.delta1,
        [sc.resolution.proof, sc.resolution.proof, sc.resolution.space],
        sc.shift,
    )?;
    let samples = sample_level_region(d, &params, &omega1, g, 48, 1200, sc.seed ^ 0x5eed);

    // the panel pairs a spatial mode with a space-time bump
    let pi = std::f64::consts::PI;
    let mode = TestFunction::SeparableTrig {
        amp: 1.0,
        freq: [0.0, 0.0, pi, if g.dim == 2 { pi } else { 0.0 }],
        phase: [
            std::f64::consts::FRAC_PI_2,
            std::f64::consts::FRAC_PI_2,
            0.0,
            if g.dim == 2 { 0.0 } else { std::f64::consts::FRAC_PI_2 },
        ],
    };
    let bump = TestFunction::GaussianBump {
        amp: 1.0,
        center: [stage.t_horizon / 2.0, stage.t_horizon / 2.0, 0.0, 0.0],
        gamma: [2.0, 2.0, 0.0, 0.0],
    };
    let panel: Vec<(String, TestFunction)> = vec![
        (
            "mode_x_times_bump_ts".into(),
            TestFunction::Product(Box::new(mode.clone()), Box::new(bump)),
        ),
        ("mode_x".into(), mode),
    ];

    let mut reports = Vec::new();
    let mut lambda0: Option<f64> = None;
    for (name, u) in panel {
        let rep = check_pointwise_inequality(
            &u,
            &sc.lambda_sweep,
            &samples,
            params.alpha,
            params.t_horizon,
            d,
            &stage.h,
            stage.h0,
            g.dim,
        )?;
        lambda0 = match (lambda0, rep.lambda0) {
            (None, l) => l,
            (l, None) => l,
            (Some(a), Some(b)) => Some(a.max(b)),
        };
        reports.push((name, rep));
    }

    let report = SweepRunReport {
        scenario: sc.clone(),
        params,
        sample_count: samples.len(),
        lambda0,
        passed: lambda0.is_some(),
        reports,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&artifact(dir, "summary.json"), &report)?;
        for (i, (_, rep)) in report.reports.iter().enumerate() {
            let rows: Vec<Vec<f64>> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![r.lambda, r.min_margin, r.argmin.0, r.argmin.1, r.argmin.2[0], r.argmin.2[1]]
                })
                .collect();
            write_csv(
                &artifact(dir, &format!("sweep_{i}.csv")),
                &["lambda", "min_margin", "t", "s", "x", "y"],
                &rows,
            )?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityCheck {
    pub mu_min_doubled_modes: f64,
    /// relative drift of mu_min(K) when the mode count doubles
    pub drift: f64,
    pub stable_within: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ObserveReport {
    pub scenario: Scenario,
    pub t_horizon: f64,
    pub modes: usize,
    pub r: f64,
    pub rows: Vec<RegionRow>,
    pub k_subset_k1: bool,
    pub loewner_order_holds: bool,
    pub fit_c: Option<f64>,
    pub theoretical: Option<TheoreticalConstant>,
    pub stability: Option<StabilityCheck>,
    pub passed: bool,
}

/// Gramian observability over K, K1 (and K2 in the flat case) with shared
/// trajectories; asserts the region containment and the Loewner ordering.
pub fn run_observe(sc: &Scenario, out: Option<&Path>) -> Result<ObserveReport> {
    let stage = prepare_geometry(sc)?;
    let g = &stage.grid;
    let d = &stage.weight;
    let t_horizon = stage.t_horizon;
    let op = assemble_elliptic(&stage.h, g, LAMBDA0_ELLIPTIC)?;
    let basis = build_basis(&op, sc.modes)?;
    let lot = sc.lower_order.clone();

    let (steps, _) = stable_steps(&stage.h, g, t_horizon, None)?;
    let taxis = Axis::nodes(0.0, t_horizon, steps + 1);
    let k = build_observation_region(
        d, t_horizon, sc.geometry.delta1, &stage.omega, &stage.omega0, taxis.clone(), g, false,
    );
    let k1 = build_cylinder_region(&stage.omega, taxis.clone(), g);
    let flat = matches!(stage.h, CoefficientField::Identity)
        && matches!(d.kind, crate::weight::WeightKind::Paraboloid { .. });
    let mut named: Vec<(String, &SpaceTimeRegion)> =
        vec![("K".into(), &k), ("K1".into(), &k1)];
    let k2 = flat.then(|| build_k2_region(d, &stage.omega, taxis.clone(), g));
    if let Some(ref k2r) = k2 {
        named.push(("K2".into(), k2r));
    }

    let rows = compare_regions(&named, &basis, &lot, t_horizon, g, &stage.h, &op)?;
    let k_subset_k1 = k.is_subset_of(&k1);
    let loewner = rows[0].mu_min <= rows[1].mu_min * (1.0 + 1e-9) + 1e-15;

    // honesty mechanism for the truncated data space: double the mode count
    // and report how far mu_min(K) moves
    let stability = {
        let doubled = build_basis(&op, (2 * sc.modes).min(op.n_interior()))?;
        let gs = crate::observability::assemble_gramian(
            &doubled, &lot, &k, t_horizon, g, &stage.h, &op,
        )?;
        let mu2 = estimate_constant(&gs)?.mu_min;
        let drift = if rows[0].mu_min > 0.0 {
            (mu2 - rows[0].mu_min).abs() / rows[0].mu_min
        } else {
            0.0
        };
        Some(StabilityCheck { mu_min_doubled_modes: mu2, drift, stable_within: 0.2 })
    };

    let r = lot.r(g.dim);
    let fit_c = rows[0].c_obs.map(|c| c / std::f64::consts::E);
    let theoretical = fit_c.map(|c| theoretical_constant(r, c));
    let passed = k_subset_k1 && loewner && rows.iter().all(|r| r.mu_min >= 0.0);

    let report = ObserveReport {
        scenario: sc.clone(),
        t_horizon,
        modes: sc.modes,
        r,
        rows,
        k_subset_k1,
        loewner_order_holds: loewner,
        fit_c,
        theoretical,
        stability,
        passed,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&artifact(dir, "summary.json"), &report)?;
        let rows_csv: Vec<Vec<f64>> = report
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![i as f64, r.measure, r.mu_min, r.c_obs.unwrap_or(f64::INFINITY)]
            })
            .collect();
        write_csv(
            &artifact(dir, "observe.csv"),
            &["region_index", "measure", "mu_min", "c_obs"],
            &rows_csv,
        )?;
    }
    Ok(report)
}

/// Smallest pencil eigenvalue of the observation region K alone, for
/// refinement studies.
pub fn k_region_mu_min(sc: &Scenario) -> Result<f64> {
    let stage = prepare_geometry(sc)?;
    let g = &stage.grid;
    let op = assemble_elliptic(&stage.h, g, LAMBDA0_ELLIPTIC)?;
    let basis = build_basis(&op, sc.modes)?;
    let (steps, _) = stable_steps(&stage.h, g, stage.t_horizon, None)?;
    let taxis = Axis::nodes(0.0, stage.t_horizon, steps + 1);
    let k = build_observation_region(
        &stage.weight,
        stage.t_horizon,
        sc.geometry.delta1,
        &stage.omega,
        &stage.omega0,
        taxis,
        g,
        false,
    );
    let gs = crate::observability::assemble_gramian(
        &basis, &sc.lower_order, &k, stage.t_horizon, g, &stage.h, &op,
    )?;
    Ok(estimate_constant(&gs)?.mu_min)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyDrawRow {
    pub draw: usize,
    pub r: f64,
    pub fitted_c: f64,
    pub integral_ratio: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyRunReport {
    pub scenario: Scenario,
    pub free_fitted_c: f64,
    pub draws: Vec<EnergyDrawRow>,
    pub fitted_c_spread: f64,
    pub ratio_spread: f64,
    pub passed: bool,
}

/// Random lower-order coefficients with r <= target_r: constant potential,
/// drift and damping with random signs and magnitudes. Constants keep the
/// log-energy swing comparable across draws, which the stability check
/// measures.
pub fn random_lower_order(
    rng: &mut ChaCha8Rng,
    target_r: f64,
    dim: usize,
) -> LowerOrderTerms {
    let mut draw = |lo: f64, hi: f64| CoefFn::Constant {
        value: (target_r / 2.0)
            * rng.gen_range(lo..hi)
            * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
    };
    LowerOrderTerms {
        q: draw(1.8, 2.0),
        q1: [draw(0.8, 1.0), if dim == 2 { draw(0.8, 1.0) } else { CoefFn::Zero }],
        q2: draw(0.45, 0.5),
    }
}

/// Free-wave fit plus seeded random coefficient draws for the two energy
/// bounds.
pub fn run_energy(sc: &Scenario, n_draws: usize, out: Option<&Path>) -> Result<EnergyRunReport> {
    let stage = prepare_geometry(sc)?;
    let g = &stage.grid;
    if g.dim != 1 {
        return Err(Error::Config {
            path: "domain".into(),
            message: "energy fits run on interval scenarios".into(),
        });
    }
    let t_horizon = stage.t_horizon;
    let op = assemble_elliptic(&stage.h, g, LAMBDA0_ELLIPTIC)?;

    // mid-frequency free data: the dual-norm oscillation of E stays inside
    // the drift budget (see the free-wave conservation test)
    let w0 = interval_mode(g, 4);
    let w1 = vec![0.0; g.n_nodes()];
    let free = LowerOrderTerms::free();
    let traj = simulate_wave(&w0, &w1, &free, t_horizon, g, &stage.h, None)?;
    let free_fit = check_energy_bound(&traj, &op, &free, 5, g.dim)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let series = crate::wave::energy_series(&traj, &op, 5);
        write_csv(
            &artifact(dir, "energy_series.csv"),
            &["t", "energy", "l2_norm", "hminus1_norm"],
            &series.iter().map(|&(t, e, l2, hm)| vec![t, e, l2, hm]).collect::<Vec<_>>(),
        )?;
        let f = std::fs::File::create(artifact(dir, "free_trajectory.bin"))?;
        crate::wave::write_trajectory_record(&traj, g, std::io::BufWriter::new(f))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0xe4e);
    let windows = (0.05 * t_horizon, 0.25 * t_horizon, 0.75 * t_horizon, 0.95 * t_horizon);
    let mix0: Vec<f64> = interval_mode(g, 2)
        .iter()
        .zip(interval_mode(g, 3).iter())
        .map(|(a, b)| a + 0.5 * b)
        .collect();
    let mix1 = interval_mode(g, 1);
    let mut draws = Vec::new();
    for draw in 0..n_draws {
        let lot = random_lower_order(&mut rng, 2.0, g.dim);
        let traj = simulate_wave(&mix0, &mix1, &lot, t_horizon, g, &stage.h, None)?;
        let fit = check_energy_bound(&traj, &op, &lot, 5, g.dim)?;
        let ratio = check_integral_bound(&traj, &op, &lot, windows, g.dim)?;
        draws.push(EnergyDrawRow { draw, r: fit.r, fitted_c: fit.fitted_c, integral_ratio: ratio });
    }

    let spread = |vals: Vec<f64>| -> f64 {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).abs()).fold(0.0f64, f64::max) / mean
    };
    let fitted_c_spread = spread(draws.iter().map(|d| d.fitted_c).collect());
    let ratio_spread = spread(draws.iter().map(|d| d.integral_ratio).collect());
    let passed = free_fit.fitted_c <= 0.05
        && draws.iter().all(|d| d.fitted_c.is_finite() && d.integral_ratio.is_finite());

    let report = EnergyRunReport {
        scenario: sc.clone(),
        free_fitted_c: free_fit.fitted_c,
        draws,
        fitted_c_spread,
        ratio_spread,
        passed,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&artifact(dir, "summary.json"), &report)?;
        let rows: Vec<Vec<f64>> = report
            .draws
            .iter()
            .map(|d| vec![d.draw as f64, d.r, d.fitted_c, d.integral_ratio])
            .collect();
        write_csv(
            &artifact(dir, "energy.csv"),
            &["draw", "r", "fitted_c", "integral_ratio"],
            &rows,
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_regions_pipeline_passes() {
        let mut sc = Scenario::reference_1d();
        sc.resolution.space = 101;
        sc.resolution.time = 64;
        sc.resolution.proof = 48;
        let rep = run_regions(&sc, None).unwrap();
        assert!(rep.passed);
        assert!(rep.k_subset_k1);
        assert!(rep.measure_ratio_k_over_k1 < 0.9);
        assert!(rep.chain.unwrap().ok());
        assert_eq!(rep.return_containment_violations, Some(0));
        let w = rep.waiting.unwrap();
        assert!((w.t_new - 1.6).abs() < 1e-12 && (w.t_old - 2.2).abs() < 1e-12);
    }

    #[test]
    fn disk_domain_runs_the_full_geometry_pipeline() {
        let sc = Scenario {
            name: "disk".into(),
            domain: crate::grid::Domain::Disk { center: [0.0, 0.0], radius: 1.0 },
            weight: crate::weight::WeightField::paraboloid([-1.6, 0.0]),
            geometry: crate::scenario::GeometrySpec { delta: 0.8, delta0: 0.3, delta1: 0.25 },
            resolution: crate::scenario::ResolutionSpec { space: 33, time: 32, proof: 24 },
            modes: 4,
            ..Scenario::reference_1d()
        };
        let rep = run_regions(&sc, None).unwrap();
        assert!(rep.passed, "disk regions failed: chain {:?}", rep.chain);
        assert!(rep.gamma0_count > 0);
        assert!(rep.measure_ratio_k_over_k1 < 1.0);
    }

    #[test]
    fn rectangle_observe_pipeline_orders_regions() {
        let sc = Scenario {
            name: "rect-small".into(),
            domain: crate::grid::Domain::Rectangle { lo: [0.0, 0.0], hi: [1.0, 1.0] },
            coefficients: crate::coeff::CoefficientField::Diagonal { values: [2.0, 3.0] },
            weight: crate::weight::WeightField::paraboloid([-0.4, -0.3]),
            geometry: crate::scenario::GeometrySpec { delta: 0.45, delta0: 0.15, delta1: 0.25 },
            resolution: crate::scenario::ResolutionSpec { space: 17, time: 24, proof: 16 },
            modes: 3,
            ..Scenario::reference_1d()
        };
        let rep = run_observe(&sc, None).unwrap();
        assert!(rep.passed);
        assert!(rep.loewner_order_holds);
        assert!(rep.rows[0].mu_min > 0.0);
        assert!(rep.rows[0].measure < rep.rows[1].measure);
    }

    #[test]
    fn identity_run_is_exact_for_zero_family() {
        let mut sc = Scenario::reference_1d();
        sc.resolution.space = 64;
        let rep = run_identity(&sc, 50, None).unwrap();
        assert!(rep.passed, "max rel {}", rep.max_relative_residual);
        let zero_row = rep.rows.iter().find(|r| r.family == "zero").unwrap();
        assert_eq!(zero_row.max_relative_residual, 0.0);
    }

    #[test]
    fn energy_run_produces_finite_fits() {
        let mut sc = Scenario::reference_1d();
        sc.resolution.space = 101;
        let rep = run_energy(&sc, 3, None).unwrap();
        assert!(rep.free_fitted_c <= 0.05);
        assert!(rep.draws.iter().all(|d| d.fitted_c.is_finite()));
    }
}
