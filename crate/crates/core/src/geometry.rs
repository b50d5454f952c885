//! Observation geometry: the observed boundary portion, its distance
//! neighborhoods, waiting times, the space-time observation regions (plain
//! and shifted), and the (t, s, x) proof-layer sets with their inclusion
//! chain.

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Grid, Point, SpatialMask};
use crate::region::{Axis, SpaceTimeRegion};
use crate::weight::{closure_points, WeightField};

/// Boundary nodes where the conormal derivative of the weight points
/// outward: sum h^{jk} d_{x_j} nu_k > 0. Indices refer to `g.boundary`.
pub fn compute_gamma0(h: &CoefficientField, d: &WeightField, g: &Grid) -> Vec<usize> {
    g.boundary
        .iter()
        .enumerate()
        .filter(|(_, bn)| conormal(h, d, g.dim, bn.pos, bn.normal) > 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn conormal(h: &CoefficientField, d: &WeightField, dim: usize, x: Point, nu: Point) -> f64 {
    let hv = h.value(x);
    let grad = d.jet(dim, x).grad;
    let mut acc = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            acc += hv[j][k] * grad[j] * nu[k];
        }
    }
    acc
}

pub fn gamma0_positions(g: &Grid, gamma0: &[usize]) -> Vec<Point> {
    gamma0.iter().map(|&i| g.boundary[i].pos).collect()
}

fn dist_to_set(p: Point, set: &[Point], dim: usize) -> f64 {
    set.iter()
        .map(|q| {
            if dim == 1 {
                (p[0] - q[0]).abs()
            } else {
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Nodes exactly on the neighborhood sphere must resolve to the open-set
/// side regardless of rounding in the node coordinates.
#[inline]
pub(crate) fn in_open_ball(dist: f64, radius: f64) -> bool {
    dist < radius - 1e-12 * (1.0 + radius)
}

/// Inside nodes within distance `radius` of the observed boundary portion.
pub fn neighborhood_mask(g: &Grid, gamma0_pos: &[Point], radius: f64) -> SpatialMask {
    (0..g.n_nodes())
        .map(|i| {
            g.inside[i] && in_open_ball(dist_to_set(g.node_pos(i), gamma0_pos, g.dim), radius)
        })
        .collect()
}

/// omega = O_delta(Gamma0) cap Omega and omega0 = O_delta0(Gamma0) cap Omega.
pub fn build_neighborhoods(
    gamma0: &[usize],
    delta: f64,
    delta0: f64,
    g: &Grid,
) -> Result<(SpatialMask, SpatialMask)> {
    if gamma0.is_empty() {
        return Err(Error::EmptyGamma0);
    }
    if !(0.0 < delta0 && delta0 < delta) {
        return Err(Error::RadiusOrder { delta0, delta });
    }
    let pos = gamma0_positions(g, gamma0);
    Ok((
        neighborhood_mask(g, &pos, delta),
        neighborhood_mask(g, &pos, delta0),
    ))
}

/// Sample points of the closed domain off the open delta-ball of Gamma0.
fn closure_points_off_neighborhood(g: &Grid, gamma0_pos: &[Point], radius: f64) -> Vec<Point> {
    closure_points(g)
        .into_iter()
        .filter(|&p| !in_open_ball(dist_to_set(p, gamma0_pos, g.dim), radius))
        .collect()
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TimeScales {
    /// min over the closed domain of sqrt(d)
    pub r0: f64,
    /// max of sqrt(d) off the observation neighborhood
    pub r1: f64,
    /// 2 r1 for the supplied weight
    pub tstar: f64,
}

/// Radii and waiting time for the supplied weight. The max defining r1 runs
/// over the closed domain minus the open delta-ball of Gamma0 (boundary
/// points near Gamma0 are swallowed by the neighborhood, distant ones kept).
pub fn compute_times(
    d: &WeightField,
    g: &Grid,
    gamma0: &[usize],
    delta: f64,
) -> Result<TimeScales> {
    let pos = gamma0_positions(g, gamma0);
    let complement = closure_points_off_neighborhood(g, &pos, delta);
    if complement.is_empty() {
        return Err(Error::EmptyComplement);
    }
    let r0 = closure_points(g)
        .iter()
        .map(|&p| d.value(g.dim, p))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt();
    let r1 = complement
        .iter()
        .map(|&p| d.value(g.dim, p))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
        .sqrt();
    Ok(TimeScales { r0, r1, tstar: 2.0 * r1 })
}

/// Shifted variant: r1 = max over the same set of max(sqrt d, sqrt d(.+zeta)).
pub fn compute_times_shifted(
    d: &WeightField,
    zeta: Point,
    g: &Grid,
    gamma0: &[usize],
    delta: f64,
) -> Result<TimeScales> {
    let dz = d.shifted(zeta);
    let pos = gamma0_positions(g, gamma0);
    let complement = closure_points_off_neighborhood(g, &pos, delta);
    if complement.is_empty() {
        return Err(Error::EmptyComplement);
    }
    let r0 = closure_points(g)
        .iter()
        .map(|&p| 0.5 * (d.value(g.dim, p) + dz.value(g.dim, p)))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt();
    let r1 = complement
        .iter()
        .map(|&p| d.value(g.dim, p).max(dz.value(g.dim, p)))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
        .sqrt();
    Ok(TimeScales { r0, r1, tstar: 2.0 * r1 })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CarlemanParameters {
    pub t_horizon: f64,
    pub alpha: f64,
    pub c: f64,
    /// eps0 < eps1 < eps2 < eps3 < 1/2
    pub eps_ladder: [f64; 4],
    /// inner level margin for the nested level sets
    pub eps: f64,
    pub delta: f64,
    pub delta0: f64,
    pub delta1: f64,
    /// radii of the proof-internal neighborhoods omega1, omega2
    pub rho1: f64,
    pub rho2: f64,
    pub zeta: Option<[f64; 2]>,
}

impl CarlemanParameters {
    pub fn window(&self, i: usize) -> (f64, f64) {
        let e = self.eps_ladder[i];
        (
            self.t_horizon / 2.0 - e * self.t_horizon,
            self.t_horizon / 2.0 + e * self.t_horizon,
        )
    }

    pub fn phi(&self, d_val: f64, t: f64, s: f64) -> f64 {
        let half = self.t_horizon / 2.0;
        d_val - self.alpha * (t - half).powi(2) - self.alpha * (s - half).powi(2)
    }
}

/// D = {(t,x) : d(x) - (t - T/2)^2 > 0} on the product of `taxis` and the
/// lattice.
pub fn build_cone_region(
    d: &WeightField,
    t_horizon: f64,
    taxis: Axis,
    g: &Grid,
) -> SpaceTimeRegion {
    let half = t_horizon / 2.0;
    SpaceTimeRegion::materialize(vec![taxis], g, |tl, _, p| {
        d.value(g.dim, p) - (tl[0] - half).powi(2) > 0.0
    })
}

/// K = ((T/2 - delta1 T, T/2 + delta1 T) x omega0) cup ((0,T) x (omega \ omega0) cap D).
#[allow(clippy::too_many_arguments)]
pub fn build_observation_region(
    d: &WeightField,
    t_horizon: f64,
    delta1: f64,
    omega: &SpatialMask,
    omega0: &SpatialMask,
    taxis: Axis,
    g: &Grid,
    closed: bool,
) -> SpaceTimeRegion {
    let half = t_horizon / 2.0;
    let width = delta1 * t_horizon;
    SpaceTimeRegion::materialize(vec![taxis], g, |tl, node, p| {
        let dt = tl[0] - half;
        let slab = if closed {
            dt.abs() <= width
        } else {
            dt.abs() < width
        };
        let cone = if closed {
            d.value(g.dim, p) - dt * dt >= 0.0
        } else {
            d.value(g.dim, p) - dt * dt > 0.0
        };
        (omega0[node] && slab) || (omega[node] && !omega0[node] && cone)
    })
}

/// The cylinder comparator K1 = (0,T) x omega.
pub fn build_cylinder_region(omega: &SpatialMask, taxis: Axis, g: &Grid) -> SpaceTimeRegion {
    SpaceTimeRegion::materialize(vec![taxis], g, |_, node, _| omega[node])
}

/// The light-cone comparator K2 = K1 cap {d(x) > t^2}.
pub fn build_k2_region(
    d: &WeightField,
    omega: &SpatialMask,
    taxis: Axis,
    g: &Grid,
) -> SpaceTimeRegion {
    SpaceTimeRegion::materialize(vec![taxis], g, |tl, node, p| {
        omega[node] && d.value(g.dim, p) > tl[0] * tl[0]
    })
}

pub struct ShiftedRegions {
    pub gamma0_zeta: Vec<usize>,
    pub d_zeta: SpaceTimeRegion,
    pub k_zeta: SpaceTimeRegion,
    pub scales: TimeScales,
}

/// Shifted constructions: boundary portion, cone and observation region for
/// d(. + zeta), plus the joint radii. Checks that the critical point stays
/// in the closed domain and that omega0 still covers a delta2-neighborhood
/// of the shifted boundary portion for some delta2 < delta0.
#[allow(clippy::too_many_arguments)]
pub fn build_shifted_regions(
    d: &WeightField,
    zeta: Point,
    t_horizon: f64,
    delta1: f64,
    h: &CoefficientField,
    g: &Grid,
    omega: &SpatialMask,
    omega0: &SpatialMask,
    gamma0: &[usize],
    delta: f64,
    delta0: f64,
    taxis: Axis,
) -> Result<ShiftedRegions> {
    if let Some(x0) = d.critical_point() {
        let moved = [x0[0] - zeta[0], x0[1] - zeta[1]];
        let (lo, hi) = g.domain.bounding_box();
        let inside_closed = match g.domain {
            crate::grid::Domain::Disk { center, radius } => {
                let dx = moved[0] - center[0];
                let dy = moved[1] - center[1];
                (dx * dx + dy * dy).sqrt() <= radius + 1e-12
            }
            _ => {
                (lo[0]..=hi[0]).contains(&moved[0])
                    && (g.dim == 1 || (lo[1]..=hi[1]).contains(&moved[1]))
            }
        };
        if !inside_closed {
            return Err(Error::ShiftOutOfDomain);
        }
    }

    let dz = d.shifted(zeta);
    let gamma0_zeta = compute_gamma0(h, &dz, g);
    if gamma0_zeta.is_empty() {
        return Err(Error::EmptyGamma0);
    }

    // existence of delta2 < delta0 with O_delta2(Gamma0_zeta) cap Omega inside
    // omega0: take the largest candidate on a radius grid below delta0
    let zpos = gamma0_positions(g, &gamma0_zeta);
    let delta2 = (1..20).rev().map(|k| delta0 * k as f64 / 20.0).find(|&r| {
        let nb = neighborhood_mask(g, &zpos, r);
        nb.iter().zip(omega0).all(|(&a, &b)| !a || b)
    });
    if delta2.is_none() {
        return Err(Error::Delta2Containment);
    }

    let scales = compute_times_shifted(d, zeta, g, gamma0, delta)?;
    let d_zeta = build_cone_region(&dz, t_horizon, taxis.clone(), g);
    let k_zeta =
        build_observation_region(&dz, t_horizon, delta1, omega, omega0, taxis, g, false);
    Ok(ShiftedRegions { gamma0_zeta, d_zeta, k_zeta, scales })
}

// ---------------------------------------------------------------------------
// proof-layer (t, s, x) sets and the parameter selector
// ---------------------------------------------------------------------------

pub struct ProofSets {
    pub qb_c: SpaceTimeRegion,
    pub qb_c_eps: SpaceTimeRegion,
    pub qb_c_2eps: SpaceTimeRegion,
    pub d_prime: SpaceTimeRegion,
    pub d_second: SpaceTimeRegion,
}

/// Q(b) = {phi > b^2, x in Omega \ omega1} on the (t, s, x) product grid.
pub fn build_level_set(
    d: &WeightField,
    p: &CarlemanParameters,
    b: f64,
    omega1: &SpatialMask,
    taxes: [Axis; 2],
    g: &Grid,
) -> SpaceTimeRegion {
    SpaceTimeRegion::materialize(taxes.to_vec(), g, |tl, node, x| {
        !omega1[node] && p.phi(d.value(g.dim, x), tl[0], tl[1]) > b * b
    })
}

pub fn build_proof_sets(
    d: &WeightField,
    p: &CarlemanParameters,
    omega1: &SpatialMask,
    taxes: [Axis; 2],
    g: &Grid,
) -> ProofSets {
    let half = p.t_horizon / 2.0;
    let bracket =
        move |d_val: f64, t: f64, s: f64| d_val - (t - half).powi(2) - (s - half).powi(2);
    let d_prime = SpaceTimeRegion::materialize(taxes.to_vec(), g, |tl, node, x| {
        !omega1[node] && bracket(d.value(g.dim, x), tl[0], tl[1]) > 0.0
    });
    let d_second = SpaceTimeRegion::materialize(taxes.to_vec(), g, |tl, _, x| {
        bracket(d.value(g.dim, x), tl[0], tl[1]) > 0.0
    });
    ProofSets {
        qb_c: build_level_set(d, p, p.c, omega1, taxes.clone(), g),
        qb_c_eps: build_level_set(d, p, p.c + p.eps, omega1, taxes.clone(), g),
        qb_c_2eps: build_level_set(d, p, p.c + 2.0 * p.eps, omega1, taxes, g),
        d_prime,
        d_second,
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainLink {
    pub name: String,
    pub violations: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainReport {
    pub links: Vec<ChainLink>,
}

impl ChainReport {
    pub fn ok(&self) -> bool {
        self.links.iter().all(|l| l.violations == 0)
    }

    pub fn first_broken(&self) -> Option<&ChainLink> {
        self.links.iter().find(|l| l.violations > 0)
    }
}

/// Node-exact verification of the nested inclusions
/// Q0\Q0' in Q(c+2e) in Q(c+e) in Q(c) in D' in Q1\Q1',
/// plus the window box (T0,T0')^2 x Omega in D''.
pub fn verify_inclusion_chain(
    d: &WeightField,
    p: &CarlemanParameters,
    omega1: &SpatialMask,
    taxes: [Axis; 2],
    g: &Grid,
) -> ChainReport {
    let (t0, t0p) = p.window(0);
    let (t1, t1p) = p.window(1);
    let half = p.t_horizon / 2.0;
    let mut links = vec![
        ChainLink { name: "Q0\\Q0' in Q(c+2eps)".into(), violations: 0 },
        ChainLink { name: "Q(c+2eps) in Q(c+eps)".into(), violations: 0 },
        ChainLink { name: "Q(c+eps) in Q(c)".into(), violations: 0 },
        ChainLink { name: "Q(c) in D'".into(), violations: 0 },
        ChainLink { name: "D' in Q1\\Q1'".into(), violations: 0 },
        ChainLink { name: "window box in D''".into(), violations: 0 },
    ];
    let d_vals: Vec<f64> = (0..g.n_nodes()).map(|i| d.value(g.dim, g.node_pos(i))).collect();
    for &t in &taxes[0].coords {
        for &s in &taxes[1].coords {
            let in_window0 = t > t0 && t < t0p && s > t0 && s < t0p;
            let in_window1 = t > t1 && t < t1p && s > t1 && s < t1p;
            for node in 0..g.n_nodes() {
                if !g.inside[node] {
                    continue;
                }
                let dv = d_vals[node];
                let bracket = dv - (t - half).powi(2) - (s - half).powi(2);
                if in_window0 && bracket <= 0.0 {
                    links[5].violations += 1; // (T0,T0')^2 x Omega must sit in D''
                }
                if omega1[node] {
                    continue;
                }
                let phi = p.phi(dv, t, s);
                let q_c = phi > p.c * p.c;
                let q_ce = phi > (p.c + p.eps).powi(2);
                let q_c2e = phi > (p.c + 2.0 * p.eps).powi(2);
                let dprime = bracket > 0.0;
                if in_window0 && !q_c2e {
                    links[0].violations += 1;
                }
                if q_c2e && !q_ce {
                    links[1].violations += 1;
                }
                if q_ce && !q_c {
                    links[2].violations += 1;
                }
                if q_c && !dprime {
                    links[3].violations += 1;
                }
                if dprime && !in_window1 {
                    links[4].violations += 1;
                }
            }
        }
    }
    ChainReport { links }
}

/// Proof-internal neighborhoods omega0 subset omega1 subset omega2 subset
/// omega. Radii start at the equispaced thirds and rho1 grows adaptively
/// until d < T^2/4 holds off omega1 (with margin), which the time-window
/// selection requires.
pub fn choose_inner_neighborhoods(
    d: &WeightField,
    t_horizon: f64,
    g: &Grid,
    gamma0: &[usize],
    delta0: f64,
    delta: f64,
) -> Result<(f64, f64, SpatialMask, SpatialMask)> {
    let pos = gamma0_positions(g, gamma0);
    let limit = t_horizon * t_horizon / 4.0;
    let max_off = |rho: f64| -> f64 {
        closure_points_off_neighborhood(g, &pos, rho)
            .iter()
            .map(|&p| d.value(g.dim, p))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut rho1 = delta0 + (delta - delta0) / 3.0;
    if max_off(rho1) >= limit * (1.0 - 1e-9) {
        // smallest feasible radius by bisection, then a margin toward delta
        let (mut lo, mut hi) = (rho1, delta);
        if max_off(hi) >= limit {
            let worst = closure_points_off_neighborhood(g, &pos, hi)
                .into_iter()
                .max_by(|a, b| {
                    d.value(g.dim, *a).partial_cmp(&d.value(g.dim, *b)).unwrap()
                })
                .unwrap();
            return Err(Error::Step2Bound { value: d.value(g.dim, worst), limit });
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if max_off(mid) < limit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        rho1 = hi + 0.25 * (delta - hi);
    }
    let rho2 = 0.5 * (rho1 + delta);
    let omega1 = neighborhood_mask(g, &pos, rho1);
    let omega2 = neighborhood_mask(g, &pos, rho2);
    Ok((rho1, rho2, omega1, omega2))
}

/// Step-2 parameter selection: pick c just below r0, alpha in the middle of
/// its admissible window, the time-window ladder and the level margin so the
/// discrete inclusion chain holds, retrying with tighter windows a bounded
/// number of times.
#[allow(clippy::too_many_arguments)]
pub fn select_carleman_parameters(
    d: &WeightField,
    t_horizon: f64,
    omega1: &SpatialMask,
    rho1: f64,
    rho2: f64,
    g: &Grid,
    gamma0: &[usize],
    delta: f64,
    delta0: f64,
    delta1: f64,
    tsx: [usize; 3],
    zeta: Option<[f64; 2]>,
) -> Result<CarlemanParameters> {
    let pos = gamma0_positions(g, gamma0);
    let limit = t_horizon * t_horizon / 4.0;
    // Step-2 precondition: d < T^2/4 off omega1
    let mut max_off = f64::NEG_INFINITY;
    for p in closure_points_off_neighborhood(g, &pos, rho1) {
        let v = d.value(g.dim, p);
        if v >= limit {
            return Err(Error::Step2Bound { value: v, limit });
        }
        max_off = max_off.max(v);
    }

    let r0 = closure_points(g)
        .iter()
        .map(|&p| d.value(g.dim, p))
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    let c = 0.95 * r0;
    if !(c > 0.0) {
        return Err(Error::NoFeasibleParameters {
            link: "min d must be positive".into(),
            violations: 0,
        });
    }
    let alpha = 1.0 - c * c / (t_horizon * t_horizon);

    let mut eps1 = 0.5 * (max_off.sqrt() / t_horizon + 0.5);
    let budget = r0 * r0 - c * c;
    let mut eps0 = (budget / (8.0 * alpha * t_horizon * t_horizon))
        .sqrt()
        .min(0.9 * delta1)
        .min(0.5 * eps1);

    for _ in 0..8 {
        let cap = (r0 * r0 - 2.0 * alpha * eps0 * eps0 * t_horizon * t_horizon).max(0.0);
        let eps = 0.25 * (cap.sqrt() - c).max(0.0);
        if eps <= 0.0 {
            eps0 *= 0.5;
            continue;
        }
        let eps2 = eps1 + (0.5 - eps1) / 3.0;
        let eps3 = eps1 + 2.0 * (0.5 - eps1) / 3.0;
        let params = CarlemanParameters {
            t_horizon,
            alpha,
            c,
            eps_ladder: [eps0, eps1, eps2, eps3],
            eps,
            delta,
            delta0,
            delta1,
            rho1,
            rho2,
            zeta,
        };
        let taxes = [
            Axis::cells(0.0, t_horizon, tsx[0]),
            Axis::cells(0.0, t_horizon, tsx[1]),
        ];
        let report = verify_inclusion_chain(d, &params, omega1, taxes, g);
        if report.ok() {
            return Ok(params);
        }
        eps0 *= 0.5;
        eps1 = 0.5 * (eps1 + 0.5);
    }

    let taxes = [
        Axis::cells(0.0, t_horizon, tsx[0]),
        Axis::cells(0.0, t_horizon, tsx[1]),
    ];
    let params = CarlemanParameters {
        t_horizon,
        alpha,
        c,
        eps_ladder: [eps0, eps1, 0.49, 0.499],
        eps: 1e-6,
        delta,
        delta0,
        delta1,
        rho1,
        rho2,
        zeta,
    };
    let report = verify_inclusion_chain(d, &params, omega1, taxes, g);
    let broken = report.first_broken().expect("retries exhausted with a broken link");
    Err(Error::NoFeasibleParameters {
        link: broken.name.clone(),
        violations: broken.violations,
    })
}

/// The slab-and-cone containment used when returning from the proof layer to
/// (t, x): (D cap (0,T) x (omega\omega0)) cup ((T0,T0') x omega2) must land
/// inside K. Returns the number of violating nodes.
pub fn verify_return_containment(
    d: &WeightField,
    p: &CarlemanParameters,
    omega: &SpatialMask,
    omega0: &SpatialMask,
    omega2: &SpatialMask,
    taxis: &Axis,
    g: &Grid,
) -> usize {
    let half = p.t_horizon / 2.0;
    let (t0, t0p) = p.window(0);
    let width = p.delta1 * p.t_horizon;
    let mut violations = 0;
    for &t in &taxis.coords {
        for node in g.inside_indices() {
            let x = g.node_pos(node);
            let dv = d.value(g.dim, x);
            let cone = dv - (t - half).powi(2) > 0.0;
            let lhs = (cone && omega[node] && !omega0[node])
                || (t > t0 && t < t0p && omega2[node]);
            if !lhs {
                continue;
            }
            let slab = (t - half).abs() < width && omega0[node];
            let k = slab || (omega[node] && !omega0[node] && cone);
            if !k {
                violations += 1;
            }
        }
    }
    violations
}
