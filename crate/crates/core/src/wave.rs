//! Explicit second-order evolution of
//!   w_tt - sum (h^{jk} w_{x_j})_{x_k} = q w + sum q_1^k w_{x_k} + q_2 w_t
//! under homogeneous Dirichlet conditions, the energy
//!   E(t) = (|w_t|_{H^-1}^2 + |w|_{L^2}^2) / 2,
//! and numerical surrogates for the two energy bounds: the propagation
//! constant fit E(t) <= C E(s) e^{Cr} and the window ratio
//! int E dt <= C (1 + r^2) int |w|^2 dt.

use crate::coeff::CoefficientField;
use crate::elliptic::EllipticOperator;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Scalar space-time coefficient with analytic sup and W^{1,infty} norms.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CoefFn {
    Zero,
    Constant { value: f64 },
    /// amp * cos(om_t t) * prod_a sin(pi k_a x_a + phase_a)
    SeparableTrig { amp: f64, om_t: f64, k: [f64; 2], phase: [f64; 2] },
}

impl CoefFn {
    pub fn value(&self, t: f64, x: [f64; 2], dim: usize) -> f64 {
        match *self {
            CoefFn::Zero => 0.0,
            CoefFn::Constant { value } => value,
            CoefFn::SeparableTrig { amp, om_t, k, phase } => {
                let mut v = amp * (om_t * t).cos();
                for a in 0..dim {
                    v *= (std::f64::consts::PI * k[a] * x[a] + phase[a]).sin();
                }
                v
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match *self {
            CoefFn::Zero => 0.0,
            CoefFn::Constant { value } => value.abs(),
            CoefFn::SeparableTrig { amp, .. } => amp.abs(),
        }
    }

    pub fn w1inf_norm(&self, dim: usize) -> f64 {
        match *self {
            CoefFn::Zero => 0.0,
            CoefFn::Constant { value } => value.abs(),
            CoefFn::SeparableTrig { amp, om_t, k, .. } => {
                let mut d = om_t.abs();
                for a in 0..dim {
                    d = d.max(std::f64::consts::PI * k[a].abs());
                }
                amp.abs() * (1.0f64).max(d)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CoefFn::Zero) || matches!(self, CoefFn::Constant { value: 0.0 })
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LowerOrderTerms {
    pub q: CoefFn,
    pub q1: [CoefFn; 2],
    pub q2: CoefFn,
}

impl LowerOrderTerms {
    pub fn free() -> Self {
        LowerOrderTerms { q: CoefFn::Zero, q1: [CoefFn::Zero, CoefFn::Zero], q2: CoefFn::Zero }
    }

    /// r = max of |q|_inf and the W^{1,infty} norms of the drift and damping.
    pub fn r(&self, dim: usize) -> f64 {
        let mut r = self.q.sup_norm();
        for a in 0..dim {
            r = r.max(self.q1[a].w1inf_norm(dim));
        }
        r.max(self.q2.w1inf_norm(dim))
    }

    pub fn all_zero(&self) -> bool {
        self.q.is_zero() && self.q1[0].is_zero() && self.q1[1].is_zero() && self.q2.is_zero()
    }
}

/// Snapshots of the evolution at every time step, boundary trace pinned to
/// zero.
#[derive(Debug, Clone)]
pub struct WaveTrajectory {
    pub dt: f64,
    pub t_horizon: f64,
    /// snaps[n][node] = w(n dt, node); snaps.len() = steps + 1
    pub snaps: Vec<Vec<f64>>,
    pub initial_velocity: Vec<f64>,
}

impl WaveTrajectory {
    pub fn n_steps(&self) -> usize {
        self.snaps.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Centered two-step velocity; one-sided second-order at the ends.
    pub fn velocity(&self, n: usize) -> Vec<f64> {
        let last = self.n_steps();
        if n == 0 {
            return self.initial_velocity.clone();
        }
        let m = self.snaps[0].len();
        let mut v = vec![0.0; m];
        if n == last {
            for i in 0..m {
                v[i] = (3.0 * self.snaps[last][i] - 4.0 * self.snaps[last - 1][i]
                    + self.snaps[last - 2][i])
                    / (2.0 * self.dt);
            }
        } else {
            for i in 0..m {
                v[i] = (self.snaps[n + 1][i] - self.snaps[n - 1][i]) / (2.0 * self.dt);
            }
        }
        v
    }

    fn step_of(&self, t: f64) -> Result<usize> {
        if t < -1e-12 || t > self.t_horizon + 1e-12 {
            return Err(Error::TimeOutOfRange { t, t_max: self.t_horizon });
        }
        Ok(((t / self.dt).round() as usize).min(self.n_steps()))
    }
}

/// Largest stable explicit step for the given coefficients.
pub fn cfl_dt(h: &CoefficientField, g: &Grid) -> f64 {
    0.5 * g.min_spacing() / h.lambda_max(g).sqrt()
}

/// Apply L = sum_k d_k (h^{jk} d_j .): staggered flux form on the diagonal,
/// centered stencils for the off-diagonal entries. Output is zero off the
/// inside nodes.
pub fn apply_l(g: &Grid, h: &CoefficientField, w: &[f64], out: &mut [f64]) {
    let nx = g.shape[0];
    let full = !h.is_diagonal_structured();
    out.iter_mut().for_each(|v| *v = 0.0);
    let offsets: [(isize, usize); 2] = [(1, 0), (nx as isize, 1)];
    for node in 0..g.n_nodes() {
        if !g.inside[node] {
            continue;
        }
        let p = g.node_pos(node);
        let mut acc = 0.0;
        for &(off, axis) in offsets.iter().take(g.dim) {
            let hh = g.spacing[axis] * g.spacing[axis];
            let up = node as isize + off;
            let dn = node as isize - off;
            let wu = if up >= 0 && (up as usize) < w.len() { w[up as usize] } else { 0.0 };
            let wd = if dn >= 0 && (dn as usize) < w.len() { w[dn as usize] } else { 0.0 };
            let mut pu = p;
            pu[axis] += 0.5 * g.spacing[axis];
            let mut pd = p;
            pd[axis] -= 0.5 * g.spacing[axis];
            let cu = h.value(pu)[axis][axis];
            let cd = h.value(pd)[axis][axis];
            acc += (cu * (wu - w[node]) - cd * (w[node] - wd)) / hh;
        }
        if full && g.dim == 2 {
            // cross terms d_1(h12 d_2 w) + d_2(h21 d_1 w), centered
            let grad_at = |n: isize, axis: usize| -> f64 {
                if n < 0 || n as usize >= w.len() {
                    return 0.0;
                }
                let off = if axis == 0 { 1isize } else { nx as isize };
                let a = n + off;
                let b = n - off;
                let wa = if a >= 0 && (a as usize) < w.len() { w[a as usize] } else { 0.0 };
                let wb = if b >= 0 && (b as usize) < w.len() { w[b as usize] } else { 0.0 };
                (wa - wb) / (2.0 * g.spacing[axis])
            };
            let hval = |n: isize, row: usize, col: usize| -> f64 {
                if n < 0 || n as usize >= w.len() {
                    return 0.0;
                }
                h.value(g.node_pos(n as usize))[row][col]
            };
            let n = node as isize;
            let f1p = hval(n + 1, 1, 0) * grad_at(n + 1, 1);
            let f1m = hval(n - 1, 1, 0) * grad_at(n - 1, 1);
            acc += (f1p - f1m) / (2.0 * g.spacing[0]);
            let f2p = hval(n + nx as isize, 0, 1) * grad_at(n + nx as isize, 0);
            let f2m = hval(n - nx as isize, 0, 1) * grad_at(n - nx as isize, 0);
            acc += (f2p - f2m) / (2.0 * g.spacing[1]);
        }
        out[node] = acc;
    }
}

fn gradient(g: &Grid, w: &[f64], node: usize, axis: usize) -> f64 {
    let off: isize = if axis == 0 { 1 } else { g.shape[0] as isize };
    let a = node as isize + off;
    let b = node as isize - off;
    let wa = if a >= 0 && (a as usize) < w.len() { w[a as usize] } else { 0.0 };
    let wb = if b >= 0 && (b as usize) < w.len() { w[b as usize] } else { 0.0 };
    (wa - wb) / (2.0 * g.spacing[axis])
}

/// Taylor start: w(dt) from (w0, w1) to second order.
pub(crate) fn leapfrog_first_step(
    g: &Grid,
    h: &CoefficientField,
    lot: &LowerOrderTerms,
    dt: f64,
    w0: &[f64],
    w1: &[f64],
    out: &mut [f64],
    lw: &mut [f64],
) {
    apply_l(g, h, w0, lw);
    for i in 0..g.n_nodes() {
        out[i] = 0.0;
        if !g.inside[i] {
            continue;
        }
        let p = g.node_pos(i);
        let mut rhs = lw[i] + lot.q.value(0.0, p, g.dim) * w0[i];
        for a in 0..g.dim {
            rhs += lot.q1[a].value(0.0, p, g.dim) * gradient(g, w0, i, a);
        }
        rhs += lot.q2.value(0.0, p, g.dim) * w1[i];
        out[i] = w0[i] + dt * w1[i] + 0.5 * dt * dt * rhs;
    }
}

/// One centered step cur -> out at time t; the damping term uses the
/// centered two-step velocity, solved pointwise. Returns max |out|.
#[allow(clippy::too_many_arguments)]
pub(crate) fn leapfrog_advance(
    g: &Grid,
    h: &CoefficientField,
    lot: &LowerOrderTerms,
    t: f64,
    dt: f64,
    prev: &[f64],
    cur: &[f64],
    out: &mut [f64],
    lw: &mut [f64],
) -> f64 {
    apply_l(g, h, cur, lw);
    let mut max_abs = 0.0f64;
    for i in 0..g.n_nodes() {
        out[i] = 0.0;
        if !g.inside[i] {
            continue;
        }
        let p = g.node_pos(i);
        let mut rhs = lw[i] + lot.q.value(t, p, g.dim) * cur[i];
        for a in 0..g.dim {
            rhs += lot.q1[a].value(t, p, g.dim) * gradient(g, cur, i, a);
        }
        let q2 = lot.q2.value(t, p, g.dim);
        let denom = 1.0 - 0.5 * dt * q2;
        out[i] = (2.0 * cur[i] - prev[i] + dt * dt * rhs - 0.5 * dt * q2 * prev[i]) / denom;
        max_abs = max_abs.max(out[i].abs());
    }
    max_abs
}

/// Step count and step size meeting the stability bound for the horizon.
pub fn stable_steps(
    h: &CoefficientField,
    g: &Grid,
    t_horizon: f64,
    dt_request: Option<f64>,
) -> Result<(usize, f64)> {
    let dt_max = cfl_dt(h, g);
    let dt_target = match dt_request {
        Some(dt) => {
            if dt > dt_max * (1.0 + 1e-9) {
                return Err(Error::CflViolation { dt, dt_max });
            }
            dt
        }
        None => dt_max,
    };
    let steps = (t_horizon / dt_target).ceil() as usize;
    Ok((steps, t_horizon / steps as f64))
}

/// Leapfrog with the damping term taken at the centered two-step velocity,
/// solved pointwise so the update stays explicit.
pub fn simulate_wave(
    w0: &[f64],
    w1: &[f64],
    lot: &LowerOrderTerms,
    t_horizon: f64,
    g: &Grid,
    h: &CoefficientField,
    dt_request: Option<f64>,
) -> Result<WaveTrajectory> {
    let (steps, dt) = stable_steps(h, g, t_horizon, dt_request)?;
    let m = g.n_nodes();
    assert_eq!(w0.len(), m);
    assert_eq!(w1.len(), m);

    let mut snaps = Vec::with_capacity(steps + 1);
    let mut cur = w0.to_vec();
    for i in 0..m {
        if !g.inside[i] {
            cur[i] = 0.0;
        }
    }
    snaps.push(cur.clone());

    let mut lw = vec![0.0; m];
    let mut next = vec![0.0; m];
    leapfrog_first_step(g, h, lot, dt, &cur, w1, &mut next, &mut lw);
    snaps.push(next.clone());

    let mut prev = cur;
    let mut cur = next;
    for n in 1..steps {
        let t = n as f64 * dt;
        let mut next = vec![0.0; m];
        let max_abs = leapfrog_advance(g, h, lot, t, dt, &prev, &cur, &mut next, &mut lw);
        if max_abs > 1e12 {
            return Err(Error::BlowUp { step: n + 1, max: max_abs });
        }
        snaps.push(next.clone());
        prev = cur;
        cur = next;
    }

    Ok(WaveTrajectory { dt, t_horizon, snaps, initial_velocity: w1.to_vec() })
}

/// E(t) = ( |w_t|_{H^-1}^2 + |w|_{L^2}^2 ) / 2 at the nearest step.
pub fn energy(traj: &WaveTrajectory, op: &EllipticOperator, t: f64) -> Result<f64> {
    let n = traj.step_of(t)?;
    Ok(energy_at_step(traj, op, n))
}

pub fn energy_at_step(traj: &WaveTrajectory, op: &EllipticOperator, n: usize) -> f64 {
    let w = &traj.snaps[n];
    let v = traj.velocity(n);
    let l2: f64 = op
        .node_of_row
        .iter()
        .map(|&i| w[i] * w[i])
        .sum::<f64>()
        * op.vol;
    let hm1 = op.hminus1_norm(&v);
    0.5 * (hm1 * hm1 + l2)
}

/// Energy and norms sampled every `stride` steps: (t, E, |w|_L2, |w_t|_H-1).
pub fn energy_series(
    traj: &WaveTrajectory,
    op: &EllipticOperator,
    stride: usize,
) -> Vec<(f64, f64, f64, f64)> {
    let stride = stride.max(1);
    let mut rows = Vec::new();
    let mut n = 0;
    while n <= traj.n_steps() {
        let w = &traj.snaps[n];
        let v = traj.velocity(n);
        let l2 = (op.node_of_row.iter().map(|&i| w[i] * w[i]).sum::<f64>() * op.vol).sqrt();
        let hm1 = op.hminus1_norm(&v);
        rows.push((traj.time(n), 0.5 * (hm1 * hm1 + l2 * l2), l2, hm1));
        n += stride;
    }
    rows
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyFit {
    /// max over time pairs of log(E(t)/E(s)) / (1 + r)
    pub fitted_c: f64,
    pub worst_pair: (f64, f64),
    pub r: f64,
}

/// Propagation-constant surrogate: finiteness and stability of the fit
/// across coefficient draws stands in for E(t) <= C E(s) e^{Cr}.
pub fn check_energy_bound(
    traj: &WaveTrajectory,
    op: &EllipticOperator,
    lot: &LowerOrderTerms,
    stride: usize,
    dim: usize,
) -> Result<EnergyFit> {
    let series = energy_series(traj, op, stride);
    let mut emax = f64::NEG_INFINITY;
    let mut emin = f64::INFINITY;
    let mut tmax = 0.0;
    let mut tmin = 0.0;
    for &(t, e, _, _) in &series {
        if e <= 0.0 {
            return Err(Error::ZeroEnergy);
        }
        if e > emax {
            emax = e;
            tmax = t;
        }
        if e < emin {
            emin = e;
            tmin = t;
        }
    }
    let r = lot.r(dim);
    Ok(EnergyFit {
        fitted_c: (emax / emin).ln() / (1.0 + r),
        worst_pair: (tmax, tmin),
        r,
    })
}

/// Window ratio surrogate: int_{S2}^{T2} E dt / ((1 + r^2) int_{S1}^{T1} |w|^2 dt).
pub fn check_integral_bound(
    traj: &WaveTrajectory,
    op: &EllipticOperator,
    lot: &LowerOrderTerms,
    windows: (f64, f64, f64, f64),
    dim: usize,
) -> Result<f64> {
    let (s1, s2, t2, t1) = windows;
    if !(0.0 <= s1 && s1 < s2 && s2 < t2 && t2 < t1 && t1 <= traj.t_horizon + 1e-12) {
        return Err(Error::WindowOrder);
    }
    let trapz = |lo: f64, hi: f64, f: &dyn Fn(usize) -> f64| -> f64 {
        let a = traj.step_of(lo).unwrap();
        let b = traj.step_of(hi).unwrap();
        let mut acc = 0.0;
        for n in a..b {
            acc += 0.5 * (f(n) + f(n + 1)) * traj.dt;
        }
        acc
    };
    let num = trapz(s2, t2, &|n| energy_at_step(traj, op, n));
    let den = trapz(s1, t1, &|n| {
        op.node_of_row
            .iter()
            .map(|&i| traj.snaps[n][i] * traj.snaps[n][i])
            .sum::<f64>()
            * op.vol
    });
    let r = lot.r(dim);
    if den <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(num / ((1.0 + r * r) * den))
}

/// Binary snapshot record: header (dim, shape, spacings, dt, step count as
/// little-endian u64/f64), then row-major f64 nodes per step.
pub fn write_trajectory_record<W: std::io::Write>(
    traj: &WaveTrajectory,
    g: &Grid,
    mut w: W,
) -> crate::error::Result<()> {
    let mut head = Vec::new();
    head.extend((g.dim as u64).to_le_bytes());
    head.extend((g.shape[0] as u64).to_le_bytes());
    head.extend((g.shape[1] as u64).to_le_bytes());
    head.extend(g.spacing[0].to_le_bytes());
    head.extend(g.spacing[1].to_le_bytes());
    head.extend(traj.dt.to_le_bytes());
    head.extend((traj.snaps.len() as u64).to_le_bytes());
    w.write_all(&head)?;
    for snap in &traj.snaps {
        for v in snap {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Dirichlet mode sin(k pi x) as node data on an interval grid.
pub fn interval_mode(g: &Grid, k: usize) -> Vec<f64> {
    let (a, b) = match g.domain {
        crate::grid::Domain::Interval { a, b } => (a, b),
        _ => panic!("interval_mode needs an interval grid"),
    };
    (0..g.n_nodes())
        .map(|i| {
            let x = (g.node_pos(i)[0] - a) / (b - a);
            if g.inside[i] {
                (k as f64 * std::f64::consts::PI * x).sin()
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::assemble_elliptic;
    use approx::assert_relative_eq;

    fn free_mode_error(n_nodes: usize) -> f64 {
        // w0 = sin(pi x), w1 = 0 evolves as cos(pi t) sin(pi x)
        let g = Grid::interval(0.0, 1.0, n_nodes);
        let h = CoefficientField::Identity;
        let w0 = interval_mode(&g, 1);
        let w1 = vec![0.0; g.n_nodes()];
        let traj =
            simulate_wave(&w0, &w1, &LowerOrderTerms::free(), 1.76, &g, &h, None).unwrap();
        let last = traj.n_steps();
        let t = traj.time(last);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in g.inside_indices() {
            let x = g.node_pos(i)[0];
            let exact = (std::f64::consts::PI * t).cos() * (std::f64::consts::PI * x).sin();
            num += (traj.snaps[last][i] - exact).powi(2);
            den += exact * exact;
        }
        (num / den).sqrt()
    }

    #[test]
    fn lower_order_off_means_r_zero() {
        assert_eq!(LowerOrderTerms::free().r(1), 0.0);
        assert_eq!(LowerOrderTerms::free().r(2), 0.0);
        let lot = LowerOrderTerms {
            q: CoefFn::Constant { value: 0.0 },
            q1: [CoefFn::Zero, CoefFn::Zero],
            q2: CoefFn::Zero,
        };
        assert!(lot.all_zero());
        assert_eq!(lot.r(1), 0.0);
    }

    #[test]
    fn trajectory_record_round_trips_header() {
        let g = Grid::interval(0.0, 1.0, 16);
        let z = vec![0.0; g.n_nodes()];
        let traj = simulate_wave(
            &z, &z, &LowerOrderTerms::free(), 0.2, &g, &CoefficientField::Identity, None,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_record(&traj, &g, &mut buf).unwrap();
        assert_eq!(u64::from_le_bytes(buf[0..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 16);
        let steps = u64::from_le_bytes(buf[48..56].try_into().unwrap()) as usize;
        assert_eq!(steps, traj.snaps.len());
        assert_eq!(buf.len(), 56 + steps * 16 * 8);
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = Grid::interval(0.0, 1.0, 64);
        let z = vec![0.0; g.n_nodes()];
        let traj = simulate_wave(
            &z, &z, &LowerOrderTerms::free(), 1.0, &g, &CoefficientField::Identity, None,
        )
        .unwrap();
        assert!(traj.snaps.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn free_mode_matches_series_solution() {
        let err = free_mode_error(200);
        assert!(err <= 0.01, "relative L2 error {err}");
    }

    #[test]
    fn halving_spacing_cuts_error_by_three() {
        let coarse = free_mode_error(200);
        let fine = free_mode_error(399);
        assert!(fine * 3.0 <= coarse, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn constant_potential_shifts_the_frequency() {
        // w_tt = w_xx + q w with q = -1: mode frequency sqrt(pi^2 + 1)
        let g = Grid::interval(0.0, 1.0, 200);
        let h = CoefficientField::Identity;
        let q = -1.0;
        let lot = LowerOrderTerms {
            q: CoefFn::Constant { value: q },
            q1: [CoefFn::Zero, CoefFn::Zero],
            q2: CoefFn::Zero,
        };
        let w0 = interval_mode(&g, 1);
        let w1 = vec![0.0; g.n_nodes()];
        let traj = simulate_wave(&w0, &w1, &lot, 1.5, &g, &h, None).unwrap();
        let om = (std::f64::consts::PI.powi(2) - q).sqrt();
        let last = traj.n_steps();
        let t = traj.time(last);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in g.inside_indices() {
            let x = g.node_pos(i)[0];
            let exact = (om * t).cos() * (std::f64::consts::PI * x).sin();
            num += (traj.snaps[last][i] - exact).powi(2);
            den += exact * exact;
        }
        let err = (num / den).sqrt();
        assert!(err <= 0.02, "relative error {err}");
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = Grid::interval(0.0, 1.0, 64);
        let h = CoefficientField::Identity;
        let z = vec![0.0; g.n_nodes()];
        let err = simulate_wave(
            &z, &z, &LowerOrderTerms::free(), 1.0, &g, &h,
            Some(10.0 * cfl_dt(&h, &g)),
        );
        assert!(matches!(err, Err(Error::CflViolation { .. })));
    }

    #[test]
    fn antidamping_triggers_the_blowup_guard() {
        let g = Grid::interval(0.0, 1.0, 64);
        let h = CoefficientField::Identity;
        let lot = LowerOrderTerms {
            q: CoefFn::Zero,
            q1: [CoefFn::Zero, CoefFn::Zero],
            q2: CoefFn::Constant { value: 40.0 },
        };
        let w0 = interval_mode(&g, 1);
        let w1 = vec![0.0; g.n_nodes()];
        let err = simulate_wave(&w0, &w1, &lot, 2.5, &g, &h, None);
        assert!(matches!(err, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn free_energy_drift_stays_within_budget() {
        // mode 4: the lambda0-induced oscillation of E is 1/(16 pi^2 + 1),
        // well inside the 1% budget, so this measures solver drift on top
        let g = Grid::interval(0.0, 1.0, 200);
        let h = CoefficientField::Identity;
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let w0 = interval_mode(&g, 4);
        let w1 = vec![0.0; g.n_nodes()];
        let traj =
            simulate_wave(&w0, &w1, &LowerOrderTerms::free(), 1.76, &g, &h, None).unwrap();
        let e0 = energy(&traj, &op, 0.0).unwrap();
        let series = energy_series(&traj, &op, 7);
        for (t, e, _, _) in series {
            assert!(
                (e - e0).abs() / e0 <= 0.01,
                "drift {} at t = {t}",
                (e - e0).abs() / e0
            );
        }
    }

    #[test]
    fn energy_is_quadratic_in_the_data() {
        let g = Grid::interval(0.0, 1.0, 100);
        let h = CoefficientField::Identity;
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let w0 = interval_mode(&g, 2);
        let w1 = interval_mode(&g, 3);
        let traj =
            simulate_wave(&w0, &w1, &LowerOrderTerms::free(), 0.5, &g, &h, None).unwrap();
        let scaled0: Vec<f64> = w0.iter().map(|v| 3.0 * v).collect();
        let scaled1: Vec<f64> = w1.iter().map(|v| 3.0 * v).collect();
        let traj3 =
            simulate_wave(&scaled0, &scaled1, &LowerOrderTerms::free(), 0.5, &g, &h, None)
                .unwrap();
        let e = energy(&traj, &op, 0.3).unwrap();
        let e9 = energy(&traj3, &op, 0.3).unwrap();
        assert_relative_eq!(e9, 9.0 * e, max_relative = 1e-10);
        // zero data has zero energy
        let z = vec![0.0; g.n_nodes()];
        let ztraj =
            simulate_wave(&z, &z, &LowerOrderTerms::free(), 0.5, &g, &h, None).unwrap();
        assert_eq!(energy(&ztraj, &op, 0.2).unwrap(), 0.0);
        assert!(matches!(
            energy(&ztraj, &op, 0.7),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn energy_fit_free_wave_is_drift_only() {
        let g = Grid::interval(0.0, 1.0, 200);
        let h = CoefficientField::Identity;
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let w0 = interval_mode(&g, 4);
        let w1 = vec![0.0; g.n_nodes()];
        let lot = LowerOrderTerms::free();
        let traj = simulate_wave(&w0, &w1, &lot, 1.76, &g, &h, None).unwrap();
        let fit = check_energy_bound(&traj, &op, &lot, 5, 1).unwrap();
        assert!(fit.fitted_c <= 0.05, "fitted constant {}", fit.fitted_c);
        assert_eq!(fit.r, 0.0);
    }

    #[test]
    fn damped_mode_respects_the_exponential_envelope() {
        // q2 = -gamma: energy decays no faster than e^{-gamma t} up to the
        // lambda0 oscillation, so log(E max/E min) <= gamma T + slack
        let g = Grid::interval(0.0, 1.0, 200);
        let h = CoefficientField::Identity;
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let gamma = 0.8;
        let lot = LowerOrderTerms {
            q: CoefFn::Zero,
            q1: [CoefFn::Zero, CoefFn::Zero],
            q2: CoefFn::Constant { value: -gamma },
        };
        let w0 = interval_mode(&g, 3);
        let w1 = vec![0.0; g.n_nodes()];
        let traj = simulate_wave(&w0, &w1, &lot, 1.76, &g, &h, None).unwrap();
        let fit = check_energy_bound(&traj, &op, &lot, 5, 1).unwrap();
        let log_ratio = fit.fitted_c * (1.0 + fit.r);
        assert!(log_ratio <= gamma * 1.76 + 0.15, "log ratio {log_ratio}");
        assert!(fit.fitted_c.is_finite());
    }

    #[test]
    fn zero_energy_is_an_error() {
        let g = Grid::interval(0.0, 1.0, 64);
        let h = CoefficientField::Identity;
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let z = vec![0.0; g.n_nodes()];
        let lot = LowerOrderTerms::free();
        let traj = simulate_wave(&z, &z, &lot, 1.0, &g, &h, None).unwrap();
        assert!(matches!(
            check_energy_bound(&traj, &op, &lot, 4, 1),
            Err(Error::ZeroEnergy)
        ));
        assert!(matches!(
            check_integral_bound(&traj, &op, &lot, (0.0, 0.2, 0.8, 1.0), 1),
            Err(Error::ZeroEnergy)
        ));
    }

    #[test]
    fn window_order_is_validated() {
        let g = Grid::interval(0.0, 1.0, 64);
        let h = CoefficientField::Identity;
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let w0 = interval_mode(&g, 1);
        let w1 = vec![0.0; g.n_nodes()];
        let lot = LowerOrderTerms::free();
        let traj = simulate_wave(&w0, &w1, &lot, 1.0, &g, &h, None).unwrap();
        assert!(matches!(
            check_integral_bound(&traj, &op, &lot, (0.3, 0.2, 0.8, 1.0), 1),
            Err(Error::WindowOrder)
        ));
    }

    #[test]
    fn integral_ratio_stable_under_refinement() {
        let ratio_at = |n: usize| {
            let g = Grid::interval(0.0, 1.0, n);
            let h = CoefficientField::Identity;
            let op = assemble_elliptic(&h, &g, 1.0).unwrap();
            let w0 = interval_mode(&g, 1);
            let w1 = vec![0.0; g.n_nodes()];
            let lot = LowerOrderTerms::free();
            let traj = simulate_wave(&w0, &w1, &lot, 1.76, &g, &h, None).unwrap();
            check_integral_bound(&traj, &op, &lot, (0.1, 0.4, 1.3, 1.7), 1).unwrap()
        };
        let coarse = ratio_at(100);
        let fine = ratio_at(200);
        assert!(coarse.is_finite() && fine.is_finite());
        assert!(
            (coarse - fine).abs() / fine <= 0.1,
            "coarse {coarse}, fine {fine}"
        );
    }
}
