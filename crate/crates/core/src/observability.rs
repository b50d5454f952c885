//! Discrete observability: the Gramian of the observation quadratic form
//! int_K |w|^2 over a truncated initial-data space, the empirical
//! observability constant as the reciprocal smallest eigenvalue of the
//! pencil (G, M), region comparison tables and the waiting-time readout.

use crate::coeff::CoefficientField;
use crate::elliptic::EllipticOperator;
use crate::error::{Error, Result};
use crate::geometry::gamma0_positions;
use crate::grid::{Grid, Point};
use crate::region::SpaceTimeRegion;
use crate::wave::{leapfrog_advance, leapfrog_first_step, stable_steps, LowerOrderTerms};
use crate::weight::{closure_points, WeightField};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Truncated initial-data space: Dirichlet eigenpairs (mu_i, e_i) of -L and
/// the 2m basis data {(e_i, 0)} cup {(0, e_i)}.
#[derive(Debug, Clone)]
pub struct InitialDataBasis {
    pub m: usize,
    pub eigenvalues: Vec<f64>,
    /// node-indexed, orthonormal in the grid L2 inner product
    pub modes: Vec<Vec<f64>>,
}

pub fn build_basis(op: &EllipticOperator, m: usize) -> Result<InitialDataBasis> {
    let (eigenvalues, modes) = op.eigenpairs(m)?;
    Ok(InitialDataBasis { m, eigenvalues, modes })
}

impl InitialDataBasis {
    /// Basis datum a in 0..2m as (w0, w1); the first m are position data.
    pub fn datum(&self, a: usize, n_nodes: usize) -> (Vec<f64>, Vec<f64>) {
        let zero = vec![0.0; n_nodes];
        if a < self.m {
            (self.modes[a].clone(), zero)
        } else {
            (zero, self.modes[a - self.m].clone())
        }
    }
}

pub struct GramianSystem {
    pub g_matrix: DMatrix<f64>,
    pub m_matrix: DMatrix<f64>,
}

/// Evolve the 2m basis trajectories in lockstep and accumulate, for every
/// region, G_ab = int_K w_a w_b dx dt by trapezoid-in-time, midpoint-in-space
/// quadrature. The regions must be materialized on the solver's (t, x) grid.
pub fn assemble_gramians(
    basis: &InitialDataBasis,
    lot: &LowerOrderTerms,
    regions: &[&SpaceTimeRegion],
    t_horizon: f64,
    g: &Grid,
    h: &CoefficientField,
    op: &EllipticOperator,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let n2 = 2 * basis.m;
    let n_nodes = g.n_nodes();

    // region/solver compatibility
    let (steps, dt) = stable_steps(h, g, t_horizon, None)?;
    for r in regions {
        if r.taxes.len() != 1 || r.n_nodes != n_nodes {
            return Err(Error::GridMismatch("region must live on the solver (t, x) grid".into()));
        }
        let coords = &r.taxes[0].coords;
        if coords.len() != steps + 1
            || (coords[0]).abs() > 1e-9
            || (coords[coords.len() - 1] - t_horizon).abs() > 1e-9
        {
            return Err(Error::GridMismatch(format!(
                "region time axis has {} nodes; solver needs {} over [0, {}]",
                coords.len(),
                steps + 1,
                t_horizon
            )));
        }
    }

    // M: L2 x H^-1 inner products of the data; off-diagonal blocks vanish
    let mut m_matrix = DMatrix::zeros(n2, n2);
    for i in 0..basis.m {
        for j in i..basis.m {
            let dot: f64 = op
                .node_of_row
                .iter()
                .map(|&n| basis.modes[i][n] * basis.modes[j][n])
                .sum::<f64>()
                * op.vol;
            m_matrix[(i, j)] = dot;
            m_matrix[(j, i)] = dot;
        }
    }
    let inverses: Vec<Vec<f64>> = basis.modes.iter().map(|e| op.solve(e)).collect();
    for i in 0..basis.m {
        for j in i..basis.m {
            let dot: f64 = op
                .node_of_row
                .iter()
                .map(|&n| basis.modes[i][n] * inverses[j][n])
                .sum::<f64>()
                * op.vol;
            m_matrix[(basis.m + i, basis.m + j)] = dot;
            m_matrix[(basis.m + j, basis.m + i)] = dot;
        }
    }

    // lockstep ensemble
    struct State {
        prev: Vec<f64>,
        cur: Vec<f64>,
    }
    let mut states: Vec<State> = (0..n2)
        .map(|a| {
            let (w0, w1) = basis.datum(a, n_nodes);
            let mut first = vec![0.0; n_nodes];
            let mut lw = vec![0.0; n_nodes];
            leapfrog_first_step(g, h, lot, dt, &w0, &w1, &mut first, &mut lw);
            State { prev: w0, cur: first }
        })
        .collect();

    let mut grams = vec![DMatrix::zeros(n2, n2); regions.len()];

    fn accumulate(
        grams: &mut [DMatrix<f64>],
        regions: &[&SpaceTimeRegion],
        snapshots: &[&[f64]],
        step: usize,
        n_nodes: usize,
        values: &mut [f64],
    ) {
        let n2 = snapshots.len();
        for (ri, region) in regions.iter().enumerate() {
            let base = step * n_nodes;
            let mask = &region.mask[base..base + n_nodes];
            let w = region.taxes[0].weights[step] * region.node_weight;
            for (node, &active) in mask.iter().enumerate() {
                if !active {
                    continue;
                }
                for (value, snap) in values.iter_mut().zip(snapshots) {
                    *value = snap[node];
                }
                for a in 0..n2 {
                    let va = w * values[a];
                    if va == 0.0 {
                        continue;
                    }
                    for b in a..n2 {
                        grams[ri][(a, b)] += va * values[b];
                    }
                }
            }
        }
    }

    let mut values = vec![0.0; n2];
    {
        let snaps: Vec<&[f64]> = states.iter().map(|s| s.prev.as_slice()).collect();
        accumulate(&mut grams, regions, &snaps, 0, n_nodes, &mut values);
        let snaps: Vec<&[f64]> = states.iter().map(|s| s.cur.as_slice()).collect();
        accumulate(&mut grams, regions, &snaps, 1, n_nodes, &mut values);
    }

    for n in 1..steps {
        let t = n as f64 * dt;
        let blow = states
            .par_iter_mut()
            .map(|st| {
                let mut next = vec![0.0; n_nodes];
                let mut lw = vec![0.0; n_nodes];
                let max_abs =
                    leapfrog_advance(g, h, lot, t, dt, &st.prev, &st.cur, &mut next, &mut lw);
                st.prev = std::mem::replace(&mut st.cur, next);
                max_abs
            })
            .reduce(|| 0.0, f64::max);
        if blow > 1e12 {
            return Err(Error::SolverFailure {
                index: n,
                source: Box::new(Error::BlowUp { step: n + 1, max: blow }),
            });
        }
        let snaps: Vec<&[f64]> = states.iter().map(|s| s.cur.as_slice()).collect();
        accumulate(&mut grams, regions, &snaps, n + 1, n_nodes, &mut values);
    }

    for gm in &mut grams {
        for a in 0..n2 {
            for b in 0..a {
                gm[(a, b)] = gm[(b, a)];
            }
        }
    }
    Ok((grams, m_matrix))
}

pub fn assemble_gramian(
    basis: &InitialDataBasis,
    lot: &LowerOrderTerms,
    region: &SpaceTimeRegion,
    t_horizon: f64,
    g: &Grid,
    h: &CoefficientField,
    op: &EllipticOperator,
) -> Result<GramianSystem> {
    let (mut grams, m_matrix) =
        assemble_gramians(basis, lot, &[region], t_horizon, g, h, op)?;
    Ok(GramianSystem { g_matrix: grams.pop().unwrap(), m_matrix })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PencilReport {
    pub mu_min: f64,
    pub mu_max: f64,
    /// None flags non-observability at this resolution (mu_min under the floor)
    pub c_obs: Option<f64>,
    pub floor: f64,
}

/// Smallest eigenvalue of the pencil (G, M) by symmetric whitening with the
/// Cholesky factor of M; the machine floor scales with the whitened trace.
pub fn estimate_constant(gs: &GramianSystem) -> Result<PencilReport> {
    let n = gs.g_matrix.nrows();
    let chol = nalgebra::Cholesky::new(gs.m_matrix.clone())
        .ok_or_else(|| Error::Eigen("data Gram matrix not positive definite".into()))?;
    let l = chol.l();
    let y = l.solve_lower_triangular(&gs.g_matrix).unwrap();
    let w = l.solve_lower_triangular(&y.transpose()).unwrap();
    let mut sym = w.clone();
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] = 0.5 * (w[(i, j)] + w[(j, i)]);
        }
    }
    let eig = sym.symmetric_eigen();
    let mu_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let mu_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = 1e-12 * eig.eigenvalues.iter().sum::<f64>().abs();
    Ok(PencilReport {
        mu_min,
        mu_max,
        c_obs: if mu_min > floor { Some(1.0 / mu_min) } else { None },
        floor,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TheoreticalConstant {
    /// C exp(exp(C r)); None when it overflows the float range
    pub value: Option<f64>,
    /// ln of the same, always finite for finite exp(C r)
    pub ln_value: f64,
}

/// Double-exponential form of the observability constant. Reported next to
/// the empirical value, never asserted against it.
pub fn theoretical_constant(r: f64, fit_c: f64) -> TheoreticalConstant {
    assert!(r >= 0.0 && fit_c > 0.0);
    let inner = (fit_c * r).exp();
    let ln_value = fit_c.ln() + inner;
    TheoreticalConstant {
        value: if ln_value < 700.0 { Some(ln_value.exp()) } else { None },
        ln_value,
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RegionRow {
    pub name: String,
    pub measure: f64,
    pub mu_min: f64,
    pub c_obs: Option<f64>,
}

/// Per-region Gramian spectra over shared trajectories. Caller asserts the
/// orderings it expects; rows report measure, mu_min and the empirical
/// constant.
#[allow(clippy::too_many_arguments)]
pub fn compare_regions(
    named: &[(String, &SpaceTimeRegion)],
    basis: &InitialDataBasis,
    lot: &LowerOrderTerms,
    t_horizon: f64,
    g: &Grid,
    h: &CoefficientField,
    op: &EllipticOperator,
) -> Result<Vec<RegionRow>> {
    let regions: Vec<&SpaceTimeRegion> = named.iter().map(|(_, r)| *r).collect();
    let (grams, m_matrix) =
        assemble_gramians(basis, lot, &regions, t_horizon, g, h, op)?;
    let mut rows = Vec::new();
    for ((name, region), g_matrix) in named.iter().zip(grams) {
        let rep = estimate_constant(&GramianSystem { g_matrix, m_matrix: m_matrix.clone() })?;
        rows.push(RegionRow {
            name: name.clone(),
            measure: region.measure(),
            mu_min: rep.mu_min,
            c_obs: rep.c_obs,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct WaitingTimes {
    /// 2 max |x - x0| over the closed domain minus the observation ball
    pub t_new: f64,
    /// 2 max |x - x0| over the whole closed domain
    pub t_old: f64,
}

/// Waiting-time comparison for the flat paraboloid case. Interval domains
/// are evaluated in closed form (endpoint arithmetic); other domains take
/// the lattice maximum.
pub fn waiting_time_comparison(
    d: &WeightField,
    g: &Grid,
    gamma0: &[usize],
    delta: f64,
) -> Result<WaitingTimes> {
    let x0 = d
        .critical_point()
        .expect("waiting-time comparison needs a paraboloid weight");
    let dist = |p: Point| -> f64 {
        if g.dim == 1 {
            (p[0] - x0[0]).abs()
        } else {
            ((p[0] - x0[0]).powi(2) + (p[1] - x0[1]).powi(2)).sqrt()
        }
    };
    if let crate::grid::Domain::Interval { a, b } = g.domain {
        let gpos = gamma0_positions(g, gamma0);
        let has = |endpoint: f64| gpos.iter().any(|p| (p[0] - endpoint).abs() < 1e-12);
        let lo = if has(a) { a + delta } else { a };
        let hi = if has(b) { b - delta } else { b };
        if lo > hi {
            return Err(Error::EmptyComplement);
        }
        let t_new = 2.0 * dist([lo, 0.0]).max(dist([hi, 0.0]));
        let t_old = 2.0 * dist([a, 0.0]).max(dist([b, 0.0]));
        return Ok(WaitingTimes { t_new, t_old });
    }
    let gpos = gamma0_positions(g, gamma0);
    let pts = closure_points(g);
    let off: Vec<Point> = pts
        .iter()
        .cloned()
        .filter(|&p| {
            gpos.iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
                >= delta
        })
        .collect();
    if off.is_empty() {
        return Err(Error::EmptyComplement);
    }
    let t_new = 2.0 * off.iter().map(|&p| dist(p)).fold(f64::NEG_INFINITY, f64::max);
    let t_old = 2.0 * pts.iter().map(|&p| dist(p)).fold(f64::NEG_INFINITY, f64::max);
    Ok(WaitingTimes { t_new, t_old })
}
