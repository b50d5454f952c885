//! Sparse symmetric assembly of (-L + lambda0) under homogeneous Dirichlet
//! conditions, a banded Cholesky factorization shared read-only across
//! trajectories, the dual norm |f|_{H^-1} = sqrt <f, (-L+lambda0)^{-1} f>,
//! and the Dirichlet eigenbasis of -L.
//!
//! L = sum_jk d_{x_k}(h^{jk} d_{x_j} .) is discretized in flux form with
//! staggered midpoint coefficients, which is symmetric for diagonally
//! structured h; full off-diagonal tables are rejected here (the explicit
//! wave stepper handles them separately).

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::Grid;
use nalgebra::DMatrix;

/// Lower-banded symmetric matrix: row i stores A[i][i-bw..=i].
#[derive(Debug, Clone)]
struct Banded {
    n: usize,
    bw: usize,
    rows: Vec<f64>, // (bw + 1) per row, diagonal last
}

impl Banded {
    fn zeros(n: usize, bw: usize) -> Banded {
        Banded { n, bw, rows: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i - j <= self.bw);
        self.rows[i * (self.bw + 1) + (self.bw - (i - j))]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.bw);
        &mut self.rows[i * (self.bw + 1) + (self.bw - (i - j))]
    }

    /// In-place Cholesky A = L L^T. Fails on a non-positive pivot.
    fn cholesky(mut self) -> Result<Banded> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let mut sum = self.at(i, j);
                let kmin = lo.max(j.saturating_sub(bw));
                for k in kmin..j {
                    sum -= self.at(i, k) * self.at(j, k);
                }
                *self.at_mut(i, j) = sum / self.at(j, j);
            }
            let mut diag = self.at(i, i);
            for k in lo..i {
                let lik = self.at(i, k);
                diag -= lik * lik;
            }
            if diag <= 0.0 {
                return Err(Error::Indefinite { row: i, pivot: diag });
            }
            *self.at_mut(i, i) = diag.sqrt();
        }
        Ok(self)
    }

    /// Solve L L^T x = b.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let bw = self.bw;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut sum = y[i];
            for j in lo..i {
                sum -= self.at(i, j) * y[j];
            }
            y[i] = sum / self.at(i, i);
        }
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut sum = y[i];
            for j in (i + 1)..=hi {
                sum -= self.at(j, i) * y[j];
            }
            y[i] = sum / self.at(i, i);
        }
        y
    }
}

/// Factorized (-L + lambda0) on the interior nodes, plus the raw stencil for
/// quadratic forms. Immutable after assembly; safe to share across threads.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    pub lambda0: f64,
    pub vol: f64,
    /// lattice node -> interior row
    pub row_of_node: Vec<Option<usize>>,
    /// interior row -> lattice node
    pub node_of_row: Vec<usize>,
    matrix: Banded,
    factor: Banded,
}

/// Assemble and factorize (-L + lambda0) with Dirichlet rows eliminated.
pub fn assemble_elliptic(
    h: &CoefficientField,
    g: &Grid,
    lambda0: f64,
) -> Result<EllipticOperator> {
    if !h.is_diagonal_structured() {
        return Err(Error::NonDiagonalCoefficients);
    }
    let mut row_of_node = vec![None; g.n_nodes()];
    let mut node_of_row = Vec::new();
    for i in g.inside_indices() {
        row_of_node[i] = Some(node_of_row.len());
        node_of_row.push(i);
    }
    let n = node_of_row.len();
    let nx = g.shape[0];
    // bandwidth: x-neighbors are adjacent rows, y-neighbors at most a row of
    // interior nodes apart
    let bw = if g.dim == 1 { 1 } else { nx.min(n.saturating_sub(1)) };
    let mut a = Banded::zeros(n, bw);

    let offsets: &[(isize, usize)] =
        if g.dim == 1 { &[(1, 0)] } else { &[(1, 0), (nx as isize, 1)] };
    for (row, &node) in node_of_row.iter().enumerate() {
        let p = g.node_pos(node);
        let mut diag = lambda0;
        for &(off, axis) in offsets {
            let hh = g.spacing[axis] * g.spacing[axis];
            for dir in [-1isize, 1isize] {
                let nb = node as isize + dir * off;
                if nb < 0 || nb as usize >= g.n_nodes() {
                    continue;
                }
                let nb = nb as usize;
                // midpoint coefficient between node and neighbor
                let q = g.node_pos(nb);
                let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                let coef = h.value(mid)[axis][axis] / hh;
                diag += coef;
                if let Some(col) = row_of_node[nb] {
                    if col < row {
                        *a.at_mut(row, col) -= coef;
                    }
                }
                // boundary neighbors carry w = 0: diagonal contribution only
            }
        }
        *a.at_mut(row, row) = diag;
    }

    let factor = a.clone().cholesky()?;
    Ok(EllipticOperator {
        lambda0,
        vol: g.cell_volume(),
        row_of_node,
        node_of_row,
        matrix: a,
        factor,
    })
}

impl EllipticOperator {
    pub fn n_interior(&self) -> usize {
        self.node_of_row.len()
    }

    fn gather(&self, f: &[f64]) -> Vec<f64> {
        self.node_of_row.iter().map(|&i| f[i]).collect()
    }

    /// Solve (-L + lambda0) u = f for node-indexed data; returns node-indexed
    /// u with zero trace.
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let fi = self.gather(f);
        let ui = self.factor.solve(&fi);
        let mut u = vec![0.0; self.row_of_node.len()];
        for (row, &node) in self.node_of_row.iter().enumerate() {
            u[node] = ui[row];
        }
        u
    }

    /// |f|_{H^-1} = sqrt of <f, (-L+lambda0)^{-1} f> under the grid inner
    /// product.
    pub fn hminus1_norm(&self, f: &[f64]) -> f64 {
        let u = self.solve(f);
        let mut acc = 0.0;
        for &node in &self.node_of_row {
            acc += f[node] * u[node];
        }
        (acc * self.vol).max(0.0).sqrt()
    }

    /// Discrete |grad u|_h seminorm via the stiffness form (the lambda0 mass
    /// part removed).
    pub fn h01_norm(&self, u: &[f64]) -> f64 {
        let ui = self.gather(u);
        let q = self.quadratic_form(&ui) - self.lambda0 * ui.iter().map(|v| v * v).sum::<f64>();
        (q * self.vol).max(0.0).sqrt()
    }

    /// u^T A u for interior-indexed data.
    fn quadratic_form(&self, ui: &[f64]) -> f64 {
        let bw = self.matrix.bw;
        let mut acc = 0.0;
        for i in 0..self.matrix.n {
            acc += self.matrix.at(i, i) * ui[i] * ui[i];
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let v = self.matrix.at(i, j);
                if v != 0.0 {
                    acc += 2.0 * v * ui[i] * ui[j];
                }
            }
        }
        acc
    }

    /// Apply (-L + lambda0) to interior-indexed data.
    fn apply(&self, ui: &[f64]) -> Vec<f64> {
        let bw = self.matrix.bw;
        let n = self.matrix.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.matrix.at(i, i) * ui[i];
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let v = self.matrix.at(i, j);
                if v != 0.0 {
                    acc += v * ui[j];
                    out[j] += v * ui[i];
                }
            }
            out[i] += acc;
        }
        out
    }

    /// Smallest m Dirichlet eigenpairs of -L (the lambda0 shift removed),
    /// orthonormal in the grid L2 inner product. Node-indexed eigenvectors.
    pub fn eigenpairs(&self, m: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.n_interior();
        if m > n {
            return Err(Error::TooManyModes { m, available: n });
        }
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            let lo = i.saturating_sub(self.matrix.bw);
            dense[(i, i)] = self.matrix.at(i, i) - self.lambda0;
            for j in lo..i {
                let v = self.matrix.at(i, j);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let eig = dense.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let mut values = Vec::with_capacity(m);
        let mut vectors = Vec::with_capacity(m);
        for &k in order.iter().take(m) {
            values.push(eig.eigenvalues[k]);
            let col = eig.eigenvectors.column(k);
            let norm2: f64 = col.iter().map(|v| v * v).sum::<f64>() * self.vol;
            let scale = 1.0 / norm2.sqrt();
            // fix the sign so the first nonzero component is positive
            let sign = col
                .iter()
                .find(|v| v.abs() > 1e-12)
                .map_or(1.0, |v| v.signum());
            let mut full = vec![0.0; self.row_of_node.len()];
            for (row, &node) in self.node_of_row.iter().enumerate() {
                full[node] = col[row] * scale * sign;
            }
            vectors.push(full);
        }
        Ok((values, vectors))
    }

    /// Residual check helper: (-L + lambda0) u - f on interior rows.
    pub fn residual(&self, u: &[f64], f: &[f64]) -> f64 {
        let ui = self.gather(u);
        let au = self.apply(&ui);
        let fi = self.gather(f);
        au.iter()
            .zip(&fi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hand_assembled_tridiagonal_rows() {
        // 1-d, h = 1, lambda0 = 1, spacing 1/4: rows are [-16, 33, -16]
        let g = Grid::interval(0.0, 1.0, 5);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        assert_eq!(op.n_interior(), 3);
        assert_relative_eq!(op.matrix.at(1, 1), 33.0);
        assert_relative_eq!(op.matrix.at(1, 0), -16.0);
        assert_relative_eq!(op.matrix.at(2, 1), -16.0);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let g = Grid::interval(0.0, 1.0, 33);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        let u = op.solve(&vec![0.0; g.n_nodes()]);
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigenfunction_rhs_solves_in_closed_form() {
        // f an eigenvector of -L: solution is f / (mu + lambda0)
        let g = Grid::interval(0.0, 1.0, 101);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        let (vals, vecs) = op.eigenpairs(3).unwrap();
        let f = &vecs[2];
        let u = op.solve(f);
        for &node in &op.node_of_row {
            assert_relative_eq!(u[node], f[node] / (vals[2] + 1.0), max_relative = 1e-9);
        }
        assert!(op.residual(&u, f) < 1e-9);
    }

    #[test]
    fn discrete_eigenvalues_match_fourier_oracle() {
        // mu_k ~ k^2 pi^2 within 1% for k <= m/4 at 200 nodes
        let g = Grid::interval(0.0, 1.0, 200);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        let (vals, vecs) = op.eigenpairs(20).unwrap();
        for k in 1..=5usize {
            let exact = (k as f64 * std::f64::consts::PI).powi(2);
            assert_relative_eq!(vals[k - 1], exact, max_relative = 0.01);
        }
        // ground mode has no interior sign change
        let ground = &vecs[0];
        let signs: Vec<f64> = op.node_of_row.iter().map(|&i| ground[i].signum()).collect();
        assert!(signs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn too_many_modes_is_an_error() {
        let g = Grid::interval(0.0, 1.0, 9);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        assert!(matches!(
            op.eigenpairs(100),
            Err(Error::TooManyModes { available: 7, .. })
        ));
    }

    #[test]
    fn hminus1_matches_fourier_oracle() {
        // |sin(k pi x)|_{H^-1}^2 = 1 / (2 (k^2 pi^2 + lambda0)) in the continuum
        let g = Grid::interval(0.0, 1.0, 200);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        for k in [1usize, 3] {
            let f: Vec<f64> = (0..g.n_nodes())
                .map(|i| (k as f64 * std::f64::consts::PI * g.node_pos(i)[0]).sin())
                .collect();
            let exact = 0.5 / ((k as f64 * std::f64::consts::PI).powi(2) + 1.0);
            let got = op.hminus1_norm(&f).powi(2);
            assert_relative_eq!(got, exact, max_relative = 0.02);
        }
    }

    #[test]
    fn hminus1_homogeneity_and_triangle() {
        use rand::{Rng, SeedableRng};
        let g = Grid::interval(0.0, 1.0, 64);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f: Vec<f64> = (0..g.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gvec: Vec<f64> =
                (0..g.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: f64 = rng.gen_range(-3.0..3.0);
            let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
            assert_relative_eq!(
                op.hminus1_norm(&cf),
                c.abs() * op.hminus1_norm(&f),
                max_relative = 1e-10
            );
            let sum: Vec<f64> = f.iter().zip(&gvec).map(|(a, b)| a + b).collect();
            assert!(
                op.hminus1_norm(&sum)
                    <= op.hminus1_norm(&f) + op.hminus1_norm(&gvec) + 1e-12
            );
        }
        // zero functional has zero norm
        assert_eq!(op.hminus1_norm(&vec![0.0; g.n_nodes()]), 0.0);
    }

    #[test]
    fn norm_equivalence_against_h01() {
        // with u = (-L+lambda0)^{-1} f: |f|_{H^-1} / |u|_{H^1_0} lies in
        // [1, sqrt(1 + lambda0/mu_1)]
        use rand::{Rng, SeedableRng};
        let g = Grid::interval(0.0, 1.0, 128);
        let op = assemble_elliptic(&CoefficientField::Identity, &g, 1.0).unwrap();
        let (vals, _) = op.eigenpairs(1).unwrap();
        let upper = (1.0 + 1.0 / vals[0]).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let f: Vec<f64> = (0..g.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = op.solve(&f);
            let ratio = op.hminus1_norm(&f) / op.h01_norm(&u);
            assert!(ratio >= 1.0 - 1e-9 && ratio <= upper + 1e-9, "ratio {ratio}");
        }
    }

    #[test]
    fn variable_diagonal_coefficients_assemble() {
        let g = Grid::rectangle([0.0, 0.0], [1.0, 1.0], [17, 17]);
        let h = CoefficientField::Isotropic { base: 2.0, amp: 0.5, freq: [1.0, 1.0] };
        let op = assemble_elliptic(&h, &g, 1.0).unwrap();
        let f: Vec<f64> = (0..g.n_nodes()).map(|i| g.node_pos(i)[0]).collect();
        let u = op.solve(&f);
        assert!(op.residual(&u, &f) < 1e-10);
    }

    #[test]
    fn full_offdiagonal_table_rejected() {
        let g = Grid::rectangle([0.0, 0.0], [1.0, 1.0], [5, 5]);
        let h = CoefficientField::Tabulated {
            shape: [5, 5],
            origin: [0.0, 0.0],
            spacing: [0.25, 0.25],
            entries: vec![[1.0, 1.0, 0.1, 0.1]; 25],
        };
        assert!(matches!(
            assemble_elliptic(&h, &g, 1.0),
            Err(Error::NonDiagonalCoefficients)
        ));
    }
}
