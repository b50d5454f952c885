//! Symmetric coefficient fields h^{jk}(x) with ellipticity verification.
//!
//! Analytic variants expose first and second spatial derivatives (needed by
//! the pseudoconvexity bracket and the weighted-identity frame); tabulated
//! fields interpolate node data and serve the wave stepper only.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mat2, Point};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CoefficientField {
    Identity,
    /// Constant diagonal entries.
    Diagonal { values: [f64; 2] },
    /// Constant full symmetric matrix.
    Constant { m: [[f64; 2]; 2] },
    /// c(x) I with c affine: base + slope . x.
    Affine { base: f64, slope: [f64; 2] },
    /// c(x) I with c = base + amp * prod_i cos(pi freq_i x_i); smooth, bounded.
    Isotropic { base: f64, amp: f64, freq: [f64; 2] },
    /// Full symmetric-storage node table [h11, h22, h12, h21], bilinear interp.
    Tabulated {
        shape: [usize; 2],
        origin: [f64; 2],
        spacing: [f64; 2],
        entries: Vec<[f64; 4]>,
    },
}

impl CoefficientField {
    pub fn is_analytic(&self) -> bool {
        !matches!(self, CoefficientField::Tabulated { .. })
    }

    /// True when every off-diagonal entry vanishes identically.
    pub fn is_diagonal_structured(&self) -> bool {
        match self {
            CoefficientField::Tabulated { entries, .. } => {
                entries.iter().all(|e| e[2] == 0.0 && e[3] == 0.0)
            }
            CoefficientField::Constant { m } => m[0][1] == 0.0 && m[1][0] == 0.0,
            _ => true,
        }
    }

    fn iso(c: f64) -> Mat2 {
        [[c, 0.0], [0.0, c]]
    }

    pub fn value(&self, p: Point) -> Mat2 {
        match *self {
            CoefficientField::Identity => Self::iso(1.0),
            CoefficientField::Diagonal { values } => [[values[0], 0.0], [0.0, values[1]]],
            CoefficientField::Constant { m } => m,
            CoefficientField::Affine { base, slope } => {
                Self::iso(base + slope[0] * p[0] + slope[1] * p[1])
            }
            CoefficientField::Isotropic { base, amp, freq } => {
                let c = base
                    + amp
                        * (std::f64::consts::PI * freq[0] * p[0]).cos()
                        * (std::f64::consts::PI * freq[1] * p[1]).cos();
                Self::iso(c)
            }
            CoefficientField::Tabulated { shape, origin, spacing, ref entries } => {
                let e = bilinear(shape, origin, spacing, entries, p);
                [[e[0], e[2]], [e[3], e[1]]]
            }
        }
    }

    /// d1[m][j][k] = d h^{jk} / d x_m.
    pub fn d1(&self, p: Point) -> Result<[Mat2; 2]> {
        let pi = std::f64::consts::PI;
        match *self {
            CoefficientField::Identity
            | CoefficientField::Diagonal { .. }
            | CoefficientField::Constant { .. } => Ok([Self::iso(0.0), Self::iso(0.0)]),
            CoefficientField::Affine { slope, .. } => {
                Ok([Self::iso(slope[0]), Self::iso(slope[1])])
            }
            CoefficientField::Isotropic { amp, freq, .. } => {
                let (c0, s0) = ((pi * freq[0] * p[0]).cos(), (pi * freq[0] * p[0]).sin());
                let (c1, s1) = ((pi * freq[1] * p[1]).cos(), (pi * freq[1] * p[1]).sin());
                Ok([
                    Self::iso(-amp * pi * freq[0] * s0 * c1),
                    Self::iso(-amp * pi * freq[1] * c0 * s1),
                ])
            }
            CoefficientField::Tabulated { .. } => Err(Error::NeedsAnalyticCoefficients),
        }
    }

    /// d2[m][l][j][k] = d^2 h^{jk} / d x_m d x_l.
    pub fn d2(&self, p: Point) -> Result<[[Mat2; 2]; 2]> {
        let pi = std::f64::consts::PI;
        let z = Self::iso(0.0);
        match *self {
            CoefficientField::Identity
            | CoefficientField::Diagonal { .. }
            | CoefficientField::Constant { .. }
            | CoefficientField::Affine { .. } => Ok([[z, z], [z, z]]),
            CoefficientField::Isotropic { amp, freq, .. } => {
                let (c0, s0) = ((pi * freq[0] * p[0]).cos(), (pi * freq[0] * p[0]).sin());
                let (c1, s1) = ((pi * freq[1] * p[1]).cos(), (pi * freq[1] * p[1]).sin());
                let w0 = pi * freq[0];
                let w1 = pi * freq[1];
                let dxx = -amp * w0 * w0 * c0 * c1;
                let dxy = amp * w0 * w1 * s0 * s1;
                let dyy = -amp * w1 * w1 * c0 * c1;
                Ok([
                    [Self::iso(dxx), Self::iso(dxy)],
                    [Self::iso(dxy), Self::iso(dyy)],
                ])
            }
            CoefficientField::Tabulated { .. } => Err(Error::NeedsAnalyticCoefficients),
        }
    }

    /// Largest eigenvalue over the sampled nodes; enters the CFL bound.
    pub fn lambda_max(&self, g: &Grid) -> f64 {
        let mut lmax = 0.0f64;
        for i in 0..g.n_nodes() {
            let m = self.value(g.node_pos(i));
            lmax = lmax.max(eig_bounds(m, g.dim).1);
        }
        lmax
    }
}

fn bilinear(
    shape: [usize; 2],
    origin: [f64; 2],
    spacing: [f64; 2],
    entries: &[[f64; 4]],
    p: Point,
) -> [f64; 4] {
    let mut fx = (p[0] - origin[0]) / spacing[0];
    let mut fy = if shape[1] > 1 { (p[1] - origin[1]) / spacing[1] } else { 0.0 };
    fx = fx.clamp(0.0, (shape[0] - 1) as f64);
    fy = fy.clamp(0.0, (shape[1] - 1) as f64);
    let ix = (fx.floor() as usize).min(shape[0].saturating_sub(2));
    let iy = (fy.floor() as usize).min(shape[1].saturating_sub(2));
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let idx = |x: usize, y: usize| y * shape[0] + x;
    let mut out = [0.0; 4];
    for c in 0..4 {
        let v00 = entries[idx(ix, iy)][c];
        let v10 = entries[idx(ix + 1, iy)][c];
        let (v01, v11) = if shape[1] > 1 {
            (entries[idx(ix, iy + 1)][c], entries[idx(ix + 1, iy + 1)][c])
        } else {
            (v00, v10)
        };
        out[c] = v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty;
    }
    out
}

/// (min, max) eigenvalues of the symmetric part of a small matrix.
pub fn eig_bounds(m: Mat2, dim: usize) -> (f64, f64) {
    if dim == 1 {
        return (m[0][0], m[0][0]);
    }
    let off = 0.5 * (m[0][1] + m[1][0]);
    let tr = m[0][0] + m[1][1];
    let disc = ((m[0][0] - m[1][1]).powi(2) + 4.0 * off * off).sqrt();
    (0.5 * (tr - disc), 0.5 * (tr + disc))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoefficientReport {
    /// Largest constant h0 with h >= h0 I node-wise.
    pub h0: f64,
    pub symmetric: bool,
}

/// Node-wise symmetry and uniform ellipticity over the inside nodes.
pub fn verify_coefficients(h: &CoefficientField, g: &Grid) -> Result<CoefficientReport> {
    let mut h0 = f64::INFINITY;
    for i in g.inside_indices() {
        let m = h.value(g.node_pos(i));
        let asym = (m[0][1] - m[1][0]).abs();
        if g.dim == 2 && asym > 1e-12 {
            return Err(Error::AsymmetricCoefficients { node: i, diff: asym });
        }
        let (lo, _) = eig_bounds(m, g.dim);
        if lo <= 0.0 {
            return Err(Error::NotElliptic { node: i, min_eig: lo });
        }
        h0 = h0.min(lo);
    }
    Ok(CoefficientReport { h0, symmetric: true })
}
