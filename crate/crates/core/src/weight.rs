//! Escape-function weights d(x): analytic families with jets up to third
//! order, pseudoconvexity certification, and the scale/offset normalization
//! that pushes the pseudoconvexity constant to >= 4 while keeping
//! (1/4) sum h^{jk} d_{x_j} d_{x_k} >= d > 0.

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mat2, Point};

/// third[m][j][k] = d^3 d / dx_m dx_j dx_k
pub type Third = [[[f64; 2]; 2]; 2];

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightKind {
    /// |x - center|^2
    Paraboloid { center: [f64; 2] },
    /// |x - center|^2 + cubic * x_1^3 (exercises third-derivative paths)
    CubicPerturbed { center: [f64; 2], cubic: f64 },
    /// |x - center|^4; degenerate limit case at the critical point
    QuarticRadial { center: [f64; 2] },
    /// (x - c1)^2 (x - c2)^2, one dimension: two critical zeros
    TwoWell { c1: f64, c2: f64 },
    /// Node table with finite-difference jets; geometry-only.
    Tabulated {
        shape: [usize; 2],
        origin: [f64; 2],
        spacing: [f64; 2],
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct WeightJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: Mat2,
    pub third: Third,
    /// False when the third-order block is not available analytically.
    pub exact_third: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WeightField {
    pub kind: WeightKind,
    /// d(x) = scale * base(x + shift) + offset
    pub scale: f64,
    pub offset: f64,
    pub shift: [f64; 2],
}

impl WeightField {
    pub fn new(kind: WeightKind) -> Self {
        WeightField { kind, scale: 1.0, offset: 0.0, shift: [0.0, 0.0] }
    }

    pub fn paraboloid(center: [f64; 2]) -> Self {
        Self::new(WeightKind::Paraboloid { center })
    }

    /// Same weight read off at x + zeta.
    pub fn shifted(&self, zeta: [f64; 2]) -> Self {
        let mut w = self.clone();
        w.shift = [self.shift[0] + zeta[0], self.shift[1] + zeta[1]];
        w
    }

    pub fn with_normalization(&self, a: f64, b: f64) -> Self {
        let mut w = self.clone();
        w.scale *= a;
        w.offset = a * self.offset + b;
        w
    }

    /// Critical point of the base family, in the shifted frame.
    pub fn critical_point(&self) -> Option<Point> {
        let c = match self.kind {
            WeightKind::Paraboloid { center } | WeightKind::QuarticRadial { center } => center,
            WeightKind::TwoWell { c1, .. } => [c1, 0.0],
            _ => return None,
        };
        Some([c[0] - self.shift[0], c[1] - self.shift[1]])
    }

    pub fn value(&self, dim: usize, x: Point) -> f64 {
        self.jet(dim, x).value
    }

    pub fn jet(&self, dim: usize, x: Point) -> WeightJet {
        let y = [x[0] + self.shift[0], x[1] + self.shift[1]];
        let mut j = base_jet(&self.kind, dim, y);
        j.value = self.scale * j.value + self.offset;
        for a in 0..2 {
            j.grad[a] *= self.scale;
            for b in 0..2 {
                j.hess[a][b] *= self.scale;
                for c in 0..2 {
                    j.third[a][b][c] *= self.scale;
                }
            }
        }
        j
    }

    pub fn grad_norm(&self, dim: usize, x: Point) -> f64 {
        let g = self.jet(dim, x).grad;
        if dim == 1 { g[0].abs() } else { (g[0] * g[0] + g[1] * g[1]).sqrt() }
    }
}

fn zero_jet() -> WeightJet {
    WeightJet {
        value: 0.0,
        grad: [0.0; 2],
        hess: [[0.0; 2]; 2],
        third: [[[0.0; 2]; 2]; 2],
        exact_third: true,
    }
}

fn base_jet(kind: &WeightKind, dim: usize, y: Point) -> WeightJet {
    let mut j = zero_jet();
    match *kind {
        WeightKind::Paraboloid { center } => {
            for a in 0..dim {
                let r = y[a] - center[a];
                j.value += r * r;
                j.grad[a] = 2.0 * r;
                j.hess[a][a] = 2.0;
            }
        }
        WeightKind::CubicPerturbed { center, cubic } => {
            for a in 0..dim {
                let r = y[a] - center[a];
                j.value += r * r;
                j.grad[a] = 2.0 * r;
                j.hess[a][a] = 2.0;
            }
            j.value += cubic * y[0].powi(3);
            j.grad[0] += 3.0 * cubic * y[0] * y[0];
            j.hess[0][0] += 6.0 * cubic * y[0];
            j.third[0][0][0] = 6.0 * cubic;
        }
        WeightKind::QuarticRadial { center } => {
            let mut r2 = 0.0;
            let mut r = [0.0; 2];
            for a in 0..dim {
                r[a] = y[a] - center[a];
                r2 += r[a] * r[a];
            }
            j.value = r2 * r2;
            for a in 0..dim {
                j.grad[a] = 4.0 * r2 * r[a];
                for b in 0..dim {
                    j.hess[a][b] = 8.0 * r[a] * r[b] + if a == b { 4.0 * r2 } else { 0.0 };
                    for c in 0..dim {
                        let mut t = 0.0;
                        if b == c {
                            t += 8.0 * r[a];
                        }
                        if a == c {
                            t += 8.0 * r[b];
                        }
                        if a == b {
                            t += 8.0 * r[c];
                        }
                        j.third[a][b][c] = t;
                    }
                }
            }
        }
        WeightKind::TwoWell { c1, c2 } => {
            assert_eq!(dim, 1, "two-well weight is one-dimensional");
            let q = (y[0] - c1) * (y[0] - c2);
            let qp = 2.0 * y[0] - c1 - c2;
            j.value = q * q;
            j.grad[0] = 2.0 * q * qp;
            j.hess[0][0] = 2.0 * qp * qp + 4.0 * q;
            j.third[0][0][0] = 12.0 * qp;
        }
        WeightKind::Tabulated { shape, origin, spacing, ref values } => {
            let f = |p: Point| table_value(shape, origin, spacing, values, p);
            j.value = f(y);
            j.exact_third = false;
            for a in 0..dim {
                let h = spacing[a];
                let mut yp = y;
                let mut ym = y;
                yp[a] += h;
                ym[a] -= h;
                j.grad[a] = (f(yp) - f(ym)) / (2.0 * h);
                j.hess[a][a] = (f(yp) - 2.0 * f(y) + f(ym)) / (h * h);
            }
            if dim == 2 {
                let (hx, hy) = (spacing[0], spacing[1]);
                let mixed = (f([y[0] + hx, y[1] + hy]) - f([y[0] + hx, y[1] - hy])
                    - f([y[0] - hx, y[1] + hy])
                    + f([y[0] - hx, y[1] - hy]))
                    / (4.0 * hx * hy);
                j.hess[0][1] = mixed;
                j.hess[1][0] = mixed;
            }
        }
    }
    j
}

fn table_value(
    shape: [usize; 2],
    origin: [f64; 2],
    spacing: [f64; 2],
    values: &[f64],
    p: Point,
) -> f64 {
    let fx = ((p[0] - origin[0]) / spacing[0]).clamp(0.0, (shape[0] - 1) as f64);
    let fy = if shape[1] > 1 {
        ((p[1] - origin[1]) / spacing[1]).clamp(0.0, (shape[1] - 1) as f64)
    } else {
        0.0
    };
    let ix = (fx.floor() as usize).min(shape[0].saturating_sub(2));
    let iy = (fy.floor() as usize).min(shape[1].saturating_sub(2));
    let (tx, ty) = (fx - ix as f64, fy - iy as f64);
    let at = |x: usize, y: usize| values[y * shape[0] + x];
    let (v00, v10) = (at(ix, iy), at(ix + 1, iy));
    let (v01, v11) = if shape[1] > 1 {
        (at(ix, iy + 1), at(ix + 1, iy + 1))
    } else {
        (v00, v10)
    };
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty
        + v11 * tx * ty
}

/// Every sample position of the closed domain: inside nodes plus the
/// analytic boundary nodes.
pub fn closure_points(g: &Grid) -> Vec<Point> {
    let mut pts: Vec<Point> = g.inside_indices().map(|i| g.node_pos(i)).collect();
    pts.extend(g.boundary.iter().map(|b| b.pos));
    pts
}

/// Pseudoconvexity bracket
/// E^{jk} = sum_{j'k'} [ 2 h^{jk'} (h^{j'k} d_{x_{j'}})_{x_{k'}}
///                       - h^{jk}_{x_{k'}} h^{j'k'} d_{x_{j'}} ].
pub fn pseudoconvexity_bracket(
    h: &CoefficientField,
    d: &WeightField,
    dim: usize,
    x: Point,
) -> Result<Mat2> {
    let hv = h.value(x);
    let h1 = h.d1(x)?;
    let dj = d.jet(dim, x);
    let mut e = [[0.0; 2]; 2];
    for j in 0..dim {
        for k in 0..dim {
            let mut acc = 0.0;
            for jp in 0..dim {
                for kp in 0..dim {
                    acc += 2.0
                        * hv[j][kp]
                        * (h1[kp][jp][k] * dj.grad[jp] + hv[jp][k] * dj.hess[jp][kp]);
                    acc -= h1[kp][j][k] * hv[jp][kp] * dj.grad[jp];
                }
            }
            e[j][k] = acc;
        }
    }
    Ok(e)
}

/// Smallest generalized eigenvalue of (sym E, h) for SPD h.
fn min_generalized_eig(e: Mat2, h: Mat2, dim: usize) -> f64 {
    if dim == 1 {
        return e[0][0] / h[0][0];
    }
    // whiten by the Cholesky factor of h: W = L^-1 Es L^-T
    let l11 = h[0][0].sqrt();
    let l21 = h[1][0] / l11;
    let l22 = (h[1][1] - l21 * l21).sqrt();
    let s01 = 0.5 * (e[0][1] + e[1][0]);
    let inv11 = 1.0 / l11;
    let inv21 = -l21 / (l11 * l22);
    let inv22 = 1.0 / l22;
    let es = [[e[0][0], s01], [s01, e[1][1]]];
    let r0 = [inv11 * es[0][0], inv11 * es[0][1]];
    let r1 = [
        inv21 * es[0][0] + inv22 * es[1][0],
        inv21 * es[0][1] + inv22 * es[1][1],
    ];
    let w00 = r0[0] * inv11;
    let w01 = r0[0] * inv21 + r0[1] * inv22;
    let w11 = r1[0] * inv21 + r1[1] * inv22;
    let tr = w00 + w11;
    let disc = ((w00 - w11).powi(2) + 4.0 * w01 * w01).sqrt();
    0.5 * (tr - disc)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Condition1Report {
    /// Node-wise minimum of the bracket quotient against h.
    pub mu0: f64,
    /// Minimum of |grad d| over the inside nodes.
    pub min_grad: f64,
}

/// Certify the pseudoconvexity constant and the absence of critical points.
/// A caller reading mu0 <= 0 or min_grad == 0 treats the weight as failing.
pub fn check_condition1(
    h: &CoefficientField,
    d: &WeightField,
    g: &Grid,
) -> Result<Condition1Report> {
    let mut mu0 = f64::INFINITY;
    let mut min_grad = f64::INFINITY;
    for p in closure_points(g) {
        let e = pseudoconvexity_bracket(h, d, g.dim, p)?;
        mu0 = mu0.min(min_generalized_eig(e, h.value(p), g.dim));
        min_grad = min_grad.min(d.grad_norm(g.dim, p));
    }
    Ok(Condition1Report { mu0, min_grad })
}

/// 1/4 sum h^{jk} d_{x_j} d_{x_k} at a point.
fn quarter_gradient_form(h: &CoefficientField, d: &WeightField, dim: usize, x: Point) -> f64 {
    let hv = h.value(x);
    let gj = d.jet(dim, x).grad;
    let mut acc = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            acc += hv[j][k] * gj[j] * gj[k];
        }
    }
    0.25 * acc
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Normalization {
    pub a: f64,
    pub b: f64,
}

/// Rescale d_hat = a d + b so the bracket constant reaches >= 4 and
/// 1/4 sum h d_x d_x >= d_hat > 0 holds over the closed domain. The observed
/// boundary portion is invariant under this map.
pub fn normalize_weight(
    d: &WeightField,
    mu0: f64,
    h: &CoefficientField,
    g: &Grid,
) -> Result<(WeightField, Normalization)> {
    let pts = closure_points(g);
    let line2_holds = |w: &WeightField| {
        pts.iter().all(|&p| {
            let v = w.value(g.dim, p);
            v > 0.0 && quarter_gradient_form(h, w, g.dim, p) >= v - 1e-12
        })
    };
    if mu0 >= 4.0 - 1e-9 && line2_holds(d) {
        return Ok((d.clone(), Normalization { a: 1.0, b: 0.0 }));
    }

    let mut a = (4.0 / mu0).max(1.0) * (1.0 + 1e-9);
    for _ in 0..60 {
        // feasible offsets: -a min(d) < b <= min_x (a^2 m(x) - a d(x))
        let mut min_d = f64::INFINITY;
        let mut hi = f64::INFINITY;
        for &p in &pts {
            let dv = d.value(g.dim, p);
            let m = quarter_gradient_form(h, d, g.dim, p);
            min_d = min_d.min(dv);
            hi = hi.min(a * a * m - a * dv);
        }
        let lo = -a * min_d;
        if hi > lo {
            let b = if lo < 0.0 && hi >= 0.0 { 0.0 } else { 0.5 * (lo + hi) };
            let cand = d.with_normalization(a, b);
            if line2_holds(&cand) {
                return Ok((cand, Normalization { a, b }));
            }
        }
        a *= 1.5;
    }
    Err(Error::NormalizationInfeasible { a_max: a })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Condition2Report {
    pub mu0: f64,
    /// Limit of sum h^{jk} d_{x_j} d_{x_k} / d at the critical point.
    pub s: f64,
    pub degenerate: bool,
}

/// Certify the single-critical-point condition: d(x0) = 0 is the minimum,
/// the gradient vanishes nowhere else, and the gradient-form quotient has a
/// finite limit s at x0 (Richardson-extrapolated over shrinking radii).
pub fn check_condition2(
    h: &CoefficientField,
    d: &WeightField,
    x0: Point,
    g: &Grid,
) -> Result<Condition2Report> {
    let dim = g.dim;
    let v0 = d.value(dim, x0);
    let scale = closure_points(g)
        .iter()
        .map(|&p| d.value(dim, p).abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    if v0.abs() > 1e-10 * scale {
        return Err(Error::NonzeroMinimum { node: usize::MAX, value: v0 });
    }
    let grad_scale = closure_points(g)
        .iter()
        .map(|&p| d.grad_norm(dim, p))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let excl = 2.0 * g.spacing[0].max(g.spacing[1.min(dim - 1)]);
    let mut offenders = Vec::new();
    let mut worst = f64::INFINITY;
    for i in g.inside_indices() {
        let p = g.node_pos(i);
        let dist = ((p[0] - x0[0]).powi(2) + (p[1] - x0[1]).powi(2)).sqrt();
        if dist <= excl {
            continue;
        }
        let gn = d.grad_norm(dim, p);
        if gn <= 1e-8 * grad_scale {
            offenders.push(i);
            worst = worst.min(gn);
        }
        if d.value(dim, p) < -1e-12 * scale {
            return Err(Error::NonzeroMinimum { node: i, value: d.value(dim, p) });
        }
    }
    if !offenders.is_empty() {
        return Err(Error::SecondCriticalPoint { nodes: offenders, grad: worst });
    }

    // quotient limit over punctured balls of radii h, h/2, h/4
    let h_step = g.spacing[0].max(g.spacing[1.min(dim - 1)]);
    let dirs: Vec<Point> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        vec![
            [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0],
            [r, r], [-r, r], [r, -r], [-r, -r],
        ]
    };
    let quotient_at = |radius: f64| -> f64 {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for dir in &dirs {
            let p = [x0[0] + radius * dir[0], x0[1] + radius * dir[1]];
            let val = d.value(dim, p);
            if val <= 0.0 {
                continue;
            }
            acc += 4.0 * quarter_gradient_form(h, d, dim, p) / val;
            cnt += 1;
        }
        if cnt == 0 { f64::NAN } else { acc / cnt as f64 }
    };
    let q1 = quotient_at(h_step);
    let q2 = quotient_at(h_step / 2.0);
    let q3 = quotient_at(h_step / 4.0);
    let d12 = q1 - q2;
    let d23 = q2 - q3;
    let s = if d23.abs() < 1e-12 * q3.abs().max(1.0) {
        q3
    } else if d12 / d23 > 1.0 {
        let p = (d12 / d23).log2();
        q3 - d23 / ((2f64).powf(p) - 1.0)
    } else {
        q3
    };
    let mu0 = check_condition1(h, d, g)?.mu0;
    Ok(Condition2Report { mu0, s, degenerate: s.abs() <= 1e-6 * q1.abs().max(1.0) })
}
