//! Carleman weight bundle, the pointwise frame of the weighted identity for
//! the ultra-hyperbolic operator P = d_tt + d_ss - div(h grad), and its two
//! numerical certificates:
//!
//!   * the exact identity
//!     theta^2 (Pu)^2 + 2 div V + 2 M_t + 2 N_s = I1^2 + I2^2 + RHS,
//!     checked to relative machine tolerance at arbitrary points, and
//!   * the spectral lower bound obtained after dropping the squares, whose
//!     threshold lambda0 is located on a lambda sweep.
//!
//! Every quantity is evaluated theta-stripped (divided by the matching power
//! of theta = e^l); the identity is homogeneous of degree two in theta, so
//! this loses nothing and survives arbitrarily large lambda. All
//! differentiation is analytic: the weight family has closed-form jets and
//! the flux derivatives below are expanded by the product rule, never by
//! finite differences (which would pollute the residual budget).

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Mat2, Point};
use crate::weight::{Third, WeightField};
use rayon::prelude::*;

/// Weight data at one point for l = lambda (d(x) - alpha (t-T/2)^2 - alpha (s-T/2)^2).
/// Mixed t/s/x derivatives of l vanish identically for this family.
#[derive(Debug, Clone)]
pub struct WeightBundle {
    pub lambda: f64,
    pub alpha: f64,
    pub t_half: f64,
    pub phi: f64,
    pub ell: f64,
    /// None in the log-domain regime |l| > 300.
    pub theta: Option<f64>,
    pub lt: f64,
    pub ls: f64,
    pub ltt: f64,
    pub lss: f64,
    pub lx: [f64; 2],
    pub lxx: Mat2,
    pub lxxx: Third,
    pub exact_third: bool,
}

/// phi, l = lambda phi, theta = e^l and the full derivative table.
pub fn eval_weight(
    t: f64,
    s: f64,
    x: Point,
    lambda: f64,
    alpha: f64,
    t_horizon: f64,
    d: &WeightField,
    dim: usize,
) -> WeightBundle {
    let t_half = t_horizon / 2.0;
    let jet = d.jet(dim, x);
    let phi = jet.value - alpha * (t - t_half).powi(2) - alpha * (s - t_half).powi(2);
    let ell = lambda * phi;
    let mut lx = [0.0; 2];
    let mut lxx = [[0.0; 2]; 2];
    let mut lxxx = [[[0.0; 2]; 2]; 2];
    for a in 0..dim {
        lx[a] = lambda * jet.grad[a];
        for b in 0..dim {
            lxx[a][b] = lambda * jet.hess[a][b];
            for c in 0..dim {
                lxxx[a][b][c] = lambda * jet.third[a][b][c];
            }
        }
    }
    WeightBundle {
        lambda,
        alpha,
        t_half,
        phi,
        ell,
        theta: if ell.abs() > 300.0 { None } else { Some(ell.exp()) },
        lt: -2.0 * lambda * alpha * (t - t_half),
        ls: -2.0 * lambda * alpha * (s - t_half),
        ltt: -2.0 * lambda * alpha,
        lss: -2.0 * lambda * alpha,
        lx,
        lxx,
        lxxx,
        exact_third: jet.exact_third,
    }
}

/// Multiplier Psi(x). The sweep uses the drift-compensating choice
/// -lambda sum (h^{jk} d_{x_j})_{x_k} + 2 lambda (1 - alpha).
#[derive(Debug, Clone)]
pub enum PsiField {
    Zero,
    Constant(f64),
    Linear { a: [f64; 2] },
    QuadraticDiag { c: [f64; 2] },
    Step3 { lambda: f64, alpha: f64 },
}

impl PsiField {
    /// (psi, grad psi) at x.
    pub fn eval(
        &self,
        x: Point,
        dim: usize,
        h: &CoefficientField,
        d: &WeightField,
    ) -> Result<(f64, [f64; 2])> {
        match *self {
            PsiField::Zero => Ok((0.0, [0.0; 2])),
            PsiField::Constant(c) => Ok((c, [0.0; 2])),
            PsiField::Linear { a } => {
                Ok((a[0] * x[0] + a[1] * x[1], a))
            }
            PsiField::QuadraticDiag { c } => Ok((
                c[0] * x[0] * x[0] + c[1] * x[1] * x[1],
                [2.0 * c[0] * x[0], 2.0 * c[1] * x[1]],
            )),
            PsiField::Step3 { lambda, alpha } => {
                let hv = h.value(x);
                let h1 = h.d1(x)?;
                let h2 = h.d2(x)?;
                let jet = d.jet(dim, x);
                let mut div = 0.0;
                for j in 0..dim {
                    for k in 0..dim {
                        div += h1[k][j][k] * jet.grad[j] + hv[j][k] * jet.hess[j][k];
                    }
                }
                let mut grad = [0.0; 2];
                for m in 0..dim {
                    let mut acc = 0.0;
                    for j in 0..dim {
                        for k in 0..dim {
                            acc += h2[m][k][j][k] * jet.grad[j]
                                + h1[k][j][k] * jet.hess[j][m]
                                + h1[m][j][k] * jet.hess[j][k]
                                + hv[j][k] * jet.third[m][j][k];
                        }
                    }
                    grad[m] = -lambda * acc;
                }
                Ok((-lambda * div + 2.0 * lambda * (1.0 - alpha), grad))
            }
        }
    }
}

/// Second-order jet of a test function in the 2 + n variables (t, s, x).
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet2 {
    pub v: f64,
    pub d1: [f64; 4],
    pub d2: [[f64; 4]; 4],
}

#[derive(Debug, Clone)]
pub enum TestFunction {
    Zero,
    /// sum of coeff * t^a s^b x1^c x2^e
    Polynomial { terms: Vec<([u8; 4], f64)> },
    /// amp * prod_i sin(freq_i xi_i + phase_i); freq 0, phase pi/2 drops a factor
    SeparableTrig { amp: f64, freq: [f64; 4], phase: [f64; 4] },
    /// amp * exp(-sum gamma_i (xi_i - center_i)^2)
    GaussianBump { amp: f64, center: [f64; 4], gamma: [f64; 4] },
    /// u = theta^{-1} for the matching weight parameters, so v = theta u = 1
    InverseWeight { lambda: f64, alpha: f64, t_horizon: f64, weight: WeightField },
    /// pointwise product, jets by the Leibniz rule
    Product(Box<TestFunction>, Box<TestFunction>),
}

impl TestFunction {
    pub fn jet(&self, t: f64, s: f64, x: Point, dim: usize) -> Jet2 {
        let xi = [t, s, x[0], x[1]];
        let nv = 2 + dim;
        match self {
            TestFunction::Zero => Jet2::default(),
            TestFunction::Polynomial { terms } => {
                let mut out = Jet2::default();
                for &(p, coef) in terms {
                    let pw = |v: f64, e: i32| if e <= 0 { 1.0 } else { v.powi(e) };
                    let f: Vec<f64> = (0..4).map(|i| pw(xi[i], p[i] as i32)).collect();
                    let df: Vec<f64> = (0..4)
                        .map(|i| p[i] as f64 * pw(xi[i], p[i] as i32 - 1))
                        .collect();
                    let ddf: Vec<f64> = (0..4)
                        .map(|i| {
                            p[i] as f64 * (p[i] as f64 - 1.0) * pw(xi[i], p[i] as i32 - 2)
                        })
                        .collect();
                    let all: f64 = f.iter().product();
                    out.v += coef * all;
                    for i in 0..nv {
                        let rest: f64 =
                            (0..4).filter(|&j| j != i).map(|j| f[j]).product();
                        out.d1[i] += coef * df[i] * rest;
                        out.d2[i][i] += coef * ddf[i] * rest;
                        for j in (i + 1)..nv {
                            let rest2: f64 = (0..4)
                                .filter(|&k| k != i && k != j)
                                .map(|k| f[k])
                                .product();
                            let term = coef * df[i] * df[j] * rest2;
                            out.d2[i][j] += term;
                            out.d2[j][i] += term;
                        }
                    }
                }
                out
            }
            TestFunction::SeparableTrig { amp, freq, phase } => {
                let mut f = [1.0; 4];
                let mut df = [0.0; 4];
                let mut ddf = [0.0; 4];
                for i in 0..nv {
                    let arg = freq[i] * xi[i] + phase[i];
                    f[i] = arg.sin();
                    df[i] = freq[i] * arg.cos();
                    ddf[i] = -freq[i] * freq[i] * arg.sin();
                }
                let mut out = Jet2::default();
                out.v = amp * f[..nv].iter().product::<f64>();
                for i in 0..nv {
                    let rest: f64 = (0..nv).filter(|&j| j != i).map(|j| f[j]).product();
                    out.d1[i] = amp * df[i] * rest;
                    out.d2[i][i] = amp * ddf[i] * rest;
                    for j in (i + 1)..nv {
                        let rest2: f64 = (0..nv)
                            .filter(|&k| k != i && k != j)
                            .map(|k| f[k])
                            .product();
                        let term = amp * df[i] * df[j] * rest2;
                        out.d2[i][j] = term;
                        out.d2[j][i] = term;
                    }
                }
                out
            }
            TestFunction::GaussianBump { amp, center, gamma } => {
                let mut expo = 0.0;
                for i in 0..nv {
                    expo -= gamma[i] * (xi[i] - center[i]).powi(2);
                }
                let v = amp * expo.exp();
                let mut out = Jet2::default();
                out.v = v;
                let mut g = [0.0; 4];
                for i in 0..nv {
                    g[i] = -2.0 * gamma[i] * (xi[i] - center[i]);
                    out.d1[i] = g[i] * v;
                }
                for i in 0..nv {
                    for j in 0..nv {
                        out.d2[i][j] = (g[i] * g[j]
                            - if i == j { 2.0 * gamma[i] } else { 0.0 })
                            * v;
                    }
                }
                out
            }
            TestFunction::Product(a, b) => {
                let ja = a.jet(t, s, x, dim);
                let jb = b.jet(t, s, x, dim);
                let mut out = Jet2::default();
                out.v = ja.v * jb.v;
                for i in 0..nv {
                    out.d1[i] = ja.d1[i] * jb.v + ja.v * jb.d1[i];
                    for j in 0..nv {
                        out.d2[i][j] = ja.d2[i][j] * jb.v
                            + ja.d1[i] * jb.d1[j]
                            + ja.d1[j] * jb.d1[i]
                            + ja.v * jb.d2[i][j];
                    }
                }
                out
            }
            TestFunction::InverseWeight { lambda, alpha, t_horizon, weight } => {
                let b = eval_weight(t, s, x, *lambda, *alpha, *t_horizon, weight, dim);
                let u = (-b.ell).exp();
                let lg = [b.lt, b.ls, b.lx[0], b.lx[1]];
                let mut ldd = [[0.0; 4]; 4];
                ldd[0][0] = b.ltt;
                ldd[1][1] = b.lss;
                for a in 0..dim {
                    for c in 0..dim {
                        ldd[2 + a][2 + c] = b.lxx[a][c];
                    }
                }
                let mut out = Jet2::default();
                out.v = u;
                for i in 0..nv {
                    out.d1[i] = -lg[i] * u;
                    for j in 0..nv {
                        out.d2[i][j] = (lg[i] * lg[j] - ldd[i][j]) * u;
                    }
                }
                out
            }
        }
    }

    /// Worst absolute mismatch between the analytic jet and second-order
    /// central differences with the given step.
    pub fn jet_fd_error(&self, t: f64, s: f64, x: Point, dim: usize, step: f64) -> f64 {
        let nv = 2 + dim;
        let eval = |xi: [f64; 4]| self.jet(xi[0], xi[1], [xi[2], xi[3]], dim).v;
        let base = [t, s, x[0], x[1]];
        let jet = self.jet(t, s, x, dim);
        let mut worst = 0.0f64;
        for i in 0..nv {
            let mut up = base;
            let mut dn = base;
            up[i] += step;
            dn[i] -= step;
            worst = worst.max(((eval(up) - eval(dn)) / (2.0 * step) - jet.d1[i]).abs());
            worst = worst.max(
                ((eval(up) - 2.0 * jet.v + eval(dn)) / (step * step) - jet.d2[i][i]).abs(),
            );
            for j in (i + 1)..nv {
                let mut pp = base;
                let mut pm = base;
                let mut mp = base;
                let mut mm = base;
                pp[i] += step;
                pp[j] += step;
                pm[i] += step;
                pm[j] -= step;
                mp[i] -= step;
                mp[j] += step;
                mm[i] -= step;
                mm[j] -= step;
                let fd = (eval(pp) - eval(pm) - eval(mp) + eval(mm)) / (4.0 * step * step);
                worst = worst.max((fd - jet.d2[i][j]).abs());
            }
        }
        worst
    }
}

/// Every frame quantity at one point, theta-stripped: quantities that scale
/// like theta^k are reported divided by theta^k (I1, I2 by theta; the fluxes
/// and quadratic forms by theta^2; A, c^{jk}, B, Psi carry no theta).
#[derive(Debug, Clone)]
pub struct CarlemanFrame {
    pub dim: usize,
    pub ell: f64,
    pub theta: Option<f64>,
    pub psi: f64,
    pub v: f64,
    pub v_t: f64,
    pub v_s: f64,
    pub v_x: [f64; 2],
    pub a: f64,
    pub a_alt: f64,
    pub c: Mat2,
    pub b: f64,
    pub i1: f64,
    pub i2: f64,
    pub pu: f64,
    pub m: f64,
    pub n: f64,
    pub v_flux: [f64; 2],
    /// full t-derivative of M over theta^2
    pub m_t: f64,
    pub n_s: f64,
    pub div_v: f64,
    pub rhs: f64,
}

/// Populate the frame from closed-form expressions. The two groupings of A
/// must agree to 1e-10 relative; disagreement signals an implementation bug.
#[allow(clippy::too_many_arguments)]
pub fn eval_frame(
    u: &TestFunction,
    t: f64,
    s: f64,
    x: Point,
    w: &WeightBundle,
    h: &CoefficientField,
    psi_field: &PsiField,
    d: &WeightField,
    dim: usize,
) -> Result<CarlemanFrame> {
    let hv = h.value(x);
    let h1 = h.d1(x)?;
    let h2 = h.d2(x)?;
    let uj = u.jet(t, s, x, dim);

    // frame weight derivatives, local names
    let (lt, ls, ltt, lss) = (w.lt, w.ls, w.ltt, w.lss);
    let lx = w.lx;
    let lxx = w.lxx;
    let lxxx = w.lxxx;

    let (psi, psi_x) = psi_field.eval(x, dim, h, d)?;

    // theta-stripped jets of v = theta u: indices 0 = t, 1 = s, 2 + a = x_a
    let lg = [lt, ls, lx[0], lx[1]];
    let mut ldd = [[0.0; 4]; 4];
    ldd[0][0] = ltt;
    ldd[1][1] = lss;
    for a in 0..dim {
        for b in 0..dim {
            ldd[2 + a][2 + b] = lxx[a][b];
        }
    }
    let nv = 2 + dim;
    let v = uj.v;
    let mut vd = [0.0; 4];
    let mut vdd = [[0.0; 4]; 4];
    for i in 0..nv {
        vd[i] = lg[i] * uj.v + uj.d1[i];
    }
    for i in 0..nv {
        for j in 0..nv {
            vdd[i][j] = (lg[i] * lg[j] + ldd[i][j]) * uj.v
                + lg[i] * uj.d1[j]
                + lg[j] * uj.d1[i]
                + uj.d2[i][j];
        }
    }
    let (v_t, v_s) = (vd[0], vd[1]);
    let v_x = [vd[2], vd[3]];
    let (v_tt, v_ss, v_ts) = (vdd[0][0], vdd[1][1], vdd[0][1]);
    let v_tx = [vdd[0][2], vdd[0][3]];
    let v_sx = [vdd[1][2], vdd[1][3]];
    let mut v_xx = [[0.0; 2]; 2];
    for a in 0..dim {
        for b in 0..dim {
            v_xx[a][b] = vdd[2 + a][2 + b];
        }
    }

    // sum h^{jk} l_j l_k, sum (h^{jk} l_j)_k and friends
    let mut h_ll = 0.0;
    let mut div_h_l = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            h_ll += hv[j][k] * lx[j] * lx[k];
            div_h_l += h1[k][j][k] * lx[j] + hv[j][k] * lxx[j][k];
        }
    }

    let a_val = -lt * lt - ls * ls + h_ll + ltt + lss - div_h_l - psi;
    let mut a_alt = -lt * lt - ls * ls + ltt + lss - psi;
    for j in 0..dim {
        for k in 0..dim {
            a_alt += hv[j][k] * lx[j] * lx[k] - h1[j][j][k] * lx[k] - hv[j][k] * lxx[j][k];
        }
    }
    let scale = a_val.abs().max(a_alt.abs()).max(1.0);
    if (a_val - a_alt).abs() > 1e-10 * scale {
        return Err(Error::FrameInconsistent { diff: (a_val - a_alt).abs() / scale });
    }

    // time derivatives of A (spatial parts and Psi are time-independent)
    let a_t = -2.0 * ltt * lt;
    let a_s = -2.0 * lss * ls;
    // spatial gradient of A: needs second derivatives of h, third of l
    let mut a_x = [0.0; 2];
    for m in 0..dim {
        let mut acc = 0.0;
        for j in 0..dim {
            for k in 0..dim {
                acc += h1[m][j][k] * lx[j] * lx[k] + 2.0 * hv[j][k] * lxx[j][m] * lx[k];
                acc -= h2[m][k][j][k] * lx[j]
                    + h1[k][j][k] * lxx[j][m]
                    + h1[m][j][k] * lxx[j][k]
                    + hv[j][k] * lxxx[m][j][k];
            }
        }
        a_x[m] = acc - psi_x[m];
    }

    // c^{jk} and B
    let mut c = [[0.0; 2]; 2];
    for j in 0..dim {
        for k in 0..dim {
            let mut acc = hv[j][k] * (ltt + lss - psi);
            for jp in 0..dim {
                for kp in 0..dim {
                    acc += 2.0 * hv[j][kp] * (h1[kp][jp][k] * lx[jp] + hv[jp][k] * lxx[jp][kp]);
                    acc -= h1[kp][j][k] * hv[jp][kp] * lx[jp]
                        + hv[j][k] * h1[kp][jp][kp] * lx[jp]
                        + hv[j][k] * hv[jp][kp] * lxx[jp][kp];
                }
            }
            c[j][k] = acc;
        }
    }
    let mut b_val = a_val * psi - (a_t * lt + a_val * ltt) - (a_s * ls + a_val * lss);
    for j in 0..dim {
        for k in 0..dim {
            b_val += a_x[k] * hv[j][k] * lx[j]
                + a_val * (h1[k][j][k] * lx[j] + hv[j][k] * lxx[j][k]);
        }
    }
    b_val *= 2.0;

    // I1, I2 (over theta) and Pu
    let mut div_h_gradv = 0.0;
    let mut div_h_gradu = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            div_h_gradv += h1[k][j][k] * v_x[j] + hv[j][k] * v_xx[j][k];
            div_h_gradu += h1[k][j][k] * uj.d1[2 + j] + hv[j][k] * uj.d2[2 + j][2 + k];
        }
    }
    let i1 = v_tt + v_ss - div_h_gradv - a_val * v;
    let mut h_l_gradv = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            h_l_gradv += hv[j][k] * lx[j] * v_x[k];
        }
    }
    let i2 = -2.0 * lt * v_t - 2.0 * ls * v_s + 2.0 * h_l_gradv - psi * v;
    let pu = uj.d2[0][0] + uj.d2[1][1] - div_h_gradu;

    // flux M (over theta^2) and its full t-derivative
    let mut h_gradv_gradv = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            h_gradv_gradv += hv[j][k] * v_x[j] * v_x[k];
        }
    }
    let m_flux = lt * (v_t * v_t - v_s * v_s + h_gradv_gradv) - 2.0 * h_l_gradv * v_t
        + 2.0 * ls * v_s * v_t
        + psi * v * v_t
        - a_val * lt * v * v;
    let mut dt_m = ltt * (v_t * v_t - v_s * v_s + h_gradv_gradv);
    {
        let mut h_gradv_gradvt = 0.0;
        let mut h_l_gradvt = 0.0;
        for j in 0..dim {
            for k in 0..dim {
                h_gradv_gradvt += hv[j][k] * v_tx[j] * v_x[k];
                h_l_gradvt += hv[j][k] * lx[j] * v_tx[k];
            }
        }
        dt_m += lt * (2.0 * v_t * v_tt - 2.0 * v_s * v_ts + 2.0 * h_gradv_gradvt);
        dt_m += -2.0 * (h_l_gradvt * v_t + h_l_gradv * v_tt);
        dt_m += 2.0 * ls * (v_ts * v_t + v_s * v_tt);
        dt_m += psi * (v_t * v_t + v * v_tt);
        dt_m += -a_t * lt * v * v - a_val * ltt * v * v - 2.0 * a_val * lt * v * v_t;
    }
    let m_t = dt_m;

    let n_flux = ls * (v_s * v_s - v_t * v_t + h_gradv_gradv) - 2.0 * h_l_gradv * v_s
        + 2.0 * lt * v_s * v_t
        + psi * v * v_s
        - a_val * ls * v * v;
    let mut ds_n = lss * (v_s * v_s - v_t * v_t + h_gradv_gradv);
    {
        let mut h_gradv_gradvs = 0.0;
        let mut h_l_gradvs = 0.0;
        for j in 0..dim {
            for k in 0..dim {
                h_gradv_gradvs += hv[j][k] * v_sx[j] * v_x[k];
                h_l_gradvs += hv[j][k] * lx[j] * v_sx[k];
            }
        }
        ds_n += ls * (2.0 * v_s * v_ss - 2.0 * v_t * v_ts + 2.0 * h_gradv_gradvs);
        ds_n += -2.0 * (h_l_gradvs * v_s + h_l_gradv * v_ss);
        ds_n += 2.0 * lt * (v_ss * v_t + v_s * v_ts);
        ds_n += psi * (v_s * v_s + v * v_ss);
        ds_n += -a_s * ls * v * v - a_val * lss * v * v - 2.0 * a_val * ls * v * v_s;
    }
    let n_s = ds_n;

    // spatial flux V^k (over theta^2) and its full divergence
    let mut h_gradv = [0.0; 2]; // (h grad v)^k
    let mut h_l = [0.0; 2]; // (h l_x)^k
    for k in 0..dim {
        for j in 0..dim {
            h_gradv[k] += hv[j][k] * v_x[j];
            h_l[k] += hv[j][k] * lx[j];
        }
    }
    let mut v_flux = [0.0; 2];
    for k in 0..dim {
        let mut t1 = 0.0;
        let mut t4 = 0.0;
        for j in 0..dim {
            for jp in 0..dim {
                for kp in 0..dim {
                    t1 += hv[j][k] * hv[jp][kp] * lx[jp] * v_x[j] * v_x[kp];
                    t4 += hv[j][k] * hv[jp][kp] * lx[j] * v_x[jp] * v_x[kp];
                }
            }
        }
        v_flux[k] = 2.0 * t1 + h_l[k] * a_val * v * v - psi * v * h_gradv[k] - t4
            - 2.0 * (lt * v_t + ls * v_s) * h_gradv[k]
            + h_l[k] * (v_t * v_t + v_s * v_s);
    }

    let mut div_v = 0.0;
    for m in 0..dim {
        // d/dx_m of V^m, expanded by the product rule
        let mut acc = 0.0;
        // T1 = 2 sum h^{jm} h^{j'k'} l_{j'} v_j v_{k'}
        for j in 0..dim {
            for jp in 0..dim {
                for kp in 0..dim {
                    acc += 2.0
                        * (h1[m][j][m] * hv[jp][kp] * lx[jp] * v_x[j] * v_x[kp]
                            + hv[j][m] * h1[m][jp][kp] * lx[jp] * v_x[j] * v_x[kp]
                            + hv[j][m] * hv[jp][kp] * lxx[jp][m] * v_x[j] * v_x[kp]
                            + hv[j][m]
                                * hv[jp][kp]
                                * lx[jp]
                                * (v_xx[j][m] * v_x[kp] + v_x[j] * v_xx[kp][m]));
                }
            }
        }
        // T2 = (sum_j h^{jm} A l_j) v^2
        for j in 0..dim {
            acc += (h1[m][j][m] * a_val * lx[j]
                + hv[j][m] * a_x[m] * lx[j]
                + hv[j][m] * a_val * lxx[j][m])
                * v
                * v
                + hv[j][m] * a_val * lx[j] * 2.0 * v * v_x[m];
        }
        // T3 = -psi v (h grad v)^m
        {
            let mut dh_gradv = 0.0; // d/dx_m of (h grad v)^m
            for j in 0..dim {
                dh_gradv += h1[m][j][m] * v_x[j] + hv[j][m] * v_xx[j][m];
            }
            acc += -psi_x[m] * v * h_gradv[m] - psi * v_x[m] * h_gradv[m]
                - psi * v * dh_gradv;
        }
        // T4 = -sum h^{jm} h^{j'k'} l_j v_{j'} v_{k'}
        for j in 0..dim {
            for jp in 0..dim {
                for kp in 0..dim {
                    acc -= (h1[m][j][m] * hv[jp][kp] * lx[j]
                        + hv[j][m] * h1[m][jp][kp] * lx[j]
                        + hv[j][m] * hv[jp][kp] * lxx[j][m])
                        * v_x[jp]
                        * v_x[kp]
                        + hv[j][m]
                            * hv[jp][kp]
                            * lx[j]
                            * (v_xx[jp][m] * v_x[kp] + v_x[jp] * v_xx[kp][m]);
                }
            }
        }
        // T5 = -2 (l_t v_t + l_s v_s) (h grad v)^m
        {
            let mut dh_gradv = 0.0;
            for j in 0..dim {
                dh_gradv += h1[m][j][m] * v_x[j] + hv[j][m] * v_xx[j][m];
            }
            acc += -2.0 * (lt * v_tx[m] + ls * v_sx[m]) * h_gradv[m]
                - 2.0 * (lt * v_t + ls * v_s) * dh_gradv;
        }
        // T6 = (h l_x)^m (v_t^2 + v_s^2)
        {
            let mut dh_l = 0.0;
            for j in 0..dim {
                dh_l += h1[m][j][m] * lx[j] + hv[j][m] * lxx[j][m];
            }
            acc += dh_l * (v_t * v_t + v_s * v_s)
                + h_l[m] * 2.0 * (v_t * v_tx[m] + v_s * v_sx[m]);
        }
        div_v += acc;
    }

    // right-hand side of the pointwise inequality, as an exact expression
    // (mixed weight derivatives vanish for this family, so the v_t v_s and
    // grad-v cross blocks drop out)
    let mut c_form = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            c_form += c[j][k] * v_x[j] * v_x[k];
        }
    }
    let mut psi_cross = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            psi_cross += hv[j][k] * psi_x[j] * v * v_x[k];
        }
    }
    let rhs = 2.0 * (ltt - lss + div_h_l + psi) * v_t * v_t
        + 2.0 * (lss - ltt + div_h_l + psi) * v_s * v_s
        + 2.0 * c_form
        - 2.0 * psi_cross
        + b_val * v * v;

    Ok(CarlemanFrame {
        dim,
        ell: w.ell,
        theta: w.theta,
        psi,
        v,
        v_t,
        v_s,
        v_x,
        a: a_val,
        a_alt,
        c,
        b: b_val,
        i1,
        i2,
        pu,
        m: m_flux,
        n: n_flux,
        v_flux,
        m_t,
        n_s,
        div_v,
        rhs,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IdentityReport {
    pub residual: f64,
    pub relative: f64,
    pub largest_summand: f64,
}

impl CarlemanFrame {
    /// Residual of the exact identity, theta-stripped, and its size relative
    /// to the largest participating summand.
    pub fn identity_residual(&self) -> IdentityReport {
        let lhs_terms = [
            self.pu * self.pu,
            2.0 * self.div_v,
            2.0 * self.m_t,
            2.0 * self.n_s,
        ];
        let rhs_terms = [self.i1 * self.i1, self.i2 * self.i2, self.rhs];
        let residual = lhs_terms.iter().sum::<f64>() - rhs_terms.iter().sum::<f64>();
        let largest = lhs_terms
            .iter()
            .chain(rhs_terms.iter())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        IdentityReport {
            residual,
            relative: if largest == 0.0 { 0.0 } else { residual.abs() / largest },
            largest_summand: largest,
        }
    }

    /// Margin of the spectral lower bound at this point:
    /// LHS - 2 lambda (1-alpha)(v_t^2 + v_s^2 + h0 |grad v|^2)
    ///     - 8 (3+alpha) lambda^3 [d - alpha^2 (t')^2 - alpha^2 (s')^2] v^2.
    pub fn spectral_margin(&self, lambda: f64, alpha: f64, h0: f64, bracket: f64) -> f64 {
        let lhs = self.pu * self.pu + 2.0 * self.div_v + 2.0 * self.m_t + 2.0 * self.n_s;
        let grad2: f64 = self.v_x[..self.dim].iter().map(|g| g * g).sum();
        let rhs = 2.0 * lambda * (1.0 - alpha) * (self.v_t * self.v_t + self.v_s * self.v_s + h0 * grad2)
            + 8.0 * (3.0 + alpha) * lambda.powi(3) * bracket * self.v * self.v;
        lhs - rhs
    }
}

/// Frame + residual in one step.
#[allow(clippy::too_many_arguments)]
pub fn check_identity(
    u: &TestFunction,
    t: f64,
    s: f64,
    x: Point,
    lambda: f64,
    alpha: f64,
    t_horizon: f64,
    d: &WeightField,
    h: &CoefficientField,
    psi: &PsiField,
    dim: usize,
) -> Result<(CarlemanFrame, IdentityReport)> {
    let w = eval_weight(t, s, x, lambda, alpha, t_horizon, d, dim);
    let frame = eval_frame(u, t, s, x, &w, h, psi, d, dim)?;
    let report = frame.identity_residual();
    Ok((frame, report))
}

/// Identity reports for a batch of points, in parallel.
#[allow(clippy::too_many_arguments)]
pub fn identity_reports(
    u: &TestFunction,
    points: &[(f64, f64, Point)],
    lambda: f64,
    alpha: f64,
    t_horizon: f64,
    d: &WeightField,
    h: &CoefficientField,
    psi: &PsiField,
    dim: usize,
) -> Result<Vec<IdentityReport>> {
    points
        .par_iter()
        .map(|&(t, s, x)| {
            check_identity(u, t, s, x, lambda, alpha, t_horizon, d, h, psi, dim)
                .map(|(_, r)| r)
        })
        .collect()
}

/// Worst relative identity residual over a batch of points, in parallel.
#[allow(clippy::too_many_arguments)]
pub fn max_identity_residual(
    u: &TestFunction,
    points: &[(f64, f64, Point)],
    lambda: f64,
    alpha: f64,
    t_horizon: f64,
    d: &WeightField,
    h: &CoefficientField,
    psi: &PsiField,
    dim: usize,
) -> Result<f64> {
    points
        .par_iter()
        .map(|&(t, s, x)| {
            check_identity(u, t, s, x, lambda, alpha, t_horizon, d, h, psi, dim)
                .map(|(_, r)| r.relative)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub min_margin: f64,
    pub argmin: (f64, f64, [f64; 2]),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Least grid lambda from which every larger grid lambda keeps the
    /// margin nonnegative.
    pub lambda0: Option<f64>,
}

/// Sweep the spectral lower bound over a lambda grid at sample points drawn
/// from the super-level region of the weight. Points must satisfy the
/// alpha^2-bracket positivity; a violating point is a caller error.
#[allow(clippy::too_many_arguments)]
pub fn check_pointwise_inequality(
    u: &TestFunction,
    lambda_grid: &[f64],
    samples: &[(f64, f64, Point)],
    alpha: f64,
    t_horizon: f64,
    d: &WeightField,
    h: &CoefficientField,
    h0: f64,
    dim: usize,
) -> Result<SweepReport> {
    let t_half = t_horizon / 2.0;
    for &(t, s, x) in samples {
        let bracket = d.value(dim, x)
            - alpha * alpha * (t - t_half).powi(2)
            - alpha * alpha * (s - t_half).powi(2);
        if bracket <= 0.0 {
            return Err(Error::OutsideSamplingRegion { t, s, x, bracket });
        }
    }
    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let psi = PsiField::Step3 { lambda, alpha };
        let evaluated: Vec<(f64, (f64, f64, Point))> = samples
            .par_iter()
            .map(|&(t, s, x)| {
                let w = eval_weight(t, s, x, lambda, alpha, t_horizon, d, dim);
                let frame = eval_frame(u, t, s, x, &w, h, &psi, d, dim)?;
                let bracket = d.value(dim, x)
                    - alpha * alpha * (t - t_half).powi(2)
                    - alpha * alpha * (s - t_half).powi(2);
                Ok((frame.spectral_margin(lambda, alpha, h0, bracket), (t, s, x)))
            })
            .collect::<Result<_>>()?;
        let (min_margin, argmin) = evaluated
            .into_iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .expect("nonempty sample set");
        rows.push(SweepRow { lambda, min_margin, argmin: (argmin.0, argmin.1, argmin.2) });
    }
    let mut lambda0 = None;
    for i in (0..rows.len()).rev() {
        if rows[i].min_margin >= 0.0 {
            lambda0 = Some(rows[i].lambda);
        } else {
            break;
        }
    }
    if lambda0.is_none() {
        let worst = rows
            .iter()
            .min_by(|a, b| a.min_margin.partial_cmp(&b.min_margin).unwrap())
            .unwrap();
        return Err(Error::NoThreshold {
            lambda: worst.lambda,
            worst_margin: worst.min_margin,
        });
    }
    Ok(SweepReport { rows, lambda0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::WeightKind;
    use approx::assert_relative_eq;

    fn poly(terms: &[([u8; 4], f64)]) -> TestFunction {
        TestFunction::Polynomial { terms: terms.to_vec() }
    }

    #[test]
    fn weight_bundle_matches_closed_forms() {
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let (lambda, alpha, t_horizon) = (10.0, 0.9, 1.76);
        let w = eval_weight(0.3, 1.1, [0.4, 0.0], lambda, alpha, t_horizon, &d, 1);
        assert_relative_eq!(w.ltt, -2.0 * lambda * alpha);
        assert_relative_eq!(w.lss, -2.0 * lambda * alpha);
        let phi = 0.25 - alpha * (0.3f64 - 0.88).powi(2) - alpha * (1.1f64 - 0.88).powi(2);
        assert_relative_eq!(w.phi, phi, epsilon = 1e-14);
        assert_relative_eq!(w.theta.unwrap(), (lambda * phi).exp(), max_relative = 1e-12);
        // vanishing quadratic terms at the time center
        let mid = eval_weight(0.88, 0.88, [0.4, 0.0], lambda, alpha, t_horizon, &d, 1);
        assert_relative_eq!(mid.phi, 0.25, epsilon = 1e-14);
        // lambda = 0 kills the weight
        let z = eval_weight(0.3, 1.1, [0.4, 0.0], 0.0, alpha, t_horizon, &d, 1);
        assert_eq!(z.theta.unwrap(), 1.0);
        assert_eq!((z.lt, z.ls, z.ltt, z.lx[0]), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn overflow_guard_switches_to_log_domain() {
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let w = eval_weight(0.88, 0.88, [1.0, 0.0], 400.0, 0.9, 1.76, &d, 1);
        assert!(w.ell > 300.0);
        assert!(w.theta.is_none());
    }

    /// Frozen values from the exact symbolic oracle (tools/identity_oracle.py):
    /// n = 1, h = 2, d = (x + 1/10)^2 + x^3/5, lambda = 2, alpha = 1/2, T = 2,
    /// psi = x^2/3, u = 1 + t s + 3 x^2 t - s^2 x, at (t,s,x) = (3/5, 7/10, 2/5).
    #[test]
    fn frame_matches_symbolic_oracle_1d() {
        let d = WeightField::new(WeightKind::CubicPerturbed {
            center: [-0.1, 0.0],
            cubic: 0.2,
        });
        let h = CoefficientField::Diagonal { values: [2.0, 2.0] };
        let psi = PsiField::QuadraticDiag { c: [1.0 / 3.0, 0.0] };
        let u = poly(&[
            ([0, 0, 0, 0], 1.0),
            ([1, 1, 0, 0], 1.0),
            ([1, 0, 2, 0], 3.0),
            ([0, 2, 1, 0], -1.0),
        ]);
        let (t, s, x) = (0.6, 0.7, [0.4, 0.0]);
        let w = eval_weight(t, s, x, 2.0, 0.5, 2.0, &d, 1);
        assert_relative_eq!(w.phi, 0.1378, epsilon = 1e-14);
        let f = eval_frame(&u, t, s, x, &w, &h, &psi, &d, 1).unwrap();
        assert_relative_eq!(f.a, -5.3636053333333333, max_relative = 1e-13);
        assert_relative_eq!(f.b, 178.99458332444444, max_relative = 1e-13);
        assert_relative_eq!(f.i1, -40.348777472, max_relative = 1e-13);
        assert_relative_eq!(f.i2, 32.348777472, max_relative = 1e-13);
        assert_relative_eq!(f.pu, -8.0, max_relative = 1e-13);
        assert_relative_eq!(f.m, -43.6820983590912, max_relative = 1e-13);
        assert_relative_eq!(f.n, -5.4268568054784, max_relative = 1e-13);
        assert_relative_eq!(f.m_t, -134.00768672742059, max_relative = 1e-13);
        assert_relative_eq!(f.n_s, 21.950169771431253, max_relative = 1e-13);
        assert_relative_eq!(f.div_v, 1897.7159852010178, max_relative = 1e-13);
        assert_relative_eq!(f.rhs, 960.84968907210752, max_relative = 1e-13);
        assert_relative_eq!(f.v_flux[0], 91.660441559678976, max_relative = 1e-13);
        assert_relative_eq!(f.c[0][0], 11.733333333333333, max_relative = 1e-13);
        let rep = f.identity_residual();
        assert!(rep.relative < 1e-12, "relative residual {}", rep.relative);
    }

    /// Frozen values from the symbolic oracle: n = 2, h = [[2,1/2],[1/2,3]],
    /// d = (x1+1/10)^2 + (x2-1/5)^2, lambda = 3/2, alpha = 3/4, T = 2,
    /// psi = x1/2 - x2/3, u = 2 + t x2 + s x1 - x1 x2 + t^2 s,
    /// at (t,s,x1,x2) = (1/2, 4/5, 3/10, 1/5).
    #[test]
    fn frame_matches_symbolic_oracle_2d() {
        let d = WeightField::paraboloid([-0.1, 0.2]);
        let h = CoefficientField::Constant { m: [[2.0, 0.5], [0.5, 3.0]] };
        let psi = PsiField::Linear { a: [0.5, -1.0 / 3.0] };
        let u = poly(&[
            ([0, 0, 0, 0], 2.0),
            ([1, 0, 0, 1], 1.0),
            ([0, 1, 1, 0], 1.0),
            ([0, 0, 1, 1], -1.0),
            ([2, 1, 0, 0], 1.0),
        ]);
        let (t, s, x) = (0.5, 0.8, [0.3, 0.2]);
        let w = eval_weight(t, s, x, 1.5, 0.75, 2.0, &d, 2);
        let f = eval_frame(&u, t, s, x, &w, &h, &psi, &d, 2).unwrap();
        assert_relative_eq!(f.a, -18.171458333333333, max_relative = 1e-13);
        assert_relative_eq!(f.b, -653.48857638888889, max_relative = 1e-13);
        assert_relative_eq!(f.i1, -4.5712333333333333, max_relative = 1e-13);
        assert_relative_eq!(f.i2, 7.1712333333333333, max_relative = 1e-13);
        assert_relative_eq!(f.pu, 2.6, max_relative = 1e-13);
        assert_relative_eq!(f.m, 108.98296316666667, max_relative = 1e-13);
        assert_relative_eq!(f.n, 42.517500266666667, max_relative = 1e-13);
        assert_relative_eq!(f.m_t, -6.507040875, max_relative = 1e-12);
        assert_relative_eq!(f.n_s, -193.42230830166667, max_relative = 1e-13);
        assert_relative_eq!(f.div_v, -1692.8388674133333, max_relative = 1e-13);
        assert_relative_eq!(f.rhs, -3851.0991948888889, max_relative = 1e-13);
        assert_relative_eq!(f.v_flux[0], -238.47301586666667, max_relative = 1e-13);
        assert_relative_eq!(f.v_flux[1], -55.4947948, max_relative = 1e-13);
        assert_relative_eq!(f.c[0][0], -13.666666666666667, max_relative = 1e-13);
        assert_relative_eq!(f.c[0][1], 5.2083333333333333, max_relative = 1e-13);
        assert_relative_eq!(f.c[1][0], 5.2083333333333333, max_relative = 1e-13);
        assert_relative_eq!(f.c[1][1], -3.25, max_relative = 1e-13);
        // constant coefficients: the c matrix is symmetric
        assert_relative_eq!(f.c[0][1], f.c[1][0], max_relative = 1e-14);
        let rep = f.identity_residual();
        assert!(rep.relative < 1e-12, "relative residual {}", rep.relative);
    }

    #[test]
    fn zero_test_function_gives_exact_zero() {
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let (f, rep) = check_identity(
            &TestFunction::Zero, 0.4, 0.9, [0.3, 0.0], 5.0, 0.9, 1.76, &d, &h,
            &PsiField::Step3 { lambda: 5.0, alpha: 0.9 }, 1,
        )
        .unwrap();
        assert_eq!(rep.residual, 0.0);
        assert_eq!((f.i1, f.i2, f.m, f.n, f.v_flux[0]), (0.0, 0.0, 0.0, 0.0, 0.0));
    }

    fn w_ell(d: &WeightField, t: f64, s: f64, x: f64, lambda: f64, alpha: f64, t_horizon: f64) -> f64 {
        eval_weight(t, s, [x, 0.0], lambda, alpha, t_horizon, d, 1).ell
    }

    #[test]
    fn inverse_weight_reduces_to_zero_order_bookkeeping() {
        // u = theta^{-1} makes v constant: all v-derivative terms drop
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let (lambda, alpha, t_horizon) = (3.0, 0.8, 1.76);
        let u = TestFunction::InverseWeight {
            lambda,
            alpha,
            t_horizon,
            weight: d.clone(),
        };
        let psi = PsiField::Step3 { lambda, alpha };
        let (f, rep) = check_identity(
            &u, 0.5, 0.7, [0.35, 0.0], lambda, alpha, t_horizon, &d, &h, &psi, 1,
        )
        .unwrap();
        // stripped v equals u = e^{-l}; the actual v = theta u is 1
        assert_relative_eq!(f.v, (-w_ell(&d, 0.5, 0.7, 0.35, lambda, alpha, t_horizon)).exp(), max_relative = 1e-12);
        assert!(f.v_t.abs() < 1e-10 && f.v_s.abs() < 1e-10 && f.v_x[0].abs() < 1e-10);
        assert!(rep.relative <= 1e-8, "relative residual {}", rep.relative);
    }

    #[test]
    fn zero_weight_reduces_inequality_to_square() {
        // lambda = 0, psi = 0: RHS collapses and LHS is (Pu)^2 >= 0
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let u = poly(&[([2, 0, 0, 0], 1.0), ([0, 1, 2, 0], 0.5)]);
        let (f, rep) = check_identity(
            &u, 0.4, 0.6, [0.5, 0.0], 0.0, 0.9, 1.76, &d, &h, &PsiField::Zero, 1,
        )
        .unwrap();
        assert_eq!(f.rhs, 0.0);
        assert_eq!(f.a, 0.0);
        assert_eq!(f.i2, 0.0);
        assert_eq!(f.c[0][0], 0.0);
        assert!(rep.relative < 1e-12);
        assert!(f.pu * f.pu >= 0.0);
    }

    #[test]
    fn identity_random_points_all_families() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        use rand::SeedableRng;
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let fams = [
            poly(&[([1, 1, 1, 0], 1.3), ([2, 0, 0, 0], -0.4), ([0, 0, 3, 0], 0.9)]),
            TestFunction::SeparableTrig {
                amp: 1.4,
                freq: [2.0, 1.5, 3.0, 0.0],
                phase: [0.2, 1.0, 0.4, std::f64::consts::FRAC_PI_2],
            },
            TestFunction::GaussianBump {
                amp: 0.9,
                center: [0.8, 0.9, 0.4, 0.0],
                gamma: [1.5, 2.0, 3.0, 0.0],
            },
        ];
        for u in &fams {
            for _ in 0..100 {
                let t = rng.gen::<f64>() * 1.76;
                let s = rng.gen::<f64>() * 1.76;
                let x = [rng.gen::<f64>(), 0.0];
                let lambda = rng.gen::<f64>() * 20.0;
                let (_, rep) = check_identity(
                    u, t, s, x, lambda, 0.95, 1.76, &d, &h,
                    &PsiField::Step3 { lambda, alpha: 0.95 }, 1,
                )
                .unwrap();
                assert!(rep.relative <= 1e-6, "relative residual {}", rep.relative);
            }
        }
    }

    #[test]
    fn identity_holds_with_variable_coefficients() {
        // exercises every analytic-derivative path: first and second
        // coefficient derivatives and the third weight derivatives
        let d1 = WeightField::new(WeightKind::CubicPerturbed {
            center: [-0.1, 0.0],
            cubic: 0.3,
        });
        let h1 = CoefficientField::Affine { base: 1.5, slope: [0.25, 0.0] };
        let u1 = poly(&[([1, 1, 2, 0], 1.0), ([2, 0, 1, 0], -0.7), ([0, 1, 0, 0], 0.4)]);
        let psi = PsiField::Step3 { lambda: 4.0, alpha: 0.85 };
        let (_, rep) = check_identity(
            &u1, 0.5, 0.9, [0.45, 0.0], 4.0, 0.85, 1.76, &d1, &h1, &psi, 1,
        )
        .unwrap();
        assert!(rep.relative < 1e-11, "1-d variable h: {}", rep.relative);

        let d2 = WeightField::paraboloid([-0.3, 1.4]);
        let h2 = CoefficientField::Isotropic { base: 2.0, amp: 0.4, freq: [1.0, 2.0] };
        let u2 = poly(&[([1, 0, 1, 1], 0.8), ([0, 2, 0, 1], -0.5), ([1, 1, 2, 0], 0.3)]);
        let psi2 = PsiField::Step3 { lambda: 3.0, alpha: 0.9 };
        let (_, rep2) = check_identity(
            &u2, 0.7, 0.4, [0.35, 0.6], 3.0, 0.9, 1.5, &d2, &h2, &psi2, 2,
        )
        .unwrap();
        assert!(rep2.relative < 1e-11, "2-d variable h: {}", rep2.relative);
    }

    #[test]
    fn test_function_jets_match_central_differences() {
        let fams = [
            poly(&[([2, 1, 1, 1], 0.7), ([0, 0, 2, 2], -1.1), ([1, 0, 0, 3], 0.3)]),
            TestFunction::SeparableTrig {
                amp: 2.0,
                freq: [1.0, 2.0, 0.5, 1.5],
                phase: [0.3, 0.7, 0.1, 0.9],
            },
            TestFunction::GaussianBump {
                amp: 1.2,
                center: [0.5, 0.5, 0.2, 0.8],
                gamma: [1.0, 0.5, 2.0, 1.5],
            },
        ];
        for u in &fams {
            let coarse = u.jet_fd_error(0.4, 0.7, [0.3, 0.6], 2, 1e-3);
            let fine = u.jet_fd_error(0.4, 0.7, [0.3, 0.6], 2, 5e-4);
            assert!(fine < 1e-4, "fd mismatch {fine}");
            // second-order convergence unless already at rounding level
            assert!(fine <= coarse / 2.5 || fine < 1e-9, "coarse {coarse}, fine {fine}");
        }
    }

    #[test]
    fn log_domain_residual_stays_finite() {
        // lambda phi > 300: theta is not representable, the stripped residual is
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let u = poly(&[([1, 1, 1, 0], 1.0)]);
        let lambda = 500.0;
        let (f, rep) = check_identity(
            &u, 0.88, 0.88, [0.9, 0.0], lambda, 0.95, 1.76, &d, &h,
            &PsiField::Step3 { lambda, alpha: 0.95 }, 1,
        )
        .unwrap();
        assert!(f.theta.is_none());
        assert!(rep.relative.is_finite());
        assert!(rep.relative <= 1e-6, "relative residual {}", rep.relative);
    }

    #[test]
    fn square_expansion_is_exact() {
        // theta^2 (Pu)^2 = I1^2 + I2^2 + 2 I1 I2 identically (stripped)
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let u = poly(&[([1, 1, 1, 0], 0.8), ([0, 2, 0, 0], -0.3), ([2, 0, 1, 0], 1.1)]);
        for lambda in [0.5, 3.0, 12.0] {
            let psi = PsiField::Step3 { lambda, alpha: 0.9 };
            let (f, _) = check_identity(
                &u, 0.5, 0.9, [0.45, 0.0], lambda, 0.9, 1.76, &d, &h, &psi, 1,
            )
            .unwrap();
            let lhs = f.pu * f.pu;
            let rhs = f.i1 * f.i1 + f.i2 * f.i2 + 2.0 * f.i1 * f.i2;
            assert_relative_eq!(lhs, rhs, max_relative = 1e-11);
        }
    }

    #[test]
    fn c_form_dominates_spectrally_on_the_grid() {
        // with the normalized weight and the drift-compensating multiplier:
        // 2 c^{11} - 4 lambda (1 - alpha) h0 >= -tol * lambda at every node
        let g = crate::grid::Grid::interval(0.0, 1.0, 101);
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let alpha = 0.997;
        let u = TestFunction::Zero;
        for &lambda in &[1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
            let psi = PsiField::Step3 { lambda, alpha };
            for node in g.inside_indices() {
                let x = g.node_pos(node);
                let w = eval_weight(0.8, 0.9, x, lambda, alpha, 1.76, &d, 1);
                let f = eval_frame(&u, 0.8, 0.9, x, &w, &h, &psi, &d, 1).unwrap();
                let form = 2.0 * f.c[0][0] - 4.0 * lambda * (1.0 - alpha) * 1.0;
                assert!(
                    form >= -1e-9 * lambda,
                    "node {node}, lambda {lambda}: form {form}"
                );
            }
        }
    }

    #[test]
    fn sweep_finds_threshold_and_zero_function_trivially_passes() {
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        let samples = vec![
            (0.88, 0.88, [0.5, 0.0]),
            (0.8, 0.95, [0.2, 0.0]),
            (0.88, 0.88, [0.05, 0.0]),
        ];
        let grid = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
        let rep = check_pointwise_inequality(
            &TestFunction::Zero, &grid, &samples, 0.997, 1.76, &d, &h, 1.0, 1,
        )
        .unwrap();
        assert_eq!(rep.lambda0, Some(1.0));
    }

    #[test]
    fn sweep_rejects_point_outside_region() {
        let d = WeightField::paraboloid([-0.1, 0.0]);
        let h = CoefficientField::Identity;
        // bracket d - alpha^2 (t')^2 - ... < 0 near t = 0 at small d
        let samples = vec![(0.0, 0.88, [0.0501, 0.0])];
        let err = check_pointwise_inequality(
            &TestFunction::Zero, &[1.0], &samples, 0.997, 1.76, &d, &h, 1.0, 1,
        );
        assert!(matches!(err, Err(Error::OutsideSamplingRegion { .. })));
    }
}
