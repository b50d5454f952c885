#!/usr/bin/env python3
"""Symbolic cross-check for the weighted pointwise identity behind the
Carleman machinery, plus generator for the frozen reference values used by
the Rust test suite.

The identity being certified, for the ultra-hyperbolic operator
P = d_tt + d_ss - sum_jk d_xk(h^jk d_xj) and any smooth u, weight l,
multiplier Psi:

    theta^2 (Pu)^2 + 2 div V + 2 M_t + 2 N_s  =  I1^2 + I2^2 + RHS,

with theta = e^l, v = theta*u, and A, c^jk, B, V, M, N, I1, I2, RHS the
closed-form frame expressions implemented in crates/core/src/carleman.rs.

Everything here is evaluated with exact rational arithmetic at random
rational points (the residual is a polynomial identity in the jet of the
inputs, so exact vanishing at random points is a Schwartz-Zippel-grade
certificate). Sympy performs all differentiation, so this path shares no
chain-rule bookkeeping with the Rust implementation.

Usage: python3 tools/identity_oracle.py          # verify + print frozen values
"""

import random
import sympy as sp


def rnd_rat(rng, den=7):
    return sp.Rational(rng.randint(-12, 12), rng.randint(1, den))


def rnd_poly(rng, vars_, deg=2, terms=6):
    p = sp.Integer(0)
    for _ in range(terms):
        mono = rnd_rat(rng)
        budget = deg
        for v in vars_:
            e = rng.randint(0, budget)
            mono *= v**e
            budget -= e
        p += mono
    return sp.expand(p)


def frame(n, h, ell, psi, u, t, s, xs):
    """Build every frame quantity symbolically. Returns a dict."""
    theta = sp.exp(ell)
    v = theta * u

    def dx(f, j):
        return sp.diff(f, xs[j])

    lt, ls = sp.diff(ell, t), sp.diff(ell, s)
    ltt, lss = sp.diff(ell, t, 2), sp.diff(ell, s, 2)
    lx = [dx(ell, j) for j in range(n)]

    # sum_jk (h^jk l_xj)_xk and the same for v, u
    def div_h_grad(f):
        return sum(dx(h[j][k] * dx(f, j), k) for j in range(n) for k in range(n))

    hl = div_h_grad(ell)
    A = -lt**2 - ls**2 + sum(h[j][k] * lx[j] * lx[k] for j in range(n) for k in range(n)) \
        + ltt + lss - hl - psi
    # alternative grouping of the same quantity (expanded divergence)
    A_alt = sum(h[j][k] * lx[j] * lx[k] - dx(h[j][k], j) * lx[k] - h[j][k] * dx(lx[j], k)
                for j in range(n) for k in range(n)) - lt**2 - ls**2 + ltt + lss - psi

    vt, vs = sp.diff(v, t), sp.diff(v, s)
    vx = [dx(v, j) for j in range(n)]

    I1 = sp.diff(v, t, 2) + sp.diff(v, s, 2) - div_h_grad(v) - A * v
    I2 = -2 * lt * vt - 2 * ls * vs \
        + 2 * sum(h[j][k] * lx[j] * vx[k] for j in range(n) for k in range(n)) - psi * v

    c = [[sum(2 * h[j][kp] * dx(h[jp][k] * lx[jp], kp)
              - dx(h[j][k] * h[jp][kp] * lx[jp], kp)
              for jp in range(n) for kp in range(n))
          + h[j][k] * (ltt + lss - psi)
          for k in range(n)] for j in range(n)]

    B = 2 * (A * psi - sp.diff(A * lt, t) - sp.diff(A * ls, s)
             + sum(dx(A * h[j][k] * lx[j], k) for j in range(n) for k in range(n)))

    V = []
    for k in range(n):
        Vk = 2 * sum(h[j][k] * h[jp][kp] * lx[jp] * vx[j] * vx[kp]
                     for j in range(n) for jp in range(n) for kp in range(n)) \
            + sum(h[j][k] * A * lx[j] for j in range(n)) * v**2 \
            - psi * v * sum(h[j][k] * vx[j] for j in range(n)) \
            - sum(h[j][k] * h[jp][kp] * lx[j] * vx[jp] * vx[kp]
                  for j in range(n) for jp in range(n) for kp in range(n)) \
            - 2 * (lt * vt + ls * vs) * sum(h[j][k] * vx[j] for j in range(n)) \
            + sum(h[j][k] * lx[j] for j in range(n)) * (vt**2 + vs**2)
        V.append(Vk)

    hgrad_vv = sum(h[j][k] * vx[j] * vx[k] for j in range(n) for k in range(n))
    M = lt * (vt**2 - vs**2 + hgrad_vv) \
        - 2 * sum(h[j][k] * lx[j] * vx[k] for j in range(n) for k in range(n)) * vt \
        + 2 * ls * vs * vt + psi * v * vt - A * lt * v**2
    N = ls * (vs**2 - vt**2 + hgrad_vv) \
        - 2 * sum(h[j][k] * lx[j] * vx[k] for j in range(n) for k in range(n)) * vs \
        + 2 * lt * vs * vt + psi * v * vs - A * ls * v**2

    ltx = [sp.diff(lt, xs[j]) for j in range(n)]
    lsx = [sp.diff(ls, xs[j]) for j in range(n)]
    lst = sp.diff(lt, s)
    RHS = 2 * (ltt - lss + hl + psi) * vt**2 \
        - 8 * sum(h[j][k] * ltx[j] * vx[k] for j in range(n) for k in range(n)) * vt \
        + 8 * lst * vs * vt \
        - 8 * sum(h[j][k] * lsx[j] * vx[k] for j in range(n) for k in range(n)) * vs \
        + 2 * (lss - ltt + hl + psi) * vs**2 \
        + 2 * sum(c[j][k] * vx[j] * vx[k] for j in range(n) for k in range(n)) \
        - 2 * sum(h[j][k] * dx(psi, j) * v * vx[k] for j in range(n) for k in range(n)) \
        + B * v**2

    Pu = sp.diff(u, t, 2) + sp.diff(u, s, 2) - div_h_grad(u)
    divV = sum(dx(V[k], k) for k in range(n))
    Mt = sp.diff(M, t)
    Ns = sp.diff(N, s)

    residual = theta**2 * Pu**2 + 2 * divV + 2 * Mt + 2 * Ns - I1**2 - I2**2 - RHS

    return dict(theta=theta, v=v, A=A, A_alt=A_alt, I1=I1, I2=I2, c=c, B=B,
                V=V, M=M, N=N, RHS=RHS, Pu=Pu, divV=divV, Mt=Mt, Ns=Ns,
                residual=residual, ell=ell)


def check_zero_at(expr, subs, theta_pow, ell, name):
    val = expr.subs(subs)
    ellv = ell.subs(subs)
    stripped = sp.simplify(val / sp.exp(theta_pow * ellv))
    assert stripped == 0, f"{name}: nonzero residual {stripped}"


def verify(n, seed):
    rng = random.Random(seed)
    t, s = sp.symbols("t s")
    xs = sp.symbols(f"x1:{n + 1}")
    xs = list(xs) if isinstance(xs, tuple) else [xs]
    all_vars = [t, s] + xs

    # symmetric variable coefficients (definiteness is irrelevant to the identity)
    h = [[sp.Integer(0)] * n for _ in range(n)]
    for j in range(n):
        h[j][j] = sp.Integer(2 + j) + rnd_poly(rng, xs, deg=1, terms=2)
    for j in range(n):
        for k in range(j + 1, n):
            off = rnd_poly(rng, xs, deg=1, terms=2) / 5
            h[j][k] = off
            h[k][j] = off

    ell = rnd_poly(rng, all_vars, deg=2, terms=8)     # general weight, mixed derivatives live
    psi = rnd_poly(rng, xs, deg=2, terms=4)
    u = rnd_poly(rng, all_vars, deg=2, terms=8)

    f = frame(n, h, ell, psi, u, t, s, xs)

    for trial in range(3):
        subs = {v: rnd_rat(rng, den=5) for v in all_vars}
        check_zero_at(f["residual"], subs, 2, ell, f"identity n={n} trial={trial}")
        check_zero_at(f["A"] - f["A_alt"], subs, 0, ell, "A groupings")
        check_zero_at(f["theta"] * f["Pu"] - f["I1"] - f["I2"], subs, 1, ell, "I1+I2 split")
    print(f"identity exact for n={n} (general weight, variable symmetric h): OK")


def freeze(n, label, h, d, lam, alpha, T, psi, u, pt):
    """Print frozen (theta-stripped) frame values for the Rust tests."""
    t, s = sp.symbols("t s")
    xs = list(sp.symbols(f"x1:{n + 1}")) if n > 1 else [sp.Symbol("x1")]
    all_vars = [t, s] + xs
    ell = lam * (d - alpha * (t - T / 2) ** 2 - alpha * (s - T / 2) ** 2)
    f = frame(n, h, ell, psi, u, t, s, xs)
    subs = dict(zip(all_vars, pt))
    ellv = f["ell"].subs(subs)
    th = sp.exp(ellv)

    def ev(e, pw):
        return sp.nsimplify(sp.simplify(e.subs(subs) / th**pw), rational=False)

    out = {
        "phi": (f["ell"] / lam).subs(subs),
        "ell": ellv,
        "a": ev(f["A"], 0),
        "b_scalar": ev(f["B"], 0),
        "i1": ev(f["I1"], 1),
        "i2": ev(f["I2"], 1),
        "pu": f["Pu"].subs(subs),
        "m": ev(f["M"], 2),
        "n": ev(f["N"], 2),
        "m_t": ev(f["Mt"], 2),
        "n_s": ev(f["Ns"], 2),
        "div_v": ev(f["divV"], 2),
        "rhs": ev(f["RHS"], 2),
    }
    for j in range(n):
        out[f"v{j + 1}"] = ev(f["V"][j], 2)
        for k in range(n):
            out[f"c{j + 1}{k + 1}"] = ev(f["c"][j][k], 0)
    print(f"--- frozen frame values: {label} ---")
    for key, val in out.items():
        print(f"{key} = {sp.Float(val, 20)!s}")


def freeze_condition1_bracket():
    """mu0 oracle for variable 1-d coefficients: smallest generalized
    eigenvalue of the pseudoconvexity bracket against h, at sample nodes."""
    x = sp.Symbol("x1")
    h = sp.Rational(3, 2) + x / 4
    x0 = sp.Rational(-1, 10)
    d = (x - x0) ** 2
    dx1 = sp.diff(d, x)
    bracket = 2 * h * sp.diff(h * dx1, x) - sp.diff(h, x) * h * dx1
    quotient = sp.simplify(bracket / h)
    print("--- condition-1 bracket quotient, h=3/2+x/4, d=(x+1/10)^2 ---")
    for xv in [sp.Rational(0), sp.Rational(1, 2), sp.Rational(1)]:
        print(f"x={xv}: quotient = {sp.Float(quotient.subs(x, xv), 20)}")
    xs = [sp.Rational(i, 200) for i in range(0, 201)]
    vals = [quotient.subs(x, xv) for xv in xs]
    print(f"min over 201 nodes on [0,1]: {sp.Float(min(vals), 20)}")


def main():
    verify(1, seed=11)
    verify(2, seed=23)

    # reference 1-d freeze: constant h=2, paraboloid-plus-cubic weight
    x1 = sp.Symbol("x1")
    t, s = sp.symbols("t s")
    freeze(
        1, "n=1, h=[2], d=(x+1/10)^2 + x^3/5, lam=2, alpha=1/2, T=2, psi=x^2/3, u=poly",
        h=[[sp.Integer(2)]],
        d=(x1 + sp.Rational(1, 10)) ** 2 + x1**3 / 5,
        lam=sp.Integer(2), alpha=sp.Rational(1, 2), T=sp.Integer(2),
        psi=x1**2 / 3,
        u=1 + t * s + 3 * x1**2 * t - s**2 * x1,
        pt=[sp.Rational(3, 5), sp.Rational(7, 10), sp.Rational(2, 5)],
    )

    x2 = sp.Symbol("x2")
    freeze(
        2, "n=2, h=[[2,1/2],[1/2,3]], d=|x-x0|^2, lam=3/2, alpha=3/4, T=2, psi=lin, u=poly",
        h=[[sp.Integer(2), sp.Rational(1, 2)], [sp.Rational(1, 2), sp.Integer(3)]],
        d=(x1 + sp.Rational(1, 10)) ** 2 + (x2 - sp.Rational(1, 5)) ** 2,
        lam=sp.Rational(3, 2), alpha=sp.Rational(3, 4), T=sp.Integer(2),
        psi=x1 / 2 - x2 / 3,
        u=2 + t * x2 + s * x1 - x1 * x2 + t**2 * s,
        pt=[sp.Rational(1, 2), sp.Rational(4, 5), sp.Rational(3, 10), sp.Rational(1, 5)],
    )

    freeze_condition1_bracket()


if __name__ == "__main__":
    main()
