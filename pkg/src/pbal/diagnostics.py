"""A-priori envelopes, bound checks, entropy residuals and regularity moduli.

The envelopes are obtained by integrating their comparison ODEs directly
(same embedded RK machinery as the particle solver) instead of inverting the
nonlinear comparison primitives.  The entropy residual evaluates the
Kruzkov-type inequality of the scheme on a documented grid of bump test
functions and constants; its negative part must shrink like max q_i(0) ~ 1/N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from . import dynamics
from .density import (ParticleSystem, l1_distance, pushforward_affine,
                      to_density, total_variation, w1_distance)
from .integrator import Trajectory, solve_scalar_ode
from .scenario import Branch, Scenario


# ---------------------------------------------------------------------------
# envelope curves

@dataclass(frozen=True)
class Curve:
    """Sampled monotone curve with linear interpolation; inf past blow-up."""

    ts: np.ndarray
    ys: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        finite = np.isfinite(self.ys)
        if finite.all():
            out = np.interp(t, self.ts, self.ys)
        else:
            k = int(np.argmin(finite))  # first non-finite sample
            out = np.where(
                t >= self.ts[k],
                np.inf,
                np.interp(t, self.ts[:k], self.ys[:k]),
            )
        return float(out) if out.ndim == 0 else out

    @property
    def blowup_time(self):
        finite = np.isfinite(self.ys)
        if finite.all():
            return None
        return float(self.ts[int(np.argmin(finite))])


@dataclass(frozen=True)
class EnvelopeCurves:
    Q: Callable
    S: Callable
    R: Callable
    B: Optional[Callable]
    q0: float
    S0: float
    R0: float
    B0: float


def envelope_Q(s: Scenario, t: float) -> float:
    """Mass amplification exp(c_f * int_0^t F)."""
    if s.source.c_f == 0.0 or t == 0.0:
        return 1.0
    F = s.advection.growth_F
    integral, _ = quad(lambda tau: float(F(tau)), 0.0, t, epsabs=1e-10, epsrel=1e-10)
    return math.exp(s.source.c_f * integral)


def envelope_S(s: Scenario, S0: float, t_end: float, q0: float, n_grid: int = 257) -> Curve:
    """Support envelope: integrates s' = |v|inf F(t) [1 + q(0) Q(t)] lambda(s)."""
    vsup = s.congestion.v_sup
    F = s.advection.growth_F
    lam = s.advection.growth_lambda

    def rate(t, y):
        return vsup * float(F(t)) * (1.0 + q0 * envelope_Q(s, t)) * float(lam(max(y, 0.0)))

    ts = np.linspace(0.0, t_end, n_grid)
    return Curve(ts, solve_scalar_ode(rate, 0.0, S0, ts))


def _c1_remark(s: Scenario, q0: float, S_curve: Curve):
    """C1(t) = F(t) [G(S(t)) + G(2 S(t)) q(0) Q(t)], uniform in N."""
    F, G = s.advection.growth_F, s.advection.growth_G

    def c1(t):
        st = S_curve(t)
        if not np.isfinite(st):
            return np.inf
        return float(F(t)) * (float(G(st)) + float(G(2.0 * st)) * q0 * envelope_Q(s, t))

    return c1


def envelope_R(s: Scenario, R0: float, t_end: float, q0: float, S_curve: Curve,
               n_grid: int = 257) -> Curve:
    """Density envelope along the scenario's declared no-collapse branch."""
    vsup = s.congestion.v_sup
    F = s.advection.growth_F
    cf = s.source.c_f
    c1 = _c1_remark(s, q0, S_curve)

    if s.no_collapse_branch is Branch.V_DECAYS:
        if s.congestion.decay_g is None:
            raise ValueError("v_decays branch requires decay_g")
        g = s.congestion.decay_g

        def rate(t, y):
            # C2(t) <= F(t): the refined time-dependent constants
            return (c1(t) * vsup + float(F(t)) + cf * float(F(t))) * float(g(max(y, 0.0)))
    else:

        def rate(t, y):
            return (c1(t) * vsup + cf * float(F(t))) * max(y, 0.0)

    ts = np.linspace(0.0, t_end, n_grid)
    return Curve(ts, solve_scalar_ode(rate, 0.0, R0, ts))


def envelope_B(s: Scenario, B0: float, t_end: float, q0: float, S_curve: Curve,
               R_curve: Curve, n_grid: int = 257) -> Optional[Curve]:
    """Total-variation envelope TV' <= alpha(t) + beta(t) TV.

    Requires the interval-mass bound for the measure dominating |D_x f|
    (``eta_mass``); without it no envelope is computable and the caller falls
    back to monitoring raw TV.
    """
    if s.source.eta_mass is None:
        return None
    vsup = s.congestion.v_sup
    F, G = s.advection.growth_F, s.advection.growth_G
    Gv = s.congestion.vprime_bound
    Gf = s.source.drho_f_bound
    cf = s.source.c_f
    eta = s.source.eta_mass

    def rate(t, y):
        St, Rt = S_curve(t), R_curve(t)
        if not (np.isfinite(St) and np.isfinite(Rt)):
            return np.inf
        Ft = float(F(t))
        base = float(G(St)) + float(G(2.0 * St)) * q0 * envelope_Q(s, t)
        alpha = (
            vsup * Rt * Ft * base
            + 2.0 * vsup * Rt * Ft * float(G(2.0 * St)) * (q0 * envelope_Q(s, t) + 2.0 * St * Rt)
            + vsup * Rt * Ft * (base + Rt)
            + 2.0 * cf * Ft * Rt
            + 2.0 * float(eta(t, Rt, St))
        )
        beta = (
            2.0 * vsup * Rt * Ft * float(G(2.0 * St))
            + (vsup + Rt * float(Gv(Rt))) * Ft * (base + Rt)
            + Ft * float(Gf(Rt))
        )
        return alpha + beta * max(y, 0.0)

    ts = np.linspace(0.0, t_end, n_grid)
    return Curve(ts, solve_scalar_ode(rate, 0.0, B0, ts))


def compute_envelopes(s: Scenario, p0: ParticleSystem, t_end: float) -> EnvelopeCurves:
    """Envelope bundle seeded from the initial particle state."""
    q0 = p0.total_mass()
    S0 = max(abs(float(p0.x[0])), abs(float(p0.x[-1])))
    d0 = to_density(p0)
    R0 = float(np.max(d0.heights))
    B0 = total_variation(d0)
    S = envelope_S(s, S0, t_end, q0)
    R = envelope_R(s, R0, t_end, q0, S)
    B = envelope_B(s, B0, t_end, q0, S, R)
    return EnvelopeCurves(Q=lambda t: envelope_Q(s, t), S=S, R=R, B=B,
                          q0=q0, S0=S0, R0=R0, B0=B0)


# ---------------------------------------------------------------------------
# bound checking

@dataclass(frozen=True)
class BoundRecord:
    t: float
    check: str
    value: float
    bound: float
    margin: float
    ok: bool


@dataclass
class BoundsReport:
    records: list
    ok: bool

    def worst(self, check=None):
        recs = [r for r in self.records if check is None or r.check == check]
        return min(recs, key=lambda r: r.margin)


def check_bounds(traj: Trajectory, env: EnvelopeCurves, s: Scenario,
                 rel_slack: float = 1e-6) -> BoundsReport:
    """Compare every snapshot against the envelope curves; violations are
    findings (records with ok=False), not errors."""
    records = []
    q0 = env.q0

    def add(t, check, value, bound, upper=True):
        margin = (bound - value) if upper else (value - bound)
        tol = rel_slack * max(1.0, abs(bound)) if np.isfinite(bound) else 0.0
        records.append(BoundRecord(t, check, float(value), float(bound),
                                   float(margin), bool(margin >= -tol)))

    for p in traj.snapshots:
        t = p.t
        Q = env.Q(t)
        mass = p.total_mass()
        add(t, "mass_upper", mass, q0 * Q)
        add(t, "mass_lower", mass, q0 / Q, upper=False)
        St = env.S(t)
        add(t, "support_right", float(p.x[-1]), St)
        add(t, "support_left", float(p.x[0]), -St, upper=False)
        add(t, "density_max", float(np.max(p.heights)), env.R(t))
        tv = total_variation(to_density(p))
        if env.B is not None:
            add(t, "tv", tv, env.B(t))
        else:
            add(t, "tv_raw", tv, np.inf)
    return BoundsReport(records=records, ok=all(r.ok for r in records))


# ---------------------------------------------------------------------------
# entropy residual

def _bump(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    uu = np.where(inside, u, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - uu * uu)), 0.0)


def _bump_prime(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    uu = np.where(inside, u, 0.0)
    one = 1.0 - uu * uu
    return np.where(inside, np.exp(1.0 - 1.0 / one) * (-2.0 * uu / (one * one)), 0.0)


@dataclass(frozen=True)
class TestFunction:
    """Tensor bump phi(t, x) = b((t - t0)/tau) b((x - x0)/ell)."""

    t0: float
    tau: float
    x0: float
    ell: float

    def phi(self, t, x):
        return float(_bump((t - self.t0) / self.tau)) * _bump((x - self.x0) / self.ell)

    def dt_phi(self, t, x):
        return float(_bump_prime((t - self.t0) / self.tau)) / self.tau * _bump((x - self.x0) / self.ell)

    def dx_phi(self, t, x):
        return float(_bump((t - self.t0) / self.tau)) * _bump_prime((x - self.x0) / self.ell) / self.ell

    @property
    def t_support(self):
        return (self.t0 - self.tau, self.t0 + self.tau)

    @property
    def x_support(self):
        return (self.x0 - self.ell, self.x0 + self.ell)


def default_phi_grid(traj: Trajectory, n_time: int = 3, n_space: int = 5):
    """Documented default: 3 time centers x 5 space centers x 2 widths."""
    times = traj.times
    T = float(times[-1])
    xmin = min(float(p.x[0]) for p in traj.snapshots)
    xmax = max(float(p.x[-1]) for p in traj.snapshots)
    span = xmax - xmin
    t_centers = np.linspace(0.3, 0.7, n_time) * T
    x_centers = np.linspace(xmin + 0.1 * span, xmax - 0.1 * span, n_space)
    widths = [(0.28 * T, 0.45 * span), (0.18 * T, 0.28 * span)]
    return [
        TestFunction(t0=float(tc), tau=tau, x0=float(xc), ell=ell)
        for (tau, ell) in widths
        for tc in t_centers
        for xc in x_centers
    ]


def default_c_grid(traj: Trajectory):
    r_max = max(float(np.max(p.heights)) for p in traj.snapshots)
    return [0.0, r_max / 4.0, r_max / 2.0, 3.0 * r_max / 4.0, r_max, 1.1 * r_max]


@dataclass
class EntropyResidualReport:
    residuals: dict            # (phi index, c) -> E(phi, c)
    res_neg: float             # max(0, -min over the grid)
    phis: list
    cs: list
    metadata: dict = field(default_factory=dict)


def _snapshot_quadrature(p: ParticleSystem, s: Scenario, x_lo, x_hi, w_max):
    """Cell-exact Gauss nodes covering [x_lo, x_hi], panels split at the
    reconstruction breakpoints and capped at width w_max outside/inside."""
    pts = [x_lo, x_hi]
    pts.extend(x for x in p.x if x_lo < x < x_hi)
    pts = np.unique(np.asarray(pts, dtype=float))
    panels_lo, panels_hi = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(np.ceil((b - a) / w_max)))
        edges = np.linspace(a, b, m + 1)
        panels_lo.append(edges[:-1])
        panels_hi.append(edges[1:])
    lo = np.concatenate(panels_lo)
    hi = np.concatenate(panels_hi)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = (mid[:, None] + half[:, None] * dynamics.GL_NODES[None, :]).ravel()
    weights = (half[:, None] * dynamics.GL_WEIGHTS[None, :]).ravel()

    rho = p.q / np.diff(p.x)
    idx = np.searchsorted(p.x, nodes, side="right") - 1
    inside = (idx >= 0) & (idx < rho.size)
    rho_at = np.where(inside, rho[np.clip(idx, 0, rho.size - 1)], 0.0)
    U = dynamics.u_field_arrays(p.t, p.x, rho, s, nodes)
    dxU = dynamics.dxU_field_arrays(p.t, p.x, rho, s, nodes, rho_at)
    fvals = np.asarray(s.source.f(p.t, nodes, rho_at), dtype=float)
    mrho = rho_at * np.asarray(s.congestion.v(rho_at), dtype=float)
    return nodes, weights, rho_at, U, dxU, fvals, mrho


def entropy_residual(traj: Trajectory, s: Scenario, phis=None, cs=None) -> EntropyResidualReport:
    """Kruzkov residual E(phi, c) over the test grid.

    Space integrals are cell-exact 8-node Gauss per panel; the time integral
    is the trapezoid over the stored snapshots (at least 64 required).
    """
    times = traj.times
    if times.size < 64:
        raise ValueError(f"need >= 64 snapshots for the time trapezoid, got {times.size}")
    if phis is None:
        phis = default_phi_grid(traj)
    if cs is None:
        cs = default_c_grid(traj)
    t_lo, t_hi = float(times[0]), float(times[-1])
    for tf in phis:
        a, b = tf.t_support
        if a < t_lo - 1e-12 or b > t_hi + 1e-12:
            raise ValueError(
                f"test function time support [{a}, {b}] exceeds snapshot coverage [{t_lo}, {t_hi}]"
            )

    x_lo = min(tf.x_support[0] for tf in phis)
    x_hi = max(tf.x_support[1] for tf in phis)
    w_max = min(tf.ell for tf in phis) / 8.0

    vfun = s.congestion.v
    theta = {(j, float(c)): np.zeros(times.size) for j in range(len(phis)) for c in cs}
    for k, p in enumerate(traj.snapshots):
        nodes, wts, rho_at, U, dxU, fvals, mrho = _snapshot_quadrature(p, s, x_lo, x_hi, w_max)
        t = p.t
        for j, tf in enumerate(phis):
            bt = float(_bump((t - tf.t0) / tf.tau))
            bt_p = float(_bump_prime((t - tf.t0) / tf.tau)) / tf.tau
            if bt == 0.0 and bt_p == 0.0:
                continue
            bx = _bump((nodes - tf.x0) / tf.ell)
            bx_p = _bump_prime((nodes - tf.x0) / tf.ell) / tf.ell
            phi_v = bt * bx
            dtphi = bt_p * bx
            dxphi = bt * bx_p
            for c in cs:
                c = float(c)
                mc = c * float(vfun(c))
                sgn = np.sign(rho_at - c)
                integrand = (
                    np.abs(rho_at - c) * dtphi
                    + sgn * ((mrho - mc) * U * dxphi - mc * dxU * phi_v + fvals * phi_v)
                )
                theta[(j, c)][k] = float(wts @ integrand)

    residuals = {key: float(np.trapezoid(series, times)) for key, series in theta.items()}
    res_neg = max(0.0, -min(residuals.values()))
    return EntropyResidualReport(
        residuals=residuals,
        res_neg=res_neg,
        phis=list(phis),
        cs=[float(c) for c in cs],
        metadata={
            "snapshots": int(times.size),
            "note": "weak-form error measure nu1 = 2 mu1; mu0 = 0 for the scheme",
        },
    )


# ---------------------------------------------------------------------------
# equicontinuity modulus

def equicontinuity_modulus(traj: Trajectory, h: float):
    """Two-term transport/mass bound on the time modulus at lag ``h``.

    For consecutive snapshots t, t+h the bound is W1(rho(t), Xi# rho(t)) +
    ||Xi# rho(t) - rho(t+h)||_1 where Xi is the cell-to-cell affine map.
    """
    times = traj.times
    spacings = np.diff(times)
    if times.size < 2 or not np.all(np.abs(spacings - h) <= 1e-9 * max(1.0, abs(h))):
        raise ValueError(f"snapshot spacing does not match h = {h}")
    out = []
    for p0, p1 in zip(traj.snapshots[:-1], traj.snapshots[1:]):
        pushed = pushforward_affine(p0, p1)
        w1 = w1_distance(to_density(p0), pushed)
        l1 = l1_distance(pushed, to_density(p1))
        out.append((float(p0.t), float(w1 + l1)))
    return out


# ---------------------------------------------------------------------------
# good-v audit

@dataclass(frozen=True)
class GoodVViolation:
    t: float
    family: str
    index: int
    c: Optional[float]
    lhs: float
    rhs: float


def good_v_violations_state(t, x, q, U, v_sel, v_callable, c_grid, slack=1e-10):
    """Check the four structural inequalities on one state.

    They are algebraic consequences of the monotone congestion and the
    downstream upwinding, so any violation flags a wrong upwind choice.
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    U = np.asarray(U, dtype=float)
    v_sel = np.asarray(v_sel, dtype=float)
    rho = q / np.diff(x)
    rho_ext = np.concatenate(([0.0], rho, [0.0]))
    xdot = v_sel * U
    dxdot = xdot[1:] - xdot[:-1]
    dU = U[1:] - U[:-1]
    v_rho = np.asarray(v_callable(rho), dtype=float)
    out = []

    is_max = (rho >= rho_ext[:-2]) & (rho >= rho_ext[2:])
    is_min = (rho <= rho_ext[:-2]) & (rho <= rho_ext[2:])
    lhs_max = dxdot
    rhs_max = v_rho * dU
    for i in np.nonzero(is_max & (lhs_max < rhs_max - slack))[0]:
        out.append(GoodVViolation(t, "max", int(i) + 1, None, float(lhs_max[i]), float(rhs_max[i])))
    for i in np.nonzero(is_min & (lhs_max > rhs_max + slack))[0]:
        out.append(GoodVViolation(t, "min", int(i) + 1, None, float(lhs_max[i]), float(rhs_max[i])))

    sig = np.sign(rho_ext[1:] - rho_ext[:-1])
    dsig = sig[1:] - sig[:-1]
    lhs_step = dsig * dxdot
    rhs_step = dsig * v_rho * dU
    for i in np.nonzero(lhs_step > rhs_step + slack)[0]:
        out.append(GoodVViolation(t, "step", int(i) + 1, None, float(lhs_step[i]), float(rhs_step[i])))

    for c in c_grid:
        c = float(c)
        vc = float(v_callable(c))
        d = np.sign(rho_ext[1:] - c) - np.sign(rho_ext[:-1] - c)
        lhs_c = d * (v_sel - vc) * U
        for i in np.nonzero(lhs_c > slack)[0]:
            out.append(GoodVViolation(t, "constant", int(i), c, float(lhs_c[i]), 0.0))
    return out


def good_v_audit(traj: Trajectory, s: Scenario, c_grid=None, slack=1e-10):
    """Audit every stored state (all accepted steps when recorded, else the
    snapshots) against the four inequality families."""
    states = traj.steps if traj.steps else traj.snapshots
    if c_grid is None:
        r_max = max(float(np.max(p.heights)) for p in states)
        c_grid = [0.0, r_max / 4.0, r_max / 2.0, 3.0 * r_max / 4.0, r_max, 1.1 * r_max]
    violations = []
    for p in states:
        U = dynamics.free_velocity(p, s)
        v_sel = dynamics.upwind_congestion(p, s, U)
        violations.extend(
            good_v_violations_state(p.t, p.x, p.q, U, v_sel, s.congestion.v, c_grid, slack)
        )
    return violations
