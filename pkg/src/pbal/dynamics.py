"""Right-hand side of the particle/mass ODE system.

Velocities are ``x_i' = v_i U_i`` with the free field ``U = V - dxW * rho``
evaluated through exact W-primitive differences (no quadrature, no special
handling of the gradient kink at 0), the congestion factor ``v_i`` taken from
the cell the velocity points toward, and cell masses fed by the source
integral over the cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import ParticleSystem
from .errors import DegenerateStateError
from .scenario import Scenario

# 8-node Gauss-Legendre rule: exact for polynomial integrands up to degree 15.
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class RhsEvaluation:
    """Assembled derivative of a particle state, with the Eq-level pieces."""

    t: float
    U: np.ndarray       # free velocities, N+1
    v_sel: np.ndarray   # upwinded congestion factors, N+1
    xdot: np.ndarray    # v_sel * U
    qdot: np.ndarray    # per-cell source integrals, N
    rho_dot_adv: np.ndarray  # advective part of the cell-density derivative
    rho_dot_src: np.ndarray  # source part of the cell-density derivative


class StageFailure(Exception):
    """Internal: an integrator stage produced an unusable intermediate state."""


def _gaps_heights(x, q):
    gaps = np.diff(x)
    if not np.all(gaps > 0.0):
        raise StageFailure("non-increasing particle positions")
    if not np.all(q > 0.0):
        raise StageFailure("non-positive cell mass")
    return gaps, q / gaps


def step_cdf_arrays(x, rho, y):
    """Cumulative mass of the step density (breakpoints x, heights rho) at y."""
    cum = np.concatenate(([0.0], np.cumsum(rho * np.diff(x))))
    idx = np.clip(np.searchsorted(x, y, side="right") - 1, 0, rho.size - 1)
    inner = cum[idx] + rho[idx] * (np.clip(y, x[0], x[-1]) - x[idx])
    return np.where(y <= x[0], 0.0, np.where(y >= x[-1], cum[-1], inner))


def convolve_dxW_arrays(t, x, rho, s: Scenario, y):
    """(dxW * rhobar)(y) via W-primitive differences; exact for step densities."""
    pot = s.potential
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if pot.is_zero:
        return np.zeros_like(y)
    if pot.grad_conv is not None:
        mass = float(np.sum(rho * np.diff(x)))
        out = np.asarray(pot.grad_conv(y, step_cdf_arrays(x, rho, y), mass), dtype=float)
    else:
        wd = pot.W(y[:, None] - x[None, :])
        out = (wd[:, :-1] - wd[:, 1:]) @ rho
    return out * pot.factor(t)


def convolve_dxW_generic(t, x, rho, s: Scenario, y):
    """The difference-form contract without shortcuts (cross-check target)."""
    pot = s.potential
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if pot.is_zero:
        return np.zeros_like(y)
    wd = pot.W(y[:, None] - x[None, :])
    return ((wd[:, :-1] - wd[:, 1:]) @ rho) * pot.factor(t)


def convolve_dxW(p: ParticleSystem, s: Scenario, y):
    """Exact convolution of the potential gradient against the reconstruction."""
    rho = p.q / np.diff(p.x)
    out = convolve_dxW_arrays(p.t, p.x, rho, s, y)
    return float(out[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else out


def u_field_arrays(t, x, rho, s: Scenario, y):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.asarray(s.advection.V(t, y), dtype=float) - convolve_dxW_arrays(t, x, rho, s, y)


def free_velocity(p: ParticleSystem, s: Scenario) -> np.ndarray:
    """U_i = V(t, x_i) - (dxW * rhobar)(t, x_i) for i = 0..N."""
    rho = p.q / np.diff(p.x)
    return u_field_arrays(p.t, p.x, rho, s, p.x)


def u_field(p: ParticleSystem, s: Scenario, y):
    """Free velocity field evaluated off-particle (residual quadrature)."""
    rho = p.q / np.diff(p.x)
    out = u_field_arrays(p.t, p.x, rho, s, y)
    return float(out[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else out


def upwind_congestion(p: ParticleSystem, s: Scenario, U: np.ndarray) -> np.ndarray:
    """Congestion factor from the downstream cell (the tie U_i = 0 goes downstream).

    The exterior densities rho_0 = rho_{N+1} = 0 apply at the boundary
    indices, so the leading/trailing particle may move at v(0) U.
    """
    rho = p.q / np.diff(p.x)
    return _upwind_arrays(rho, s, np.asarray(U, dtype=float))


def _upwind_arrays(rho, s: Scenario, U):
    rho_ext = np.concatenate(([0.0], rho, [0.0]))
    v = s.congestion.v
    return np.where(U >= 0.0, v(rho_ext[1:]), v(rho_ext[:-1]))


def source_rate_arrays(t, x, rho, s: Scenario):
    src = s.source
    if src.c_f == 0.0:
        return np.zeros(rho.size)
    mid = 0.5 * (x[1:] + x[:-1])
    half = 0.5 * np.diff(x)
    nodes = mid[:, None] + half[:, None] * GL_NODES[None, :]
    vals = np.broadcast_to(np.asarray(src.f(t, nodes, rho[:, None]), dtype=float), nodes.shape)
    return (vals @ GL_WEIGHTS) * half


def source_rate(p: ParticleSystem, s: Scenario) -> np.ndarray:
    """q_i' as the Gauss-Legendre integral of f(t, x, rho_i) over cell i."""
    rho = p.q / np.diff(p.x)
    return source_rate_arrays(p.t, p.x, rho, s)


def rhs_arrays(t, x, q, s: Scenario):
    """Array-level RHS used by the integrator hot loop; raises StageFailure on
    transiently invalid intermediate states."""
    gaps, rho = _gaps_heights(x, q)
    U = u_field_arrays(t, x, rho, s, x)
    v_sel = _upwind_arrays(rho, s, U)
    xdot = v_sel * U
    qdot = source_rate_arrays(t, x, rho, s)
    return xdot, qdot, U, v_sel


def rhs(p: ParticleSystem, s: Scenario) -> RhsEvaluation:
    """Full derivative assembly, including the cell-density derivative split
    into its advective and source contributions."""
    try:
        xdot, qdot, U, v_sel = rhs_arrays(p.t, p.x, p.q, s)
    except StageFailure as exc:
        raise DegenerateStateError(str(exc)) from exc
    gaps = np.diff(p.x)
    rho = p.q / gaps
    return RhsEvaluation(
        t=p.t,
        U=U,
        v_sel=v_sel,
        xdot=xdot,
        qdot=qdot,
        rho_dot_adv=-rho * (xdot[1:] - xdot[:-1]) / gaps,
        rho_dot_src=qdot / gaps,
    )


def dxU_field_arrays(t, x, rho, s: Scenario, y, rho_at_y):
    """dxU = dxV - dx2W * rhobar - w rhobar, all terms exact."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    adv = s.advection
    pot = s.potential
    out = np.asarray(adv.dxV(t, y), dtype=float).copy()
    if not pot.is_zero:
        if not pot.dx2W_zero:
            a = y[:, None] - x[None, 1:]
            b = y[:, None] - x[None, :-1]
            out -= (pot.dx2W_integral(a, b) @ rho) * pot.factor(t)
        out -= float(pot.atom_w(t)) * rho_at_y
    return out


def dxU_field(p: ParticleSystem, s: Scenario, y, side=None):
    """Spatial derivative of the free velocity at ``y``.

    The reconstruction jumps at breakpoints, so evaluation there requires a
    ``side`` flag ("left"/"right"); interior points need none.
    """
    scalar = np.isscalar(y) or np.asarray(y).ndim == 0
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    rho = p.q / np.diff(p.x)
    on_bp = np.isin(y_arr, p.x)
    if np.any(on_bp) and side is None:
        raise ValueError("evaluation at a breakpoint requires side='left' or 'right'")
    lookup = np.searchsorted(p.x, y_arr, side="left" if side == "left" else "right") - 1
    inside = (lookup >= 0) & (lookup < rho.size)
    rho_at = np.where(inside, rho[np.clip(lookup, 0, rho.size - 1)], 0.0)
    out = dxU_field_arrays(p.t, p.x, rho, s, y_arr, rho_at)
    return float(out[0]) if scalar else out
