"""Particle states, piecewise-constant reconstructions and their functionals.

A particle state is ``N+1`` strictly sorted positions ``x_0 .. x_N`` carrying
``N`` positive masses ``q_1 .. q_N``; the associated density is constant equal
to ``q_i / (x_i - x_{i-1})`` on each gap and zero outside.  All distances
(L1, W1) are computed exactly on merged breakpoint partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStateError, MassMismatchError

# A state is degenerate when a gap shrinks below this fraction of the span;
# the theory excludes collisions but finite precision needs a hard guard.
COLLISION_GAP_FRACTION = 1e-12


def _readonly(a):
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParticleSystem:
    """Sorted particle positions with per-cell masses at a fixed time."""

    t: float
    x: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(self.x))
        object.__setattr__(self, "q", _readonly(self.q))
        if self.x.ndim != 1 or self.q.ndim != 1 or self.x.size != self.q.size + 1:
            raise DegenerateStateError(
                f"need N+1 positions and N masses, got {self.x.size} and {self.q.size}"
            )
        if self.q.size < 1:
            raise DegenerateStateError("at least one cell is required")
        gaps = np.diff(self.x)
        span = self.x[-1] - self.x[0]
        if not np.all(gaps > COLLISION_GAP_FRACTION * span):
            i = int(np.argmin(gaps))
            raise DegenerateStateError(
                f"particle collision: gap {gaps[i]:.3e} at index {i} (span {span:.3e})"
            )
        if not np.all(self.q > 0.0):
            i = int(np.argmin(self.q))
            raise DegenerateStateError(f"non-positive mass q[{i}] = {self.q[i]:.3e}")

    @property
    def n(self):
        return self.q.size

    @property
    def heights(self):
        return self.q / np.diff(self.x)

    def total_mass(self):
        return float(np.sum(self.q))


@dataclass(frozen=True)
class PiecewiseDensity:
    """Non-negative step function: ``heights[i]`` on ``(breakpoints[i], breakpoints[i+1])``.

    Zero outside the breakpoint range.  Zero total mass is representable
    (empty arrays) so distance operations stay total.
    """

    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))
    heights: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _readonly(self.breakpoints))
        object.__setattr__(self, "heights", _readonly(self.heights))
        if self.heights.size and self.breakpoints.size != self.heights.size + 1:
            raise ValueError("need one more breakpoint than heights")
        if self.breakpoints.size and np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(self.heights < 0):
            raise ValueError("heights must be non-negative")

    def __call__(self, y):
        """Pointwise evaluation (value at a breakpoint is the right cell's)."""
        y = np.asarray(y, dtype=float)
        if self.heights.size == 0:
            out = np.zeros_like(y)
            return float(out) if out.ndim == 0 else out
        idx = np.searchsorted(self.breakpoints, y, side="right") - 1
        inside = (idx >= 0) & (idx < self.heights.size)
        vals = np.where(inside, self.heights[np.clip(idx, 0, self.heights.size - 1)], 0.0)
        return float(vals) if vals.ndim == 0 else vals

    @property
    def support(self):
        if self.breakpoints.size == 0:
            return (0.0, 0.0)
        return (float(self.breakpoints[0]), float(self.breakpoints[-1]))


def to_density(p: ParticleSystem) -> PiecewiseDensity:
    """Piecewise-constant reconstruction with heights q_i / (x_i - x_{i-1})."""
    return PiecewiseDensity(p.x, p.q / np.diff(p.x))


def total_mass(d: PiecewiseDensity) -> float:
    if d.heights.size == 0:
        return 0.0
    return float(np.sum(d.heights * np.diff(d.breakpoints)))


def total_variation(d: PiecewiseDensity) -> float:
    """Sum of all jumps, including the two boundary jumps to zero."""
    if d.heights.size == 0:
        return 0.0
    ext = np.concatenate(([0.0], d.heights, [0.0]))
    return float(np.sum(np.abs(np.diff(ext))))


def cdf(d: PiecewiseDensity, y):
    """Cumulative mass to the left of ``y`` (piecewise linear, non-decreasing)."""
    y = np.asarray(y, dtype=float)
    if d.heights.size == 0:
        out = np.zeros_like(y)
        return float(out) if out.ndim == 0 else out
    bp = d.breakpoints
    cum = np.concatenate(([0.0], np.cumsum(d.heights * np.diff(bp))))
    idx = np.clip(np.searchsorted(bp, y, side="right") - 1, 0, d.heights.size - 1)
    inner = cum[idx] + d.heights[idx] * (np.clip(y, bp[0], bp[-1]) - bp[idx])
    out = np.where(y <= bp[0], 0.0, np.where(y >= bp[-1], cum[-1], inner))
    return float(out) if out.ndim == 0 else out


def quantile(d: PiecewiseDensity, m: float) -> float:
    """Leftmost point where the CDF reaches mass level ``m``.

    Right-continuous generalized inverse restricted to the support, so
    ``quantile(cdf(x)) <= x`` with equality off flat parts.
    """
    mass = total_mass(d)
    if mass <= 0.0:
        raise ValueError("quantile of a zero-mass density")
    if m < -1e-12 * mass or m > mass * (1 + 1e-12):
        raise ValueError(f"mass level {m} outside [0, {mass}]")
    m = min(max(m, 0.0), mass)
    bp = d.breakpoints
    cum = np.concatenate(([0.0], np.cumsum(d.heights * np.diff(bp))))
    k = int(np.searchsorted(cum, m, side="left"))
    if k == 0:
        return float(bp[0])
    k -= 1  # cum[k] < m <= cum[k+1]
    if d.heights[k] == 0.0:
        # flat CDF panel cannot reach a strictly larger level
        return float(bp[k + 1])
    return float(bp[k] + (m - cum[k]) / d.heights[k])


def _merged_breakpoints(a: PiecewiseDensity, b: PiecewiseDensity) -> np.ndarray:
    pts = np.concatenate((a.breakpoints, b.breakpoints))
    if pts.size == 0:
        return pts
    return np.unique(pts)


def l1_distance(a: PiecewiseDensity, b: PiecewiseDensity) -> float:
    """Exact integral of |a - b| on the merged breakpoint partition."""
    z = _merged_breakpoints(a, b)
    if z.size < 2:
        return 0.0
    mids = 0.5 * (z[:-1] + z[1:])
    return float(np.sum(np.abs(a(mids) - b(mids)) * np.diff(z)))


def w1_distance(a: PiecewiseDensity, b: PiecewiseDensity) -> float:
    """Kantorovich-Rubinstein W1 = integral of |CDF_a - CDF_b|, exact.

    Both measures must carry the same total mass (relative tolerance 1e-12);
    the transport distance is infinite, here an error, otherwise.
    """
    ma, mb = total_mass(a), total_mass(b)
    scale = max(ma, mb, 1e-300)
    if abs(ma - mb) > 1e-12 * scale:
        raise MassMismatchError(f"total masses differ: {ma} vs {mb}")
    z = _merged_breakpoints(a, b)
    if z.size < 2:
        return 0.0
    du = cdf(a, z) - cdf(b, z)
    lo, hi = du[:-1], du[1:]
    width = np.diff(z)
    same = lo * hi >= 0.0
    area_same = 0.5 * (np.abs(lo) + np.abs(hi)) * width
    denom = np.where(same, 1.0, np.abs(lo - hi))
    area_cross = 0.5 * (lo * lo + hi * hi) / denom * width
    return float(np.sum(np.where(same, area_same, area_cross)))


def pushforward_affine(p_from: ParticleSystem, p_to: ParticleSystem) -> PiecewiseDensity:
    """Push the source masses onto the target partition (cell-to-cell affine map)."""
    if p_from.n != p_to.n:
        raise ValueError(f"particle counts differ: {p_from.n} vs {p_to.n}")
    return PiecewiseDensity(p_to.x, p_from.q / np.diff(p_to.x))


def snapshot_rows(p: ParticleSystem):
    """Rows (t, i, x_{i-1}, x_i, q_i, rho_i) for CSV serialization."""
    rho = p.heights
    return [
        (p.t, i + 1, p.x[i], p.x[i + 1], p.q[i], rho[i])
        for i in range(p.n)
    ]
