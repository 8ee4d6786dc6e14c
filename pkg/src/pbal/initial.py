"""Initial data and the equal-mass quantile discretization.

``quantile_init`` places ``x_0`` and ``x_N`` at the ends of the convex hull of
the support and the interior particles at the leftmost points where the CDF
reaches the levels ``i * mass / N``; every cell carries mass ``mass / N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .density import ParticleSystem, PiecewiseDensity, cdf as pw_cdf
from .errors import InitCollisionError, ScenarioFormatError

# Quadrature resolution for CDFs of generic callables.
CDF_PANELS = 1 << 16
BISECT_TOL = 1e-14


@dataclass(frozen=True)
class InitialDensity:
    """Non-negative compactly supported density with an evaluable CDF."""

    pdf: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    total_mass: float
    sup_bound: float | None = None
    tv_bound: float | None = None

    def __post_init__(self):
        a, b = self.support
        if not b > a:
            raise ValueError(f"empty support [{a}, {b}]")
        if not self.total_mass > 0.0:
            raise ValueError("total mass must be positive")

    @staticmethod
    def from_blocks(blocks) -> "InitialDensity":
        """Build from disjoint constant blocks [(a, b, height), ...]."""
        blocks = sorted((float(a), float(b), float(h)) for a, b, h in blocks)
        pts, heights = [], []
        for a, b, h in blocks:
            if b <= a or h < 0:
                raise ValueError(f"bad block ({a}, {b}, {h})")
            if pts and a < pts[-1]:
                raise ValueError("blocks must not overlap")
            if pts and a > pts[-1]:
                pts.append(a)
                heights.append(0.0)
            elif not pts:
                pts.append(a)
            heights.append(h)
            pts.append(b)
        step = PiecewiseDensity(np.array(pts), np.array(heights))
        ext = np.concatenate(([0.0], step.heights, [0.0]))
        return InitialDensity(
            pdf=step,
            cdf=lambda y: pw_cdf(step, y),
            support=step.support,
            total_mass=float(np.sum(step.heights * np.diff(step.breakpoints))),
            sup_bound=float(np.max(step.heights)),
            tv_bound=float(np.sum(np.abs(np.diff(ext)))),
        )

    @staticmethod
    def from_samples(xs, ys) -> "InitialDensity":
        """Linearly interpolated sample grid; exact piecewise-quadratic CDF."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape:
            raise ValueError("need matching 1-d arrays with at least two samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("sample positions must be strictly increasing")
        if np.any(ys < 0):
            raise ValueError("sample values must be non-negative")
        panel = 0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)
        cum = np.concatenate(([0.0], np.cumsum(panel)))
        slope = np.diff(ys) / np.diff(xs)

        def pdf(y):
            y = np.asarray(y, dtype=float)
            out = np.interp(y, xs, ys, left=0.0, right=0.0)
            return float(out) if out.ndim == 0 else out

        def cdf_fn(y):
            y = np.asarray(y, dtype=float)
            yc = np.clip(y, xs[0], xs[-1])
            i = np.clip(np.searchsorted(xs, yc, side="right") - 1, 0, xs.size - 2)
            dy = yc - xs[i]
            out = cum[i] + ys[i] * dy + 0.5 * slope[i] * dy * dy
            out = np.where(y >= xs[-1], cum[-1], out)
            return float(out) if out.ndim == 0 else out

        tv = float(np.abs(ys[0]) + np.sum(np.abs(np.diff(ys))) + np.abs(ys[-1]))
        return InitialDensity(
            pdf=pdf,
            cdf=cdf_fn,
            support=(float(xs[0]), float(xs[-1])),
            total_mass=float(cum[-1]),
            sup_bound=float(np.max(ys)),
            tv_bound=tv,
        )

    @staticmethod
    def from_callable(pdf, support, antiderivative=None) -> "InitialDensity":
        """Closed-form density on ``support``; trapezoid CDF unless an exact
        antiderivative (vanishing at the left endpoint) is supplied."""
        a, b = float(support[0]), float(support[1])
        if antiderivative is not None:
            mass = float(antiderivative(b) - antiderivative(a))

            def cdf_fn(y):
                y = np.asarray(y, dtype=float)
                out = antiderivative(np.clip(y, a, b)) - antiderivative(a)
                return float(out) if out.ndim == 0 else out

            return InitialDensity(pdf=pdf, cdf=cdf_fn, support=(a, b), total_mass=mass)
        xs = np.linspace(a, b, CDF_PANELS + 1)
        return InitialDensity.from_samples(xs, np.maximum(np.asarray(pdf(xs), dtype=float), 0.0))

    def quantile(self, m: float) -> float:
        """Leftmost x with CDF(x) >= m, by bisection on [a, b]."""
        a, b = self.support
        if m <= 0.0:
            return a
        if m >= self.total_mass:
            m = self.total_mass
        lo, hi = a, b
        # invariant: cdf(lo) < m <= cdf(hi)
        if self.cdf(lo) >= m:
            return lo
        while hi - lo > BISECT_TOL * max(1.0, abs(a), abs(b)):
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) >= m:
                hi = mid
            else:
                lo = mid
        return hi


def quantile_init(rho0: InitialDensity, n: int) -> ParticleSystem:
    """Equal-mass quantile splitting of ``rho0`` into ``n`` cells at t = 0."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    a, b = rho0.support
    mass = rho0.total_mass
    x = np.empty(n + 1)
    x[0], x[n] = a, b
    for i in range(1, n):
        x[i] = rho0.quantile(i * mass / n)
    gaps = np.diff(x)
    span = b - a
    if np.any(gaps <= 1e-12 * span):
        i = int(np.argmin(gaps))
        raise InitCollisionError(
            f"quantile levels {i} and {i + 1} nearly coincide at x = {x[i]:.6g}; "
            "increase N or perturb the initial density (interior vacuum / spike)"
        )
    return ParticleSystem(t=0.0, x=x, q=np.full(n, mass / n))


_BUILTIN_INITIALS = {
    # two-block step, total mass 1 (vacuum gap between the blocks)
    "transport": [(-1.0, -0.5, 1.0), (0.0, 1.0, 0.5)],
    "growth_transport": [(-1.0, -0.5, 1.0), (0.0, 1.0, 0.5)],
    # generic asymmetric profile, total mass 1; a single uniform block would
    # evolve self-similarly under the congested attraction (the quantile
    # discretizations of every N coincide exactly), hiding refinement effects
    "attractive_congested": [(-0.75, 0.0, 0.9), (0.0, 0.65, 0.5)],
    "repulsive_source": [(-2.0 / 3.0, 2.0 / 3.0, 0.75)],
}


def builtin_initial(name: str) -> InitialDensity:
    """Default initial density paired with each catalog scenario."""
    try:
        return InitialDensity.from_blocks(_BUILTIN_INITIALS[name])
    except KeyError:
        raise ScenarioFormatError(
            f"no builtin initial density {name!r}; known: {sorted(_BUILTIN_INITIALS)}"
        ) from None


def load_initial_csv(path) -> InitialDensity:
    """Two-column CSV (position, value) with linear interpolation."""
    data = np.loadtxt(path, delimiter=",", dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ScenarioFormatError(f"{path}: expected two columns (position, value)")
    return InitialDensity.from_samples(data[:, 0], data[:, 1])
