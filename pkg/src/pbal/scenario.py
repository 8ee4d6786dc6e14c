"""Model data: congestion, advection, interaction potential and source term.

Each piece carries the envelope metadata (F, G, lambda, g, c_f, the atom
weight of the potential) used by the a-priori bound diagnostics; the metadata
is supplied explicitly, never inferred.  All callables must accept numpy
arrays in their spatial/density arguments.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expressions
from .errors import ScenarioFormatError, UnknownScenarioError
from .initial import InitialDensity


class Branch(enum.Enum):
    """Which of the two no-collapse options the scenario relies on."""

    V_DECAYS = "v_decays"
    W_REPULSIVE = "w_repulsive"


@dataclass(frozen=True)
class Congestion:
    """Non-increasing speed factor v(rho) with its derivative bound."""

    v: Callable
    v_sup: float
    vprime_bound: Callable  # non-decreasing r -> bound on |v'| over [0, r]
    decay_g: Optional[Callable] = None  # non-decreasing g with r + r^2 v(r) <= g(r)


@dataclass(frozen=True)
class Advection:
    """External field V(t, x) with growth envelopes F, G, lambda."""

    V: Callable
    dxV: Callable
    growth_F: Callable  # non-decreasing in t
    growth_G: Callable  # non-decreasing in r
    growth_lambda: Callable  # non-decreasing, 1/lambda non-integrable at infinity


@dataclass(frozen=True)
class Potential:
    """Interaction potential W with BV gradient split into one-sided branches.

    ``dxW_neg`` is the gradient on (-inf, 0], ``dxW_pos`` on [0, inf); the
    value at the kink is never needed by the dynamics (convolutions difference
    the W primitive), only by the gradient-derivative integrals.  ``atom_w(t)``
    is the Dirac weight at 0 of the distributional derivative of the gradient,
    i.e. the jump dxW(0+) - dxW(0-), possibly rescaled by ``time_factor``.
    """

    W: Callable
    dxW_neg: Callable
    dxW_pos: Callable
    dx2W: Callable  # absolutely continuous part of D dxW
    atom_w: Callable  # t -> weight of the Dirac at 0
    time_factor: Optional[Callable] = None
    is_zero: bool = False
    dx2W_zero: bool = False  # lets convolution kernels skip the a.c. part
    # Optional closed form of (dxW * rho)(y) as a function of (y, CDF(y), mass),
    # algebraically identical to the W-primitive differences (e.g. for
    # W = s|x| the convolution is s (2 CDF(y) - mass)).  Exact shortcut only;
    # the generic difference form remains the contract and the default.
    grad_conv: Optional[Callable] = None

    def factor(self, t):
        return 1.0 if self.time_factor is None else float(self.time_factor(t))

    def dx2W_integral(self, a, b):
        """Exact integral of dx2W over [a, b] (elementwise, a <= b).

        Uses the one-sided gradient branches so the Dirac atom at 0 is never
        silently picked up: on straddling intervals the two sides are joined
        through the one-sided limits at 0.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        left = self.dxW_neg(np.minimum(b, 0.0)) - self.dxW_neg(np.minimum(a, 0.0))
        right = self.dxW_pos(np.maximum(b, 0.0)) - self.dxW_pos(np.maximum(a, 0.0))
        return left + right


@dataclass(frozen=True)
class Source:
    """Reaction term f(t, x, rho) with |f| <= c_f F(t) rho."""

    f: Callable
    c_f: float
    drho_f_bound: Callable  # non-decreasing r -> bound on |df/drho| over [0, r]
    eta_mass: Optional[Callable] = None  # (t, r, X) -> bound on |D_x f| mass of [-X, X]


@dataclass(frozen=True)
class Scenario:
    congestion: Congestion
    advection: Advection
    potential: Potential
    source: Source
    no_collapse_branch: Branch
    name: str = "custom"
    fingerprint: str = field(default="", compare=False)


@dataclass(frozen=True)
class Violation:
    assumption: str
    message: str
    where: tuple = ()


def scenario_validate(s: Scenario, sample_grid) -> list[Violation]:
    """Sampled admissibility check of the assumptions; violations are data.

    ``sample_grid`` is a non-empty list of (time, position, density) triples.
    Returns every sampled violation; an empty list means admissible at the
    sampled resolution (the assumptions quantify over all points and cannot
    be decided symbolically).
    """
    grid = [(float(t), float(x), float(r)) for (t, x, r) in sample_grid]
    if not grid:
        raise ValueError("sample_grid must be non-empty")
    out: list[Violation] = []
    tol = 1e-10

    ts = sorted({g[0] for g in grid})
    rs = sorted({g[2] for g in grid})
    con, adv, pot, src = s.congestion, s.advection, s.potential, s.source

    # (A1): v non-increasing, bounded by v_sup.
    for r1, r2 in zip(rs[:-1], rs[1:]):
        v1, v2 = float(con.v(r1)), float(con.v(r2))
        if v2 > v1 + tol:
            out.append(Violation("A1", f"v increasing: v({r1})={v1} < v({r2})={v2}", (r1, r2)))
    for r in rs:
        val = float(con.v(r))
        if val < -tol or val > con.v_sup + tol:
            out.append(Violation("A1", f"v({r})={val} outside [0, v_sup={con.v_sup}]", (r,)))

    # (A2)+(A4): advection growth and one-sided mild growth.
    for t, x, _ in grid:
        F, G, lam = float(adv.growth_F(t)), float(adv.growth_G(abs(x))), float(adv.growth_lambda(abs(x)))
        V = float(adv.V(t, x))
        if abs(V) > F * G + tol:
            out.append(Violation("A2", f"|V({t},{x})|={abs(V)} > F*G={F * G}", (t, x)))
        if np.sign(x) * V > F * lam + tol:
            out.append(Violation("A4", f"sign(x)V({t},{x})={np.sign(x) * V} > F*lambda={F * lam}", (t, x)))

    # (A3): gradient growth and atom consistency.
    for t, x, _ in grid:
        F, G = float(adv.growth_F(t)), float(adv.growth_G(abs(x)))
        fac = pot.factor(t)
        dw = float(pot.dxW_neg(x) if x < 0 else pot.dxW_pos(x)) * fac
        if abs(dw) > F * G + tol:
            out.append(Violation("A3", f"|dxW({x})|={abs(dw)} > F*G={F * G}", (t, x)))
    for t in ts:
        jump = (float(pot.dxW_pos(0.0)) - float(pot.dxW_neg(0.0))) * pot.factor(t)
        atom = float(pot.atom_w(t))
        if abs(jump - atom) > tol * max(1.0, abs(jump)):
            out.append(Violation("A3", f"atom_w({t})={atom} != dxW jump {jump}", (t,)))

    # (A5): the declared no-collapse branch must be usable.
    if s.no_collapse_branch is Branch.W_REPULSIVE:
        for t in ts:
            w = float(pot.atom_w(t))
            if w > tol:
                out.append(Violation("A5_W", f"atom_w({t})={w} > 0 on repulsive branch", (t,)))
    else:
        if con.decay_g is None:
            out.append(Violation("A5_v", "branch v_decays declared but decay_g missing", ()))
        else:
            for r in rs:
                lhs = r + r * r * float(con.v(r))
                g = float(con.decay_g(r))
                if lhs > g + tol:
                    out.append(Violation("A5_v", f"r + r^2 v(r) = {lhs} > g({r}) = {g}", (r,)))

    # (A6): source domination, in particular f(., ., 0) = 0.
    for t, x, r in grid:
        F = float(adv.growth_F(t))
        fv = float(src.f(t, x, r))
        if abs(fv) > src.c_f * F * r + tol:
            out.append(Violation("A6", f"|f({t},{x},{r})|={abs(fv)} > c_f*F*rho={src.c_f * F * r}", (t, x, r)))

    return out


def default_sample_grid(t_max=2.0, x_max=5.0, r_max=5.0, n=10):
    """The 10x10x10 admissibility grid used by the validation tests."""
    ts = np.linspace(0.0, t_max, n)
    xs = np.linspace(-x_max, x_max, n)
    rs = np.linspace(0.0, r_max, n)
    return [(t, x, r) for t in ts for x in xs for r in rs]


# ---------------------------------------------------------------------------
# builtin catalog

def _const(value):
    return lambda *args, _v=float(value): (
        _v if all(np.isscalar(a) for a in args) or not args
        else np.full(np.broadcast(*[np.asarray(a, dtype=float) for a in args]).shape, _v)
    )


def _zero_potential():
    z = _const(0.0)
    return Potential(W=z, dxW_neg=z, dxW_pos=z, dx2W=z, atom_w=_const(0.0),
                     is_zero=True, dx2W_zero=True)


def _abs_potential(sign=1.0):
    # W(x) = sign * |x|: gradient is sign * sgn(x), atom 2 * sign, no a.c. part;
    # the gradient convolution collapses to sign * (2 CDF - mass).
    s = float(sign)
    return Potential(
        W=lambda x, _s=s: _s * np.abs(x),
        dxW_neg=_const(-s),
        dxW_pos=_const(s),
        dx2W=_const(0.0),
        atom_w=_const(2.0 * s),
        dx2W_zero=True,
        grad_conv=lambda y, cdf_y, mass, _s=s: _s * (2.0 * cdf_y - mass),
    )


def _catalog_transport(growth=False):
    one = _const(1.0)
    zero = _const(0.0)
    if growth:
        source = Source(f=lambda t, x, rho: rho + 0.0 * np.asarray(x, dtype=float),
                        c_f=1.0, drho_f_bound=one)
    else:
        source = Source(f=lambda t, x, rho: 0.0 * (np.asarray(x, dtype=float) + rho),
                        c_f=0.0, drho_f_bound=zero)
    return Scenario(
        congestion=Congestion(v=lambda r: np.ones_like(np.asarray(r, dtype=float)),
                              v_sup=1.0, vprime_bound=zero),
        advection=Advection(V=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
                            dxV=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                            growth_F=one, growth_G=one, growth_lambda=one),
        potential=_zero_potential(),
        source=source,
        # v == 1 admits no superlinearly-dominating g with divergent 1/g
        # integral, so these entries rely on w = 0 <= 0 instead.
        no_collapse_branch=Branch.W_REPULSIVE,
        name="growth_transport" if growth else "transport",
        fingerprint="growth_transport" if growth else "transport",
    )


def _catalog_attractive_congested():
    one = _const(1.0)
    zero = _const(0.0)
    two = _const(2.0)
    return Scenario(
        congestion=Congestion(
            v=lambda r: np.maximum(1.0 - np.asarray(r, dtype=float), 0.0),
            v_sup=1.0,
            vprime_bound=one,
            decay_g=lambda r: 2.0 * np.asarray(r, dtype=float),
        ),
        advection=Advection(V=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                            dxV=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                            growth_F=two, growth_G=one, growth_lambda=one),
        potential=_abs_potential(+1.0),
        source=Source(f=lambda t, x, rho: 0.0 * (np.asarray(x, dtype=float) + rho),
                      c_f=0.0, drho_f_bound=zero),
        no_collapse_branch=Branch.V_DECAYS,
        name="attractive_congested",
        fingerprint="attractive_congested",
    )


def _catalog_repulsive_source():
    one = _const(1.0)
    two = _const(2.0)

    def eta_mass(t, r, X):
        # |D_x f| <= rho |b'|; the bump b has total gradient variation 2 b(0).
        b_edge = expressions.bump(min(abs(X), 1.0))
        return 2.0 * r * (1.0 - b_edge)

    return Scenario(
        congestion=Congestion(
            v=lambda r: 1.0 / (1.0 + np.asarray(r, dtype=float)),
            v_sup=1.0,
            vprime_bound=one,
        ),
        advection=Advection(V=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                            dxV=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
                            growth_F=two, growth_G=one, growth_lambda=one),
        potential=_abs_potential(-1.0),
        source=Source(f=lambda t, x, rho: rho * expressions.bump(x),
                      c_f=0.5, drho_f_bound=one, eta_mass=eta_mass),
        no_collapse_branch=Branch.W_REPULSIVE,
        name="repulsive_source",
        fingerprint="repulsive_source",
    )


_CATALOG = {
    "transport": lambda: _catalog_transport(growth=False),
    "growth_transport": lambda: _catalog_transport(growth=True),
    "attractive_congested": _catalog_attractive_congested,
    "repulsive_source": _catalog_repulsive_source,
}

CATALOG_NAMES = tuple(sorted(_CATALOG))


def builtin_catalog(name: str) -> Scenario:
    try:
        return _CATALOG[name]()
    except KeyError:
        raise UnknownScenarioError(
            f"unknown scenario {name!r}; valid names: {', '.join(CATALOG_NAMES)}"
        ) from None


# ---------------------------------------------------------------------------
# scenario files (JSON with expression strings)

def _expr(section, key, variables, default=None, required=False):
    if key not in section:
        if required:
            raise ScenarioFormatError(f"missing required field {key!r}")
        if default is None:
            return None
        return expressions.compile_expression(default, variables)
    return expressions.compile_expression(section[key], variables)


def load_scenario(path) -> tuple[Scenario, Optional[InitialDensity]]:
    """Load a scenario document; returns the scenario and its inline initial
    density, when one is given under ``metadata.initial``.

    Document shape: top-level objects ``congestion``, ``advection``,
    ``potential``, ``source``, ``metadata``; model functions are expression
    strings in the documented grammar (variables: r for congestion and the
    radial envelopes, t/x for advection, x for the potential, t/x/rho for the
    source).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        doc = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioFormatError(f"cannot read scenario file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"{path}: top level must be an object")
    for section in ("congestion", "advection", "potential", "source"):
        if section not in doc or not isinstance(doc[section], dict):
            raise ScenarioFormatError(f"{path}: missing section {section!r}")

    con_d, adv_d, pot_d, src_d = (doc[k] for k in ("congestion", "advection", "potential", "source"))
    meta = doc.get("metadata", {})

    congestion = Congestion(
        v=_expr(con_d, "v", ("r",), required=True),
        v_sup=float(con_d.get("v_sup", 1.0)),
        vprime_bound=_expr(con_d, "vprime_bound", ("r",), default="0"),
        decay_g=_expr(con_d, "decay_g", ("r",)),
    )
    advection = Advection(
        V=_expr(adv_d, "V", ("t", "x"), default="0"),
        dxV=_expr(adv_d, "dxV", ("t", "x"), default="0"),
        growth_F=_expr(adv_d, "F", ("t",), default="1"),
        growth_G=_expr(adv_d, "G", ("r",), default="1"),
        growth_lambda=_expr(adv_d, "lambda", ("r",), default="1"),
    )
    w_expr = pot_d.get("W", "0")
    is_zero = str(w_expr).strip() == "0"
    atom = pot_d.get("atom_w", None)
    if atom is None:
        dxn = _expr(pot_d, "dxW_neg", ("x",), default="0")
        dxp = _expr(pot_d, "dxW_pos", ("x",), default="0")
        jump = float(dxp(0.0)) - float(dxn(0.0))
        atom_fn = _const(jump)
    else:
        atom_fn = _const(atom) if isinstance(atom, (int, float)) else expressions.compile_expression(atom, ("t",))
    potential = Potential(
        W=expressions.compile_expression(w_expr, ("x",)),
        dxW_neg=_expr(pot_d, "dxW_neg", ("x",), default="0"),
        dxW_pos=_expr(pot_d, "dxW_pos", ("x",), default="0"),
        dx2W=_expr(pot_d, "dx2W", ("x",), default="0"),
        atom_w=atom_fn,
        time_factor=_expr(pot_d, "time_factor", ("t",)),
        is_zero=is_zero,
    )
    source = Source(
        f=_expr(src_d, "f", ("t", "x", "rho"), default="0"),
        c_f=float(src_d.get("c_f", 0.0)),
        drho_f_bound=_expr(src_d, "drho_f_bound", ("r",), default="0"),
    )
    branch_txt = str(meta.get("branch", "w_repulsive")).lower()
    try:
        branch = Branch(branch_txt)
    except ValueError:
        raise ScenarioFormatError(
            f"{path}: metadata.branch must be one of {[b.value for b in Branch]}"
        ) from None

    import hashlib

    scenario = Scenario(
        congestion=congestion,
        advection=advection,
        potential=potential,
        source=source,
        no_collapse_branch=branch,
        name=str(meta.get("name", "custom")),
        fingerprint=hashlib.sha256(raw.encode()).hexdigest()[:16],
    )

    rho0 = None
    init_cfg = meta.get("initial")
    if init_cfg is not None:
        if "blocks" in init_cfg:
            rho0 = InitialDensity.from_blocks(init_cfg["blocks"])
        elif "samples" in init_cfg:
            pts = np.asarray(init_cfg["samples"], dtype=float)
            rho0 = InitialDensity.from_samples(pts[:, 0], pts[:, 1])
        else:
            raise ScenarioFormatError(f"{path}: metadata.initial needs 'blocks' or 'samples'")
    return scenario, rho0
