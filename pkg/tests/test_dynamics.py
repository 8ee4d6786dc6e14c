import numpy as np
import pytest

from pbal import (ParticleSystem, builtin_catalog, convolve_dxW, dxU_field,
                  free_velocity, rhs, source_rate, upwind_congestion)
from pbal.dynamics import convolve_dxW_generic
from pbal.diagnostics import good_v_violations_state
from pbal import dynamics
from pbal.scenario import Branch, Source

from conftest import (catalog_run, make_scenario, quadratic_potential,
                      random_particles, zero_field_scenario)


def quad_scenario(V=None, dxV=None):
    return make_scenario(potential=quadratic_potential(), V=V, dxV=dxV,
                         F=10.0, G=lambda r: 1.0 + np.asarray(r, dtype=float),
                         lam=lambda r: 1.0 + np.asarray(r, dtype=float),
                         branch=Branch.W_REPULSIVE, name="quad")


# --------------------------------------------------------------- convolution

def test_convolve_first_moment():
    # W = x^2/2: (dxW * rho)(y) = y * mass - first moment; unit block on (0,1)
    p = ParticleSystem(0.0, [0.0, 1.0], [1.0])
    s = quad_scenario()
    assert convolve_dxW(p, s, 0.0) == pytest.approx(-0.5, rel=1e-12)
    assert convolve_dxW(p, s, 2.0) == pytest.approx(1.5, rel=1e-12)


def test_convolve_even_W_symmetric_density():
    p = ParticleSystem(0.0, [-1.0, 0.0, 1.0], [0.5, 0.5])
    s = quad_scenario()
    assert convolve_dxW(p, s, 0.0) == pytest.approx(0.0, abs=1e-14)


def test_convolve_zero_potential():
    p = ParticleSystem(0.0, [0.0, 1.0], [1.0])
    assert convolve_dxW(p, zero_field_scenario(), 0.3) == 0.0


def test_convolve_exactness_random(rng):
    # closed form y*mass - M1 for the quadratic potential
    s = quad_scenario()
    for _ in range(20):
        p = random_particles(rng, 15)
        mass = float(np.sum(p.q))
        rho = p.q / np.diff(p.x)
        m1 = float(np.sum(rho * (p.x[1:] ** 2 - p.x[:-1] ** 2) / 2.0))
        y = rng.uniform(-3, 3)
        assert convolve_dxW(p, s, y) == pytest.approx(y * mass - m1, rel=1e-12, abs=1e-12)


def test_convolve_fast_path_matches_generic(rng):
    for name in ("attractive_congested", "repulsive_source"):
        s = builtin_catalog(name)
        assert s.potential.grad_conv is not None
        for _ in range(10):
            p = random_particles(rng, 12)
            rho = p.q / np.diff(p.x)
            y = rng.uniform(-3, 3, 17)
            fast = dynamics.convolve_dxW_arrays(0.0, p.x, rho, s, y)
            generic = convolve_dxW_generic(0.0, p.x, rho, s, y)
            assert np.allclose(fast, generic, rtol=1e-12, atol=1e-12)


def test_convolve_mass_homogeneity(rng):
    s = quad_scenario()
    p = random_particles(rng, 10)
    alpha = 3.7
    p_scaled = ParticleSystem(p.t, p.x, alpha * p.q)
    y = rng.uniform(-2, 2, 7)
    a = np.array([convolve_dxW(p, s, float(v)) for v in y])
    b = np.array([convolve_dxW(p_scaled, s, float(v)) for v in y])
    assert np.allclose(b, alpha * a, rtol=1e-12)


# ------------------------------------------------------------- free velocity

def test_free_velocity_pure_advection():
    s = builtin_catalog("transport")
    p = ParticleSystem(0.0, [0.0, 0.5, 1.0], [0.5, 0.5])
    assert np.allclose(free_velocity(p, s), 1.0)


def test_free_velocity_linear_field():
    s = make_scenario(V=lambda t, x: np.asarray(x, dtype=float),
                      dxV=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
                      G=lambda r: 1.0 + np.asarray(r, dtype=float),
                      lam=lambda r: 1.0 + np.asarray(r, dtype=float))
    p = ParticleSystem(0.0, [-1.0, 0.0, 2.0], [1.0, 1.0])
    assert np.allclose(free_velocity(p, s), p.x)


def test_free_velocity_attractive_signs():
    s = builtin_catalog("attractive_congested")
    p = ParticleSystem(0.0, [-1.0, 0.0, 1.0], [0.5, 0.5])
    U = free_velocity(p, s)
    assert U[0] > 0 and U[-1] < 0
    assert U[1] == pytest.approx(0.0, abs=1e-14)


# ---------------------------------------------------------------- upwinding

def test_upwind_downstream_positive():
    # rho = (0.2, 0.8), U = +1 at the shared particle -> v(0.8) = 0.2
    s = builtin_catalog("attractive_congested")
    p = ParticleSystem(0.0, [0.0, 1.0, 2.0], [0.2, 0.8])
    v_sel = upwind_congestion(p, s, np.array([1.0, 1.0, 1.0]))
    assert v_sel[1] == pytest.approx(0.2)


def test_upwind_downstream_negative():
    s = builtin_catalog("attractive_congested")
    p = ParticleSystem(0.0, [0.0, 1.0, 2.0], [0.2, 0.8])
    v_sel = upwind_congestion(p, s, np.array([-1.0, -1.0, -1.0]))
    assert v_sel[1] == pytest.approx(0.8)
    # leftmost particle moving left sees the outside vacuum: v(0) = 1
    assert v_sel[0] == pytest.approx(1.0)


def test_upwind_tie_goes_downstream():
    s = builtin_catalog("attractive_congested")
    p = ParticleSystem(0.0, [0.0, 1.0, 2.0], [0.2, 0.8])
    v_sel = upwind_congestion(p, s, np.array([0.0, 0.0, 0.0]))
    assert v_sel[1] == pytest.approx(0.2)  # v(rho_2)
    assert v_sel[2] == pytest.approx(1.0)  # v(rho_3 = 0) at the right boundary


# ------------------------------------------------------------------- source

def test_source_linear_in_rho():
    s = builtin_catalog("growth_transport")  # f = rho
    p = ParticleSystem(0.0, [0.0, 0.5, 2.0], [0.3, 0.9])
    assert np.allclose(source_rate(p, s), p.q, rtol=1e-14)


def test_source_zero():
    p = ParticleSystem(0.0, [0.0, 1.0], [1.0])
    assert np.allclose(source_rate(p, builtin_catalog("transport")), 0.0)


def test_source_polynomial_exact():
    # f = rho * x on cell (0,1) with rho = 2: integral 1
    src = Source(f=lambda t, x, rho: rho * np.asarray(x, dtype=float),
                 c_f=1.0, drho_f_bound=lambda r: np.ones_like(np.asarray(r, dtype=float)))
    s = make_scenario(source=src, G=lambda r: 1 + np.asarray(r, dtype=float),
                      lam=lambda r: 1 + np.asarray(r, dtype=float))
    p = ParticleSystem(0.0, [0.0, 1.0], [2.0])
    assert source_rate(p, s)[0] == pytest.approx(1.0, rel=1e-14)


# ---------------------------------------------------------------------- rhs

def test_rhs_transport():
    p = ParticleSystem(0.0, [0.0, 0.25, 1.0], [0.5, 0.5])
    ev = rhs(p, builtin_catalog("transport"))
    assert np.allclose(ev.xdot, 1.0)
    assert np.allclose(ev.qdot, 0.0)
    assert np.allclose(ev.xdot, ev.v_sel * ev.U)
    assert np.allclose(ev.rho_dot_adv, 0.0)


def test_rhs_growth_transport():
    p = ParticleSystem(0.0, [0.0, 0.25, 1.0], [0.5, 0.5])
    ev = rhs(p, builtin_catalog("growth_transport"))
    assert np.allclose(ev.xdot, 1.0)
    assert np.allclose(ev.qdot, p.q, rtol=1e-14)
    assert np.allclose(ev.rho_dot_src, p.q / np.diff(p.x))


def test_rhs_repulsive_spreads():
    s = builtin_catalog("repulsive_source")
    p = ParticleSystem(0.0, [-1.0, 0.0, 1.0], [0.5, 0.5])
    ev = rhs(p, s)
    assert ev.xdot[0] < 0 < ev.xdot[-1]


# ---------------------------------------------------------------- dxU field

def test_dxU_linear_advection():
    s = make_scenario(V=lambda t, x: np.asarray(x, dtype=float),
                      dxV=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
                      G=lambda r: 1 + np.asarray(r, dtype=float),
                      lam=lambda r: 1 + np.asarray(r, dtype=float))
    p = ParticleSystem(0.0, [0.0, 1.0], [1.0])
    assert dxU_field(p, s, 0.5) == pytest.approx(1.0)
    assert dxU_field(p, s, 7.0) == pytest.approx(1.0)


def test_dxU_quadratic_potential():
    # dx2W == 1 convolved with unit mass gives 1; w = 0
    s = quad_scenario()
    p = ParticleSystem(0.0, [0.0, 1.0], [1.0])
    assert dxU_field(p, s, 0.5) == pytest.approx(-1.0, rel=1e-12)


def test_dxU_kink_potential():
    # W = |x|: dx2W = 0 a.e., atom w = 2; inside a cell dxU = -2 rho, outside 0
    s = builtin_catalog("attractive_congested")
    p = ParticleSystem(0.0, [0.0, 1.0, 3.0], [0.5, 0.5])
    assert dxU_field(p, s, 0.5) == pytest.approx(-2.0 * 0.5)
    assert dxU_field(p, s, 2.0) == pytest.approx(-2.0 * 0.25)
    assert dxU_field(p, s, 5.0) == pytest.approx(0.0, abs=1e-14)


def test_dxU_breakpoint_requires_side():
    s = builtin_catalog("attractive_congested")
    p = ParticleSystem(0.0, [0.0, 1.0, 3.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        dxU_field(p, s, 1.0)
    assert dxU_field(p, s, 1.0, side="left") == pytest.approx(-1.0)
    assert dxU_field(p, s, 1.0, side="right") == pytest.approx(-0.5)


# ------------------------------------------------------- structural checks

def test_good_v_on_random_states(rng):
    for name in ("transport", "attractive_congested", "repulsive_source"):
        s = builtin_catalog(name)
        for _ in range(10):
            p = random_particles(rng, 20)
            U = free_velocity(p, s)
            v_sel = upwind_congestion(p, s, U)
            r_max = float(np.max(p.q / np.diff(p.x)))
            c_grid = [0.0, 0.3 * r_max, 0.7 * r_max, r_max, 1.2 * r_max]
            out = good_v_violations_state(p.t, p.x, p.q, U, v_sel, s.congestion.v, c_grid)
            assert out == [], (name, out[:3])


def test_first_difference_bound(rng):
    # |U_i - U_{i-1}| / (x_i - x_{i-1}) <= C1 + C2 rho_i with the refined
    # constants evaluated on the realized support/mass
    cases = {
        "transport": lambda p: (0.0, 0.0),
        "attractive_congested": lambda p: (0.0, 2.0),
        "repulsive_source": lambda p: (0.0, 2.0),
    }
    for name, consts in cases.items():
        s = builtin_catalog(name)
        for _ in range(10):
            p = random_particles(rng, 25)
            c1, c2 = consts(p)
            U = free_velocity(p, s)
            rho = p.q / np.diff(p.x)
            ratio = np.abs(np.diff(U)) / np.diff(p.x)
            assert np.all(ratio <= c1 + c2 * rho + 1e-9), name


def test_first_difference_bound_quadratic(rng):
    # C1 = |dxV| + |dx2W|_inf * mass = mass, C2 = |w| = 0
    s = quad_scenario()
    for _ in range(10):
        p = random_particles(rng, 25)
        U = free_velocity(p, s)
        ratio = np.abs(np.diff(U)) / np.diff(p.x)
        assert np.all(ratio <= float(np.sum(p.q)) + 1e-9)


def test_good_v_holds_along_catalog_run():
    traj = catalog_run("attractive_congested", 50, t_end=0.5, k_snapshots=6,
                       store_steps=True)
    s = builtin_catalog("attractive_congested")
    for p in traj.steps:
        U = free_velocity(p, s)
        v_sel = upwind_congestion(p, s, U)
        out = good_v_violations_state(p.t, p.x, p.q, U, v_sel, s.congestion.v,
                                      [0.0, 0.25, 0.5, 0.75, 1.0])
        assert out == []
