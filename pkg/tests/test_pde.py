import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdqueue import pde
from crowdqueue.geometry import build_corridor
from crowdqueue.potential import distance_potential


def closed(params):
    return params.replace(p_ex=0.0)


def entropy_variable(rho, phi, params):
    g = params.push
    k, q = pde._exponents(g)
    return np.log(rho) - k * np.log1p(-rho) + q * np.log1p(2 * g * rho) + params.drift * phi


def fermi_profile(phi, params, level):
    """Solve ``entropy_variable(rho) = level`` cell by cell by bisection."""
    lo, hi = np.full(phi.shape, 1e-300), np.full(phi.shape, 1 - 1e-16)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = entropy_variable(mid, phi, params) > level
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("variant, gamma", [("standard", 0.0), ("pushing", 1.0),
                                            ("pushing", 0.3)])
def test_equilibrium_has_zero_flux(wide, variant, gamma):
    """The discrete flux vanishes exactly where the entropy variable is constant."""
    params = pde.PdeParams(variant=variant, gamma=gamma, beta=0.3, p_ex=0.0)
    phi = distance_potential(wide).values
    rho = fermi_profile(phi, params, level=2.0)
    assert 0.01 < rho.min() and rho.max() < 1
    fx, fy = pde.face_fluxes(rho, phi, params, wide.dx)
    assert np.abs(fx).max() < 1e-12 and np.abs(fy).max() < 1e-12


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_face_flux_consistent_with_continuum(gamma):
    """Second-order agreement with the continuum flux on smooth 1-D data."""
    params = pde.PdeParams(variant="pushing", gamma=gamma, beta=1.0)
    errs = []
    for n in (40, 80, 160):
        h = 1.0 / n
        x = (np.arange(n) + 0.5) * h
        rho = (0.5 + 0.3 * np.sin(2 * np.pi * x))[None, :]
        phi = (0.7 * x)[None, :]
        fx, _ = pde.face_fluxes(rho, phi, params, h)
        xf = x[:-1] + 0.5 * h
        rf = 0.5 + 0.3 * np.sin(2 * np.pi * xf)
        grad = 0.6 * np.pi * np.cos(2 * np.pi * xf)
        j = pde.flux(rf, grad, np.full_like(xf, 0.7), params)
        errs.append(np.abs(fx[0] * h + j * h).max() / h)   # mass flux is -j
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


@given(seed=st.integers(0, 2**32 - 1), gamma=st.sampled_from([0.0, 0.5, 1.0]),
       beta=st.floats(0.5, 10))
def test_closed_step_properties(seed, gamma, beta):
    grid = build_corridor(1.5, 2.4, 0.9, 0.3)[1]
    params = pde.PdeParams(variant="pushing", gamma=gamma, beta=beta, p_ex=0.0)
    phi = distance_potential(grid).values
    rho = np.random.default_rng(seed).uniform(0, 1, grid.shape)
    dt = pde.stable_dt(phi, params, grid.dx)
    e0 = pde.entropy(rho, phi, params, grid.dx)
    for _ in range(20):
        new, out = pde.step(rho, phi, params, grid, dt)
        assert out == 0.0
        assert abs(new.sum() - rho.sum()) <= 1e-12 * rho.size
        assert new.min() >= 0 and new.max() <= 1
        e1 = pde.entropy(new, phi, params, grid.dx)
        assert e1 <= e0 + 1e-10
        rho, e0 = new, e1


def test_outflow_balances_mass(narrow):
    params = pde.PdeParams(p_ex=0.5)
    phi = distance_potential(narrow).values
    rho = pde.initial_density(narrow, 60)
    for _ in range(200):
        new, out = pde.step(rho, phi, params, narrow)
        lost = (rho.sum() - new.sum()) * narrow.dx ** 2
        assert lost == pytest.approx(out, abs=1e-12)
        assert out > 0
        rho = new


def test_step_raises_on_oversized_dt(narrow):
    params = pde.PdeParams(beta=10.0)
    phi = distance_potential(narrow).values
    rho = np.random.default_rng(0).uniform(0, 1, narrow.shape)
    with pytest.raises(pde.PdeError):
        pde.step(rho, phi, params, narrow, dt=100 * pde.stable_dt(phi, params, narrow.dx))


def test_params():
    p = pde.PdeParams.from_mu(0.0)
    assert p.prefactor == pytest.approx(1 / 24)
    assert p.drift == pytest.approx(2 * 3.84)
    m = pde.PdeParams(variant="motivated_drift", mu=0.5)
    assert m.prefactor == 0.125 and m.drift == pytest.approx(3.84)
    assert pde.PdeParams(gamma=1.0).push == 0.0       # pushing needs its variant
    with pytest.raises(ValueError):
        pde.PdeParams(variant="nope")
    with pytest.raises(ValueError):
        pde.PdeParams.from_mu(2.0)


def test_mobility_and_flux_reduce_without_pushing():
    p = pde.PdeParams()
    rho = np.linspace(0, 1, 11)
    assert np.allclose(pde.mobility(rho, p), rho * (1 - rho))
    j = pde.flux(0.3, 0.0, 1.0, p)
    assert j == pytest.approx(p.prefactor * p.drift * 0.21)


def test_time_scale_and_outflow_conversion():
    s = pde.ca_time_scale(0.0771, 0.3)
    assert s == pytest.approx(0.0771 / 0.27)
    p_ex = pde.door_capacity_to_outflow(1.11, 0.9, 0.3, s)
    # at full density the exit passes p_ex * width / dx^2 persons per unit time
    assert p_ex * 0.9 / 0.09 / s == pytest.approx(1.11)


def test_scenario_mass_decreases(narrow):
    res = pde.simulate_scenario(narrow, 60, pde.PdeParams(p_ex=0.2), record_every=5)
    assert res.complete
    assert np.all(np.diff(res.mass) < 0)
    assert res.mass[-1] <= 1e-3 * res.mass[0]
    peak, t = res.peak()
    assert 0 < peak <= 1 / 0.09
    assert res.time_to_reach(peak) == t


def test_scenario_closed_mass_constant(narrow):
    res = pde.simulate_scenario(narrow, 60, pde.PdeParams(p_ex=0.0), t_end=5.0)
    assert not res.complete
    assert np.allclose(res.mass, res.mass[0], rtol=0, atol=1e-12)
    assert np.all(np.diff(res.entropy) <= 1e-10)


def test_initial_density_capacity(narrow):
    with pytest.raises(ValueError):
        pde.initial_density(narrow, narrow.n_cells + 1)
    assert pde.initial_density(narrow, 48).sum() == pytest.approx(48)


def test_hughes_coupled_mode_runs():
    grid = build_corridor(3.3, 9.6, 0.9, 0.3)[1]
    res = pde.simulate_scenario(grid, 40, pde.PdeParams(p_ex=0.3), hughes_every=20, t_end=20.0)
    assert np.all(np.diff(res.mass) <= 0)


def test_hughes_coupled_mode_stops_when_stiff(narrow):
    # a packed narrow corridor drives the cost 1/(1 - rho) up by orders of magnitude
    with pytest.raises(pde.PdeError, match="too stiff"):
        pde.simulate_scenario(narrow, 90, pde.PdeParams(p_ex=0.3), hughes_every=5, t_end=20.0)
