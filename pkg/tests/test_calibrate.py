import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdqueue import calibrate as cal


def test_reference_fit_values():
    f = cal.REFERENCE_FIT
    assert f(1.0) == pytest.approx(63.528 + 244.082)
    assert cal.derive_dt(3.84) == pytest.approx(8 / (63.528 + 244.082 / 3.84 ** 1.38148))


def test_synthetic_fit_recovers_coefficients():
    betas = np.array([0.5, 1, 2, 3, 4, 5, 6, 8, 10.0])
    a, b, c = cal.REFERENCE_NBAR
    fit = cal.fit_nbar(betas, a + b / betas ** c)
    assert fit.converged
    assert np.allclose((fit.a, fit.b, fit.c), cal.REFERENCE_NBAR, rtol=1e-6, atol=0)


@given(a=st.floats(20, 100), b=st.floats(50, 400), c=st.floats(0.5, 2.5))
def test_synthetic_fit_is_exact(a, b, c):
    betas = np.linspace(0.5, 10, 9)
    fit = cal.fit_nbar(betas, a + b / betas ** c)
    assert np.allclose((fit.a, fit.b, fit.c), (a, b, c), rtol=1e-5)


def test_fit_needs_samples():
    with pytest.raises(ValueError):
        cal.fit_nbar([1, 2, 3], [3, 2, 1])
    with pytest.raises(ValueError):
        cal.fit_nbar([1, 1, 2, 3], [4, 3, 2, 1])


def test_weighted_fit_favours_precise_points():
    betas = np.array([0.5, 1, 2, 4, 6, 8, 10.0])
    nbars = 63.528 + 244.082 / betas ** 1.38148
    nbars[0] += 20.0                      # one noisy point
    sigma = np.ones_like(betas)
    sigma[0] = 1e3
    weighted = cal.fit_nbar(betas, nbars, sigma=sigma)
    plain = cal.fit_nbar(betas, nbars)
    tail = betas[1:]
    truth = 63.528 + 244.082 / tail ** 1.38148
    assert np.max(np.abs(weighted(tail) - truth)) < np.max(np.abs(plain(tail) - truth))


@pytest.mark.parametrize("sigma", [[1.0, 1.0], [1.0, 0.0, 1.0, 1.0]])
def test_fit_rejects_bad_sigma(sigma):
    with pytest.raises(ValueError):
        cal.fit_nbar([1.0, 2.0, 3.0, 4.0], [5.0, 4.0, 3.5, 3.2], sigma=sigma)


def test_objective_from_means():
    assert cal.objective_from_means([53, 60, 55]) == 0.0
    assert cal.objective_from_means([56, 64, 55]) == pytest.approx(5.0)


def test_implied_speed():
    assert cal.implied_speed(1.0) == pytest.approx(1.2)
    assert cal.implied_speed(0.0) == pytest.approx(0.8)


def test_measure_nbar_fixed_dt_is_reproducible():
    m1 = cal.measure_nbar(5.0, n_runs=300, dt=0.08, seed=3)
    m2 = cal.measure_nbar(5.0, n_runs=300, dt=0.08, seed=3)
    assert m1 == m2
    # a lone walker needs at least the 31 rows plus the door
    assert m1.mean >= 32


def test_measure_nbar_self_consistent():
    m = cal.measure_nbar(10.0, n_runs=400, seed=0)
    assert m.dt == pytest.approx(cal.TRAVERSAL_S / m.mean, rel=0.02)


def test_nbar_decreases_with_beta():
    lo = cal.measure_nbar(1.0, n_runs=400, dt=0.08)
    hi = cal.measure_nbar(8.0, n_runs=400, dt=0.08)
    assert hi.mean < lo.mean


def test_objective_common_random_numbers():
    small = ((10, 0.9), (10, 3.3), (10, 5.7))
    z1 = cal.objective_Z(3.84, 1.15, 0.0788, n_runs=8, scenarios=small, seed=1)
    z2 = cal.objective_Z(3.84, 1.15, 0.0788, n_runs=8, scenarios=small, seed=1)
    assert z1.Z == z2.Z and np.array_equal(z1.means, z2.means)
    assert not z1.incomplete


def test_default_grid():
    b, p = cal.default_grid()
    assert (len(b), len(p)) == (20, 12)
    assert b[0] == 0.5 and b[-1] == 10 and p[0] == 0.55 and p[-1] == pytest.approx(1.65)
    with pytest.raises(ValueError):
        cal.default_grid((4, 12))


@pytest.mark.slow
def test_grid_search_small():
    res = cal.grid_search(np.linspace(1, 9, 5), np.linspace(0.6, 1.6, 5), n_runs=10)
    assert res.surface.shape == (5, 5)
    assert res.Z_value == res.surface.min()
    assert res.dt_min == pytest.approx(cal.derive_dt(res.beta_min))
    # a slow door is far off: the exit time scales like n / p_ex
    assert res.surface[:, 0].min() > res.Z_value
    d = res.as_dict()
    assert d["targets_mu1"] == [53, 60, 55]


@pytest.mark.slow
def test_estimate_mu0_lowers_motivation():
    m = cal.estimate_mu0(3.84, 1.15, 0.0788, n_runs=20, coarse_step=1.0)
    assert m.mu0 < 1.0
    assert len(m.mus) == len(m.Zs)
    assert m.Z <= m.Zs.min() + 1e-9
