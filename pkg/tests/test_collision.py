import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from polykin.collision import apply_collision, collision_rate_factor, equilibrium_fixed_point, sample_angles
from polykin.core import GasParams, MicroState, PairState, reduced_maxwellian, total_energy

from oracles import beta_cdf, rate_factor, tabulated_cdf


def _random_pairs(rng, n, scale=3.0):
    a = MicroState(rng.normal(0, scale, (n, 3)), rng.exponential(scale, n))
    b = MicroState(rng.normal(0, scale, (n, 3)), rng.exponential(scale, n))
    return PairState(a, b)


@pytest.mark.parametrize("delta", [2.0, 3.0, 5.0, 7.5])
def test_rate_factor_matches_quadrature(delta):
    assert collision_rate_factor(GasParams(delta=delta)) == pytest.approx(rate_factor(delta), rel=1e-10)


def test_rate_factor_delta2_closed_form():
    assert collision_rate_factor(GasParams()) == pytest.approx(16 * math.pi / 15, rel=1e-14)


def test_angles_shape_and_range():
    c = sample_angles(GasParams(delta=3.0), np.random.default_rng(1), 1000)
    assert c.omega.shape == (1000, 3)
    assert np.allclose(np.linalg.norm(c.omega, axis=1), 1.0)
    assert np.all((c.big_r > 0) & (c.big_r < 1))
    assert np.all((c.small_r > 0) & (c.small_r < 1))


def test_angles_reproducible():
    p = GasParams()
    a = sample_angles(p, np.random.default_rng(9), 10)
    b = sample_angles(p, np.random.default_rng(9), 10)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_omega_isotropic():
    c = sample_angles(GasParams(), np.random.default_rng(2), 200_000)
    # each component of a uniform unit vector is uniform on [-1, 1]
    for k in range(3):
        assert stats.kstest(c.omega[:, k], stats.uniform(-1, 2).cdf).statistic < 0.005


@pytest.mark.parametrize("delta", [2.0, 5.0])
def test_r_laws_against_quadrature_cdf(delta):
    c = sample_angles(GasParams(delta=delta), np.random.default_rng(3), 100_000)
    big = tabulated_cdf(lambda x: beta_cdf(x, 1.5, delta), 0.0, 1.0)
    small = tabulated_cdf(lambda x: beta_cdf(x, 0.5 * delta, 0.5 * delta), 0.0, 1.0)
    assert stats.kstest(c.big_r, big).statistic < 0.006
    assert stats.kstest(c.small_r, small).statistic < 0.006


def test_r_and_small_r_independent():
    c = sample_angles(GasParams(delta=3.0), np.random.default_rng(4), 100_000)
    q = np.linspace(0, 1, 21)
    xe = np.quantile(c.big_r, q)
    ye = np.quantile(c.small_r, q)
    xe[0], ye[0], xe[-1], ye[-1] = 0, 0, 1, 1
    table, _, _ = np.histogram2d(c.big_r, c.small_r, bins=[xe, ye])
    chi2, pval, _, _ = stats.chi2_contingency(table)
    assert pval > 1e-3


def test_collision_conserves():
    rng = np.random.default_rng(5)
    p = GasParams(delta=3.0)
    pair = _random_pairs(rng, 10_000)
    out = apply_collision(pair, sample_angles(p, rng, 10_000))
    mom_in = pair.a.v + pair.b.v
    mom_out = out.a.v + out.b.v
    e_in = 0.5 * (np.sum(pair.a.v**2, 1) + np.sum(pair.b.v**2, 1)) + pair.a.i_energy + pair.b.i_energy
    e_out = 0.5 * (np.sum(out.a.v**2, 1) + np.sum(out.b.v**2, 1)) + out.a.i_energy + out.b.i_energy
    assert np.max(np.abs(mom_out - mom_in)) <= 1e-12 * np.max(np.abs(mom_in))
    assert np.max(np.abs(e_out - e_in) / e_in) < 1e-13
    assert np.allclose(total_energy(out), total_energy(pair), rtol=1e-13)
    assert np.all(out.a.i_energy >= 0) and np.all(out.b.i_energy >= 0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=6, max_size=6),
    st.floats(0, 20),
    st.floats(0, 20),
    st.floats(0.01, 0.99),
    st.floats(0.01, 0.99),
)
def test_reduced_maxwellian_product_invariant(vv, i, j, big_r, small_r):
    p = GasParams(delta=4.0)
    pair = PairState(MicroState(np.array(vv[:3]), i), MicroState(np.array(vv[3:]), j))
    omega = np.array([0.6, 0.0, 0.8])
    from polykin.collision import CollisionAngles

    out = apply_collision(pair, CollisionAngles(omega, np.array(big_r), np.array(small_r)))
    before = reduced_maxwellian(p, pair.a) * reduced_maxwellian(p, pair.b)
    after = reduced_maxwellian(p, out.a) * reduced_maxwellian(p, out.b)
    assert after == pytest.approx(before, rel=1e-9, abs=1e-300)


def test_zero_energy_pair():
    z = MicroState(np.ones(3), 0.0)
    out = apply_collision(PairState(z, z), sample_angles(GasParams(), np.random.default_rng(0)))
    assert np.array_equal(out.a.v, np.ones(3)) and out.a.i_energy == 0.0


@pytest.mark.parametrize("delta", [2.0, 3.0])
def test_equilibrium_fixed_point(delta):
    res = equilibrium_fixed_point(GasParams(delta=delta), np.random.default_rng(6), 50_000)
    assert res["n"] == 50_000
    for key in ("ks_speed", "ks_i", "ks_speed_weighted", "ks_i_weighted"):
        assert res[key] < 0.012, key


def test_rate_weighted_marginal_is_not_equilibrium():
    # B grows with the pair energy, so B-weighted pairs are hotter than M.
    p = GasParams()
    rng = np.random.default_rng(7)
    n = 100_000
    pair = PairState(
        MicroState(rng.normal(size=(n, 3)), rng.exponential(size=n)),
        MicroState(rng.normal(size=(n, 3)), rng.exponential(size=n)),
    )
    from polykin.core import transition_b

    b = transition_b(p, pair)
    keep = rng.random(n) * b.max() < b
    assert stats.kstest(pair.a.i_energy[keep], stats.expon.cdf).statistic > 0.05
