import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polykin.core import (
    GasParams,
    MicroState,
    PairState,
    maxwellian,
    maxwellian_temperature,
    reduced_maxwellian,
    total_energy,
    transition_b,
    weight,
)

finite = st.floats(-20, 20, allow_nan=False)
energy = st.floats(0, 50, allow_nan=False)


@pytest.mark.parametrize(
    "kwargs",
    [{"alpha": 2.0}, {"alpha": -0.1}, {"delta": 1.5}, {"c_b": 0.0}, {"beta": 7.0}, {"delta": float("nan")}],
)
def test_gas_params_rejects(kwargs):
    with pytest.raises(ValueError):
        GasParams(**kwargs)


def test_defaults():
    p = GasParams()
    assert (p.delta, p.alpha, p.c_b, p.beta) == (2.0, 0.0, 1.0, 8.0)
    assert p.i_exponent == 0.0
    assert p.b_exponent == 1.0


def test_microstate_make_validates():
    with pytest.raises(ValueError):
        MicroState.make([1.0, 2.0], 0.0)
    with pytest.raises(ValueError):
        MicroState.make([0.0, 0.0, 0.0], -1.0)
    with pytest.raises(ValueError):
        MicroState.make([np.inf, 0.0, 0.0], 1.0)
    s = MicroState.make([[3.0, 4.0, 0.0]], [1.0])
    assert s.speed[0] == 5.0


def test_maxwellian_at_origin_delta2():
    # I^0 e^0 / ((2 pi)^{3/2} Gamma(1))
    p = GasParams()
    assert maxwellian(p, MicroState(np.zeros(3), 0.0)) == pytest.approx((2 * math.pi) ** -1.5, rel=1e-15)


def test_maxwellian_vanishes_at_zero_internal_energy_for_delta_above_two():
    p = GasParams(delta=3.0)
    assert maxwellian(p, MicroState(np.zeros(3), 0.0)) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), energy, st.sampled_from([2.0, 3.0, 5.0]))
def test_unit_temperature_matches_maxwellian(v, i, delta):
    p = GasParams(delta=delta)
    s = MicroState(np.array(v), i)
    assert maxwellian_temperature(p, s, 1.0) == pytest.approx(maxwellian(p, s), rel=1e-12, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), energy)
def test_maxwellian_factorizes(v, i):
    p = GasParams(delta=4.0)
    s = MicroState(np.array(v), i)
    assert maxwellian(p, s) == pytest.approx(i * reduced_maxwellian(p, s), rel=1e-12, abs=1e-300)


def test_weight_and_transition_values():
    p = GasParams(alpha=1.0, c_b=2.0)
    s = MicroState(np.array([3.0, 0.0, 0.0]), 4.0)
    assert weight(p, s) == 6.0**8
    pair = PairState(s, MicroState(np.array([-1.0, 0.0, 0.0]), 1.0))
    # |u|^2/4 = 4, + 4 + 1 = 9
    assert total_energy(pair) == 9.0
    assert transition_b(p, pair) == pytest.approx(2.0 * 3.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6), energy, energy)
def test_transition_symmetric(vv, i, j):
    p = GasParams(alpha=0.7)
    a = MicroState(np.array(vv[:3]), i)
    b = MicroState(np.array(vv[3:]), j)
    assert transition_b(p, PairState(a, b)) == pytest.approx(transition_b(p, PairState(b, a)), rel=1e-14)


def test_broadcasting_batch():
    p = GasParams(delta=3.0)
    rng = np.random.default_rng(0)
    s = MicroState(rng.normal(size=(4, 5, 3)), rng.random((4, 5)))
    assert maxwellian(p, s).shape == (4, 5)
    assert weight(p, s).shape == (4, 5)
