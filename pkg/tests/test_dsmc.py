import math

import numpy as np
import pytest
from scipy import special, stats

from polykin.collision import collision_rate_factor
from polykin.core import GasParams
from polykin.dsmc import (
    CSV_HEADER,
    DiagnosticsRow,
    InitialCondition,
    SimConfig,
    Simulation,
    advect,
    candidate_counts,
    collide_step,
    compensated_sum,
    diagnostics,
    entropy_estimate,
    equilibrium_temperature,
    init_ensemble,
    moving_average,
    read_diagnostics,
    relaxation_fit,
    run,
)


def _totals(ens):
    p = ens.v.sum(axis=0)
    e = math.fsum(0.5 * np.einsum("ij,ij->i", ens.v, ens.v) + ens.i_energy)
    return p, e


@pytest.mark.parametrize(
    "kwargs",
    [{"n_particles": 10}, {"n_cells": 0}, {"n_particles": 2000, "n_cells": 4}, {"dt": -1.0}, {"dt": 2.0, "t_end": 1.0}, {"diag_every": 0}],
)
def test_sim_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_initial_condition_rejects():
    with pytest.raises(ValueError):
        InitialCondition("bogus")
    with pytest.raises(ValueError):
        InitialCondition.two_temperature(1.0, 0.0)
    with pytest.raises(ValueError):
        InitialCondition.spatial_mode(1.0)


def test_to_dict_round_trips_fields():
    d = SimConfig(init=InitialCondition.two_temperature(2.0, 0.1)).to_dict()
    assert d["init"]["t_int"] == 0.1 and d["params"]["delta"] == 2.0


def test_init_marginals():
    cfg = SimConfig(params=GasParams(delta=3.0), n_particles=50_000, init=InitialCondition.two_temperature(2.0, 0.5), seed=3)
    ens = init_ensemble(cfg)
    assert stats.kstest(ens.v[:, 0], stats.norm(scale=math.sqrt(2.0)).cdf).statistic < 0.01
    assert stats.kstest(ens.i_energy, stats.gamma(1.5, scale=0.5).cdf).statistic < 0.01
    assert np.all((ens.x >= 0) & (ens.x < 1))


def test_spatial_mode_positions():
    cfg = SimConfig(n_particles=200_000, init=InitialCondition.spatial_mode(0.5), seed=1)
    ens = init_ensemble(cfg)
    # E[cos 2 pi x] under density 1 + A cos(2 pi x) is A/2
    assert np.mean(np.cos(2 * np.pi * ens.x[:, 0])) == pytest.approx(0.25, abs=0.01)
    assert np.mean(np.cos(2 * np.pi * ens.x[:, 1])) == pytest.approx(0.0, abs=0.01)


def test_majorant_covers_initial_pairs():
    cfg = SimConfig(n_particles=5000, n_cells=2, seed=0)
    ens = init_ensemble(cfg)
    assert ens.b_major.shape == (8,)
    assert np.all(ens.b_major > 0)


def test_candidate_count_formula():
    p = GasParams()
    counts = np.array([0, 1, 100, 1000])
    out = candidate_counts(counts, np.full(4, 10.0), 1101, 1, p, 0.01)
    c = collision_rate_factor(p)
    assert list(out[:2]) == [0, 0]
    assert out[2] == math.ceil(100 * 99 / 1101 * c * 10 * 0.01 / 2)
    assert out[3] == math.ceil(1000 * 999 / 1101 * c * 10 * 0.01 / 2)


def test_advect_wraps():
    cfg = SimConfig(n_particles=1000, seed=0)
    ens = init_ensemble(cfg)
    x0 = ens.x.copy()
    advect(ens, 3.7)
    assert np.all((ens.x >= 0) & (ens.x < 1))
    assert np.allclose(np.mod(x0 + 3.7 * ens.v - ens.x + 0.5, 1.0), 0.5, atol=1e-9)


def test_collide_step_conserves_and_is_seeded():
    cfg = SimConfig(params=GasParams(delta=3.0, alpha=1.0), n_particles=20_000, n_cells=2, dt=0.05, seed=4)
    a, b = init_ensemble(cfg), init_ensemble(cfg)
    p0, e0 = _totals(a)
    _, acc_a = collide_step(a, cfg, 0)
    _, acc_b = collide_step(b, cfg, 0)
    assert acc_a == acc_b > 0
    assert np.array_equal(a.v, b.v) and np.array_equal(a.i_energy, b.i_energy)
    p1, e1 = _totals(a)
    assert np.max(np.abs(p1 - p0)) < 1e-12 * np.abs(a.v).sum()
    assert abs(e1 - e0) < 1e-12 * e0
    assert np.all(a.i_energy >= 0)


def test_thread_count_does_not_change_step(monkeypatch):
    cfg = SimConfig(n_particles=20_000, n_cells=2, dt=0.05, seed=5)
    results = []
    for threads in ("1", "2"):
        monkeypatch.setenv("POLYKIN_THREADS", threads)
        ens = init_ensemble(cfg)
        collide_step(ens, cfg, 7)
        results.append((ens.v.copy(), ens.i_energy.copy()))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])


def test_collision_count_matches_rate():
    # delta = 2, alpha = 0: mean nu over the equilibrium is c (6/4 + 2)
    p = GasParams()
    n, dt = 100_000, 0.02
    cfg = SimConfig(params=p, n_particles=n, dt=dt, seed=6)
    ens = init_ensemble(cfg)
    _, acc = collide_step(ens, cfg, 0)
    expected = 0.5 * (n - 1) * collision_rate_factor(p) * 3.5 * dt
    assert abs(acc - expected) < 5 * math.sqrt(expected)


def test_majorant_clamp_counted():
    cfg = SimConfig(n_particles=5000, dt=0.05, seed=2)
    ens = init_ensemble(cfg)
    ens.b_major[:] = 1e-3
    p0, e0 = _totals(ens)
    _, acc = collide_step(ens, cfg, 0)
    assert ens.clamps > 0 and acc > 0
    assert ens.b_major[0] > 1e-3
    assert abs(_totals(ens)[1] - e0) < 1e-12 * e0


def test_compensated_sum():
    x = np.array([1e16, 1.0, -1e16, 1.0] * 1000)
    assert compensated_sum(x) == 2000.0


@pytest.mark.parametrize("delta", [2.0, 4.0])
def test_entropy_estimate_of_equilibrium(delta):
    a = 0.5 * delta - 1
    exact = -1.5 * math.log(2 * math.pi) - special.gammaln(0.5 * delta) + a * special.digamma(0.5 * delta) - 1.5 - 0.5 * delta
    cfg = SimConfig(params=GasParams(delta=delta), n_particles=200_000, seed=0)
    assert entropy_estimate(init_ensemble(cfg)) == pytest.approx(exact, abs=0.02)


def test_entropy_estimate_rejects_empty():
    class Empty:
        v = np.zeros((0, 3))
        i_energy = np.zeros(0)

    with pytest.raises(ValueError):
        entropy_estimate(Empty())


def test_simulation_rows_and_csv(tmp_path):
    cfg = SimConfig(n_particles=5000, dt=0.05, t_end=0.5, diag_every=3, seed=1, init=InitialCondition.two_temperature(2.0, 0.1))
    path = tmp_path / "d.csv"
    rows = run(cfg, path)
    assert [round(r.t, 9) for r in rows] == [0.0, 0.15, 0.3, 0.45, 0.5]
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    back = read_diagnostics(path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert b.energy_total == pytest.approx(a.energy_total, rel=1e-11)
        assert b.collisions_accepted == a.collisions_accepted
    assert rows[0].collisions_accepted == 0 and sum(r.collisions_accepted for r in rows) > 0
    assert rows[-1].internal_mean > rows[0].internal_mean


def test_simulation_default_dt():
    sim = Simulation(SimConfig(n_particles=5000, t_end=1.0, seed=0))
    # 0.1 / (c * 3.5) at delta = 2, alpha = 0
    assert sim.dt == pytest.approx(0.1 / (16 * math.pi / 15 * 3.5), rel=0.05)


def test_equilibrium_temperature():
    row = DiagnosticsRow(0.0, 1.5, 1.0, np.array([1.0, 0, 0]), 3.0, 0.0, 0.0, 0)
    assert equilibrium_temperature(row, GasParams()) == pytest.approx(2 * 2.5 / 5)


def test_relaxation_fit_on_synthetic_decay():
    p = GasParams()
    n = 100_000
    rate = 2.0
    rows = []
    for t in np.linspace(0, 6, 61):
        internal = 1.0 - 0.9 * math.exp(-rate * t)
        rows.append(DiagnosticsRow(t, 2.5 - internal, internal, np.zeros(3), 2.5, 0.0, 0.0, 0))
    fit = relaxation_fit(rows, p, n)
    assert fit.target == pytest.approx(1.0)
    assert fit.rate == pytest.approx(rate, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.window.stop < 61


def test_moving_average():
    assert np.allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert np.array_equal(moving_average([1, 2], 5), [1.0, 2.0])
