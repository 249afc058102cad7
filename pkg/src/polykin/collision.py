"""Borgnakke-Larsen collision transform and its parameter measure.

The collision redistributes the pair energy E = |u|^2/4 + I + I* as

    |u'|^2/4 = R E,   I' = r (1 - R) E,   I'* = (1 - r)(1 - R) E,

with u' = |u'| omega.  The parameters carry the measure
(r(1-r))^{d/2-1} (1-R)^{d-1} R^{1/2} d omega dR dr, i.e. omega uniform on the
sphere, R ~ Beta(3/2, d) and r ~ Beta(d/2, d/2) after normalization.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.special import beta as beta_fn

from .core import GasParams, MicroState, PairState, total_energy, transition_b


class CollisionAngles(NamedTuple):
    omega: np.ndarray
    big_r: np.ndarray
    small_r: np.ndarray


def collision_rate_factor(params: GasParams) -> float:
    """Total mass of the angular / energy-split measure.

    4 pi B(d/2, d/2) B(3/2, d); the pair collision rate is this factor
    times the transition function.
    """
    d = params.delta
    return 4.0 * math.pi * float(beta_fn(0.5 * d, 0.5 * d)) * float(beta_fn(1.5, d))


def sample_angles(params: GasParams, rng: np.random.Generator, size=None) -> CollisionAngles:
    """Draw (omega, R, r) exactly from the normalized collision measure.

    Draw order is fixed (omega normals, then R, then r) so that a given
    generator state always yields the same angles.
    """
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    g = rng.standard_normal(shape + (3,))
    omega = g / np.linalg.norm(g, axis=-1, keepdims=True)
    big_r = rng.beta(1.5, params.delta, size=shape)
    small_r = rng.beta(0.5 * params.delta, 0.5 * params.delta, size=shape)
    return CollisionAngles(omega, np.asarray(big_r), np.asarray(small_r))


def apply_collision(p: PairState, c: CollisionAngles) -> PairState:
    """Post-collision pair.  Exact in momentum; energy to rounding.

    E = 0 is allowed and returns both particles at the centre of mass
    with zero internal energy.
    """
    v = np.asarray(p.a.v, dtype=float)
    vs = np.asarray(p.b.v, dtype=float)
    energy = total_energy(p)
    g = 0.5 * (v + vs)
    big_r = np.asarray(c.big_r, dtype=float)
    small_r = np.asarray(c.small_r, dtype=float)
    half_u = np.sqrt(big_r * energy)[..., None] * np.asarray(c.omega, dtype=float)
    internal = (1.0 - big_r) * energy
    return PairState(
        MicroState(g + half_u, small_r * internal),
        MicroState(g - half_u, (1.0 - small_r) * internal),
    )


def equilibrium_fixed_point(
    params: GasParams,
    rng: np.random.Generator,
    n_accepted: int = 100_000,
    temperature: float = 1.0,
    batch: int = 1 << 16,
) -> dict:
    """Collide equilibrium pairs and compare outgoing and incoming marginals.

    B depends on the pair only through its total relative energy, which
    the collision conserves.  Two consequences are checked:

    * pairs collided without rate weighting leave the first particle's
      speed and internal energy distributed as chi(3) and Gamma(delta/2)
      (``ks_speed``, ``ks_i``, one-sample KS against the exact laws);
    * pairs kept with probability proportional to B (relative to the batch
      maximum) have an outgoing marginal equal to their incoming one,
      which is rate-weighted and so not the equilibrium itself
      (``ks_speed_weighted``, ``ks_i_weighted``, two-sample KS).
    """
    t = float(temperature)
    sd = math.sqrt(t)

    def draw(size):
        a = MicroState(rng.normal(0.0, sd, (size, 3)), rng.gamma(0.5 * params.delta, t, size))
        b = MicroState(rng.normal(0.0, sd, (size, 3)), rng.gamma(0.5 * params.delta, t, size))
        return PairState(a, b)

    plain = draw(n_accepted)
    out = apply_collision(plain, sample_angles(params, rng, n_accepted))
    ks_speed = stats.kstest(np.linalg.norm(out.a.v, axis=-1), stats.chi(3, scale=sd).cdf).statistic
    ks_i = stats.kstest(out.a.i_energy, stats.gamma(0.5 * params.delta, scale=t).cdf).statistic

    before, after = [], []
    got = 0
    while got < n_accepted:
        pair = draw(batch)
        rate = transition_b(params, pair)
        keep = rng.random(batch) * rate.max() < rate
        idx = np.flatnonzero(keep)[: n_accepted - got]
        sub = PairState(MicroState(pair.a.v[idx], pair.a.i_energy[idx]), MicroState(pair.b.v[idx], pair.b.i_energy[idx]))
        post = apply_collision(sub, sample_angles(params, rng, idx.size))
        before.append(sub.a)
        after.append(post.a)
        got += idx.size
    v_in = np.concatenate([s.v for s in before])
    v_out = np.concatenate([s.v for s in after])
    i_in = np.concatenate([s.i_energy for s in before])
    i_out = np.concatenate([s.i_energy for s in after])
    return {
        "n": int(n_accepted),
        "ks_speed": float(ks_speed),
        "ks_i": float(ks_i),
        "ks_speed_weighted": float(stats.ks_2samp(np.linalg.norm(v_out, axis=-1), np.linalg.norm(v_in, axis=-1)).statistic),
        "ks_i_weighted": float(stats.ks_2samp(i_out, i_in).statistic),
    }
