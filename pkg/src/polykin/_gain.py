"""Shared Monte-Carlo machinery for gain-type integrals at a fixed point.

A gain integral at s = (v, I) has the form

    int B(s, s*) G(s, s*, s', s'*) mu(omega, R, r) d omega dR dr ds*

with primes given by the collision transform.  Samples draw s* from the
proposal and (omega, R, r) exactly from the normalized collision measure,
so each sample is c_delta * B * G / q(s*).

The I^{d/2-1} factors of the equilibrium are carried analytically: with
a = d/2 - 1 and m the reduced equilibrium (M = I^a m),

    1/sqrt(M) * sqrt(M') sqrt(M'*) (I I*)^a / (I' I'*)^a
        = I^{a/2} I*^a (I' I'*)^{-a/2} sqrt(m*),

using m' m'* = m m*.
"""
from __future__ import annotations

import numpy as np

from .collision import apply_collision, collision_rate_factor, sample_angles
from .core import GasParams, MicroState, PairState, log_norm, transition_b


def sqrt_reduced(params: GasParams, s: MicroState) -> np.ndarray:
    v2 = np.einsum("...k,...k->...", s.v, s.v)
    return np.exp(-0.25 * v2 - 0.5 * np.asarray(s.i_energy) - 0.5 * log_norm(params))


def ipow(x, p: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if p == 0.0:
        return np.ones_like(x)
    with np.errstate(divide="ignore"):
        return np.power(x, p)


def collide_with_point(params: GasParams, s: MicroState, rng: np.random.Generator, size: int, proposal):
    """Sample partners and angles; return (partner, post pair, c_delta B / q)."""
    partner = proposal.sample(rng, size)
    point = MicroState(np.broadcast_to(s.v, (size, 3)), np.broadcast_to(s.i_energy, (size,)))
    pair = PairState(point, partner)
    post = apply_collision(pair, sample_angles(params, rng, size))
    w = collision_rate_factor(params) * transition_b(params, pair) / proposal.pdf(partner)
    return partner, post, w
