"""Gas constants, phase-space states and the equilibrium density.

All functions broadcast: a ``MicroState`` may hold a single point
(``v`` of shape ``(3,)``) or a batch (``v`` of shape ``(..., 3)`` with a
matching ``i_energy``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GasParams:
    """Model constants.

    delta: internal degrees of freedom, alpha: potential exponent of the
    transition function, c_b: its prefactor, beta: exponent of the
    polynomial weight.
    """

    delta: float = 2.0
    alpha: float = 0.0
    c_b: float = 1.0
    beta: float = 8.0

    def __post_init__(self):
        if not self.delta >= 2.0:
            raise ValueError(f"delta must be >= 2, got {self.delta}")
        if not 0.0 <= self.alpha < 2.0:
            raise ValueError(f"alpha must lie in [0, 2), got {self.alpha}")
        if not self.c_b > 0.0:
            raise ValueError(f"c_b must be positive, got {self.c_b}")
        if not self.beta > 7.0:
            raise ValueError(f"beta must exceed 7, got {self.beta}")

    @property
    def i_exponent(self) -> float:
        """Power of I in the equilibrium density, delta/2 - 1."""
        return 0.5 * self.delta - 1.0

    @property
    def b_exponent(self) -> float:
        return 0.5 * (2.0 - self.alpha)


class MicroState(NamedTuple):
    v: np.ndarray
    i_energy: np.ndarray

    @classmethod
    def make(cls, v, i_energy) -> "MicroState":
        v = np.asarray(v, dtype=float)
        i_energy = np.asarray(i_energy, dtype=float)
        if v.shape[-1:] != (3,):
            raise ValueError("velocity must have a trailing axis of length 3")
        if np.any(i_energy < 0):
            raise ValueError("internal energy must be nonnegative")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(i_energy))):
            raise ValueError("state components must be finite")
        return cls(v, i_energy)

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.v, axis=-1)


class PairState(NamedTuple):
    a: MicroState
    b: MicroState


def _sq(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.einsum("...k,...k->...", v, v)


def log_norm(params: GasParams) -> float:
    """log of (2 pi)^{3/2} Gamma(delta/2)."""
    return 1.5 * LOG_2PI + float(gammaln(0.5 * params.delta))


def reduced_maxwellian(params: GasParams, s: MicroState) -> np.ndarray:
    """Equilibrium density with the I^{delta/2-1} factor removed.

    Products of this quantity over a colliding pair are invariant under
    the collision because they only depend on the pair's total energy.
    """
    return np.exp(-0.5 * _sq(s.v) - np.asarray(s.i_energy, dtype=float) - log_norm(params))


def maxwellian(params: GasParams, s: MicroState) -> np.ndarray:
    """Normalized equilibrium I^{d/2-1} exp(-|v|^2/2 - I) / ((2 pi)^{3/2} Gamma(d/2))."""
    i = np.asarray(s.i_energy, dtype=float)
    a = params.i_exponent
    if a == 0.0:
        power = np.ones_like(i)
    else:
        power = np.power(i, a)
    return power * reduced_maxwellian(params, s)


def maxwellian_temperature(params: GasParams, s: MicroState, temperature: float = 1.0) -> np.ndarray:
    """Equilibrium at temperature T: Gaussian of variance T times Gamma(delta/2, scale T)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    i = np.asarray(s.i_energy, dtype=float)
    a = params.i_exponent
    t = float(temperature)
    log_c = 1.5 * (LOG_2PI + math.log(t)) + float(gammaln(0.5 * params.delta)) + 0.5 * params.delta * math.log(t)
    power = np.ones_like(i) if a == 0.0 else np.power(i, a)
    return power * np.exp(-0.5 * _sq(s.v) / t - i / t - log_c)


def weight(params: GasParams, s: MicroState) -> np.ndarray:
    """Polynomial weight (1 + |v| + sqrt(I))^beta."""
    base = 1.0 + np.sqrt(_sq(s.v)) + np.sqrt(np.asarray(s.i_energy, dtype=float))
    return base**params.beta


def total_energy(p: PairState) -> np.ndarray:
    """Pair energy in the centre-of-mass frame, |v - v*|^2/4 + I + I*."""
    u = np.asarray(p.a.v, dtype=float) - np.asarray(p.b.v, dtype=float)
    return 0.25 * _sq(u) + np.asarray(p.a.i_energy, dtype=float) + np.asarray(p.b.i_energy, dtype=float)


def transition_b(params: GasParams, p: PairState) -> np.ndarray:
    """C (|v - v*|^2/4 + I + I*)^{(2 - alpha)/2}."""
    return params.c_b * total_energy(p) ** params.b_exponent
