"""Scalar functionals of distributions on a PhaseGrid.

Every value is the quadrature over the truncation box of the grid; see
``polykin.quadrature`` for the size of the neglected tail.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .collision import collision_rate_factor
from .core import GasParams, MicroState, PairState, maxwellian, transition_b, weight
from .quadrature import GridFunction, McConfig, McEstimate, PhaseGrid, mc_integrate

DEFAULT_GRID = PhaseGrid()


@dataclass(frozen=True)
class MomentVector:
    mass: float
    momentum: np.ndarray
    energy: float


@lru_cache(maxsize=8)
def maxwellian_on_grid(params: GasParams, grid: PhaseGrid) -> np.ndarray:
    out = np.broadcast_to(maxwellian(params, grid.states()), grid.shape).copy()
    out.flags.writeable = False
    return out


def _point(s: MicroState) -> MicroState:
    v = np.asarray(s.v, dtype=float)
    if v.shape != (3,):
        raise ValueError("expected a single phase point")
    return MicroState(v, float(s.i_energy))


def b_against_grid(params: GasParams, s: MicroState, grid: PhaseGrid) -> np.ndarray:
    """Transition function between the point s and every grid node."""
    return transition_b(params, PairState(_point(s), grid.states()))


def collision_frequency(params: GasParams, s: MicroState, integrator: PhaseGrid | McConfig | None = None):
    """nu(v, I) = c_delta * int B(v, v*, I, I*) M(v*, I*) dv* dI*.

    With a PhaseGrid (default) returns a float; with an McConfig returns
    an McEstimate.
    """
    integrator = integrator or DEFAULT_GRID
    c_delta = collision_rate_factor(params)
    s = _point(s)
    if isinstance(integrator, McConfig):
        est = mc_integrate(
            lambda t: transition_b(params, PairState(s, t)) * maxwellian(params, t),
            integrator.proposal,
            integrator.n_samples,
            integrator.seed,
        )
        return est.scale(c_delta)
    m = maxwellian_on_grid(params, integrator)
    return c_delta * integrator.sum_weighted(b_against_grid(params, s, integrator) * m)


def nu_equivalence_ratio(params: GasParams, s: MicroState, integrator: PhaseGrid | None = None) -> float:
    """nu(v, I) / (1 + |v| + sqrt(I))^{2 - alpha}."""
    s = _point(s)
    base = 1.0 + np.linalg.norm(s.v) + np.sqrt(s.i_energy)
    return collision_frequency(params, s, integrator) / base ** (2.0 - params.alpha)


def moments(F: GridFunction, params: GasParams) -> MomentVector:
    """Mass, momentum and energy of F - M."""
    grid = F.grid
    diff = F.values - maxwellian_on_grid(params, grid)
    v = grid.v_mesh
    mass = grid.sum_weighted(diff)
    momentum = np.array([grid.sum_weighted(diff * v[..., k]) for k in range(3)])
    e = 0.5 * np.einsum("...k,...k->...", v, v) + grid.i_mesh
    return MomentVector(mass, momentum, grid.sum_weighted(diff * e))


def psi(x) -> np.ndarray:
    """x ln x - x + 1, with psi(0) = 1, evaluated without cancellation near x = 1."""
    x = np.asarray(x, dtype=float)
    y = x - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        # log1p only near 1: for tiny x, x - 1 rounds to -1 exactly
        log_x = np.where(np.abs(y) < 0.5, np.log1p(y), np.log(x))
        val = x * log_x - y
    return np.where(x > 0, val, 1.0)


def _ratio_terms(F: GridFunction, params: GasParams):
    m = maxwellian_on_grid(params, F.grid)
    if np.any(F.values < 0):
        raise ValueError("F must be nonnegative")
    return F.values, m


def relative_entropy(F: GridFunction, params: GasParams) -> float:
    """int psi(F/M) M dv dI; nonnegative."""
    f, m = _ratio_terms(F, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(m > 0, psi(f / m) * m, np.where(f > 0, np.inf, 0.0))
    return F.grid.sum_weighted(dens)


def entropy_split_lhs(F: GridFunction, params: GasParams) -> float:
    """int |F-M|^2/(4M) on {|F-M| <= M} plus int |F-M|/4 on the complement."""
    f, m = _ratio_terms(F, params)
    d = np.abs(f - m)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(d <= m, np.where(m > 0, d * d / (4.0 * m), 0.0), 0.25 * d)
    return F.grid.sum_weighted(dens)


def weighted_sup_norm(f: GridFunction, params: GasParams) -> float:
    """max over nodes of |w f|."""
    w = weight(params, f.grid.states())
    return float(np.max(np.abs(w * f.values)))


def h_functional(F: GridFunction) -> float:
    """Boltzmann H, int F ln F, with 0 ln 0 = 0."""
    f = F.values
    if np.any(f < 0):
        raise ValueError("F must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(f > 0, f * np.log(f), 0.0)
    return F.grid.sum_weighted(dens)


__all__ = [
    "MomentVector",
    "McEstimate",
    "collision_frequency",
    "nu_equivalence_ratio",
    "moments",
    "psi",
    "relative_entropy",
    "entropy_split_lhs",
    "weighted_sup_norm",
    "h_functional",
    "maxwellian_on_grid",
]
