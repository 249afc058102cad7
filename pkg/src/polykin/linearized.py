"""Pieces of the linearized operator L f = nu f - K f with K = K_2 - K_1.

K_1 has the closed kernel k_1 = c_delta B sqrt(M M*).  K_2 is only ever
applied to test functions through the collision parameterization; it is
never tabulated pointwise.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._gain import collide_with_point, ipow, sqrt_reduced
from .collision import collision_rate_factor
from .core import GasParams, MicroState, PairState, maxwellian, transition_b, weight
from .functionals import DEFAULT_GRID, _point, b_against_grid, maxwellian_on_grid
from .quadrature import GridFunction, McConfig, McEstimate, PhaseGrid, mc_estimate


class ProbeRow(NamedTuple):
    state: MicroState
    value: float
    std_error: float


def kernel_k1(params: GasParams, s: MicroState, s_star: MicroState) -> np.ndarray:
    """k_1(s, s*) = c_delta B(s, s*) sqrt(M(s) M(s*))."""
    pair = PairState(s, s_star)
    return collision_rate_factor(params) * transition_b(params, pair) * np.sqrt(maxwellian(params, s) * maxwellian(params, s_star))


def apply_k1(params: GasParams, phi: GridFunction, s: MicroState) -> float:
    """(K_1 phi)(s) by quadrature on phi's grid."""
    s = _point(s)
    grid = phi.grid
    c = collision_rate_factor(params)
    sm = np.sqrt(maxwellian_on_grid(params, grid))
    ms = float(np.sqrt(maxwellian(params, s)))
    return c * ms * grid.sum_weighted(b_against_grid(params, s, grid) * sm * phi.values)


def apply_k2(params: GasParams, phi: GridFunction, s: MicroState, mc: McConfig | None = None) -> McEstimate:
    """Monte-Carlo estimate of (K_2 phi)(s).

    K_2 phi = 1/sqrt(M) int B [M' sqrt(M'*) phi'* + M'* sqrt(M') phi']
              (I I*)^a / (I' I'*)^a  mu  d omega dR dr ds*.
    """
    mc = mc or McConfig()
    s = _point(s)
    a = params.i_exponent
    pre = float(ipow(s.i_energy, 0.5 * a))

    def draw(rng, size):
        partner, post, w = collide_with_point(params, s, rng, size, mc.proposal)
        common = w * pre * ipow(partner.i_energy, a) * sqrt_reduced(params, partner)
        first = ipow(post.b.i_energy, -0.5 * a) * sqrt_reduced(params, post.a) * phi(post.b)
        second = ipow(post.a.i_energy, -0.5 * a) * sqrt_reduced(params, post.b) * phi(post.a)
        return common * (first + second)

    return mc_estimate(draw, mc.n_samples, mc.seed, mc.shard_size)


def _state_seed(seed, k: int):
    return (*np.atleast_1d(seed).tolist(), k)


def kernel_bound_probe(
    params: GasParams,
    eps: float,
    m: float,
    scan: list[MicroState],
    mc: McConfig | None = None,
    grid: PhaseGrid | None = None,
) -> list[ProbeRow]:
    """(1 + |v| + I^{1/4}) * int (k_1 + k_2)(s, .) w(s)/w(.) e^{eps|v-v*|^2} (1+I*)^m per scan state.

    Computed as (K_1 + K_2) applied to the state-dependent test function;
    valid because both kernels are nonnegative.  K_1 uses the
    axisymmetric rule, K_2 Monte Carlo with the exact test function.
    """
    if not 0.0 <= eps <= 1.0 / 64.0:
        raise ValueError("eps must lie in [0, 1/64]")
    if not 0.0 <= m <= 0.125:
        raise ValueError("m must lie in [0, 1/8]")
    mc = mc or McConfig()
    grid = grid or DEFAULT_GRID
    rows = []
    for k, s in enumerate(scan):
        s = _point(s)
        ws = float(weight(params, s))

        def test_fn(t, s=s, ws=ws):
            d = np.asarray(t.v) - s.v
            return np.exp(eps * np.einsum("...k,...k->...", d, d)) * (1.0 + np.asarray(t.i_energy)) ** m * ws / weight(params, t)

        phi = GridFunction.from_callable(grid, test_fn)
        v, partner, vol = _axisymmetric_rule(grid, float(np.linalg.norm(s.v)))
        k1 = float(np.sum(kernel_k1(params, MicroState(v, s.i_energy), partner) * test_fn(partner, MicroState(v, s.i_energy)) * vol))
        k2 = apply_k2(params, phi, s, McConfig(mc.n_samples, _state_seed(mc.seed, k), mc.proposal, mc.shard_size))
        factor = 1.0 + float(np.linalg.norm(s.v)) + float(s.i_energy) ** 0.25
        rows.append(ProbeRow(s, factor * (k1 + k2.mean), factor * k2.std_error))
    return rows


def _axisymmetric_rule(grid: PhaseGrid, speed: float, n_r: int = 128, n_mu: int = 48):
    """Nodes and weights for integrals over s* that depend on v* only via |v*| and |v - v*|.

    Returns the point (|v|, 0, 0) with partners in spherical coordinates
    about that axis: Gauss-Legendre in |v*| on [0, v_max] and in the polar
    cosine, the grid's rule in I*.  Used where the weight ratio w(s)/w(s*)
    puts a cusp at v* = 0 that a Cartesian grid does not resolve.
    """
    x, wx = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * grid.v_max * (x + 1.0)
    wr = 0.5 * grid.v_max * wx
    mu, wmu = np.polynomial.legendre.leggauss(n_mu)
    rr, mm, ii = np.meshgrid(r, mu, grid.i_nodes, indexing="ij")
    sin = np.sqrt(np.clip(1.0 - mm * mm, 0.0, None))
    partner = MicroState(np.stack([rr * mm, rr * sin, np.zeros_like(rr)], axis=-1), ii)
    vol = 2.0 * np.pi * (wr * r * r)[:, None, None] * wmu[None, :, None] * grid.i_weights[None, None, :]
    return np.array([speed, 0.0, 0.0]), partner, vol


def k1_l2_scan(params: GasParams, scan: list[MicroState], grid: PhaseGrid | None = None) -> list[ProbeRow]:
    """int |k_1(s, .) w(s)/w(.)|^2 per scan state (deterministic)."""
    grid = grid or DEFAULT_GRID
    rows = []
    for s in scan:
        s = _point(s)
        v, partner, vol = _axisymmetric_rule(grid, float(np.linalg.norm(s.v)))
        k = kernel_k1(params, MicroState(v, s.i_energy), partner) * float(weight(params, s)) / weight(params, partner)
        rows.append(ProbeRow(s, float(np.sum(k * k * vol)), 0.0))
    return rows
