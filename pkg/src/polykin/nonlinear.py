"""Nonlinear collision terms and probes of their pointwise bounds.

Gamma_+/- (f, f) = Q_+/-(sqrt(M) f, sqrt(M) f) / sqrt(M).  The gain part is
estimated by Monte Carlo through the collision parameterization, the loss
part and R(f) by quadrature.  Probes report empirical constants; none of
the bounds they exercise come with explicit constants.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._gain import collide_with_point, ipow, sqrt_reduced
from .collision import apply_collision, collision_rate_factor, sample_angles
from .core import GasParams, MicroState, PairState, maxwellian, transition_b, weight
from .functionals import DEFAULT_GRID, _point, b_against_grid, collision_frequency, maxwellian_on_grid, weighted_sup_norm
from .linearized import ProbeRow, _state_seed
from .quadrature import GridFunction, McConfig, McEstimate, PhaseGrid, mc_estimate


def apply_gamma_plus(params: GasParams, f: GridFunction, s: MicroState, mc: McConfig | None = None) -> McEstimate:
    """Monte-Carlo estimate of Gamma_+(f, f)(s)."""
    mc = mc or McConfig()
    s = _point(s)
    a = params.i_exponent
    pre = float(ipow(s.i_energy, 0.5 * a))

    def draw(rng, size):
        partner, post, w = collide_with_point(params, s, rng, size, mc.proposal)
        jac = ipow(post.a.i_energy * post.b.i_energy, -0.5 * a) * ipow(partner.i_energy, a)
        return w * pre * jac * sqrt_reduced(params, partner) * f(post.a) * f(post.b)

    return mc_estimate(draw, mc.n_samples, mc.seed, mc.shard_size)


def _loss_integral(params: GasParams, f: GridFunction, s: MicroState) -> float:
    """c_delta int B(s, .) sqrt(M) f over f's grid."""
    grid = f.grid
    sm = np.sqrt(maxwellian_on_grid(params, grid))
    return collision_rate_factor(params) * grid.sum_weighted(b_against_grid(params, s, grid) * sm * f.values)


def apply_gamma_minus(params: GasParams, f: GridFunction, s: MicroState) -> float:
    """Gamma_-(f, f)(s) = f(s) c_delta int B sqrt(M*) f* (quadrature)."""
    s = _point(s)
    fs = float(f(s))
    if fs == 0.0:
        return 0.0
    return fs * _loss_integral(params, f, s)


def r_operator(params: GasParams, f: GridFunction, s: MicroState) -> float:
    """R(f)(s) = nu(s) + c_delta int B sqrt(M*) f*."""
    s = _point(s)
    return collision_frequency(params, s, f.grid) + _loss_integral(params, f, s)


@dataclass
class RatioProbe:
    rows: list[ProbeRow]

    @property
    def sup(self) -> float:
        return max(r.value for r in self.rows)

    @property
    def argmax(self) -> int:
        return int(np.argmax([r.value for r in self.rows]))


def _norm_factors(params: GasParams, f: GridFunction) -> tuple[float, float]:
    grid = f.grid
    states = grid.states()
    wf = weight(params, states) * f.values
    base = 1.0 + np.linalg.norm(grid.v_mesh, axis=-1) + np.sqrt(grid.i_mesh)
    l2 = grid.sum_weighted(base ** (8.0 - 2.0 * params.beta) * wf * wf)
    return weighted_sup_norm(f, params), float(np.sqrt(l2))


def gain_estimate_ratio(params: GasParams, f: GridFunction, scan: list[MicroState], mc: McConfig | None = None) -> RatioProbe:
    """|w Gamma_+(f,f)| (1 + |v| + I^{1/4}) / (||w f||_inf ||(1+|v|+sqrt I)^{4-beta} w f||_2) per scan state."""
    mc = mc or McConfig()
    sup_norm, l2 = _norm_factors(params, f)
    denom = sup_norm * l2
    if not denom > 0:
        raise ZeroDivisionError("norm factors of f vanish")
    rows = []
    for k, s in enumerate(scan):
        s = _point(s)
        est = apply_gamma_plus(params, f, s, McConfig(mc.n_samples, _state_seed(mc.seed, k), mc.proposal, mc.shard_size))
        factor = float(weight(params, s)) * (1.0 + float(np.linalg.norm(s.v)) + float(s.i_energy) ** 0.25) / denom
        rows.append(ProbeRow(s, abs(est.mean) * factor, est.std_error * factor))
    return RatioProbe(rows)


def nonlinear_nu_ratio(params: GasParams, f: GridFunction, scan: list[MicroState], mc: McConfig | None = None) -> RatioProbe:
    """|w (Gamma_+ - Gamma_-)(f,f)| / (nu ||w f||_inf^2) per scan state."""
    mc = mc or McConfig()
    sup_norm = weighted_sup_norm(f, params)
    if not sup_norm > 0:
        raise ZeroDivisionError("||w f||_inf vanishes")
    rows = []
    for k, s in enumerate(scan):
        s = _point(s)
        gain = apply_gamma_plus(params, f, s, McConfig(mc.n_samples, _state_seed(mc.seed, k), mc.proposal, mc.shard_size))
        loss = apply_gamma_minus(params, f, s)
        factor = float(weight(params, s)) / (collision_frequency(params, s, f.grid) * sup_norm**2)
        rows.append(ProbeRow(s, abs(gain.mean - loss) * factor, gain.std_error * factor))
    return RatioProbe(rows)


def collision_invariant_residual(params: GasParams, f: GridFunction, mc: McConfig | None = None) -> McEstimate:
    """Monte-Carlo estimate of int Q(F, F) (1, v, |v|^2/2 + I) for F = M + sqrt(M) f.

    Both members of each sampled pair are drawn from the proposal and the
    strong-form integrand is symmetrized over the pair.  With
    F = I^a G the gain/loss difference is (I I*)^a (G' G'* - G G*).
    Returns a 5-vector estimate (mass, momentum, energy).
    """
    mc = mc or McConfig()
    a = params.i_exponent
    c = collision_rate_factor(params)

    def reduced(s: MicroState) -> np.ndarray:
        # F / I^a
        sm = sqrt_reduced(params, s)
        return sm * sm + ipow(s.i_energy, -0.5 * a) * sm * f(s)

    def invariants(s: MicroState) -> np.ndarray:
        v = np.asarray(s.v)
        e = 0.5 * np.einsum("...k,...k->...", v, v) + s.i_energy
        return np.column_stack([np.ones_like(e), v, e])

    def draw(rng, size):
        one = mc.proposal.sample(rng, size)
        two = mc.proposal.sample(rng, size)
        pair = PairState(one, two)
        post = apply_collision(pair, sample_angles(params, rng, size))
        rate = c * transition_b(params, pair) / (mc.proposal.pdf(one) * mc.proposal.pdf(two))
        diff = ipow(one.i_energy * two.i_energy, a) * (reduced(post.a) * reduced(post.b) - reduced(one) * reduced(two))
        sym = 0.5 * (invariants(one) + invariants(two))
        return (rate * diff)[:, None] * sym

    return mc_estimate(draw, mc.n_samples, mc.seed, mc.shard_size)
