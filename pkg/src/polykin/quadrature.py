"""Grids and Monte-Carlo integration over (v, I) in R^3 x R_+.

Velocity axes use the composite trapezoid rule on uniform nodes, which is
spectrally accurate for Gaussian-decaying integrands.  The internal-energy
axis uses Gauss-Legendre nodes in t mapped through I = i_max t^2, so nodes
cluster near I = 0 where I^{d/2-1} is not smooth.

With the default truncation (|v_k| <= 12, I <= 40) the neglected
equilibrium tail is below 1e-17; polynomially weighted equilibrium
integrands lose no more than ~1e-15 relative.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .core import MicroState


class NonFiniteSampleError(FloatingPointError):
    """A Monte-Carlo integrand returned NaN or inf."""


def worker_count() -> int:
    """Worker cap from POLYKIN_THREADS (0 or unset means all cores)."""
    raw = os.environ.get("POLYKIN_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True)
class PhaseGrid:
    v_max: float = 12.0
    i_max: float = 40.0
    n_v: int = 48
    n_i: int = 64

    def __post_init__(self):
        if self.v_max <= 0 or self.i_max <= 0:
            raise ValueError("truncation radii must be positive")
        if self.n_v < 8 or self.n_i < 8:
            raise ValueError("need at least 8 nodes per axis")

    @cached_property
    def v_nodes(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.n_v)

    @cached_property
    def v_weights(self) -> np.ndarray:
        h = 2.0 * self.v_max / (self.n_v - 1)
        w = np.full(self.n_v, h)
        w[0] = w[-1] = 0.5 * h
        return w

    @cached_property
    def _i_rule(self):
        t, wt = np.polynomial.legendre.leggauss(self.n_i)
        t = 0.5 * (t + 1.0)
        wt = 0.5 * wt
        return self.i_max * t * t, wt * 2.0 * self.i_max * t

    @property
    def i_nodes(self) -> np.ndarray:
        return self._i_rule[0]

    @property
    def i_weights(self) -> np.ndarray:
        return self._i_rule[1]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n_v, self.n_v, self.n_v, self.n_i)

    @cached_property
    def v_mesh(self) -> np.ndarray:
        """Velocities with shape (n_v, n_v, n_v, 1, 3), broadcastable against i_mesh."""
        x = self.v_nodes
        mesh = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
        return mesh[:, :, :, None, :]

    @property
    def i_mesh(self) -> np.ndarray:
        return self.i_nodes.reshape(1, 1, 1, -1)

    def states(self) -> MicroState:
        return MicroState(self.v_mesh, self.i_mesh)

    def sum_weighted(self, values: np.ndarray) -> float:
        """Quadrature sum of an array of grid shape (or broadcastable to it)."""
        values = np.broadcast_to(values, self.shape)
        wv = self.v_weights
        out = np.tensordot(values, self.i_weights, axes=([3], [0]))
        out = np.tensordot(out, wv, axes=([2], [0]))
        out = np.tensordot(out, wv, axes=([1], [0]))
        return float(np.dot(out, wv))


@dataclass
class GridFunction:
    """Values on a PhaseGrid, optionally backed by an exact evaluator.

    Off-node evaluation uses ``func`` when given, otherwise multilinear
    interpolation.  Either way the function is zero outside the
    truncation box.
    """

    grid: PhaseGrid
    values: np.ndarray
    func: Callable[[MicroState], np.ndarray] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def from_callable(cls, grid: PhaseGrid, func, exact: bool = True) -> "GridFunction":
        values = np.array(np.broadcast_to(func(grid.states()), grid.shape), dtype=float)
        return cls(grid, values, func if exact else None)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __call__(self, s: MicroState) -> np.ndarray:
        v = np.asarray(s.v, dtype=float)
        i = np.asarray(s.i_energy, dtype=float)
        g = self.grid
        inside = np.all(np.abs(v) <= g.v_max, axis=-1) & (i >= 0) & (i <= g.i_max)
        if self.func is not None:
            out = np.asarray(self.func(MicroState(v, i)), dtype=float)
            return np.where(inside, out, 0.0)
        return np.where(inside, self._interpolate(v, i), 0.0)

    def _interpolate(self, v: np.ndarray, i: np.ndarray) -> np.ndarray:
        g = self.grid
        shape = np.broadcast_shapes(v.shape[:-1], i.shape)
        v = np.broadcast_to(v, shape + (3,)).reshape(-1, 3)
        i = np.broadcast_to(i, shape).reshape(-1)
        h = 2.0 * g.v_max / (g.n_v - 1)
        pos = np.clip((v + g.v_max) / h, 0.0, g.n_v - 1)
        lo = np.minimum(pos.astype(np.int64), g.n_v - 2)
        frac = pos - lo
        nodes = g.i_nodes
        ic = np.clip(i, nodes[0], nodes[-1])
        ilo = np.clip(np.searchsorted(nodes, ic, side="right") - 1, 0, g.n_i - 2)
        ifrac = (ic - nodes[ilo]) / (nodes[ilo + 1] - nodes[ilo])
        out = np.zeros(ilo.shape)
        for dx in (0, 1):
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            for dy in (0, 1):
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                for dz in (0, 1):
                    wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                    for di in (0, 1):
                        wi = ifrac if di else 1.0 - ifrac
                        out += wx * wy * wz * wi * self.values[lo[:, 0] + dx, lo[:, 1] + dy, lo[:, 2] + dz, ilo + di]
        return out.reshape(shape)


def integrate(g: GridFunction) -> float:
    """Quadrature of g over the truncated domain."""
    return g.grid.sum_weighted(g.values)


class McEstimate(NamedTuple):
    mean: float | np.ndarray
    std_error: float | np.ndarray
    n_samples: int

    def __add__(self, other):
        if isinstance(other, McEstimate):
            return McEstimate(self.mean + other.mean, np.hypot(self.std_error, other.std_error), min(self.n_samples, other.n_samples))
        return McEstimate(self.mean + other, self.std_error, self.n_samples)

    def scale(self, factor) -> "McEstimate":
        return McEstimate(self.mean * factor, self.std_error * abs(factor), self.n_samples)


@dataclass(frozen=True)
class HeavyTailMixture:
    """0.9 N(0,1)^3 x Exp(1) + 0.1 N(0,9)^3 x Exp(mean 5) over (v, I)."""

    heavy_fraction: float = 0.1
    heavy_v_scale: float = 3.0
    heavy_i_mean: float = 5.0

    def sample(self, rng: np.random.Generator, n: int) -> MicroState:
        pick = rng.random(n) < self.heavy_fraction
        v = rng.standard_normal((n, 3))
        i = rng.standard_exponential(n)
        v[pick] *= self.heavy_v_scale
        i[pick] *= self.heavy_i_mean
        return MicroState(v, i)

    def pdf(self, s: MicroState) -> np.ndarray:
        v2 = np.einsum("...k,...k->...", s.v, s.v)
        i = np.asarray(s.i_energy, dtype=float)
        sv, mi = self.heavy_v_scale, self.heavy_i_mean
        light = np.exp(-0.5 * v2 - i) / (2.0 * math.pi) ** 1.5
        heavy = np.exp(-0.5 * v2 / sv**2 - i / mi) / ((2.0 * math.pi * sv**2) ** 1.5 * mi)
        return (1.0 - self.heavy_fraction) * light + self.heavy_fraction * heavy


@dataclass(frozen=True)
class McConfig:
    n_samples: int = 200_000
    seed: int = 0
    proposal: HeavyTailMixture = field(default_factory=HeavyTailMixture)
    shard_size: int = 1 << 16


def _shard_stats(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise NonFiniteSampleError("Monte-Carlo sample is not finite; the proposal may not cover the integrand")
    n = values.shape[0]
    mean = values.mean(axis=0)
    m2 = ((values - mean) ** 2).sum(axis=0)
    return n, mean, m2


def mc_estimate(draw: Callable[[np.random.Generator, int], np.ndarray], n: int, seed: int, shard_size: int = 1 << 16) -> McEstimate:
    """Average ``draw`` over n samples split into seeded shards.

    Shard k uses the generator seeded by (seed, k); shard sizes depend on
    n only, and partial statistics are merged in shard order, so the
    result does not depend on how many workers run the shards.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    sizes = [min(shard_size, n - k) for k in range(0, n, shard_size)]

    def run(k: int):
        rng = np.random.default_rng([seed, k])
        return _shard_stats(np.asarray(draw(rng, sizes[k]), dtype=float))

    workers = min(worker_count(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]
    count, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        tot = count + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta**2 * (count * nb / tot)
        count = tot
    var = m2 / (count - 1) if count > 1 else np.zeros_like(m2)
    std = np.sqrt(var / count)
    if np.ndim(mean) == 0:
        return McEstimate(float(mean), float(std), count)
    return McEstimate(mean, std, count)


def mc_integrate(integrand: Callable[[MicroState], np.ndarray], proposal=None, n: int = 200_000, seed: int = 0) -> McEstimate:
    """Importance-sampled integral of ``integrand`` over (v, I)."""
    proposal = proposal or HeavyTailMixture()

    def draw(rng, size):
        s = proposal.sample(rng, size)
        return np.asarray(integrand(s), dtype=float) / proposal.pdf(s)

    return mc_estimate(draw, n, seed)
