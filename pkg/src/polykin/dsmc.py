"""DSMC on the unit 3-torus with Borgnakke-Larsen collisions.

Each step advects particles freely and then collides pairs cell by cell
with the no-time-counter scheme: a cell with N particles draws

    ceil(N (N - 1) W_p c_delta B_maj dt / (2 V_cell))

candidate pairs and accepts each with probability B / B_maj, where B_maj
is a running per-cell majorant of the transition function.  Random
numbers for cell c at step k come from a generator keyed by
(seed, k, c) in a fixed order independent of scheduling, so results do not
depend on how many threads process the cells.

The weighted sup-norm that measures relaxation in the continuum theory is
not observable from particles; the internal/kinetic energy partition and
the first Fourier mode of the density stand in for it.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numba
import numpy as np

from .collision import collision_rate_factor
from .core import GasParams
from .quadrature import worker_count

CSV_HEADER = [
    "t",
    "kinetic_mean",
    "internal_mean",
    "px",
    "py",
    "pz",
    "energy_total",
    "h_estimate",
    "mode_amplitude",
    "collisions_accepted",
]

MAJORANT_INFLATION = 1.5
MIN_PER_CELL = 50


@dataclass(frozen=True)
class InitialCondition:
    """Initial law: ``equilibrium``, ``two_temperature`` or ``spatial_mode``."""

    kind: str = "equilibrium"
    temperature: float = 1.0
    t_kin: float = 1.0
    t_int: float = 1.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("equilibrium", "two_temperature", "spatial_mode"):
            raise ValueError(f"unknown initial condition {self.kind!r}")
        if min(self.temperature, self.t_kin, self.t_int) <= 0:
            raise ValueError("temperatures must be positive")
        if not abs(self.amplitude) < 1:
            raise ValueError("mode amplitude must satisfy |A| < 1")

    @classmethod
    def equilibrium(cls, temperature: float = 1.0) -> "InitialCondition":
        return cls("equilibrium", temperature=temperature)

    @classmethod
    def two_temperature(cls, t_kin: float, t_int: float) -> "InitialCondition":
        return cls("two_temperature", t_kin=t_kin, t_int=t_int)

    @classmethod
    def spatial_mode(cls, amplitude: float, temperature: float = 1.0) -> "InitialCondition":
        return cls("spatial_mode", temperature=temperature, amplitude=amplitude)

    @property
    def temperatures(self) -> tuple[float, float]:
        if self.kind == "two_temperature":
            return self.t_kin, self.t_int
        return self.temperature, self.temperature


@dataclass(frozen=True)
class SimConfig:
    params: GasParams = field(default_factory=GasParams)
    n_particles: int = 100_000
    n_cells: int = 1
    dt: float | None = None
    t_end: float = 1.0
    seed: int = 0
    init: InitialCondition = field(default_factory=InitialCondition)
    diag_every: int = 1

    def __post_init__(self):
        if self.n_particles < 1000:
            raise ValueError("n_particles must be at least 1000")
        if self.n_cells < 1:
            raise ValueError("n_cells must be at least 1")
        if self.n_particles < MIN_PER_CELL * self.n_cells**3:
            raise ValueError(f"fewer than {MIN_PER_CELL} particles per cell")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt is not None and self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        if self.diag_every < 1:
            raise ValueError("diag_every must be at least 1")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("params", "init")}
        out["params"] = {f.name: getattr(self.params, f.name) for f in fields(self.params)}
        out["init"] = {f.name: getattr(self.init, f.name) for f in fields(self.init)}
        return out


class DiagnosticsRow(NamedTuple):
    t: float
    kinetic_mean: float
    internal_mean: float
    momentum: np.ndarray
    energy_total: float
    h_estimate: float
    mode_amplitude: float
    collisions_accepted: int

    def csv_fields(self) -> list[str]:
        vals = [self.t, self.kinetic_mean, self.internal_mean, *self.momentum, self.energy_total, self.h_estimate, self.mode_amplitude]
        return [f"{float(x):.12g}" for x in vals] + [str(int(self.collisions_accepted))]


@dataclass
class Ensemble:
    x: np.ndarray
    v: np.ndarray
    i_energy: np.ndarray
    n_cells: int = 1
    b_major: np.ndarray | None = None
    t: float = 0.0
    clamps: int = 0

    def __len__(self) -> int:
        return self.i_energy.shape[0]

    @property
    def particle_weight(self) -> float:
        return 1.0 / len(self)

    def cell_ids(self) -> np.ndarray:
        n = self.n_cells
        idx = np.minimum((self.x * n).astype(np.int64), n - 1)
        return (idx[:, 0] * n + idx[:, 1]) * n + idx[:, 2]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _sample_positions(rng: np.random.Generator, n: int, amplitude: float) -> np.ndarray:
    x = rng.random((n, 3))
    if amplitude == 0.0:
        return x
    # rejection on x_1 from density 1 + A cos(2 pi x_1)
    first = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.random(2 * (n - filled))
        keep = rng.random(cand.size) * (1.0 + abs(amplitude)) < 1.0 + amplitude * np.cos(2.0 * np.pi * cand)
        take = cand[keep][: n - filled]
        first[filled : filled + take.size] = take
        filled += take.size
    x[:, 0] = first
    return x


def init_ensemble(cfg: SimConfig) -> Ensemble:
    """Sample particles from the configured initial law."""
    rng = _rng(cfg.seed, 0)
    n = cfg.n_particles
    t_kin, t_int = cfg.init.temperatures
    x = _sample_positions(rng, n, cfg.init.amplitude if cfg.init.kind == "spatial_mode" else 0.0)
    v = rng.normal(0.0, math.sqrt(t_kin), (n, 3))
    i_energy = rng.gamma(0.5 * cfg.params.delta, t_int, n)
    ens = Ensemble(x, v, i_energy, cfg.n_cells)
    ens.b_major = _initial_majorant(ens, cfg.params, _rng(cfg.seed, 1))
    return ens


def _pair_b(params: GasParams, v, i, p, q) -> np.ndarray:
    u = v[p] - v[q]
    e = 0.25 * np.einsum("...k,...k->...", u, u) + i[p] + i[q]
    return params.c_b * e**params.b_exponent


def _initial_majorant(ens: Ensemble, params: GasParams, rng: np.random.Generator) -> np.ndarray:
    """Per-cell max of B over a scan of pairs, inflated.

    The scan pairs a random permutation of the cell off against itself and
    takes all pairs among the 32 most energetic particles.
    """
    ids = ens.cell_ids()
    n_total = ens.n_cells**3
    out = np.zeros(n_total)
    order = np.argsort(ids, kind="stable")
    counts = np.bincount(ids, minlength=n_total)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    energy = 0.5 * np.einsum("ij,ij->i", ens.v, ens.v) + ens.i_energy
    for c in range(n_total):
        members = order[starts[c] : starts[c] + counts[c]]
        if members.size < 2:
            continue
        perm = rng.permutation(members)
        half = perm.size // 2
        best = _pair_b(params, ens.v, ens.i_energy, perm[:half], perm[half : 2 * half]).max()
        top = members[np.argsort(energy[members])[-32:]]
        p, q = np.triu_indices(top.size, 1)
        best = max(best, _pair_b(params, ens.v, ens.i_energy, top[p], top[q]).max())
        out[c] = MAJORANT_INFLATION * best
    return out


def estimate_mean_nu(ens: Ensemble, params: GasParams, seed: int) -> float:
    """c_delta times the mean of B over disjoint random pairs."""
    perm = _rng(seed, 2).permutation(len(ens))
    half = perm.size // 2
    return collision_rate_factor(params) * float(_pair_b(params, ens.v, ens.i_energy, perm[:half], perm[half : 2 * half]).mean())


def default_dt(ens: Ensemble, cfg: SimConfig) -> float:
    return 0.1 / estimate_mean_nu(ens, cfg.params, cfg.seed)


def advect(ens: Ensemble, dt: float) -> Ensemble:
    """Free transport x <- (x + v dt) mod 1."""
    if dt != 0.0:
        x = np.mod(ens.x + ens.v * dt, 1.0)
        # mod can round up to exactly 1.0
        x[x >= 1.0] = 0.0
        ens.x = x
    return ens


@numba.njit(cache=True, parallel=True)
def _collide_cells(v, ie, order, starts, counts, cells, cand_pos, cand_end, cand_off, pool_off, pool_len,
                   b_major, picks, accept_u, omega, big_r, small_r, c_b, b_exp):
    n = cells.shape[0]
    accepted = np.zeros(n, np.int64)
    clamped = np.zeros(n, np.int64)
    stop = cand_pos.copy()
    for t in numba.prange(n):
        c = cells[t]
        nc = counts[c]
        base = starts[c]
        bmax = b_major[c]
        used = 0
        k = cand_pos[t]
        while k < cand_end[t] and used < pool_len[t]:
            j = cand_off[t] + k
            k += 1
            a = min(int(picks[j, 0] * nc), nc - 1)
            b = min(int(picks[j, 1] * (nc - 1)), nc - 2)
            if b >= a:
                b += 1
            p = order[base + a]
            q = order[base + b]
            u0 = v[p, 0] - v[q, 0]
            u1 = v[p, 1] - v[q, 1]
            u2 = v[p, 2] - v[q, 2]
            energy = 0.25 * (u0 * u0 + u1 * u1 + u2 * u2) + ie[p] + ie[q]
            rate = c_b * energy**b_exp
            if rate > bmax:
                bmax = rate
                clamped[t] += 1
            elif accept_u[j] * bmax >= rate:
                continue
            g0 = 0.5 * (v[p, 0] + v[q, 0])
            g1 = 0.5 * (v[p, 1] + v[q, 1])
            g2 = 0.5 * (v[p, 2] + v[q, 2])
            i = pool_off[t] + used
            used += 1
            s = math.sqrt(big_r[i] * energy)
            v[p, 0] = g0 + s * omega[i, 0]
            v[p, 1] = g1 + s * omega[i, 1]
            v[p, 2] = g2 + s * omega[i, 2]
            v[q, 0] = g0 - s * omega[i, 0]
            v[q, 1] = g1 - s * omega[i, 1]
            v[q, 2] = g2 - s * omega[i, 2]
            internal = (1.0 - big_r[i]) * energy
            ie[p] = small_r[i] * internal
            ie[q] = (1.0 - small_r[i]) * internal
            accepted[t] += 1
        b_major[c] = bmax
        stop[t] = k
    return stop, accepted, clamped


@numba.njit(cache=True)
def compensated_sum(x):
    """Neumaier-compensated sum in index order."""
    total = 0.0
    comp = 0.0
    for k in range(x.shape[0]):
        y = x[k]
        t = total + y
        if abs(total) >= abs(y):
            comp += (total - t) + y
        else:
            comp += (y - t) + total
        total = t
    return total + comp


def _set_threads():
    n = min(worker_count(), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(max(1, n))


def candidate_counts(counts: np.ndarray, b_major: np.ndarray, n_particles: int, n_cells: int, params: GasParams, dt: float) -> np.ndarray:
    volume = 1.0 / n_cells**3
    nc = counts.astype(float)
    raw = nc * (nc - 1.0) * (1.0 / n_particles) * collision_rate_factor(params) * b_major * dt / (2.0 * volume)
    out = np.ceil(raw).astype(np.int64)
    out[counts < 2] = 0
    return out


# initial share of candidates given collision angles; the pool is topped up on exhaustion
POOL_FRACTION = 0.15


def _draw_pool(rng: np.random.Generator, k: int, delta: float):
    g = rng.standard_normal((k, 3))
    omega = g / np.linalg.norm(g, axis=1, keepdims=True)
    return omega, rng.beta(1.5, delta, k), rng.beta(0.5 * delta, 0.5 * delta, k)


def collide_step(ens: Ensemble, cfg: SimConfig, step_index: int, dt: float | None = None) -> tuple[Ensemble, int]:
    """One collision sweep over all cells; returns the accepted count.

    Per cell, the generator keyed by (seed, step, cell) first yields the
    pair picks and acceptance uniforms for every candidate, then blocks
    of collision angles consumed only by accepted candidates.
    """
    dt = cfg.dt if dt is None else dt
    params = cfg.params
    n_total = ens.n_cells**3
    ids = ens.cell_ids()
    order = np.argsort(ids, kind="stable")
    counts = np.bincount(ids, minlength=n_total).astype(np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    n_cand = candidate_counts(counts, ens.b_major, len(ens), ens.n_cells, params, dt)
    cells = np.flatnonzero(n_cand).astype(np.int64)
    if cells.size == 0:
        return ens, 0
    ends = n_cand[cells]
    cand_off = np.concatenate([[0], np.cumsum(ends)[:-1]]).astype(np.int64)
    total = int(ends.sum())
    picks = np.empty((total, 2))
    accept_u = np.empty(total)
    rngs = {}
    for t, c in enumerate(cells):
        rng = rngs[c] = _rng(cfg.seed, 3, step_index, int(c))
        lo, k = cand_off[t], ends[t]
        picks[lo : lo + k] = rng.random((k, 2))
        accept_u[lo : lo + k] = rng.random(k)
    pos = np.zeros(cells.size, np.int64)
    accepted_total = 0
    _set_threads()
    while cells.size:
        sizes = np.ceil(POOL_FRACTION * (ends - pos)).astype(np.int64) + 16
        pool_off = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        omega = np.empty((int(sizes.sum()), 3))
        big_r = np.empty(omega.shape[0])
        small_r = np.empty(omega.shape[0])
        for t, c in enumerate(cells):
            lo, k = pool_off[t], sizes[t]
            omega[lo : lo + k], big_r[lo : lo + k], small_r[lo : lo + k] = _draw_pool(rngs[c], int(k), params.delta)
        pos, accepted, clamped = _collide_cells(
            ens.v, ens.i_energy, order, starts, counts, cells, pos, ends, cand_off, pool_off, sizes,
            ens.b_major, picks, accept_u, omega, big_r, small_r, params.c_b, params.b_exponent,
        )
        accepted_total += int(accepted.sum())
        ens.clamps += int(clamped.sum())
        todo = pos < ends
        cells, pos, ends, cand_off = cells[todo], pos[todo], ends[todo], cand_off[todo]
    return ens, accepted_total


def default_bins() -> tuple[np.ndarray, np.ndarray]:
    speed = np.linspace(0.0, 10.0, 51)
    i_edges = np.concatenate([[0.0], np.geomspace(1e-3, 50.0, 48)])
    return speed, i_edges


def entropy_estimate(ens, bins=None) -> float:
    """Histogram estimate of int F ln F dv dI from particles.

    Particles are binned in (|v|, I); the density in a bin is its
    occupation fraction divided by the phase-space volume
    (4 pi/3)(s_hi^3 - s_lo^3)(I_hi - I_lo).
    """
    v = np.asarray(ens.v)
    i = np.asarray(ens.i_energy)
    n = i.shape[0]
    if n == 0:
        raise ValueError("empty ensemble")
    s_edges, i_edges = default_bins() if bins is None else bins
    counts, _, _ = np.histogram2d(np.linalg.norm(v, axis=1), i, bins=[s_edges, i_edges])
    shell = (4.0 * np.pi / 3.0) * np.diff(np.asarray(s_edges) ** 3)
    vol = shell[:, None] * np.diff(np.asarray(i_edges))[None, :]
    occupied = counts > 0
    p = counts[occupied] / n
    return float(np.sum(p * np.log(p / vol[occupied])))


def diagnostics(ens: Ensemble, accepted: int = 0, bins=None) -> DiagnosticsRow:
    n = len(ens)
    kin = 0.5 * np.einsum("ij,ij->i", ens.v, ens.v)
    momentum = np.array([compensated_sum(np.ascontiguousarray(ens.v[:, k])) / n for k in range(3)])
    mode = abs(np.mean(np.exp(2j * np.pi * ens.x[:, 0])))
    return DiagnosticsRow(
        t=ens.t,
        kinetic_mean=compensated_sum(kin) / n,
        internal_mean=compensated_sum(ens.i_energy) / n,
        momentum=momentum,
        energy_total=compensated_sum(kin + ens.i_energy) / n,
        h_estimate=entropy_estimate(ens, bins),
        mode_amplitude=float(mode),
        collisions_accepted=accepted,
    )


class Simulation:
    """Stepper holding the ensemble and the diagnostics emitted so far."""

    def __init__(self, cfg: SimConfig, bins=None):
        self.cfg = cfg
        self.bins = bins
        self.ensemble = init_ensemble(cfg)
        self.dt = cfg.dt if cfg.dt is not None else default_dt(self.ensemble, cfg)
        if cfg.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        self.n_steps = int(math.ceil(cfg.t_end / self.dt - 1e-9))
        self.step_index = 0
        self.rows: list[DiagnosticsRow] = []
        self._pending = 0

    def step(self) -> int:
        advect(self.ensemble, self.dt)
        _, accepted = collide_step(self.ensemble, self.cfg, self.step_index, self.dt)
        self.step_index += 1
        self.ensemble.t = self.step_index * self.dt
        self._pending += accepted
        return accepted

    def record(self) -> DiagnosticsRow:
        row = diagnostics(self.ensemble, self._pending, self.bins)
        self._pending = 0
        self.rows.append(row)
        return row

    def run(self, sink=None) -> list[DiagnosticsRow]:
        """Step to t_end, recording every ``diag_every`` steps and at the end.

        ``sink`` receives each row as it is produced, so partial output
        survives a failure part-way through.
        """
        emit = sink or (lambda row: None)
        if self.step_index == 0:
            emit(self.record())
        while self.step_index < self.n_steps:
            self.step()
            if self.step_index % self.cfg.diag_every == 0 or self.step_index == self.n_steps:
                emit(self.record())
        return self.rows


def run(cfg: SimConfig, csv_path: str | os.PathLike | None = None) -> list[DiagnosticsRow]:
    """Run a simulation; optionally stream diagnostics to CSV."""
    sim = Simulation(cfg)
    if csv_path is None:
        return sim.run()
    with open(csv_path, "w", newline="") as fh:
        writer = DiagnosticsWriter(fh)
        return sim.run(writer.write)


class DiagnosticsWriter:
    def __init__(self, fh):
        self._fh = fh
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(CSV_HEADER)

    def write(self, row: DiagnosticsRow):
        self._w.writerow(row.csv_fields())
        self._fh.flush()


def read_diagnostics(path) -> list[DiagnosticsRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                DiagnosticsRow(
                    float(rec["t"]),
                    float(rec["kinetic_mean"]),
                    float(rec["internal_mean"]),
                    np.array([float(rec["px"]), float(rec["py"]), float(rec["pz"])]),
                    float(rec["energy_total"]),
                    float(rec["h_estimate"]),
                    float(rec["mode_amplitude"]),
                    int(rec["collisions_accepted"]),
                )
            )
    return rows


def equilibrium_temperature(row: DiagnosticsRow, params: GasParams) -> float:
    """Temperature of the equilibrium with the same thermal energy, 2 e / (3 + delta)."""
    thermal = row.energy_total - 0.5 * float(np.dot(row.momentum, row.momentum))
    return 2.0 * thermal / (3.0 + params.delta)


@dataclass
class RelaxationFit:
    target: float
    floor: float
    window: slice
    rate: float
    r_squared: float


def relaxation_fit(rows: list[DiagnosticsRow], params: GasParams, n_particles: int, floor_factor: float = 3.0) -> RelaxationFit:
    """Fit log|internal_mean - delta T_eq / 2| against t over the relaxation window.

    The window runs from the first row until the deviation first drops
    below ``floor_factor`` times the standard error of the internal-energy
    mean at equilibrium, sqrt(delta/2) T_eq / sqrt(N).
    """
    t_eq = equilibrium_temperature(rows[0], params)
    target = 0.5 * params.delta * t_eq
    floor = math.sqrt(0.5 * params.delta) * t_eq / math.sqrt(n_particles)
    dev = np.abs(np.array([r.internal_mean for r in rows]) - target)
    below = np.flatnonzero(dev <= floor_factor * floor)
    stop = int(below[0]) if below.size else len(rows)
    window = slice(0, stop)
    t = np.array([r.t for r in rows[window]])
    y = np.log(dev[window])
    if t.size < 3:
        return RelaxationFit(target, floor, window, float("nan"), float("nan"))
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return RelaxationFit(target, floor, window, -float(slope), r2)


def moving_average(x, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if width <= 1 or x.size < width:
        return x
    return np.convolve(x, np.ones(width) / width, mode="valid")
