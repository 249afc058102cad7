"""Command-line entry point: ``polykin <command> --config PATH --out DIR``.

Config files are flat ``key = value`` lines with dotted keys, e.g.::

    gas.delta = 2
    scan.speeds = [0, 2, 4]
    init.kind = two_temperature

Every command writes its data file(s) plus ``manifest.json`` to the
output directory; ``polykin replay DIR/manifest.json`` reruns it.
Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 statistical
check failed under ``--strict``.
"""
from __future__ import annotations

import argparse
import ast
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .collision import equilibrium_fixed_point
from .core import GasParams, MicroState, maxwellian
from .functionals import collision_frequency, entropy_split_lhs, maxwellian_on_grid, nu_equivalence_ratio, relative_entropy
from .linearized import kernel_bound_probe
from .nonlinear import gain_estimate_ratio
from .quadrature import GridFunction, McConfig, NonFiniteSampleError, PhaseGrid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STATISTIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class StatisticalFailure(RuntimeError):
    pass


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or key.count(".") > 1:
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


class Config:
    """Flat config that records every key read, with its resolved value."""

    def __init__(self, values: dict | None = None):
        self.values = dict(values or {})
        self.resolved: dict = {}

    def get(self, key, default=None, kind=None):
        value = self.values.get(key, default)
        if kind is not None and value is not None:
            try:
                value = [kind(x) for x in value] if isinstance(value, (list, tuple)) else kind(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        self.resolved[key] = value
        return value

    def gas(self) -> GasParams:
        try:
            return GasParams(
                delta=self.get("gas.delta", 2.0, float),
                alpha=self.get("gas.alpha", 0.0, float),
                c_b=self.get("gas.c_b", 1.0, float),
                beta=self.get("gas.beta", 8.0, float),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self, v_max=12.0, i_max=40.0, n_v=48, n_i=64) -> PhaseGrid:
        try:
            return PhaseGrid(
                v_max=self.get("grid.v_max", v_max, float),
                i_max=self.get("grid.i_max", i_max, float),
                n_v=self.get("grid.n_v", n_v, int),
                n_i=self.get("grid.n_i", n_i, int),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def mc(self, seed: int) -> McConfig:
        n = self.get("mc.n_samples", 200_000, int)
        if n < 1:
            raise ConfigError("mc.n_samples must be positive")
        return McConfig(n_samples=n, seed=seed)

    def scan(self, speeds=(0.0, 1.0, 2.0, 4.0, 8.0), energies=(0.0, 1.0, 4.0)) -> list[MicroState]:
        sp = self.get("scan.speeds", list(speeds), float)
        ie = self.get("scan.i_energies", list(energies), float)
        if any(x < 0 for x in ie):
            raise ConfigError("scan.i_energies must be nonnegative")
        return [MicroState(np.array([s, 0.0, 0.0]), i) for s in sp for i in ie]


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_nu_table(cfg: Config, seed: int, out: Path, strict: bool):
    params, grid = cfg.gas(), cfg.grid()
    rows = []
    for s in cfg.scan():
        nu = collision_frequency(params, s, grid)
        ratio = nu_equivalence_ratio(params, s, grid)
        if not (math.isfinite(nu) and math.isfinite(ratio)):
            raise FloatingPointError("non-finite collision frequency")
        rows.append([_fmt(s.v[0]), _fmt(s.i_energy), _fmt(nu), _fmt(ratio)])
    _write_csv(out / "nu_table.csv", ["speed", "i_energy", "nu", "equiv_ratio"], rows)


def cmd_kernel_bounds(cfg: Config, seed: int, out: Path, strict: bool):
    params, grid = cfg.gas(), cfg.grid()
    eps = cfg.get("probe.eps", 1.0 / 64.0, float)
    m = cfg.get("probe.m", 0.125, float)
    if not (0.0 <= eps <= 1.0 / 64.0 and 0.0 <= m <= 0.125):
        raise ConfigError("probe.eps must lie in [0, 1/64] and probe.m in [0, 1/8]")
    scan = cfg.scan((0.0, 2.0, 4.0, 6.0, 8.0), (0.0, 1.0, 4.0, 16.0))
    rows = kernel_bound_probe(params, eps, m, scan, cfg.mc(seed), grid)
    if not all(math.isfinite(r.value) for r in rows):
        raise FloatingPointError("non-finite bound product")
    _write_csv(
        out / "kernel_bounds.csv",
        ["speed", "i_energy", "bound_product", "std_error"],
        [[_fmt(r.state.v[0]), _fmt(r.state.i_energy), _fmt(r.value), _fmt(r.std_error)] for r in rows],
    )


def _test_function(cfg: Config, params: GasParams, grid: PhaseGrid, seed: int) -> GridFunction:
    kind = cfg.get("probe.f", "sqrt_maxwellian", str)
    if kind == "sqrt_maxwellian":
        return GridFunction.from_callable(grid, lambda s: np.sqrt(maxwellian(params, s)))
    if kind == "random":
        amp = cfg.get("probe.f_amplitude", 0.5, float)
        rng = np.random.default_rng([seed, 7])
        g = rng.uniform(-amp, amp, grid.shape)
        return GridFunction(grid, np.sqrt(maxwellian_on_grid(params, grid)) * (1.0 + g))
    raise ConfigError(f"probe.f must be 'sqrt_maxwellian' or 'random', got {kind!r}")


def cmd_gain_probe(cfg: Config, seed: int, out: Path, strict: bool):
    params, grid = cfg.gas(), cfg.grid()
    f = _test_function(cfg, params, grid, seed)
    probe = gain_estimate_ratio(params, f, cfg.scan(), cfg.mc(seed))
    if not all(math.isfinite(r.value) for r in probe.rows):
        raise FloatingPointError("non-finite gain ratio")
    _write_csv(
        out / "gain_probe.csv",
        ["speed", "i_energy", "ratio", "std_error"],
        [[_fmt(r.state.v[0]), _fmt(r.state.i_energy), _fmt(r.value), _fmt(r.std_error)] for r in probe.rows],
    )
    best = probe.rows[probe.argmax]
    summary = {"sup": probe.sup, "argmax_speed": float(best.state.v[0]), "argmax_i_energy": float(best.state.i_energy)}
    (out / "gain_probe_summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def cmd_entropy_check(cfg: Config, seed: int, out: Path, strict: bool):
    params = cfg.gas()
    # smaller default grid: integrates M to ~1e-14, enough for 1e-6 closed forms
    grid = cfg.grid(v_max=8.0, n_v=24, n_i=24)
    m = maxwellian_on_grid(params, grid)
    cases = [(f"scale={c:g}", c * m) for c in cfg.get("entropy.scales", [1.5, 3.0], float)]
    trials = cfg.get("entropy.random_trials", 10, int)
    lo, hi = cfg.get("entropy.g_range", [-0.9, 5.0], float)
    rng = np.random.default_rng([seed, 11])
    for k in range(trials):
        cases.append((f"random{k}", m * (1.0 + rng.uniform(lo, hi, grid.shape))))
    rows, failed = [], 0
    for name, values in cases:
        F = GridFunction(grid, values)
        rel, lhs = relative_entropy(F, params), entropy_split_lhs(F, params)
        ok = lhs <= rel
        failed += not ok
        rows.append([name, _fmt(rel), _fmt(lhs), "true" if ok else "false"])
    _write_csv(out / "entropy_check.csv", ["case", "relative_entropy", "split_lhs", "inequality_ok"], rows)
    if strict and failed:
        raise StatisticalFailure(f"{failed} entropy cases violate the split bound")


def marginal_ks(v, i_energy, params: GasParams, temperature: float) -> dict:
    """KS statistics of each velocity component and of I against equilibrium at T."""
    from scipy import stats

    sd = math.sqrt(temperature)
    return {
        "ks_v": [float(stats.kstest(v[:, k], stats.norm(scale=sd).cdf).statistic) for k in range(3)],
        "ks_i": float(stats.kstest(i_energy, stats.gamma(0.5 * params.delta, scale=temperature).cdf).statistic),
    }


def cmd_equilibrium_check(cfg: Config, seed: int, out: Path, strict: bool):
    params = cfg.gas()
    n = cfg.get("equilibrium.n_particles", 100_000, int)
    t = cfg.get("equilibrium.temperature", 1.0, float)
    threshold = cfg.get("equilibrium.ks_threshold", 0.01, float)
    if n < 1 or t <= 0:
        raise ConfigError("equilibrium.n_particles and equilibrium.temperature must be positive")
    from .dsmc import InitialCondition, SimConfig, init_ensemble

    try:
        ens = init_ensemble(SimConfig(params=params, n_particles=n, seed=seed, init=InitialCondition.equilibrium(t)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    fresh = marginal_ks(ens.v, ens.i_energy, params, t)
    fixed = equilibrium_fixed_point(params, np.random.default_rng([seed, 17]), n, t)
    report = {"n_particles": n, "temperature": t, "threshold": threshold, "fresh": fresh, "fixed_point": fixed}
    worst = max(*fresh["ks_v"], fresh["ks_i"], *(fixed[k] for k in ("ks_speed", "ks_i", "ks_speed_weighted", "ks_i_weighted")))
    report["pass"] = worst < threshold
    (out / "equilibrium_check.json").write_text(json.dumps(report, indent=2) + "\n")
    if strict and not report["pass"]:
        raise StatisticalFailure(f"KS statistic {worst:.4g} >= {threshold}")


def _sim_config(cfg: Config, seed: int):
    from .dsmc import InitialCondition, SimConfig

    params = cfg.gas()
    kind = cfg.get("init.kind", "equilibrium", str)
    try:
        if kind == "equilibrium":
            init = InitialCondition.equilibrium(cfg.get("init.temperature", 1.0, float))
        elif kind == "two_temperature":
            init = InitialCondition.two_temperature(cfg.get("init.t_kin", 2.0, float), cfg.get("init.t_int", 0.1, float))
        elif kind == "spatial_mode":
            init = InitialCondition.spatial_mode(cfg.get("init.amplitude", 0.5, float), cfg.get("init.temperature", 1.0, float))
        else:
            raise ConfigError(f"unknown init.kind {kind!r}")
        return SimConfig(
            params=params,
            n_particles=cfg.get("sim.n_particles", 100_000, int),
            n_cells=cfg.get("sim.n_cells", 1, int),
            dt=cfg.get("sim.dt", None, float),
            t_end=cfg.get("sim.t_end", 1.0, float),
            seed=seed,
            init=init,
            diag_every=cfg.get("sim.diag_every", 1, int),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(cfg: Config, seed: int, out: Path, strict: bool):
    from .dsmc import run

    sim_cfg = _sim_config(cfg, seed)
    rows = run(sim_cfg, out / "diagnostics.csv")
    drift = abs(rows[-1].energy_total - rows[0].energy_total) / abs(rows[0].energy_total)
    if not math.isfinite(drift):
        raise FloatingPointError("non-finite diagnostics")
    if strict and drift > 1e-10:
        raise StatisticalFailure(f"energy drift {drift:.3g} exceeds 1e-10")


COMMANDS = {
    "nu-table": cmd_nu_table,
    "kernel-bounds": cmd_kernel_bounds,
    "gain-probe": cmd_gain_probe,
    "entropy-check": cmd_entropy_check,
    "equilibrium-check": cmd_equilibrium_check,
    "simulate": cmd_simulate,
}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def execute(command: str, values: dict, seed: int | None, out: Path, strict: bool) -> int:
    out.mkdir(parents=True, exist_ok=True)
    cfg = Config(values)
    start = _now()
    try:
        resolved_seed = seed if seed is not None else cfg.get("seed", 0, int)
        cfg.resolved["seed"] = resolved_seed
        COMMANDS[command](cfg, resolved_seed, out, strict)
        code = EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (FloatingPointError, NonFiniteSampleError, ZeroDivisionError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except StatisticalFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        code = EXIT_STATISTIC
    manifest = {
        "command": command,
        "config": {**values, **cfg.resolved},
        "seed": cfg.resolved.get("seed"),
        "strict": strict,
        "version": __version__,
        "start": start,
        "end": _now(),
        "exit_code": code,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polykin", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--strict", action="store_true")
    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=Path("."))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        try:
            manifest = json.loads(args.manifest.read_text())
            command, values = manifest["command"], manifest["config"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"config error: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return execute(command, values, manifest.get("seed"), args.out, bool(manifest.get("strict", False)))
    values = {}
    if args.config is not None:
        try:
            values = parse_config(args.config.read_text())
        except (OSError, ConfigError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    return execute(args.command, values, args.seed, args.out, args.strict)


if __name__ == "__main__":
    sys.exit(main())
