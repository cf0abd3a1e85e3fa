"""Command-line front end.

    delaycomp simulate --preset pk --tau 0.2 --mode both --paths 2000 --seed 7
    delaycomp simulate --config model.json --out results/
    delaycomp dexp eval --mu 1 --tau 0.3 --tmax 5 --points 100
    delaycomp dexp sample --mu 1 --tau 0.3 -n 1000000 --seed 1
    delaycomp dexp validate --mu 1 --tau 0.7

Exit status: 0 on success, 1 for invalid input, 2 when a simulation breaks
an internal invariant.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dde import build_dde, solve
from .dexp import DexpParams, characteristic_roots, dexp_eval, is_distribution_valid
from .model import (
    DEFAULT_GRID_POINTS,
    PRESETS,
    ModelError,
    ModelSpec,
    spec_from_dict,
    validate,
)
from .sampler import DexpQuantileTable, RngStream, sample_dexp_many
from .ssa import SimulationError, compile_model, default_parallelism, run_ensemble, run_path

MODES = ("stochastic", "deterministic", "both")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelSpec
    mode: str = "both"
    n_paths: int = 2000
    seed: int = 0
    step: float | None = None
    output_path: Path = Path(".")
    parallel: int | None = None
    save_paths: int = 0

    def check(self) -> None:
        diags = validate(self.model)
        if self.mode not in MODES:
            diags.append(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.mode != "deterministic" and self.n_paths < 1:
            diags.append(f"paths must be >= 1, got {self.n_paths}")
        if self.mode != "stochastic":
            taus = [d.params.tau for d in self.model.delays if d.params.tau > 0]
            if self.step is not None and (self.step <= 0 or (taus and self.step > min(taus) / 4)):
                diags.append(f"step {self.step} must be positive and at most min(tau)/4")
        if diags:
            raise ModelError(diags)

    def deterministic_step(self) -> float:
        if self.step is not None:
            return self.step
        taus = [d.params.tau for d in self.model.delays if d.params.tau > 0]
        return min([0.01] + [t / 4 for t in taus])


def fmt(x: Any) -> str:
    """Shortest round-trip decimal form."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# -- simulate -----------------------------------------------------------------

_PRESET_FLAGS = {
    "pk": ("k", "mu", "tau", "x0"),
    "sis": ("b", "d", "lambda_", "gamma", "tau", "s0", "i0"),
}


def _preset_model(name: str, params: dict[str, Any], horizon, grid) -> ModelSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")
    params = dict(params)
    if name == "sis" and params.get("pop") is not None:
        pop = int(params.pop("pop"))
        i0 = int(params.get("i0") if params.get("i0") is not None else 5)
        params["i0"] = i0
        params["s0"] = pop - i0
    if params.get("pop", 0) is None:
        del params["pop"]
    unknown = set(params) - set(_PRESET_FLAGS[name])
    if unknown:
        raise ConfigError(f"preset {name!r} does not take {', '.join(sorted(unknown))}")
    kwargs = {k: v for k, v in params.items() if v is not None}
    for key in ("x0", "s0", "i0"):
        if key in kwargs:
            if float(kwargs[key]) != int(kwargs[key]):
                raise ConfigError(f"{key} must be an integer count")
            kwargs[key] = int(kwargs[key])
    if horizon is not None:
        kwargs["horizon"] = horizon
    if grid is not None:
        kwargs["grid_points"] = grid
    return PRESETS[name](**kwargs)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    file_cfg: dict[str, Any] = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config must be a JSON object")
    run = dict(file_cfg.get("run", {}))

    preset = args.preset or file_cfg.get("preset")
    if preset:
        params = dict(file_cfg.get("params", {}))
        all_flags = {k for keys in _PRESET_FLAGS.values() for k in keys} | {"pop"}
        for key in sorted(all_flags):
            val = getattr(args, key, None)
            if val is not None:
                params[key] = val
        model = _preset_model(preset, params, args.horizon, args.grid)
    elif file_cfg:
        data = dict(file_cfg.get("model", file_cfg))
        if args.horizon is not None:
            data["horizon"] = args.horizon
            if args.grid is None and isinstance(data.get("grid"), list):
                # keep the resolution, rescale to the new horizon
                data["grid"] = len(data["grid"])
        if args.grid is not None:
            data["grid"] = args.grid
        try:
            model = spec_from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from None
    else:
        raise ConfigError("simulate needs --preset or --config")

    def pick(flag, key, default):
        val = getattr(args, flag)
        return val if val is not None else run.get(key, default)

    return RunConfig(
        model=model,
        mode=pick("mode", "mode", "both"),
        n_paths=int(pick("paths", "paths", 2000)),
        seed=int(pick("seed", "seed", 0)),
        step=pick("step", "step", None),
        output_path=Path(pick("out", "out", ".")),
        parallel=pick("parallel", "parallel", None),
        save_paths=int(pick("save_paths", "save_paths", 0)),
    )


def cmd_simulate(cfg: RunConfig) -> int:
    cfg.check()
    spec = cfg.model
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    grid = np.array(spec.record_grid)
    names = list(spec.compartments)

    if cfg.mode in ("deterministic", "both"):
        sol = solve(build_dde(spec), spec.horizon, cfg.deterministic_step())
        values = sol.sample(grid)
        write_csv(out / "deterministic.csv", ["t"] + names, ([t, *v] for t, v in zip(grid, values)))
        print(f"wrote {out / 'deterministic.csv'}")

    if cfg.mode in ("stochastic", "both"):
        model = compile_model(spec)
        summary = run_ensemble(model, cfg.n_paths, cfg.seed, parallel=cfg.parallel)
        header = ["t"] + [f"{n}_{stat}" for n in names for stat in ("mean", "std", "stderr")]
        std = summary.std

        def rows():
            for j, t in enumerate(grid):
                row = [t]
                for i in range(len(names)):
                    row += [summary.mean[j, i], std[j, i], summary.stderr[j, i]]
                yield row

        write_csv(out / "ensemble.csv", header, rows())
        print(f"wrote {out / 'ensemble.csv'} ({cfg.n_paths} paths)")
        for n in names:
            print(f"extinction fraction {n}: {fmt(summary.extinction_fraction(n))}")
        for r in range(min(cfg.save_paths, cfg.n_paths)):
            traj = run_path(model, RngStream(cfg.seed, r))
            write_csv(
                out / f"path_{r}.csv", ["t"] + names,
                ([t, *c] for t, c in zip(grid, traj.counts_at_grid)),
            )
    return 0


# -- dexp ---------------------------------------------------------------------


def cmd_dexp(args: argparse.Namespace) -> int:
    p = DexpParams(args.mu, args.tau)
    if args.sub == "validate":
        if is_distribution_valid(p):
            print(f"valid: μτ = {p.mu_tau:g} ≤ 1/e")
        else:
            print(f"invalid: μτ = {p.mu_tau:g} > 1/e")
        try:
            roots = characteristic_roots(p)
            print(f"characteristic roots: {fmt(roots.lambda0)} {fmt(roots.lambda_neg1)}")
        except ValueError as exc:
            print(f"characteristic roots: undefined ({exc})")
        return 0

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        if args.sub == "eval":
            if args.points < 2 or not args.tmax > 0:
                raise ValueError("need --points >= 2 and --tmax > 0")
            ts = np.linspace(0.0, args.tmax, args.points)
            w.writerow(["t", "dexp"])
            for t, v in zip(ts, dexp_eval(ts, p)):
                w.writerow([fmt(t), fmt(v)])
        else:
            if args.n < 1:
                raise ValueError("-n must be >= 1")
            table = DexpQuantileTable.build(p)
            draws = sample_dexp_many(RngStream(args.seed, args.stream), table, args.n)
            w.writerow(["sample"])
            w.writerows([fmt(x)] for x in draws)
            mean = float(draws.mean())
            var = float(draws.var(ddof=1)) if args.n > 1 else 0.0
            print(
                f"n={args.n} mean={mean:.6g} (expect {1 / p.mu:.6g}) "
                f"variance={var:.6g} (expect {(1 - 2 * p.mu_tau) / p.mu**2:.6g})",
                file=sys.stderr,
            )
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaycomp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run stochastic and/or deterministic experiments")
    sim.add_argument("--config", help="JSON model/run config")
    sim.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    sim.add_argument("--mode", choices=MODES)
    sim.add_argument("--paths", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--step", type=float, help="deterministic step (<= min tau / 4)")
    sim.add_argument("--horizon", type=float)
    sim.add_argument("--grid", type=int, help=f"recording grid points (default {DEFAULT_GRID_POINTS})")
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--parallel", type=int, help=f"worker threads (default {default_parallelism()})")
    sim.add_argument("--save-paths", type=int, dest="save_paths", help="write path_<r>.csv for the first N replicas")
    for flag in ("k", "mu", "tau", "b", "d", "gamma"):
        sim.add_argument(f"--{flag}", type=float)
    sim.add_argument("--lambda", type=float, dest="lambda_")
    for flag in ("x0", "s0", "i0", "pop"):
        sim.add_argument(f"--{flag}", type=int)

    dx = sub.add_parser("dexp", help="delay exponential utilities")
    dsub = dx.add_subparsers(dest="sub", required=True)
    for name in ("eval", "sample", "validate"):
        sp = dsub.add_parser(name)
        sp.add_argument("--mu", type=float, required=True)
        sp.add_argument("--tau", type=float, required=True)
        if name == "eval":
            sp.add_argument("--tmax", type=float, default=5.0)
            sp.add_argument("--points", type=int, default=DEFAULT_GRID_POINTS)
            sp.add_argument("--out")
        elif name == "sample":
            sp.add_argument("-n", type=int, default=1000)
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--stream", type=int, default=0)
            sp.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(build_run_config(args))
        return cmd_dexp(args)
    except SimulationError as exc:
        print(f"error: simulation aborted: {exc}", file=sys.stderr)
        return 2
    except (ModelError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
