"""Command-line entry point (``rgpso``).

Exit status: 0 on success, 1 for usage or configuration errors, 2 when a
run fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError
from .harness import (
    DEFAULT_WEIGHTS,
    Problem,
    SweepConfig,
    gradcheck,
    histogram_gbest,
    optimize_chain,
    run_sweep,
    weight_label,
    write_gradcheck_csv,
    write_histogram_csv,
    write_json,
    write_runs_csv,
    write_sweep_csv,
)
from .inventory import ChainSpec, chain_from_dict, load_chain, load_default_chain, simulate_chain
from .objective import BENCHMARKS
from .swarm import PsoConfig, run

log = logging.getLogger("rgpso")

_TOP_KEYS = {"objective", "chain", "pso", "sweep", "gradcheck", "seed", "description"}
_OBJECTIVE_KEYS = {"name", "dimension", "bounds"}
_SWEEP_KEYS = {"weights", "mc_runs", "bins"}
_GRADCHECK_KEYS = {"points", "samples", "radius", "sigma", "epsilon"}
_PSO_KEYS = {f.name for f in dataclasses.fields(PsoConfig)}


@dataclass
class RunConfig:
    problem: Problem
    pso: PsoConfig
    seed: int = 0
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    mc_runs: int = 500
    bins: int = 20
    gradcheck: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"{prefix}{extra[0]}: unknown key")


def _number(v, where: str, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return kind(v)


def _problem(d: dict, base_dir: Path) -> Problem:
    if ("objective" in d) == ("chain" in d):
        raise ConfigError("objective: give exactly one of 'objective' or 'chain'")
    if "chain" in d:
        c = d["chain"]
        if c == "default":
            chain = load_default_chain()
        elif isinstance(c, str):
            path = Path(c) if Path(c).is_absolute() else base_dir / c
            if not path.exists():
                raise ConfigError(f"chain: file not found: {path}")
            chain = load_chain(path)
        else:
            chain = chain_from_dict(c, base_dir)
        return Problem("inventory_chain", len(chain.warehouses), None, chain)
    o = d["objective"]
    if isinstance(o, str):
        o = {"name": o}
    if not isinstance(o, dict):
        raise ConfigError("objective: expected a name or an object")
    _unknown(o, _OBJECTIVE_KEYS, "objective")
    name = o.get("name")
    if name not in BENCHMARKS:
        raise ConfigError(f"objective.name: unknown objective {name!r}; choose from {list(BENCHMARKS)}")
    dim = _number(o.get("dimension", 2), "objective.dimension", int)
    bounds = o.get("bounds")
    if bounds is not None:
        try:
            bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        except (TypeError, ValueError):
            raise ConfigError("objective.bounds: expected a list of [lo, hi] pairs") from None
    problem = Problem(name, dim, bounds)
    try:
        problem.build()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"objective: {exc}") from None
    return problem


def _pso(d, where: str = "pso") -> PsoConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    _unknown(d, _PSO_KEYS, where)
    kw = {}
    for key, v in d.items():
        if key == "estimator":
            kw[key] = v
        elif key == "v_max" and isinstance(v, list):
            kw[key] = tuple(_number(x, f"{where}.v_max") for x in v)
        elif v is None:
            kw[key] = None
        else:
            kind = int if key in ("swarm_size", "max_iters", "stall_iters", "grad_every",
                                  "max_lookback", "egs_lambda", "seed") else float
            kw[key] = _number(v, f"{where}.{key}", kind)
    try:
        return PsoConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(d: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a run-config document; errors name the offending key."""
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    _unknown(d, _TOP_KEYS, "")
    problem = _problem(d, base_dir)
    pso = _pso(d.get("pso", {}))
    seed = _number(d.get("seed", pso.seed), "seed", int)
    if seed < 0:
        raise ConfigError("seed: must be nonnegative")
    sw = d.get("sweep", {})
    if not isinstance(sw, dict):
        raise ConfigError("sweep: expected an object")
    _unknown(sw, _SWEEP_KEYS, "sweep")
    weights = sw.get("weights", list(DEFAULT_WEIGHTS))
    if not isinstance(weights, list) or not weights:
        raise ConfigError("sweep.weights: expected a nonempty list")
    weights = tuple(_number(w, f"sweep.weights[{i}]") for i, w in enumerate(weights))
    if any(w < 0 for w in weights):
        raise ConfigError("sweep.weights: weights must be nonnegative")
    mc = _number(sw.get("mc_runs", 500), "sweep.mc_runs", int)
    bins = _number(sw.get("bins", 20), "sweep.bins", int)
    if mc < 1 or bins < 1:
        raise ConfigError("sweep.mc_runs: must be >= 1" if mc < 1 else "sweep.bins: must be >= 1")
    gc = d.get("gradcheck", {})
    if not isinstance(gc, dict):
        raise ConfigError("gradcheck: expected an object")
    _unknown(gc, _GRADCHECK_KEYS, "gradcheck")
    gck = {}
    for key, kind in (("points", int), ("samples", int), ("radius", float), ("sigma", float), ("epsilon", float)):
        if gc.get(key) is not None:
            gck[key] = _number(gc[key], f"gradcheck.{key}", kind)
            if gck[key] <= 0:
                raise ConfigError(f"gradcheck.{key}: must be positive")
    return RunConfig(problem, pso, seed, weights, mc, bins, gck, d)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
    return parse_config(d, path.parent)


# --- subcommands ------------------------------------------------------------

def _with_mc(chain: ChainSpec, mc: Optional[int]) -> ChainSpec:
    return chain if mc is None else dataclasses.replace(chain, n_mc=mc)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sweep(cfg: RunConfig, args) -> int:
    problem = cfg.problem
    if problem.chain is not None and args.mc is not None:
        problem = dataclasses.replace(problem, chain=_with_mc(problem.chain, args.mc))
    mc = cfg.mc_runs if args.mc is None or problem.chain is not None else args.mc
    sweep = SweepConfig(problem, cfg.weights, mc, cfg.pso, cfg.seed)
    rows, records = run_sweep(sweep, threads=args.threads)
    out = _out_dir(args)
    write_sweep_csv(rows, out / "sweep.csv")
    write_runs_csv(records, out / "runs_raw.csv")
    for wi, c3 in enumerate(cfg.weights):
        vals = [r.gbest_f for r in records if r.weight_index == wi]
        write_histogram_csv(histogram_gbest(vals, cfg.bins), out / f"hist_{weight_label(c3)}.csv")
    for r in rows:
        print(f"{r.objective} c3={r.c3:g} mean_gbest={r.mean_gbest:.6g} std={r.std_gbest:.6g} "
              f"iters={r.mean_iters_total:.6g} found={r.mean_iter_gbest_found:.6g}")
    return 0


def cmd_optimize(cfg: RunConfig, args) -> int:
    out = _out_dir(args)
    pso = cfg.pso.replace(seed=cfg.seed)
    problem = cfg.problem
    if problem.chain is not None:
        chain = _with_mc(problem.chain, args.mc)
        res = optimize_chain(chain, pso)
        doc = res.to_dict()
        doc["input"] = cfg.raw
        res.run.write_trace(out / "trace.csv")
        write_json(doc, out / "result.json")
        write_json(res.simulation.kpis(), out / "kpi.json")
        res.simulation.write_stocks_csv(out / "stocks.csv")
        print(f"best R={doc['best_R']} objective={res.objective:.6g} "
              f"SL={[round(s, 4) for s in doc['service_levels']]} (initial {res.initial_objective:.6g})")
        return 0
    result = run(problem.build(), pso)
    doc = result.to_dict()
    doc["objective"] = problem.name
    doc["input"] = cfg.raw
    result.write_trace(out / "trace.csv")
    write_json(doc, out / "result.json")
    print(f"{problem.name}: gbest_f={result.gbest_f:.6g} at {list(map(float, result.gbest_x))} "
          f"after {result.iterations_done} iterations")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.problem.chain is None:
        raise ConfigError("chain: simulate needs a 'chain' entry")
    chain = _with_mc(cfg.problem.chain, args.mc)
    seed = chain.seed if args.seed is None else args.seed
    res = simulate_chain(chain, seed)
    out = _out_dir(args)
    res.write_stocks_csv(out / "stocks.csv")
    kpi = res.kpis()
    kpi["reorder_points"] = [float(v) for v in chain.reorder_points]
    kpi["seed"] = seed
    kpi["n_MC"] = chain.n_mc
    kpi["n_week"] = chain.n_week
    write_json(kpi, out / "kpi.json")
    print(f"SL={[round(s, 4) for s in kpi['service_level']]} avg_stock={[round(s, 2) for s in kpi['avg_stock']]} "
          f"objective={kpi['objective']:.6g}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    rows = gradcheck(cfg.problem.build(), seed=cfg.seed, **cfg.gradcheck)
    cos = np.array([r.cosine for r in rows])
    print(f"{cfg.problem.name}: {len(rows)} points, WLS vs FD cosine min={np.nanmin(cos):.6f} "
          f"mean={np.nanmean(cos):.6f}")
    if rows and rows[0].true is not None:
        wins = sum(r.wls_angle < r.fd_angle for r in rows)
        print(f"angle to exact gradient: WLS median={np.median([r.wls_angle for r in rows]):.3f} deg, "
              f"FD median={np.median([r.fd_angle for r in rows]):.3f} deg, WLS closer at {wins}/{len(rows)}")
    if args.out:
        out = _out_dir(args)
        write_gradcheck_csv(rows, out / "gradcheck.csv")
    return 0


COMMANDS = {"sweep": cmd_sweep, "optimize": cmd_optimize, "simulate": cmd_simulate, "gradcheck": cmd_gradcheck}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=argparse.SUPPRESS,
                        help="master seed (overrides the config)")
    common.add_argument("--threads", type=_pos_int, default=argparse.SUPPRESS,
                        help="worker processes for sweeps")
    common.add_argument("--mc", type=_pos_int, default=argparse.SUPPRESS,
                        help="replicate count override (sweep runs per weight, chain n_MC)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="rgpso", description="Gradient-augmented PSO experiments.", parents=[common])
    parser.add_argument("--version", action="version", version=f"rgpso {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "sweep": "gradient-weight sweep over many seeded runs",
        "optimize": "one optimisation run (benchmark or inventory chain)",
        "simulate": "Monte-Carlo simulation of an inventory chain",
        "gradcheck": "compare WLS and finite-difference gradients",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, parents=[common])
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", required=name != "gradcheck", help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, default in (("seed", None), ("threads", 1), ("mc", None), ("verbose", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"rgpso: config error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"rgpso: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
