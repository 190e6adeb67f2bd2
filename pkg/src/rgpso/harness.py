"""Experiment orchestration: gradient-weight sweeps, chain optimisation,
gradient diagnostics and the CSV/JSON writers behind the CLI.

Every run in a sweep gets its own seed from ``(master, weight index,
replicate index)``, so results do not depend on how runs are scheduled
over worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .gradient import FdConfig, finite_difference_gradient, wls_batch
from .inventory import ChainSpec, make_chain_objective
from .objective import Objective, griewangk_gradient, make_objective
from .swarm import PsoConfig, run

DEFAULT_WEIGHTS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.25)

SWEEP_COLUMNS = (
    "objective", "c3", "mean_gbest", "std_gbest", "mean_of_mean_pbest",
    "mean_iters_total", "mean_iter_gbest_found",
)
RAW_COLUMNS = (
    "objective", "weight_index", "c3", "replicate", "seed", "gbest_f",
    "mean_pbest_f", "iterations_done", "gbest_found_at",
)


def fmt6(v: float) -> str:
    """Six significant digits."""
    return f"{float(v):.6g}"


@dataclass(frozen=True)
class Problem:
    """Picklable description of an objective, rebuilt inside workers."""

    name: str
    dimension: int = 2
    bounds: Optional[tuple[tuple[float, float], ...]] = None
    chain: Optional[ChainSpec] = None

    def build(self) -> Objective:
        if self.chain is not None:
            return make_chain_objective(self.chain)
        return make_objective(self.name, self.dimension, self.bounds)


@functools.lru_cache(maxsize=8)
def _objective_for(problem: Problem) -> Objective:
    return problem.build()


@dataclass(frozen=True)
class SweepConfig:
    problem: Problem
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    mc_runs: int = 500
    pso: PsoConfig = field(default_factory=PsoConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.weights:
            raise ValueError("weights must be nonempty")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if self.mc_runs < 1:
            raise ValueError("mc_runs must be >= 1")


@dataclass(frozen=True)
class SweepRow:
    objective: str
    c3: float
    mean_gbest: float
    std_gbest: float
    mean_of_mean_pbest: float
    mean_iters_total: float
    mean_iter_gbest_found: float


@dataclass(frozen=True)
class RunRecord:
    objective: str
    weight_index: int
    c3: float
    replicate: int
    seed: int
    gbest_f: float
    mean_pbest_f: float
    iterations_done: int
    gbest_found_at: int


def derive_seed(master: int, weight_index: int, replicate: int) -> int:
    """64-bit run seed mixed from the master seed and the run's coordinates."""
    ss = np.random.SeedSequence([int(master), int(weight_index), int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _sweep_task(args) -> RunRecord:
    problem, pso, wi, c3, rep, seed = args
    res = run(_objective_for(problem), pso.replace(c3=c3, seed=seed))
    return RunRecord(problem.name, wi, c3, rep, seed, float(res.gbest_f), float(res.mean_pbest_f),
                     res.iterations_done, res.gbest_found_at)


def _map(fn, tasks: list, threads: int) -> list:
    if threads <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def run_sweep(cfg: SweepConfig, threads: int = 1) -> tuple[list[SweepRow], list[RunRecord]]:
    """``mc_runs`` swarm runs per gradient weight; rows follow ``cfg.weights``."""
    tasks = [
        (cfg.problem, cfg.pso, wi, float(c3), rep, derive_seed(cfg.seed, wi, rep))
        for wi, c3 in enumerate(cfg.weights)
        for rep in range(cfg.mc_runs)
    ]
    records = _map(_sweep_task, tasks, threads)
    rows = []
    for wi, c3 in enumerate(cfg.weights):
        recs = [r for r in records if r.weight_index == wi]
        rows.append(summarize(cfg.problem.name, float(c3), recs))
    return rows, records


def summarize(name: str, c3: float, records: Sequence[RunRecord]) -> SweepRow:
    g = np.array([r.gbest_f for r in records])
    return SweepRow(
        objective=name,
        c3=c3,
        mean_gbest=float(g.mean()),
        std_gbest=float(g.std()),
        mean_of_mean_pbest=float(np.mean([r.mean_pbest_f for r in records])),
        mean_iters_total=float(np.mean([r.iterations_done for r in records])),
        mean_iter_gbest_found=float(np.mean([r.gbest_found_at for r in records])),
    )


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float


def histogram_gbest(values: Sequence[float], bins: int = 20) -> Histogram:
    """Histogram of per-run gbest values (population std)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to histogram")
    if np.ptp(v) == 0:
        counts, edges = np.array([v.size]), np.array([v[0] - 0.5, v[0] + 0.5])
    else:
        counts, edges = np.histogram(v, bins=bins)
    return Histogram(edges, counts, float(v.mean()), float(v.std()))


# --- chain optimisation -----------------------------------------------------

@dataclass
class ChainOptResult:
    best_R: np.ndarray
    objective: float
    service_levels: np.ndarray
    trace: list
    initial_R: np.ndarray
    initial_objective: float
    initial_service_levels: np.ndarray
    run: object = None
    simulation: object = None

    def to_dict(self) -> dict:
        return {
            "best_R": [float(v) for v in self.best_R],
            "objective": float(self.objective),
            "service_levels": [float(v) for v in self.service_levels],
            "initial_R": [float(v) for v in self.initial_R],
            "initial_objective": float(self.initial_objective),
            "initial_service_levels": [float(v) for v in self.initial_service_levels],
            "iterations_done": self.run.iterations_done,
            "gbest_found_at": self.run.gbest_found_at,
            "n_evals": self.run.n_evals,
            "config": dataclasses.asdict(self.run.config),
        }


def optimize_chain(chain: ChainSpec, pso: PsoConfig, seed: Optional[int] = None) -> ChainOptResult:
    """Search reorder points with the swarm under common random numbers.

    ``seed`` fixes the demand draws (defaults to the chain's seed); the
    swarm itself uses ``pso.seed``.  Returned reorder points are the
    rounded, clipped values the simulator actually used.
    """
    obj = make_chain_objective(chain, seed)
    co = obj.chain_objective
    start = co.simulate(chain.reorder_points)
    res = run(obj, pso)
    best = co.simulate(res.gbest_x)
    return ChainOptResult(
        best_R=np.rint(np.maximum(res.gbest_x, 0.0)),
        objective=best.objective,
        service_levels=best.service_level,
        trace=res.trace,
        initial_R=np.rint(np.maximum(chain.reorder_points, 0.0)),
        initial_objective=start.objective,
        initial_service_levels=start.service_level,
        run=res,
        simulation=best,
    )


# --- gradient diagnostics -----------------------------------------------------

@dataclass(frozen=True)
class GradcheckRow:
    point: np.ndarray
    wls: np.ndarray
    fd: np.ndarray
    cosine: float
    true: Optional[np.ndarray] = None
    wls_angle: float = float("nan")
    fd_angle: float = float("nan")


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def angle_deg(a, b) -> float:
    return math.degrees(math.acos(_cos(a, b)))


def _ball(rng, centre, radius, count):
    """Uniform samples in the Euclidean ball around ``centre``."""
    n = centre.shape[0]
    d = rng.normal(size=(count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / n)
    return centre + d * r[:, None]


def gradcheck(
    objective: Objective,
    points: int = 20,
    samples: int = 60,
    radius: float = 0.05,
    sigma: Optional[float] = None,
    epsilon: float = 1e-6,
    seed: int = 0,
) -> list[GradcheckRow]:
    """Compare the archive-based WLS gradient with forward differences.

    At each of ``points`` random test points a dense archive of
    ``samples`` evaluations uniform within ``radius`` is built and the WLS
    estimate (region ``sigma``, default ``radius**2``) is compared with a
    single forward-difference estimate.  For the griewangk objectives the
    analytic gradient of the noise-free function is reported as well.
    Test point ``i`` uses ``default_rng([seed, i])``.
    """
    spec = objective.spec
    sigma = radius * radius if sigma is None else sigma
    exact = spec.name in ("griewangk", "griewangk_noise")
    lo, hi = spec.lower + radius, spec.upper - radius
    rows = []
    for i in range(points):
        rng = np.random.default_rng([seed, i])
        x = rng.uniform(lo, hi)
        P = _ball(rng, x, radius, samples)
        F = np.array([objective(p, rng=rng) for p in P])
        fx = objective(x, rng=rng)
        G, _, _ = wls_batch(P, F, x[None, :], np.array([fx]), sigma)
        fd = finite_difference_gradient(
            objective, x, FdConfig(epsilon), bounds=(spec.lower, spec.upper), rng=rng
        ).g
        true = griewangk_gradient(x) if exact else None
        rows.append(
            GradcheckRow(
                point=x, wls=G[0], fd=fd, cosine=_cos(G[0], fd), true=true,
                wls_angle=angle_deg(G[0], true) if exact else float("nan"),
                fd_angle=angle_deg(fd, true) if exact else float("nan"),
            )
        )
    return rows


# --- writers ----------------------------------------------------------------

def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r.objective, fmt6(r.c3)] + [fmt6(getattr(r, c)) for c in SWEEP_COLUMNS[2:]])


def write_runs_csv(records: Sequence[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in records:
            w.writerow([r.objective, r.weight_index, repr(r.c3), r.replicate, r.seed,
                        repr(r.gbest_f), repr(r.mean_pbest_f), r.iterations_done, r.gbest_found_at])


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "mean", "std"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(hist.mean), repr(hist.std)])


def write_gradcheck_csv(rows: Sequence[GradcheckRow], path) -> None:
    n = rows[0].point.shape[0] if rows else 0
    cols = ([f"x_{i + 1}" for i in range(n)] + [f"wls_{i + 1}" for i in range(n)]
            + [f"fd_{i + 1}" for i in range(n)] + ["cosine", "wls_angle_deg", "fd_angle_deg"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            vals = list(r.point) + list(r.wls) + list(r.fd) + [r.cosine, r.wls_angle, r.fd_angle]
            w.writerow([repr(float(v)) for v in vals])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def weight_label(c3: float) -> str:
    return fmt6(c3)
