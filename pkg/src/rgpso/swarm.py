"""Particle swarm engine with an optional gradient term in the velocity law.

With ``estimator="none"`` (or ``c3 == 0``) this is plain global-best PSO.
Otherwise each particle's velocity is additionally pushed downhill by
``c3`` times a gradient estimate; the default estimator reuses the stored
evaluation history (see :mod:`rgpso.gradient`).

Random streams: one master seed is split into three independent
generators, for the velocity/initialisation draws, the estimator draws
(EGS only) and objective noise.  Gradient estimation therefore never
shifts the velocity stream, so ``c3 = 0`` reproduces classic PSO exactly.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import EvaluationFailed, InsufficientDataError
from .gradient import (
    EgsConfig,
    EvaluationArchive,
    FdConfig,
    GradientEstimate,
    egs_gradient,
    finite_difference_gradient,
    wls_batch,
)
from .objective import Evaluation, Objective

log = logging.getLogger(__name__)

ESTIMATORS = ("none", "wls", "fd", "egs")


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 20
    w: float = 0.6
    c1: float = 0.5
    c2: float = 0.55
    c3: float = 0.7
    dt: float = 1.0
    v_max: Optional[Union[float, tuple[float, ...]]] = None
    max_iters: int = 200
    stall_iters: int = 50
    stall_tol: float = 1e-8
    estimator: str = "wls"
    # WLS region size as a fraction of each dimension's domain width
    sigma_frac: float = 0.1
    ridge: Optional[float] = None
    max_lookback: Optional[int] = None
    grad_every: int = 1
    fd_epsilon: float = 1e-6
    egs_lambda: int = 10
    egs_sigma_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be >= 2")
        for name in ("w", "c1", "c2", "c3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_iters < 1 or self.stall_iters < 1 or self.grad_every < 1:
            raise ValueError("max_iters, stall_iters and grad_every must be >= 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not self.sigma_frac > 0:
            raise ValueError("sigma_frac must be positive")

    def replace(self, **changes) -> "PsoConfig":
        return dataclasses.replace(self, **changes)

    @property
    def uses_gradient(self) -> bool:
        return self.estimator != "none" and self.c3 != 0.0


@dataclass
class Particle:
    x: np.ndarray
    v: np.ndarray
    f: float
    pbest_x: np.ndarray
    pbest_f: float


@dataclass
class SwarmState:
    particles: list[Particle]
    gbest_x: np.ndarray
    gbest_f: float
    archive: EvaluationArchive
    rng: np.random.Generator
    est_rng: np.random.Generator
    noise_rng: np.random.Generator
    iteration: int = 1
    gbest_found_at: int = 1
    grad_used: int = 0

    @property
    def mean_pbest_f(self) -> float:
        return float(np.mean([p.pbest_f for p in self.particles]))

    @property
    def mean_f(self) -> float:
        return float(np.mean([p.f for p in self.particles]))


@dataclass
class RunResult:
    gbest_x: np.ndarray
    gbest_f: float
    iterations_done: int
    gbest_found_at: int
    mean_pbest_f: float
    archive: EvaluationArchive
    # rows of (iteration, gbest_f, mean_pbest_f, mean_f)
    trace: list[tuple[int, float, float, float]]
    config: PsoConfig
    n_evals: int = 0

    def to_dict(self) -> dict:
        return {
            "gbest_x": [float(v) for v in self.gbest_x],
            "gbest_f": float(self.gbest_f),
            "iterations_done": self.iterations_done,
            "gbest_found_at": self.gbest_found_at,
            "mean_pbest_f": float(self.mean_pbest_f),
            "n_evals": self.n_evals,
            "archive_size": len(self.archive),
            "config": dataclasses.asdict(self.config),
        }

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,gbest_f,mean_pbest_f\n")
            for it, gb, mp, _ in self.trace:
                fh.write(f"{it},{gb!r},{mp!r}\n")


def make_streams(seed: int) -> tuple[np.random.Generator, ...]:
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def _evaluate(objective: Objective, x, rng, particle_id: int, iteration: int) -> float:
    try:
        return objective(x, rng=rng)
    except Exception as exc:
        raise EvaluationFailed(
            f"objective {objective.spec.name!r} failed for particle {particle_id} "
            f"at iteration {iteration}, x={list(map(float, x))}: {exc}"
        ) from exc


def init_swarm(objective: Objective, cfg: PsoConfig) -> SwarmState:
    spec = objective.spec
    lo, hi, width = spec.lower, spec.upper, spec.width
    rng, est_rng, noise_rng = make_streams(cfg.seed)
    lam, n = cfg.swarm_size, spec.dimension
    X = lo + width * rng.random((lam, n))
    V = (2.0 * rng.random((lam, n)) - 1.0) * width / 10.0
    archive = EvaluationArchive(n)
    particles = []
    for j in range(lam):
        f = _evaluate(objective, X[j], noise_rng, j, 1)
        particles.append(Particle(X[j].copy(), V[j].copy(), f, X[j].copy(), f))
        archive.append(Evaluation(X[j].copy(), f, 1, j))
    best = min(range(lam), key=lambda j: particles[j].pbest_f)
    return SwarmState(
        particles=particles,
        gbest_x=particles[best].pbest_x.copy(),
        gbest_f=particles[best].pbest_f,
        archive=archive,
        rng=rng,
        est_rng=est_rng,
        noise_rng=noise_rng,
    )


def velocity_update(
    p: Particle,
    state: SwarmState,
    g: Optional[Union[GradientEstimate, np.ndarray]],
    cfg: PsoConfig,
    rng,
) -> np.ndarray:
    """New velocity; ``g`` is subtracted (descent) when supplied.

    Draws ``r1`` then ``r2``, one uniform per dimension each.
    """
    n = p.x.shape[0]
    r1 = rng.random(n)
    r2 = rng.random(n)
    v = cfg.w * p.v + cfg.c1 * r1 * (p.pbest_x - p.x) + cfg.c2 * r2 * (state.gbest_x - p.x)
    if g is not None:
        grad = g.g if isinstance(g, GradientEstimate) else np.asarray(g, dtype=float)
        v = v - cfg.c3 * grad
    if cfg.v_max is not None:
        vmax = np.asarray(cfg.v_max, dtype=float)
        v = np.clip(v, -vmax, vmax)
    return v


def position_update(
    p: Particle, v_new, cfg: PsoConfig, bounds: tuple[np.ndarray, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Move by ``v_new * dt`` and absorb at the box walls.

    Returns ``(x, v)``; velocity components that hit a wall are zeroed.
    """
    lo, hi = bounds
    x = p.x + np.asarray(v_new, dtype=float) * cfg.dt
    out = (x < lo) | (x > hi)
    v = np.where(out, 0.0, v_new)
    return np.clip(x, lo, hi), v


def _wls_sigma(objective: Objective, cfg: PsoConfig) -> np.ndarray:
    return cfg.sigma_frac * objective.spec.width


def _estimate_gradients(
    state: SwarmState, objective: Objective, cfg: PsoConfig, pending: list
) -> list[Optional[GradientEstimate]]:
    lam = len(state.particles)
    out: list[Optional[GradientEstimate]] = [None] * lam
    if not cfg.uses_gradient or (state.iteration - 1) % cfg.grad_every:
        return out
    bounds = (objective.spec.lower, objective.spec.upper)
    it = state.iteration + 1

    if cfg.estimator == "wls":
        X, F = state.archive.snapshot(cfg.max_lookback)
        P = np.array([p.x for p in state.particles])
        fP = np.array([p.f for p in state.particles])
        try:
            G, ok, eff = wls_batch(X, F, P, fP, _wls_sigma(objective, cfg), cfg.ridge)
        except InsufficientDataError:
            return out
        for j in range(lam):
            if ok[j]:
                out[j] = GradientEstimate(G[j], float(eff[j]), True, X.shape[0])
        return out

    for j, p in enumerate(state.particles):
        if cfg.estimator == "fd":
            est = finite_difference_gradient(
                objective, p.x, FdConfig(cfg.fd_epsilon), bounds=bounds,
                rng=state.noise_rng, sink=pending, iteration=it, particle_id=j,
            )
        else:
            sigma = cfg.egs_sigma_frac * float(np.mean(objective.spec.width))
            est = egs_gradient(
                objective, p.x, p.f, EgsConfig(cfg.egs_lambda, sigma), state.est_rng,
                bounds=bounds, noise_rng=state.noise_rng, sink=pending,
                iteration=it, particle_id=j,
            )
        if est.condition_ok:
            out[j] = est
    return out


def step(state: SwarmState, objective: Objective, cfg: PsoConfig) -> SwarmState:
    """Advance the swarm by one generation (in place; also returned).

    Gradients are estimated from the archive as it stood at the end of the
    previous generation; this generation's evaluations are appended at the
    end, after the gbest update.
    """
    bounds = (objective.spec.lower, objective.spec.upper)
    pending: list[Evaluation] = []
    grads = _estimate_gradients(state, objective, cfg, pending)
    it = state.iteration + 1
    fresh = []
    for j, p in enumerate(state.particles):
        g = grads[j]
        if g is not None:
            state.grad_used += 1
        v = velocity_update(p, state, g, cfg, state.rng)
        p.x, p.v = position_update(p, v, cfg, bounds)
        p.f = _evaluate(objective, p.x, state.noise_rng, j, it)
        if p.f < p.pbest_f:
            p.pbest_f = p.f
            p.pbest_x = p.x.copy()
        fresh.append(Evaluation(p.x.copy(), p.f, it, j))

    best = min(range(len(state.particles)), key=lambda j: state.particles[j].pbest_f)
    if state.particles[best].pbest_f < state.gbest_f:
        state.gbest_f = state.particles[best].pbest_f
        state.gbest_x = state.particles[best].pbest_x.copy()
        state.gbest_found_at = it
    state.archive.extend(pending)
    state.archive.extend(fresh)
    state.iteration = it
    return state


def _stalled(history: Sequence[float], stall_iters: int, stall_tol: float) -> bool:
    if len(history) <= stall_iters:
        return False
    old, new = history[-1 - stall_iters], history[-1]
    return (old - new) <= stall_tol * abs(old)


def run(
    objective: Objective,
    cfg: PsoConfig,
    callback: Optional[Callable[[SwarmState], None]] = None,
) -> RunResult:
    """Iterate until ``max_iters`` generations or a stall.

    Generation 1 is the initial evaluation.  The run stalls once gbest
    improved by no more than ``stall_tol`` (relative) over the last
    ``stall_iters`` generations.
    """
    objective.reset()
    state = init_swarm(objective, cfg)
    history = [state.gbest_f]
    trace = [(state.iteration, state.gbest_f, state.mean_pbest_f, state.mean_f)]
    if callback:
        callback(state)
    while state.iteration < cfg.max_iters:
        step(state, objective, cfg)
        history.append(state.gbest_f)
        trace.append((state.iteration, state.gbest_f, state.mean_pbest_f, state.mean_f))
        if callback:
            callback(state)
        if _stalled(history, cfg.stall_iters, cfg.stall_tol):
            break
    return RunResult(
        gbest_x=state.gbest_x.copy(),
        gbest_f=state.gbest_f,
        iterations_done=state.iteration,
        gbest_found_at=state.gbest_found_at,
        mean_pbest_f=state.mean_pbest_f,
        archive=state.archive,
        trace=trace,
        config=cfg,
        n_evals=objective.n_evals,
    )


# --- parameter tuning -------------------------------------------------------

OSCILLATION_FRACTION = 0.2


def oscillation_fraction(values: Sequence[float]) -> float:
    """Share of consecutive steps in which ``values`` got worse."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.mean(np.diff(v) > 0))


def _probe(objective: Objective, cfg: PsoConfig, seeds: Sequence[int]) -> tuple[float, float]:
    """Mean final gbest and mean oscillation fraction over probe seeds."""
    finals, osc = [], []
    for s in seeds:
        res = run(objective, cfg.replace(seed=s))
        finals.append(res.gbest_f)
        osc.append(oscillation_fraction([row[3] for row in res.trace]))
    return float(np.mean(finals)), float(np.mean(osc))


def tuning_procedure(
    objective: Objective,
    base_cfg: PsoConfig,
    *,
    seeds: Sequence[int] = (0, 1, 2),
    probe_iters: int = 60,
    c3_start: float = 1e-3,
    c3_factor: float = 2.0,
    c3_limit: float = 1e4,
    grid_step: float = 0.1,
    c1_limit: float = 2.0,
) -> tuple[PsoConfig, list[dict]]:
    """Automated version of the five-step manual tuning schedule.

    1. zero w, c1, c2, c3;
    2. grow c3 geometrically with the other weights at zero (pure gradient
       descent) until the swarm's mean current value oscillates, i.e. gets
       worse in more than ``OSCILLATION_FRACTION`` of the generations; then
       divide by 10 (repeatedly, until stable);
    3. raise w in ``grid_step`` increments while the final gbest improves;
    4. the same for c1;
    5. set ``c2 = 1.25 - c3``.

    c3 is capped at 1.25 so that c2 stays nonnegative; w stays below 1
    and c1 below ``c1_limit``.  Returns the tuned
    config and one trace row per probe.
    """
    probe = base_cfg.replace(
        w=0.0, c1=0.0, c2=0.0, c3=0.0,
        max_iters=probe_iters, stall_iters=probe_iters,
        estimator=base_cfg.estimator if base_cfg.estimator != "none" else "wls",
    )
    trace: list[dict] = []

    def record(stage, cfg, score, osc):
        trace.append({"stage": stage, "w": cfg.w, "c1": cfg.c1, "c2": cfg.c2,
                      "c3": cfg.c3, "gbest": score, "oscillation": osc,
                      "threshold": OSCILLATION_FRACTION})

    # step 2
    c3 = c3_start
    c3_osc = None
    while c3 <= c3_limit:
        cfg = probe.replace(c3=c3)
        score, osc = _probe(objective, cfg, seeds)
        record("c3-scan", cfg, score, osc)
        if osc > OSCILLATION_FRACTION:
            c3_osc = c3
            break
        c3 *= c3_factor
    if c3_osc is None:
        c3 = c3_limit
    else:
        c3 = c3_osc / 10.0
        while c3 > c3_start:
            cfg = probe.replace(c3=c3)
            score, osc = _probe(objective, cfg, seeds)
            record("c3-stable", cfg, score, osc)
            if osc <= OSCILLATION_FRACTION:
                break
            c3 /= 10.0
    c3 = min(c3, 1.25)
    probe = probe.replace(c3=c3)

    # steps 3 and 4
    for name in ("w", "c1"):
        best_score, _ = _probe(objective, probe, seeds)
        record(f"{name}-base", probe, best_score, None)
        k = 1
        while True:
            cand = probe.replace(**{name: round(k * grid_step, 10)})
            score, osc = _probe(objective, cand, seeds)
            record(f"{name}-scan", cand, score, osc)
            if not score < best_score:
                break
            probe, best_score = cand, score
            k += 1
            limit = 1.0 if name == "w" else c1_limit
            if k * grid_step >= limit:
                break

    tuned = base_cfg.replace(w=probe.w, c1=probe.c1, c3=c3, c2=1.25 - c3)
    return tuned, trace
