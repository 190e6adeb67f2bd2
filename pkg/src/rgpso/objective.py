"""Objective functions: the evaluation-counting wrapper and the benchmark set.

All benchmarks are minimization problems.  Noisy objectives never touch
global random state; the caller hands in a ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    dimension: int
    bounds: tuple[tuple[float, float], ...]
    stochastic: bool = False
    target: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if len(self.bounds) != self.dimension:
            raise ValueError(
                f"expected {self.dimension} bound pairs, got {len(self.bounds)}"
            )
        for i, (lo, hi) in enumerate(self.bounds):
            if not lo < hi:
                raise ValueError(f"bounds[{i}]: lower {lo} is not below upper {hi}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds], dtype=float)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True)
class Evaluation:
    """One archived objective evaluation."""

    position: np.ndarray
    value: float
    iteration: int = 0
    particle_id: int = -1
    rng_draws: int = 0


def _as_vector(x, n: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise DimensionError(f"expected {n} components, got {x.shape[0]}")
    if x.shape[0] < 1:
        raise DimensionError("empty input vector")
    return x


def eval_dropwave(x) -> float:
    x = _as_vector(x, 2)
    r2 = x[0] * x[0] + x[1] * x[1]
    return float(-(1.0 + math.cos(12.0 * math.sqrt(r2))) / (0.5 * r2 + 2.0))


def eval_griewangk(x) -> float:
    x = _as_vector(x)
    i = np.arange(1, x.shape[0] + 1, dtype=float)
    return float(np.sum(x * x) / 4000.0 - np.prod(np.cos(x / np.sqrt(i))) + 1.0)


def griewangk_gradient(x) -> np.ndarray:
    """Analytic gradient of the Griewangk function."""
    x = _as_vector(x)
    sq = np.sqrt(np.arange(1, x.shape[0] + 1, dtype=float))
    c = np.cos(x / sq)
    s = np.sin(x / sq)
    grad = x / 2000.0
    for i in range(x.shape[0]):
        others = np.prod(np.delete(c, i))
        grad[i] += s[i] / sq[i] * others
    return grad


def eval_griewangk_noisy(x, rng) -> float:
    """Griewangk plus one ``U[0, 1)`` draw taken from ``rng``."""
    return eval_griewangk(x) + float(rng.random())


def eval_stochastic_trig(x) -> float:
    x = _as_vector(x, 2)
    if x[0] == 0.0 or x[1] == 0.0:
        raise DomainError(f"stochastic_trig is singular at zero components: {x}")
    return float(math.sin(120.0 / x[0]) + math.cos(60.0 / x[1]))


class Objective:
    """Evaluation-counting handle around an objective function.

    ``func`` receives ``(x)`` for deterministic objectives and ``(x, rng)``
    for stochastic ones.  The counter is safe to bump from several threads.
    """

    def __init__(self, func: Callable, spec: ObjectiveSpec, draws_per_eval: int = 0):
        self.func = func
        self.spec = spec
        self.draws_per_eval = draws_per_eval
        self._count = 0
        self._lock = threading.Lock()

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def stochastic(self) -> bool:
        return self.spec.stochastic

    def __call__(self, x, rng: Optional[np.random.Generator] = None) -> float:
        x = _as_vector(x, self.spec.dimension)
        if self.spec.stochastic:
            if rng is None:
                raise ValueError(f"objective {self.spec.name!r} needs an rng stream")
            value = self.func(x, rng)
        else:
            value = self.func(x)
        with self._lock:
            self._count += 1
        return value

    @property
    def n_evals(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


def count_evaluations(objective: Objective) -> int:
    return objective.n_evals


DEFAULT_BOUNDS = {
    "dropwave": (-5.12, 5.12),
    "griewangk": (-600.0, 600.0),
    "griewangk_noise": (-600.0, 600.0),
    "stochastic_trig": (1.0, 100.0),
}

_FIXED_DIM = {"dropwave": 2, "stochastic_trig": 2}

BENCHMARKS = tuple(DEFAULT_BOUNDS)


def make_objective(
    name: str,
    dimension: int = 2,
    bounds: Optional[Sequence[Sequence[float]]] = None,
) -> Objective:
    """Build one of the benchmark objectives by name.

    The inventory objective lives in :mod:`rgpso.inventory`
    (:func:`~rgpso.inventory.make_chain_objective`) since it needs a chain.
    """
    if name not in DEFAULT_BOUNDS:
        raise KeyError(f"unknown objective {name!r}; choose from {sorted(DEFAULT_BOUNDS)}")
    if name in _FIXED_DIM and dimension != _FIXED_DIM[name]:
        raise DimensionError(f"{name} is {_FIXED_DIM[name]}-dimensional, got {dimension}")
    if bounds is None:
        bounds = [DEFAULT_BOUNDS[name]] * dimension
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)

    if name == "dropwave":
        spec = ObjectiveSpec(name, 2, bounds, target=-1.0)
        return Objective(eval_dropwave, spec)
    if name == "griewangk":
        spec = ObjectiveSpec(name, dimension, bounds, target=0.0)
        return Objective(eval_griewangk, spec)
    if name == "griewangk_noise":
        spec = ObjectiveSpec(name, dimension, bounds, stochastic=True, target=0.0)
        return Objective(eval_griewangk_noisy, spec, draws_per_eval=1)
    spec = ObjectiveSpec(name, 2, bounds, target=-2.0)
    return Objective(eval_stochastic_trig, spec)
