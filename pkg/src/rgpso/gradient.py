"""Gradient estimators for the swarm.

The main estimator fits a local linear model to the swarm's stored
evaluation history (weighted least squares with Gaussian distance
weights), so it costs no extra objective evaluations.  Forward finite
differences and evolutionary-gradient-search sampling are kept as
baselines; both spend fresh evaluations and hand them to a sink so they
end up in the archive as well.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import (
    DegenerateWeightsError,
    DimensionError,
    InsufficientDataError,
    ZeroGradientError,
)
from .objective import Evaluation, Objective

# relative pivot threshold for declaring the normal matrix singular
SINGULAR_RTOL = 1e-12
# default ridge, relative to trace(A) / n
AUTO_RIDGE = 1e-10


class EvaluationArchive:
    """Append-only store of every (position, value) pair a run produced.

    Storage is a pair of growable numpy buffers so the estimators can read
    a zero-copy snapshot.  With ``capacity`` set the archive behaves as a
    ring buffer keeping only the newest ``capacity`` records.
    """

    def __init__(self, dimension: int, capacity: Optional[int] = None):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.dimension = dimension
        self.capacity = capacity
        size = 64
        self._x = np.empty((size, dimension))
        self._f = np.empty(size)
        self._it = np.empty(size, dtype=np.int64)
        self._pid = np.empty(size, dtype=np.int64)
        self._start = 0
        self._stop = 0

    def __len__(self) -> int:
        return self._stop - self._start

    def _grow(self, extra: int) -> None:
        need = len(self) + extra
        if self._stop + extra <= self._x.shape[0]:
            return
        size = max(64, 2 * need)
        for name in ("_x", "_f", "_it", "_pid"):
            old = getattr(self, name)
            new = np.empty((size,) + old.shape[1:], dtype=old.dtype)
            new[: len(self)] = old[self._start : self._stop]
            setattr(self, name, new)
        self._stop = len(self)
        self._start = 0

    def append(self, ev: Evaluation) -> None:
        pos = np.asarray(ev.position, dtype=float)
        if pos.shape != (self.dimension,):
            raise DimensionError(
                f"archive holds {self.dimension}-vectors, got shape {pos.shape}"
            )
        if len(self) and ev.iteration < self._it[self._stop - 1]:
            raise ValueError("records must be appended in iteration order")
        self._grow(1)
        i = self._stop
        self._x[i] = pos
        self._f[i] = ev.value
        self._it[i] = ev.iteration
        self._pid[i] = ev.particle_id
        self._stop += 1
        if self.capacity is not None and len(self) > self.capacity:
            self._start = self._stop - self.capacity

    def extend(self, evs) -> None:
        for ev in evs:
            self.append(ev)

    def snapshot(self, max_lookback: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """Read-only views ``(X, F)`` of the current contents."""
        start = self._start
        if max_lookback is not None:
            start = max(start, self._stop - max_lookback)
        X = self._x[start : self._stop]
        F = self._f[start : self._stop]
        X.flags.writeable = False
        F.flags.writeable = False
        return X, F

    @property
    def positions(self) -> np.ndarray:
        return self._x[self._start : self._stop].copy()

    @property
    def values(self) -> np.ndarray:
        return self._f[self._start : self._stop].copy()

    @property
    def records(self) -> list[Evaluation]:
        return [
            Evaluation(self._x[i].copy(), float(self._f[i]), int(self._it[i]), int(self._pid[i]))
            for i in range(self._start, self._stop)
        ]

    def to_csv(self, path) -> None:
        n = self.dimension
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "particle_id"] + [f"x_{i + 1}" for i in range(n)] + ["f"])
            for i in range(self._start, self._stop):
                w.writerow(
                    [int(self._it[i]), int(self._pid[i])]
                    + [repr(float(v)) for v in self._x[i]]
                    + [repr(float(self._f[i]))]
                )

    @classmethod
    def from_csv(cls, path, capacity: Optional[int] = None) -> "EvaluationArchive":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n = len(header) - 3
            if n < 1 or header[:2] != ["iteration", "particle_id"] or header[-1] != "f":
                raise ValueError(f"{path}: unexpected archive header {header}")
            archive = cls(n, capacity)
            for row in reader:
                if not row:
                    continue
                archive.append(
                    Evaluation(
                        np.array([float(v) for v in row[2:-1]]),
                        float(row[-1]),
                        int(row[0]),
                        int(row[1]),
                    )
                )
        return archive


@dataclass(frozen=True)
class WlsConfig:
    sigma: Union[float, Sequence[float]]
    min_samples: Optional[int] = None
    ridge: Optional[float] = None  # None: AUTO_RIDGE * trace / n
    max_lookback: Optional[int] = None

    def __post_init__(self):
        if np.any(np.asarray(self.sigma, dtype=float) <= 0):
            raise ValueError("sigma must be positive")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(frozen=True)
class FdConfig:
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class EgsConfig:
    lambda_test: int = 10
    sigma_mut: float = 1.0

    def __post_init__(self):
        if self.lambda_test < 1:
            raise ValueError("lambda_test must be >= 1")
        if not self.sigma_mut > 0:
            raise ValueError("sigma_mut must be positive")


@dataclass
class GradientEstimate:
    g: np.ndarray
    effective_weight: float = float("nan")
    condition_ok: bool = True
    samples_used: int = 0
    direction: Optional[np.ndarray] = None


def normalize_direction(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroGradientError("cannot normalize a zero (or non-finite) gradient")
    return g / norm


def _sigma_vector(sigma, n: int) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        return np.full(n, float(s))
    if s.shape != (n,):
        raise DimensionError(f"sigma needs {n} entries, got {s.shape}")
    return s


def _log_beta(D: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Unnormalized log Gaussian density (constant factor dropped)."""
    return -0.5 * np.einsum("...k,k->...", D * D, 1.0 / sigma)


def _normalized_weights(logb: np.ndarray) -> np.ndarray:
    top = np.max(logb, axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateWeightsError("all Gaussian weights underflowed")
    b = np.exp(logb - top)
    return b / np.sum(b, axis=-1, keepdims=True)


def gaussian_weights(archive: EvaluationArchive, x, cfg: WlsConfig) -> np.ndarray:
    """Normalized Gaussian weights of the archived points around ``x``.

    The covariance is ``diag(sigma)``; ``sigma`` may be a scalar or one
    entry per dimension.
    """
    X, _ = archive.snapshot(cfg.max_lookback)
    if X.shape[0] == 0:
        raise InsufficientDataError("archive is empty")
    x = np.asarray(x, dtype=float)
    s = _sigma_vector(cfg.sigma, archive.dimension)
    return _normalized_weights(_log_beta(X - x, s))


def wls_batch(
    X: np.ndarray,
    F: np.ndarray,
    P: np.ndarray,
    fP: np.ndarray,
    sigma,
    ridge: Optional[float] = None,
    min_samples: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regional gradients at several query points against one snapshot.

    ``X, F`` are the archived positions/values, ``P, fP`` the query points
    and their current values.  Returns ``(G, ok, eff_weight)`` where ``G``
    has one gradient row per query point.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    fP = np.atleast_1d(np.asarray(fP, dtype=float))
    m, n = P.shape
    N = X.shape[0]
    if min_samples is None:
        min_samples = n + 1
    if N < min_samples:
        raise InsufficientDataError(f"{N} archived samples, need {min_samples}")
    s = _sigma_vector(sigma, n)

    # (m, n, N): coordinate-major keeps the reductions below on contiguous rows
    D = np.ascontiguousarray(X.T)[None, :, :] - P[:, :, None]
    dF = F[None, :] - fP[:, None]  # (m, N)
    Ds = D * (1.0 / np.sqrt(s))[None, :, None]
    logb = -0.5 * np.einsum("jki,jki->ji", Ds, Ds)
    top = np.max(logb, axis=1)
    if not np.all(np.isfinite(top)):
        raise DegenerateWeightsError("all Gaussian weights underflowed")
    shifted = np.exp(logb - top[:, None])
    total = np.sum(shifted, axis=1)
    W = shifted / total[:, None]
    # Σβ including the Gaussian normalizing constant, for diagnostics only
    const = -0.5 * n * math.log(2.0 * math.pi) - 0.5 * float(np.sum(np.log(s)))
    with np.errstate(under="ignore", over="ignore"):
        eff = np.exp(top + const) * total

    WD = D * W[:, None, :]
    A = WD @ D.transpose(0, 2, 1)
    b = (WD @ dF[:, :, None])[:, :, 0]
    tr = np.trace(A, axis1=1, axis2=2)
    lam = AUTO_RIDGE * tr / n if ridge is None else np.full(m, float(ridge))
    A = A + lam[:, None, None] * np.eye(n)

    ev = np.linalg.eigvalsh(A)
    ok = (ev[:, 0] > SINGULAR_RTOL * ev[:, -1]) & (ev[:, -1] > 0)
    G = np.zeros((m, n))
    if np.all(ok):
        G = np.linalg.solve(A, b[:, :, None])[:, :, 0]
    else:
        for j in range(m):
            if ok[j]:
                G[j] = np.linalg.solve(A[j], b[j])
            else:
                with np.errstate(all="ignore"):
                    G[j] = np.linalg.pinv(A[j]) @ b[j]
    ok &= np.all(np.isfinite(G), axis=1)
    return G, ok, eff


def wls_regional_gradient(
    archive: EvaluationArchive, x, f_x: float, cfg: WlsConfig
) -> GradientEstimate:
    """Weighted least-squares regional gradient at ``x`` from the archive.

    Fits ``f(v_i) - f_x ~ g . (v_i - x)`` over all archived records with
    Gaussian weights centred on ``x``.
    """
    X, F = archive.snapshot(cfg.max_lookback)
    x = np.asarray(x, dtype=float)
    if x.shape != (archive.dimension,):
        raise DimensionError(f"query point must have {archive.dimension} components")
    G, ok, eff = wls_batch(X, F, x[None, :], np.array([f_x]), cfg.sigma, cfg.ridge, cfg.min_samples)
    return GradientEstimate(G[0], float(eff[0]), bool(ok[0]), int(X.shape[0]))


def _evaluate(f: Callable, x: np.ndarray, rng) -> float:
    if isinstance(f, Objective):
        return f(x, rng=rng)
    return float(f(x))


def finite_difference_gradient(
    f: Callable,
    x,
    cfg: FdConfig,
    *,
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
    sink=None,
    iteration: int = 0,
    particle_id: int = -1,
) -> GradientEstimate:
    """Forward differences, one step per coordinate (n + 1 evaluations).

    A coordinate whose forward step would leave ``bounds`` uses a backward
    step instead.  Every evaluation is appended to ``sink`` if given.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    eps = cfg.epsilon
    fx = _evaluate(f, x, rng)
    if sink is not None:
        sink.append(Evaluation(x.copy(), fx, iteration, particle_id))
    g = np.empty(n)
    for i in range(n):
        step = eps
        if bounds is not None and x[i] + eps > bounds[1][i]:
            step = -eps
        xi = x.copy()
        xi[i] += step
        fi = _evaluate(f, xi, rng)
        if sink is not None:
            sink.append(Evaluation(xi, fi, iteration, particle_id))
        g[i] = (fi - fx) / step
    return GradientEstimate(g, float("nan"), bool(np.all(np.isfinite(g))), n + 1)


def egs_gradient(
    f: Callable,
    x,
    f_x: float,
    cfg: EgsConfig,
    rng: np.random.Generator,
    *,
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
    noise_rng: Optional[np.random.Generator] = None,
    sink=None,
    iteration: int = 0,
    particle_id: int = -1,
) -> GradientEstimate:
    """Evolutionary-gradient-search estimate from ``lambda_test`` mutants.

    Draws exactly ``lambda_test * n`` normals from ``rng``.  Mutants are
    clipped into ``bounds`` when given.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    z = rng.normal(0.0, cfg.sigma_mut / math.sqrt(n), size=(cfg.lambda_test, n))
    V = x + z
    if bounds is not None:
        V = np.clip(V, bounds[0], bounds[1])
    g = np.zeros(n)
    for v in V:
        fv = _evaluate(f, v, noise_rng)
        if sink is not None:
            sink.append(Evaluation(v.copy(), fv, iteration, particle_id))
        g += (fv - f_x) * (v - x)
    try:
        direction = normalize_direction(g)
        ok = True
    except ZeroGradientError:
        direction, ok = None, False
    return GradientEstimate(g, float("nan"), ok, cfg.lambda_test, direction)
