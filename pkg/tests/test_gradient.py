import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgpso.errors import DegenerateWeightsError, DimensionError, InsufficientDataError, ZeroGradientError
from rgpso.gradient import (
    EgsConfig,
    EvaluationArchive,
    FdConfig,
    WlsConfig,
    egs_gradient,
    finite_difference_gradient,
    gaussian_weights,
    normalize_direction,
    wls_batch,
    wls_regional_gradient,
)
from rgpso.objective import Evaluation, make_objective


def archive_of(points, values, iteration=1):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    arch = EvaluationArchive(pts.shape[1])
    for i, (p, v) in enumerate(zip(pts, values)):
        arch.append(Evaluation(p, float(v), iteration, i))
    return arch


class CountingNormalRng:
    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self.normals = 0

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.normals += int(np.prod(size)) if size is not None else 1
        return self._rng.normal(loc, scale, size)


# archive


def test_archive_append_one():
    arch = EvaluationArchive(2)
    arch.append(Evaluation(np.array([1.0, 2.0]), 3.0, 1, 0))
    assert len(arch) == 1


def test_archive_ring_eviction():
    arch = EvaluationArchive(1, capacity=3)
    for k in range(4):
        arch.append(Evaluation(np.array([float(k)]), float(k), k + 1, 0))
    assert len(arch) == 3
    assert arch.values.tolist() == [1.0, 2.0, 3.0]


def test_archive_history_immutable():
    arch = EvaluationArchive(2)
    p = np.array([1.0, 2.0])
    arch.append(Evaluation(p, 5.0, 1, 0))
    p[0] = 99.0
    X, F = arch.snapshot()
    arch.append(Evaluation(np.array([7.0, 8.0]), 6.0, 2, 0))
    assert arch.positions[0].tolist() == [1.0, 2.0]
    assert arch.values[0] == 5.0
    with pytest.raises(ValueError):
        X[0, 0] = 3.0


def test_archive_dimension_mismatch():
    arch = EvaluationArchive(2)
    with pytest.raises(DimensionError):
        arch.append(Evaluation(np.array([1.0, 2.0, 3.0]), 0.0, 1, 0))


def test_archive_iteration_order():
    arch = EvaluationArchive(1)
    arch.append(Evaluation(np.array([0.0]), 0.0, 2, 0))
    with pytest.raises(ValueError):
        arch.append(Evaluation(np.array([0.0]), 0.0, 1, 0))


def test_archive_grows_past_initial_buffer():
    arch = EvaluationArchive(3)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(500, 3))
    for i, p in enumerate(pts):
        arch.append(Evaluation(p, float(i), 1 + i // 10, i % 10))
    np.testing.assert_array_equal(arch.positions, pts)
    assert arch.values.tolist() == list(map(float, range(500)))


def test_archive_max_lookback():
    arch = archive_of(np.arange(10.0)[:, None], np.arange(10.0))
    X, F = arch.snapshot(max_lookback=4)
    assert F.tolist() == [6.0, 7.0, 8.0, 9.0]


def test_archive_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    arch = EvaluationArchive(2)
    for k in range(30):
        arch.append(Evaluation(rng.normal(size=2) * 1e3, float(rng.normal()), 1 + k // 5, k % 5))
    path = tmp_path / "archive.csv"
    arch.to_csv(path)
    assert path.read_text().splitlines()[0] == "iteration,particle_id,x_1,x_2,f"
    back = EvaluationArchive.from_csv(path)
    np.testing.assert_array_equal(back.positions, arch.positions)
    np.testing.assert_array_equal(back.values, arch.values)
    assert [r.iteration for r in back.records] == [r.iteration for r in arch.records]
    assert [r.particle_id for r in back.records] == [r.particle_id for r in arch.records]


# gaussian weights


def test_weights_equidistant():
    arch = archive_of([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])
    np.testing.assert_allclose(gaussian_weights(arch, [0.0, 0.0], WlsConfig(sigma=0.3)), [0.5, 0.5])


def test_weights_single_record():
    arch = archive_of([[123.0, -45.0]], [0.0])
    assert gaussian_weights(arch, [0.0, 0.0], WlsConfig(sigma=1.0)).tolist() == [1.0]


def test_weights_ratio_matches_gaussian():
    sigma = 0.7
    d1, d2 = 0.4, 1.3
    arch = archive_of([[d1, 0.0], [0.0, d2]], [0.0, 0.0])
    w = gaussian_weights(arch, [0.0, 0.0], WlsConfig(sigma=sigma))
    assert w[0] / w[1] == pytest.approx(math.exp((d2**2 - d1**2) / (2 * sigma)), rel=1e-12)


def test_weights_far_records_do_not_underflow():
    # exp(-0.5 * 1e6) is 0 in double precision; the max-shift keeps the weights usable
    arch = archive_of([[1000.0], [1001.0]], [0.0, 0.0])
    w = gaussian_weights(arch, [0.0], WlsConfig(sigma=1.0))
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w[0] > w[1]


def test_weights_degenerate():
    arch = archive_of([[np.inf]], [0.0])
    with pytest.raises(DegenerateWeightsError):
        gaussian_weights(arch, [0.0], WlsConfig(sigma=1.0))


def test_weights_empty_archive():
    with pytest.raises(InsufficientDataError):
        gaussian_weights(EvaluationArchive(2), [0.0, 0.0], WlsConfig(sigma=1.0))


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(1, 4),
    m=st.integers(1, 40),
    sigma=st.floats(1e-2, 1e2),
    seed=st.integers(0, 2**32 - 1),
)
def test_weights_normalized_and_monotone(n, m, sigma, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=3.0, size=(m, n))
    x = rng.normal(size=n)
    w = gaussian_weights(archive_of(pts, np.zeros(m)), x, WlsConfig(sigma=sigma))
    assert abs(w.sum() - 1.0) <= 1e-12
    d2 = np.sum((pts - x) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-15)


# WLS


def test_wls_affine_exact():
    rng = np.random.default_rng(1)
    a = np.array([2.5, -1.0, 0.25])
    pts = rng.uniform(-5, 5, size=(20, 3))
    arch = archive_of(pts, pts @ a + 7.0)
    x = np.array([0.3, 0.1, -0.2])
    est = wls_regional_gradient(arch, x, float(x @ a + 7.0), WlsConfig(sigma=4.0, ridge=0.0))
    assert est.condition_ok
    np.testing.assert_allclose(est.g, a, atol=1e-10)
    assert est.samples_used == 20


def test_wls_collinear_is_singular():
    x = np.array([1.0, 1.0])
    t = np.array([-2.0, -1.0, 0.5, 1.0, 3.0])
    pts = x + t[:, None] * np.array([1.0, 2.0])
    arch = archive_of(pts, t)
    est = wls_regional_gradient(arch, x, 0.0, WlsConfig(sigma=5.0, ridge=0.0))
    assert not est.condition_ok


def test_wls_quadratic_ball():
    rng = np.random.default_rng(2)
    sigma = 1.0
    x = np.array([1.0, 1.0])
    r = 0.1 * sigma * np.sqrt(rng.random(200))
    th = rng.uniform(0, 2 * np.pi, 200)
    pts = x + np.c_[r * np.cos(th), r * np.sin(th)]
    arch = archive_of(pts, np.sum(pts**2, axis=1))
    est = wls_regional_gradient(arch, x, 2.0, WlsConfig(sigma=sigma))
    np.testing.assert_allclose(est.g, [2.0, 2.0], rtol=0.02)


def test_wls_insufficient_samples():
    arch = archive_of([[0.0, 0.0], [1.0, 0.0]], [0.0, 1.0])
    with pytest.raises(InsufficientDataError):
        wls_regional_gradient(arch, [0.0, 0.0], 0.0, WlsConfig(sigma=1.0))


def test_wls_query_dimension():
    arch = archive_of(np.eye(3), np.zeros(3))
    with pytest.raises(DimensionError):
        wls_regional_gradient(arch, [0.0, 0.0], 0.0, WlsConfig(sigma=1.0))


def test_wls_effective_weight_single_point_density():
    # one record at the query point: sum of beta is the peak Gaussian density
    arch = archive_of([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]], [0.0, 0.0, 0.0])
    est = wls_regional_gradient(arch, [0.0, 0.0], 0.0, WlsConfig(sigma=2.0))
    assert est.effective_weight == pytest.approx(3 / (2 * math.pi * 2.0), rel=1e-12)


def test_wls_batch_matches_single_queries():
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(60, 2))
    vals = np.sin(pts[:, 0]) + pts[:, 1] ** 2
    arch = archive_of(pts, vals)
    P = rng.normal(size=(5, 2))
    fP = np.sin(P[:, 0]) + P[:, 1] ** 2
    X, F = arch.snapshot()
    G, ok, eff = wls_batch(X, F, P, fP, 0.5)
    for j in range(5):
        est = wls_regional_gradient(arch, P[j], fP[j], WlsConfig(sigma=0.5))
        np.testing.assert_allclose(G[j], est.g, rtol=1e-10, atol=1e-12)
        assert ok[j] == est.condition_ok


def test_wls_anisotropic_sigma():
    rng = np.random.default_rng(9)
    a = np.array([1.0, -3.0])
    pts = rng.uniform([-100, -1], [100, 1], size=(30, 2))
    arch = archive_of(pts, pts @ a)
    est = wls_regional_gradient(arch, [0.0, 0.0], 0.0, WlsConfig(sigma=[400.0, 0.04], ridge=0.0))
    np.testing.assert_allclose(est.g, a, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_wls_archive_determinism(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(25, 2))
    vals = rng.normal(size=25)
    cfg = WlsConfig(sigma=0.8)
    e1 = wls_regional_gradient(archive_of(pts, vals), [0.1, 0.2], 0.0, cfg)
    e2 = wls_regional_gradient(archive_of(pts, vals), [0.1, 0.2], 0.0, cfg)
    assert e1.g.tobytes() == e2.g.tobytes()


def test_wls_config_validation():
    with pytest.raises(ValueError):
        WlsConfig(sigma=0.0)
    with pytest.raises(ValueError):
        WlsConfig(sigma=1.0, ridge=-1.0)


# finite differences


def test_fd_linear_exact():
    est = finite_difference_gradient(lambda x: 3.0 * x[0], [1.0], FdConfig(epsilon=2.0**-20))
    assert est.g[0] == 3.0


@pytest.mark.parametrize("x,eps", [(0.37, 1e-6), (-12.5, 1e-3), (1e4, 0.5)])
def test_fd_linear_any_point(x, eps):
    est = finite_difference_gradient(lambda v: 3.0 * v[0], [x], FdConfig(epsilon=eps))
    # exact up to rounding of x + eps
    assert est.g[0] == pytest.approx(3.0, rel=1e-9 * max(1.0, abs(x) / eps))


def test_fd_square():
    est = finite_difference_gradient(lambda x: x[0] ** 2, [1.0], FdConfig(epsilon=1e-6))
    assert est.g[0] == pytest.approx(2.000001, rel=1e-9)


def test_fd_constant():
    est = finite_difference_gradient(lambda x: 4.0, [1.0, 2.0, 3.0], FdConfig())
    assert est.g.tolist() == [0.0, 0.0, 0.0]


def test_fd_evaluation_count_and_sink():
    obj = make_objective("griewangk", 3)
    sink = []
    finite_difference_gradient(obj, np.array([1.0, 2.0, 3.0]), FdConfig(), sink=sink, iteration=4, particle_id=2)
    assert obj.n_evals == 4
    assert len(sink) == 4
    assert all(ev.iteration == 4 and ev.particle_id == 2 for ev in sink)


def test_fd_backward_step_at_upper_bound():
    bounds = (np.array([0.0]), np.array([1.0]))
    sink = []
    est = finite_difference_gradient(lambda x: x[0] ** 2, [1.0], FdConfig(epsilon=1e-3), bounds=bounds, sink=sink)
    assert all(ev.position[0] <= 1.0 for ev in sink)
    assert est.g[0] == pytest.approx(1.999, rel=1e-9)


def test_fd_domain_error_propagates():
    obj = make_objective("stochastic_trig", bounds=((-1.0, 1.0), (-1.0, 1.0)))
    with pytest.raises(ValueError):
        finite_difference_gradient(obj, np.array([0.0, 0.5]), FdConfig())


def test_fd_config_validation():
    with pytest.raises(ValueError):
        FdConfig(epsilon=0.0)


# EGS


def test_egs_constant():
    est = egs_gradient(lambda x: 1.0, [0.0, 0.0], 1.0, EgsConfig(), np.random.default_rng(0))
    assert est.g.tolist() == [0.0, 0.0]
    assert not est.condition_ok
    assert est.direction is None


def test_egs_affine_direction():
    a = np.array([1.0, -2.0, 0.5])
    x = np.array([0.3, 0.3, 0.3])
    est = egs_gradient(
        lambda v: float(v @ a), x, float(x @ a), EgsConfig(lambda_test=10_000, sigma_mut=1.0), np.random.default_rng(42)
    )
    cos = est.g @ a / (np.linalg.norm(est.g) * np.linalg.norm(a))
    assert cos > 0.95
    np.testing.assert_allclose(est.direction, est.g / np.linalg.norm(est.g))


def test_egs_affine_scale():
    # E[g] = lambda * sigma^2 / n * a
    a = np.array([1.0, 2.0])
    lam, sig = 20_000, 0.5
    est = egs_gradient(lambda v: float(v @ a), [0.0, 0.0], 0.0, EgsConfig(lam, sig), np.random.default_rng(7))
    np.testing.assert_allclose(est.g / lam, sig**2 / 2 * a, rtol=0.05)


def test_egs_single_sample_collinear():
    sink = []
    est = egs_gradient(lambda v: float(v @ v), [1.0, 2.0], 5.0, EgsConfig(lambda_test=1), np.random.default_rng(3), sink=sink)
    d = sink[0].position - np.array([1.0, 2.0])
    assert abs(est.g[0] * d[1] - est.g[1] * d[0]) < 1e-12
    np.testing.assert_allclose(est.g, (sink[0].value - 5.0) * d)


def test_egs_draw_count():
    rng = CountingNormalRng(0)
    sink = []
    egs_gradient(lambda v: 0.0, np.zeros(4), 0.0, EgsConfig(lambda_test=7), rng, sink=sink)
    assert rng.normals == 28
    assert len(sink) == 7


def test_egs_config_validation():
    with pytest.raises(ValueError):
        EgsConfig(lambda_test=0)
    with pytest.raises(ValueError):
        EgsConfig(sigma_mut=0.0)


# normalization


def test_normalize_three_four():
    np.testing.assert_allclose(normalize_direction([3.0, 4.0]), [0.6, 0.8], rtol=1e-15)


def test_normalize_unit_idempotent():
    u = np.array([0.0, 1.0, 0.0])
    assert normalize_direction(u).tolist() == u.tolist()


def test_normalize_zero():
    with pytest.raises(ZeroGradientError):
        normalize_direction([0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_normalize_unit_norm(v):
    e = normalize_direction(v)
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-12)
    assert e @ np.asarray(v) > 0
