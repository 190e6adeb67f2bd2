import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgpso.errors import DimensionError, DomainError
from rgpso.objective import (
    count_evaluations,
    eval_dropwave,
    eval_griewangk,
    eval_griewangk_noisy,
    eval_stochastic_trig,
    griewangk_gradient,
    make_objective,
)
from conftest import StubRng


def test_dropwave_origin():
    assert eval_dropwave([0.0, 0.0]) == -1.0


def test_dropwave_symmetry():
    assert eval_dropwave([0.3, -1.7]) == eval_dropwave([-1.7, 0.3])


def test_dropwave_one_one_matches_extended_precision():
    mpmath.mp.dps = 40
    r2 = mpmath.mpf(2)
    expected = -(1 + mpmath.cos(12 * mpmath.sqrt(r2))) / (r2 / 2 + 2)
    assert eval_dropwave([1.0, 1.0]) == pytest.approx(float(expected), rel=1e-14)


def test_dropwave_wrong_dimension():
    with pytest.raises(DimensionError):
        eval_dropwave([1.0, 2.0, 3.0])


def test_dropwave_range_on_random_points():
    rng = np.random.default_rng(11)
    pts = rng.uniform(-5.12, 5.12, size=(10_000, 2))
    vals = np.array([eval_dropwave(p) for p in pts])
    assert np.all(vals > -1.0) and np.all(vals < 0.0)


@pytest.mark.parametrize("n", [1, 2, 7])
def test_griewangk_zero(n):
    assert eval_griewangk(np.zeros(n)) == 0.0


def test_griewangk_pi():
    assert eval_griewangk([math.pi]) == pytest.approx(math.pi**2 / 4000 + 2, rel=1e-15)


@pytest.mark.parametrize("n", [2, 5, 10])
def test_griewangk_nonnegative(n):
    rng = np.random.default_rng(n)
    pts = rng.uniform(-600, 600, size=(10_000, n))
    assert min(eval_griewangk(p) for p in pts) >= 0.0


def test_griewangk_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.uniform(-50, 50, size=3)
        h = 1e-6
        fd = np.array([(eval_griewangk(x + h * e) - eval_griewangk(x - h * e)) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(griewangk_gradient(x), fd, atol=1e-7)


def test_noisy_griewangk_stub_noise():
    assert eval_griewangk_noisy(np.zeros(2), StubRng(0.0)) == 0.0
    assert eval_griewangk_noisy(np.zeros(2), StubRng(0.5)) == 0.5


def test_noisy_griewangk_consumes_one_draw():
    rng = StubRng(0.25)
    eval_griewangk_noisy([1.0, 2.0], rng)
    assert rng.calls == 1


def test_noisy_griewangk_seeded_reproducible():
    x = [3.0, -4.0]
    a = eval_griewangk_noisy(x, np.random.default_rng(5))
    b = eval_griewangk_noisy(x, np.random.default_rng(5))
    assert a == b


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-600, 600), min_size=1, max_size=6),
    st.integers(0, 2**32 - 1),
)
def test_noisy_griewangk_bracketing(x, seed):
    det = eval_griewangk(x)
    noisy = eval_griewangk_noisy(x, np.random.default_rng(seed))
    assert det <= noisy <= det + 1.0


def test_stochastic_trig_minimum():
    # 120/x = -pi/2 and 60/y = pi
    x, y = -240.0 / math.pi, 60.0 / math.pi
    assert eval_stochastic_trig([x, y]) == pytest.approx(-2.0, abs=1e-12)


def test_stochastic_trig_zero():
    assert eval_stochastic_trig([120.0 / math.pi, 120.0 / math.pi]) == pytest.approx(0.0, abs=1e-12)


def test_stochastic_trig_singular():
    with pytest.raises(DomainError):
        eval_stochastic_trig([0.0, 1.0])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1000), st.floats(-1000, -0.01))
def test_stochastic_trig_bounded(x, y):
    assert -2.0 <= eval_stochastic_trig([x, y]) <= 2.0


@pytest.mark.parametrize("name", ["dropwave", "griewangk", "stochastic_trig"])
def test_deterministic_objectives_are_pure(name):
    obj = make_objective(name)
    x = np.array([3.3, 7.1])
    assert obj(x) == obj(x)


def test_evaluation_counter():
    obj = make_objective("griewangk")
    assert count_evaluations(obj) == 0
    for _ in range(3):
        obj([1.0, 2.0])
    assert count_evaluations(obj) == 3
    obj.reset()
    assert count_evaluations(obj) == 0


def test_noisy_objective_requires_rng():
    obj = make_objective("griewangk_noise")
    with pytest.raises(ValueError):
        obj([0.0, 0.0])
    assert obj([0.0, 0.0], rng=StubRng(0.5)) == 0.5


def test_unknown_objective():
    with pytest.raises(KeyError):
        make_objective("rastrigin")


def test_default_domains():
    assert make_objective("dropwave").spec.bounds == ((-5.12, 5.12),) * 2
    assert make_objective("griewangk", 3).spec.bounds == ((-600.0, 600.0),) * 3
    assert make_objective("stochastic_trig").spec.bounds == ((1.0, 100.0),) * 2
