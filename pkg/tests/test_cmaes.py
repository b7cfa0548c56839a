import numpy as np
import pytest

import helpers as H
from clbfgp.cmaes import default_popsize, optimize


@pytest.mark.parametrize("n", [2, 10])
def test_sphere(n):
    res = H.sphere_run(n)
    assert -res.best_f < 1e-4


def test_shifted_target_within_200_iterations():
    t = np.array([3.0, -2.0])
    res = optimize(lambda x: -float(np.sum((x - t) ** 2)), np.zeros(2), 1.0, 200,
                   np.random.default_rng(0))
    assert np.allclose(res.best_x, t, atol=1e-3)


def test_best_so_far_is_monotone():
    res = optimize(lambda x: -float(np.sum(np.abs(x))), np.ones(4), 1.0, 60,
                   np.random.default_rng(1))
    assert all(b >= a for a, b in zip(res.history, res.history[1:]))
    assert res.best_f >= -4.0


def test_deterministic_for_fixed_rng():
    f = lambda x: -float(np.sum(x ** 2))
    a = optimize(f, np.ones(3), 0.5, 30, np.random.default_rng(7))
    b = optimize(f, np.ones(3), 0.5, 30, np.random.default_rng(7))
    assert np.array_equal(a.best_x, b.best_x)


def test_vectorized_matches_scalar():
    f = lambda x: -float(np.sum(x ** 2))
    a = optimize(f, np.ones(3), 0.5, 20, np.random.default_rng(3))
    b = optimize(lambda X: -np.sum(X ** 2, axis=1), np.ones(3), 0.5, 20,
                 np.random.default_rng(3), vectorized=True)
    assert np.allclose(a.best_x, b.best_x)


def test_empty_parameter_vector():
    res = optimize(lambda x: 1.5, np.zeros(0), 1.0, 10)
    assert res.best_f == 1.5 and res.best_x.size == 0 and res.iterations == 0


def test_non_finite_scores_are_skipped():
    res = optimize(lambda x: np.nan if x[0] > 0 else -float(x[0] ** 2), np.array([-1.0]),
                   0.3, 30, np.random.default_rng(0))
    assert np.isfinite(res.best_f)


def test_argument_checks():
    with pytest.raises(ValueError):
        optimize(lambda x: 0.0, [np.inf], 1.0)
    with pytest.raises(ValueError):
        optimize(lambda x: 0.0, [0.0], 0.0)
    assert default_popsize(2) == 6
