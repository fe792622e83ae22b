import numpy as np
import pytest

from surfmmc.errors import NumericalError
from surfmmc.mmc import Component, DesignState
from surfmmc.optimizer import (MmaState, StopRule, max_relative_change,
                               mma_step, run)


def quadratic(x):
    return ((x[0] - 0.3) ** 2, np.array([2 * (x[0] - 0.3)]),
            np.array([-1.0]), np.zeros((1, 1)), {})


def test_quadratic_converges():
    x, hist = run(quadratic, np.array([0.9]), StopRule(tol=1e-9, max_iters=50),
                  lower=np.array([0.0]), upper=np.array([1.0]))
    assert abs(x[0] - 0.3) < 1e-6
    assert hist[-1].iteration <= 50


def test_zero_gradient_stationary():
    state = MmaState.initial(3)
    x0 = np.array([0.2, 0.5, 0.9])
    x1, state = mma_step(x0, 1.0, np.zeros(3), np.array([-1.0]),
                         np.zeros((1, 3)), state,
                         lower=np.zeros(3), upper=np.ones(3))
    assert np.abs(x1 - x0).max() <= 1e-9


def test_linear_constrained_problem():
    def f(x):
        return (x.sum(), np.ones(2), np.array([1.0 - x.sum()]),
                -np.ones((1, 2)), {})

    x, hist = run(f, np.array([0.9, 0.8]), StopRule(tol=1e-7, max_iters=200),
                  lower=np.zeros(2), upper=np.ones(2))
    assert abs(x.sum() - 1.0) < 1e-4


def test_iterates_respect_bounds_and_move_limit():
    seen = []

    def f(x):
        return (((x - 2.0) ** 2).sum(), 2 * (x - 2.0), np.array([-1.0]),
                np.zeros((1, 4)), {})

    def rec(record, x):
        seen.append(x.copy())

    lb, ub = np.zeros(4), np.ones(4)
    x, _ = run(f, np.full(4, 0.1), StopRule(tol=1e-9, max_iters=40),
               lower=lb, upper=ub, move_limit=0.1, on_record=rec)
    for prev, cur in zip(seen[:-1], seen[1:]):
        assert (cur >= lb - 1e-12).all() and (cur <= ub + 1e-12).all()
        assert np.abs(cur - prev).max() <= 0.1 * 1.0 + 1e-12
    assert np.allclose(x, 1.0)


def test_stop_rule_first_iteration():
    # start at the solution: the first step moves less than tol
    def f(x):
        return ((x[0] - 0.5) ** 2, np.array([2 * (x[0] - 0.5)]),
                np.array([-1.0]), np.zeros((1, 1)), {})

    x, hist = run(f, np.array([0.5]), StopRule(tol=1e-3, max_iters=100),
                  lower=np.array([0.0]), upper=np.array([1.0]))
    assert hist[-1].iteration == 1


def test_history_bounded_by_max_iters():
    def f(x):
        # oscillation-inducing: gradient sign alternates, never converges
        return (np.sin(40 * x[0]), np.array([40 * np.cos(40 * x[0])]),
                np.array([-1.0]), np.zeros((1, 1)), {})

    x, hist = run(f, np.array([0.2]), StopRule(tol=1e-12, max_iters=17),
                  lower=np.array([0.0]), upper=np.array([1.0]))
    iters = [h.iteration for h in hist if h.iteration >= 1]
    assert len(iters) <= 17
    assert hist[-1].iteration == 17


def test_run_deterministic():
    def f(x):
        return (((x - 0.7) ** 2).sum(), 2 * (x - 0.7),
                np.array([x.sum() - 1.2]), np.ones((1, 3)), {})

    x1, h1 = run(f, np.array([0.2, 0.4, 0.6]), StopRule(tol=1e-8, max_iters=60),
                 lower=np.zeros(3), upper=np.ones(3))
    x2, h2 = run(f, np.array([0.2, 0.4, 0.6]), StopRule(tol=1e-8, max_iters=60),
                 lower=np.zeros(3), upper=np.ones(3))
    assert np.array_equal(x1, x2)
    assert [r.objective for r in h1] == [r.objective for r in h2]


def test_design_state_interface():
    comps = [Component(0.4, 0.4, 0.0, 0.3, 0.06, 0.06, 0.06, "p")]
    lower = np.array([0, 0, -3, 0.05, 0.01, 0.01, 0.01])
    upper = np.array([1, 1, 3, 0.6, 0.3, 0.3, 0.3])
    ds = DesignState(comps, lower, upper)
    state = MmaState.initial(7)
    grad = np.array([0.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0])
    new_ds, state = mma_step(ds, 1.0, grad, np.array([-0.5]),
                             np.zeros((1, 7)), state)
    assert isinstance(new_ds, DesignState)
    x0, x1 = ds.flatten(), new_ds.flatten()
    assert (x1 >= lower - 1e-12).all() and (x1 <= upper + 1e-12).all()
    assert (x1[3:] >= x0[3:]).all()   # negative gradients push sizes up


def test_non_finite_gradient_rejected():
    state = MmaState.initial(2)
    with pytest.raises(NumericalError):
        mma_step(np.array([0.5, 0.5]), 1.0, np.array([np.nan, 0.0]),
                 np.array([-1.0]), np.zeros((1, 2)), state,
                 lower=np.zeros(2), upper=np.ones(2))


def test_max_relative_change():
    ch = max_relative_change(np.array([0.5, 0.2]), np.array([0.4, 0.2]),
                             np.zeros(2), np.array([2.0, 1.0]))
    assert ch == pytest.approx(0.05)
