"""tests/test_exact.py — Exact robust evaluation, value iteration and policy iteration."""

import numpy as np
import pytest

from robustadp.errors import NonConvergenceError
from robustadp.exact import (
    apply_T_opt,
    apply_T_pi,
    default_max_iters,
    evaluate_policy_exact,
    evaluate_policy_nominal,
    robust_policy_iteration,
    solve_optimal_exact,
)
from robustadp.model import RobustMdp, Singleton, policy_transitions
from tests.helpers import random_interval_model, random_singleton_model, self_loop, stay_box


def _classical_vi(model, tol=1e-12):
    P = np.array([[model.uset(x, u).p[: model.n_states] for u in range(model.n_actions)]
                  for x in range(model.n_states)])
    r = model.reward[: model.n_states]
    v = np.zeros(model.n_states)
    while True:
        nv = (r + model.discount * P @ v).max(axis=1)
        if np.max(np.abs(nv - v)) <= tol:
            return nv
        v = nv


def _classical_pi(model):
    policy = (0,) * model.n_states
    while True:
        v = evaluate_policy_nominal(model, policy)
        P = np.array([[model.uset(x, u).p for u in range(model.n_actions)]
                      for x in range(model.n_states)])
        q = model.reward + model.discount * P @ v
        improved = tuple(int(a) for a in np.argmax(q, axis=1))
        if improved == policy:
            return policy
        policy = improved


# ── T^pi ─────────────────────────────────────────────────────────────

class TestOperator:
    def test_one_application(self):
        assert np.allclose(apply_T_pi(self_loop(), (0,), [0.0]), [1.0])

    def test_fixed_point(self):
        assert np.allclose(apply_T_pi(self_loop(), (0,), [2.0]), [2.0])

    def test_worst_case_picks_lowest_stay(self):
        V = 3.0
        assert apply_T_pi(stay_box(), (0,), [V])[0] == pytest.approx(1.0 + 0.9 * 0.6 * V)

    def test_sup_norm_contraction(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            model = random_interval_model(rng, 5, 2, discount=0.8, n_terminals=1)
            policy = tuple(int(a) for a in rng.integers(0, 2, size=5))
            y, z = rng.normal(size=5), rng.normal(size=5)
            gap = np.max(np.abs(apply_T_pi(model, policy, y) - apply_T_pi(model, policy, z)))
            assert gap <= 0.8 * np.max(np.abs(y - z)) + 1e-12

    def test_monotone(self):
        rng = np.random.default_rng(2)
        model = random_interval_model(rng, 4, 2)
        y = rng.normal(size=4)
        z = y + rng.random(4)
        assert np.all(apply_T_pi(model, (0, 1, 0, 1), y) <= apply_T_pi(model, (0, 1, 0, 1), z) + 1e-12)

    def test_constant_shift_without_terminals(self):
        rng = np.random.default_rng(4)
        model = random_interval_model(rng, 4, 1)
        v = rng.normal(size=4)
        shifted = apply_T_pi(model, (0,) * 4, v + 1.5)
        assert np.allclose(shifted, apply_T_pi(model, (0,) * 4, v) + model.discount * 1.5)


# ── Evaluation ───────────────────────────────────────────────────────

class TestEvaluate:
    def test_self_loop(self):
        assert evaluate_policy_exact(self_loop(), (0,))[0] == pytest.approx(2.0, abs=1e-9)

    def test_stay_box_closed_form(self):
        v = evaluate_policy_exact(stay_box(), (0,))
        assert v[0] == pytest.approx(1.0 / (1.0 - 0.54), abs=1e-8)

    def test_singleton_matches_linear_solve(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            model = random_singleton_model(rng, 6, 2)
            policy = tuple(int(a) for a in rng.integers(0, 2, size=6))
            exact = evaluate_policy_exact(model, policy)
            P = policy_transitions(model, policy)
            direct = np.linalg.solve(np.eye(6) - model.discount * P, model.policy_rewards(policy))
            assert np.allclose(exact, direct, atol=1e-8)

    def test_robust_below_nominal(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            model = random_interval_model(rng, 5, 2, n_terminals=1)
            policy = tuple(int(a) for a in rng.integers(0, 2, size=5))
            robust = evaluate_policy_exact(model, policy)
            for selector in ("nominal", "centroid"):
                assert np.all(robust <= evaluate_policy_nominal(model, policy, selector) + 1e-9)

    def test_non_convergence_carries_residual(self):
        with pytest.raises(NonConvergenceError) as info:
            evaluate_policy_exact(self_loop(discount=0.99), (0,), tol=1e-12, max_iters=5)
        assert info.value.iterations == 5
        assert info.value.residual > 0.0

    def test_discount_one_needs_max_iters(self):
        with pytest.raises(ValueError, match="max_iters"):
            default_max_iters(1.0, 1e-10)

    def test_discount_one_with_terminals(self):
        model = stay_box(discount=1.0)
        v = evaluate_policy_exact(model, (0,), max_iters=10_000)
        assert v[0] == pytest.approx(1.0 / 0.4, abs=1e-8)


# ── Control ──────────────────────────────────────────────────────────

class TestControl:
    def test_two_actions(self):
        model = RobustMdp(1, 2, [[0.0, 1.0]], 0.5, [[Singleton([1.0]), Singleton([1.0])]])
        v, policy = solve_optimal_exact(model)
        assert v[0] == pytest.approx(2.0, abs=1e-9)
        assert policy == (1,)

    def test_stopping_toy(self):
        # stop pays 5 now; continuing pays 0 and drifts to a state worth at most 4
        stop = Singleton([0.0, 0.0, 1.0])
        model = RobustMdp(
            n_states=2,
            n_actions=2,
            reward=[[0.0, 5.0], [0.0, 4.0]],
            discount=0.9,
            uncertainty=[
                [Singleton([0.0, 1.0, 0.0]), stop],
                [Singleton([0.0, 0.0, 1.0]), stop],
            ],
            n_terminals=1,
        )
        v, policy = solve_optimal_exact(model)
        best = max(evaluate_policy_exact(model, p)[0] for p in model.all_policies())
        assert v[0] == pytest.approx(best, abs=1e-9)
        assert policy == (1, 1)
        assert v[0] == pytest.approx(5.0)

    def test_singleton_matches_classical_vi(self):
        rng = np.random.default_rng(9)
        model = random_singleton_model(rng, 5, 3)
        v, _ = solve_optimal_exact(model)
        assert np.allclose(v, _classical_vi(model), atol=1e-8)

    def test_greedy_fixed_point(self):
        rng = np.random.default_rng(10)
        model = random_interval_model(rng, 4, 3, n_terminals=1)
        v, _ = solve_optimal_exact(model)
        assert np.allclose(apply_T_opt(model, v), v, atol=1e-9)

    def test_policy_iteration_matches_classical(self):
        rng = np.random.default_rng(12)
        model = random_singleton_model(rng, 3, 2)
        _, policy = robust_policy_iteration(model)
        assert policy == _classical_pi(model)

    def test_policy_iteration_matches_value_iteration(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            model = random_interval_model(rng, 3, 2, n_terminals=1)
            v_vi, _ = solve_optimal_exact(model)
            v_pi, _ = robust_policy_iteration(model)
            assert np.allclose(v_vi, v_pi, atol=1e-8)
