"""
robustadp/exact.py
Exact tabular robust dynamic programming.

  apply_T_pi             (T^pi v)(x) = r(x, pi(x)) + gamma * sigma_{P(x, pi(x))}(v)
  evaluate_policy_exact  fixed point of T^pi by repeated application
  solve_optimal_exact    robust value iteration with the sup-over-actions operator
  robust_policy_iteration  exact evaluation + greedy improvement

These are the ground-truth oracles for the approximate solvers.
"""

from __future__ import annotations
import logging
import math

import numpy as np

from robustadp.errors import NonConvergenceError, PolicyCycleError
from robustadp.model import (
    Policy,
    RobustMdp,
    Selector,
    ValueVector,
    check_policy,
    make_policy,
    policy_transitions,
)
from robustadp.sigma import sigma

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
_ITER_MARGIN = 100
_MAX_PI_ITERS = 10_000


def default_max_iters(discount: float, tol: float) -> int:
    """ceil(log(tol * (1 - gamma)) / log(gamma)) plus a margin."""
    if discount >= 1.0:
        raise ValueError("discount 1 needs an explicit max_iters")
    return math.ceil(math.log(tol * (1.0 - discount)) / math.log(discount)) + _ITER_MARGIN


def _resolve_max_iters(model: RobustMdp, tol: float, max_iters: int | None) -> int:
    if max_iters is not None:
        return max_iters
    return default_max_iters(model.discount, tol)


# ── Operators ─────────────────────────────────────────────────────────

def apply_T_pi(model: RobustMdp, policy: Policy, v: ValueVector) -> ValueVector:
    """One application of the robust fixed-policy Bellman operator."""
    check_policy(model, policy)
    full = model.extend_values(v)
    out = np.empty(model.n_states)
    for x, u in enumerate(policy):
        out[x] = model.reward[x, u] + model.discount * sigma(model.uset(x, u), full).value
    return out


def q_values(model: RobustMdp, v: ValueVector) -> np.ndarray:
    """Robust state-action values r(x,u) + gamma * sigma_{P(x,u)}(v); shape (|X|, |U|)."""
    full = model.extend_values(v)
    q = np.empty((model.n_states, model.n_actions))
    for x in range(model.n_states):
        for u in range(model.n_actions):
            q[x, u] = model.reward[x, u] + model.discount * sigma(model.uset(x, u), full).value
    return q


def apply_T_opt(model: RobustMdp, v: ValueVector) -> ValueVector:
    return q_values(model, v).max(axis=1)


def greedy_from_q(q: np.ndarray) -> Policy:
    # np.argmax returns the first maximiser, i.e. the lowest action index
    return make_policy(np.argmax(q, axis=1))


# ── Evaluation ────────────────────────────────────────────────────────

def evaluate_policy_exact(
    model: RobustMdp,
    policy: Policy,
    tol: float = DEFAULT_TOL,
    max_iters: int | None = None,
) -> ValueVector:
    """
    Robust value V^pi by iterating T^pi from zero.

    Stops once ||T^pi v - v||_inf <= tol and returns the last image.
    Raises NonConvergenceError carrying the last residual.
    """
    check_policy(model, policy)
    limit = _resolve_max_iters(model, tol, max_iters)
    v = np.zeros(model.n_states)
    residual = math.inf
    for it in range(1, limit + 1):
        nv = apply_T_pi(model, policy, v)
        residual = float(np.max(np.abs(nv - v))) if model.n_states else 0.0
        v = nv
        if residual <= tol:
            logger.debug("policy evaluation converged in %d iterations", it)
            return v
    raise NonConvergenceError(limit, residual, "robust policy evaluation")


def evaluate_policy_nominal(
    model: RobustMdp,
    policy: Policy,
    selector: Selector = "nominal",
) -> ValueVector:
    """Classical evaluation under one member of each set: solve (I - gamma P^pi_X) v = r^pi."""
    P = policy_transitions(model, policy, selector)[:, : model.n_states]
    r = model.policy_rewards(policy)
    return np.linalg.solve(np.eye(model.n_states) - model.discount * P, r)


# ── Control ───────────────────────────────────────────────────────────

def solve_optimal_exact(
    model: RobustMdp,
    tol: float = DEFAULT_TOL,
    max_iters: int | None = None,
) -> tuple[ValueVector, Policy]:
    """Robust value iteration; returns V* and the greedy policy (ties -> lowest action)."""
    limit = _resolve_max_iters(model, tol, max_iters)
    v = np.zeros(model.n_states)
    residual = math.inf
    for it in range(1, limit + 1):
        q = q_values(model, v)
        nv = q.max(axis=1)
        residual = float(np.max(np.abs(nv - v))) if model.n_states else 0.0
        v = nv
        if residual <= tol:
            logger.info("robust value iteration converged in %d iterations", it)
            return v, greedy_from_q(q_values(model, v))
    raise NonConvergenceError(limit, residual, "robust value iteration")


def robust_policy_iteration(
    model: RobustMdp,
    tol: float = DEFAULT_TOL,
    max_iters: int | None = None,
) -> tuple[ValueVector, Policy]:
    """
    Alternate exact robust evaluation and greedy improvement until the
    policy is stable.

    An action is only switched when it beats the current one by more than
    the evaluation tolerance, so evaluation noise cannot make the loop
    oscillate between tied actions.
    """
    bound = min(model.n_actions ** model.n_states, _MAX_PI_ITERS)
    policy: Policy = (0,) * model.n_states
    margin = 10.0 * tol
    for it in range(1, bound + 2):
        v = evaluate_policy_exact(model, policy, tol, max_iters)
        q = q_values(model, v)
        current = q[np.arange(model.n_states), np.asarray(policy, dtype=int)]
        best = np.argmax(q, axis=1)
        switch = q[np.arange(model.n_states), best] > current + margin
        if not np.any(switch):
            logger.info("robust policy iteration stable after %d improvements", it - 1)
            return v, policy
        policy = make_policy(np.where(switch, best, policy))
    raise PolicyCycleError(f"policy iteration did not stabilise within {bound} improvements")
