"""
robustadp/arpi.py
Approximate robust policy iteration over state-action features.

Outer loop: w_{i+1} evaluates the greedy policy pi*_{w_i}.
Inner loop (theta iteration):

    theta_{j+1} = A^-1 (b + gamma * (1/N) sum_t phi(x_t, u_t) sigma_{P(x_t, u_t)}(Phi*_{w_i} theta_j))

where Phi*_{w_i} theta assigns next state x' the value phi(x', pi*_{w_i}(x'))^T theta.
A and b are estimated once from the data and shared by every outer iteration.
"""

from __future__ import annotations
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import pandas as pd
import scipy.linalg

from robustadp.errors import DimensionError, DivergenceError, NonConvergenceError, RankDeficientError
from robustadp.exact import greedy_from_q
from robustadp.linear import MAX_CONDITION, FixedPointResult, factorize, solve_fixed_point
from robustadp.model import Policy, RobustMdp
from robustadp.sampling import Trajectory, unique_pairs
from robustadp.sigma import sigma

logger = logging.getLogger(__name__)

DEFAULT_OUTER_MAX = 30


@dataclass(frozen=True, eq=False)
class StateActionFeatureMap:
    """phi: (state, action) -> R^k over a finite state and action set."""
    dimension: int
    n_states: int
    n_actions: int
    evaluator: Callable[[int, int], np.ndarray]

    def __call__(self, state: int, action: int) -> np.ndarray:
        return np.asarray(self.evaluator(state, action), dtype=float)

    @cached_property
    def tensor(self) -> np.ndarray:
        """phi(x, u) stacked into shape (|X|, |U|, k)."""
        out = np.empty((self.n_states, self.n_actions, self.dimension))
        for x in range(self.n_states):
            for u in range(self.n_actions):
                out[x, u] = self(x, u)
        out.setflags(write=False)
        return out

    def greedy_rows(self, policy: Policy) -> np.ndarray:
        """Phi*: row x is phi(x, pi(x))."""
        return self.tensor[np.arange(self.n_states), np.asarray(policy, dtype=int)]

    @classmethod
    def from_tensor(cls, tensor: np.ndarray) -> "StateActionFeatureMap":
        tensor = np.array(tensor, dtype=float)
        if tensor.ndim != 3:
            raise DimensionError(f"feature tensor must have shape (|X|, |U|, k), got {tensor.shape}")
        tensor.setflags(write=False)
        n, m, k = tensor.shape
        return cls(k, n, m, lambda x, u: tensor[x, u])

    @classmethod
    def tabular(cls, n_states: int, n_actions: int) -> "StateActionFeatureMap":
        return cls.from_tensor(np.eye(n_states * n_actions).reshape(n_states, n_actions, -1))


def greedy_policy(w: np.ndarray, features: StateActionFeatureMap) -> Policy:
    """pi*_w(x) = argmax_u phi(x, u)^T w, ties to the lowest action."""
    return greedy_from_q(features.tensor @ np.asarray(w, dtype=float))


# ── Estimated matrices ────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ArpiMatrices:
    """A ~ Phi^T D Phi and b ~ Phi^T D r over state-action features, plus the sigma term."""
    A: np.ndarray
    b: np.ndarray
    discount: float
    model: RobustMdp
    features: StateActionFeatureMap
    pair_states: np.ndarray
    pair_actions: np.ndarray
    pair_weights: np.ndarray

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    @cached_property
    def factor(self):
        return factorize(self.A)

    def c_hat(self, theta: np.ndarray, policy: Policy) -> np.ndarray:
        values = self.features.greedy_rows(policy) @ theta
        full = self.model.extend_values(values)
        sig = np.array([
            sigma(self.model.uset(x, u), full).value
            for x, u in zip(self.pair_states, self.pair_actions)
        ])
        rows = self.features.tensor[self.pair_states, self.pair_actions]
        return rows.T @ (self.pair_weights * sig)


def estimate_arpi_matrices(
    traj: Trajectory,
    features: StateActionFeatureMap,
    model: RobustMdp,
) -> ArpiMatrices:
    if len(traj) == 0:
        raise ValueError("cannot estimate from an empty trajectory")
    if (features.n_states, features.n_actions) != (model.n_states, model.n_actions):
        raise DimensionError("feature map does not match the model")
    norm = float(traj.normalizer)
    rows = features.tensor[traj.states, traj.actions]
    states, actions, counts = unique_pairs(traj.states, traj.actions)
    A = rows.T @ rows / norm
    condition = float(np.linalg.cond(A))
    if not condition <= MAX_CONDITION:
        raise RankDeficientError(condition)
    return ArpiMatrices(
        A=A,
        b=rows.T @ traj.rewards / norm,
        discount=model.discount,
        model=model,
        features=features,
        pair_states=states,
        pair_actions=actions,
        pair_weights=counts / norm,
    )


# ── Inner and outer loops ─────────────────────────────────────────────

def arpi_inner(
    matrices: ArpiMatrices,
    w_i: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 10_000,
    theta0: np.ndarray | None = None,
) -> FixedPointResult:
    """Evaluate the greedy policy of w_i; theta starts at w_i unless theta0 is given."""
    policy = greedy_policy(w_i, matrices.features)
    gamma = matrices.discount

    def step(theta: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(matrices.factor, matrices.b + gamma * matrices.c_hat(theta, policy))

    start = np.asarray(w_i if theta0 is None else theta0, dtype=float)
    return solve_fixed_point(step, start, tol, max_iters, "ARPI inner loop")


@dataclass(frozen=True)
class ArpiIteration:
    outer: int
    inner_iterations: int
    residual: float
    policy_changes: int


@dataclass(eq=False)
class ArpiResult:
    weights: np.ndarray
    policy: Policy
    diagnostics: list[ArpiIteration] = field(default_factory=list)
    converged: bool = False
    cycled: bool = False
    matrices: ArpiMatrices | None = None
    history: list[np.ndarray] = field(default_factory=list)

    def diagnostics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(d.outer, d.inner_iterations, d.residual, d.policy_changes) for d in self.diagnostics],
            columns=["outer", "inner_iterations", "residual", "policy_changes"],
        )


def arpi(
    traj: Trajectory,
    features: StateActionFeatureMap,
    model: RobustMdp,
    inner_tol: float = 1e-10,
    outer_max: int = DEFAULT_OUTER_MAX,
    inner_max: int = 10_000,
    w0: np.ndarray | None = None,
) -> ArpiResult:
    """
    Run the outer improvement loop until the greedy policy stops changing on
    the sampled states, a policy repeats (reported as cycling), or outer_max
    is reached.
    """
    matrices = estimate_arpi_matrices(traj, features, model)
    sampled = np.unique(np.concatenate([traj.states, traj.next_states[~traj.terminal]]))
    w = np.zeros(features.dimension) if w0 is None else np.asarray(w0, dtype=float)
    result = ArpiResult(weights=w, policy=greedy_policy(w, features), matrices=matrices)
    result.history.append(w)
    seen = {tuple(np.asarray(result.policy)[sampled])}

    for i in range(outer_max):
        before = np.asarray(greedy_policy(w, features))
        try:
            inner = arpi_inner(matrices, w, inner_tol, inner_max)
        except DivergenceError as e:
            raise DivergenceError(e.iteration, e.norm, outer_index=i) from e
        except NonConvergenceError as e:
            e.add_note(f"in outer iteration {i}")
            raise
        w = inner.weights
        after = np.asarray(greedy_policy(w, features))
        changes = int(np.count_nonzero(before[sampled] != after[sampled]))
        result.diagnostics.append(ArpiIteration(i, inner.iterations, inner.residual, changes))
        result.history.append(w)
        logger.info("ARPI outer %d: %d inner iterations, %d policy changes",
                    i, inner.iterations, changes)
        if changes == 0:
            result.converged = True
            break
        key = tuple(after[sampled])
        if key in seen:
            logger.warning("ARPI policy cycle detected at outer iteration %d", i)
            result.cycled = True
            break
        seen.add(key)

    result.weights = w
    result.policy = greedy_policy(w, features)
    return result
