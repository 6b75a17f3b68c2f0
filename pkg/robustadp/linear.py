"""
robustadp/linear.py
Linear function approximation for robust policy evaluation.

  FeatureMap            phi(x) in R^k, materialised as Phi (|X| x k)
  ProjectionWeights     d > 0, the weights of the projection norm
  ExplorationKernel     P_hat, the law that generates the data
  WeightedProjection    Pi = Phi (Phi^T D Phi)^-1 Phi^T D, factorised once
  rpvi_exact            w_{k+1} = (Phi^T D Phi)^-1 (Phi^T D r + gamma Phi^T D sigma_pi(Phi w_k))

plus the contraction-assumption checkers, a sampled contraction-ratio check and the
two-state instance on which the projected iteration diverges.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
import yaml

from robustadp.errors import (
    AssumptionError,
    DimensionError,
    DivergenceError,
    ErgodicityError,
    ImproperKernelError,
    ModelFormatError,
    NonConvergenceError,
    RankDeficientError,
    UnreachableStateError,
)
from robustadp.exact import apply_T_pi
from robustadp.model import (
    DIST_TOL,
    Policy,
    RobustMdp,
    Selector,
    Singleton,
    ValueVector,
    check_policy,
    nominal_of,
    policy_transitions,
)
from robustadp.sigma import sigma

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e9
MAX_CONDITION = 1e12


# ── Features and weights ──────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FeatureMap:
    """phi: state -> R^k."""
    dimension: int
    evaluator: Callable[[int], np.ndarray]

    def __call__(self, state: int) -> np.ndarray:
        return np.asarray(self.evaluator(state), dtype=float)

    def matrix(self, n_states: int) -> np.ndarray:
        """Phi with phi(x)^T in row x."""
        if n_states == 0:
            return np.zeros((0, self.dimension))
        return np.vstack([self(x) for x in range(n_states)])

    @classmethod
    def from_matrix(cls, phi: np.ndarray) -> "FeatureMap":
        phi = np.array(phi, dtype=float)
        if phi.ndim == 1:
            phi = phi.reshape(-1, 1)
        phi.setflags(write=False)
        return cls(phi.shape[1], lambda x: phi[x])

    @classmethod
    def tabular(cls, n_states: int) -> "FeatureMap":
        return cls.from_matrix(np.eye(n_states))


def feature_matrix(features: FeatureMap | np.ndarray, n_states: int) -> np.ndarray:
    if isinstance(features, FeatureMap):
        phi = features.matrix(n_states)
    else:
        phi = np.asarray(features, dtype=float)
        if phi.ndim == 1:
            phi = phi.reshape(-1, 1)
    if phi.shape[0] != n_states:
        raise DimensionError(f"feature matrix has {phi.shape[0]} rows, model has {n_states} states")
    return phi


@dataclass(frozen=True, eq=False)
class ProjectionWeights:
    """Positive weights d_j defining ||v||_d = sqrt(sum_j d_j v_j^2)."""
    d: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.d, dtype=float)
        if d.ndim != 1 or np.any(~np.isfinite(d)) or np.any(d <= 0.0):
            raise ValueError("projection weights must be a vector of strictly positive numbers")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d)


def _weight_vector(weights: ProjectionWeights | np.ndarray) -> np.ndarray:
    if isinstance(weights, ProjectionWeights):
        return weights.d
    return ProjectionWeights(weights).d


def d_norm(v: np.ndarray, d: ProjectionWeights | np.ndarray) -> float:
    d = d.d if isinstance(d, ProjectionWeights) else np.asarray(d, dtype=float)
    return math.sqrt(float(np.sum(d * np.asarray(v, dtype=float) ** 2)))


# ── Exploration kernels ───────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ExplorationKernel:
    """
    P_hat over X ∪ Z.

    matrix has shape (|X|, |X ∪ Z|) when the exploration policy is folded in,
    or (|X|, |U|, |X ∪ Z|) when it is given per action.
    """
    matrix: np.ndarray
    n_terminals: int = 0

    def __post_init__(self) -> None:
        P = np.array(self.matrix, dtype=float)
        if P.ndim not in (2, 3):
            raise DimensionError(f"kernel must be 2- or 3-dimensional, got shape {P.shape}")
        if P.shape[-1] != P.shape[0] + self.n_terminals:
            raise DimensionError(
                f"kernel rows have {P.shape[-1]} outcomes, expected {P.shape[0] + self.n_terminals}"
            )
        if np.any(P < -DIST_TOL) or np.any(np.abs(P.sum(axis=-1) - 1.0) > DIST_TOL):
            raise ValueError("kernel rows must be probability distributions")
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def per_action(self) -> bool:
        return self.matrix.ndim == 3

    def row(self, state: int, action: int | None = None) -> np.ndarray:
        if self.per_action:
            if action is None:
                raise ValueError("a per-action kernel needs an action")
            return self.matrix[state, action]
        return self.matrix[state]

    def for_policy(self, policy: Policy) -> "ExplorationKernel":
        """The state kernel obtained by following policy in a per-action kernel."""
        if not self.per_action:
            return self
        rows = self.matrix[np.arange(self.n_states), np.asarray(policy, dtype=int)]
        return ExplorationKernel(rows, self.n_terminals)

    def is_proper(self) -> bool:
        """From every state a terminal is reached within |X| steps with positive probability."""
        if self.per_action:
            raise ValueError("properness is defined for a state kernel; call for_policy first")
        if self.n_terminals == 0:
            return False
        n = self.n_states
        step = self.matrix[:, :n] > 0.0
        reach = self.matrix[:, n:].sum(axis=1) > 0.0
        for _ in range(n):
            reach = reach | (step.astype(int) @ reach.astype(int) > 0)
        return bool(np.all(reach))

    @classmethod
    def on_policy(cls, model: RobustMdp, policy: Policy, selector: Selector = "nominal") -> "ExplorationKernel":
        return cls(policy_transitions(model, policy, selector), model.n_terminals)

    @classmethod
    def nominal(cls, model: RobustMdp, selector: Selector = "nominal") -> "ExplorationKernel":
        """Per-action kernel built from one member of every uncertainty set."""
        return cls(nominal_of(model, selector), model.n_terminals)

    @classmethod
    def uniform(cls, n_states: int, n_terminals: int = 0) -> "ExplorationKernel":
        n = n_states + n_terminals
        return cls(np.full((n_states, n), 1.0 / n), n_terminals)


# ── Feature and kernel files ──────────────────────────────────────────

def _read_yaml(path: str | Path, key: str) -> tuple[np.ndarray, dict]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ModelFormatError(f"{path}: {e}") from e
    if not isinstance(data, dict) or key not in data:
        raise ModelFormatError(f"{path}: expected a mapping with '{key}'")
    try:
        return np.array(data[key], dtype=float), data
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"{path}: '{key}' is not a numeric array") from e


def load_features(path: str | Path) -> np.ndarray:
    """
    Read a feature file:

        features:          # one row per state, or per state and action
          - [1.0, 0.0]
          - [1.0, 1.0]
    """
    phi, _ = _read_yaml(path, "features")
    if phi.ndim not in (2, 3):
        raise ModelFormatError(f"{path}: features must be a matrix or a 3-d tensor, got shape {phi.shape}")
    return phi


def load_kernel(path: str | Path, n_terminals: int = 0) -> tuple[ExplorationKernel, np.ndarray | None]:
    """
    Read an exploration kernel file; rows run over X ∪ Z:

        kernel:            # (|X|, |X ∪ Z|) or (|X|, |U|, |X ∪ Z|)
          - [0.5, 0.5]
          - [0.5, 0.5]
        start: [1.0, 0.0]  # optional start distribution
    """
    P, data = _read_yaml(path, "kernel")
    start = data.get("start")
    try:
        kernel = ExplorationKernel(P, n_terminals)
    except ValueError as e:
        raise ModelFormatError(f"{path}: {e}") from e
    return kernel, None if start is None else np.asarray(start, dtype=float)


# ── Weights from a kernel ─────────────────────────────────────────────

def stationary_weights(
    kernel: ExplorationKernel,
    tol: float = 1e-13,
    max_iters: int = 1_000_000,
) -> ProjectionWeights:
    """
    d_j = lim_t P_hat(x_t = j | x_0 = i), by power iteration from the first state.

    Requires an ergodic chain: a periodic chain never settles and a
    reducible one leaves some d_j at zero; both raise ErgodicityError.
    """
    if kernel.n_terminals:
        raise ValueError("stationary weights need a kernel without terminal states")
    if kernel.per_action:
        raise ValueError("stationary weights need a state kernel; call for_policy first")
    P = kernel.matrix
    d = np.zeros(kernel.n_states)
    d[0] = 1.0
    for it in range(1, max_iters + 1):
        nd = d @ P
        change = float(np.abs(nd - d).sum())
        d = nd
        if change <= tol:
            break
    else:
        raise ErgodicityError(
            f"power iteration did not settle after {max_iters} steps (chain periodic?)"
        )
    d = d / d.sum()
    if np.any(d <= 1e-12):
        raise ErgodicityError("chain is reducible: some states have zero stationary mass")
    logger.debug("stationary weights after %d power steps", it)
    return ProjectionWeights(d)


def visit_weights(kernel: ExplorationKernel, start: np.ndarray) -> ProjectionWeights:
    """d_j = sum_t P_hat(x_t = j), i.e. d^T = s^T (I - P_hat_X)^-1."""
    if not kernel.n_terminals:
        raise ValueError("visit weights need a kernel with terminal states")
    if kernel.per_action:
        raise ValueError("visit weights need a state kernel; call for_policy first")
    n = kernel.n_states
    start = np.asarray(start, dtype=float)
    if start.shape != (n,):
        raise DimensionError(f"start distribution has shape {start.shape}, expected ({n},)")
    system = np.eye(n) - kernel.matrix[:, :n]
    if not np.linalg.cond(system) <= MAX_CONDITION:
        raise ImproperKernelError("I - P_hat_X is singular: the kernel never terminates")
    d = np.linalg.solve(system.T, start)
    if np.any(d <= 1e-12):
        unreachable = [int(j) for j in np.flatnonzero(d <= 1e-12)]
        raise UnreachableStateError(f"states {unreachable} are never visited")
    return ProjectionWeights(d)


# ── Projection ────────────────────────────────────────────────────────

class WeightedProjection:
    """
    Projection onto span(Phi) in the d-weighted norm.

    The Gram matrix Phi^T D Phi is checked for conditioning and Cholesky
    factorised once.
    """

    def __init__(self, phi: np.ndarray, d: ProjectionWeights | np.ndarray) -> None:
        self.phi = np.asarray(phi, dtype=float)
        self.d = _weight_vector(d)
        if self.d.shape != (self.phi.shape[0],):
            raise DimensionError(
                f"weights have shape {self.d.shape}, features have {self.phi.shape[0]} rows"
            )
        self.gram = self.phi.T @ (self.d[:, None] * self.phi)
        self._factor = factorize(self.gram)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """(Phi^T D Phi)^-1 rhs."""
        return scipy.linalg.cho_solve(self._factor, rhs)

    def weighted(self, v: np.ndarray) -> np.ndarray:
        """Phi^T D v."""
        return self.phi.T @ (self.d * v)

    def weights(self, v: np.ndarray) -> np.ndarray:
        return self.solve(self.weighted(v))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.phi @ self.weights(v)


def factorize(gram: np.ndarray):
    """Cholesky factor of a k x k normal-equation matrix, refusing ill-conditioned ones."""
    condition = float(np.linalg.cond(gram)) if gram.size else math.inf
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise RankDeficientError(condition)
    try:
        return scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as e:
        raise RankDeficientError(condition) from e


def project(v: ValueVector, phi: np.ndarray, d: ProjectionWeights | np.ndarray) -> ValueVector:
    """Phi w with w = (Phi^T D Phi)^-1 Phi^T D v."""
    return WeightedProjection(phi, d).apply(np.asarray(v, dtype=float))


# ── Contraction assumption ────────────────────────────────────────────

@dataclass(frozen=True)
class Assumption2Check:
    """Outcome of gamma * sup_P P(x'|x,u) <= beta * P_hat(x'|x,u) over x, x' in X."""
    holds: bool
    beta: float
    witness: tuple[int, int] | None

    def __str__(self) -> str:
        where = f" at (x={self.witness[0]}, x'={self.witness[1]})" if self.witness else ""
        state = "holds" if self.holds else "fails"
        return f"{state} with beta = {self.beta:.6g}{where}"


def _ratios(gamma: float, sup: np.ndarray, phat: np.ndarray) -> np.ndarray:
    # 0/0 -> 0, c/0 -> inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = gamma * sup / phat
    return np.where(phat > 0.0, ratio, np.where(sup > 0.0, math.inf, 0.0))


def _summarise(table: np.ndarray) -> Assumption2Check:
    if table.size == 0:
        return Assumption2Check(True, 0.0, None)
    flat = int(np.argmax(table))
    beta = float(table.flat[flat])
    row, col = np.unravel_index(flat, table.shape)
    return Assumption2Check(beta < 1.0, beta, (int(row), int(col)))


def check_assumption2(
    model: RobustMdp,
    policy: Policy,
    kernel: ExplorationKernel,
    policy_aware: bool = True,
) -> Assumption2Check:
    """
    beta = max over x, x' in X of gamma * sup_P P(x'|x,u) / P_hat(x'|x,u).

    With policy_aware the action is u = pi(x); otherwise every action is
    checked, which covers all policies at once. Transitions into terminal
    states are exempt. For interval boxes the supremum is taken as the
    upper bound hi(x').
    """
    check_policy(model, policy)
    n = model.n_states
    table = np.zeros((n, n))
    for x in range(n):
        actions = [policy[x]] if policy_aware else range(model.n_actions)
        for u in actions:
            sup = model.uset(x, u).sup_mass()[:n]
            phat = kernel.row(x, u if kernel.per_action else None)[:n]
            table[x] = np.maximum(table[x], _ratios(model.discount, sup, phat))
    return _summarise(table)


def check_state_action_assumption(
    model: RobustMdp,
    policy: Policy,
    kernel: ExplorationKernel,
) -> Assumption2Check:
    """
    The same bound on the state-action chain:
    gamma * sup_P P(x', pi(x') | x, pi(x)) <= beta * P_hat(x', pi(x') | x, pi(x)).

    Pairs are indexed by x * |U| + u; the witness is reported as states.
    """
    check_policy(model, policy)
    n, m = model.n_states, model.n_actions
    table = np.zeros((n, n))
    for x in range(n):
        u = policy[x]
        sup = model.uset(x, u).sup_mass()[:n]
        phat = kernel.row(x, u if kernel.per_action else None)[:n]
        # mass of (x', u') is the state mass when u' = pi(x'), zero otherwise
        pair_sup = np.zeros(n * m)
        pair_hat = np.zeros(n * m)
        targets = np.arange(n) * m + np.asarray(policy, dtype=int)
        pair_sup[targets] = sup
        pair_hat[targets] = phat
        table[x] = _ratios(model.discount, pair_sup, pair_hat)[targets]
    return _summarise(table)


# ── Projected robust value iteration ──────────────────────────────────

@dataclass(frozen=True, eq=False)
class FixedPointResult:
    """Final weights of a weight iteration with its per-step residuals."""
    weights: np.ndarray
    iterations: int
    residuals: tuple[float, ...]

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def solve_fixed_point(
    step: Callable[[np.ndarray], np.ndarray],
    w0: np.ndarray,
    tol: float,
    max_iters: int,
    what: str = "weight iteration",
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> FixedPointResult:
    """Iterate w <- step(w) until ||w_{k+1} - w_k||_inf <= tol."""
    w = np.array(w0, dtype=float)
    residuals: list[float] = []
    for it in range(1, max_iters + 1):
        nw = step(w)
        norm = float(np.max(np.abs(nw))) if nw.size else 0.0
        if not math.isfinite(norm) or norm > divergence_threshold:
            raise DivergenceError(it, norm)
        residual = float(np.max(np.abs(nw - w))) if nw.size else 0.0
        residuals.append(residual)
        w = nw
        logger.debug("%s %d: residual %.3e", what, it, residual)
        if residual <= tol:
            logger.info("%s converged in %d iterations", what, it)
            return FixedPointResult(w, it, tuple(residuals))
    raise NonConvergenceError(max_iters, residuals[-1] if residuals else math.inf, what)


def robust_backup(model: RobustMdp, policy: Policy, v: ValueVector) -> np.ndarray:
    """sigma_pi(v): the worst-case expected next value for every state."""
    full = model.extend_values(v)
    return np.array([sigma(model.uset(x, u), full).value for x, u in enumerate(policy)])


def rpvi_exact(
    model: RobustMdp,
    policy: Policy,
    features: FeatureMap | np.ndarray,
    weights: ProjectionWeights | np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 10_000,
    kernel: ExplorationKernel | None = None,
    force: bool = False,
) -> FixedPointResult:
    """
    Robust projected value iteration with exact matrices, from w_0 = 0.

    When a kernel is given the contraction assumption is checked first; a
    failing check raises AssumptionError unless force is set, in which case
    the iteration runs with a warning.
    """
    check_policy(model, policy)
    if kernel is not None:
        check = check_assumption2(model, policy, kernel)
        if not check.holds:
            if not force:
                raise AssumptionError(check)
            logger.warning("contraction assumption %s; running anyway", check)

    phi = feature_matrix(features, model.n_states)
    proj = WeightedProjection(phi, weights)
    base = proj.weighted(model.policy_rewards(policy))
    gamma = model.discount

    def step(w: np.ndarray) -> np.ndarray:
        backup = robust_backup(model, policy, phi @ w)
        return proj.solve(base + gamma * proj.weighted(backup))

    return solve_fixed_point(step, np.zeros(phi.shape[1]), tol, max_iters, "RPVI")


def sampled_contraction_ratio(
    model: RobustMdp,
    policy: Policy,
    features: FeatureMap | np.ndarray,
    weights: ProjectionWeights | np.ndarray,
    beta: float,
    trials: int = 200,
    seed: int = 0,
    scale: float = 10.0,
) -> float:
    """Largest observed ||Pi T y - Pi T z||_d / ||y - z||_d over random pairs."""
    phi = feature_matrix(features, model.n_states)
    proj = WeightedProjection(phi, weights)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        y = rng.normal(scale=scale, size=model.n_states)
        z = rng.normal(scale=scale, size=model.n_states)
        gap = d_norm(y - z, proj.d)
        if gap == 0.0:
            continue
        ty = proj.apply(apply_T_pi(model, policy, y))
        tz = proj.apply(apply_T_pi(model, policy, z))
        worst = max(worst, d_norm(ty - tz, proj.d) / gap)
    if worst > beta + 1e-9:
        logger.warning("observed contraction ratio %.6g exceeds beta %.6g", worst, beta)
    return worst


# ── Divergence counterexample ─────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DivergenceInstance:
    model: RobustMdp
    policy: Policy
    features: np.ndarray
    kernel: ExplorationKernel

    @property
    def weights(self) -> ProjectionWeights:
        return stationary_weights(self.kernel)


def divergence_instance(gamma: float = 0.99) -> DivergenceInstance:
    """
    Two states with features 1 and 2, both moving surely to the second state,
    observed under a uniform kernel.

    The weight update is w <- 0.6 + 1.2 * gamma * w, so the iteration diverges
    for gamma > 5/6 while the check reports beta = 2 * gamma.
    """
    to_second = Singleton([0.0, 1.0])
    model = RobustMdp(
        n_states=2,
        n_actions=1,
        reward=np.ones((2, 1)),
        discount=gamma,
        uncertainty=[[to_second], [to_second]],
    )
    return DivergenceInstance(
        model=model,
        policy=(0, 0),
        features=np.array([[1.0], [2.0]]),
        kernel=ExplorationKernel.uniform(2),
    )
