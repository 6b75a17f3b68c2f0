"""
robustadp/sampling.py
Trajectories generated under an exploration kernel, and the sample-based
estimates of the projected iteration's terms:

    Phi^T D Phi              ~ (1/N) sum_t phi(x_t) phi(x_t)^T
    Phi^T D r                ~ (1/N) sum_t phi(x_t) r_t
    Phi^T D sigma_pi(Phi w)  ~ (1/N) sum_t phi(x_t) sigma_{P(x_t, u_t)}(Phi w)

With terminal states the data is a set of episodes and the sums are divided
by the number of episodes, which estimates the expected-visits weighting.

Trajectory file format (one record per line, whitespace separated):

    # episodes <count>
    # episodic <0|1>
    # t x u r next terminal
    0 3 1 0.5 4 0
    ...
"""

from __future__ import annotations
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from robustadp.errors import DimensionError, ImproperKernelError, RankDeficientError
from robustadp.linear import (
    MAX_CONDITION,
    ExplorationKernel,
    FeatureMap,
    FixedPointResult,
    factorize,
    feature_matrix,
    solve_fixed_point,
)
from robustadp.model import Policy, RobustMdp, select_member
from robustadp.sigma import sigma

logger = logging.getLogger(__name__)

MAX_EPISODE_LENGTH = 1_000_000


# ── Trajectories ──────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Records (x_t, u_t, r_t, x_{t+1}) with a terminal flag on x_{t+1}."""
    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    n_episodes: int = 1
    episodic: bool = False

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def normalizer(self) -> int:
        """Divisor of the sample averages: episodes when episodic, else N."""
        return self.n_episodes if self.episodic else len(self)

    def dump(self, path: str | Path) -> None:
        table = np.column_stack([
            self.times, self.states, self.actions, self.rewards,
            self.next_states, self.terminal.astype(int),
        ])
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# episodes {self.n_episodes}\n")
            f.write(f"# episodic {int(self.episodic)}\n")
            np.savetxt(f, table, fmt=["%d", "%d", "%d", "%.17g", "%d", "%d"],
                       header="t x u r next terminal", comments="# ")

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        meta: dict[str, int] = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.startswith("#"):
                    break
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] in ("episodes", "episodic"):
                    meta[parts[0]] = int(parts[1])
        table = np.loadtxt(path, comments="#", ndmin=2)
        if table.size == 0:
            table = np.zeros((0, 6))
        return cls(
            times=table[:, 0].astype(int),
            states=table[:, 1].astype(int),
            actions=table[:, 2].astype(int),
            rewards=table[:, 3],
            next_states=table[:, 4].astype(int),
            terminal=table[:, 5].astype(bool),
            n_episodes=meta.get("episodes", 1),
            episodic=bool(meta.get("episodic", 0)),
        )


class _Recorder:
    def __init__(self) -> None:
        self.columns: list[list] = [[], [], [], [], [], []]

    def add(self, t: int, x: int, u: int, r: float, nx: int, done: bool) -> None:
        for col, value in zip(self.columns, (t, x, u, r, nx, done)):
            col.append(value)

    def build(self, n_episodes: int, episodic: bool) -> Trajectory:
        t, x, u, r, nx, done = self.columns
        return Trajectory(
            times=np.array(t, dtype=int),
            states=np.array(x, dtype=int),
            actions=np.array(u, dtype=int),
            rewards=np.array(r, dtype=float),
            next_states=np.array(nx, dtype=int),
            terminal=np.array(done, dtype=bool),
            n_episodes=n_episodes,
            episodic=episodic,
        )


def _stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory `index` under a master seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _draw(cumulative: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(cumulative, rng.random(), side="right"))
    return min(i, cumulative.shape[0] - 1)


def generate_trajectories(
    model: RobustMdp,
    kernel: ExplorationKernel,
    behaviour: Policy | np.ndarray,
    seed: int,
    n_samples: int | None = None,
    n_episodes: int | None = None,
    start: int | np.ndarray = 0,
) -> Trajectory:
    """
    Simulate data under the exploration kernel.

    behaviour is either a deterministic policy or an (|X|, |U|) table of
    action probabilities. Without terminal states one trajectory of
    n_samples steps is drawn; with terminal states n_episodes episodes are
    drawn, each restarting from `start`. Trajectory i uses the stream
    derived from (seed, i).
    """
    n = model.n_states
    if kernel.n_states != n or kernel.n_terminals != model.n_terminals:
        raise DimensionError("kernel does not match the model's state space")
    if isinstance(behaviour, tuple):
        action_cum = None
        policy = np.asarray(behaviour, dtype=int)
    else:
        probs = np.asarray(behaviour, dtype=float)
        if probs.shape != (n, model.n_actions):
            raise DimensionError(f"behaviour table has shape {probs.shape}")
        action_cum = np.cumsum(probs, axis=1)
        policy = None
    start_cum = None if isinstance(start, (int, np.integer)) else np.cumsum(start)
    row_cum = np.cumsum(kernel.matrix, axis=-1)

    def first_state(rng: np.random.Generator) -> int:
        return int(start) if start_cum is None else _draw(start_cum, rng)

    def act(x: int, rng: np.random.Generator) -> int:
        return int(policy[x]) if action_cum is None else _draw(action_cum[x], rng)

    def move(x: int, u: int, rng: np.random.Generator) -> int:
        return _draw(row_cum[x, u] if kernel.per_action else row_cum[x], rng)

    rec = _Recorder()
    if model.n_terminals == 0:
        if n_samples is None:
            raise ValueError("n_samples is required without terminal states")
        rng = _stream(seed, 0)
        x = first_state(rng)
        for t in range(n_samples):
            u = act(x, rng)
            nx = move(x, u, rng)
            rec.add(t, x, u, model.reward[x, u], nx, False)
            x = nx
        return rec.build(1, episodic=False)

    if n_episodes is None:
        raise ValueError("n_episodes is required with terminal states")
    for episode in range(n_episodes):
        rng = _stream(seed, episode)
        x = first_state(rng)
        for t in range(MAX_EPISODE_LENGTH):
            u = act(x, rng)
            nx = move(x, u, rng)
            done = nx >= n
            rec.add(t, x, u, model.reward[x, u], nx, done)
            if done:
                break
            x = nx
        else:
            raise ImproperKernelError(f"episode {episode} did not terminate")
    return rec.build(n_episodes, episodic=True)


def sweep_samples(model: RobustMdp, policy: Policy | None = None, repeats: int = 1) -> Trajectory:
    """
    Deterministic exhaustive data: every state (with pi(x), or with every
    action when no policy is given) appears `repeats` times. The recorded
    next state is the most likely outcome of the nominal member.
    """
    rec = _Recorder()
    for _ in range(repeats):
        for x in range(model.n_states):
            actions = range(model.n_actions) if policy is None else [policy[x]]
            for u in actions:
                nx = int(np.argmax(select_member(model.uset(x, u), "nominal")))
                rec.add(0, x, u, model.reward[x, u], nx, nx >= model.n_states)
    return rec.build(1, episodic=False)


# ── Estimators ────────────────────────────────────────────────────────

def unique_pairs(states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pairs, counts = np.unique(np.column_stack([states, actions]), axis=0, return_counts=True)
    if pairs.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0)
    return pairs[:, 0], pairs[:, 1], counts.astype(float)


@dataclass(frozen=True, eq=False)
class SampledMatrices:
    """
    A_hat ~ Phi^T D Phi, b_hat ~ Phi^T D r, and c_hat(w) ~ Phi^T D sigma_pi(Phi w).

    Samples are stored aggregated per visited (x, u) pair: its feature row,
    its visit count and the handle to the model's uncertainty set.
    """
    A: np.ndarray
    b: np.ndarray
    discount: float
    model: RobustMdp
    phi: np.ndarray
    pair_states: np.ndarray
    pair_actions: np.ndarray
    pair_weights: np.ndarray

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.A)) if self.A.size else np.inf

    @property
    def rank_deficient(self) -> bool:
        return not self.condition <= MAX_CONDITION

    def backups(self, values: np.ndarray) -> np.ndarray:
        """sigma_{P(x,u)}(values) for every stored pair."""
        full = self.model.extend_values(values)
        return np.array([
            sigma(self.model.uset(x, u), full).value
            for x, u in zip(self.pair_states, self.pair_actions)
        ])

    def c_hat(self, w: np.ndarray) -> np.ndarray:
        sig = self.backups(self.phi @ w)
        return self.phi[self.pair_states].T @ (self.pair_weights * sig)


def estimate_matrices(
    traj: Trajectory,
    features: FeatureMap | np.ndarray,
    model: RobustMdp,
) -> SampledMatrices:
    if len(traj) == 0:
        raise ValueError("cannot estimate from an empty trajectory")
    phi = feature_matrix(features, model.n_states)
    norm = float(traj.normalizer)
    rows = phi[traj.states]
    A = rows.T @ rows / norm
    b = rows.T @ traj.rewards / norm
    states, actions, counts = unique_pairs(traj.states, traj.actions)
    matrices = SampledMatrices(
        A=A,
        b=b,
        discount=model.discount,
        model=model,
        phi=phi,
        pair_states=states,
        pair_actions=actions,
        pair_weights=counts / norm,
    )
    if matrices.rank_deficient:
        logger.warning("A_hat is rank deficient (condition %.3e)", matrices.condition)
    return matrices


def rpvi_sampled(
    matrices: SampledMatrices,
    tol: float = 1e-10,
    max_iters: int = 10_000,
) -> FixedPointResult:
    """w_{k+1} = A_hat^-1 (b_hat + gamma c_hat(w_k)) from w_0 = 0."""
    if matrices.rank_deficient:
        raise RankDeficientError(matrices.condition)
    factor = factorize(matrices.A)
    gamma = matrices.discount

    def step(w: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(factor, matrices.b + gamma * matrices.c_hat(w))

    return solve_fixed_point(step, np.zeros(matrices.dimension), tol, max_iters, "sampled RPVI")
