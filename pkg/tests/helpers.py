"""tests/helpers.py — Small model builders shared by the test modules."""

import numpy as np

from robustadp.model import IntervalBox, RobustMdp, Singleton


def self_loop(reward=1.0, discount=0.5):
    """One state, one action, stays forever: V = r / (1 - gamma)."""
    return RobustMdp(1, 1, [[reward]], discount, [[Singleton([1.0])]])


def stay_box(lo=0.6, hi=0.9, discount=0.9):
    """One state that stays with probability in [lo, hi], else terminates."""
    box = IntervalBox([lo, 1.0 - hi], [hi, 1.0 - lo], nominal=[(lo + hi) / 2, 1.0 - (lo + hi) / 2])
    return RobustMdp(1, 1, [[1.0]], discount, [[box]], n_terminals=1)


def random_singleton_model(rng, n_states, n_actions, discount=0.9):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    table = [[Singleton(P[x, u]) for u in range(n_actions)] for x in range(n_states)]
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return RobustMdp(n_states, n_actions, reward, discount, table)


def random_interval_model(rng, n_states, n_actions, discount=0.9, width=0.2, n_terminals=0):
    """Boxes around a random nominal, so every box is feasible and holds its nominal."""
    n_total = n_states + n_terminals
    table = []
    for _ in range(n_states):
        row = []
        for _ in range(n_actions):
            p = rng.dirichlet(np.ones(n_total))
            lo = np.clip(p - width * rng.random(n_total), 0.0, 1.0)
            hi = np.clip(p + width * rng.random(n_total), 0.0, 1.0)
            row.append(IntervalBox(lo, hi, nominal=p))
        table.append(row)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return RobustMdp(n_states, n_actions, reward, discount, table, n_terminals=n_terminals)


def random_box(rng, n):
    """A feasible interval box of dimension n around a random distribution."""
    p = rng.dirichlet(np.ones(n))
    lo = p * rng.random(n)
    hi = np.minimum(1.0, p + (1.0 - p) * rng.random(n))
    return lo, hi
