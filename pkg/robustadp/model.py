"""
robustadp/model.py
Robust MDP data model: uncertainty sets, the RobustMdp container, policies,
validation, nominal collapse and the YAML model file format.

States, terminals and actions are dense integer indices. Distributions are
vectors over X ∪ Z: the first n_states coordinates are the non-terminal states,
the remaining n_terminals coordinates are the terminal states. Terminal states
have no outgoing transitions and value zero.

Model file (YAML):

    discount: 0.9
    states: [low, high]          # names, or an integer count
    terminals: [sold]            # optional
    actions: [hold, sell]
    rewards:                     # per state: list over actions or {action: r}
      low: [0.0, 1.0]
      high: {hold: 0.0, sell: 2.0}
    transitions:                 # per state, per action: one uncertainty set
      low:
        hold: {interval: {lo: {low: 0.2, high: 0.2}, hi: {low: 0.8, high: 0.8}}}
        sell: {singleton: {sold: 1.0}}
      high:
        hold: {vertices: [{low: 1.0}, {high: 1.0}]}
        sell: {singleton: {sold: 1.0}}
"""

from __future__ import annotations
import logging
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np
import scipy.optimize
import yaml

from robustadp.errors import (
    DimensionError,
    ModelFormatError,
    ModelValidationError,
    SelectorError,
)

logger = logging.getLogger(__name__)

DIST_TOL = 1e-12      # validation of declared data
MEMBER_TOL = 1e-9     # runtime membership checks


def _frozen_vector(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


# ── Uncertainty sets ──────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Singleton:
    """A single known next-state distribution."""
    p: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", _frozen_vector(self.p))

    @property
    def size(self) -> int:
        return self.p.shape[0]

    def contains(self, q: np.ndarray, tol: float = MEMBER_TOL) -> bool:
        q = np.asarray(q, dtype=float)
        return q.shape == self.p.shape and float(np.max(np.abs(q - self.p))) <= tol

    def sup_mass(self) -> np.ndarray:
        """Largest probability any member assigns to each outcome."""
        return self.p


@dataclass(frozen=True, eq=False)
class IntervalBox:
    """Distributions p with lo <= p <= hi componentwise and sum(p) = 1."""
    lo: np.ndarray
    hi: np.ndarray
    nominal: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", _frozen_vector(self.lo))
        object.__setattr__(self, "hi", _frozen_vector(self.hi))
        if self.nominal is not None:
            object.__setattr__(self, "nominal", _frozen_vector(self.nominal))

    @property
    def size(self) -> int:
        return self.lo.shape[0]

    def contains(self, q: np.ndarray, tol: float = MEMBER_TOL) -> bool:
        q = np.asarray(q, dtype=float)
        if q.shape != self.lo.shape:
            return False
        return (
            abs(float(q.sum()) - 1.0) <= tol
            and bool(np.all(q >= self.lo - tol))
            and bool(np.all(q <= self.hi + tol))
        )

    def sup_mass(self) -> np.ndarray:
        return self.hi

    def midpoint_projection(self) -> np.ndarray:
        """
        Project the box midpoint onto the feasible slice {sum(p) = 1}.

        Finds the shift s with sum(clip(mid + s, lo, hi)) = 1; the clipped
        vector is a member of the box by construction.
        """
        if float(self.lo.sum()) >= 1.0:
            return np.array(self.lo)
        if float(self.hi.sum()) <= 1.0:
            return np.array(self.hi)
        mid = (self.lo + self.hi) / 2.0

        def excess(shift: float) -> float:
            return float(np.clip(mid + shift, self.lo, self.hi).sum()) - 1.0

        shift = scipy.optimize.brentq(excess, -1.0, 1.0, xtol=1e-15)
        p = np.clip(mid + shift, self.lo, self.hi)
        return p


@dataclass(frozen=True, eq=False)
class VertexList:
    """The convex hull of an explicit list of distributions (one per row)."""
    vertices: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.vertices, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(0, 0) if arr.size == 0 else arr.reshape(1, -1)
        arr.setflags(write=False)
        object.__setattr__(self, "vertices", arr)

    @property
    def size(self) -> int:
        return self.vertices.shape[1]

    def contains(self, q: np.ndarray, tol: float = MEMBER_TOL) -> bool:
        q = np.asarray(q, dtype=float)
        if self.vertices.shape[0] == 0 or q.shape != (self.size,):
            return False
        # q = V^T lam, lam >= 0, sum(lam) = 1
        system = np.vstack([self.vertices.T, np.ones(self.vertices.shape[0])])
        target = np.append(q, 1.0)
        _, residual = scipy.optimize.nnls(system, target)
        return residual <= tol

    def sup_mass(self) -> np.ndarray:
        return self.vertices.max(axis=0)


UncertaintySet = Singleton | IntervalBox | VertexList

# Selector: a variant-independent name, or a callable returning a member.
Selector = str | Callable[[UncertaintySet], np.ndarray]


# ── Policies and value vectors ────────────────────────────────────────

# A deterministic policy: one action index per non-terminal state.
Policy = tuple[int, ...]

# Real vector indexed by the non-terminal states.
ValueVector = np.ndarray


def make_policy(actions: Any) -> Policy:
    return tuple(int(a) for a in actions)


# ── RobustMdp ─────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class RobustMdp:
    """
    Finite robust MDP {X, Z, U, P, r, gamma}.

    Args:
        n_states:    |X|, non-terminal states 0..n_states-1.
        n_actions:   |U|.
        reward:      r(x, u); shape (n_states, n_actions) or
                     (n_states + n_terminals, n_actions). Terminal rows
                     default to zero.
        discount:    gamma in (0, 1].
        uncertainty: uncertainty[x][u] is the set P(x, u) over X ∪ Z.
        n_terminals: |Z|.
    """

    n_states: int
    n_actions: int
    reward: np.ndarray
    discount: float
    uncertainty: tuple[tuple[UncertaintySet, ...], ...]
    n_terminals: int = 0
    state_names: tuple[str, ...] = field(default=())
    action_names: tuple[str, ...] = field(default=())
    terminal_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        reward = np.array(self.reward, dtype=float)
        if reward.ndim == 2 and reward.shape[0] == self.n_states and self.n_terminals:
            reward = np.vstack([reward, np.zeros((self.n_terminals, reward.shape[1]))])
        reward.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "uncertainty", tuple(tuple(row) for row in self.uncertainty))
        object.__setattr__(self, "discount", float(self.discount))
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(str(i) for i in range(self.n_states)))
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(str(i) for i in range(self.n_actions)))
        if not self.terminal_names:
            names = tuple(f"z{i}" for i in range(self.n_terminals))
            object.__setattr__(self, "terminal_names", names)

    @property
    def n_total(self) -> int:
        """Size of X ∪ Z."""
        return self.n_states + self.n_terminals

    def uset(self, state: int, action: int) -> UncertaintySet:
        return self.uncertainty[state][action]

    def extend_values(self, v: np.ndarray) -> np.ndarray:
        """Append zero values for the terminal states."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_states,):
            raise DimensionError(f"value vector has shape {v.shape}, expected ({self.n_states},)")
        if not self.n_terminals:
            return v
        return np.concatenate([v, np.zeros(self.n_terminals)])

    def policy_rewards(self, policy: Policy) -> np.ndarray:
        """r^pi(x) = r(x, pi(x)) over the non-terminal states."""
        check_policy(self, policy)
        return self.reward[np.arange(self.n_states), np.asarray(policy)]

    def all_policies(self) -> Iterator[Policy]:
        """Iterate every deterministic policy (|U|^|X| of them)."""
        yield from product(range(self.n_actions), repeat=self.n_states)

    def __repr__(self) -> str:
        return (
            f"RobustMdp(states={self.n_states}, terminals={self.n_terminals}, "
            f"actions={self.n_actions}, discount={self.discount})"
        )


def check_policy(model: RobustMdp, policy: Policy) -> None:
    """Raise if the policy is not defined on every non-terminal state."""
    if len(policy) != model.n_states:
        raise DimensionError(
            f"policy has {len(policy)} entries, model has {model.n_states} states"
        )
    for x, u in enumerate(policy):
        if not 0 <= u < model.n_actions:
            raise ValueError(f"policy action {u} at state {x} is not a valid action index")


# ── Validation ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Violation:
    """One broken model invariant, located at (state, action) when applicable."""
    rule: str
    state: int | None = None
    action: int | None = None

    def __str__(self) -> str:
        if self.state is None:
            return self.rule
        if self.action is None:
            return f"(x={self.state}): {self.rule}"
        return f"(x={self.state}, u={self.action}): {self.rule}"


def _distribution_violations(p: np.ndarray, label: str = "") -> list[str]:
    rules = []
    if np.any(~np.isfinite(p)):
        return [f"{label}non-finite probability"]
    if np.any(p < -DIST_TOL):
        rules.append(f"{label}negative probability")
    if abs(float(p.sum()) - 1.0) > DIST_TOL:
        rules.append(f"{label}does not sum to 1")
    return rules


def _set_violations(uset: UncertaintySet, n_total: int) -> list[str]:
    if isinstance(uset, VertexList) and uset.vertices.shape[0] == 0:
        return ["empty vertex list"]
    if uset.size != n_total:
        return [f"dimension mismatch: set has {uset.size} outcomes, model has {n_total}"]

    match uset:
        case Singleton(p=p):
            return _distribution_violations(p)
        case IntervalBox(lo=lo, hi=hi, nominal=nominal):
            rules = []
            if np.any(lo < -DIST_TOL) or np.any(hi > 1.0 + DIST_TOL):
                rules.append("bounds outside [0, 1]")
            if np.any(lo > hi + DIST_TOL):
                rules.append("lo > hi")
            if float(lo.sum()) > 1.0 + DIST_TOL:
                rules.append("sum(lo) > 1")
            if float(hi.sum()) < 1.0 - DIST_TOL:
                rules.append("sum(hi) < 1")
            if nominal is not None and not uset.contains(nominal, tol=DIST_TOL):
                rules.append("nominal outside box")
            return rules
        case VertexList(vertices=vertices):
            if vertices.shape[0] == 0:
                return ["empty vertex list"]
            rules = []
            for i, p in enumerate(vertices):
                rules.extend(_distribution_violations(p, label=f"vertex {i} "))
            return rules
    return [f"unknown uncertainty set {type(uset).__name__}"]


def validate(model: RobustMdp) -> list[Violation]:
    """Return every invariant violation of the model (empty list when valid)."""
    out: list[Violation] = []

    if not 0.0 < model.discount <= 1.0:
        out.append(Violation("discount outside (0, 1]"))
    elif model.discount == 1.0 and model.n_terminals == 0:
        out.append(Violation("discount 1 requires terminal states"))

    if model.reward.shape != (model.n_total, model.n_actions):
        out.append(Violation(
            f"reward table has shape {model.reward.shape}, "
            f"expected ({model.n_total}, {model.n_actions})"
        ))
    else:
        if not np.all(np.isfinite(model.reward)):
            out.append(Violation("reward not finite"))
        for z in range(model.n_states, model.n_total):
            for u in range(model.n_actions):
                if model.reward[z, u] != 0.0:
                    out.append(Violation("terminal reward nonzero", z, u))

    if len(model.uncertainty) != model.n_states:
        out.append(Violation(
            f"uncertainty table has {len(model.uncertainty)} rows, expected {model.n_states}"
        ))
        return out
    for x, row in enumerate(model.uncertainty):
        if len(row) != model.n_actions:
            out.append(Violation("missing uncertainty entry", x))
            continue
        for u, uset in enumerate(row):
            out.extend(Violation(rule, x, u) for rule in _set_violations(uset, model.n_total))
    return out


def require_valid(model: RobustMdp) -> RobustMdp:
    """Raise ModelValidationError if validate() reports anything."""
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations)
    return model


# ── Nominal collapse ──────────────────────────────────────────────────

def select_member(uset: UncertaintySet, selector: Selector = "nominal") -> np.ndarray:
    """
    Pick one distribution out of an uncertainty set.

    Selectors:
      "nominal"  - Singleton p, box's stored nominal (else midpoint projection),
                   first vertex
      "centroid" - Singleton p, box midpoint projection, mean of the vertices
      "first"    - Singleton p, first vertex; undefined for interval boxes
      callable   - selector(uset) is returned as is
    """
    if callable(selector):
        return np.asarray(selector(uset), dtype=float)

    match (selector, uset):
        case (_, Singleton(p=p)) if selector in ("nominal", "centroid", "first"):
            return np.array(p)
        case ("nominal", IntervalBox(nominal=nominal)) if nominal is not None:
            return np.array(nominal)
        case ("nominal" | "centroid", IntervalBox()):
            return uset.midpoint_projection()
        case ("nominal" | "first", VertexList(vertices=vertices)):
            return np.array(vertices[0])
        case ("centroid", VertexList(vertices=vertices)):
            return vertices.mean(axis=0)
    raise SelectorError(f"selector {selector!r} is undefined for {type(uset).__name__}")


def nominal_of(model: RobustMdp, selector: Selector = "nominal") -> np.ndarray:
    """
    Collapse every uncertainty set to one member.

    Returns P with shape (n_states, n_actions, n_total).
    """
    table = np.zeros((model.n_states, model.n_actions, model.n_total))
    for x in range(model.n_states):
        for u in range(model.n_actions):
            table[x, u] = select_member(model.uset(x, u), selector)
    return table


def policy_transitions(model: RobustMdp, policy: Policy, selector: Selector = "nominal") -> np.ndarray:
    """P^pi(x' | x) under the selected members; shape (n_states, n_total)."""
    check_policy(model, policy)
    return np.array([select_member(model.uset(x, u), selector) for x, u in enumerate(policy)])


# ── YAML model files ──────────────────────────────────────────────────

def _names(spec: Any, what: str) -> tuple[str, ...]:
    if spec is None:
        return ()
    if isinstance(spec, int):
        return tuple(str(i) for i in range(spec))
    if isinstance(spec, list):
        return tuple(str(s) for s in spec)
    raise ModelFormatError(f"'{what}' must be a list of names or a count")


def _lookup(names: tuple[str, ...], key: Any, what: str) -> int:
    try:
        return names.index(str(key))
    except ValueError:
        raise ModelFormatError(f"unknown {what} '{key}'") from None


def _distribution(spec: Any, outcomes: tuple[str, ...]) -> np.ndarray:
    if isinstance(spec, list):
        if len(spec) != len(outcomes):
            raise ModelFormatError(
                f"distribution has {len(spec)} entries, expected {len(outcomes)}"
            )
        return np.array(spec, dtype=float)
    if isinstance(spec, dict):
        p = np.zeros(len(outcomes))
        for key, mass in spec.items():
            p[_lookup(outcomes, key, "outcome")] = float(mass)
        return p
    raise ModelFormatError(f"cannot read distribution from {spec!r}")


def _uncertainty_set(spec: Any, outcomes: tuple[str, ...]) -> UncertaintySet:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ModelFormatError(f"expected one of singleton/interval/vertices, got {spec!r}")
    (kind, body), = spec.items()
    match kind:
        case "singleton":
            return Singleton(_distribution(body, outcomes))
        case "interval":
            nominal = body.get("nominal")
            return IntervalBox(
                lo=_distribution(body["lo"], outcomes),
                hi=_distribution(body["hi"], outcomes),
                nominal=None if nominal is None else _distribution(nominal, outcomes),
            )
        case "vertices":
            if not body:
                return VertexList(np.zeros((0, len(outcomes))))
            return VertexList([_distribution(p, outcomes) for p in body])
    raise ModelFormatError(f"unknown uncertainty set kind '{kind}'")


def _reward_row(spec: Any, actions: tuple[str, ...]) -> np.ndarray:
    if isinstance(spec, list):
        if len(spec) != len(actions):
            raise ModelFormatError(f"reward row has {len(spec)} entries, expected {len(actions)}")
        return np.array(spec, dtype=float)
    if isinstance(spec, dict):
        row = np.zeros(len(actions))
        for key, r in spec.items():
            row[_lookup(actions, key, "action")] = float(r)
        return row
    return np.full(len(actions), float(spec))


def model_from_dict(data: dict) -> RobustMdp:
    """Build (without validating) a RobustMdp from a parsed model document."""
    try:
        states = _names(data["states"], "states")
        actions = _names(data["actions"], "actions")
        discount = float(data["discount"])
    except KeyError as e:
        raise ModelFormatError(f"model file is missing '{e.args[0]}'") from e
    terminals = _names(data.get("terminals"), "terminals")
    outcomes = states + terminals

    reward = np.zeros((len(outcomes), len(actions)))
    for key, row in (data.get("rewards") or {}).items():
        reward[_lookup(states, key, "state")] = _reward_row(row, actions)
    for key, row in (data.get("terminal_rewards") or {}).items():
        reward[len(states) + _lookup(terminals, key, "terminal")] = _reward_row(row, actions)

    transitions = data.get("transitions") or {}
    table: list[list[UncertaintySet]] = []
    for x, name in enumerate(states):
        per_state = transitions.get(name, transitions.get(x))
        if per_state is None:
            raise ModelFormatError(f"no transitions for state '{name}'")
        row = []
        for u, action in enumerate(actions):
            spec = per_state.get(action, per_state.get(u))
            if spec is None:
                raise ModelFormatError(f"no uncertainty set for state '{name}', action '{action}'")
            row.append(_uncertainty_set(spec, outcomes))
        table.append(row)

    return RobustMdp(
        n_states=len(states),
        n_actions=len(actions),
        reward=reward,
        discount=discount,
        uncertainty=table,
        n_terminals=len(terminals),
        state_names=states,
        action_names=actions,
        terminal_names=terminals,
    )


def load_model(path: str | Path) -> RobustMdp:
    """Read and validate a YAML model file."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ModelFormatError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ModelFormatError(f"{path}: expected a mapping at top level")
    model = require_valid(model_from_dict(data))
    logger.info("loaded %r from %s", model, path)
    return model


def _set_to_dict(uset: UncertaintySet) -> dict:
    match uset:
        case Singleton(p=p):
            return {"singleton": p.tolist()}
        case IntervalBox(lo=lo, hi=hi, nominal=nominal):
            body = {"lo": lo.tolist(), "hi": hi.tolist()}
            if nominal is not None:
                body["nominal"] = nominal.tolist()
            return {"interval": body}
        case VertexList(vertices=vertices):
            return {"vertices": vertices.tolist()}
    raise TypeError(f"unknown uncertainty set {type(uset).__name__}")


def model_to_dict(model: RobustMdp) -> dict:
    data: dict[str, Any] = {
        "discount": model.discount,
        "states": list(model.state_names),
        "actions": list(model.action_names),
        "rewards": {
            name: model.reward[x].tolist() for x, name in enumerate(model.state_names)
        },
        "transitions": {
            name: {
                action: _set_to_dict(model.uset(x, u))
                for u, action in enumerate(model.action_names)
            }
            for x, name in enumerate(model.state_names)
        },
    }
    if model.n_terminals:
        data["terminals"] = list(model.terminal_names)
    return data


def dump_model(model: RobustMdp, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(model_to_dict(model), f, sort_keys=False)
