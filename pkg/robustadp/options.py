"""
robustadp/options.py
American put pricing as a robust optimal-stopping problem.

The underlying moves on a recombining binomial lattice: x_{t+1} = f_u x_t with
probability p, f_d x_t otherwise. The up probability is estimated from data
together with a Clopper-Pearson interval [p-, p+], which becomes the
uncertainty set of every continuation transition. The state carries time
explicitly, so node (t, j) is the price after j up moves in t steps.

Actions: 0 continue, 1 exercise. Exercise pays g(x) = max(0, K - x) and ends
the process; at t = T the process ends regardless and an unexercised option
expires worthless.

Only the continuation value is approximated, Q({x,t}, continue) ~ phi(x,t)^T w,
since the exercise value is g(x) by definition.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.optimize
import scipy.special
import scipy.stats

from robustadp.arpi import ArpiIteration
from robustadp.errors import (
    DimensionError,
    DivergenceError,
    NonConvergenceError,
    PriceDataError,
    RankDeficientError,
)
from robustadp.linear import (
    MAX_CONDITION,
    Assumption2Check,
    ExplorationKernel,
    FixedPointResult,
    check_assumption2,
    check_state_action_assumption,
    factorize,
    solve_fixed_point,
)
from robustadp.model import IntervalBox, Policy, RobustMdp, Singleton
from robustadp.sigma import SigmaResult

logger = logging.getLogger(__name__)

CONTINUE = 0
EXERCISE = 1

RATIO_TOL = 1e-9
CP_XTOL = 1e-12
PROPAGATION_MAX_STATES = 16


# ── Price model and payoff ────────────────────────────────────────────

@dataclass(frozen=True)
class BernoulliPriceModel:
    up: float
    down: float
    p: float
    x0: float
    horizon: int

    def __post_init__(self) -> None:
        if not 0.0 < self.down < self.up:
            raise ValueError(f"need 0 < down < up, got down={self.down}, up={self.up}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"up probability must lie in (0, 1), got {self.p}")
        if self.x0 <= 0.0:
            raise ValueError("initial price must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")

    def simulate(
        self,
        n: int,
        rng: np.random.Generator,
        start: float | np.ndarray | None = None,
        p: float | None = None,
    ) -> np.ndarray:
        """n price paths of shape (n, horizon + 1); p overrides the true up probability."""
        p = self.p if p is None else p
        moves = np.where(rng.random((n, self.horizon)) < p, self.up, self.down)
        x0 = np.broadcast_to(np.asarray(self.x0 if start is None else start, dtype=float), (n,))
        paths = np.empty((n, self.horizon + 1))
        paths[:, 0] = x0
        paths[:, 1:] = x0[:, None] * np.cumprod(moves, axis=1)
        return paths


@dataclass(frozen=True)
class OptionSpec:
    """American put with strike K."""
    strike: float

    def payoff(self, x: float | np.ndarray) -> float | np.ndarray:
        return np.maximum(0.0, self.strike - np.asarray(x, dtype=float))


@dataclass(frozen=True)
class UncertainUpProbability:
    """Estimated up probability and its confidence interval."""
    p_hat: float
    p_minus: float
    p_plus: float
    alpha: float
    n: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_minus <= self.p_hat <= self.p_plus <= 1.0:
            raise ValueError(
                f"need 0 <= p- <= p_hat <= p+ <= 1, got "
                f"({self.p_minus}, {self.p_hat}, {self.p_plus})"
            )

    def nominal(self) -> "UncertainUpProbability":
        """The same estimate with the interval collapsed onto p_hat."""
        return UncertainUpProbability(self.p_hat, self.p_hat, self.p_hat, self.alpha, self.n)

    @property
    def width(self) -> float:
        return self.p_plus - self.p_minus


# ── Clopper-Pearson ───────────────────────────────────────────────────

BinomialCdf = Callable[[int, int, float], float]


def binomial_cdf_logfactorial(k: int, n: int, p: float) -> float:
    """P(Bin(n, p) <= k) by summing terms computed through log-factorials."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    i = np.arange(k + 1)
    log_terms = (
        scipy.special.gammaln(n + 1)
        - scipy.special.gammaln(i + 1)
        - scipy.special.gammaln(n - i + 1)
        + i * math.log(p)
        + (n - i) * math.log1p(-p)
    )
    return float(min(1.0, np.exp(log_terms).sum()))


def _scipy_cdf(k: int, n: int, p: float) -> float:
    return float(scipy.stats.binom.cdf(k, n, p))


def clopper_pearson(
    k: int,
    n: int,
    alpha: float,
    cdf: BinomialCdf | None = None,
) -> tuple[float, float]:
    """
    Exact two-sided binomial interval for k successes in n trials.

    p- solves P(Bin(n, p) >= k) = alpha/2 (0 when k = 0) and p+ solves
    P(Bin(n, p) <= k) = alpha/2 (1 when k = n), both by bisection on the
    binomial CDF. cdf defaults to scipy's.
    """
    if n < 1:
        raise ValueError(f"need at least one trial, got n={n}")
    if not 0 <= k <= n:
        raise ValueError(f"successes must lie in [0, {n}], got k={k}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    cdf = cdf or _scipy_cdf
    half = alpha / 2.0

    if k == 0:
        lower = 0.0
    else:
        # P(X >= k) grows with p
        lower = scipy.optimize.bisect(lambda p: (1.0 - cdf(k - 1, n, p)) - half, 0.0, 1.0, xtol=CP_XTOL)
    if k == n:
        upper = 1.0
    else:
        # P(X <= k) falls with p
        upper = scipy.optimize.bisect(lambda p: cdf(k, n, p) - half, 0.0, 1.0, xtol=CP_XTOL)
    return float(lower), float(upper)


def fit_model(
    paths: np.ndarray | list[np.ndarray],
    up: float,
    down: float,
    alpha: float,
) -> UncertainUpProbability:
    """
    Maximum likelihood up probability from observed price paths, plus the
    Clopper-Pearson interval at level alpha.

    Every consecutive ratio must match the up or the down factor within 1e-9.
    """
    ups = moves = 0
    for i, path in enumerate(paths):
        path = np.asarray(path, dtype=float)
        ratios = path[1:] / path[:-1]
        is_up = np.abs(ratios - up) <= RATIO_TOL
        is_down = np.abs(ratios - down) <= RATIO_TOL
        bad = np.flatnonzero(~(is_up | is_down))
        if bad.size:
            step = int(bad[0])
            raise PriceDataError(i, step, float(ratios[step]))
        ups += int(is_up.sum())
        moves += ratios.shape[0]
    if moves == 0:
        raise ValueError("price data contains no moves")
    lower, upper = clopper_pearson(ups, moves, alpha)
    p_hat = ups / moves
    return UncertainUpProbability(
        p_hat=p_hat,
        p_minus=min(lower, p_hat),
        p_plus=max(upper, p_hat),
        alpha=alpha,
        n=moves,
    )


# ── Binary worst case ─────────────────────────────────────────────────

def binary_worst_case(
    v_up: np.ndarray,
    v_down: np.ndarray,
    p_minus: float,
    p_plus: float,
) -> np.ndarray:
    """Elementwise min over q in [p-, p+] of q v_up + (1 - q) v_down."""
    q = np.where(v_up >= v_down, p_minus, p_plus)
    return q * v_up + (1.0 - q) * v_down


def sigma_binary_continuation(
    v_up: float,
    v_down: float,
    p_minus: float,
    p_plus: float,
) -> SigmaResult:
    q = p_minus if v_up >= v_down else p_plus
    return SigmaResult(q * v_up + (1.0 - q) * v_down, np.array([q, 1.0 - q]))


# ── Lattice RMDP ──────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class StoppingLattice:
    """
    The stopping problem restricted to the recombining lattice from x0.

    Node (t, j) has index t(t+1)/2 + j and price x0 * up^j * down^(t-j);
    the single terminal state follows the last node.
    """
    price_model: BernoulliPriceModel
    option: OptionSpec
    uncertain: UncertainUpProbability
    model: RobustMdp

    @property
    def horizon(self) -> int:
        return self.price_model.horizon

    @property
    def n_nodes(self) -> int:
        return self.model.n_states

    @staticmethod
    def index(t: int, j: int) -> int:
        return t * (t + 1) // 2 + j

    def node(self, index: int) -> tuple[int, int]:
        t = int((math.isqrt(8 * index + 1) - 1) // 2)
        return t, index - t * (t + 1) // 2

    def price(self, t: int, j: int) -> float:
        pm = self.price_model
        return pm.x0 * pm.up ** j * pm.down ** (t - j)

    @cached_property
    def prices(self) -> np.ndarray:
        return np.array([self.price(*self.node(i)) for i in range(self.n_nodes)])

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([self.node(i)[0] for i in range(self.n_nodes)])


def lattice_size(horizon: int) -> int:
    return (horizon + 1) * (horizon + 2) // 2


def build_stopping_rmdp(
    price_model: BernoulliPriceModel,
    uncertain: UncertainUpProbability,
    option: OptionSpec,
    discount: float,
) -> StoppingLattice:
    T = price_model.horizon
    n = lattice_size(T)
    done = n
    stop = np.zeros(n + 1)
    stop[done] = 1.0
    to_terminal = Singleton(stop)

    reward = np.zeros((n, 2))
    table = []
    names = []
    for t in range(T + 1):
        for j in range(t + 1):
            i = StoppingLattice.index(t, j)
            x = price_model.x0 * price_model.up ** j * price_model.down ** (t - j)
            reward[i, EXERCISE] = float(option.payoff(x))
            names.append(f"t{t}j{j}")
            if t == T:
                table.append([to_terminal, to_terminal])
                continue
            up_child = StoppingLattice.index(t + 1, j + 1)
            down_child = StoppingLattice.index(t + 1, j)
            lo, hi, nominal = np.zeros(n + 1), np.zeros(n + 1), np.zeros(n + 1)
            lo[up_child], lo[down_child] = uncertain.p_minus, 1.0 - uncertain.p_plus
            hi[up_child], hi[down_child] = uncertain.p_plus, 1.0 - uncertain.p_minus
            nominal[up_child], nominal[down_child] = uncertain.p_hat, 1.0 - uncertain.p_hat
            table.append([IntervalBox(lo, hi, nominal), to_terminal])

    model = RobustMdp(
        n_states=n,
        n_actions=2,
        reward=reward,
        discount=discount,
        uncertainty=table,
        n_terminals=1,
        state_names=tuple(names),
        action_names=("continue", "exercise"),
        terminal_names=("done",),
    )
    return StoppingLattice(price_model, option, uncertain, model)


def backward_induction(lattice: StoppingLattice) -> np.ndarray:
    """Robust optimal values of every lattice node, solved from the horizon back."""
    T = lattice.horizon
    gamma = lattice.model.discount
    u = lattice.uncertain
    values = np.zeros(lattice.n_nodes)
    for t in range(T, -1, -1):
        for j in range(t + 1):
            i = lattice.index(t, j)
            g = lattice.model.reward[i, EXERCISE]
            if t == T:
                values[i] = g
                continue
            v_up = values[lattice.index(t + 1, j + 1)]
            v_down = values[lattice.index(t + 1, j)]
            cont = gamma * sigma_binary_continuation(v_up, v_down, u.p_minus, u.p_plus).value
            values[i] = max(g, cont)
    return values


# ── Features over (price, time) ───────────────────────────────────────

def rbf_features(
    x: np.ndarray,
    t: np.ndarray,
    centers: np.ndarray,
    widths: tuple[float, float],
    x_scale: float,
    horizon: int,
) -> np.ndarray:
    """
    Gaussian bumps over the normalised (x / x_scale, t / horizon) plane,
    followed by a constant 1. Output has shape (..., len(centers) + 1).
    """
    xn = np.asarray(x, dtype=float)[..., None] / x_scale
    tn = np.asarray(t, dtype=float)[..., None] / horizon
    d2 = ((xn - centers[:, 0]) / widths[0]) ** 2 + ((tn - centers[:, 1]) / widths[1]) ** 2
    bumps = np.exp(-d2)
    return np.concatenate([bumps, np.ones(bumps.shape[:-1] + (1,))], axis=-1)


@dataclass(frozen=True, eq=False)
class RbfFeatures:
    centers: np.ndarray
    widths: tuple[float, float]
    x_scale: float
    horizon: int

    @property
    def dimension(self) -> int:
        return self.centers.shape[0] + 1

    def __call__(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        return rbf_features(x, t, self.centers, self.widths, self.x_scale, self.horizon)


def default_rbf_features(
    x_scale: float,
    horizon: int,
    grid: int = 7,
    price_range: tuple[float, float] = (0.7, 1.3),
) -> RbfFeatures:
    """grid x grid centres over price_range x [0, 1], widths equal to the spacing."""
    prices = np.linspace(*price_range, grid)
    times = np.linspace(0.0, 1.0, grid)
    centers = np.array([(c, s) for c in prices for s in times])
    widths = (float(prices[1] - prices[0]), float(times[1] - times[0]))
    return RbfFeatures(centers, widths, x_scale, horizon)


@dataclass(frozen=True, eq=False)
class LatticeIndicatorFeatures:
    """One indicator per lattice node with t < T; nodes at the horizon map to zero."""
    price_model: BernoulliPriceModel

    @property
    def dimension(self) -> int:
        T = self.price_model.horizon
        return T * (T + 1) // 2

    def __call__(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        pm = self.price_model
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=int), x.shape)
        j = np.rint(np.log(x / (pm.x0 * pm.down ** t)) / math.log(pm.up / pm.down)).astype(int)
        j = np.clip(j, 0, t)
        out = np.zeros(x.shape + (self.dimension,))
        inside = t < pm.horizon
        idx = (t * (t + 1) // 2 + j)[inside]
        out[inside, idx] = 1.0
        return out


PricingFeatures = RbfFeatures | LatticeIndicatorFeatures


# ── Samples ───────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PricingSamples:
    """
    Never-exercise transitions (x_t, t) with both possible successors
    evaluated up front: features, payoffs and whether the successor sits
    at the horizon.
    """
    phi: np.ndarray
    phi_up: np.ndarray
    phi_down: np.ndarray
    g: np.ndarray
    g_up: np.ndarray
    g_down: np.ndarray
    at_horizon: np.ndarray
    ridge: float = 0.0

    def __len__(self) -> int:
        return self.phi.shape[0]

    @property
    def dimension(self) -> int:
        return self.phi.shape[1]

    @cached_property
    def A(self) -> np.ndarray:
        return self.phi.T @ self.phi / len(self) + self.ridge * np.eye(self.dimension)

    @cached_property
    def factor(self):
        return factorize(self.A)

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.A))


def _samples_at(
    x: np.ndarray,
    t: np.ndarray,
    price_model: BernoulliPriceModel,
    option: OptionSpec,
    features: PricingFeatures,
    ridge: float,
) -> PricingSamples:
    if x.size == 0:
        raise ValueError("cannot estimate from an empty sample")
    x_up, x_down = x * price_model.up, x * price_model.down
    samples = PricingSamples(
        phi=features(x, t),
        phi_up=features(x_up, t + 1),
        phi_down=features(x_down, t + 1),
        g=option.payoff(x),
        g_up=option.payoff(x_up),
        g_down=option.payoff(x_down),
        at_horizon=(t + 1) >= price_model.horizon,
        ridge=ridge,
    )
    if not samples.condition <= MAX_CONDITION:
        raise RankDeficientError(samples.condition)
    return samples


def samples_from_paths(
    paths: np.ndarray,
    price_model: BernoulliPriceModel,
    option: OptionSpec,
    features: PricingFeatures,
    ridge: float = 0.0,
) -> PricingSamples:
    """Every (x_t, t) with t < T on every path."""
    paths = np.asarray(paths, dtype=float)
    T = price_model.horizon
    if paths.ndim != 2 or paths.shape[1] != T + 1:
        raise DimensionError(f"price paths must have shape (n, {T + 1}), got {paths.shape}")
    x = paths[:, :T].ravel()
    t = np.tile(np.arange(T), paths.shape[0])
    return _samples_at(x, t, price_model, option, features, ridge)


def lattice_samples(
    price_model: BernoulliPriceModel,
    option: OptionSpec,
    features: PricingFeatures,
    ridge: float = 0.0,
) -> PricingSamples:
    """Exhaustive data: every lattice node with t < T exactly once."""
    T = price_model.horizon
    t = np.array([s for s in range(T) for _ in range(s + 1)])
    j = np.array([k for s in range(T) for k in range(s + 1)])
    x = price_model.x0 * price_model.up ** j * price_model.down ** (t - j)
    return _samples_at(x, t, price_model, option, features, ridge)


# ── Pricing ARPI ──────────────────────────────────────────────────────

def _successor_values(
    phi_next: np.ndarray,
    g_next: np.ndarray,
    at_horizon: np.ndarray,
    w_i: np.ndarray,
    theta: np.ndarray,
) -> np.ndarray:
    # nu = g where the greedy rule of w_i exercises (always at the horizon), else phi^T theta
    exercise = at_horizon | (g_next > phi_next @ w_i)
    return np.where(exercise, g_next, phi_next @ theta)


def arpi_pricing_update(
    samples: PricingSamples,
    uncertain: UncertainUpProbability,
    discount: float,
    w_i: np.ndarray,
    theta: np.ndarray,
) -> np.ndarray:
    """theta_{j+1} = A^-1 (gamma * (1/N) sum_t phi(x_t, t) sigma(nu_up, nu_down))."""
    nu_up = _successor_values(samples.phi_up, samples.g_up, samples.at_horizon, w_i, theta)
    nu_down = _successor_values(samples.phi_down, samples.g_down, samples.at_horizon, w_i, theta)
    worst = binary_worst_case(nu_up, nu_down, uncertain.p_minus, uncertain.p_plus)
    rhs = discount * samples.phi.T @ worst / len(samples)
    return scipy.linalg.cho_solve(samples.factor, rhs)


def _exercise_decisions(samples: PricingSamples, w: np.ndarray) -> np.ndarray:
    """Greedy exercise flags on every sampled state and every non-horizon successor."""
    live = ~samples.at_horizon
    return np.concatenate([
        samples.g > samples.phi @ w,
        (samples.g_up > samples.phi_up @ w)[live],
        (samples.g_down > samples.phi_down @ w)[live],
    ])


@dataclass(eq=False)
class PricingResult:
    weights: np.ndarray
    diagnostics: list[ArpiIteration] = field(default_factory=list)
    converged: bool = False
    cycled: bool = False

    def diagnostics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(d.outer, d.inner_iterations, d.residual, d.policy_changes) for d in self.diagnostics],
            columns=["outer", "inner_iterations", "residual", "policy_changes"],
        )


def price_arpi(
    samples: PricingSamples,
    uncertain: UncertainUpProbability,
    discount: float,
    inner_tol: float = 1e-8,
    inner_max: int = 1_000,
    outer_max: int = 30,
    w0: np.ndarray | None = None,
) -> PricingResult:
    """
    Approximate robust policy iteration for the continuation value.

    Each outer step evaluates the exercise rule of the current weights with
    the specialised theta iteration (started at the current weights) and
    stops once no sampled exercise decision changes or a rule repeats.
    """
    w = np.zeros(samples.dimension) if w0 is None else np.asarray(w0, dtype=float)
    result = PricingResult(weights=w)
    before = _exercise_decisions(samples, w)
    seen = {np.packbits(before).tobytes()}

    for i in range(outer_max):
        w_i = w
        try:
            inner: FixedPointResult = solve_fixed_point(
                lambda theta: arpi_pricing_update(samples, uncertain, discount, w_i, theta),
                w_i, inner_tol, inner_max, "pricing ARPI inner loop",
            )
        except DivergenceError as e:
            raise DivergenceError(e.iteration, e.norm, outer_index=i) from e
        except NonConvergenceError as e:
            e.add_note(f"in outer iteration {i}")
            raise
        w = inner.weights
        after = _exercise_decisions(samples, w)
        changes = int(np.count_nonzero(before != after))
        result.diagnostics.append(ArpiIteration(i, inner.iterations, inner.residual, changes))
        logger.debug("pricing ARPI outer %d: %d inner iterations, %d decision changes",
                     i, inner.iterations, changes)
        if changes == 0:
            result.converged = True
            break
        key = np.packbits(after).tobytes()
        if key in seen:
            logger.warning("pricing ARPI exercise rule cycled at outer iteration %d", i)
            result.cycled = True
            break
        seen.add(key)
        before = after

    result.weights = w
    return result


# ── Policies and evaluation ───────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PricingPolicy:
    """Exercise when g(x) > phi(x, t)^T w before the horizon, and when g(x) > 0 at it."""
    features: PricingFeatures
    weights: np.ndarray
    option: OptionSpec
    horizon: int
    discount: float

    def continuation(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.features(x, t) @ self.weights

    def exercise(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t), x.shape)
        g = self.option.payoff(x)
        return np.where(t < self.horizon, g > self.continuation(x, t), g > 0.0)

    def value(self, x: float, t: int = 0) -> float:
        """Estimated option value max(g, continuation) at a single state."""
        g = float(self.option.payoff(x))
        if t >= self.horizon:
            return g
        return max(g, float(self.continuation(np.array([x]), np.array([t]))[0]))

    def realised_payoffs(self, paths: np.ndarray) -> np.ndarray:
        """gamma^t g(x_t) at the first exercise time of each path, 0 if never exercised."""
        paths = np.asarray(paths, dtype=float)
        times = np.broadcast_to(np.arange(paths.shape[1]), paths.shape)
        decisions = self.exercise(paths, times)
        first = np.argmax(decisions, axis=1)
        rows = np.arange(paths.shape[0])
        payoff = self.discount ** first * self.option.payoff(paths[rows, first])
        return np.where(decisions.any(axis=1), payoff, 0.0)


# ── Contraction assumption on stopping problems ───────────────────────

def never_stop_policy(lattice: StoppingLattice) -> Policy:
    return (CONTINUE,) * lattice.n_nodes


def stopping_kernel(lattice: StoppingLattice, p_hat: float | None = None) -> ExplorationKernel:
    """
    Per-action exploration kernel: continuation moves up with p_hat, exercise
    and the horizon lead to the terminal state.
    """
    p_hat = lattice.uncertain.p_hat if p_hat is None else p_hat
    n = lattice.n_nodes
    P = np.zeros((n, 2, n + 1))
    P[:, EXERCISE, n] = 1.0
    for i in range(n):
        t, j = lattice.node(i)
        if t == lattice.horizon:
            P[i, CONTINUE, n] = 1.0
        else:
            P[i, CONTINUE, lattice.index(t + 1, j + 1)] = p_hat
            P[i, CONTINUE, lattice.index(t + 1, j)] = 1.0 - p_hat
    return ExplorationKernel(P, n_terminals=1)


def check_stopping_assumption(
    lattice: StoppingLattice,
    kernel: ExplorationKernel | None = None,
) -> Assumption2Check:
    """The contraction check for the never-stop policy under its own kernel."""
    kernel = stopping_kernel(lattice) if kernel is None else kernel
    return check_assumption2(lattice.model, never_stop_policy(lattice), kernel)


@dataclass(frozen=True)
class PropagationReport:
    beta: float
    policies_checked: int
    failures: tuple[Policy, ...]

    @property
    def holds(self) -> bool:
        return not self.failures


def verify_stopping_propagation(
    lattice: StoppingLattice,
    beta: float,
    kernel: ExplorationKernel | None = None,
    tol: float = 1e-12,
) -> PropagationReport:
    """
    Check the state and the state-action bound at beta for every
    deterministic stopping policy on the lattice.
    """
    if lattice.n_nodes > PROPAGATION_MAX_STATES:
        raise ValueError(
            f"exhaustive enumeration supports at most {PROPAGATION_MAX_STATES} states, "
            f"got {lattice.n_nodes}"
        )
    kernel = stopping_kernel(lattice) if kernel is None else kernel
    failures = []
    count = 0
    for policy in lattice.model.all_policies():
        count += 1
        states = check_assumption2(lattice.model, policy, kernel)
        pairs = check_state_action_assumption(lattice.model, policy, kernel)
        if states.beta > beta + tol or pairs.beta > beta + tol:
            failures.append(policy)
    return PropagationReport(beta, count, tuple(failures))
