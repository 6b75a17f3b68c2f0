"""
robustadp/experiment.py
Robust versus nominal exercise policies on simulated put options.

One repetition:
  1. draw n_data true-model price paths from x0
  2. fit p_hat and its Clopper-Pearson interval at level alpha
  3. simulate n_sim never-exercise paths under p_hat from x0 + U[-jitter, jitter]
  4. run pricing ARPI on the same samples for the interval and for p_hat alone
  5. play both exercise rules on the same n_test true-model paths from x0
  6. keep nearest-rank percentiles of each rule's discounted payoff

Across repetitions every percentile is compared with a paired t-test.
Repetition r of setting s draws from SeedSequence([seed, s, r]), so results
do not depend on how many workers run them.
"""

from __future__ import annotations
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.stats

from robustadp.catalog import ArtifactCatalog
from robustadp.config import PricingConfig
from robustadp.errors import RobustAdpError
from robustadp.options import (
    BernoulliPriceModel,
    OptionSpec,
    PricingPolicy,
    PricingResult,
    RbfFeatures,
    UncertainUpProbability,
    default_rbf_features,
    fit_model,
    price_arpi,
    samples_from_paths,
)

logger = logging.getLogger(__name__)

SIGNIFICANCE = 0.05


def nearest_rank_percentiles(values: np.ndarray, percentiles: tuple[int, ...] | list[int]) -> np.ndarray:
    """The ceil(q/100 * n)-th smallest value for every q."""
    ordered = np.sort(np.asarray(values, dtype=float))
    n = ordered.shape[0]
    if n == 0:
        raise ValueError("no values to rank")
    ranks = [max(1, math.ceil(q / 100.0 * n)) for q in percentiles]
    return ordered[[min(r, n) - 1 for r in ranks]]


@dataclass(frozen=True)
class RepetitionResult:
    setting: int
    repetition: int
    alpha: float
    n_data: int
    p_hat: float = math.nan
    p_minus: float = math.nan
    p_plus: float = math.nan
    robust: tuple[float, ...] = ()
    nominal: tuple[float, ...] = ()
    robust_mean: float = math.nan
    nominal_mean: float = math.nan
    robust_converged: bool = False
    nominal_converged: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _streams(seed: int, setting: int, repetition: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence([seed, setting, repetition]).spawn(3)
    return [np.random.default_rng(s) for s in children]


@dataclass(frozen=True, eq=False)
class PricingRun:
    """Everything one fit-and-price pass produces before testing."""
    truth: BernoulliPriceModel
    option: OptionSpec
    uncertain: UncertainUpProbability
    features: RbfFeatures
    discount: float
    robust: PricingResult
    nominal: PricingResult

    def policy(self, which: str) -> PricingPolicy:
        result = self.robust if which == "robust" else self.nominal
        return PricingPolicy(self.features, result.weights, self.option,
                             self.truth.horizon, self.discount)


def fit_and_price(
    config: PricingConfig,
    alpha: float,
    n_data: int,
    data_rng: np.random.Generator,
    sim_rng: np.random.Generator,
) -> PricingRun:
    """Steps 1-4: observe, fit, simulate under p_hat and run pricing ARPI twice."""
    truth = BernoulliPriceModel(config.up, config.down, config.p, config.x0, config.horizon)
    option = OptionSpec(config.strike)
    uncertain = fit_model(truth.simulate(n_data, data_rng), config.up, config.down, alpha)
    start = config.x0 + sim_rng.uniform(-config.jitter, config.jitter, config.n_sim)
    sim = truth.simulate(config.n_sim, sim_rng, start=start, p=uncertain.p_hat)
    features = default_rbf_features(config.x0, config.horizon, config.rbf_grid, config.price_range)
    samples = samples_from_paths(sim, truth, option, features, ridge=config.ridge)

    solve = dict(discount=config.discount, inner_tol=config.inner_tol,
                 inner_max=config.inner_max, outer_max=config.outer_max)
    return PricingRun(
        truth=truth,
        option=option,
        uncertain=uncertain,
        features=features,
        discount=config.discount,
        robust=price_arpi(samples, uncertain, **solve),
        nominal=price_arpi(samples, uncertain.nominal(), **solve),
    )


def run_repetition(
    config: PricingConfig,
    alpha: float,
    n_data: int,
    setting: int,
    repetition: int,
) -> RepetitionResult:
    data_rng, sim_rng, test_rng = _streams(config.seed, setting, repetition)
    try:
        run = fit_and_price(config, alpha, n_data, data_rng, sim_rng)
    except RobustAdpError as e:
        logger.warning("setting %d repetition %d failed: %s", setting, repetition, e)
        return RepetitionResult(setting, repetition, alpha, n_data, error=str(e))

    test = run.truth.simulate(config.n_test, test_rng)
    robust = run.policy("robust").realised_payoffs(test)
    nominal = run.policy("nominal").realised_payoffs(test)
    return RepetitionResult(
        setting=setting,
        repetition=repetition,
        alpha=alpha,
        n_data=n_data,
        p_hat=run.uncertain.p_hat,
        p_minus=run.uncertain.p_minus,
        p_plus=run.uncertain.p_plus,
        robust=tuple(nearest_rank_percentiles(robust, config.percentiles).tolist()),
        nominal=tuple(nearest_rank_percentiles(nominal, config.percentiles).tolist()),
        robust_mean=float(robust.mean()),
        nominal_mean=float(nominal.mean()),
        robust_converged=run.robust.converged,
        nominal_converged=run.nominal.converged,
    )


def _run_task(task: tuple[PricingConfig, float, int, int, int]) -> RepetitionResult:
    return run_repetition(*task)


def run_experiment(config: PricingConfig, threads: int | None = None) -> list[RepetitionResult]:
    """All repetitions of every (alpha, n_data) setting, in setting then repetition order."""
    tasks = [
        (config, alpha, n_data, s, r)
        for s, (alpha, n_data) in enumerate(config.settings())
        for r in range(config.repetitions)
    ]
    logger.info("running %d repetitions over %d setting(s)", len(tasks), len(config.settings()))
    if threads == 1 or len(tasks) == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // 64)))
    failed = sum(not r.ok for r in results)
    if failed:
        logger.warning("%d of %d repetitions failed and are left out of the summary", failed, len(results))
    return results


# ── Tables ────────────────────────────────────────────────────────────

def repetitions_frame(results: list[RepetitionResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.alpha, r.n_data, r.repetition, r.p_hat, r.p_minus, r.p_plus, r.robust_mean,
          r.nominal_mean, r.robust_converged, r.nominal_converged, r.error or "")
         for r in results],
        columns=["alpha", "n_data", "repetition", "p_hat", "p_minus", "p_plus", "robust_mean",
                 "nominal_mean", "robust_converged", "nominal_converged", "error"],
    )


def payoffs_frame(results: list[RepetitionResult], percentiles: tuple[int, ...]) -> pd.DataFrame:
    rows = [
        (r.alpha, r.n_data, r.repetition, q, rob, nom)
        for r in results if r.ok
        for q, rob, nom in zip(percentiles, r.robust, r.nominal)
    ]
    return pd.DataFrame(rows, columns=["alpha", "n_data", "repetition", "percentile", "robust", "nominal"])


def summarize(results: list[RepetitionResult], percentiles: tuple[int, ...]) -> pd.DataFrame:
    """
    Mean percentile payoffs per setting with a paired t-test robust vs nominal.

    A percentile where both rules earn identical payoffs in every repetition
    has no t statistic (nan) and is reported as not significant.
    """
    rows = []
    settings = sorted({(r.setting, r.alpha, r.n_data) for r in results})
    for setting, alpha, n_data in settings:
        done = [r for r in results if r.setting == setting and r.ok]
        if not done:
            continue
        robust = np.array([r.robust for r in done])
        nominal = np.array([r.nominal for r in done])
        for i, q in enumerate(percentiles):
            if len(done) > 1:
                with np.errstate(invalid="ignore", divide="ignore"):
                    test = scipy.stats.ttest_rel(robust[:, i], nominal[:, i])
                t_stat, p_value = float(test.statistic), float(test.pvalue)
            else:
                t_stat = p_value = math.nan
            rows.append((
                alpha, n_data, q, float(robust[:, i].mean()), float(nominal[:, i].mean()),
                t_stat, p_value, bool(p_value < SIGNIFICANCE), len(done),
            ))
    return pd.DataFrame(rows, columns=[
        "alpha", "n_data", "percentile", "robust_mean", "nominal_mean",
        "t_statistic", "p_value", "significant", "repetitions",
    ])


# ── Outputs ───────────────────────────────────────────────────────────

def write_chart(path, summary: pd.DataFrame) -> None:
    """Percentile curves per setting; significant percentiles carry an asterisk."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "robustadp"
    groups = list(summary.groupby(["alpha", "n_data"], sort=False))
    fig, axes = plt.subplots(1, max(1, len(groups)), figsize=(5 * max(1, len(groups)), 4), squeeze=False)
    for ax, ((alpha, n_data), frame) in zip(axes[0], groups):
        ax.plot(frame["percentile"], frame["robust_mean"], "o-", label="robust")
        ax.plot(frame["percentile"], frame["nominal_mean"], "s--", label="nominal")
        marked = frame[frame["significant"]]
        top = frame[["robust_mean", "nominal_mean"]].max(axis=1)
        for q, y in zip(marked["percentile"], top[frame["significant"]]):
            ax.annotate("*", (q, y), ha="center", va="bottom")
        ax.set_title(f"alpha={alpha:g}, N_data={n_data}")
        ax.set_xlabel("percentile")
        ax.set_ylabel("payoff")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_outputs(
    catalog: ArtifactCatalog,
    results: list[RepetitionResult],
    config: PricingConfig,
    run: dict,
    chart: bool = True,
) -> pd.DataFrame:
    summary = summarize(results, config.percentiles)
    catalog.write_table("repetitions.csv", repetitions_frame(results), run)
    catalog.write_table("payoffs.csv", payoffs_frame(results, config.percentiles), run)
    catalog.write_table("summary.csv", summary, run)
    if chart and not summary.empty:
        write_chart(catalog.register("percentiles.svg", "chart", run), summary)
    return summary
