"""tests/test_experiment.py — Percentiles, repetitions, the paired summary and experiment outputs."""

import dataclasses
import math

import numpy as np
import pytest
import scipy.stats

from robustadp.catalog import ArtifactCatalog, read_table
from robustadp.config import PricingConfig
from robustadp.experiment import (
    RepetitionResult,
    fit_and_price,
    nearest_rank_percentiles,
    payoffs_frame,
    repetitions_frame,
    run_experiment,
    run_repetition,
    summarize,
    write_outputs,
)


@pytest.fixture
def tiny():
    return PricingConfig(
        horizon=4, n_data=(5,), alpha=(0.5,), n_sim=100, n_test=200,
        repetitions=2, percentiles=(10, 50, 90), seed=1,
    )


def _result(rep, robust, nominal, setting=0, error=None):
    return RepetitionResult(
        setting=setting, repetition=rep, alpha=0.05, n_data=10,
        p_hat=0.5, p_minus=0.2, p_plus=0.8,
        robust=tuple(robust), nominal=tuple(nominal),
        robust_mean=float(np.mean(robust)), nominal_mean=float(np.mean(nominal)),
        robust_converged=True, nominal_converged=True, error=error,
    )


# ── Percentiles ──────────────────────────────────────────────────────

class TestNearestRank:
    def test_one_to_ten(self):
        values = np.arange(10, 0, -1)
        assert nearest_rank_percentiles(values, [5, 10, 50, 95, 100]).tolist() == [1, 1, 5, 10, 10]

    def test_small_sample(self):
        assert nearest_rank_percentiles([3.0, 1.0, 2.0], [50]).tolist() == [2.0]

    def test_values_come_from_the_sample(self):
        values = np.random.default_rng(0).normal(size=37)
        assert set(nearest_rank_percentiles(values, range(5, 100, 5))) <= set(values)

    def test_empty(self):
        with pytest.raises(ValueError):
            nearest_rank_percentiles([], [50])


# ── Summary ──────────────────────────────────────────────────────────

class TestSummarize:
    def test_identical_payoffs_not_significant(self):
        results = [_result(r, [1.0 + r, 2.0], [1.0 + r, 1.0]) for r in range(3)]
        summary = summarize(results, (50, 90))
        same = summary[summary["percentile"] == 50].iloc[0]
        assert math.isnan(same["t_statistic"])
        assert not same["significant"]

    def test_paired_t_test(self):
        robust = [2.0, 3.0, 4.0]
        nominal = [1.0, 1.5, 2.9]
        results = [_result(r, [robust[r]], [nominal[r]]) for r in range(3)]
        row = summarize(results, (90,)).iloc[0]
        expected = scipy.stats.ttest_rel(robust, nominal)
        assert row["t_statistic"] == pytest.approx(expected.statistic)
        assert row["p_value"] == pytest.approx(expected.pvalue)
        assert row["significant"]
        assert row["robust_mean"] == pytest.approx(3.0)
        assert row["repetitions"] == 3

    def test_failed_repetitions_left_out(self):
        results = [_result(r, [1.0], [0.5 * r]) for r in range(3)]
        results.append(RepetitionResult(0, 3, 0.05, 10, error="inner loop did not converge"))
        row = summarize(results, (50,)).iloc[0]
        assert row["repetitions"] == 3
        assert len(payoffs_frame(results, (50,))) == 3
        assert repetitions_frame(results)["error"].tolist()[-1] == "inner loop did not converge"

    def test_single_repetition_has_no_test(self):
        row = summarize([_result(0, [1.0], [2.0])], (50,)).iloc[0]
        assert math.isnan(row["p_value"])
        assert not row["significant"]

    def test_one_block_per_setting(self):
        results = [_result(r, [1.0, 2.0], [1.0, 2.0], setting=s) for s in (0, 1) for r in range(2)]
        summary = summarize(results, (50, 90))
        assert len(summary) == 4

    def test_ok_flag(self):
        assert _result(0, [1.0], [1.0]).ok
        assert not RepetitionResult(0, 0, 0.05, 10, error="boom").ok


# ── Repetitions ──────────────────────────────────────────────────────

class TestRun:
    def test_fit_and_price(self, tiny):
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(0).spawn(2)]
        run = fit_and_price(tiny, 0.5, 5, *rngs)
        assert run.uncertain.n == 5 * 4
        assert run.uncertain.p_minus <= run.uncertain.p_hat <= run.uncertain.p_plus
        assert run.robust.weights.shape == (50,)
        assert run.nominal.weights.shape == (50,)

    def test_repetition_is_reproducible(self, tiny):
        a = run_repetition(tiny, 0.5, 5, 0, 1)
        b = run_repetition(tiny, 0.5, 5, 0, 1)
        other = run_repetition(tiny, 0.5, 5, 0, 0)
        assert repetitions_frame([a]).equals(repetitions_frame([b]))
        assert a.robust == b.robust
        assert (a.p_hat, a.robust) != (other.p_hat, other.robust)

    def test_percentiles_per_rule(self, tiny):
        result = run_repetition(tiny, 0.5, 5, 0, 0)
        assert result.ok
        assert len(result.robust) == len(result.nominal) == 3
        assert list(result.robust) == sorted(result.robust)
        assert all(0.0 <= v <= tiny.strike for v in result.robust + result.nominal)

    def test_sequential_run_order(self, tiny):
        config = dataclasses.replace(tiny, n_data=(5, 8))
        results = run_experiment(config, threads=1)
        assert [(r.setting, r.repetition) for r in results] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert [r.n_data for r in results] == [5, 5, 8, 8]

    def test_worker_count_does_not_change_results(self, tiny):
        a = run_experiment(tiny, threads=1)
        b = run_experiment(tiny, threads=2)
        assert repetitions_frame(a).equals(repetitions_frame(b))
        assert payoffs_frame(a, tiny.percentiles).equals(payoffs_frame(b, tiny.percentiles))

    @pytest.mark.slow
    def test_intervals_shrink_with_data(self):
        config = PricingConfig(horizon=10, n_data=(5, 200), alpha=(0.05,), n_sim=300,
                               n_test=500, repetitions=5, seed=3)
        results = run_experiment(config, threads=1)
        width = {n: np.mean([r.p_plus - r.p_minus for r in results if r.n_data == n and r.ok])
                 for n in (5, 200)}
        assert width[200] < width[5]


# ── Robust against nominal exercise rules ────────────────────────────

@pytest.mark.slow
class TestRobustAgainstNominal:
    def test_robust_wins_low_and_loses_high(self):
        config = PricingConfig(repetitions=40, seed=11)
        results = run_experiment(config)
        assert all(r.ok for r in results)
        summary = summarize(results, config.percentiles).set_index("percentile")

        # walks that never drop below the strike pay nothing under any rule
        for q in (5, 10):
            assert summary.loc[q, "robust_mean"] == summary.loc[q, "nominal_mean"] == 0.0
            assert not summary.loc[q, "significant"]

        middle = summary.loc[30:55]
        gains = middle[middle["significant"] & (middle["t_statistic"] > 0)]
        assert len(gains) > 0
        top = summary.loc[90]
        assert top["significant"] and top["t_statistic"] < 0
        assert top["nominal_mean"] > top["robust_mean"]

    def test_curves_coincide_for_a_tight_interval(self):
        config = PricingConfig(alpha=(0.999,), n_data=(10_000,), repetitions=20, seed=12)
        results = run_experiment(config)
        assert all(r.p_plus - r.p_minus < 1e-3 for r in results)
        summary = summarize(results, config.percentiles)
        assert summary["significant"].mean() < 0.2


# ── Outputs ──────────────────────────────────────────────────────────

class TestOutputs:
    @pytest.fixture
    def results(self):
        return [_result(r, [1.0 + r, 2.0 + r, 3.0], [1.0, 2.5, 3.0 + r]) for r in range(3)]

    def test_tables_and_chart(self, tmp_path, tiny, results):
        run = {"subcommand": "price-options", "seed": 1}
        with ArtifactCatalog(tmp_path) as catalog:
            summary = write_outputs(catalog, results, tiny, run)
            assert catalog.list_artifacts() == ["payoffs.csv", "percentiles.svg",
                                                "repetitions.csv", "summary.csv"]
        assert (tmp_path / "percentiles.svg").read_text(encoding="utf-8").lstrip().startswith("<?xml")
        again = read_table(tmp_path / "summary.csv")
        assert list(again["percentile"]) == [10, 50, 90]
        assert np.allclose(again["robust_mean"], summary["robust_mean"])

    def test_no_chart(self, tmp_path, tiny, results):
        with ArtifactCatalog(tmp_path) as catalog:
            write_outputs(catalog, results, tiny, {"subcommand": "price-options"}, chart=False)
        assert not (tmp_path / "percentiles.svg").exists()

    def test_chart_is_reproducible(self, tmp_path, tiny, results):
        for name in ("a", "b"):
            with ArtifactCatalog(tmp_path / name) as catalog:
                write_outputs(catalog, results, tiny, {"subcommand": "price-options", "seed": 1})
        assert (tmp_path / "a" / "percentiles.svg").read_bytes() == \
            (tmp_path / "b" / "percentiles.svg").read_bytes()
