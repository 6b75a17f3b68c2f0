"""tests/test_cli.py — The python -m robustadp command line, end to end."""

import numpy as np
import pandas as pd
import pytest

from robustadp.__main__ import _fmt_table, main
from robustadp.catalog import read_table
from robustadp.exact import robust_policy_iteration, solve_optimal_exact
from robustadp.model import load_model

MODEL_YAML = """
discount: 0.9
states: [low, high]
terminals: [sold]
actions: [hold, sell]
rewards:
  low: [0.0, 1.0]
  high: [0.5, 2.0]
transitions:
  low:
    hold: {interval: {lo: {low: 0.2, high: 0.2}, hi: {low: 0.8, high: 0.8}}}
    sell: {singleton: {sold: 1.0}}
  high:
    hold: {vertices: [{low: 1.0}, {high: 1.0}]}
    sell: {singleton: {sold: 1.0}}
"""

UNDISCOUNTED_YAML = """
discount: 1.0
states: [wait]
terminals: [done]
actions: [stop, go]
rewards:
  wait: [1.0, 0.0]
transitions:
  wait:
    stop: {singleton: {done: 1.0}}
    go: {interval: {lo: {wait: 0.5, done: 0.2}, hi: {wait: 0.8, done: 0.5}}}
"""

EXPERIMENT_YAML = """
horizon: 4
n_data: 5
alpha: 0.5
n_sim: 100
n_test: 200
repetitions: 2
percentiles: [10, 50, 90]
seed: 1
"""


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "model.yaml"
    path.write_text(MODEL_YAML, encoding="utf-8")
    return str(path)


@pytest.fixture
def experiment_file(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text(EXPERIMENT_YAML, encoding="utf-8")
    return str(path)


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


def run(out, *argv):
    return main(["--out", str(out), *argv])


# ── solve-exact ──────────────────────────────────────────────────────

class TestSolveExact:
    def test_value_iteration(self, model_file, out, capsys):
        assert run(out, "solve-exact", model_file) == 0
        assert "residual:" in capsys.readouterr().out
        values = read_table(out / "values.csv")
        expected, policy = solve_optimal_exact(load_model(model_file))
        assert values["state"].tolist() == ["low", "high"]
        assert np.allclose(values["value"], expected, atol=1e-8)
        assert values["action"].tolist() == [["hold", "sell"][u] for u in policy]

    def test_policy_iteration(self, model_file, out):
        assert run(out, "solve-exact", model_file, "--method", "pi") == 0
        expected, _ = robust_policy_iteration(load_model(model_file))
        assert np.allclose(read_table(out / "values.csv")["value"], expected, atol=1e-8)

    def test_refuses_to_overwrite(self, model_file, out, capsys):
        assert run(out, "solve-exact", model_file) == 0
        assert run(out, "solve-exact", model_file) == 2
        assert "already exists" in capsys.readouterr().err
        assert main(["--out", str(out), "--overwrite", "solve-exact", model_file]) == 0

    def test_missing_file(self, tmp_path, out, capsys):
        assert run(out, "solve-exact", str(tmp_path / "nope.yaml")) == 2
        assert "Error:" in capsys.readouterr().err

    def test_invalid_model(self, tmp_path, out, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(
            "discount: 0.9\nstates: 1\nactions: 1\n"
            "transitions: {0: {0: {interval: {lo: [0.6], hi: [0.7]}}}}\n",
            encoding="utf-8",
        )
        assert run(out, "solve-exact", str(path)) == 2

    def test_non_convergence(self, model_file, out, capsys):
        assert run(out, "solve-exact", model_file, "--max-iters", "2") == 3
        assert "Error:" in capsys.readouterr().err

    def test_undiscounted_model(self, tmp_path, out):
        path = tmp_path / "undiscounted.yaml"
        path.write_text(UNDISCOUNTED_YAML, encoding="utf-8")
        assert run(out, "solve-exact", str(path)) == 0
        assert np.allclose(read_table(out / "values.csv")["value"], [1.0])
        assert main(["--out", str(out), "--overwrite", "solve-exact", str(path), "--method", "pi"]) == 0
        assert np.allclose(read_table(out / "values.csv")["value"], [1.0])


# ── rpvi and check-assumptions ───────────────────────────────────────

class TestRpvi:
    def test_refused_when_check_fails(self, model_file, out, capsys):
        assert run(out, "rpvi", model_file, "--policy", "hold,sell") == 2
        captured = capsys.readouterr()
        assert "contraction check:" in captured.out
        assert "--force" in captured.err
        assert not (out / "weights.csv").exists()

    def test_forced_tabular_run(self, model_file, out, capsys):
        assert run(out, "rpvi", model_file, "--policy", "hold,sell", "--force") == 0
        values = read_table(out / "values.csv")
        assert np.allclose(values["approx"], values["exact"], atol=1e-8)
        assert len(read_table(out / "weights.csv")) == 2

    def test_policy_by_index(self, model_file, out):
        assert run(out, "rpvi", model_file, "--policy", "1,1", "--kernel", "uniform") == 0
        values = read_table(out / "values.csv")
        assert np.allclose(values["exact"], [1.0, 2.0])

    def test_unknown_action(self, model_file, out, capsys):
        assert run(out, "rpvi", model_file, "--policy", "hold,jump") == 2
        assert "unknown action 'jump'" in capsys.readouterr().err

    def test_sampled_needs_seed(self, model_file, out, capsys):
        assert run(out, "rpvi", model_file, "--policy", "hold,sell", "--sampled", "50", "--force") == 2
        assert "--seed" in capsys.readouterr().err

    def test_existing_output_checked_first(self, model_file, out, capsys):
        out.mkdir()
        (out / "values.csv").write_text("old\n", encoding="utf-8")
        assert run(out, "rpvi", model_file, "--policy", "hold,sell", "--force") == 2
        assert "already exist" in capsys.readouterr().err
        assert not (out / "weights.csv").exists()
        assert (out / "values.csv").read_text(encoding="utf-8") == "old\n"

    def test_sampled_is_reproducible(self, model_file, out):
        argv = ["rpvi", model_file, "--policy", "hold,sell", "--sampled", "200", "--seed", "3", "--force"]
        assert run(out, *argv) == 0
        first = (out / "values.csv").read_bytes(), (out / "weights.csv").read_bytes()
        assert main(["--out", str(out), "--overwrite", *argv]) == 0
        assert first == ((out / "values.csv").read_bytes(), (out / "weights.csv").read_bytes())


class TestCheckAssumptions:
    def test_failing_policy(self, model_file, out, capsys):
        assert run(out, "check-assumptions", model_file, "--policy", "hold,hold") == 1
        captured = capsys.readouterr().out
        assert "state bound" in captured and "state-action bound" in captured

    def test_passing_policy(self, model_file, out):
        assert run(out, "check-assumptions", model_file, "--policy", "sell,sell") == 0


# ── arpi ─────────────────────────────────────────────────────────────

class TestArpi:
    def test_exhaustive(self, model_file, out, capsys):
        assert run(out, "arpi", model_file, "--exhaustive") == 0
        assert "ARPI converged" in capsys.readouterr().out
        policy = read_table(out / "policy.csv")
        _, best = solve_optimal_exact(load_model(model_file))
        assert policy["action"].tolist() == [["hold", "sell"][u] for u in best]
        assert list(read_table(out / "diagnostics.csv").columns) == [
            "outer", "inner_iterations", "residual", "policy_changes"]

    def test_existing_output_checked_first(self, model_file, out, capsys):
        out.mkdir()
        (out / "diagnostics.csv").write_text("old\n", encoding="utf-8")
        assert run(out, "arpi", model_file, "--exhaustive") == 2
        assert "already exist" in capsys.readouterr().err
        assert not (out / "policy.csv").exists()

    def test_pricing_existing_output_checked_first(self, experiment_file, out):
        out.mkdir()
        (out / "diagnostics.csv").write_text("old\n", encoding="utf-8")
        assert run(out, "arpi", "--pricing", experiment_file) == 2
        assert not (out / "prices.csv").exists()

    def test_needs_data_source(self, model_file, out, capsys):
        assert run(out, "arpi", model_file) == 2
        assert "Error:" in capsys.readouterr().err

    def test_samples_need_seed(self, model_file, out):
        assert run(out, "arpi", model_file, "--samples", "100") == 2

    def test_sampled_is_reproducible(self, model_file, out):
        argv = ["arpi", model_file, "--samples", "300", "--seed", "5"]
        assert run(out, *argv) == 0
        first = (out / "policy.csv").read_bytes()
        assert main(["--out", str(out), "--overwrite", *argv]) == 0
        assert (out / "policy.csv").read_bytes() == first

    def test_pricing(self, experiment_file, out, capsys):
        assert run(out, "arpi", "--pricing", experiment_file) == 0
        assert "p_hat =" in capsys.readouterr().out
        prices = read_table(out / "prices.csv")
        assert prices["model"].tolist() == ["robust", "nominal"]
        assert np.all(prices["value"] >= 0.0)


# ── price-options ────────────────────────────────────────────────────

class TestPriceOptions:
    def test_experiment(self, experiment_file, out, capsys):
        assert main(["--out", str(out), "--threads", "1", "price-options", experiment_file]) == 0
        for name in ("repetitions.csv", "payoffs.csv", "summary.csv", "percentiles.svg"):
            assert (out / name).exists()
        summary = read_table(out / "summary.csv")
        assert summary["percentile"].tolist() == [10, 50, 90]
        assert "robust_mean" in capsys.readouterr().out

    def test_reproducible(self, experiment_file, out):
        argv = ["--out", str(out), "--threads", "1", "price-options", experiment_file, "--no-chart"]
        assert main(argv) == 0
        first = (out / "summary.csv").read_bytes()
        assert main(["--overwrite", *argv]) == 0
        assert (out / "summary.csv").read_bytes() == first
        assert not (out / "percentiles.svg").exists()

    def test_existing_outputs_checked_first(self, experiment_file, out, capsys):
        out.mkdir()
        (out / "summary.csv").write_text("old\n", encoding="utf-8")
        assert run(out, "price-options", experiment_file) == 2
        assert "already exist" in capsys.readouterr().err
        assert (out / "summary.csv").read_text(encoding="utf-8") == "old\n"

    def test_bad_config(self, tmp_path, out):
        path = tmp_path / "exp.yaml"
        path.write_text("repetitions: 1\n", encoding="utf-8")
        assert run(out, "price-options", str(path)) == 2


# ── Formatting ───────────────────────────────────────────────────────

def test_fmt_table():
    text = _fmt_table(pd.DataFrame({"state": ["a"], "value": [0.5]}))
    assert "| state | value |" in text
    assert text.endswith("(1 row)")
    assert _fmt_table(pd.DataFrame()) == "(0 rows)"
