"""
robustadp/__main__.py
Command-line entry point.

Usage:
    python -m robustadp solve-exact model.yaml
    python -m robustadp rpvi model.yaml --policy 0,1,0 [--features f.yaml] [--kernel k.yaml]
                                        [--sampled N --seed S] [--force]
    python -m robustadp check-assumptions model.yaml --policy 0,1,0 [--kernel k.yaml]
    python -m robustadp arpi model.yaml (--exhaustive | --samples N --seed S)
    python -m robustadp arpi --pricing experiment.yaml [--seed S]
    python -m robustadp price-options experiment.yaml

Global options: -v, --out DIR, --overwrite, --threads N

Exit codes:
    0  success
    1  check-assumptions reports a failing check
    2  invalid or unreadable model, config or output directory; contraction check refused
    3  an iteration did not converge
    4  weights diverged
"""

from __future__ import annotations
import argparse
import dataclasses
import logging
import sys

import numpy as np
import pandas as pd

from robustadp.arpi import StateActionFeatureMap, arpi
from robustadp.catalog import ArtifactCatalog
from robustadp.config import RunConfig, load_pricing_config
from robustadp.errors import (
    DivergenceError,
    ModelValidationError,
    NonConvergenceError,
    PolicyCycleError,
    RobustAdpError,
)
from robustadp.exact import (
    apply_T_opt,
    evaluate_policy_exact,
    robust_policy_iteration,
    solve_optimal_exact,
)
from robustadp.experiment import fit_and_price, run_experiment, write_outputs
from robustadp.linear import (
    Assumption2Check,
    ExplorationKernel,
    ProjectionWeights,
    check_assumption2,
    check_state_action_assumption,
    load_features,
    load_kernel,
    rpvi_exact,
    stationary_weights,
    visit_weights,
)
from robustadp.model import Policy, RobustMdp, check_policy, load_model
from robustadp.sampling import estimate_matrices, generate_trajectories, rpvi_sampled, sweep_samples

logger = logging.getLogger("robustadp")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3
EXIT_DIVERGENCE = 4

# iteration cap for exact solves of undiscounted models when --max-iters is not given
UNDISCOUNTED_MAX_ITERS = 100_000


# ── ASCII table formatter ─────────────────────────────────────────────

def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.10g}"
    return str(value)


def _fmt_table(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "(0 rows)"
    cols = [str(c) for c in frame.columns]
    str_rows = [[_cell(v) for v in row] for row in frame.itertuples(index=False)]
    widths = [max(len(c), *(len(r[i]) for r in str_rows)) for i, c in enumerate(cols)]

    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    header = "|" + "|".join(f" {c:<{w}} " for c, w in zip(cols, widths)) + "|"
    lines = [sep, header, sep]
    for row in str_rows:
        lines.append("|" + "|".join(f" {v:<{w}} " for v, w in zip(row, widths)) + "|")
    lines.append(sep)
    lines.append(f"({len(str_rows)} row{'s' if len(str_rows) != 1 else ''})")
    return "\n".join(lines)


# ── Helpers ───────────────────────────────────────────────────────────

def _parse_policy(text: str | None, model: RobustMdp) -> Policy:
    """'0,1,0' or action names; defaults to action 0 everywhere."""
    if text is None:
        return (0,) * model.n_states
    actions = []
    for token in text.split(","):
        token = token.strip()
        if token in model.action_names:
            actions.append(model.action_names.index(token))
        else:
            try:
                actions.append(int(token))
            except ValueError:
                raise ValueError(f"unknown action '{token}' in --policy") from None
    policy = tuple(actions)
    check_policy(model, policy)
    return policy


def _policy_frame(model: RobustMdp, policy: Policy, **columns) -> pd.DataFrame:
    frame = pd.DataFrame({
        "state": list(model.state_names),
        "action": [model.action_names[u] for u in policy],
    })
    for name, values in columns.items():
        frame[name] = values
    return frame


def _resolve_kernel(spec: str, model: RobustMdp, policy: Policy) -> tuple[ExplorationKernel, np.ndarray | None]:
    match spec:
        case "on-policy":
            return ExplorationKernel.on_policy(model, policy), None
        case "nominal":
            return ExplorationKernel.nominal(model), None
        case "uniform":
            return ExplorationKernel.uniform(model.n_states, model.n_terminals), None
    return load_kernel(spec, model.n_terminals)


def _projection_weights(
    model: RobustMdp,
    policy: Policy,
    kernel: ExplorationKernel,
    start: np.ndarray | None,
) -> ProjectionWeights:
    chain = kernel.for_policy(policy)
    if model.n_terminals == 0:
        return stationary_weights(chain)
    if start is None:
        start = np.zeros(model.n_states)
        start[0] = 1.0
    return visit_weights(chain, start)


def _exact_max_iters(args: argparse.Namespace, model: RobustMdp) -> int | None:
    if args.max_iters is not None:
        return args.max_iters
    return None if model.discount < 1.0 else UNDISCOUNTED_MAX_ITERS


def _print_check(label: str, check: Assumption2Check) -> None:
    print(f"{label}: {check}")


# ── Subcommands ───────────────────────────────────────────────────────

def cmd_solve_exact(args: argparse.Namespace) -> int:
    run = RunConfig("solve-exact", source=args.model, tol=args.tol, max_iters=args.max_iters,
                    out=args.out, options={"method": args.method})
    model = load_model(args.model)
    if args.method == "pi":
        values, policy = robust_policy_iteration(model, args.tol, _exact_max_iters(args, model))
    else:
        values, policy = solve_optimal_exact(model, args.tol, _exact_max_iters(args, model))
    residual = float(np.max(np.abs(apply_T_opt(model, values) - values))) if model.n_states else 0.0

    frame = _policy_frame(model, policy, value=values)
    print(_fmt_table(frame))
    print(f"residual: {residual:.3e}")
    with ArtifactCatalog(args.out, overwrite=args.overwrite) as catalog:
        catalog.write_table("values.csv", frame, run.to_dict())
    return EXIT_OK


def cmd_rpvi(args: argparse.Namespace) -> int:
    run = RunConfig("rpvi", source=args.model, seed=args.seed, tol=args.tol, max_iters=args.max_iters,
                    out=args.out, options={"policy": args.policy, "features": args.features,
                                           "kernel": args.kernel, "sampled": args.sampled,
                                           "force": args.force})
    model = load_model(args.model)
    policy = _parse_policy(args.policy, model)
    phi = np.eye(model.n_states) if args.features == "tabular" else load_features(args.features)
    catalog = ArtifactCatalog(args.out, overwrite=args.overwrite)
    catalog.ensure_free(["weights.csv", "values.csv"])
    kernel, start = _resolve_kernel(args.kernel, model, policy)

    check = check_assumption2(model, policy, kernel)
    _print_check("contraction check", check)
    if not check.holds:
        if not args.force:
            print("refusing to run: the contraction check fails (pass --force to run anyway)",
                  file=sys.stderr)
            return EXIT_INVALID
        logger.warning("contraction check %s; running anyway", check)

    max_iters = args.max_iters or 10_000
    if args.sampled:
        traj = generate_trajectories(
            model, kernel, policy, args.seed,
            n_samples=args.sampled if model.n_terminals == 0 else None,
            n_episodes=args.sampled if model.n_terminals else None,
            start=0 if start is None else start,
        )
        result = rpvi_sampled(estimate_matrices(traj, phi, model), args.tol, max_iters)
    else:
        weights = _projection_weights(model, policy, kernel, start)
        result = rpvi_exact(model, policy, phi, weights, args.tol, max_iters)

    exact = evaluate_policy_exact(model, policy, args.tol, _exact_max_iters(args, model))
    frame = _policy_frame(model, policy, approx=phi @ result.weights, exact=exact)
    weights_frame = pd.DataFrame({"feature": range(len(result.weights)), "weight": result.weights})
    print(_fmt_table(weights_frame))
    print(_fmt_table(frame))
    print(f"iterations: {result.iterations}  residual: {result.residual:.3e}")
    with catalog:
        catalog.write_table("weights.csv", weights_frame, run.to_dict())
        catalog.write_table("values.csv", frame, run.to_dict())
    return EXIT_OK


def cmd_check_assumptions(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    policy = _parse_policy(args.policy, model)
    kernel, _ = _resolve_kernel(args.kernel, model, policy)
    states = check_assumption2(model, policy, kernel, policy_aware=not args.all_actions)
    pairs = check_state_action_assumption(model, policy, kernel)
    _print_check("state bound", states)
    _print_check("state-action bound", pairs)
    return EXIT_OK if states.holds and pairs.holds else EXIT_CHECK_FAILED


def cmd_arpi(args: argparse.Namespace) -> int:
    if args.pricing:
        return _arpi_pricing(args)
    if args.model is None:
        raise ValueError("arpi needs a model file or --pricing")
    sampled = not args.exhaustive
    run = RunConfig("arpi", source=args.model, seed=args.seed, tol=args.tol, out=args.out,
                    options={"samples": args.samples, "exhaustive": args.exhaustive,
                             "features": args.features, "sampled": sampled})
    model = load_model(args.model)
    catalog = ArtifactCatalog(args.out, overwrite=args.overwrite)
    catalog.ensure_free(["policy.csv", "diagnostics.csv"])
    if args.features == "tabular":
        features = StateActionFeatureMap.tabular(model.n_states, model.n_actions)
    else:
        features = StateActionFeatureMap.from_tensor(load_features(args.features))

    if args.exhaustive:
        traj = sweep_samples(model)
    else:
        if not args.samples:
            raise ValueError("arpi needs --samples N (or --exhaustive)")
        behaviour = np.full((model.n_states, model.n_actions), 1.0 / model.n_actions)
        traj = generate_trajectories(
            model, ExplorationKernel.nominal(model), behaviour, args.seed,
            n_samples=args.samples if model.n_terminals == 0 else None,
            n_episodes=args.samples if model.n_terminals else None,
        )

    result = arpi(traj, features, model, inner_tol=args.tol, outer_max=args.outer_max)
    diagnostics = result.diagnostics_frame()
    q = features.tensor @ result.weights
    policy_frame = _policy_frame(model, result.policy, value=q.max(axis=1))
    print(_fmt_table(policy_frame))
    print(_fmt_table(diagnostics))
    status = "converged" if result.converged else "cycled" if result.cycled else "stopped at outer_max"
    print(f"ARPI {status} after {len(result.diagnostics)} outer iteration(s)")
    with catalog:
        catalog.write_table("policy.csv", policy_frame, run.to_dict())
        catalog.write_table("diagnostics.csv", diagnostics, run.to_dict())
    return EXIT_OK


def _arpi_pricing(args: argparse.Namespace) -> int:
    config = load_pricing_config(args.pricing)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    run = RunConfig("arpi", source=args.pricing, seed=config.seed, out=args.out,
                    options={"pricing": config.to_dict(), "sampled": True})
    catalog = ArtifactCatalog(args.out, overwrite=args.overwrite)
    catalog.ensure_free(["prices.csv", "diagnostics.csv"])
    alpha, n_data = config.settings()[0]
    data_rng, sim_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)]
    priced = fit_and_price(config, alpha, n_data, data_rng, sim_rng)

    u = priced.uncertain
    print(f"p_hat = {u.p_hat:.6g}, interval [{u.p_minus:.6g}, {u.p_plus:.6g}] from {u.n} moves")
    rows = []
    for name in ("robust", "nominal"):
        result = priced.robust if name == "robust" else priced.nominal
        price = priced.policy(name).value(config.x0, 0)
        rows.append((name, price, len(result.diagnostics), result.converged))
        print(f"{name} value at x0: {price:.6g}")
    summary = pd.DataFrame(rows, columns=["model", "value", "outer_iterations", "converged"])
    diagnostics = pd.concat(
        [priced.robust.diagnostics_frame().assign(model="robust"),
         priced.nominal.diagnostics_frame().assign(model="nominal")],
        ignore_index=True,
    )
    print(_fmt_table(diagnostics))
    with catalog:
        catalog.write_table("prices.csv", summary, run.to_dict())
        catalog.write_table("diagnostics.csv", diagnostics, run.to_dict())
    return EXIT_OK


def cmd_price_options(args: argparse.Namespace) -> int:
    config = load_pricing_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    run = RunConfig("price-options", source=args.config, seed=config.seed, out=args.out,
                    options={"pricing": config.to_dict(), "sampled": True})
    with ArtifactCatalog(args.out, overwrite=args.overwrite) as catalog:
        catalog.ensure_free(["repetitions.csv", "payoffs.csv", "summary.csv", "percentiles.svg"])
        results = run_experiment(config, threads=args.threads)
        summary = write_outputs(catalog, results, config, run.to_dict(), chart=not args.no_chart)
    print(_fmt_table(summary[["alpha", "n_data", "percentile", "robust_mean", "nominal_mean",
                              "t_statistic", "significant"]]))
    return EXIT_OK


# ── Entry point ───────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m robustadp",
                                     description="Robust approximate dynamic programming")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--out", metavar="DIR", default="out", help="Output directory (default: out)")
    parser.add_argument("--overwrite", action="store_true", help="Replace existing output files")
    parser.add_argument("--threads", type=int, default=None, metavar="N",
                        help="Worker processes for experiments (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-exact", help="Robust value or policy iteration on a model file")
    p.add_argument("model")
    p.add_argument("--method", choices=["vi", "pi"], default="vi")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("rpvi", help="Robust projected value iteration for one policy")
    p.add_argument("model")
    p.add_argument("--policy", default=None, help="Comma-separated actions (default: action 0)")
    p.add_argument("--features", default="tabular", help="Feature file or 'tabular'")
    p.add_argument("--kernel", default="on-policy",
                   help="Kernel file, 'on-policy', 'nominal' or 'uniform'")
    p.add_argument("--sampled", type=int, default=None, metavar="N",
                   help="Estimate from N samples (episodes with terminal states)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true", help="Run even if the contraction check fails")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_rpvi)

    p = sub.add_parser("check-assumptions", help="Report the contraction bounds for a policy")
    p.add_argument("model")
    p.add_argument("--policy", default=None)
    p.add_argument("--kernel", default="on-policy")
    p.add_argument("--all-actions", action="store_true", help="Bound every action, not just pi(x)")
    p.set_defaults(func=cmd_check_assumptions)

    p = sub.add_parser("arpi", help="Approximate robust policy iteration")
    p.add_argument("model", nargs="?", default=None)
    p.add_argument("--pricing", metavar="CONFIG", default=None, help="Price one option from a config")
    p.add_argument("--features", default="tabular", help="State-action feature file or 'tabular'")
    p.add_argument("--samples", type=int, default=None, metavar="N")
    p.add_argument("--exhaustive", action="store_true", help="Use every (state, action) pair once")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--outer-max", type=int, default=30)
    p.set_defaults(func=cmd_arpi)

    p = sub.add_parser("price-options", help="Robust vs nominal exercise policies experiment")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="Override the config seed")
    p.add_argument("--no-chart", action="store_true")
    p.set_defaults(func=cmd_price_options)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ModelValidationError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (NonConvergenceError, PolicyCycleError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (RobustAdpError, ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
