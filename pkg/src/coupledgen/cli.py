"""Command-line experiment driver.

Subcommands:

``verify``       run one verification suite, write a JSON report, exit
                 0 iff every instance passed.
``rank-flip``    reproduce the three-model example whose ranking differs
                 between coupled and independent evaluation, in closed
                 form plus a Monte Carlo confirmation.
``error-curve``  estimation-error-versus-sample-size curves for a model
                 pair under both regimes, as CSV, plus the sample-savings
                 figure at a target error.
``rank``         pairwise win/tie rates with intervals and z-tests, and
                 interval-dominance rankings per regime.

Exit codes: 0 success, 1 suite or check failure, 2 usage or config error.
All outputs are pure functions of the config and seeds, so re-running a
command reproduces its output files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import sys
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .config import ExperimentConfig, load_config
from .core import SamplerKind, Vocabulary
from .driver import build_score_bank, paired_samples
from .errors import ConfigurationError, CoupledGenError
from .estimators import (
    Coupling,
    error_curve,
    rank_from_cis,
    sample_savings,
    two_proportion_z_test,
    wald_ci,
    win_tie_rates,
)
from .models import CategoricalModel, PromptSet
from .reference import mc_reference, rank_flip_example
from .scoring import CorrectnessScorer
from .verify import DEFAULT_SEED, SUITES

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

# Frozen expected values for the rank-flip example.
RANK_FLIP_INDEPENDENT = (0.1545, 0.15675, 0.16225)
RANK_FLIP_COUPLED = (0.0525, 0.0225, 0.03)
RANK_FLIP_INDEPENDENT_RANKING = (2, 1, 0)
RANK_FLIP_COUPLED_RANKING = (0, 2, 1)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_verify(args) -> int:
    suite_fn = SUITES[args.suite]
    accepted = inspect.signature(suite_fn).parameters
    kwargs = {"seed": args.seed}
    if args.samples is not None and "samples" in accepted:
        kwargs["samples"] = args.samples
    if args.instances is not None and "instances" in accepted:
        kwargs["instances"] = args.instances
    if "workers" in accepted:
        kwargs["workers"] = args.workers
    report = suite_fn(**kwargs)
    out = _out_dir(args)
    _write_json(out / f"{args.suite}-report.json", report)
    n = len(report["instances"])
    n_passed = sum(r["passed"] for r in report["instances"])
    print(f"suite {args.suite}: {n_passed}/{n} instances passed -> {'PASS' if report['passed'] else 'FAIL'}")
    for record in report["instances"]:
        if not record["passed"]:
            print(f"  failed instance: {record}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _rank_flip_models() -> tuple[list[tuple[str, CategoricalModel]], PromptSet, CorrectnessScorer]:
    table = rank_flip_example()
    vocab = Vocabulary(size=3, eos=2)
    prompts = PromptSet(("q", "qprime"))
    named = []
    for name, probs in zip(table.model_names, table.preferred_probs):
        rows = {}
        for prompt, p in zip(prompts.prompts, probs):
            rows[prompt] = np.array([p, 1.0 - p, 0.0])
        named.append((name, CategoricalModel(vocab, rows)))
    scorer = CorrectnessScorer({p: {(0,)} for p in prompts})
    return named, prompts, scorer


def cmd_rank_flip(args) -> int:
    table = rank_flip_example()
    exact_ok = (
        all(abs(a - b) <= 1e-12 for a, b in zip(table.independent_avg, RANK_FLIP_INDEPENDENT))
        and all(abs(a - b) <= 1e-12 for a, b in zip(table.coupled_avg, RANK_FLIP_COUPLED))
        and table.independent_ranking == RANK_FLIP_INDEPENDENT_RANKING
        and table.coupled_ranking == RANK_FLIP_COUPLED_RANKING
    )
    named, prompts, scorer = _rank_flip_models()
    mc = {}
    for regime, expected in (
        (Coupling.INDEPENDENT, table.independent_avg),
        (Coupling.COUPLED, table.coupled_avg),
    ):
        averages, bands, in_band = [], [], []
        for k, (name_k, model_k) in enumerate(named):
            rates, variances = [], []
            for j, (name_j, model_j) in enumerate(named):
                if j == k:
                    continue
                stats = mc_reference(
                    (model_k, model_j),
                    scorer,
                    prompts,
                    SamplerKind.GUMBEL_MAX,
                    regime,
                    args.mc_samples,
                    args.seed + 31 * k + j,
                )
                rates.append(stats.win_rate)
                variances.append(stats.win_rate_se**2)
            avg = float(np.mean(rates))
            band = 3.0 * float(np.sqrt(sum(variances))) / len(rates)
            averages.append(avg)
            bands.append(band)
            in_band.append(abs(avg - expected[k]) <= band)
        mc[regime.value] = {"avg_win_rates": averages, "bands": bands, "in_band": in_band}
    mc_ok = all(all(entry["in_band"]) for entry in mc.values())

    report = {
        "closed_form": {
            "independent_avg_win_rates": list(table.independent_avg),
            "coupled_avg_win_rates": list(table.coupled_avg),
            "independent_ranking": list(table.independent_ranking),
            "coupled_ranking": list(table.coupled_ranking),
            "ranking_flips": table.independent_ranking != table.coupled_ranking,
        },
        "exact_match": exact_ok,
        "monte_carlo": {"samples": args.mc_samples, "seed": args.seed, **mc},
        "monte_carlo_in_band": mc_ok,
        "passed": exact_ok and mc_ok,
    }
    out = _out_dir(args)
    _write_json(out / "rank-flip-report.json", report)

    print("model  independent-avg  coupled-avg")
    for i, name in enumerate(table.model_names):
        print(f"{name:5s}  {table.independent_avg[i]:15.5f}  {table.coupled_avg[i]:11.4f}")
    def order(ranking):
        return " > ".join(table.model_names[i] for i in ranking)

    print(f"independent ranking: {order(table.independent_ranking)}")
    print(f"coupled ranking:     {order(table.coupled_ranking)}")
    print(f"ranking flips: {report['closed_form']['ranking_flips']}")
    print(f"exact values match: {exact_ok}; Monte Carlo in band: {mc_ok}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _experiment_banks(cfg: ExperimentConfig, named, args):
    seeds = (args.seed,) if args.seed is not None else cfg.seeds
    replicates = args.replicates if args.replicates is not None else cfg.replicates
    banks = {}
    for regime in (Coupling.COUPLED, Coupling.INDEPENDENT):
        banks[regime] = build_score_bank(
            named, cfg.prompts, cfg.scorer, cfg.generation, seeds, replicates, regime, workers=args.workers
        )
    return banks, seeds


def cmd_error_curve(args) -> int:
    cfg = load_config(args.config)
    if len(cfg.regimes) < 2:
        raise ConfigurationError("error-curve needs both regimes in experiment.regimes")
    named = [(name, model) for name, model in cfg.named_models if name in cfg.pair]
    named.sort(key=lambda item: cfg.pair.index(item[0]))
    banks, seeds = _experiment_banks(cfg, named, args)
    pool_size = banks[Coupling.COUPLED].replicates * len(cfg.prompts)
    sizes = cfg.curve_sizes or tuple(
        int(s) for s in np.unique(np.geomspace(50, pool_size, num=8).astype(int))
    )
    curves = {}
    for regime in (Coupling.COUPLED, Coupling.INDEPENDENT):
        samples = paired_samples(banks[regime], *cfg.pair)
        curves[regime] = error_curve(samples, sizes, args.subsamples, seed=seeds[0] + 1)

    rows = []
    for regime in (Coupling.COUPLED, Coupling.INDEPENDENT):
        curve = curves[regime]
        for i, size in enumerate(curve.sizes):
            rows.append([size, curve.mean_abs_error[i], curve.ci_low[i], curve.ci_high[i], regime.value])
    out = _out_dir(args)
    _write_csv(out / "error-curve.csv", ["size", "mean_abs_error", "ci_low", "ci_high", "regime"], rows)

    savings = sample_savings(curves[Coupling.COUPLED], curves[Coupling.INDEPENDENT], cfg.target_error)
    summary = {
        "pair": list(cfg.pair),
        "pool_size": pool_size,
        "sizes": list(sizes),
        "n_subsamples": args.subsamples,
        "seeds": list(seeds),
        "target_error": cfg.target_error,
        "ground_truth": {r.value: curves[r].ground_truth for r in curves},
        "sample_savings": savings,
    }
    _write_json(out / "error-curve-summary.json", summary)
    print(f"pool of {pool_size} pairs; sample savings at error {cfg.target_error}: {savings:.3f}")
    return EXIT_OK


def _average_with_ci(rates, ns, level):
    avg = float(np.mean(rates))
    z = norm.ppf(0.5 + level / 2.0)
    se = float(np.sqrt(sum(p * (1.0 - p) / n for p, n in zip(rates, ns))) / len(rates))
    return avg, max(0.0, avg - z * se), min(1.0, avg + z * se)


def cmd_rank(args) -> int:
    cfg = load_config(args.config)
    if len(cfg.models) < 2:
        raise ConfigurationError("rank needs at least two models")
    named = cfg.named_models
    banks, seeds = _experiment_banks(cfg, named, args)
    names = [name for name, _ in named]

    pair_reports = {}
    for regime in (Coupling.COUPLED, Coupling.INDEPENDENT):
        for a in names:
            for b in names:
                if a != b:
                    samples = paired_samples(banks[regime], a, b)
                    pair_reports[(regime, a, b)] = win_tie_rates(samples, tol=cfg.scorer.tolerance)

    pairwise_rows = []
    pairwise_json = []
    for a in names:
        for b in names:
            if a == b:
                continue
            coupled = pair_reports[(Coupling.COUPLED, a, b)]
            independent = pair_reports[(Coupling.INDEPENDENT, a, b)]
            z, p_value = two_proportion_z_test(coupled.win_rate, coupled.n, independent.win_rate, independent.n)
            for regime, report in ((Coupling.COUPLED, coupled), (Coupling.INDEPENDENT, independent)):
                low, high = wald_ci(report.win_rate, report.n, args.level)
                pairwise_rows.append(
                    [regime.value, a, b, report.n, report.win_rate, report.loss_rate, report.tie_rate, low, high, z, p_value]
                )
                pairwise_json.append(
                    {
                        "regime": regime.value,
                        "model_a": a,
                        "model_b": b,
                        "n": report.n,
                        "win_rate": report.win_rate,
                        "loss_rate": report.loss_rate,
                        "tie_rate": report.tie_rate,
                        "win_ci": [low, high],
                        "z_coupled_vs_independent": z,
                        "p_value": p_value,
                    }
                )

    ranking_rows = []
    ranking_json = {}
    for regime in (Coupling.COUPLED, Coupling.INDEPENDENT):
        entries = []
        for model in names:
            rates, ns = [], []
            for other in names:
                if other != model:
                    report = pair_reports[(regime, model, other)]
                    rates.append(report.win_rate)
                    ns.append(report.n)
            avg, low, high = _average_with_ci(rates, ns, args.level)
            entries.append((model, avg, (low, high)))
        table = rank_from_cis(entries)
        ranking_json[regime.value] = [
            {
                "model": e.model,
                "avg_win_rate": e.avg_win_rate,
                "ci": [e.ci_low, e.ci_high],
                "rank": e.rank,
            }
            for e in table.entries
        ]
        for e in table.entries:
            ranking_rows.append([regime.value, e.model, e.avg_win_rate, e.ci_low, e.ci_high, e.rank])

    out = _out_dir(args)
    _write_csv(
        out / "pairwise.csv",
        ["regime", "model_a", "model_b", "n", "win_rate", "loss_rate", "tie_rate", "win_ci_low", "win_ci_high", "z", "p_value"],
        pairwise_rows,
    )
    _write_csv(
        out / "ranking.csv",
        ["regime", "model", "avg_win_rate", "ci_low", "ci_high", "rank"],
        ranking_rows,
    )
    _write_json(
        out / "rank-report.json",
        {"seeds": list(seeds), "level": args.level, "pairwise": pairwise_json, "ranking": ranking_json},
    )
    for regime_name, entries in ranking_json.items():
        order = sorted(entries, key=lambda e: (e["rank"], -e["avg_win_rate"]))
        summary = ", ".join(f"{e['model']}(rank {e['rank']}, {e['avg_win_rate']:.4f})" for e in order)
        print(f"{regime_name}: {summary}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupledgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("suite", choices=sorted(SUITES))
    p_verify.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_verify.add_argument("--samples", type=int, default=None, help="Monte Carlo replicates per instance")
    p_verify.add_argument("--instances", type=int, default=None)
    p_verify.add_argument("--workers", type=int, default=1)
    p_verify.add_argument("--out", default="out")
    p_verify.set_defaults(func=cmd_verify)

    p_flip = sub.add_parser("rank-flip", help="reproduce the ranking-reversal example")
    p_flip.add_argument("--mc-samples", type=int, default=1_000_000)
    p_flip.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_flip.add_argument("--out", default="out")
    p_flip.set_defaults(func=cmd_rank_flip)

    p_curve = sub.add_parser("error-curve", help="error-vs-sample-size curves for a model pair")
    p_curve.add_argument("--config", required=True)
    p_curve.add_argument("--subsamples", type=int, default=1000)
    p_curve.add_argument("--seed", type=int, default=None)
    p_curve.add_argument("--replicates", type=int, default=None)
    p_curve.add_argument("--workers", type=int, default=1)
    p_curve.add_argument("--out", default="out")
    p_curve.set_defaults(func=cmd_error_curve)

    p_rank = sub.add_parser("rank", help="pairwise win rates and rankings per regime")
    p_rank.add_argument("--config", required=True)
    p_rank.add_argument("--level", type=float, default=0.95)
    p_rank.add_argument("--seed", type=int, default=None)
    p_rank.add_argument("--replicates", type=int, default=None)
    p_rank.add_argument("--workers", type=int, default=1)
    p_rank.add_argument("--out", default="out")
    p_rank.set_defaults(func=cmd_rank)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CoupledGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
