import csv
import json
from pathlib import Path

import pytest

from coupledgen import (
    CategoricalModel,
    ConfigurationError,
    CorrectnessScorer,
    MarkovModel,
    NoisyScorer,
    SamplerKind,
)
from coupledgen.cli import main
from coupledgen.config import load_config

REPO = Path(__file__).resolve().parents[1]
PAIR_CONFIG = REPO / "configs" / "two_token_pair.yaml"
TRIO_CONFIG = REPO / "configs" / "three_models.yaml"


class TestLoadConfig:
    def test_shipped_pair_config(self):
        cfg = load_config(PAIR_CONFIG)
        assert cfg.vocab.size == 3 and cfg.vocab.eos == 2
        assert cfg.prompts.prompts == ("p", "q")
        assert [name for name, _ in cfg.models] == ["alpha", "beta"]
        assert all(isinstance(m, CategoricalModel) for _, m in cfg.models)
        assert isinstance(cfg.scorer, CorrectnessScorer)
        assert cfg.generation.sampler is SamplerKind.GUMBEL_MAX
        assert cfg.pair == ("alpha", "beta")
        assert cfg.curve_sizes == (50, 100, 300, 1000, 3000)

    def test_markov_and_noisy_specs(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            """
vocabulary: {size: 3, eos: 2}
prompts: {ids: [p]}
models:
  walk:
    kind: markov
    initial: {p: [0.5, 0.5, 0.0]}
    transitions: {0: [0.2, 0.3, 0.5], 1: [0.1, 0.4, 0.5]}
  flat: {kind: point_mass, tokens: {p: 0}}
scorer:
  kind: noisy
  scale: 0.25
  seed: 9
  base: {kind: correctness, accepted: {p: [[0]]}}
"""
        )
        cfg = load_config(path)
        assert isinstance(cfg.models[0][1], MarkovModel)
        assert isinstance(cfg.scorer, NoisyScorer)
        assert cfg.scorer.scale == 0.25
        assert cfg.replicates == 1000  # default

    @pytest.mark.parametrize(
        "snippet,fragment",
        [
            ("{}", "vocabulary"),
            (
                "vocabulary: {size: 3}\nprompts: {ids: [p]}\nmodels: {m: {kind: nope}}\n"
                "scorer: {kind: correctness, accepted: {p: [[0]]}}",
                "unknown model kind",
            ),
            (
                "vocabulary: {size: 3}\nprompts: {ids: [p]}\n"
                "models: {m: {kind: point_mass, tokens: {p: 0}}}\n"
                "scorer: {kind: correctness, accepted: {p: [[0]]}}\n"
                "experiment: {pair: [m, ghost]}",
                "pair",
            ),
        ],
    )
    def test_invalid_configs_rejected(self, tmp_path, snippet, fragment):
        path = tmp_path / "bad.yaml"
        path.write_text(snippet)
        with pytest.raises(ConfigurationError, match=fragment):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.yaml")


class TestVerifyCommand:
    def test_unknown_suite_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["verify", "no-such-suite"])
        assert err.value.code == 2

    def test_quick_suite_passes_and_writes_report(self, tmp_path, capsys):
        code = main(
            [
                "verify",
                "variance-ordering",
                "--instances",
                "10",
                "--samples",
                "20000",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "variance-ordering-report.json").read_text())
        assert report["passed"] is True
        assert "PASS" in capsys.readouterr().out


class TestRankFlipCommand:
    def test_closed_form_and_mc_confirmation(self, tmp_path, capsys):
        code = main(["rank-flip", "--mc-samples", "20000", "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "rank-flip-report.json").read_text())
        assert report["exact_match"] is True
        assert report["closed_form"]["ranking_flips"] is True
        assert report["passed"] is True
        out = capsys.readouterr().out
        assert "ranking flips: True" in out


class TestErrorCurveCommand:
    def test_outputs_and_format_contract(self, tmp_path, capsys):
        code = main(
            [
                "error-curve",
                "--config",
                str(PAIR_CONFIG),
                "--subsamples",
                "200",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        with open(tmp_path / "error-curve.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        sizes = json.loads((tmp_path / "error-curve-summary.json").read_text())["sizes"]
        assert len(rows) == len(sizes) * 2  # |sizes| x regimes
        for row in rows:
            assert float(row["ci_low"]) <= float(row["ci_high"])
            assert float(row["mean_abs_error"]) >= 0.0
            assert row["regime"] in ("coupled", "independent")

    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        code = main(["error-curve", "--config", str(tmp_path / "ghost.yaml"), "--out", str(tmp_path)])
        assert code == 2


class TestRankCommand:
    def test_outputs_and_invariants(self, tmp_path, capsys):
        code = main(
            [
                "rank",
                "--config",
                str(TRIO_CONFIG),
                "--replicates",
                "1500",
                "--seed",
                "3",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        with open(tmp_path / "pairwise.csv", newline="") as handle:
            pair_rows = list(csv.DictReader(handle))
        assert len(pair_rows) == 3 * 2 * 2  # ordered pairs x regimes
        for row in pair_rows:
            for key in ("win_rate", "loss_rate", "tie_rate"):
                assert 0.0 <= float(row[key]) <= 1.0
            assert float(row["win_ci_low"]) <= float(row["win_rate"]) <= float(row["win_ci_high"])
            assert 0.0 <= float(row["p_value"]) <= 1.0
        report = json.loads((tmp_path / "rank-report.json").read_text())
        for regime in ("coupled", "independent"):
            entries = report["ranking"][regime]
            assert sorted(e["model"] for e in entries) == ["m1", "m2", "m3"]
            for entry in entries:
                assert entry["ci"][0] <= entry["avg_win_rate"] <= entry["ci"][1]
                assert 1 <= entry["rank"] <= 3
