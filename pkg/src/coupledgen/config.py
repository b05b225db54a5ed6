"""Experiment configuration loading.

One YAML file describes an experiment end to end: vocabulary, prompts,
model definitions, the scorer, generation settings, and experiment
parameters.  Everything is validated up front so commands either start
with a coherent experiment or fail before any computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .core import GenerationConfig, SamplerKind, Vocabulary
from .errors import ConfigurationError
from .estimators import Coupling
from .models import (
    CategoricalModel,
    MarkovModel,
    Model,
    PointMassModel,
    PromptSet,
    SequenceTableModel,
)
from .scoring import CorrectnessScorer, NoisyScorer, RewardTableScorer, Scorer


@dataclass(frozen=True)
class ExperimentConfig:
    vocab: Vocabulary
    prompts: PromptSet
    models: tuple[tuple[str, Model], ...]
    scorer: Scorer
    generation: GenerationConfig
    replicates: int
    seeds: tuple[int, ...]
    regimes: tuple[Coupling, ...]
    pair: tuple[str, str]
    curve_sizes: tuple[int, ...]
    target_error: float

    @property
    def named_models(self) -> list[tuple[str, Model]]:
        return list(self.models)


def _require(mapping: dict, key: str, context: str):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigurationError(f"missing {context}.{key}")
    return mapping[key]


def _build_model(name: str, spec: dict, vocab: Vocabulary) -> Model:
    kind = _require(spec, "kind", f"models.{name}")
    if kind == "point_mass":
        return PointMassModel(vocab, _require(spec, "tokens", f"models.{name}"))
    if kind == "categorical":
        return CategoricalModel(vocab, _require(spec, "rows", f"models.{name}"))
    if kind == "markov":
        return MarkovModel(
            vocab,
            _require(spec, "initial", f"models.{name}"),
            _require(spec, "transitions", f"models.{name}"),
        )
    if kind == "sequence_table":
        table = {}
        for entry in _require(spec, "rows", f"models.{name}"):
            prompt = _require(entry, "prompt", f"models.{name}.rows[]")
            prefix = tuple(_require(entry, "prefix", f"models.{name}.rows[]"))
            table[(prompt, prefix)] = _require(entry, "row", f"models.{name}.rows[]")
        return SequenceTableModel(vocab, table, spec.get("fallback"))
    raise ConfigurationError(f"unknown model kind {kind!r} for models.{name}")


def _build_scorer(spec: dict) -> Scorer:
    kind = _require(spec, "kind", "scorer")
    if kind == "correctness":
        accepted = {
            prompt: {tuple(seq) for seq in seqs}
            for prompt, seqs in _require(spec, "accepted", "scorer").items()
        }
        return CorrectnessScorer(accepted)
    if kind == "reward_table":
        rewards = {}
        for prompt, entries in _require(spec, "rewards", "scorer").items():
            rewards[prompt] = {
                tuple(_require(e, "seq", "scorer.rewards[]")): float(_require(e, "value", "scorer.rewards[]"))
                for e in entries
            }
        return RewardTableScorer(rewards)
    if kind == "noisy":
        base = _build_scorer(_require(spec, "base", "scorer"))
        return NoisyScorer(base, float(_require(spec, "scale", "scorer")), int(_require(spec, "seed", "scorer")))
    raise ConfigurationError(f"unknown scorer kind {kind!r}")


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment configuration file."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")

    vocab_spec = _require(raw, "vocabulary", "config")
    size = int(_require(vocab_spec, "size", "vocabulary"))
    vocab = Vocabulary(size=size, eos=int(vocab_spec.get("eos", size - 1)))

    prompt_spec = _require(raw, "prompts", "config")
    prompts = PromptSet(
        tuple(_require(prompt_spec, "ids", "prompts")),
        tuple(prompt_spec.get("weights", ())),
    )

    model_specs = _require(raw, "models", "config")
    if not isinstance(model_specs, dict) or len(model_specs) < 1:
        raise ConfigurationError("config must define at least one model")
    models = tuple((name, _build_model(name, spec, vocab)) for name, spec in model_specs.items())

    scorer = _build_scorer(_require(raw, "scorer", "config"))

    gen_spec = raw.get("generation", {})
    try:
        sampler = SamplerKind(gen_spec.get("sampler", "gumbel_max"))
    except ValueError as exc:
        raise ConfigurationError(f"unknown sampler {gen_spec.get('sampler')!r}") from exc
    generation = GenerationConfig(
        max_steps=int(gen_spec.get("max_steps", 8)),
        temperature=float(gen_spec.get("temperature", 1.0)),
        sampler=sampler,
    )

    exp = raw.get("experiment", {})
    replicates = int(exp.get("replicates", 1000))
    if replicates < 1:
        raise ConfigurationError("experiment.replicates must be at least 1")
    seeds = tuple(int(s) for s in exp.get("seeds", [0]))
    if not seeds:
        raise ConfigurationError("experiment.seeds must not be empty")
    try:
        regimes = tuple(Coupling(r) for r in exp.get("regimes", ["coupled", "independent"]))
    except ValueError as exc:
        raise ConfigurationError(f"unknown regime in experiment.regimes: {exc}") from exc

    names = [name for name, _ in models]
    pair = tuple(exp.get("pair", names[:2]))
    if len(pair) != 2 or any(p not in names for p in pair):
        raise ConfigurationError(f"experiment.pair must name two configured models, got {pair}")

    curve = raw.get("error_curve", {})
    sizes = tuple(int(s) for s in curve.get("sizes", ()))
    if sizes and (any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1):
        raise ConfigurationError("error_curve.sizes must be strictly increasing positive integers")
    target_error = float(curve.get("target_error", 0.02))

    return ExperimentConfig(
        vocab=vocab,
        prompts=prompts,
        models=models,
        scorer=scorer,
        generation=generation,
        replicates=replicates,
        seeds=seeds,
        regimes=regimes,
        pair=(pair[0], pair[1]),
        curve_sizes=sizes,
        target_error=target_error,
    )
