"""Experiment driver: turn model sets into pooled paired samples.

Generation happens once per (model, prompt, seed) bank and is shared by
every pairwise comparison, mirroring how an evaluation would reuse each
model's responses.  Under coupled evaluation all models read noise stream
0 and share one scoring-noise key per replicate; under independent
evaluation model ``j`` reads generation stream ``j + 1`` and its own
scoring-noise keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import GenerationConfig, NoiseSource, generate_batch
from .errors import ConfigurationError
from .estimators import Coupling, PairedSampleSet
from .models import Model, PromptSet
from .scoring import Scorer

# z keys pack (replicate, stream); streams: 0 shared, j+1 per model.
Z_STREAM_STRIDE = 64


def z_key_for(replicate: int, stream: int) -> int:
    if not 0 <= stream < Z_STREAM_STRIDE:
        raise ConfigurationError(f"scoring stream {stream} outside [0, {Z_STREAM_STRIDE})")
    return replicate * Z_STREAM_STRIDE + stream


@dataclass(frozen=True, eq=False)
class ScoreBank:
    """Scores for every (model, prompt) cell of one evaluation regime."""

    coupling: Coupling
    model_names: tuple[str, ...]
    prompts: PromptSet
    replicates: int
    scores: Mapping[tuple[str, object], np.ndarray]


def build_score_bank(
    named_models: Sequence[tuple[str, Model]],
    prompts: PromptSet,
    scorer: Scorer,
    cfg: GenerationConfig,
    seeds: Sequence[int],
    replicates: int,
    coupling: Coupling,
    workers: int = 1,
) -> ScoreBank:
    """Generate and score every model on every prompt, pooled across seeds.

    Replicate indices are global across seeds, so records stay uniquely
    keyed when seeds are pooled.
    """
    if len(named_models) < 2:
        raise ConfigurationError("need at least two models")
    if len(named_models) + 1 >= Z_STREAM_STRIDE:
        raise ConfigurationError(f"at most {Z_STREAM_STRIDE - 2} models are supported")
    if replicates < 1 or not seeds:
        raise ConfigurationError("need at least one seed and one replicate")
    vocab = named_models[0][1].vocab
    for name, model in named_models[1:]:
        if model.vocab != vocab:
            raise ConfigurationError(f"model {name!r} uses a different vocabulary")
    coupled = coupling is Coupling.COUPLED
    scores: dict[tuple[str, object], np.ndarray] = {}
    for j, (name, model) in enumerate(named_models):
        gen_stream = 0 if coupled else j + 1
        z_stream = 0 if coupled else j + 1
        for prompt in prompts:
            parts = []
            for seed in seeds:
                noise = NoiseSource(int(seed))
                batch = generate_batch(model, prompt, replicates, noise, cfg, stream=gen_stream, workers=workers)
                z_keys = np.array([z_key_for(r, z_stream) for r in range(replicates)], dtype=np.int64)
                parts.append(scorer.score_contents(prompt, batch.content_tuples(vocab.eos), z_keys))
            scores[(name, prompt)] = np.concatenate(parts)
    return ScoreBank(
        coupling=coupling,
        model_names=tuple(name for name, _ in named_models),
        prompts=prompts,
        replicates=replicates * len(seeds),
        scores=scores,
    )


def paired_samples(bank: ScoreBank, name_a: str, name_b: str) -> PairedSampleSet:
    """Assemble the pooled per-(prompt, replicate) score pairs for one pair."""
    for name in (name_a, name_b):
        if name not in bank.model_names:
            raise ConfigurationError(f"model {name!r} not present in the bank")
    prompt_col: list = []
    replicate_col: list = []
    a_parts, b_parts = [], []
    for prompt in bank.prompts:
        a_parts.append(bank.scores[(name_a, prompt)])
        b_parts.append(bank.scores[(name_b, prompt)])
        prompt_col.extend([prompt] * bank.replicates)
        replicate_col.extend(range(bank.replicates))
    return PairedSampleSet(
        model_a=name_a,
        model_b=name_b,
        coupling=bank.coupling,
        prompts=tuple(prompt_col),
        replicates=np.asarray(replicate_col, dtype=np.int64),
        score_a=np.concatenate(a_parts),
        score_b=np.concatenate(b_parts),
    )
