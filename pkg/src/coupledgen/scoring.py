"""Sequence scoring and pairwise outcome classification.

A scorer maps a generated sequence to a real value, optionally mixing in
keyed noise that models uncertainty in the scoring process.  The trailing
end-of-sequence token is always stripped before lookup, so scores are
functions of the content tokens only.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .core import NAMESPACE_SCORER, PromptId, TokenSequence, prompt_key
from .errors import ConfigurationError, UnknownPromptError

_U64 = 2**64
_OPEN_INTERVAL_FLOOR = 2.0**-54

#: Default comparison tolerance for real-valued scorers.
REAL_SCORE_TOLERANCE = 1e-12


class PairwiseOutcome(Enum):
    WIN = "win"
    LOSS = "loss"
    TIE = "tie"


def compare(score_a: float, score_b: float, tol: float = 0.0) -> PairwiseOutcome:
    """Classify a score pair: win iff ``a - b > tol``, loss iff ``b - a > tol``.

    Ties are everything within the tolerance band; they are never counted
    as half-wins.
    """
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    if score_a - score_b > tol:
        return PairwiseOutcome.WIN
    if score_b - score_a > tol:
        return PairwiseOutcome.LOSS
    return PairwiseOutcome.TIE


class Scorer:
    """Common behavior for the scorer variants below."""

    #: Comparison tolerance appropriate for this scorer's score scale.
    tolerance: float = REAL_SCORE_TOLERANCE

    def score(self, prompt: PromptId, seq: TokenSequence, z_key: int = 0) -> float:
        return float(self.score_contents(prompt, [seq.content()], np.asarray([z_key]))[0])

    def score_contents(self, prompt, contents: Sequence[tuple[int, ...]], z_keys: np.ndarray) -> np.ndarray:
        """Scores for a batch of content-token tuples."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class CorrectnessScorer(Scorer):
    """Binary score: 1 iff the content sequence is in the accepted set."""

    accepted: Mapping[PromptId, frozenset]

    tolerance = 0.0

    def __post_init__(self):
        accepted = {}
        for prompt, seqs in self.accepted.items():
            normalized = frozenset(tuple(int(t) for t in s) for s in seqs)
            if not normalized:
                raise ConfigurationError(f"accepted set for prompt {prompt!r} is empty")
            accepted[prompt] = normalized
        object.__setattr__(self, "accepted", accepted)

    def score_contents(self, prompt, contents, z_keys):
        try:
            good = self.accepted[prompt]
        except KeyError:
            raise UnknownPromptError(prompt) from None
        return np.fromiter((1.0 if c in good else 0.0 for c in contents), dtype=np.float64, count=len(contents))


@dataclass(frozen=True, eq=False)
class RewardTableScorer(Scorer):
    """Real-valued score looked up by content sequence; missing entries score 0."""

    rewards: Mapping[PromptId, Mapping[tuple, float]]

    def __post_init__(self):
        rewards = {}
        for prompt, table in self.rewards.items():
            rewards[prompt] = {tuple(int(t) for t in seq): float(v) for seq, v in table.items()}
        object.__setattr__(self, "rewards", rewards)

    def score_contents(self, prompt, contents, z_keys):
        table = self.rewards.get(prompt, {})
        return np.fromiter((table.get(c, 0.0) for c in contents), dtype=np.float64, count=len(contents))


@dataclass(frozen=True, eq=False)
class NoisyScorer(Scorer):
    """Base score plus keyed Gaussian noise with the given scale.

    The noise draw is a pure function of ``(seed, prompt, z_key)``: scoring
    the same key twice yields the identical value, which is what lets a
    coupled comparison share one scoring-noise realization across models.
    """

    base: Scorer
    scale: float
    seed: int

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigurationError("noise scale must be non-negative")

    def _normals(self, prompt, z_keys: np.ndarray) -> np.ndarray:
        pk = prompt_key(prompt)
        out = np.empty(len(z_keys))
        for i, z in enumerate(np.asarray(z_keys, dtype=np.int64)):
            bg = Philox(counter=[int(z) % _U64, pk, 0, 0], key=[self.seed % _U64, NAMESPACE_SCORER])
            u = Generator(bg).random()
            out[i] = ndtri(u if u > 0.0 else _OPEN_INTERVAL_FLOOR)
        return out

    def score_contents(self, prompt, contents, z_keys):
        base = self.base.score_contents(prompt, contents, z_keys)
        if self.scale == 0.0:
            return base
        return base + self.scale * self._normals(prompt, z_keys)
