"""Synthetic next-token models.

Each model maps ``(prompt, partial sequence)`` to a next-token
distribution.  Four families cover the settings used throughout the
package: a point mass per prompt, a single-step categorical response, a
Markov table conditioned on the last token, and a table keyed by the full
partial sequence with a fallback row.

All models are immutable after construction and validate every stored row
once, so generation never sees an invalid distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .core import NextTokenDistribution, PromptId, TokenSequence, Vocabulary
from .errors import ConfigurationError, UnknownPromptError


def _validated_row(vocab: Vocabulary, row) -> np.ndarray:
    probs = NextTokenDistribution(np.asarray(row, dtype=np.float64)).probs
    if probs.size != vocab.size:
        raise ConfigurationError(f"row has {probs.size} entries for vocabulary of size {vocab.size}")
    return probs


def _eos_row(vocab: Vocabulary) -> np.ndarray:
    row = np.zeros(vocab.size)
    row[vocab.eos] = 1.0
    row.setflags(write=False)
    return row


@dataclass(frozen=True)
class PromptSet:
    """Finite set of prompts with sampling weights (uniform by default)."""

    prompts: tuple[PromptId, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        prompts = tuple(self.prompts)
        if not prompts:
            raise ConfigurationError("prompt set is empty")
        if self.weights:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.size != len(prompts) or np.any(w < 0) or w.sum() <= 0:
                raise ConfigurationError("weights must be non-negative, one per prompt, with positive total")
            w = w / w.sum()
        else:
            w = np.full(len(prompts), 1.0 / len(prompts))
        object.__setattr__(self, "prompts", prompts)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    def __iter__(self):
        return iter(self.prompts)

    def __len__(self):
        return len(self.prompts)


class Model:
    """Common behavior for the model families below."""

    vocab: Vocabulary

    def batch_rows(self, prompt: PromptId, prefixes: np.ndarray) -> np.ndarray:
        """Next-token rows for a batch of equal-length prefixes.

        ``prefixes`` has shape ``(b, i)`` where ``i`` is the number of
        tokens generated so far (possibly zero); returns ``(b, size)``.
        """
        raise NotImplementedError

    def next_token_distribution(self, prompt: PromptId, partial: TokenSequence) -> NextTokenDistribution:
        """Distribution over the next token given a non-terminated partial."""
        if partial.terminated:
            raise ValueError("partial sequence is already terminated")
        prefix = np.asarray([partial.tokens], dtype=np.int64).reshape(1, len(partial.tokens))
        return NextTokenDistribution(self.batch_rows(prompt, prefix)[0])

    def rows(self) -> Iterator[tuple[object, np.ndarray]]:
        """Stored rows in a canonical order, as ``(key, row)`` pairs."""
        raise NotImplementedError

    def replace_rows(self, new_rows: Sequence[np.ndarray]) -> "Model":
        """Copy of the model with stored rows replaced, in ``rows()`` order."""
        raise NotImplementedError

    def probe_partials(self, prompt: PromptId) -> list[tuple[int, ...]]:
        """Prefixes whose rows determine this model's behavior for a prompt."""
        return [()]


@dataclass(frozen=True, eq=False)
class PointMassModel(Model):
    """Always emits one configured token per prompt."""

    vocab: Vocabulary
    token_by_prompt: Mapping[PromptId, int]

    def __post_init__(self):
        rows = {}
        for prompt, token in self.token_by_prompt.items():
            if not 0 <= int(token) < self.vocab.size:
                raise ConfigurationError(f"token {token} outside vocabulary")
            row = np.zeros(self.vocab.size)
            row[int(token)] = 1.0
            row.setflags(write=False)
            rows[prompt] = row
        object.__setattr__(self, "token_by_prompt", dict(self.token_by_prompt))
        object.__setattr__(self, "_rows", rows)

    def _row(self, prompt):
        try:
            return self._rows[prompt]
        except KeyError:
            raise UnknownPromptError(prompt) from None

    def batch_rows(self, prompt, prefixes):
        return np.broadcast_to(self._row(prompt), (prefixes.shape[0], self.vocab.size))

    def rows(self):
        return iter(self._rows.items())

    def replace_rows(self, new_rows):
        # Point-mass rows have singleton support, so any support-preserving
        # replacement is the identity.
        return self


@dataclass(frozen=True, eq=False)
class CategoricalModel(Model):
    """Emits one content token from a per-prompt distribution, then eos.

    Stored rows put zero mass on eos; once a content token has been
    emitted the next-token distribution is a point mass on eos, so every
    response is a single content token.
    """

    vocab: Vocabulary
    row_by_prompt: Mapping[PromptId, Sequence[float]]

    def __post_init__(self):
        rows = {}
        for prompt, row in self.row_by_prompt.items():
            probs = _validated_row(self.vocab, row)
            if probs[self.vocab.eos] != 0.0:
                raise ConfigurationError("categorical content rows must give eos zero probability")
            rows[prompt] = probs
        object.__setattr__(self, "row_by_prompt", rows)
        object.__setattr__(self, "_eos", _eos_row(self.vocab))

    def content_row(self, prompt) -> np.ndarray:
        try:
            return self.row_by_prompt[prompt]
        except KeyError:
            raise UnknownPromptError(prompt) from None

    def batch_rows(self, prompt, prefixes):
        row = self.content_row(prompt) if prefixes.shape[1] == 0 else self._eos
        return np.broadcast_to(row, (prefixes.shape[0], self.vocab.size))

    def rows(self):
        return iter(self.row_by_prompt.items())

    def replace_rows(self, new_rows):
        keys = list(self.row_by_prompt)
        return CategoricalModel(self.vocab, dict(zip(keys, new_rows)))


@dataclass(frozen=True, eq=False)
class MarkovModel(Model):
    """Next-token distribution conditioned on the last emitted token."""

    vocab: Vocabulary
    initial_by_prompt: Mapping[PromptId, Sequence[float]]
    transitions: Mapping[int, Sequence[float]]

    def __post_init__(self):
        initial = {p: _validated_row(self.vocab, row) for p, row in self.initial_by_prompt.items()}
        transitions = {}
        for token, row in self.transitions.items():
            if not 0 <= int(token) < self.vocab.size or int(token) == self.vocab.eos:
                raise ConfigurationError(f"transition key {token} is not a content token")
            transitions[int(token)] = _validated_row(self.vocab, row)
        missing = set(self.vocab.content_tokens) - set(transitions)
        if missing:
            raise ConfigurationError(f"transitions missing for content tokens {sorted(missing)}")
        matrix = np.zeros((self.vocab.size, self.vocab.size))
        for token, row in transitions.items():
            matrix[token] = row
        matrix[self.vocab.eos, self.vocab.eos] = 1.0  # never queried during generation
        matrix.setflags(write=False)
        object.__setattr__(self, "initial_by_prompt", initial)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "_matrix", matrix)

    def initial_row(self, prompt) -> np.ndarray:
        try:
            return self.initial_by_prompt[prompt]
        except KeyError:
            raise UnknownPromptError(prompt) from None

    def batch_rows(self, prompt, prefixes):
        if prefixes.shape[1] == 0:
            return np.broadcast_to(self.initial_row(prompt), (prefixes.shape[0], self.vocab.size))
        return self._matrix[prefixes[:, -1]]

    def rows(self):
        yield from self.initial_by_prompt.items()
        for token in sorted(self.transitions):
            yield token, self.transitions[token]

    def replace_rows(self, new_rows):
        new_rows = list(new_rows)
        n_initial = len(self.initial_by_prompt)
        initial = dict(zip(self.initial_by_prompt, new_rows[:n_initial]))
        transitions = dict(zip(sorted(self.transitions), new_rows[n_initial:]))
        return MarkovModel(self.vocab, initial, transitions)

    def probe_partials(self, prompt):
        return [()] + [(t,) for t in sorted(self.transitions)]


@dataclass(frozen=True, eq=False)
class SequenceTableModel(Model):
    """Rows keyed by ``(prompt, full prefix)`` with a shared fallback row.

    Contexts not present in the table (including unknown prompts) use the
    fallback, which defaults to uniform over content tokens.
    """

    vocab: Vocabulary
    table: Mapping[tuple[PromptId, tuple[int, ...]], Sequence[float]]
    fallback: Sequence[float] | None = None

    def __post_init__(self):
        table = {}
        for (prompt, prefix), row in self.table.items():
            table[(prompt, tuple(int(t) for t in prefix))] = _validated_row(self.vocab, row)
        if self.fallback is None:
            fallback = np.zeros(self.vocab.size)
            fallback[list(self.vocab.content_tokens)] = 1.0 / len(self.vocab.content_tokens)
            fallback.setflags(write=False)
        else:
            fallback = _validated_row(self.vocab, self.fallback)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "fallback", fallback)

    def batch_rows(self, prompt, prefixes):
        out = np.empty((prefixes.shape[0], self.vocab.size))
        prefix_rows = prefixes.tolist()
        for i, prefix in enumerate(prefix_rows):
            out[i] = self.table.get((prompt, tuple(prefix)), self.fallback)
        return out

    def rows(self):
        yield from self.table.items()
        yield "fallback", self.fallback

    def replace_rows(self, new_rows):
        new_rows = list(new_rows)
        table = dict(zip(self.table, new_rows[:-1]))
        return SequenceTableModel(self.vocab, table, new_rows[-1])

    def probe_partials(self, prompt):
        stored = [prefix for p, prefix in self.table if p == prompt]
        longest = max((len(s) for s in stored), default=0)
        probe = (self.vocab.content_tokens[0],) * (longest + 1)  # guaranteed unlisted
        return [()] + stored + [probe]


def perturb(model: Model, epsilon: float, direction_seed: int) -> Model:
    """Mix every stored row with a seeded random distribution on its support.

    Each row ``d`` becomes ``(1 - epsilon) * d + epsilon * r`` with ``r``
    drawn from a flat Dirichlet over the row's support, so the sup-norm
    distance from the original model is at most ``epsilon`` and supports
    are preserved.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    rng = np.random.default_rng(direction_seed)
    new_rows = []
    for _, row in model.rows():
        support = row > 0.0
        direction = np.zeros_like(row)
        direction[support] = rng.dirichlet(np.ones(int(support.sum())))
        mixed = (1.0 - epsilon) * row + epsilon * direction
        new_rows.append(mixed / mixed.sum())
    return model.replace_rows(new_rows)


def mix_row(row: Sequence[float], direction: Sequence[float], epsilon: float) -> np.ndarray:
    """The single-row mixture used by :func:`perturb`, for direct checks."""
    row = np.asarray(row, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    mixed = (1.0 - epsilon) * row + epsilon * direction
    return mixed / mixed.sum()


def model_distance(model_a: Model, model_b: Model, prompts: PromptSet) -> float:
    """Sup over reachable rows of the max-abs entry difference.

    Probes the union of both models' determining contexts for every
    prompt in the set, so table rows and fallbacks are all compared.
    """
    if model_a.vocab != model_b.vocab:
        raise ConfigurationError("models use different vocabularies")
    worst = 0.0
    for prompt in prompts:
        contexts = {()}
        contexts.update(model_a.probe_partials(prompt))
        contexts.update(model_b.probe_partials(prompt))
        for prefix in sorted(contexts):
            partial = TokenSequence(prefix, False)
            row_a = model_a.next_token_distribution(prompt, partial).probs
            row_b = model_b.next_token_distribution(prompt, partial).probs
            worst = max(worst, float(np.max(np.abs(row_a - row_b))))
    return worst


def random_categorical_model(
    vocab: Vocabulary, prompts: Sequence[PromptId], rng: np.random.Generator, min_mass: float = 0.02
) -> CategoricalModel:
    """Random single-step model with every content token above ``min_mass``."""
    content = list(vocab.content_tokens)
    rows = {}
    for prompt in prompts:
        weights = min_mass + rng.dirichlet(np.ones(len(content)))
        weights /= weights.sum()
        row = np.zeros(vocab.size)
        row[content] = weights
        rows[prompt] = row
    return CategoricalModel(vocab, rows)


def random_markov_model(
    vocab: Vocabulary,
    prompts: Sequence[PromptId],
    rng: np.random.Generator,
    eos_mass: tuple[float, float] = (0.25, 0.6),
) -> MarkovModel:
    """Random multi-step model whose rows give eos mass in ``eos_mass``."""
    content = list(vocab.content_tokens)

    def random_row():
        row = np.zeros(vocab.size)
        row[content] = rng.dirichlet(np.ones(len(content)))
        pe = rng.uniform(*eos_mass)
        row *= 1.0 - pe
        row[vocab.eos] = pe
        return row

    initial = {prompt: random_row() for prompt in prompts}
    transitions = {t: random_row() for t in content}
    return MarkovModel(vocab, initial, transitions)
