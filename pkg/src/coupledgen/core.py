"""Token-level generation under keyed exogenous noise.

Every sequence is produced by the same deterministic recipe: at step ``i``
a model maps the prompt and the partial sequence to a next-token
distribution, the distribution is temperature-scaled, and a sampling
mechanism turns it into a token using a block of exogenous noise fetched
by key ``(prompt, replicate, step)``.  Coupled generation hands every
model the identical block at each step; independent generation gives each
model its own disjoint stream.

Noise blocks are derived from a counter-based bit generator (Philox)
rather than a sequential stream, so results are bit-identical regardless
of evaluation order, batching, or thread count.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np
from numpy.random import Generator, Philox

from .errors import ConfigurationError, InvalidDistributionError

PromptId = Union[int, str]

# Philox key-lane namespaces.  Streams drawn under different namespaces
# never overlap; the reference (oracle) lineage and scorer noise are kept
# apart from experiment generation by construction.
NAMESPACE_GENERATION = 0
NAMESPACE_REFERENCE = 1
NAMESPACE_SCORER = 2

# |sum - 1| above this is a hard error; below it the vector is renormalized.
NORMALIZATION_HARD_TOL = 1e-6

_U64 = 2**64
_OPEN_INTERVAL_FLOOR = 2.0**-54  # replaces an exact-zero uniform draw


def prompt_key(prompt: PromptId) -> int:
    """Stable 64-bit key for a prompt identifier."""
    if isinstance(prompt, (int, np.integer)):
        return int(prompt) % _U64
    digest = hashlib.blake2b(str(prompt).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class Vocabulary:
    """Token alphabet with a designated end-of-sequence token."""

    size: int
    eos: int

    def __post_init__(self):
        if self.size < 2:
            raise ConfigurationError(f"vocabulary needs at least 2 tokens, got {self.size}")
        if not 0 <= self.eos < self.size:
            raise ConfigurationError(f"eos token {self.eos} outside [0, {self.size})")

    @property
    def content_tokens(self) -> tuple[int, ...]:
        return tuple(t for t in range(self.size) if t != self.eos)


@dataclass(frozen=True)
class TokenSequence:
    """An output sequence; ``terminated`` is true iff it ends with eos."""

    tokens: tuple[int, ...]
    terminated: bool

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def last(self) -> int | None:
        return self.tokens[-1] if self.tokens else None

    def content(self) -> tuple[int, ...]:
        """Tokens with the trailing end-of-sequence marker stripped."""
        return self.tokens[:-1] if self.terminated else self.tokens


def empty_sequence() -> TokenSequence:
    return TokenSequence((), False)


@dataclass(frozen=True, eq=False)
class NextTokenDistribution:
    """Probability vector over the vocabulary.

    Entries must be non-negative and finite.  Vectors whose sum is within
    1e-6 of one are renormalized on construction; anything further off is
    rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise InvalidDistributionError(f"expected a 1-d vector of length >= 2, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidDistributionError("probabilities must be finite and non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > NORMALIZATION_HARD_TOL:
            raise InvalidDistributionError(f"probabilities sum to {total!r}, outside tolerance")
        if total != 1.0:
            p /= total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.size


class SamplerKind(Enum):
    GUMBEL_MAX = "gumbel_max"
    INVERSE_TRANSFORM = "inverse_transform"


@dataclass(frozen=True)
class GenerationConfig:
    """Sequence length cap, temperature, and sampling mechanism."""

    max_steps: int
    temperature: float = 1.0
    sampler: SamplerKind = SamplerKind.GUMBEL_MAX

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be >= 1, got {self.max_steps}")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True, eq=False)
class NoiseBlock:
    """Exogenous noise for one generation step.

    Both fields come from the same keyed draw, so switching sampling
    mechanism does not perturb the stream: ``gumbels`` holds one
    Gumbel(0,1) value per token, ``uniform`` one value in (0,1).
    """

    gumbels: np.ndarray
    uniform: float


@dataclass(frozen=True)
class NoiseSource:
    """Stateless keyed source of noise blocks.

    The block for ``(prompt, replicate, step, stream)`` is a pure function
    of the seed and the key, so any two runs (or threads) asking for the
    same key observe bit-identical values.  Stream 0 is the shared stream
    used by coupled generation; independent generation gives model ``j``
    stream ``j + 1``.
    """

    seed: int
    namespace: int = NAMESPACE_GENERATION

    def _bit_generator(self, prompt: PromptId, step: int, stream: int) -> Philox:
        counter = [0, prompt_key(prompt), step % _U64, stream % _U64]
        return Philox(counter=counter, key=[self.seed % _U64, self.namespace % _U64])

    @staticmethod
    def _ticks_per_block(vocab_size: int) -> int:
        # One block consumes vocab_size + 1 doubles, padded up to whole
        # 4-word Philox counter ticks so replicates can be addressed by
        # counter arithmetic.
        return (vocab_size + 1 + 3) // 4

    def raw_blocks(
        self,
        prompt: PromptId,
        replicate_start: int,
        count: int,
        step: int,
        vocab_size: int,
        stream: int = 0,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Noise for ``count`` consecutive replicates at one step.

        Returns ``(gumbels, uniforms)`` of shapes ``(count, vocab_size)``
        and ``(count,)``.  Row ``r`` is bit-identical to the single block
        for replicate ``replicate_start + r``.
        """
        if replicate_start < 0 or count < 0:
            raise ValueError("replicate range must be non-negative")
        ticks = self._ticks_per_block(vocab_size)
        bg = self._bit_generator(prompt, step, stream)
        if replicate_start:
            bg.advance(replicate_start * ticks)
        raw = Generator(bg).random((count, 4 * ticks))
        with np.errstate(divide="ignore"):
            gumbels = -np.log(-np.log(raw[:, :vocab_size]))
        uniforms = raw[:, vocab_size]
        uniforms = np.where(uniforms == 0.0, _OPEN_INTERVAL_FLOOR, uniforms)
        return gumbels, uniforms

    def block(
        self, prompt: PromptId, replicate: int, step: int, vocab_size: int, stream: int = 0
    ) -> NoiseBlock:
        """Noise block for a single ``(prompt, replicate, step)`` key."""
        gumbels, uniforms = self.raw_blocks(prompt, replicate, 1, step, vocab_size, stream)
        g = gumbels[0]
        g.setflags(write=False)
        return NoiseBlock(gumbels=g, uniform=float(uniforms[0]))


# ---------------------------------------------------------------------------
# Sampling kernels.  The scalar operations below are thin wrappers around
# the batch kernels so that batched and one-at-a-time generation cannot
# diverge.
# ---------------------------------------------------------------------------


def _gumbel_argmax_rows(rows: np.ndarray, gumbels: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        scores = np.log(rows) + gumbels  # log 0 = -inf excludes the token
    tokens = np.argmax(scores, axis=1)
    picked = scores[np.arange(len(tokens)), tokens]
    bad = ~np.isfinite(picked)
    if bad.any():
        # Every admissible score was -inf (measure-zero noise): fall back
        # to the first token with positive probability.
        tokens[bad] = np.argmax(rows[bad] > 0.0, axis=1)
    return tokens


def _inverse_transform_rows(rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    tokens = (cdf < uniforms[:, None]).sum(axis=1)
    overflow = tokens >= rows.shape[1]
    if overflow.any():
        # Float drift left the total cumulative mass below u: return the
        # last token carrying positive probability.
        last_pos = rows.shape[1] - 1 - np.argmax(rows[overflow, ::-1] > 0.0, axis=1)
        tokens[overflow] = last_pos
    return tokens


def _scale_rows(rows: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return rows
    peak = rows.max(axis=1, keepdims=True)
    scaled = (rows / peak) ** (1.0 / temperature)
    return scaled / scaled.sum(axis=1, keepdims=True)


def gumbel_max_sample(d: NextTokenDistribution, noise: NoiseBlock) -> int:
    """Token maximizing ``log p_t + gumbels_t`` over tokens with ``p_t > 0``.

    Ties break toward the lowest token index; zero-probability tokens are
    never returned.
    """
    if not np.any(d.probs > 0.0):
        raise InvalidDistributionError("no token has positive probability")
    return int(_gumbel_argmax_rows(d.probs[None, :], noise.gumbels[None, :])[0])


def inverse_transform_sample(d: NextTokenDistribution, u: float) -> int:
    """Smallest token index whose cumulative probability reaches ``u``."""
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    return int(_inverse_transform_rows(d.probs[None, :], np.array([u]))[0])


def temperature_scale(d: NextTokenDistribution, temperature: float) -> NextTokenDistribution:
    """Rescale probabilities as ``p_t^(1/temperature)``, renormalized.

    Zero entries stay zero; ``temperature == 1`` returns the input
    unchanged.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if temperature == 1.0:
        return d
    return NextTokenDistribution(_scale_rows(d.probs[None, :], temperature)[0])


def _sample_rows(rows, gumbels, uniforms, sampler: SamplerKind) -> np.ndarray:
    if sampler is SamplerKind.GUMBEL_MAX:
        return _gumbel_argmax_rows(rows, gumbels)
    return _inverse_transform_rows(rows, uniforms)


# ---------------------------------------------------------------------------
# Sequence generation.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GenerationBatch:
    """Sequences for a contiguous range of replicates.

    ``tokens[i, :lengths[i]]`` holds replicate ``i``'s tokens; cells past
    the length are -1.  ``terminated[i]`` is true iff the sequence ended
    with eos before the step cap.
    """

    tokens: np.ndarray
    lengths: np.ndarray
    terminated: np.ndarray

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def sequence(self, i: int) -> TokenSequence:
        n = int(self.lengths[i])
        return TokenSequence(tuple(int(t) for t in self.tokens[i, :n]), bool(self.terminated[i]))

    def sequences(self) -> list[TokenSequence]:
        return [self.sequence(i) for i in range(len(self))]

    def content_tuples(self, eos: int) -> list[tuple[int, ...]]:
        """Per-replicate content tokens (eos stripped), as hashable tuples."""
        out = []
        rows = self.tokens.tolist()
        for row, n, term in zip(rows, self.lengths.tolist(), self.terminated.tolist()):
            out.append(tuple(row[: n - 1 if term else n]))
        return out


def _generate_range(model, prompt, replicate_start, count, noise, cfg, stream) -> GenerationBatch:
    vocab = model.vocab
    eos = vocab.eos
    k = cfg.max_steps
    tokens = np.full((count, k), -1, dtype=np.int64)
    lengths = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    for step in range(1, k + 1):
        if active.size == 0:
            break
        rows = model.batch_rows(prompt, tokens[active, : step - 1])
        rows = _scale_rows(rows, cfg.temperature)
        gumbels, uniforms = noise.raw_blocks(prompt, replicate_start, count, step, vocab.size, stream)
        picked = _sample_rows(rows, gumbels[active], uniforms[active], cfg.sampler)
        tokens[active, step - 1] = picked
        lengths[active] = step
        active = active[picked != eos]
    terminated = tokens[np.arange(count), lengths - 1] == eos
    width = int(lengths.max()) if count else 0
    return GenerationBatch(tokens=tokens[:, :width], lengths=lengths, terminated=terminated)


def generate_batch(
    model,
    prompt: PromptId,
    count: int,
    noise: NoiseSource,
    cfg: GenerationConfig,
    stream: int = 0,
    replicate_start: int = 0,
    workers: int = 1,
) -> GenerationBatch:
    """Generate sequences for replicates ``replicate_start .. +count``.

    The result is a pure function of ``(model, prompt, replicate, seed,
    cfg, stream)`` per replicate; chunking across ``workers`` threads
    cannot change it.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if workers <= 1 or count < 2 * workers:
        return _generate_range(model, prompt, replicate_start, count, noise, cfg, stream)
    bounds = np.linspace(0, count, workers + 1).astype(int)
    jobs = [(replicate_start + int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(lambda j: _generate_range(model, prompt, j[0], j[1], noise, cfg, stream), jobs)
        )
    width = max(p.tokens.shape[1] for p in parts)
    tokens = np.full((count, width), -1, dtype=np.int64)
    offset = 0
    for part in parts:
        tokens[offset : offset + len(part), : part.tokens.shape[1]] = part.tokens
        offset += len(part)
    lengths = np.concatenate([p.lengths for p in parts])
    terminated = np.concatenate([p.terminated for p in parts])
    return GenerationBatch(tokens=tokens, lengths=lengths, terminated=terminated)


def generate(
    model,
    prompt: PromptId,
    replicate: int,
    noise: NoiseSource,
    cfg: GenerationConfig,
    stream: int = 0,
) -> TokenSequence:
    """Generate one sequence for ``(prompt, replicate)``."""
    if replicate < 0:
        raise ValueError("replicate must be non-negative")
    return generate_batch(model, prompt, 1, noise, cfg, stream, replicate_start=replicate).sequence(0)


def _check_shared_vocabulary(models: Sequence) -> None:
    if len(models) < 2:
        raise ConfigurationError("need at least two models")
    first = models[0].vocab
    for m in models[1:]:
        if m.vocab != first:
            raise ConfigurationError(f"vocabulary mismatch: {m.vocab} != {first}")


def generate_coupled(
    models: Sequence,
    prompt: PromptId,
    replicate: int,
    noise: NoiseSource,
    cfg: GenerationConfig,
) -> list[TokenSequence]:
    """Generate from every model under the identical noise blocks.

    All models read stream 0, so at each step index they consume the same
    block regardless of how their partial sequences have diverged.
    """
    _check_shared_vocabulary(models)
    return [generate(m, prompt, replicate, noise, cfg, stream=0) for m in models]


def generate_independent(
    models: Sequence,
    prompt: PromptId,
    replicate: int,
    noise: NoiseSource,
    cfg: GenerationConfig,
) -> list[TokenSequence]:
    """Generate from every model under disjoint noise streams.

    Model ``j`` reads stream ``j + 1``, so the streams are disjoint from
    each other and from the shared stream, while each model's marginal
    behavior matches coupled generation.
    """
    _check_shared_vocabulary(models)
    return [generate(m, prompt, replicate, noise, cfg, stream=j + 1) for j, m in enumerate(models)]
