"""Closed-form and Monte Carlo reference values.

Independent ground truth for the rest of the package: exact win rates and
variances for two-token single-step models (where the shared-noise joint
distribution has a closed form through the logistic law of Gumbel
differences), a worked three-model example whose ranking flips between
regimes, brute-force Monte Carlo references running on an isolated seed
lineage, and an enumeration search that exhibits the inverse-transform
sampler's instability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import (
    NAMESPACE_REFERENCE,
    GenerationConfig,
    NoiseSource,
    SamplerKind,
    Vocabulary,
    generate_batch,
)
from .errors import ConfigurationError
from .estimators import Coupling
from .models import CategoricalModel, PromptSet
from .scoring import CorrectnessScorer, Scorer

_EXAMPLE_PROMPT = "q"


@dataclass(frozen=True)
class TwoTokenInstance:
    """Two models over two content tokens, one of which is preferred.

    ``p_m`` and ``p_m_prime`` are the probabilities each model assigns to
    the favored (higher-reward, or correct) token.
    """

    p_m: float
    p_m_prime: float
    favored_token: int = 0

    def __post_init__(self):
        for p in (self.p_m, self.p_m_prime):
            if not 0.0 < p < 1.0:
                raise ConfigurationError(f"token probability {p} outside (0, 1)")
        if self.favored_token not in (0, 1):
            raise ConfigurationError("favored token must be 0 or 1")

    @property
    def other_token(self) -> int:
        return 1 - self.favored_token

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(size=3, eos=2)

    def models(self) -> tuple[CategoricalModel, CategoricalModel]:
        rows = []
        for p in (self.p_m, self.p_m_prime):
            row = np.zeros(3)
            row[self.favored_token] = p
            row[self.other_token] = 1.0 - p
            rows.append(row)
        return (
            CategoricalModel(self.vocab, {_EXAMPLE_PROMPT: rows[0]}),
            CategoricalModel(self.vocab, {_EXAMPLE_PROMPT: rows[1]}),
        )

    def scorer(self) -> CorrectnessScorer:
        return CorrectnessScorer({_EXAMPLE_PROMPT: {(self.favored_token,)}})

    @property
    def prompt(self) -> str:
        return _EXAMPLE_PROMPT


def closed_form_win_rates(inst: TwoTokenInstance) -> tuple[tuple[float, float], tuple[float, float]]:
    """Exact ``(coupled, independent)`` win-rate pairs ``(win_m, win_m')``.

    Under shared noise with a counterfactually stable sampler the model
    with the lower favored-token probability never wins alone, so the
    coupled rates are the positive parts of the probability gap; under
    disjoint noise the rates factorize.
    """
    p, q = inst.p_m, inst.p_m_prime
    coupled = (max(p - q, 0.0), max(q - p, 0.0))
    independent = (p * (1.0 - q), q * (1.0 - p))
    return coupled, independent


def two_token_coupled_joint(p: float, p_prime: float) -> np.ndarray:
    """Exact shared-noise joint over token pairs for two-token models.

    Entry ``[i, j]`` is the probability that the first model emits token
    ``i`` and the second emits ``j``, with token 0 the one carrying
    probability ``p`` (resp. ``p_prime``).  Under the Gumbel-argmax
    mechanism the difference of the two token noises is Logistic(0, 1), so
    each model picks token 0 iff that difference clears the threshold
    ``log((1-p)/p)``; sharing the noise makes the joint the monotone
    coupling of the two marginals.
    """
    for x in (p, p_prime):
        if not 0.0 < x < 1.0:
            raise ConfigurationError(f"token probability {x} outside (0, 1)")
    a = np.log((1.0 - p) / p)
    a_prime = np.log((1.0 - p_prime) / p_prime)
    joint = np.zeros((2, 2))
    joint[0, 0] = 1.0 - expit(max(a, a_prime))
    joint[1, 1] = expit(min(a, a_prime))
    off = abs(expit(a) - expit(a_prime))
    if p_prime > p:
        joint[1, 0] = off  # only the second model clears its (lower) threshold
    else:
        joint[0, 1] = off
    return joint


def closed_form_variances(inst: TwoTokenInstance) -> tuple[float, float, float]:
    """Exact ``(var_coupled, var_independent, covariance)`` of the score difference.

    Moments of ``R_m - R_m'`` with binary scores on the favored token,
    computed from the shared-noise joint and the product joint.
    """
    marg_m = np.array([inst.p_m, 1.0 - inst.p_m])
    marg_mp = np.array([inst.p_m_prime, 1.0 - inst.p_m_prime])
    rewards = np.array([1.0, 0.0])
    diff = rewards[:, None] - rewards[None, :]

    joint_c = two_token_coupled_joint(inst.p_m, inst.p_m_prime)
    joint_i = np.outer(marg_m, marg_mp)

    def variance(joint):
        mean = float((joint * diff).sum())
        return float((joint * diff**2).sum()) - mean**2

    scores_m = rewards[:, None] * np.ones(2)[None, :]
    scores_mp = np.ones(2)[:, None] * rewards[None, :]
    covariance = float((joint_c * scores_m * scores_mp).sum()) - inst.p_m * inst.p_m_prime
    return variance(joint_c), variance(joint_i), covariance


@dataclass(frozen=True)
class ExampleTable:
    """Three models scored on two prompts whose ranking flips with the regime."""

    model_names: tuple[str, str, str]
    preferred_probs: np.ndarray  # (3 models, 2 prompts)
    independent_avg: tuple[float, float, float]
    coupled_avg: tuple[float, float, float]
    independent_ranking: tuple[int, ...]  # model indices, best first
    coupled_ranking: tuple[int, ...]


def closed_form_average_win_rates(
    preferred_probs: np.ndarray, weights: Sequence[float], coupled: bool
) -> np.ndarray:
    """Average win rate of each model against all others, prompt-weighted.

    ``preferred_probs[k, p]`` is model ``k``'s probability of emitting the
    preferred response to prompt ``p``.
    """
    probs = np.asarray(preferred_probs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n_models = probs.shape[0]
    averages = np.zeros(n_models)
    for k in range(n_models):
        per_opponent = []
        for j in range(n_models):
            if j == k:
                continue
            if coupled:
                win = np.maximum(probs[k] - probs[j], 0.0)
            else:
                win = probs[k] * (1.0 - probs[j])
            per_opponent.append(float(win @ weights))
        averages[k] = np.mean(per_opponent)
    return averages


def rank_flip_example() -> ExampleTable:
    """The worked three-model, two-prompt ranking example, in closed form.

    Probabilities of the preferred single-token response are fixed at
    ``(0.4, 0.48, 0.5)`` on the first prompt and ``(1, 0.9, 0.89)`` on the
    second; the two prompts are equally weighted.
    """
    probs = np.array([[0.4, 1.0], [0.48, 0.9], [0.5, 0.89]])
    weights = [0.5, 0.5]
    independent = closed_form_average_win_rates(probs, weights, coupled=False)
    coupled = closed_form_average_win_rates(probs, weights, coupled=True)
    return ExampleTable(
        model_names=("m1", "m2", "m3"),
        preferred_probs=probs,
        independent_avg=tuple(float(x) for x in independent),
        coupled_avg=tuple(float(x) for x in coupled),
        independent_ranking=tuple(int(i) for i in np.argsort(-independent)),
        coupled_ranking=tuple(int(i) for i in np.argsort(-coupled)),
    )


# ---------------------------------------------------------------------------
# Monte Carlo references.  These run the generation machinery on a seed
# lineage disjoint from experiment noise by construction.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McReference:
    """Monte Carlo estimates with standard errors for one model pair."""

    n: int
    mean_diff: float
    mean_diff_se: float
    win_rate: float
    win_rate_se: float
    loss_rate: float
    loss_rate_se: float
    tie_rate: float
    tie_rate_se: float
    var_diff: float
    var_diff_se: float
    covariance: float
    covariance_se: float


def _prompt_allocation(prompts: PromptSet, n: int) -> list[tuple[object, int]]:
    # Largest-remainder allocation of n replicates across prompt weights.
    weights = np.asarray(prompts.weights)
    raw = weights * n
    counts = np.floor(raw).astype(int)
    for _ in range(n - counts.sum()):
        i = int(np.argmax(raw - counts))
        counts[i] += 1
    return [(p, int(c)) for p, c in zip(prompts.prompts, counts) if c > 0]


def _rate_se(rate: float, n: int) -> float:
    return float(np.sqrt(rate * (1.0 - rate) / n))


def mc_reference(
    models: Sequence,
    scorer: Scorer,
    prompts: PromptSet,
    sampler: SamplerKind,
    coupling: Coupling,
    n: int,
    seed: int,
    max_steps: int = 8,
    temperature: float = 1.0,
) -> McReference:
    """Brute-force reference statistics for an ordered pair of models.

    Runs ``n`` replicates through the generation machinery under an
    isolated noise lineage, allocates replicates to prompts by weight, and
    reports pooled statistics with asymptotic standard errors.
    """
    if len(models) != 2:
        raise ConfigurationError("reference statistics are defined for ordered pairs")
    if n < 1:
        raise ConfigurationError("need at least one replicate")
    noise = NoiseSource(seed, namespace=NAMESPACE_REFERENCE)
    cfg = GenerationConfig(max_steps=max_steps, temperature=temperature, sampler=sampler)
    coupled = coupling is Coupling.COUPLED
    streams = (0, 0) if coupled else (1, 2)
    score_parts: tuple[list, list] = ([], [])
    for prompt, count in _prompt_allocation(prompts, n):
        for side, (model, stream) in enumerate(zip(models, streams)):
            batch = generate_batch(model, prompt, count, noise, cfg, stream=stream)
            z_keys = np.arange(count, dtype=np.int64) * 4 + (0 if coupled else stream)
            scores = scorer.score_contents(prompt, batch.content_tuples(model.vocab.eos), z_keys)
            score_parts[side].append(scores)
    a = np.concatenate(score_parts[0])
    b = np.concatenate(score_parts[1])
    d = a - b
    tol = scorer.tolerance
    wins = float(np.count_nonzero(d > tol)) / n
    losses = float(np.count_nonzero(-d > tol)) / n
    ties = 1.0 - wins - losses

    mean_diff = float(d.mean())
    mean_se = float(d.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    var_diff = float(d.var(ddof=1)) if n > 1 else 0.0
    centered = d - d.mean()
    var_se = float(np.sqrt(max((centered**4).mean() - var_diff**2, 0.0) / n))
    cov = float(np.cov(a, b, ddof=1)[0, 1]) if n > 1 else 0.0
    cross = (a - a.mean()) * (b - b.mean())
    cov_se = float(np.sqrt(max((cross**2).mean() - cov**2, 0.0) / n))
    return McReference(
        n=n,
        mean_diff=mean_diff,
        mean_diff_se=mean_se,
        win_rate=wins,
        win_rate_se=_rate_se(wins, n),
        loss_rate=losses,
        loss_rate_se=_rate_se(losses, n),
        tie_rate=ties,
        tie_rate_se=_rate_se(ties, n),
        var_diff=var_diff,
        var_diff_se=var_se,
        covariance=cov,
        covariance_se=cov_se,
    )


def mc_token_pair_counts(
    model_a,
    model_b,
    prompt,
    n: int,
    seed: int,
    coupled: bool,
    sampler: SamplerKind = SamplerKind.GUMBEL_MAX,
) -> np.ndarray:
    """Counts of first-token pairs over ``n`` replicates.

    Entry ``[i, j]`` counts replicates where ``model_a`` opened with token
    ``i`` and ``model_b`` with token ``j``.
    """
    if model_a.vocab != model_b.vocab:
        raise ConfigurationError("models use different vocabularies")
    size = model_a.vocab.size
    noise = NoiseSource(seed, namespace=NAMESPACE_REFERENCE)
    cfg = GenerationConfig(max_steps=2, sampler=sampler)
    streams = (0, 0) if coupled else (1, 2)
    first_a = generate_batch(model_a, prompt, n, noise, cfg, stream=streams[0]).tokens[:, 0]
    first_b = generate_batch(model_b, prompt, n, noise, cfg, stream=streams[1]).tokens[:, 0]
    return np.bincount(first_a * size + first_b, minlength=size * size).reshape(size, size)


@dataclass(frozen=True)
class StabilityViolation:
    """A found counterexample to counterfactual stability.

    With noise value ``u`` the first distribution yields ``token_a`` and
    the second yields ``token_b`` even though ``token_a``'s relative odds
    under the second distribution are at least ``token_b``'s.
    """

    dist_a: tuple[float, ...]
    dist_b: tuple[float, ...]
    u: float
    token_a: int
    token_b: int


def find_inverse_transform_instability(
    grid_step: float = 0.1, u_step: float = 0.05
) -> StabilityViolation | None:
    """Search a grid of three-token distribution pairs for a stability violation.

    The inverse-transform sampler assigns tokens by cumulative-probability
    intervals, so raising an early token's mass shifts every later
    interval; the search enumerates distribution pairs on a simplex grid
    and a grid of uniform values to exhibit a case where the sampled token
    switches to one whose relative odds did not improve.
    """
    ticks = int(round(1.0 / grid_step))
    dists = []
    for i in range(1, ticks - 1):
        for j in range(1, ticks - i):
            k = ticks - i - j
            if k >= 1:
                dists.append((i * grid_step, j * grid_step, k * grid_step))
    u_grid = np.arange(u_step, 1.0, u_step)
    for da in dists:
        cdf_a = np.cumsum(da)
        for db in dists:
            if da == db:
                continue
            cdf_b = np.cumsum(db)
            for u in u_grid:
                ta = int(np.searchsorted(cdf_a, u, side="left"))
                tb = int(np.searchsorted(cdf_b, u, side="left"))
                if ta == tb or ta > 2 or tb > 2:
                    continue
                # Appendix-style premise: token_a's relative odds under the
                # second distribution are at least token_b's.
                if db[ta] * da[tb] >= db[tb] * da[ta]:
                    return StabilityViolation(da, db, float(u), ta, tb)
    return None
