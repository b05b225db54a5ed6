"""Coupled autoregressive generation and its evaluation statistics.

Sample token-level models under a shared source of exogenous randomness
(or under disjoint streams), score the outputs, and compare models with
paired estimators: variance decompositions, win/tie rates, confidence
intervals, rankings, and error-versus-sample-size curves, all backed by
closed-form and Monte Carlo reference computations.
"""

from .core import (
    GenerationBatch,
    GenerationConfig,
    NextTokenDistribution,
    NoiseBlock,
    NoiseSource,
    SamplerKind,
    TokenSequence,
    Vocabulary,
    empty_sequence,
    generate,
    generate_batch,
    generate_coupled,
    generate_independent,
    gumbel_max_sample,
    inverse_transform_sample,
    temperature_scale,
)
from .driver import ScoreBank, build_score_bank, paired_samples, z_key_for
from .errors import (
    ConfigurationError,
    CoupledGenError,
    DegenerateDataError,
    InsufficientDataError,
    InvalidDistributionError,
    UnknownPromptError,
    UnreachableTargetError,
)
from .estimators import (
    Coupling,
    ErrorCurve,
    PairedSampleSet,
    RankEntry,
    RankTable,
    VarianceReport,
    WinRateReport,
    average_win_rate,
    error_curve,
    jackknife_residual_se,
    mean_score_difference,
    rank_from_cis,
    sample_savings,
    two_proportion_z_test,
    variance_decomposition,
    wald_ci,
    win_tie_rates,
)
from .models import (
    CategoricalModel,
    MarkovModel,
    Model,
    PointMassModel,
    PromptSet,
    SequenceTableModel,
    mix_row,
    model_distance,
    perturb,
    random_categorical_model,
    random_markov_model,
)
from .reference import (
    ExampleTable,
    McReference,
    StabilityViolation,
    TwoTokenInstance,
    closed_form_average_win_rates,
    closed_form_variances,
    closed_form_win_rates,
    find_inverse_transform_instability,
    mc_reference,
    mc_token_pair_counts,
    rank_flip_example,
    two_token_coupled_joint,
)
from .scoring import (
    CorrectnessScorer,
    NoisyScorer,
    PairwiseOutcome,
    RewardTableScorer,
    Scorer,
    compare,
)

__version__ = "0.1.0"
