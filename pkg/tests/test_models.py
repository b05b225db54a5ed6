import numpy as np
import pytest

from coupledgen import (
    CategoricalModel,
    ConfigurationError,
    MarkovModel,
    PointMassModel,
    PromptSet,
    SequenceTableModel,
    TokenSequence,
    UnknownPromptError,
    Vocabulary,
    empty_sequence,
    mix_row,
    model_distance,
    perturb,
    random_categorical_model,
    random_markov_model,
)

VOCAB = Vocabulary(size=3, eos=2)


class TestPromptSet:
    def test_default_uniform_weights(self):
        ps = PromptSet(("a", "b"))
        assert ps.weights == (0.5, 0.5)

    def test_weights_normalize(self):
        ps = PromptSet(("a", "b"), (1.0, 3.0))
        assert ps.weights == (0.25, 0.75)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ConfigurationError):
            PromptSet(("a", "b"), (0.5,))
        with pytest.raises(ConfigurationError):
            PromptSet(("a", "b"), (-0.1, 1.1))
        with pytest.raises(ConfigurationError):
            PromptSet(())


class TestNextTokenDistribution:
    def test_point_mass_row(self):
        model = PointMassModel(VOCAB, {"q": 1})
        row = model.next_token_distribution("q", empty_sequence()).probs
        assert np.array_equal(row, [0.0, 1.0, 0.0])

    def test_categorical_single_step_convention(self):
        model = CategoricalModel(VOCAB, {"q": [0.4, 0.6, 0.0]})
        first = model.next_token_distribution("q", empty_sequence()).probs
        assert np.allclose(first, [0.4, 0.6, 0.0])
        second = model.next_token_distribution("q", TokenSequence((1,), False)).probs
        assert np.array_equal(second, [0.0, 0.0, 1.0])

    def test_markov_table_lookup(self):
        model = MarkovModel(
            VOCAB,
            {"q": [0.5, 0.5, 0.0]},
            {0: [0.2, 0.8, 0.0], 1: [0.1, 0.1, 0.8]},
        )
        row = model.next_token_distribution("q", TokenSequence((1, 0), False)).probs
        assert np.allclose(row, [0.2, 0.8, 0.0])

    def test_sequence_table_fallback_uniform_over_content(self):
        model = SequenceTableModel(VOCAB, {("q", (0,)): [0.9, 0.1, 0.0]})
        row = model.next_token_distribution("q", TokenSequence((1, 1), False)).probs
        assert np.array_equal(row, [0.5, 0.5, 0.0])

    def test_unknown_prompt_raises(self):
        for model in (
            PointMassModel(VOCAB, {"q": 1}),
            CategoricalModel(VOCAB, {"q": [0.4, 0.6, 0.0]}),
            MarkovModel(VOCAB, {"q": [1.0, 0.0, 0.0]}, {0: [0.0, 1.0, 0.0], 1: [0.0, 0.0, 1.0]}),
        ):
            with pytest.raises(UnknownPromptError):
                model.next_token_distribution("unknown", empty_sequence())

    def test_terminated_partial_rejected(self):
        model = PointMassModel(VOCAB, {"q": 1})
        with pytest.raises(ValueError):
            model.next_token_distribution("q", TokenSequence((1, 2), True))


class TestModelValidation:
    def test_categorical_rejects_eos_mass(self):
        with pytest.raises(ConfigurationError):
            CategoricalModel(VOCAB, {"q": [0.4, 0.5, 0.1]})

    def test_markov_requires_full_transition_cover(self):
        with pytest.raises(ConfigurationError):
            MarkovModel(VOCAB, {"q": [1.0, 0.0, 0.0]}, {0: [0.0, 1.0, 0.0]})

    def test_point_mass_token_range(self):
        with pytest.raises(ConfigurationError):
            PointMassModel(VOCAB, {"q": 5})


class TestPerturb:
    def test_zero_epsilon_is_identity(self):
        model = CategoricalModel(VOCAB, {"q": [0.6, 0.4, 0.0]})
        same = perturb(model, 0.0, direction_seed=5)
        assert np.array_equal(same.content_row("q"), model.content_row("q"))

    def test_full_epsilon_reproduces_seeded_direction(self):
        model = CategoricalModel(VOCAB, {"q": [0.6, 0.4, 0.0]})
        out = perturb(model, 1.0, direction_seed=5)
        expected = np.zeros(3)
        expected[:2] = np.random.default_rng(5).dirichlet(np.ones(2))
        assert np.allclose(out.content_row("q"), expected, atol=1e-15)

    def test_mix_row_arithmetic(self):
        mixed = mix_row([0.6, 0.4], [0.5, 0.5], 0.1)
        assert np.allclose(mixed, [0.59, 0.41], atol=1e-15)
        assert np.max(np.abs(mixed - [0.6, 0.4])) <= 0.1

    def test_epsilon_domain(self):
        model = CategoricalModel(VOCAB, {"q": [0.6, 0.4, 0.0]})
        for eps in (-0.1, 1.5):
            with pytest.raises(ValueError):
                perturb(model, eps, 0)

    def test_distance_bounded_by_epsilon_property(self):
        # 1000 random (model, epsilon, seed) triples; the perturbed model
        # stays within epsilon in sup norm, preserves supports, and keeps
        # every row a valid distribution.
        rng = np.random.default_rng(7)
        prompts = PromptSet(("a", "b"))
        for trial in range(1000):
            size = int(rng.integers(3, 6))
            vocab = Vocabulary(size=size, eos=size - 1)
            if trial % 2 == 0:
                model = random_categorical_model(vocab, prompts.prompts, rng)
            else:
                model = random_markov_model(vocab, prompts.prompts, rng)
            epsilon = float(rng.uniform(0.0, 1.0))
            out = perturb(model, epsilon, int(rng.integers(0, 2**32)))
            assert model_distance(model, out, prompts) <= epsilon + 1e-12
            for (_, row), (_, new_row) in zip(model.rows(), out.rows()):
                assert np.array_equal(row > 0, new_row > 0)
                assert abs(new_row.sum() - 1.0) < 1e-9


class TestModelDistance:
    def test_identical_models_distance_zero(self):
        model = CategoricalModel(VOCAB, {"q": [0.6, 0.4, 0.0]})
        assert model_distance(model, model, PromptSet(("q",))) == 0.0

    def test_entrywise_max(self):
        a = CategoricalModel(VOCAB, {"q": [0.6, 0.4, 0.0]})
        b = CategoricalModel(VOCAB, {"q": [0.7, 0.3, 0.0]})
        assert model_distance(a, b, PromptSet(("q",))) == pytest.approx(0.1, abs=1e-12)

    def test_markov_distance_covers_transition_rows(self):
        a = MarkovModel(VOCAB, {"q": [0.5, 0.5, 0.0]}, {0: [0.2, 0.8, 0.0], 1: [0.5, 0.5, 0.0]})
        b = MarkovModel(VOCAB, {"q": [0.5, 0.5, 0.0]}, {0: [0.2, 0.8, 0.0], 1: [0.1, 0.9, 0.0]})
        assert model_distance(a, b, PromptSet(("q",))) == pytest.approx(0.4, abs=1e-12)

    def test_vocabulary_mismatch_rejected(self):
        a = PointMassModel(VOCAB, {"q": 0})
        b = PointMassModel(Vocabulary(size=4, eos=3), {"q": 0})
        with pytest.raises(ConfigurationError):
            model_distance(a, b, PromptSet(("q",)))
