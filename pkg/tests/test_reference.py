import numpy as np
import pytest
from scipy.special import expit

from coupledgen import (
    ConfigurationError,
    Coupling,
    PromptSet,
    SamplerKind,
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
from coupledgen.reference import _prompt_allocation


class TestClosedFormWinRates:
    def test_equal_probabilities_never_win_coupled(self):
        coupled, _ = closed_form_win_rates(TwoTokenInstance(0.3, 0.3))
        assert coupled == (0.0, 0.0)

    def test_substitution_example(self):
        coupled, independent = closed_form_win_rates(TwoTokenInstance(0.4, 0.5))
        assert coupled == pytest.approx((0.0, 0.1), abs=1e-12)
        assert independent == pytest.approx((0.2, 0.3), abs=1e-12)

    def test_worked_example_pair_m1_m3_first_prompt(self):
        _, independent = closed_form_win_rates(TwoTokenInstance(0.4, 0.5))
        assert independent[0] == pytest.approx(0.4 * 0.5, abs=1e-12)

    def test_monte_carlo_cross_check(self):
        inst = TwoTokenInstance(0.4, 0.5)
        coupled_cf, independent_cf = closed_form_win_rates(inst)
        n = 1_000_000
        for regime, (cf_m, cf_mp) in (
            (Coupling.COUPLED, coupled_cf),
            (Coupling.INDEPENDENT, independent_cf),
        ):
            stats = mc_reference(
                inst.models(), inst.scorer(), PromptSet((inst.prompt,)),
                SamplerKind.GUMBEL_MAX, regime, n, seed=31,
            )
            for cf, mc in ((cf_m, stats.win_rate), (cf_mp, stats.loss_rate)):
                se = np.sqrt(cf * (1 - cf) / n)
                assert abs(mc - cf) <= 4 * se


class TestCoupledJoint:
    def test_equal_probabilities_diagonal(self):
        joint = two_token_coupled_joint(0.4, 0.4)
        assert np.allclose(joint, [[0.4, 0.0], [0.0, 0.6]], atol=1e-12)

    def test_logistic_evaluation_example(self):
        joint = two_token_coupled_joint(0.6, 0.7)
        assert np.allclose(joint, [[0.6, 0.0], [0.1, 0.3]], atol=1e-12)

    def test_matches_min_max_structure(self):
        # The logistic thresholds reduce to the monotone coupling:
        # joint(1,1)=min(p,p'), joint(2,2)=1-max(p,p'), off-diagonal |p-p'|.
        rng = np.random.default_rng(32)
        for _ in range(200):
            p, q = rng.uniform(0.01, 0.99, size=2)
            joint = two_token_coupled_joint(p, q)
            assert joint[0, 0] == pytest.approx(min(p, q), abs=1e-12)
            assert joint[1, 1] == pytest.approx(1 - max(p, q), abs=1e-12)
            lone_cell = joint[1, 0] if q > p else joint[0, 1]
            assert lone_cell == pytest.approx(abs(p - q), abs=1e-12)

    def test_marginals_preserved_and_zero_cell(self):
        rng = np.random.default_rng(33)
        for _ in range(200):
            p, q = rng.uniform(0.01, 0.99, size=2)
            joint = two_token_coupled_joint(p, q)
            assert np.allclose(joint.sum(axis=1), [p, 1 - p], atol=1e-12)
            assert np.allclose(joint.sum(axis=0), [q, 1 - q], atol=1e-12)
            # The lower-probability model never takes the favored token alone.
            zero_cell = joint[0, 1] if q > p else joint[1, 0]
            assert zero_cell == 0.0

    def test_threshold_direction_against_logistic_cdf(self):
        p, q = 0.35, 0.8
        a, b = np.log((1 - p) / p), np.log((1 - q) / q)
        joint = two_token_coupled_joint(p, q)
        assert joint[0, 0] == pytest.approx(1 - expit(max(a, b)), abs=1e-15)
        assert joint[1, 1] == pytest.approx(expit(min(a, b)), abs=1e-15)

    def test_domain(self):
        with pytest.raises(ConfigurationError):
            two_token_coupled_joint(0.0, 0.5)


class TestClosedFormVariances:
    def test_equal_probabilities_zero_coupled_variance(self):
        var_c, var_i, _ = closed_form_variances(TwoTokenInstance(0.45, 0.45))
        assert var_c == pytest.approx(0.0, abs=1e-12)
        assert var_i > 0

    def test_exact_values(self):
        var_c, var_i, cov = closed_form_variances(TwoTokenInstance(0.6, 0.7))
        assert var_c == pytest.approx(0.09, abs=1e-12)
        assert var_i == pytest.approx(0.45, abs=1e-12)
        assert cov == pytest.approx(0.18, abs=1e-12)

    def test_identity_exact_and_ordering(self):
        # 100 random instances: the decomposition identity holds exactly
        # and coupled variance is strictly below independent variance.
        rng = np.random.default_rng(34)
        for _ in range(100):
            inst = TwoTokenInstance(*rng.uniform(0.02, 0.98, size=2))
            var_c, var_i, cov = closed_form_variances(inst)
            assert var_i == pytest.approx(var_c + 2 * cov, abs=1e-12)
            assert var_c < var_i


class TestRankFlipExample:
    def test_paper_values_exact(self):
        table = rank_flip_example()
        expected_independent = (0.1545, 0.15675, 0.16225)
        expected_coupled = (0.0525, 0.0225, 0.03)
        for got, want in zip(table.independent_avg, expected_independent):
            assert abs(got - want) <= 1e-12
        for got, want in zip(table.coupled_avg, expected_coupled):
            assert abs(got - want) <= 1e-12

    def test_rankings_flip(self):
        table = rank_flip_example()
        assert table.independent_ranking == (2, 1, 0)  # m3 > m2 > m1
        assert table.coupled_ranking == (0, 2, 1)  # m1 > m3 > m2
        assert table.independent_ranking != table.coupled_ranking

    def test_average_helper_agrees_with_direct_sum(self):
        probs = np.array([[0.4, 1.0], [0.48, 0.9], [0.5, 0.89]])
        averages = closed_form_average_win_rates(probs, [0.5, 0.5], coupled=False)
        direct_m1 = (0.4 * 0.52 + 1.0 * 0.1 + 0.4 * 0.5 + 1.0 * 0.11) / 4
        assert averages[0] == pytest.approx(direct_m1, abs=1e-15)


class TestMcReference:
    def test_identical_models_coupled_tie_rate_one(self):
        inst = TwoTokenInstance(0.5, 0.5)
        stats = mc_reference(
            inst.models(), inst.scorer(), PromptSet((inst.prompt,)),
            SamplerKind.GUMBEL_MAX, Coupling.COUPLED, 20_000, seed=35,
        )
        assert stats.tie_rate == 1.0 and stats.tie_rate_se == 0.0
        assert stats.win_rate == 0.0 and stats.var_diff == 0.0

    def test_self_consistency_with_closed_forms(self):
        rng = np.random.default_rng(36)
        n = 100_000
        for _ in range(5):
            inst = TwoTokenInstance(*rng.uniform(0.05, 0.95, size=2), favored_token=int(rng.integers(0, 2)))
            coupled_cf, independent_cf = closed_form_win_rates(inst)
            for regime, cf in ((Coupling.COUPLED, coupled_cf), (Coupling.INDEPENDENT, independent_cf)):
                stats = mc_reference(
                    inst.models(), inst.scorer(), PromptSet((inst.prompt,)),
                    SamplerKind.GUMBEL_MAX, regime, n, seed=int(rng.integers(0, 2**31)),
                )
                for want, got in zip(cf, (stats.win_rate, stats.loss_rate)):
                    se = np.sqrt(want * (1 - want) / n)
                    assert abs(got - want) <= 4 * se

    def test_joint_counts_match_closed_form_cellwise(self):
        inst = TwoTokenInstance(0.6, 0.7)
        n = 1_000_000
        counts = mc_token_pair_counts(*inst.models(), inst.prompt, n, seed=37, coupled=True)
        expected = two_token_coupled_joint(0.6, 0.7)
        observed = counts[:2, :2] / n
        se = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(observed - expected) <= 4 * se + 1e-12)

    def test_prompt_allocation_largest_remainder(self):
        prompts = PromptSet(("a", "b", "c"), (0.5, 0.3, 0.2))
        allocation = dict(_prompt_allocation(prompts, 10))
        assert allocation == {"a": 5, "b": 3, "c": 2}
        assert sum(dict(_prompt_allocation(prompts, 7)).values()) == 7


class TestInstabilitySearch:
    def test_violation_found_and_verified(self):
        found = find_inverse_transform_instability()
        assert found is not None
        da, db, u = np.array(found.dist_a), np.array(found.dist_b), found.u
        # Recompute both sampled tokens with the CDF rule.
        ta = int(np.searchsorted(np.cumsum(da), u, side="left"))
        tb = int(np.searchsorted(np.cumsum(db), u, side="left"))
        assert (ta, tb) == (found.token_a, found.token_b)
        assert ta != tb
        # The switched-to token's relative odds did not exceed the
        # original token's, which a stable mechanism forbids.
        assert db[ta] * da[tb] >= db[tb] * da[ta]
