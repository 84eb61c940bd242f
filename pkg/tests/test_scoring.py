import math

import numpy as np
import pytest

from jplda.dataset import EmbeddingTable
from jplda.model import HypothesisPriors, ModelParams
from jplda.oracle import oracle_log_density, standard_plda_reference
from jplda.scoring import (compute_eer, score_trial, score_trial_list,
                           score_unseen_channel)
from jplda.exceptions import DataFormatError

UNIFORM = HypothesisPriors.uniform()
CHANNELS_DIFFERENT = HypothesisPriors(0.0, 1.0, 0.0, 1.0)


def _random_params(rng, d=8, r_y=2, r_x=2, mean_scale=0.3):
    return ModelParams(rng.standard_normal((d, r_y)),
                       rng.standard_normal((d, r_x)),
                       rng.uniform(0.5, 2.0, d),
                       mean_scale * rng.standard_normal(d))


def _oracle_pair_llr(params, priors, m_e, m_t):
    pair = [m_e - params.mean, m_t - params.mean]

    def logdens(speaker_ties, channel_ties):
        return oracle_log_density(params, pair, speaker_ties, channel_ties)

    def logmix(p_same, p_diff, speaker_ties):
        terms = []
        if p_same > 0:
            terms.append(math.log(p_same) + logdens(speaker_ties, [0, 0]))
        if p_diff > 0:
            terms.append(math.log(p_diff) + logdens(speaker_ties, [0, 1]))
        return np.logaddexp.reduce(terms)

    return (logmix(priors.p_ss, priors.p_ds, [0, 0])
            - logmix(priors.p_sd, priors.p_dd, [0, 1]))


class TestScoreTrial:

    def test_zero_channel_subspace_collapses(self):
        rng = np.random.default_rng(0)
        d = 6
        params = ModelParams(rng.standard_normal((d, 2)), np.zeros((d, 2)),
                             rng.uniform(0.5, 2.0, d),
                             rng.standard_normal(d) * 0.2)
        ref = standard_plda_reference(params)
        for _ in range(10):
            m_e, m_t = rng.standard_normal(d), rng.standard_normal(d)
            score = score_trial(params, UNIFORM, m_e, m_t)
            assert score.llr_channel == 0.0
            np.testing.assert_allclose(score.llr, ref.llr([m_e], m_t),
                                       atol=1e-10)

    def test_symmetric_in_enroll_and_test(self):
        rng = np.random.default_rng(1)
        params = _random_params(rng)
        for _ in range(100):
            m_e = rng.standard_normal(params.dim) * 2
            m_t = rng.standard_normal(params.dim) * 2
            a = score_trial(params, UNIFORM, m_e, m_t)
            b = score_trial(params, UNIFORM, m_t, m_e)
            assert abs(a.llr - b.llr) <= 1e-10

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_mixture_density_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        params = _random_params(rng)
        priors = HypothesisPriors(0.3, 0.7, 0.6, 0.4)
        m_e = rng.standard_normal(params.dim) * 2
        m_t = rng.standard_normal(params.dim) * 2
        score = score_trial(params, priors, m_e, m_t)
        expected = _oracle_pair_llr(params, priors, m_e, m_t)
        assert abs(score.llr - expected) <= 1e-8 * abs(expected)

    def test_zero_vectors_closed_form(self):
        params = ModelParams(np.array([[1.0], [0.0]]), np.zeros((2, 1)),
                             np.ones(2), np.zeros(2))
        score = score_trial(params, UNIFORM, np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(score.llr, math.log(2) - 0.5 * math.log(3),
                                   rtol=1e-12)
        # cross-check against the density oracle on the zero vector
        expected = _oracle_pair_llr(params, UNIFORM, np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(score.llr, expected, rtol=1e-10)

    def test_boundary_priors_give_pure_different_channel_score(self):
        rng = np.random.default_rng(2)
        params = _random_params(rng)
        m_e = rng.standard_normal(params.dim)
        m_t = rng.standard_normal(params.dim)
        score = score_trial(params, CHANNELS_DIFFERENT, m_e, m_t)
        expected = (score.llr_speaker + score.quad_terms["dc_ss"]
                    - score.quad_terms["dc_ds"])
        np.testing.assert_allclose(score.llr, expected, rtol=1e-12)
        oracle = _oracle_pair_llr(params, CHANNELS_DIFFERENT, m_e, m_t)
        assert abs(score.llr - oracle) <= 1e-8 * abs(oracle)

    def test_parts_sum_to_total(self):
        rng = np.random.default_rng(3)
        params = _random_params(rng)
        score = score_trial(params, UNIFORM, rng.standard_normal(params.dim),
                            rng.standard_normal(params.dim))
        assert score.llr == score.llr_speaker + score.llr_channel

    def test_aligned_pair_outscores_perturbed_pair(self):
        # same-speaker evidence: a pair generated on the speaker subspace
        # scores higher than the same-norm pair rotated off it; asserted
        # through the oracle, then matched by the scorer.
        rng = np.random.default_rng(4)
        d = 6
        v = np.zeros((d, 1))
        v[0, 0] = 1.0
        params = ModelParams(v, 0.5 * rng.standard_normal((d, 1)),
                             np.ones(d), np.zeros(d))
        m = params.speaker_loading[:, 0].copy()
        off = np.zeros(d)
        off[1] = 1.0
        theta = 0.7
        m_rot = math.cos(theta) * m + math.sin(theta) * np.linalg.norm(m) * off
        aligned_oracle = _oracle_pair_llr(params, UNIFORM, m, m)
        perturbed_oracle = _oracle_pair_llr(params, UNIFORM, m_rot, m_rot)
        assert aligned_oracle > perturbed_oracle
        aligned = score_trial(params, UNIFORM, m, m).llr
        perturbed = score_trial(params, UNIFORM, m_rot, m_rot).llr
        assert aligned > perturbed

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(5)
        params = _random_params(rng)
        with pytest.raises(ValueError, match="dimension"):
            score_trial(params, UNIFORM, np.zeros(params.dim + 1),
                        np.zeros(params.dim))


class TestScoreUnseenChannel:

    def test_single_enrollment_matches_boundary_pair_scorer(self):
        rng = np.random.default_rng(6)
        params = _random_params(rng)
        for _ in range(20):
            m_e = rng.standard_normal(params.dim)
            m_t = rng.standard_normal(params.dim)
            unseen = score_unseen_channel(params, [(m_e, 0)], m_t)
            pair = score_trial(params, CHANNELS_DIFFERENT, m_e, m_t)
            assert abs(unseen.llr - pair.llr) <= 1e-10

    def test_zero_channel_subspace_matches_multi_enrollment_reference(self):
        rng = np.random.default_rng(7)
        d = 6
        params = ModelParams(rng.standard_normal((d, 2)), np.zeros((d, 1)),
                             rng.uniform(0.5, 2.0, d),
                             rng.standard_normal(d) * 0.2)
        ref = standard_plda_reference(params)
        enroll = [rng.standard_normal(d) for _ in range(4)]
        m_t = rng.standard_normal(d)
        score = score_unseen_channel(params, [(m, i % 2) for i, m in enumerate(enroll)], m_t)
        assert score.llr_channel == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(score.llr, ref.llr(enroll, m_t), rtol=1e-10)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_tied_density_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        params = _random_params(rng)
        d = params.dim
        channels = rng.integers(0, 2, 4)
        enrollment = [(rng.standard_normal(d) * 2, int(c)) for c in channels]
        m_t = rng.standard_normal(d) * 2
        score = score_unseen_channel(params, enrollment, m_t)

        vectors = [v - params.mean for v, _ in enrollment]
        ties = [c for _, c in enrollment]
        stacked = vectors + [m_t - params.mean]
        channel_ties = ties + ["new"]
        same = oracle_log_density(params, stacked, [0] * 5, channel_ties)
        diff = oracle_log_density(params, stacked, [0, 0, 0, 0, 1], channel_ties)
        expected = same - diff
        assert abs(score.llr - expected) <= 1e-8 * abs(expected)

    def test_duplicate_enrollment_rows_count_twice(self):
        rng = np.random.default_rng(8)
        params = _random_params(rng)
        m = rng.standard_normal(params.dim)
        m_t = rng.standard_normal(params.dim)
        single = score_unseen_channel(params, [(m, 0)], m_t)
        doubled = score_unseen_channel(params, [(m, 0), (m, 0)], m_t)
        assert abs(single.llr - doubled.llr) > 1e-6

    def test_empty_enrollment_rejected(self):
        rng = np.random.default_rng(9)
        params = _random_params(rng)
        with pytest.raises(ValueError, match="at least one"):
            score_unseen_channel(params, [], rng.standard_normal(params.dim))


class TestScoreTrialList:

    def _tables(self, rng, params, n=10):
        d = params.dim
        enroll = EmbeddingTable.from_arrays(
            rng.standard_normal((n, d)), np.arange(n), np.zeros(n, dtype=int),
            sample_ids=[f"e{i}" for i in range(n)])
        test = EmbeddingTable.from_arrays(
            rng.standard_normal((n, d)), np.arange(n), np.zeros(n, dtype=int),
            sample_ids=[f"t{i}" for i in range(n)])
        return enroll, test

    def test_empty_list(self):
        rng = np.random.default_rng(10)
        params = _random_params(rng)
        enroll, test = self._tables(rng, params)
        assert score_trial_list(params, UNIFORM, enroll, test, []) == []

    def test_duplicated_trial_scores_identically(self):
        rng = np.random.default_rng(11)
        params = _random_params(rng)
        enroll, test = self._tables(rng, params)
        scores = score_trial_list(params, UNIFORM, enroll, test,
                                  [("e1", "t2"), ("e1", "t2")])
        assert scores[0].llr == scores[1].llr

    def test_matches_individual_scoring(self):
        rng = np.random.default_rng(12)
        params = _random_params(rng)
        enroll, test = self._tables(rng, params, n=25)
        trials = [(f"e{rng.integers(0, 25)}", f"t{rng.integers(0, 25)}")
                  for _ in range(1000)]
        scores = score_trial_list(params, UNIFORM, enroll, test, trials)
        for (eid, tid), score in zip(trials[::97], scores[::97]):
            e_row = enroll.sample_ids.index(eid)
            t_row = test.sample_ids.index(tid)
            direct = score_trial(params, UNIFORM, enroll.samples[e_row],
                                 test.samples[t_row])
            assert direct.llr == score.llr

    def test_unknown_id_reports_line(self):
        rng = np.random.default_rng(13)
        params = _random_params(rng)
        enroll, test = self._tables(rng, params)
        with pytest.raises(DataFormatError, match="line 2.*nosuch"):
            score_trial_list(params, UNIFORM, enroll, test,
                             [("e1", "t1"), ("nosuch", "t1")])


class TestComputeEer:

    def test_separated(self):
        assert compute_eer([1.0, 2.0], [-2.0, -1.0]) == 0.0

    def test_chance(self):
        assert compute_eer([3.0, 4.0], [3.0, 4.0]) == 0.5

    def test_interpolated(self):
        assert compute_eer([0.0, 2.0], [-1.0, 1.0]) == pytest.approx(0.25)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_eer([], [1.0])
        with pytest.raises(ValueError):
            compute_eer([1.0], [])

    def test_shift_invariant(self):
        rng = np.random.default_rng(14)
        targets = rng.standard_normal(50) + 1.0
        nontargets = rng.standard_normal(80)
        base = compute_eer(targets, nontargets)
        shifted = compute_eer(targets + 10.0, nontargets + 10.0)
        assert base == pytest.approx(shifted)
