import math

import numpy as np
import pytest

from jplda.dataset import EmbeddingTable, center
from jplda.em import (SufficientStats, TrainConfig, e_step, init_params,
                      log_marginal_likelihood, m_step, train)
from jplda.exceptions import NumericalError
from jplda.model import ModelParams, build_precisions
from jplda.oracle import oracle_log_density, oracle_posterior
from jplda.posterior import inner_posterior
from jplda.simulate import simulate_dataset


def _random_instance(rng, d=6, n_speakers=4, n_channels=3, r_y=2, r_x=2, n=12):
    speakers = rng.integers(0, n_speakers, n)
    speakers[:n_speakers] = np.arange(n_speakers)
    channels = rng.integers(0, n_channels, n)
    channels[:n_channels] = np.arange(n_channels)
    table = EmbeddingTable.from_arrays(rng.standard_normal((n, d)),
                                       speakers, channels)
    params = ModelParams(rng.standard_normal((d, r_y)),
                         rng.standard_normal((d, r_x)),
                         rng.uniform(0.5, 2.0, d), np.zeros(d))
    return params, table


class TestInitParams:

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(0)
        table = EmbeddingTable.from_arrays(rng.standard_normal((30, 5)),
                                           rng.integers(0, 4, 30) * 0,
                                           rng.integers(0, 3, 30) * 0)
        config = TrainConfig(r_y=2, r_x=1, seed=42)
        a = init_params(table, config)
        b = init_params(table, config)
        assert a.speaker_loading.tobytes() == b.speaker_loading.tobytes()
        assert a.channel_loading.tobytes() == b.channel_loading.tobytes()
        assert a.noise_precision.tobytes() == b.noise_precision.tobytes()

    def test_white_data_gives_unit_precision(self):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal((4000, 6))
        table = EmbeddingTable.from_arrays(samples,
                                           np.zeros(4000, dtype=int),
                                           np.zeros(4000, dtype=int))
        params = init_params(table, TrainConfig(r_y=2, r_x=2, seed=0))
        # exact against an independent two-pass variance computation
        mean = samples.sum(axis=0) / len(samples)
        variance = ((samples - mean) ** 2).sum(axis=0) / len(samples)
        np.testing.assert_allclose(params.noise_precision, 1.0 / variance,
                                   rtol=1e-12)
        # and near one within sampling error of the variance estimator
        np.testing.assert_allclose(params.noise_precision, 1.0,
                                   atol=5 * math.sqrt(2.0 / len(samples)))

    def test_rank_bounds(self):
        table = EmbeddingTable.from_arrays(np.random.default_rng(2)
                                           .standard_normal((8, 3)),
                                           np.zeros(8, dtype=int),
                                           np.zeros(8, dtype=int))
        init_params(table, TrainConfig(r_y=3, r_x=3))
        with pytest.raises(ValueError, match="exceed"):
            init_params(table, TrainConfig(r_y=4, r_x=1))
        with pytest.raises(ValueError):
            TrainConfig(r_y=0, r_x=1)

    def test_zero_variance_dimension_clamped(self):
        samples = np.random.default_rng(3).standard_normal((20, 3))
        samples[:, 1] = 7.0
        table = EmbeddingTable.from_arrays(samples, np.zeros(20, dtype=int),
                                           np.zeros(20, dtype=int))
        with pytest.warns(UserWarning, match="zero-variance"):
            params = init_params(table, TrainConfig(r_y=1, r_x=1))
        assert params.noise_precision[1] == 1e8


class TestLogMarginalLikelihood:

    def test_standard_normal_at_zero(self):
        d = 4
        params = ModelParams(np.zeros((d, 1)), np.zeros((d, 1)),
                             np.ones(d), np.zeros(d))
        table = EmbeddingTable.from_arrays(np.zeros((1, d)), [0], [0])
        cache = build_precisions(params, table)
        inner = inner_posterior(params, cache, table)
        ll = log_marginal_likelihood(params, cache, table, inner)
        np.testing.assert_allclose(ll, -0.5 * d * math.log(2 * math.pi),
                                   rtol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_density_oracle(self, seed):
        rng = np.random.default_rng(50 + seed)
        params, table = _random_instance(rng)
        cache = build_precisions(params, table)
        inner = inner_posterior(params, cache, table)
        ll = log_marginal_likelihood(params, cache, table, inner)
        ref = oracle_log_density(params, table.samples,
                                 table.speaker_labels.tolist(),
                                 table.channel_labels.tolist())
        assert abs(ll - ref) <= 1e-8 * abs(ref)

    def test_duplicated_samples_with_fresh_channels(self):
        rng = np.random.default_rng(9)
        params, table = _random_instance(rng, n=6)
        doubled = EmbeddingTable.from_arrays(
            np.vstack([table.samples, table.samples]),
            np.concatenate([table.speaker_labels, table.speaker_labels]),
            np.concatenate([table.channel_labels,
                            table.n_channels + np.arange(table.n_samples)]))
        cache = build_precisions(params, doubled)
        inner = inner_posterior(params, cache, doubled)
        ll = log_marginal_likelihood(params, cache, doubled, inner)
        ref = oracle_log_density(params, doubled.samples,
                                 doubled.speaker_labels.tolist(),
                                 doubled.channel_labels.tolist())
        assert abs(ll - ref) <= 1e-8 * abs(ref)


class TestEStep:

    def test_zero_channel_subspace_reduces_to_speaker_stats(self):
        rng = np.random.default_rng(10)
        params, table = _random_instance(rng)
        params = ModelParams(params.speaker_loading, np.zeros((table.dim, 2)),
                             params.noise_precision, params.mean)
        cache = build_precisions(params, table)
        stats = e_step(params, cache, table)
        r_x = params.r_x
        np.testing.assert_allclose(stats.first_moment[:r_x], 0.0, atol=1e-14)
        np.testing.assert_allclose(stats.second_moment[:r_x, :r_x],
                                   table.n_samples * np.eye(r_x), atol=1e-12)
        np.testing.assert_allclose(stats.second_moment[r_x:, :r_x], 0.0,
                                   atol=1e-14)

    def test_single_sample_matches_oracle_moments(self):
        rng = np.random.default_rng(11)
        d = 3
        params = ModelParams(rng.standard_normal((d, 1)),
                             rng.standard_normal((d, 1)),
                             rng.uniform(0.5, 2.0, d), np.zeros(d))
        table = EmbeddingTable.from_arrays(rng.standard_normal((1, d)), [0], [0])
        cache = build_precisions(params, table)
        stats = e_step(params, cache, table)
        ref = oracle_posterior(params, table)
        z = np.concatenate([ref.channel_mean(0), ref.speaker_mean(0)])
        np.testing.assert_allclose(stats.first_moment,
                                   np.outer(z, table.samples[0]), atol=1e-10)
        expected_second = np.block(
            [[ref.channel_cov(0), ref.cross_cov(0, 0).T],
             [ref.cross_cov(0, 0), ref.speaker_cov(0)]]) + np.outer(z, z)
        np.testing.assert_allclose(stats.second_moment, expected_second,
                                   atol=1e-10)

    @pytest.mark.parametrize("seed", range(6))
    def test_random_instances_match_oracle_moments(self, seed):
        rng = np.random.default_rng(300 + seed)
        params, table = _random_instance(rng)
        cache = build_precisions(params, table)
        stats = e_step(params, cache, table)

        ref = oracle_posterior(params, table)
        r_x, r_y = params.r_x, params.r_y
        first = np.zeros_like(stats.first_moment)
        second = np.zeros_like(stats.second_moment)
        for i in range(table.n_samples):
            s = int(table.speaker_labels[i])
            c = int(table.channel_labels[i])
            z = np.concatenate([ref.channel_mean(c), ref.speaker_mean(s)])
            first += np.outer(z, table.samples[i])
            second[:r_x, :r_x] += ref.channel_cov(c)
            cross = ref.cross_cov(s, c)
            second[r_x:, :r_x] += cross
            second[:r_x, r_x:] += cross.T
            second[r_x:, r_x:] += ref.speaker_cov(s)
            second += np.outer(z, z)
        assert np.abs(stats.first_moment - first).max() <= \
            1e-8 * np.abs(first).max()
        assert np.abs(stats.second_moment - second).max() <= \
            1e-8 * np.abs(second).max()

    def test_statistics_symmetric(self):
        rng = np.random.default_rng(12)
        params, table = _random_instance(rng)
        cache = build_precisions(params, table)
        stats = e_step(params, cache, table)
        scale = np.abs(stats.second_moment).max()
        assert np.abs(stats.second_moment - stats.second_moment.T).max() \
            <= 1e-10 * scale
        assert np.abs(stats.scatter - stats.scatter.T).max() \
            <= 1e-10 * np.abs(stats.scatter).max()


class TestMStep:

    def test_solve_residual(self):
        rng = np.random.default_rng(13)
        params, table = _random_instance(rng)
        cache = build_precisions(params, table)
        stats = e_step(params, cache, table)
        v, u, _ = m_step(stats)
        loadings = np.hstack([u, v])
        residual = stats.second_moment @ loadings.T - stats.first_moment
        assert np.abs(residual).max() <= 1e-10 * np.abs(stats.first_moment).max()

    def test_population_stats_recover_zero_channel_model(self):
        # Exact expected statistics under a channel-free model with
        # orthonormal speaker loading: the M-step must return the model.
        rng = np.random.default_rng(14)
        d, r_y, r_x = 5, 2, 1
        v, _ = np.linalg.qr(rng.standard_normal((d, r_y)))
        d_prec = rng.uniform(0.5, 2.0, d)
        n_per = np.array([3, 5, 2, 7])
        n = int(n_per.sum())
        gram = v.T @ (d_prec[:, None] * v)

        scatter = n * (v @ v.T + np.diag(1.0 / d_prec))
        first_y = np.zeros((r_y, d))
        second_yy = np.zeros((r_y, r_y))
        for n_s in n_per:
            l_mat = n_s * gram + np.eye(r_y)
            l_inv = np.linalg.inv(l_mat)
            cov_f = n_s ** 2 * (v @ v.T) + n_s * np.diag(1.0 / d_prec)
            first_y += l_inv @ v.T @ (d_prec[:, None] * cov_f)
            second_yy += n_s * (l_inv + l_inv @ (
                v.T @ (d_prec[:, None] * cov_f * d_prec[None, :]) @ v) @ l_inv)
        first = np.vstack([np.zeros((r_x, d)), first_y])
        second = np.zeros((r_x + r_y, r_x + r_y))
        second[:r_x, :r_x] = n * np.eye(r_x)
        second[r_x:, r_x:] = second_yy

        stats = SufficientStats(scatter=scatter, first_moment=first,
                                second_moment=second, n_samples=n,
                                r_x=r_x, r_y=r_y)
        v_new, u_new, d_new = m_step(stats)
        np.testing.assert_allclose(v_new, v, atol=1e-10)
        np.testing.assert_allclose(u_new, 0.0, atol=1e-10)
        np.testing.assert_allclose(d_new, d_prec, rtol=1e-10)

    def test_fixed_point_after_convergence(self):
        table, _ = simulate_dataset(4, 12, 4, 6, "round-robin", seed=5,
                                    r_y=1, r_x=1, speaker_scale=1.0,
                                    channel_scale=0.7, noise_var=0.5)
        trace = train(table, TrainConfig(r_y=1, r_x=1, max_iters=4000,
                                         rel_tol=1e-300, seed=3))
        params = trace.params
        centered = center(table, params.mean)
        cache = build_precisions(params, centered)
        v, u, d_prec = m_step(e_step(params, cache, centered))
        assert np.abs(v - params.speaker_loading).max() <= 1e-6
        assert np.abs(u - params.channel_loading).max() <= 1e-6
        assert np.abs(d_prec - params.noise_precision).max() <= 1e-6

    def test_degenerate_statistics_rejected(self):
        stats = SufficientStats(scatter=np.eye(3),
                                first_moment=np.zeros((2, 3)),
                                second_moment=np.zeros((2, 2)),
                                n_samples=4, r_x=1, r_y=1)
        with pytest.raises(NumericalError):
            m_step(stats)


class TestTrain:

    def test_single_iteration(self):
        rng = np.random.default_rng(15)
        _, table = _random_instance(rng)
        trace = train(table, TrainConfig(r_y=2, r_x=1, max_iters=1, seed=0))
        assert trace.iterations == 1
        assert len(trace.log_likelihoods) == 1
        assert trace.stop_reason == "max_iters"

    def test_monotone_log_likelihood(self):
        table, _ = simulate_dataset(8, 30, 6, 8, "round-robin", seed=21,
                                    r_y=3, r_x=2, speaker_scale=1.1,
                                    channel_scale=0.8, noise_var=0.6,
                                    mean_scale=0.4)
        trace = train(table, TrainConfig(r_y=3, r_x=2, max_iters=60,
                                         rel_tol=1e-300, seed=1))
        lls = np.array(trace.log_likelihoods)
        assert np.all(np.diff(lls) >= -1e-9 * np.abs(lls[:-1]))

    def test_deterministic(self):
        table, _ = simulate_dataset(5, 10, 3, 4, "round-robin", seed=8,
                                    r_y=2, r_x=1)
        config = TrainConfig(r_y=2, r_x=1, max_iters=15, seed=4)
        a = train(table, config)
        b = train(table, config)
        assert a.log_likelihoods == b.log_likelihoods
        assert a.params.speaker_loading.tobytes() == \
            b.params.speaker_loading.tobytes()
        assert a.params.noise_precision.tobytes() == \
            b.params.noise_precision.tobytes()

    def test_convergence_stop(self):
        table, _ = simulate_dataset(4, 8, 2, 5, "round-robin", seed=2,
                                    r_y=1, r_x=1)
        trace = train(table, TrainConfig(r_y=1, r_x=1, max_iters=500,
                                         rel_tol=1e-4, seed=0))
        assert trace.stop_reason == "converged"
        assert trace.iterations < 500
        # final params are the ones that produced the last recorded value
        centered = center(table, trace.params.mean)
        cache = build_precisions(trace.params, centered)
        inner = inner_posterior(trace.params, cache, centered)
        ll = log_marginal_likelihood(trace.params, cache, centered, inner)
        np.testing.assert_allclose(ll, trace.log_likelihoods[-1], rtol=1e-12)
