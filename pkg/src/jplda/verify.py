"""Randomized self-verification suites.

Each suite draws seeded random instances, runs a production code path and
its brute-force counterpart from :mod:`oracle`, and compares at a fixed
tolerance. Suites report the worst observed discrepancy and the seed, so
failures are reproducible. The CLI ``verify`` subcommand runs them all;
the acceptance tests run them at pinned sizes.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingTable
from .em import TrainConfig, e_step, log_marginal_likelihood, m_step, train
from .model import HypothesisPriors, ModelParams, build_precisions
from .oracle import oracle_log_density, oracle_posterior, standard_plda_reference
from .posterior import inner_posterior, marginal_channel, outer_posterior
from .scoring import score_trial, score_unseen_channel
from .simulate import simulate_dataset


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _rel_err(actual, expected, floor=1e-12):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = max(float(np.max(np.abs(expected), initial=0.0)), floor)
    return float(np.max(np.abs(actual - expected), initial=0.0)) / scale


def random_instance(rng, max_dim=6, max_speakers=4, max_channels=3,
                    max_rank=2, max_samples=12):
    """One random labeled table plus zero-mean model within oracle bounds."""
    d = int(rng.integers(2, max_dim + 1))
    r_y = int(rng.integers(1, min(max_rank, d) + 1))
    r_x = int(rng.integers(1, min(max_rank, d) + 1))
    n_speakers = int(rng.integers(1, max_speakers + 1))
    n_channels = int(rng.integers(1, max_channels + 1))
    n = int(rng.integers(max(n_speakers, n_channels), max_samples + 1))
    speakers = rng.integers(0, n_speakers, n)
    speakers[:n_speakers] = np.arange(n_speakers)
    channels = rng.integers(0, n_channels, n)
    channels[:n_channels] = np.arange(n_channels)
    samples = rng.standard_normal((n, d)) * 1.5
    table = EmbeddingTable.from_arrays(samples, speakers, channels)
    params = ModelParams(rng.standard_normal((d, r_y)),
                         rng.standard_normal((d, r_x)),
                         rng.uniform(0.5, 2.0, d),
                         np.zeros(d))
    return params, table


def posterior_suite(seed=0, n_instances=50, tol=1e-8):
    """Channel/speaker posterior agreement with dense joint conditioning."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        params, table = random_instance(rng)
        cache = build_precisions(params, table)
        inner = inner_posterior(params, cache, table)
        outer = outer_posterior(cache, table, inner)
        ref = oracle_posterior(params, table)

        errs = [
            _rel_err(inner.means.reshape(-1), ref.channel_stack_mean()),
            _rel_err(inner.cov, ref.channel_stack_cov()),
        ]
        for c in range(table.n_channels):
            mean, cov = marginal_channel(inner, c)
            errs.append(_rel_err(mean, ref.channel_mean(c)))
            errs.append(_rel_err(cov, ref.channel_cov(c)))
        for s in range(table.n_speakers):
            errs.append(_rel_err(outer.means[s], ref.speaker_mean(s)))
            errs.append(_rel_err(outer.covs[s], ref.speaker_conditional_cov(s)))
        worst = max(worst, max(errs))
    passed = worst <= tol
    return SuiteResult("posterior", passed,
                       f"{n_instances} instances, max rel err {worst:.3g}, seed {seed}")


def likelihood_suite(seed=0, n_instances=50, tol=1e-8):
    """Training objective equals the stacked marginal Gaussian log density."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        params, table = random_instance(rng)
        cache = build_precisions(params, table)
        inner = inner_posterior(params, cache, table)
        value = log_marginal_likelihood(params, cache, table, inner)
        ref = oracle_log_density(params, table.samples,
                                 table.speaker_labels.tolist(),
                                 table.channel_labels.tolist())
        worst = max(worst, abs(value - ref) / max(abs(ref), 1e-12))
    passed = worst <= tol
    return SuiteResult("likelihood", passed,
                       f"{n_instances} instances, max rel err {worst:.3g}, seed {seed}")


def _oracle_stats(params, table):
    """Sufficient statistics assembled from the dense joint posterior."""
    ref = oracle_posterior(params, table)
    r_x, r_y = params.r_x, params.r_y
    rk = r_x + r_y
    first = np.zeros((rk, table.dim))
    second = np.zeros((rk, rk))
    for i in range(table.n_samples):
        s = int(table.speaker_labels[i])
        c = int(table.channel_labels[i])
        x_mean = ref.channel_mean(c)
        y_mean = ref.speaker_mean(s)
        first += np.outer(np.concatenate([x_mean, y_mean]), table.samples[i])
        second[:r_x, :r_x] += ref.channel_cov(c) + np.outer(x_mean, x_mean)
        cross = ref.cross_cov(s, c) + np.outer(y_mean, x_mean)
        second[r_x:, :r_x] += cross
        second[:r_x, r_x:] += cross.T
        second[r_x:, r_x:] += ref.speaker_cov(s) + np.outer(y_mean, y_mean)
    return first, second


def estep_suite(seed=0, n_instances=50, tol=1e-8):
    """E-step statistics equal sums of dense posterior moments."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        params, table = random_instance(rng)
        cache = build_precisions(params, table)
        stats = e_step(params, cache, table)
        first, second = _oracle_stats(params, table)
        worst = max(worst, _rel_err(stats.first_moment, first),
                    _rel_err(stats.second_moment, second))
    passed = worst <= tol
    return SuiteResult("estep", passed,
                       f"{n_instances} instances, max rel err {worst:.3g}, seed {seed}")


def em_suite(seed=0, n_speakers=50, n_channels=20, per_speaker=20, dim=10,
             r_y=3, r_x=2, iters=40, slack=1e-9):
    """Monotone log-likelihood over a full training run."""
    table, _ = simulate_dataset(dim, n_speakers, n_channels, per_speaker,
                                "round-robin", seed=seed, r_y=r_y, r_x=r_x,
                                speaker_scale=1.2, channel_scale=0.9,
                                noise_var=0.7, mean_scale=0.5)
    trace = train(table, TrainConfig(r_y=r_y, r_x=r_x, max_iters=iters,
                                     rel_tol=1e-300, seed=seed))
    lls = np.array(trace.log_likelihoods)
    drops = np.diff(lls) + slack * np.abs(lls[:-1])
    passed = bool(np.all(drops >= 0.0))
    worst = float(np.min(np.diff(lls))) if lls.size > 1 else 0.0
    return SuiteResult("em", passed,
                       f"{lls.size} iterations, min delta {worst:.3g}, seed {seed}")


def _param_distance(a, b):
    return max(
        _rel_err(a.speaker_loading, b.speaker_loading),
        _rel_err(a.channel_loading, b.channel_loading),
        _rel_err(a.noise_precision, b.noise_precision),
    )


def _joint_em_sequence(params, table, iterations):
    sequence = []
    for _ in range(iterations):
        cache = build_precisions(params, table)
        v, u, d_prec = m_step(e_step(params, cache, table))
        params = ModelParams(v, u, d_prec, params.mean)
        sequence.append(params)
    return sequence


def degeneracy_suite(seed=0, em_iters=10, n_trials=100, em_tol=1e-8,
                     score_tol=1e-8):
    """Unique channel labels reduce everything to per-sample channel PLDA."""
    rng = np.random.default_rng(seed)
    d, r_y, r_x = 5, 2, 2
    n_speakers, per_speaker = 8, 4
    table, _ = simulate_dataset(d, n_speakers, 1, per_speaker, "unique",
                                seed=seed, r_y=r_y, r_x=r_x,
                                speaker_scale=1.0, channel_scale=0.8,
                                noise_var=0.9)
    params = ModelParams(rng.standard_normal((d, r_y)) * 0.7,
                         rng.standard_normal((d, r_x)) * 0.7,
                         rng.uniform(0.8, 1.4, d), np.zeros(d))

    worst_em = 0.0
    joint = _joint_em_sequence(params, table, em_iters)
    standard = params
    for step in range(em_iters):
        v, u, d_prec = standard_plda_reference(standard).em_step(table)
        standard = ModelParams(v, u, d_prec, standard.mean)
        worst_em = max(worst_em, _param_distance(joint[step], standard))

    boundary = HypothesisPriors(0.0, 1.0, 0.0, 1.0)
    score_params = ModelParams(rng.standard_normal((d, r_y)),
                               rng.standard_normal((d, r_x)),
                               rng.uniform(0.5, 2.0, d),
                               rng.standard_normal(d) * 0.2)
    reference = standard_plda_reference(score_params)
    worst_score = 0.0
    for _ in range(n_trials):
        m_e = rng.standard_normal(d) * 1.5
        m_t = rng.standard_normal(d) * 1.5
        joint_llr = score_trial(score_params, boundary, m_e, m_t).llr
        ref_llr = reference.llr([m_e], m_t)
        worst_score = max(worst_score,
                          abs(joint_llr - ref_llr) / max(abs(ref_llr), 1e-12))

    passed = worst_em <= em_tol and worst_score <= score_tol
    return SuiteResult(
        "degeneracy", passed,
        f"{em_iters} EM steps (max rel err {worst_em:.3g}), "
        f"{n_trials} trials (max rel err {worst_score:.3g}), seed {seed}")


def _random_scoring_params(rng, d=8, r_y=2, r_x=2):
    return ModelParams(rng.standard_normal((d, r_y)),
                       rng.standard_normal((d, r_x)),
                       rng.uniform(0.5, 2.0, d),
                       rng.standard_normal(d) * 0.3)


def _oracle_pair_llr(params, priors, m_enroll, m_test):
    """Four-density mixture ratio on the stacked pair."""
    pair = [m_enroll - params.mean, m_test - params.mean]

    def logdens(speaker_ties, channel_ties):
        return oracle_log_density(params, pair, speaker_ties, channel_ties)

    def logmix(p_same, p_diff, speaker_ties):
        terms = []
        if p_same > 0:
            terms.append(np.log(p_same) + logdens(speaker_ties, [0, 0]))
        if p_diff > 0:
            terms.append(np.log(p_diff) + logdens(speaker_ties, [0, 1]))
        return float(np.logaddexp.reduce(terms))

    return (logmix(priors.p_ss, priors.p_ds, [0, 0])
            - logmix(priors.p_sd, priors.p_dd, [0, 1]))


def _oracle_unseen_llr(params, enrollment, m_test):
    """Two-hypothesis tied-covariance density ratio, test channel new."""
    vectors = [np.asarray(v, dtype=np.float64) - params.mean for v, _ in enrollment]
    channels = [chan for _, chan in enrollment]
    stacked = vectors + [m_test - params.mean]
    channel_ties = channels + [object()]
    same = oracle_log_density(params, stacked, [0] * len(stacked), channel_ties)
    diff = oracle_log_density(params, stacked, [0] * len(vectors) + [1], channel_ties)
    return same - diff


def scoring_suite(seed=0, n_trials=100, tol=1e-8):
    """Both scorers agree with direct stacked-density ratios."""
    rng = np.random.default_rng(seed)
    params = _random_scoring_params(rng)
    d = params.dim
    worst_pair = 0.0
    for _ in range(n_trials):
        priors = HypothesisPriors.uniform() if rng.random() < 0.5 else \
            HypothesisPriors(0.3, 0.7, 0.6, 0.4)
        m_e = rng.standard_normal(d) * 2.0
        m_t = rng.standard_normal(d) * 2.0
        got = score_trial(params, priors, m_e, m_t).llr
        ref = _oracle_pair_llr(params, priors, m_e, m_t)
        worst_pair = max(worst_pair, abs(got - ref) / max(abs(ref), 1e-12))

    worst_unseen = 0.0
    for _ in range(n_trials):
        n_enroll = int(rng.integers(1, 5))
        n_channels = int(rng.integers(1, 3))
        channels = rng.integers(0, n_channels, n_enroll)
        enrollment = [(rng.standard_normal(d) * 2.0, int(c)) for c in channels]
        m_t = rng.standard_normal(d) * 2.0
        got = score_unseen_channel(params, enrollment, m_t).llr
        ref = _oracle_unseen_llr(params, enrollment, m_t)
        worst_unseen = max(worst_unseen, abs(got - ref) / max(abs(ref), 1e-12))

    passed = worst_pair <= tol and worst_unseen <= tol
    return SuiteResult(
        "scoring", passed,
        f"{n_trials} pair trials (max rel err {worst_pair:.3g}), "
        f"{n_trials} unseen-channel trials (max rel err {worst_unseen:.3g}), "
        f"seed {seed}")


def cross_suite(seed=0, n_trials=100, tol=1e-10):
    """Scorer cross-consistency, symmetry and zero-channel collapse."""
    rng = np.random.default_rng(seed)
    params = _random_scoring_params(rng)
    d = params.dim
    boundary = HypothesisPriors(0.0, 1.0, 0.0, 1.0)
    worst_cross = 0.0
    worst_sym = 0.0
    for _ in range(n_trials):
        m_e = rng.standard_normal(d) * 1.5
        m_t = rng.standard_normal(d) * 1.5
        unseen = score_unseen_channel(params, [(m_e, 0)], m_t).llr
        pair = score_trial(params, boundary, m_e, m_t)
        worst_cross = max(worst_cross, abs(unseen - pair.llr))
        flipped = score_trial(params, boundary, m_t, m_e)
        worst_sym = max(worst_sym, abs(pair.llr - flipped.llr))

    no_channel = ModelParams(params.speaker_loading,
                             np.zeros((d, params.r_x)),
                             params.noise_precision, params.mean)
    worst_collapse = 0.0
    for _ in range(10):
        m_e = rng.standard_normal(d)
        m_t = rng.standard_normal(d)
        score = score_trial(no_channel, HypothesisPriors.uniform(), m_e, m_t)
        worst_collapse = max(worst_collapse, abs(score.llr_channel))

    passed = worst_cross <= tol and worst_sym <= tol and worst_collapse == 0.0
    return SuiteResult(
        "cross", passed,
        f"{n_trials} trials, cross err {worst_cross:.3g}, "
        f"symmetry err {worst_sym:.3g}, zero-channel inner term "
        f"{worst_collapse:.3g}, seed {seed}")


SUITES = {
    "posterior": posterior_suite,
    "likelihood": likelihood_suite,
    "estep": estep_suite,
    "em": em_suite,
    "degeneracy": degeneracy_suite,
    "scoring": scoring_suite,
    "cross": cross_suite,
}


def run_suites(names=None, seed=0):
    names = list(SUITES) if names is None else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; available: {list(SUITES)}")
    return [SUITES[name](seed=seed) for name in names]
