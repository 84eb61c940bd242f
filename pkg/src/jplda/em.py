"""Expectation-maximization training with an exact E-step.

Each iteration solves the full inner posterior once, accumulates the joint
first and second posterior moments of the stacked latent vector
[channel factor; speaker factor] per sample, and re-estimates the loading
matrices and the diagonal noise precision in closed form. The objective is
the exact log marginal likelihood of the data (constant included), so it can
be compared against the brute-force density oracle and must never decrease.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import _freeze, center
from .exceptions import NumericalError
from .linalg import chol_logdet, chol_solve, chol_solve_stack
from .model import ModelParams, build_precisions
from .posterior import DENSE_SOLVE_LIMIT, blind_speaker_means, inner_posterior

ZERO_VARIANCE_PRECISION = 1e8


@dataclass(frozen=True)
class TrainConfig:
    r_y: int
    r_x: int
    max_iters: int = 200
    rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.r_y < 1 or self.r_x < 1:
            raise ValueError("subspace ranks must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class SufficientStats:
    """Accumulated posterior moments for one EM iteration.

    ``first_moment`` stacks the channel block on top of the speaker block
    (matching the [x; y] latent order); ``second_moment`` is the matching
    (r_x + r_y) square block matrix.
    """

    scatter: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    n_samples: int
    r_x: int
    r_y: int


@dataclass(frozen=True)
class TrainTrace:
    log_likelihoods: tuple
    params: ModelParams
    iterations: int
    stop_reason: str


def init_params(table, config):
    """Seeded initialization from data moments.

    The mean is the sample mean; both loadings are standard-normal draws
    scaled by the overall standard deviation of the centered data divided by
    the square root of their rank; the noise precision starts at the inverse
    per-dimension variance. Zero-variance dimensions are clamped to a large
    finite precision and reported through a warning.
    """
    d = table.dim
    if config.r_y > d or config.r_x > d:
        raise ValueError(
            f"subspace ranks ({config.r_y}, {config.r_x}) exceed dimension {d}")
    mu = table.samples.mean(axis=0)
    centered = table.samples - mu
    total_std = float(centered.std())
    per_dim_var = centered.var(axis=0)

    zero_var = per_dim_var <= 0.0
    precision = np.empty(d)
    precision[~zero_var] = 1.0 / per_dim_var[~zero_var]
    if np.any(zero_var):
        precision[zero_var] = ZERO_VARIANCE_PRECISION
        warnings.warn(
            f"zero-variance dimensions {np.flatnonzero(zero_var).tolist()} "
            f"clamped to precision {ZERO_VARIANCE_PRECISION:g}")

    rng = np.random.default_rng(config.seed)
    v = rng.standard_normal((d, config.r_y)) * (total_std / math.sqrt(config.r_y))
    u = rng.standard_normal((d, config.r_x)) * (total_std / math.sqrt(config.r_x))
    return ModelParams(v, u, precision, mu)


def log_marginal_likelihood(params, cache, table, inner):
    """Exact log density of the table under the model.

    Evaluated through the zero-point identity: data term plus the inner
    normalizer minus the blind outer normalizers, with the full Gaussian
    constant reinstated so the value equals the true log density.
    """
    n, d = table.n_samples, table.dim
    d_prec = params.noise_precision

    data_quad = float(np.einsum("nd,d,nd->", table.samples, d_prec, table.samples))
    data_term = 0.5 * n * float(np.sum(np.log(d_prec))) - 0.5 * data_quad

    proj = table.f_s @ cache.speaker_proj.T
    blind = chol_solve_stack(cache.speaker_chol, proj)
    outer_term = -0.5 * float(np.sum(cache.speaker_logdet)) \
        + 0.5 * float(np.einsum("sk,sk->", proj, blind))

    inner_term = 0.5 * inner.cov_logdet + 0.5 * inner.mean_quad()
    constant = -0.5 * n * d * math.log(2.0 * math.pi)
    return constant + data_term + outer_term + inner_term


def e_step(params, cache, table, inner=None):
    """Accumulate the sufficient statistics of one EM iteration.

    The expensive part is the speaker-block second moment: each speaker's
    summed channel factor mixes posterior cross-channel covariance blocks,
    gathered here with occupancy-weighted contractions over the full inner
    covariance.
    """
    if inner is None:
        inner = inner_posterior(params, cache, table)
    d = table.dim
    r_x, r_y = params.r_x, params.r_y
    counts = table.n_sc.astype(np.float64)
    n_c = table.n_c.astype(np.float64)

    x_hat = inner.means
    y_blind = blind_speaker_means(cache, table)
    channel_sums = counts @ x_hat                      # per speaker: sum of x-means
    y_hat = y_blind - chol_solve_stack(cache.speaker_chol,
                                       channel_sums @ cache.coupling)

    first_x = x_hat.T @ table.g_c
    first_y = y_hat.T @ table.f_s
    first = np.concatenate([first_x, first_y], axis=0)

    sig4 = inner.cov.reshape(table.n_channels, r_x, table.n_channels, r_x)
    second_xx = np.einsum("c,cacb->ab", n_c, sig4) + x_hat.T @ (n_c[:, None] * x_hat)

    # Covariance of each speaker's summed channel factor: occupancy-weighted
    # contraction over the cross-channel covariance blocks.
    sum_covs = np.einsum("sc,sd,cadb->sab", counts, counts, sig4, optimize=True)

    inv_coupled = cache.speaker_inv @ cache.coupling.T     # (S, r_y, r_x)
    second_yx = np.einsum("sa,sb->ab", y_hat, channel_sums) \
        - np.einsum("sac,scb->ab", inv_coupled, sum_covs)
    second_yy = np.einsum(
        "s,sab->ab", table.n_s.astype(np.float64),
        cache.speaker_inv
        + y_hat[:, :, None] * y_hat[:, None, :]
        + inv_coupled @ sum_covs @ np.swapaxes(inv_coupled, -2, -1))

    second = np.zeros((r_x + r_y, r_x + r_y))
    second[:r_x, :r_x] = 0.5 * (second_xx + second_xx.T)
    second[r_x:, :r_x] = second_yx
    second[:r_x, r_x:] = second_yx.T
    second[r_x:, r_x:] = 0.5 * (second_yy + second_yy.T)

    scatter = table.samples.T @ table.samples
    return SufficientStats(
        scatter=_freeze(0.5 * (scatter + scatter.T)),
        first_moment=_freeze(first),
        second_moment=_freeze(second),
        n_samples=table.n_samples,
        r_x=r_x,
        r_y=r_y,
    )


def m_step(stats):
    """Closed-form parameter update from the sufficient statistics.

    Returns (speaker_loading, channel_loading, noise_precision). The noise
    update keeps only the diagonal of the residual scatter, matching the
    diagonal noise model.
    """
    chol, _ = chol_logdet(stats.second_moment, "second-moment statistic")
    loadings_t = chol_solve(chol, stats.first_moment)
    loadings = loadings_t.T

    resid_diag = np.diag(stats.scatter) - np.einsum(
        "dk,kd->d", loadings, stats.first_moment)
    resid_diag /= stats.n_samples
    if np.any(resid_diag <= 0) or not np.all(np.isfinite(resid_diag)):
        bad = np.flatnonzero(~(resid_diag > 0)).tolist()
        raise NumericalError(
            f"noise update produced non-positive variance in dimensions {bad}")
    return loadings[:, stats.r_x:], loadings[:, :stats.r_x], 1.0 / resid_diag


def train(table, config, dense_limit=DENSE_SOLVE_LIMIT):
    """Run EM until convergence or the iteration cap.

    The log likelihood is recorded before each M-step; training stops when
    the relative improvement falls below ``rel_tol`` (returning the
    parameters that produced the last recorded value) or after
    ``max_iters`` expectation/maximization cycles.
    """
    params = init_params(table, config)
    centered = center(table, params.mean)

    log_likelihoods = []
    stop_reason = "max_iters"
    for iteration in range(1, config.max_iters + 1):
        try:
            cache = build_precisions(params, centered)
            inner = inner_posterior(params, cache, centered, dense_limit)
            ll = log_marginal_likelihood(params, cache, centered, inner)
            log_likelihoods.append(ll)
            if len(log_likelihoods) > 1:
                prev = log_likelihoods[-2]
                if ll - prev < config.rel_tol * abs(prev):
                    stop_reason = "converged"
                    break
            stats = e_step(params, cache, centered, inner)
            v, u, d_prec = m_step(stats)
        except NumericalError as exc:
            raise NumericalError(f"iteration {iteration}: {exc}") from exc
        params = ModelParams(v, u, d_prec, params.mean)

    return TrainTrace(
        log_likelihoods=tuple(log_likelihoods),
        params=params,
        iterations=len(log_likelihoods),
        stop_reason=stop_reason,
    )
