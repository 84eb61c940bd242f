"""Exact posterior inference over the tied latent factors.

The posterior factorizes into an *outer* part — per-speaker Gaussians over
the speaker factors conditioned on all channel factors — and an *inner*
part, the marginal posterior over all channel factors jointly. The inner
posterior does not factorize across channels: any speaker whose samples span
two channels couples them, so all channel factors are solved for at once
through one dense symmetric positive definite system.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import _freeze
from .exceptions import CapacityError
from .linalg import chol_logdet, chol_solve, chol_solve_stack

DENSE_SOLVE_LIMIT = 20000


@dataclass(frozen=True)
class BlockOccupancy:
    """Speaker-by-channel occupancy in block form.

    Represents the (S*r_x) x (C*r_x) matrix whose (s, c) block is
    ``counts[s, c]`` times the identity; only the integer counts are stored.
    """

    counts: np.ndarray
    r_x: int

    def to_dense(self):
        return np.kron(self.counts.astype(np.float64), np.eye(self.r_x))


def build_occupancy(table, r_x):
    """Occupancy matrix coupling speakers to channels, block-sparse form."""
    if r_x < 1:
        raise ValueError("r_x must be at least 1")
    return BlockOccupancy(counts=table.n_sc, r_x=int(r_x))


@dataclass(frozen=True)
class InnerPosterior:
    """Joint posterior over all channel factors.

    ``means[c]`` is the posterior mean of channel factor c; ``cov`` is the
    full (C*r_x) x (C*r_x) covariance, kept dense because training needs its
    cross-channel blocks. ``info`` holds the information vector (precision
    times mean) per channel block and ``blind_mean_sums[c]`` the sum of
    channel-ignorant speaker means over the samples of channel c.
    """

    means: np.ndarray
    cov: np.ndarray
    info: np.ndarray
    blind_mean_sums: np.ndarray
    occupancy: BlockOccupancy
    cov_logdet: float

    @property
    def r_x(self):
        return self.means.shape[1]

    @property
    def n_channels(self):
        return self.means.shape[0]

    def cov_block(self, c, c2=None):
        c2 = c if c2 is None else c2
        r = self.r_x
        return self.cov[c * r:(c + 1) * r, c2 * r:(c2 + 1) * r]

    def mean_quad(self):
        """Mean-precision quadratic form, mean^T precision mean."""
        return float(np.vdot(self.info, self.means))


@dataclass(frozen=True)
class OuterPosterior:
    """Per-speaker posterior of the speaker factors.

    ``blind_means`` are the channel-ignorant means (channel factors assumed
    zero); ``means`` subtract the coupled contribution of the expected
    channel-factor sums ``channel_sums``. ``covs[s]`` is the conditional
    covariance given the channel factors, constant in them.
    """

    means: np.ndarray
    blind_means: np.ndarray
    channel_sums: np.ndarray
    covs: np.ndarray


def blind_speaker_means(cache, table):
    """Channel-ignorant speaker means: solve (n_s G + I) y = proj f_s per speaker."""
    rhs = table.f_s @ cache.speaker_proj.T
    return chol_solve_stack(cache.speaker_chol, rhs)


def inner_posterior(params, cache, table, dense_limit=DENSE_SOLVE_LIMIT):
    """Solve the coupled posterior over all channel factors.

    The posterior precision is block-diagonal in the per-channel precisions
    minus an occupancy-weighted coupling term through the shared speakers;
    it is materialized densely, factorized once, and inverted because the
    covariance blocks are needed downstream.
    """
    r_x = params.r_x
    n_channels = table.n_channels
    size = n_channels * r_x
    if size > dense_limit:
        raise CapacityError(
            f"inner posterior size {size} exceeds dense solve limit {dense_limit}")

    occupancy = build_occupancy(table, r_x)
    counts = occupancy.counts.astype(np.float64)

    y_blind = blind_speaker_means(cache, table)
    blind_mean_sums = counts.T @ y_blind
    info = table.g_c @ cache.channel_proj.T - blind_mean_sums @ cache.coupling.T

    # Coupling blocks: sum_s n_sc n_sc' J L_s^{-1} J^T.
    speaker_coupling = cache.coupling @ cache.speaker_inv @ cache.coupling.T
    precision = np.einsum("sc,sd,sab->cadb", counts, counts, speaker_coupling,
                          optimize=True)
    precision = -precision.reshape(size, size)
    for c in range(n_channels):
        block = slice(c * r_x, (c + 1) * r_x)
        precision[block, block] += cache.channel_precisions[c]
    precision = 0.5 * (precision + precision.T)

    chol, prec_logdet = chol_logdet(precision, "inner posterior precision")
    means = chol_solve(chol, info.reshape(-1)).reshape(n_channels, r_x)
    cov = chol_solve(chol, np.eye(size))
    cov = 0.5 * (cov + cov.T)

    return InnerPosterior(
        means=_freeze(means),
        cov=_freeze(cov),
        info=_freeze(info),
        blind_mean_sums=_freeze(blind_mean_sums),
        occupancy=occupancy,
        cov_logdet=-prec_logdet,
    )


def marginal_channel(inner, c):
    """Posterior mean and covariance of one channel factor."""
    if not 0 <= c < inner.n_channels:
        raise ValueError(f"channel id {c} out of range [0, {inner.n_channels})")
    return inner.means[c].copy(), inner.cov_block(c).copy()


def outer_posterior(cache, table, inner):
    """Per-speaker posterior means given the inner posterior.

    The returned means are the marginal posterior expectations of the
    speaker factors: the blind means corrected by the coupled expectation
    of each speaker's summed channel factors.
    """
    y_blind = blind_speaker_means(cache, table)
    channel_sums = table.n_sc.astype(np.float64) @ inner.means
    correction = chol_solve_stack(cache.speaker_chol,
                                  channel_sums @ cache.coupling)
    return OuterPosterior(
        means=_freeze(y_blind - correction),
        blind_means=_freeze(y_blind),
        channel_sums=_freeze(channel_sums),
        covs=cache.speaker_inv,
    )
