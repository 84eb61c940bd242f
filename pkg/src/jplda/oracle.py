"""Brute-force reference implementations used for verification.

Everything here is assembled directly from the generative model — a dense
design matrix over all latent variables, or a dense marginal covariance over
all stacked samples — and solved with one factorization. None of it reuses
the structured code paths in :mod:`posterior`, :mod:`em` or :mod:`scoring`;
that independence is the point. Sizes are hard-capped: these are test
references, not production solvers.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataset import EmbeddingTable
from .exceptions import CapacityError

POSTERIOR_LATENT_LIMIT = 256
DENSITY_STACK_LIMIT = 512


@dataclass(frozen=True)
class StackedSystem:
    """Dense linear-Gaussian view of a labeled dataset.

    ``design`` maps the stacked latent vector [all speaker factors; all
    channel factors] to the stacked sample means: block row i carries the
    speaker loading in speaker column s_i and the channel loading in channel
    column c_i. ``noise_precision`` is the per-coordinate noise precision of
    the stacked observation.
    """

    design: np.ndarray
    noise_precision: np.ndarray
    r_y: int
    r_x: int
    n_speakers: int
    n_channels: int

    @classmethod
    def from_table(cls, params, table):
        n, d = table.n_samples, table.dim
        r_y, r_x = params.r_y, params.r_x
        n_latent = table.n_speakers * r_y + table.n_channels * r_x
        design = np.zeros((n * d, n_latent))
        x_base = table.n_speakers * r_y
        for i in range(n):
            rows = slice(i * d, (i + 1) * d)
            s = table.speaker_labels[i]
            c = table.channel_labels[i]
            design[rows, s * r_y:(s + 1) * r_y] = params.speaker_loading
            design[rows, x_base + c * r_x:x_base + (c + 1) * r_x] = params.channel_loading
        noise = np.tile(params.noise_precision, n)
        return cls(design, noise, r_y, r_x, table.n_speakers, table.n_channels)


@dataclass(frozen=True)
class OracleLatentPosterior:
    """Exact joint posterior over all speaker and channel factors."""

    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray
    r_y: int
    r_x: int
    n_speakers: int
    n_channels: int

    def _y_slice(self, s):
        return slice(s * self.r_y, (s + 1) * self.r_y)

    def _x_slice(self, c):
        base = self.n_speakers * self.r_y
        return slice(base + c * self.r_x, base + (c + 1) * self.r_x)

    def speaker_mean(self, s):
        return self.mean[self._y_slice(s)]

    def channel_mean(self, c):
        return self.mean[self._x_slice(c)]

    def channel_cov(self, c, c2=None):
        c2 = c if c2 is None else c2
        return self.cov[self._x_slice(c), self._x_slice(c2)]

    def speaker_cov(self, s, s2=None):
        s2 = s if s2 is None else s2
        return self.cov[self._y_slice(s), self._y_slice(s2)]

    def cross_cov(self, s, c):
        """Covariance between speaker factor s and channel factor c."""
        return self.cov[self._y_slice(s), self._x_slice(c)]

    def speaker_conditional_cov(self, s):
        """Covariance of speaker factor s given every other latent variable."""
        block = self.precision[self._y_slice(s), self._y_slice(s)]
        return np.linalg.inv(block)

    def channel_stack_mean(self):
        return self.mean[self.n_speakers * self.r_y:]

    def channel_stack_cov(self):
        base = self.n_speakers * self.r_y
        return self.cov[base:, base:]


def oracle_posterior(params, table, limit=POSTERIOR_LATENT_LIMIT):
    """Posterior over all latent factors by one dense conditioning.

    With a standard-normal prior the posterior precision is
    I + design^T diag(noise) design and the mean solves it against
    design^T diag(noise) m.
    """
    system = StackedSystem.from_table(params, table)
    n_latent = system.design.shape[1]
    if n_latent > limit:
        raise CapacityError(
            f"stacked latent dimension {n_latent} exceeds oracle limit {limit}")
    weighted = system.design.T * system.noise_precision
    precision = np.eye(n_latent) + weighted @ system.design
    precision = 0.5 * (precision + precision.T)
    rhs = weighted @ table.samples.reshape(-1)
    factor = cho_factor(precision, lower=True)
    mean = cho_solve(factor, rhs)
    cov = cho_solve(factor, np.eye(n_latent))
    cov = 0.5 * (cov + cov.T)
    return OracleLatentPosterior(mean, cov, precision, system.r_y, system.r_x,
                                 system.n_speakers, system.n_channels)


def _as_partition(labels, n):
    labels = list(labels)
    if len(labels) != n:
        raise ValueError(f"partition has {len(labels)} entries for {n} samples")
    return labels


def oracle_log_density(params, samples, speaker_ties, channel_ties,
                       limit=DENSITY_STACK_LIMIT):
    """Log density of stacked samples under given tie partitions.

    ``speaker_ties`` and ``channel_ties`` assign an arbitrary hashable label
    to each sample; two samples share a latent factor exactly when their
    labels match. The stacked covariance gets a speaker-subspace block
    wherever speakers are tied, a channel-subspace block wherever channels
    are tied, and the noise covariance on the diagonal. Samples are used
    as given (the model is zero-mean; center beforehand if needed).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, d = samples.shape
    if n * d > limit:
        raise CapacityError(
            f"stacked dimension {n * d} exceeds oracle limit {limit}")
    speaker_ties = _as_partition(speaker_ties, n)
    channel_ties = _as_partition(channel_ties, n)

    vvt = params.speaker_loading @ params.speaker_loading.T
    uut = params.channel_loading @ params.channel_loading.T
    noise_cov = np.diag(1.0 / params.noise_precision)
    cov = np.zeros((n * d, n * d))
    for i in range(n):
        for jj in range(n):
            block = np.zeros((d, d))
            if speaker_ties[i] == speaker_ties[jj]:
                block = block + vvt
            if channel_ties[i] == channel_ties[jj]:
                block = block + uut
            if i == jj:
                block = block + noise_cov
            cov[i * d:(i + 1) * d, jj * d:(jj + 1) * d] = block

    factor = cho_factor(0.5 * (cov + cov.T), lower=True)
    logdet = 2.0 * np.sum(np.log(np.diagonal(factor[0])))
    stacked = samples.reshape(-1)
    quad = float(stacked @ cho_solve(factor, stacked))
    return -0.5 * (n * d * math.log(2.0 * math.pi) + logdet + quad)


class StandardPldaReference:
    """Reference behavior of the per-sample-channel special case.

    Scoring assumes channel factors independent across samples, so the
    denominator of the likelihood ratio factorizes over trial sides. The EM
    step computes per-speaker posteriors by dense conditioning, which is
    exact because speakers decouple once no channel is shared.
    """

    def __init__(self, params):
        self.params = params

    # -- scoring ---------------------------------------------------------

    def llr(self, enroll_vectors, test_vector):
        """Independence-assuming log likelihood ratio.

        log p(E, T | same speaker) - log p(E) - log p(T), every sample with
        its own channel factor. Inputs are centered by the model mean.
        """
        enroll = [np.asarray(m, dtype=np.float64) - self.params.mean
                  for m in np.atleast_2d(enroll_vectors)]
        test = np.asarray(test_vector, dtype=np.float64) - self.params.mean
        stack = enroll + [test]
        channels = list(range(len(stack)))
        joint = oracle_log_density(self.params, stack, [0] * len(stack), channels)
        p_enroll = oracle_log_density(self.params, enroll, [0] * len(enroll),
                                      channels[:len(enroll)])
        p_test = oracle_log_density(self.params, [test], [0], [0])
        return joint - p_enroll - p_test

    # -- posteriors and EM -----------------------------------------------

    def _speaker_posterior(self, vectors):
        """Dense posterior over [y; x_1 .. x_n] for one speaker's samples."""
        params = self.params
        n, d = vectors.shape
        r_y, r_x = params.r_y, params.r_x
        k = r_y + n * r_x
        design = np.zeros((n * d, k))
        for i in range(n):
            rows = slice(i * d, (i + 1) * d)
            design[rows, :r_y] = params.speaker_loading
            design[rows, r_y + i * r_x:r_y + (i + 1) * r_x] = params.channel_loading
        weighted = design.T * np.tile(params.noise_precision, n)
        precision = np.eye(k) + weighted @ design
        factor = cho_factor(0.5 * (precision + precision.T), lower=True)
        mean = cho_solve(factor, weighted @ vectors.reshape(-1))
        cov = cho_solve(factor, np.eye(k))
        return mean, 0.5 * (cov + cov.T)

    def channel_posteriors(self, table):
        """Per-sample channel-factor posterior means and covariances."""
        r_y, r_x = self.params.r_y, self.params.r_x
        means = np.zeros((table.n_samples, r_x))
        covs = np.zeros((table.n_samples, r_x, r_x))
        for s in range(table.n_speakers):
            idx = np.flatnonzero(table.speaker_labels == s)
            mean, cov = self._speaker_posterior(table.samples[idx])
            for k, i in enumerate(idx):
                sl = slice(r_y + k * r_x, r_y + (k + 1) * r_x)
                means[i] = mean[sl]
                covs[i] = cov[sl, sl]
        return means, covs

    def em_step(self, table):
        """One EM update with per-sample channel factors.

        Returns (speaker_loading, channel_loading, noise_precision); the
        model mean is not re-estimated.
        """
        params = self.params
        d = table.dim
        r_y, r_x = params.r_y, params.r_x
        rk = r_x + r_y
        scatter = table.samples.T @ table.samples
        first = np.zeros((rk, d))
        second = np.zeros((rk, rk))
        for s in range(table.n_speakers):
            idx = np.flatnonzero(table.speaker_labels == s)
            vectors = table.samples[idx]
            mean, cov = self._speaker_posterior(vectors)
            y_mean = mean[:r_y]
            y_cov = cov[:r_y, :r_y]
            for k, m in enumerate(vectors):
                sl = slice(r_y + k * r_x, r_y + (k + 1) * r_x)
                x_mean = mean[sl]
                z_mean = np.concatenate([x_mean, y_mean])
                first += np.outer(z_mean, m)
                second[:r_x, :r_x] += cov[sl, sl] + np.outer(x_mean, x_mean)
                cross = cov[r_y:, :r_y][k * r_x:(k + 1) * r_x] + np.outer(x_mean, y_mean)
                second[:r_x, r_x:] += cross
                second[r_x:, :r_x] += cross.T
                second[r_x:, r_x:] += y_cov + np.outer(y_mean, y_mean)
        loadings_t = np.linalg.solve(0.5 * (second + second.T), first)
        loadings = loadings_t.T
        resid_diag = (np.diag(scatter) - np.einsum("dk,kd->d", loadings, first))
        resid_diag /= table.n_samples
        return (loadings[:, r_x:], loadings[:, :r_x], 1.0 / resid_diag)


def standard_plda_reference(params):
    """Reference scorer / EM stepper with per-sample channel factors."""
    return StandardPldaReference(params)
