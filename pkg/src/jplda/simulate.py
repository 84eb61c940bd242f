"""Synthetic data generation from a known model.

Draws a model with configurable subspace strengths, samples latent factors
and noise from the generative process, and emits a labeled table together
with the generating parameters. Channel assignment policies:

- ``round-robin``: channels cycle across the global sample order, so every
  channel is shared by many speakers (exercises the tied inference paths);
- ``random``: each sample draws a channel uniformly;
- ``unique``: every sample gets its own channel (the degenerate
  configuration equivalent to per-sample channel factors).
"""

import numpy as np

from .dataset import EmbeddingTable
from .model import ModelParams

CHANNEL_POLICIES = ("round-robin", "random", "unique")


def make_params(dim, r_y, r_x, seed, speaker_scale=1.0, channel_scale=1.0,
                noise_var=1.0, mean_scale=0.0):
    """Draw generating parameters with the requested subspace strengths.

    Loading columns are scaled so the marginal variance contributed by each
    subspace is about ``scale**2`` per dimension; zero scales give exactly
    zero loadings. Noise variance is perturbed per dimension to avoid an
    exactly isotropic model unless ``noise_var`` spread is unwanted.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((dim, r_y)) * (speaker_scale / np.sqrt(r_y))
    u = rng.standard_normal((dim, r_x)) * (channel_scale / np.sqrt(r_x))
    variances = noise_var * rng.uniform(0.8, 1.25, dim)
    mu = mean_scale * rng.standard_normal(dim)
    return ModelParams(v, u, 1.0 / variances, mu)


def assign_channels(n_samples, n_channels, policy, rng):
    if policy == "round-robin":
        return np.arange(n_samples, dtype=np.int64) % n_channels
    if policy == "random":
        labels = rng.integers(0, n_channels, n_samples)
        # remap in case some channel was never drawn
        _, labels = np.unique(labels, return_inverse=True)
        return labels.astype(np.int64)
    if policy == "unique":
        return np.arange(n_samples, dtype=np.int64)
    raise ValueError(f"unknown channel policy '{policy}', "
                     f"expected one of {CHANNEL_POLICIES}")


def simulate_dataset(dim, n_speakers, n_channels, per_speaker, policy, seed,
                     r_y=None, r_x=None, speaker_scale=1.0, channel_scale=1.0,
                     noise_var=1.0, mean_scale=0.0, params=None):
    """Sample a labeled dataset; returns (table, generating params).

    Sampling is deterministic in ``seed``. Pass ``params`` to reuse an
    existing model (e.g. to draw a held-out set); otherwise one is drawn
    from the same seed stream with ranks ``r_y``/``r_x`` (defaulting to
    d/2 and d/4). ``n_channels`` is ignored by the ``unique`` policy.
    """
    if min(dim, n_speakers, n_channels, per_speaker) < 1:
        raise ValueError("all sizes must be at least 1")
    if params is None:
        r_y = min(dim, max(1, dim // 2)) if r_y is None else r_y
        r_x = min(dim, max(1, dim // 4)) if r_x is None else r_x
        params = make_params(dim, r_y=r_y, r_x=r_x, seed=seed,
                             speaker_scale=speaker_scale,
                             channel_scale=channel_scale,
                             noise_var=noise_var, mean_scale=mean_scale)
    if params.dim != dim:
        raise ValueError("params dimension does not match requested dim")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5eed]))
    n = n_speakers * per_speaker
    speakers = np.repeat(np.arange(n_speakers, dtype=np.int64), per_speaker)
    channels = assign_channels(n, n_channels, policy, rng)
    n_channels_actual = int(channels.max()) + 1

    y = rng.standard_normal((n_speakers, params.r_y))
    x = rng.standard_normal((n_channels_actual, params.r_x))
    noise = rng.standard_normal((n, dim)) / np.sqrt(params.noise_precision)
    samples = (params.mean
               + y[speakers] @ params.speaker_loading.T
               + x[channels] @ params.channel_loading.T
               + noise)

    sample_ids = tuple(f"utt{i:06d}" for i in range(n))
    speaker_names = tuple(f"spk{s:04d}" for s in range(n_speakers))
    channel_names = tuple(f"chan{c:04d}" for c in range(n_channels_actual))
    table = EmbeddingTable.from_arrays(samples, speakers, channels,
                                       sample_ids=sample_ids,
                                       speaker_names=speaker_names,
                                       channel_names=channel_names)
    return table, params
