"""Model parameters and the derived per-dataset precision matrices.

The generative model for a sample with speaker s and channel c is

    m = mean + speaker_loading @ y_s + channel_loading @ x_c + noise,

with y_s and x_c standard-normal latent vectors tied across all samples
sharing the label, and diagonal-precision Gaussian noise. Both latent
factors are shared: two samples are coupled whenever they share a speaker
or a channel label.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import _freeze
from .linalg import chol_logdet_stack, inv_stack


@dataclass(frozen=True)
class ModelParams:
    """Loading matrices, diagonal noise precision and global mean.

    speaker_loading is (d, r_y), channel_loading is (d, r_x); the noise
    precision is stored as a strictly positive length-d vector.
    """

    speaker_loading: np.ndarray
    channel_loading: np.ndarray
    noise_precision: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.speaker_loading, dtype=np.float64)
        u = np.ascontiguousarray(self.channel_loading, dtype=np.float64)
        d_prec = np.ascontiguousarray(self.noise_precision, dtype=np.float64)
        mu = np.ascontiguousarray(self.mean, dtype=np.float64)
        if v.ndim != 2 or u.ndim != 2:
            raise ValueError("loading matrices must be 2-D")
        dim = v.shape[0]
        if u.shape[0] != dim or d_prec.shape != (dim,) or mu.shape != (dim,):
            raise ValueError("parameter dimensions are inconsistent")
        if not (1 <= v.shape[1] <= dim):
            raise ValueError(f"speaker rank {v.shape[1]} outside [1, {dim}]")
        if not (1 <= u.shape[1] <= dim):
            raise ValueError(f"channel rank {u.shape[1]} outside [1, {dim}]")
        if not np.all(d_prec > 0) or not np.all(np.isfinite(d_prec)):
            raise ValueError("noise precision entries must be positive and finite")
        for name, arr in (("speaker_loading", v), ("channel_loading", u),
                          ("noise_precision", d_prec), ("mean", mu)):
            object.__setattr__(self, name, _freeze(arr))

    @property
    def dim(self):
        return self.speaker_loading.shape[0]

    @property
    def r_y(self):
        return self.speaker_loading.shape[1]

    @property
    def r_x(self):
        return self.channel_loading.shape[1]


@dataclass(frozen=True)
class HypothesisPriors:
    """Channel-tie priors conditioned on the speaker hypothesis.

    p_ss / p_ds are P(same channel | same speaker) and its complement;
    p_sd / p_dd condition on different speakers. Each pair sums to one.
    """

    p_ss: float
    p_ds: float
    p_sd: float
    p_dd: float

    def __post_init__(self):
        vals = (self.p_ss, self.p_ds, self.p_sd, self.p_dd)
        if any(p < 0 or p > 1 for p in vals):
            raise ValueError(f"priors must lie in [0, 1], got {vals}")
        if abs(self.p_ss + self.p_ds - 1.0) > 1e-9:
            raise ValueError("same-speaker channel priors must sum to 1")
        if abs(self.p_sd + self.p_dd - 1.0) > 1e-9:
            raise ValueError("different-speaker channel priors must sum to 1")

    @classmethod
    def uniform(cls):
        return cls(0.5, 0.5, 0.5, 0.5)


@dataclass(frozen=True)
class PrecisionCache:
    """Dataset-dependent matrices shared by the posterior, trainer and scorer.

    For counts n_c and n_s taken from one table:

    - ``coupling`` ties the two subspaces: channel_loading^T D speaker_loading.
    - ``channel_precisions[c]`` = n_c * channel_gram + I, the posterior
      precision of channel factor c given the speaker factors.
    - ``speaker_precisions[s]`` = n_s * speaker_gram + I, likewise per speaker.

    Cholesky factors, log-determinants and (for speakers) explicit inverses
    are precomputed; all entries are symmetric positive definite whenever the
    noise precision is positive.
    """

    speaker_proj: np.ndarray    # (r_y, d) = speaker_loading^T D
    channel_proj: np.ndarray    # (r_x, d) = channel_loading^T D
    speaker_gram: np.ndarray    # (r_y, r_y)
    channel_gram: np.ndarray    # (r_x, r_x)
    coupling: np.ndarray        # (r_x, r_y)
    channel_precisions: np.ndarray  # (C, r_x, r_x)
    channel_chol: np.ndarray
    channel_logdet: np.ndarray
    speaker_precisions: np.ndarray  # (S, r_y, r_y)
    speaker_chol: np.ndarray
    speaker_logdet: np.ndarray
    speaker_inv: np.ndarray

    @property
    def r_y(self):
        return self.speaker_gram.shape[0]

    @property
    def r_x(self):
        return self.channel_gram.shape[0]


def build_precisions(params, table):
    """Derive the :class:`PrecisionCache` for ``params`` on ``table``."""
    if params.dim != table.dim:
        raise ValueError(
            f"model dimension {params.dim} does not match table dimension {table.dim}")
    v, u, d_prec = params.speaker_loading, params.channel_loading, params.noise_precision

    speaker_proj = v.T * d_prec
    channel_proj = u.T * d_prec
    speaker_gram = speaker_proj @ v
    channel_gram = channel_proj @ u
    speaker_gram = 0.5 * (speaker_gram + speaker_gram.T)
    channel_gram = 0.5 * (channel_gram + channel_gram.T)
    coupling = channel_proj @ v

    eye_x = np.eye(params.r_x)
    eye_y = np.eye(params.r_y)
    channel_precisions = table.n_c[:, None, None] * channel_gram + eye_x
    speaker_precisions = table.n_s[:, None, None] * speaker_gram + eye_y
    channel_chol, channel_logdet = chol_logdet_stack(
        channel_precisions, "per-channel posterior precision")
    speaker_chol, speaker_logdet = chol_logdet_stack(
        speaker_precisions, "per-speaker posterior precision")
    speaker_inv = inv_stack(speaker_precisions, "per-speaker posterior precision")

    return PrecisionCache(
        speaker_proj=_freeze(speaker_proj),
        channel_proj=_freeze(channel_proj),
        speaker_gram=_freeze(speaker_gram),
        channel_gram=_freeze(channel_gram),
        coupling=_freeze(coupling),
        channel_precisions=_freeze(channel_precisions),
        channel_chol=_freeze(channel_chol),
        channel_logdet=_freeze(channel_logdet),
        speaker_precisions=_freeze(speaker_precisions),
        speaker_chol=_freeze(speaker_chol),
        speaker_logdet=_freeze(speaker_logdet),
        speaker_inv=_freeze(speaker_inv),
    )
