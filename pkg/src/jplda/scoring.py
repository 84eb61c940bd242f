"""Verification trial scoring.

Two scorers are provided. The single-enrollment/single-test scorer
marginalizes over four hypotheses (speaker tie crossed with channel tie)
using configurable channel-tie priors, and splits the log likelihood ratio
into a speaker (outer) term plus a channel (inner) term. The unseen-channel
scorer handles several enrollment samples over known channels against one
test sample whose channel is assumed new; there the channel hypothesis is
fixed and the inner term is a difference of two quadratic normalizers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataFormatError
from .linalg import chol_logdet, chol_solve


def _log_prior(p):
    return math.log(p) if p > 0.0 else -math.inf


@dataclass(frozen=True)
class TrialScore:
    """Log likelihood ratio split into speaker and channel evidence.

    ``llr == llr_speaker + llr_channel`` by construction; ``quad_terms``
    carries the per-hypothesis normalizer values for diagnostics.
    """

    llr: float
    llr_speaker: float
    llr_channel: float
    quad_terms: dict = field(default_factory=dict)


class TrialWorkspace:
    """Data-independent matrices for single-enrollment/single-test scoring.

    Everything here depends only on the model and the priors: the speaker
    and channel posterior precisions for one- and two-sample ties, and the
    four per-hypothesis inner precisions with their factorizations. Build it
    once per model when scoring many trials.
    """

    def __init__(self, params, priors):
        self.params = params
        self.priors = priors
        d_prec = params.noise_precision
        self.speaker_proj = params.speaker_loading.T * d_prec
        self.channel_proj = params.channel_loading.T * d_prec
        speaker_gram = self.speaker_proj @ params.speaker_loading
        channel_gram = self.channel_proj @ params.channel_loading
        self.speaker_gram = 0.5 * (speaker_gram + speaker_gram.T)
        self.channel_gram = 0.5 * (channel_gram + channel_gram.T)
        self.coupling = self.channel_proj @ params.speaker_loading

        r_y, r_x = params.r_y, params.r_x
        eye_y, eye_x = np.eye(r_y), np.eye(r_x)
        self.l_diff = self.speaker_gram + eye_y
        self.l_same = 2.0 * self.speaker_gram + eye_y
        self.l_diff_chol, self.l_diff_logdet = chol_logdet(self.l_diff, "speaker precision")
        self.l_same_chol, self.l_same_logdet = chol_logdet(self.l_same, "speaker precision")
        k_diff = self.channel_gram + eye_x
        k_same = 2.0 * self.channel_gram + eye_x

        b_same = self.coupling @ chol_solve(self.l_same_chol, self.coupling.T)
        b_diff = self.coupling @ chol_solve(self.l_diff_chol, self.coupling.T)

        two_by_two = np.zeros((2 * r_x, 2 * r_x))
        two_by_two[:r_x, :r_x] = k_diff - b_same
        two_by_two[r_x:, r_x:] = k_diff - b_same
        two_by_two[:r_x, r_x:] = -b_same
        two_by_two[r_x:, :r_x] = -b_same
        dc_ds = np.zeros((2 * r_x, 2 * r_x))
        dc_ds[:r_x, :r_x] = k_diff - b_diff
        dc_ds[r_x:, r_x:] = k_diff - b_diff

        self.inner_precisions = {}
        for key, prec in (("sc_ss", k_same - 4.0 * b_same),
                          ("sc_ds", k_same - 2.0 * b_diff),
                          ("dc_ss", two_by_two),
                          ("dc_ds", dc_ds)):
            prec = 0.5 * (prec + prec.T)
            chol, logdet = chol_logdet(prec, f"inner precision ({key})")
            self.inner_precisions[key] = (chol, logdet)

        self.log_priors = {
            "sc_ss": _log_prior(priors.p_ss),
            "dc_ss": _log_prior(priors.p_ds),
            "sc_ds": _log_prior(priors.p_sd),
            "dc_ds": _log_prior(priors.p_dd),
        }

    def _quad_normalizer(self, key, info):
        """Half log-det of the covariance plus half its quadratic form."""
        chol, logdet = self.inner_precisions[key]
        return -0.5 * logdet + 0.5 * float(info @ chol_solve(chol, info))

    def quad_terms(self, m_enroll, m_test):
        """Per-hypothesis inner normalizers for one (already centered) pair."""
        v_e = self.speaker_proj @ m_enroll
        v_t = self.speaker_proj @ m_test
        u_e = self.channel_proj @ m_enroll
        u_t = self.channel_proj @ m_test

        same_corr = self.coupling @ chol_solve(self.l_same_chol, v_e + v_t)
        diff_corr_e = self.coupling @ chol_solve(self.l_diff_chol, v_e)
        diff_corr_t = self.coupling @ chol_solve(self.l_diff_chol, v_t)

        infos = {
            "sc_ss": (u_e + u_t) - 2.0 * same_corr,
            "sc_ds": (u_e + u_t) - (diff_corr_e + diff_corr_t),
            "dc_ss": np.concatenate([u_e - same_corr, u_t - same_corr]),
            "dc_ds": np.concatenate([u_e - diff_corr_e, u_t - diff_corr_t]),
        }
        return {key: self._quad_normalizer(key, info) for key, info in infos.items()}

    def speaker_llr(self, m_enroll, m_test):
        """Outer (channel-independent) part of the log likelihood ratio."""
        v_e = self.speaker_proj @ m_enroll
        v_t = self.speaker_proj @ m_test
        same_e = chol_solve(self.l_same_chol, v_e)
        same_t = chol_solve(self.l_same_chol, v_t)
        diff_e = chol_solve(self.l_diff_chol, v_e)
        diff_t = chol_solve(self.l_diff_chol, v_t)
        return (self.l_diff_logdet - 0.5 * self.l_same_logdet
                + 0.5 * float(v_e @ (same_e - diff_e))
                + 0.5 * float(v_t @ (same_t - diff_t))
                + float(v_t @ same_e))


def score_trial(params, priors, m_enroll, m_test, workspace=None):
    """Four-hypothesis log likelihood ratio for one enrollment/test pair.

    Both vectors are centered by the model mean internally. The channel term
    marginalizes the same/different-channel hypotheses under ``priors`` with
    a max-shifted log-sum-exp; boundary priors (zero probability) are legal.
    """
    if workspace is None:
        workspace = TrialWorkspace(params, priors)
    m_e = np.asarray(m_enroll, dtype=np.float64)
    m_t = np.asarray(m_test, dtype=np.float64)
    if m_e.shape != (params.dim,) or m_t.shape != (params.dim,):
        raise ValueError(
            f"trial vectors must have dimension {params.dim}, "
            f"got {m_e.shape} and {m_t.shape}")
    m_e = m_e - params.mean
    m_t = m_t - params.mean

    llr_speaker = workspace.speaker_llr(m_e, m_t)
    quads = workspace.quad_terms(m_e, m_t)
    lp = workspace.log_priors
    llr_channel = float(
        np.logaddexp(lp["sc_ss"] + quads["sc_ss"], lp["dc_ss"] + quads["dc_ss"])
        - np.logaddexp(lp["sc_ds"] + quads["sc_ds"], lp["dc_ds"] + quads["dc_ds"]))
    return TrialScore(
        llr=llr_speaker + llr_channel,
        llr_speaker=llr_speaker,
        llr_channel=llr_channel,
        quad_terms=quads,
    )


def score_unseen_channel(params, enrollment, m_test):
    """Log likelihood ratio for multi-sample enrollment against a new channel.

    ``enrollment`` is a non-empty list of (vector, channel_id) pairs; repeated
    channel ids pool into one channel factor and duplicated rows count twice.
    The test sample's channel is assumed different from every enrollment
    channel. Vectors are centered by the model mean internally.
    """
    if len(enrollment) == 0:
        raise ValueError("enrollment must contain at least one sample")
    d = params.dim
    vectors = []
    channel_map = {}
    channel_ids = []
    for vec, chan in enrollment:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (d,):
            raise ValueError(
                f"enrollment vector has shape {vec.shape}, expected ({d},)")
        vectors.append(vec - params.mean)
        channel_ids.append(channel_map.setdefault(chan, len(channel_map)))
    m_t = np.asarray(m_test, dtype=np.float64)
    if m_t.shape != (d,):
        raise ValueError(f"test vector has shape {m_t.shape}, expected ({d},)")
    m_t = m_t - params.mean

    n_enroll = len(vectors)
    n_channels = len(channel_map)
    r_y, r_x = params.r_y, params.r_x
    d_prec = params.noise_precision
    speaker_proj = params.speaker_loading.T * d_prec
    channel_proj = params.channel_loading.T * d_prec
    speaker_gram = speaker_proj @ params.speaker_loading
    channel_gram = channel_proj @ params.channel_loading
    coupling = channel_proj @ params.speaker_loading
    eye_y, eye_x = np.eye(r_y), np.eye(r_x)

    counts = np.zeros(n_channels)
    channel_sums = np.zeros((n_channels, d))
    for vec, cid in zip(vectors, channel_ids):
        counts[cid] += 1.0
        channel_sums[cid] += vec
    f_enroll = channel_sums.sum(axis=0)

    l_diff = n_enroll * speaker_gram + eye_y
    l_same = (n_enroll + 1) * speaker_gram + eye_y
    l_single = speaker_gram + eye_y
    ld_chol, ld_logdet = chol_logdet(l_diff, "enrollment speaker precision")
    ls_chol, ls_logdet = chol_logdet(l_same, "tied speaker precision")
    l1_chol, l1_logdet = chol_logdet(l_single, "test speaker precision")

    f_proj = speaker_proj @ f_enroll
    t_proj = speaker_proj @ m_t
    llr_speaker = (0.5 * ld_logdet + 0.5 * l1_logdet - 0.5 * ls_logdet
                   + 0.5 * float(f_proj @ (chol_solve(ls_chol, f_proj)
                                           - chol_solve(ld_chol, f_proj)))
                   + 0.5 * float(t_proj @ (chol_solve(ls_chol, t_proj)
                                           - chol_solve(l1_chol, t_proj)))
                   + float(t_proj @ chol_solve(ls_chol, f_proj)))

    # Stacked inner posterior over the C enrollment channels plus the test
    # channel, per speaker hypothesis.
    size = (n_channels + 1) * r_x
    weights = np.concatenate([counts, [1.0]])          # occupancy of the tied speaker
    block_g = np.vstack([channel_sums, m_t])
    base_prec = np.zeros((size, size))
    for c in range(n_channels):
        block = slice(c * r_x, (c + 1) * r_x)
        base_prec[block, block] = counts[c] * channel_gram + eye_x
    base_prec[n_channels * r_x:, n_channels * r_x:] = channel_gram + eye_x

    def quad_normalizer(prec, info, context):
        prec = 0.5 * (prec + prec.T)
        chol, logdet = chol_logdet(prec, context)
        return -0.5 * logdet + 0.5 * float(info @ chol_solve(chol, info))

    # Same speaker: one factor ties enrollment and test.
    b_same = coupling @ chol_solve(ls_chol, coupling.T)
    prec_ss = base_prec - np.kron(np.outer(weights, weights), b_same)
    blind_same = chol_solve(ls_chol, speaker_proj @ (f_enroll + m_t))
    info_ss = (block_g @ channel_proj.T
               - np.outer(weights, coupling @ blind_same)).reshape(-1)
    q_same = quad_normalizer(prec_ss, info_ss, "inner precision (tied speaker)")

    # Different speakers: enrollment factor and test factor are independent.
    b_diff = coupling @ chol_solve(ld_chol, coupling.T)
    b_single = coupling @ chol_solve(l1_chol, coupling.T)
    enroll_weights = np.concatenate([counts, [0.0]])
    test_weights = np.concatenate([np.zeros(n_channels), [1.0]])
    prec_ds = (base_prec
               - np.kron(np.outer(enroll_weights, enroll_weights), b_diff)
               - np.kron(np.outer(test_weights, test_weights), b_single))
    blind_enroll = chol_solve(ld_chol, f_proj)
    blind_test = chol_solve(l1_chol, t_proj)
    info_ds = (block_g @ channel_proj.T
               - np.outer(enroll_weights, coupling @ blind_enroll)
               - np.outer(test_weights, coupling @ blind_test)).reshape(-1)
    q_diff = quad_normalizer(prec_ds, info_ds, "inner precision (split speakers)")

    llr_channel = q_same - q_diff
    return TrialScore(
        llr=llr_speaker + llr_channel,
        llr_speaker=llr_speaker,
        llr_channel=llr_channel,
        quad_terms={"ss": q_same, "ds": q_diff},
    )


def score_trial_list(params, priors, table_enroll, table_test, trials):
    """Score (enroll_id, test_id) pairs against two embedding tables.

    Ids must resolve to exactly one sample on their side; the output order
    matches the trial order.
    """
    workspace = TrialWorkspace(params, priors)

    def lookup(table):
        index = {}
        for row, sid in enumerate(table.sample_ids):
            index.setdefault(sid, []).append(row)
        return index

    enroll_index = lookup(table_enroll)
    test_index = lookup(table_test)

    def resolve(index, table, sid, line_no, side):
        rows = index.get(sid)
        if rows is None:
            raise DataFormatError(
                f"trial line {line_no}: unknown {side} id '{sid}'")
        if len(rows) != 1:
            raise DataFormatError(
                f"trial line {line_no}: {side} id '{sid}' matches {len(rows)} samples")
        return table.samples[rows[0]]

    scores = []
    for line_no, (enroll_id, test_id) in enumerate(trials, start=1):
        m_e = resolve(enroll_index, table_enroll, enroll_id, line_no, "enrollment")
        m_t = resolve(test_index, table_test, test_id, line_no, "test")
        scores.append(score_trial(params, priors, m_e, m_t, workspace=workspace))
    return scores


def compute_eer(target_scores, nontarget_scores):
    """Equal error rate by linear interpolation on the ROC.

    Sweeps a threshold over the pooled score values, keeps the outer corner
    of each ROC step (the first point at each false-accept level), and
    interpolates linearly between the two operating points where the
    false-reject rate crosses the false-accept rate.
    """
    targets = np.sort(np.asarray(target_scores, dtype=np.float64))
    nontargets = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if targets.size == 0 or nontargets.size == 0:
        raise ValueError("both score lists must be non-empty")

    points = [(1.0, 0.0)]          # threshold below every score
    for value in np.unique(np.concatenate([targets, nontargets])):
        far = float(np.sum(nontargets > value)) / nontargets.size
        frr = float(np.sum(targets <= value)) / targets.size
        if far != points[-1][0]:
            points.append((far, frr))

    prev_far, prev_frr = points[0]
    for far, frr in points[1:]:
        if frr >= far:
            gap_prev = prev_far - prev_frr
            gap_here = far - frr
            if gap_prev == gap_here:
                return far
            frac = gap_prev / (gap_prev - gap_here)
            return prev_far + frac * (far - prev_far)
        prev_far, prev_frr = far, frr
    return points[-1][0]
