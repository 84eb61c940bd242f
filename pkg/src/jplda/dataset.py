"""Labeled embedding datasets with per-speaker / per-channel count and sum
statistics.

A dataset is a flat list of fixed-dimension feature vectors, each carrying a
speaker label and a channel label. Labels are remapped to contiguous integer
ids in first-occurrence order, so the same rows always produce the same table.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DataFormatError


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable collection of labeled embeddings plus derived statistics.

    Attributes
    ----------
    samples : (N, d) float array of feature vectors.
    speaker_labels, channel_labels : (N,) int arrays with contiguous ids.
    sample_ids, speaker_names, channel_names : original string identifiers;
        ``speaker_names[s]`` is the name mapped to speaker id ``s``.
    n_s, n_c : per-speaker / per-channel sample counts.
    n_sc : (S, C) occupancy counts (samples with speaker s and channel c).
    f_s, g_c : per-speaker / per-channel sums of the sample vectors.
    """

    samples: np.ndarray
    speaker_labels: np.ndarray
    channel_labels: np.ndarray
    sample_ids: tuple
    speaker_names: tuple
    channel_names: tuple
    n_s: np.ndarray
    n_c: np.ndarray
    n_sc: np.ndarray
    f_s: np.ndarray
    g_c: np.ndarray

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def n_speakers(self):
        return self.n_s.shape[0]

    @property
    def n_channels(self):
        return self.n_c.shape[0]

    @classmethod
    def from_arrays(cls, samples, speaker_labels, channel_labels,
                    sample_ids=None, speaker_names=None, channel_names=None):
        """Build a table from already-contiguous integer labels.

        Labels must cover 0..S-1 and 0..C-1 with no gaps; use
        :func:`ingest_dataset` for arbitrary label values.
        """
        samples = np.ascontiguousarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] == 0 or samples.shape[1] == 0:
            raise DataFormatError("samples must be a non-empty (N, d) array")
        speaker_labels = np.asarray(speaker_labels, dtype=np.int64)
        channel_labels = np.asarray(channel_labels, dtype=np.int64)
        n = samples.shape[0]
        if speaker_labels.shape != (n,) or channel_labels.shape != (n,):
            raise DataFormatError("label arrays must have one entry per sample")
        for name, labels in (("speaker", speaker_labels), ("channel", channel_labels)):
            if labels.min() < 0:
                raise DataFormatError(f"negative {name} label")
            count = int(labels.max()) + 1
            if np.unique(labels).size != count:
                raise DataFormatError(f"{name} labels are not contiguous")
        n_speakers = int(speaker_labels.max()) + 1
        n_channels = int(channel_labels.max()) + 1

        if sample_ids is None:
            sample_ids = tuple(str(i) for i in range(n))
        if speaker_names is None:
            speaker_names = tuple(str(s) for s in range(n_speakers))
        if channel_names is None:
            channel_names = tuple(str(c) for c in range(n_channels))

        n_sc = np.zeros((n_speakers, n_channels), dtype=np.int64)
        np.add.at(n_sc, (speaker_labels, channel_labels), 1)
        f_s = np.zeros((n_speakers, samples.shape[1]))
        np.add.at(f_s, speaker_labels, samples)
        g_c = np.zeros((n_channels, samples.shape[1]))
        np.add.at(g_c, channel_labels, samples)

        return cls(
            samples=_freeze(samples),
            speaker_labels=_freeze(speaker_labels),
            channel_labels=_freeze(channel_labels),
            sample_ids=tuple(sample_ids),
            speaker_names=tuple(speaker_names),
            channel_names=tuple(channel_names),
            n_s=_freeze(n_sc.sum(axis=1)),
            n_c=_freeze(n_sc.sum(axis=0)),
            n_sc=_freeze(n_sc),
            f_s=_freeze(f_s),
            g_c=_freeze(g_c),
        )


def ingest_dataset(rows):
    """Build an :class:`EmbeddingTable` from (sample_id, speaker, channel,
    vector) rows.

    Speaker and channel names are remapped to contiguous integer ids in
    first-occurrence order. All vectors must share one dimension; the first
    offending sample id is reported otherwise.
    """
    rows = list(rows)
    if not rows:
        raise DataFormatError("empty dataset: no rows to ingest")

    dim = len(rows[0][3])
    if dim == 0:
        raise DataFormatError(f"sample '{rows[0][0]}' has an empty feature vector")

    sample_ids = []
    speaker_ids = {}
    channel_ids = {}
    speakers = np.empty(len(rows), dtype=np.int64)
    channels = np.empty(len(rows), dtype=np.int64)
    samples = np.empty((len(rows), dim))
    for i, (sample_id, speaker, channel, vec) in enumerate(rows):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (dim,):
            raise DataFormatError(
                f"sample '{sample_id}' has dimension {vec.shape[0] if vec.ndim == 1 else vec.shape}"
                f", expected {dim}")
        samples[i] = vec
        sample_ids.append(str(sample_id))
        speakers[i] = speaker_ids.setdefault(str(speaker), len(speaker_ids))
        channels[i] = channel_ids.setdefault(str(channel), len(channel_ids))

    return EmbeddingTable.from_arrays(
        samples, speakers, channels,
        sample_ids=sample_ids,
        speaker_names=tuple(speaker_ids),
        channel_names=tuple(channel_ids),
    )


def center(table, mu):
    """Return a copy of ``table`` with ``mu`` subtracted from every sample."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (table.dim,):
        raise DataFormatError(
            f"mean has shape {mu.shape}, table dimension is {table.dim}")
    return EmbeddingTable.from_arrays(
        table.samples - mu, table.speaker_labels, table.channel_labels,
        sample_ids=table.sample_ids,
        speaker_names=table.speaker_names,
        channel_names=table.channel_names,
    )
