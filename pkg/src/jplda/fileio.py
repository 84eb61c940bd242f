"""On-disk formats: embeddings (text and binary), models, trials and scores.

Text embeddings are one tab-separated record per sample with the feature
vector as a space-separated field; floats are written with shortest
round-trip precision so read(write(x)) is lossless. The binary embedding
form stores labels once in a trailing string table and the vectors as
little-endian doubles; it round-trips bit-exactly. Model files are binary
only.
"""

import struct

import numpy as np

from .dataset import ingest_dataset
from .exceptions import DataFormatError
from .model import ModelParams

EMBEDDING_MAGIC = b"JPLDA-EMB"
MODEL_MAGIC = b"JPLDA-MDL"
FORMAT_VERSION = 1

_EMB_HEADER = struct.Struct("<9sIQI")        # magic, version, N, d
_EMB_OFFSETS = struct.Struct("<III")         # sample, speaker, channel offsets
_MDL_HEADER = struct.Struct("<9sIIII")       # magic, version, d, r_y, r_x


def _float_repr(x):
    return repr(float(x))


def _table_rows(table):
    for i in range(table.n_samples):
        yield (table.sample_ids[i],
               table.speaker_names[table.speaker_labels[i]],
               table.channel_names[table.channel_labels[i]],
               table.samples[i])


# -- embeddings, text form -------------------------------------------------

def write_embeddings_text(path, table):
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, speaker, channel, vec in _table_rows(table):
            values = " ".join(_float_repr(x) for x in vec)
            fh.write(f"{sample_id}\t{speaker}\t{channel}\t{values}\n")


def _parse_text_embeddings(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError(
                    f"{path}:{line_no}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                vec = np.array([float(x) for x in parts[3].split()])
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{line_no}: malformed feature vector: {exc}") from exc
            rows.append((parts[0], parts[1], parts[2], vec))
    if not rows:
        raise DataFormatError(f"{path}: no embedding records found")
    return rows


# -- embeddings, binary form -----------------------------------------------

def write_embeddings_binary(path, table):
    string_table = bytearray()
    offsets = {}

    def intern(text):
        if text not in offsets:
            offsets[text] = len(string_table)
            string_table.extend(text.encode("utf-8") + b"\x00")
        return offsets[text]

    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMBEDDING_MAGIC, FORMAT_VERSION,
                                  table.n_samples, table.dim))
        for sample_id, speaker, channel, vec in _table_rows(table):
            fh.write(_EMB_OFFSETS.pack(intern(sample_id), intern(speaker),
                                       intern(channel)))
            fh.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())
        fh.write(bytes(string_table))


def _parse_binary_embeddings(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _EMB_HEADER.size:
        raise DataFormatError(f"{path}: truncated embedding header")
    magic, version, n, d = _EMB_HEADER.unpack_from(blob)
    if magic != EMBEDDING_MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")
    record_size = _EMB_OFFSETS.size + 8 * d
    table_start = _EMB_HEADER.size + n * record_size
    if len(blob) < table_start:
        raise DataFormatError(f"{path}: truncated records (expected {n})")
    strings = blob[table_start:]

    def string_at(offset):
        end = strings.find(b"\x00", offset)
        if end < 0:
            raise DataFormatError(f"{path}: unterminated string at offset {offset}")
        return strings[offset:end].decode("utf-8")

    rows = []
    pos = _EMB_HEADER.size
    for _ in range(n):
        sid_off, spk_off, chan_off = _EMB_OFFSETS.unpack_from(blob, pos)
        pos += _EMB_OFFSETS.size
        vec = np.frombuffer(blob, dtype="<f8", count=d, offset=pos).astype(np.float64)
        pos += 8 * d
        rows.append((string_at(sid_off), string_at(spk_off),
                     string_at(chan_off), vec))
    if not rows:
        raise DataFormatError(f"{path}: no embedding records found")
    return rows


def read_embeddings(path):
    """Load an embedding file (text or binary, detected by magic bytes)."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(EMBEDDING_MAGIC))
    except OSError as exc:
        raise DataFormatError(f"cannot open embedding file '{path}': {exc}") from exc
    if head == EMBEDDING_MAGIC:
        rows = _parse_binary_embeddings(path)
    else:
        rows = _parse_text_embeddings(path)
    return ingest_dataset(rows)


# -- model files -------------------------------------------------------------

def write_model(path, params):
    with open(path, "wb") as fh:
        fh.write(_MDL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION,
                                  params.dim, params.r_y, params.r_x))
        for arr in (params.mean, params.noise_precision,
                    params.speaker_loading, params.channel_loading):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_model(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot open model file '{path}': {exc}") from exc
    if len(blob) < _MDL_HEADER.size:
        raise DataFormatError(f"{path}: truncated model header")
    magic, version, d, r_y, r_x = _MDL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise DataFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")
    expected = _MDL_HEADER.size + 8 * (2 * d + d * r_y + d * r_x)
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: model payload has {len(blob)} bytes, expected {expected}")
    body = np.frombuffer(blob, dtype="<f8", offset=_MDL_HEADER.size)
    mean, body = body[:d], body[d:]
    precision, body = body[:d], body[d:]
    v, body = body[:d * r_y].reshape(d, r_y), body[d * r_y:]
    u = body.reshape(d, r_x)
    return ModelParams(v.copy(), u.copy(), precision.copy(), mean.copy())


# -- trials and scores --------------------------------------------------------

def read_trials(path):
    """Parse enroll/test trial pairs with an optional target/nontarget key.

    Returns a list of (enroll_id, test_id, key) where key is None when the
    line has no third column.
    """
    trials = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open trial file '{path}': {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise DataFormatError(
                    f"{path}:{line_no}: expected 2 or 3 tab-separated fields")
            key = None
            if len(parts) == 3:
                if parts[2] not in ("target", "nontarget"):
                    raise DataFormatError(
                        f"{path}:{line_no}: key must be 'target' or 'nontarget', "
                        f"got '{parts[2]}'")
                key = parts[2]
            trials.append((parts[0], parts[1], key))
    return trials


def write_scores(path, trials, scores, priors=None, header_extra=()):
    """Write one `enroll test llr llr_o llr_i` line per trial.

    Floats carry 17 significant digits. The priors in effect (and any extra
    header notes) are recorded as leading comment lines.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if priors is not None:
            fh.write(f"# priors pss={priors.p_ss!r} pds={priors.p_ds!r} "
                     f"psd={priors.p_sd!r} pdd={priors.p_dd!r}\n")
        for note in header_extra:
            fh.write(f"# {note}\n")
        for (enroll_id, test_id, _key), score in zip(trials, scores):
            fh.write(f"{enroll_id}\t{test_id}\t{score.llr:.17g}"
                     f"\t{score.llr_speaker:.17g}\t{score.llr_channel:.17g}\n")


def read_scores(path):
    """Parse a score file into (enroll_id, test_id, llr, llr_o, llr_i, key).

    ``key`` is None unless the line carries a sixth target/nontarget column.
    """
    out = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open score file '{path}': {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (5, 6):
                raise DataFormatError(
                    f"{path}:{line_no}: expected 5 or 6 tab-separated fields")
            try:
                values = tuple(float(x) for x in parts[2:5])
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{line_no}: malformed score value: {exc}") from exc
            key = None
            if len(parts) == 6:
                if parts[5] not in ("target", "nontarget"):
                    raise DataFormatError(
                        f"{path}:{line_no}: key must be 'target' or 'nontarget'")
                key = parts[5]
            out.append((parts[0], parts[1]) + values + (key,))
    return out


def write_train_log(path, log_likelihoods):
    """Write the per-iteration `iter loglik delta` training log."""
    with open(path, "w", encoding="utf-8") as fh:
        prev = None
        for it, ll in enumerate(log_likelihoods, start=1):
            delta = 0.0 if prev is None else ll - prev
            fh.write(f"{it}\t{ll:.17g}\t{delta:.17g}\n")
            prev = ll
