"""On-disk formats.

Feature archive (little-endian)::

    b"TFDA" | u16 version | u32 D | u64 T | u32 F | u32 S
    T records of: u32 session | u32 speaker | D x f64

Model container::

    b"TF2M" | u16 version | u16 reserved | u64 payload length | sha256(payload)
    payload = u32 header length | JSON header | raw little-endian f64 arrays

The JSON header names the object kind, its scalar metadata and the shape and
offset of every array, so files are self-describing.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import asdict

import numpy as np

from .adaptation import SpeakerModel, UbmModel
from .network import LayerSpec, NetworkParams
from .regression_head import RegressionHead, SufficientStats
from .trainer import Dataset, LatentFactors

ARCHIVE_MAGIC = b"TFDA"
ARCHIVE_VERSION = 1
_ARCHIVE_HEADER = struct.Struct("<4sHIQII")

MODEL_MAGIC = b"TF2M"
MODEL_VERSION = 1
_MODEL_PREFIX = struct.Struct("<4sHHQ32s")


class ArchiveError(ValueError):
    """Base class for feature archive problems."""


class ArchiveHeaderError(ArchiveError):
    pass


class ArchiveVersionError(ArchiveError):
    pass


class ArchiveTruncatedError(ArchiveError):
    def __init__(self, record: int, total: int):
        super().__init__(f"archive truncated at record {record} of {total}")
        self.record = record


class ArchiveLabelError(ArchiveError):
    def __init__(self, msg: str, record: int | None = None):
        super().__init__(msg)
        self.record = record


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelChecksumError(ModelFormatError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- feature archives --------------------------------------------------------


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("session", "<u4"), ("speaker", "<u4"), ("x", "<f8", (dim,))])


def archive_bytes(data: Dataset) -> bytes:
    header = _ARCHIVE_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, data.dim, data.n_frames,
                                  data.n_sessions, data.n_speakers)
    rec = np.empty(data.n_frames, dtype=_record_dtype(data.dim))
    rec["session"] = data.session
    rec["speaker"] = data.speaker
    rec["x"] = data.frames
    return header + rec.tobytes()


def write_archive(path, data: Dataset) -> None:
    atomic_write(path, archive_bytes(data))


def parse_archive(buf: bytes) -> Dataset:
    if len(buf) < _ARCHIVE_HEADER.size:
        raise ArchiveHeaderError(f"file too short for header ({len(buf)} bytes)")
    magic, version, dim, n, n_sessions, n_speakers = _ARCHIVE_HEADER.unpack_from(buf)
    if magic != ARCHIVE_MAGIC:
        raise ArchiveHeaderError(f"bad magic {magic!r}, expected {ARCHIVE_MAGIC!r}")
    if version != ARCHIVE_VERSION:
        raise ArchiveVersionError(f"unsupported archive version {version}, expected {ARCHIVE_VERSION}")
    if dim < 1:
        raise ArchiveHeaderError("feature dimension must be >= 1")
    dtype = _record_dtype(dim)
    body = memoryview(buf)[_ARCHIVE_HEADER.size:]
    if len(body) < n * dtype.itemsize:
        raise ArchiveTruncatedError(len(body) // dtype.itemsize, n)
    if len(body) > n * dtype.itemsize:
        raise ArchiveHeaderError(f"{len(body) - n * dtype.itemsize} trailing bytes after {n} records")
    rec = np.frombuffer(body, dtype=dtype, count=n)
    session = rec["session"].astype(np.int64)
    speaker = rec["speaker"].astype(np.int64)
    bad = np.flatnonzero(session >= n_sessions)
    if bad.size:
        raise ArchiveLabelError(f"record {bad[0]}: session {session[bad[0]]} >= F={n_sessions}", int(bad[0]))
    bad = np.flatnonzero(speaker >= n_speakers)
    if bad.size:
        raise ArchiveLabelError(f"record {bad[0]}: speaker {speaker[bad[0]]} >= S={n_speakers}", int(bad[0]))
    try:
        return Dataset(rec["x"].copy(), session, speaker, n_sessions, n_speakers)
    except ValueError as exc:
        raise ArchiveLabelError(str(exc)) from exc


def read_archive(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_archive(fh.read())


def import_tsv(path) -> Dataset:
    """Read ``session<TAB>speaker<TAB>f1..fD`` lines (0-based labels)."""
    sessions, speakers, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                raise ArchiveHeaderError(f"line {lineno}: need session, speaker and at least one feature")
            try:
                sessions.append(int(parts[0]))
                speakers.append(int(parts[1]))
                rows.append([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise ArchiveHeaderError(f"line {lineno}: {exc}") from exc
            if len(rows[-1]) != len(rows[0]):
                raise ArchiveHeaderError(f"line {lineno}: {len(rows[-1])} features, expected {len(rows[0])}")
            if sessions[-1] < 0 or speakers[-1] < 0:
                raise ArchiveLabelError(f"line {lineno}: negative label", lineno - 1)
    if not rows:
        raise ArchiveHeaderError("no frames in TSV input")
    sessions = np.array(sessions)
    speakers = np.array(speakers)
    try:
        return Dataset(np.array(rows), sessions, speakers, int(sessions.max()) + 1, int(speakers.max()) + 1)
    except ValueError as exc:
        raise ArchiveLabelError(str(exc)) from exc


# -- model container -----------------------------------------------------------


def _pack(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(header)) + header + b"".join(chunks)
    digest = hashlib.sha256(payload).digest()
    return _MODEL_PREFIX.pack(MODEL_MAGIC, MODEL_VERSION, 0, len(payload), digest) + payload


def _unpack(buf: bytes):
    if len(buf) < _MODEL_PREFIX.size:
        raise ModelFormatError("file too short for a model container")
    magic, version, _, length, digest = _MODEL_PREFIX.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise ModelVersionError(f"unsupported model version {version}, expected {MODEL_VERSION}")
    payload = buf[_MODEL_PREFIX.size:]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise ModelChecksumError("model payload is corrupt (checksum mismatch)")
    (hlen,) = struct.unpack_from("<I", payload)
    header = json.loads(payload[4:4 + hlen].decode("utf-8"))
    data = payload[4 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = data[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return header["kind"], header["meta"], arrays


def _ubm_parts(ubm: UbmModel):
    meta = {
        "specs": [asdict(s) for s in ubm.params.specs],
        "r1": ubm.params.r1,
        "r2": ubm.params.r2,
        "lam0": ubm.head.lam0,
        "stats_n": ubm.stats.n,
        "stats_factors": ubm.stats_factors,
    }
    arrays = {f"theta/{k}": v for k, v in ubm.params.arrays.items()}
    arrays.update({
        "head/B": ubm.head.B,
        "head/psi": ubm.head.psi,
        "stats/syy": ubm.stats.syy,
        "stats/syx": ubm.stats.syx,
        "factors/Z1": ubm.factors.Z1,
        "factors/Z2": ubm.factors.Z2,
    })
    return meta, arrays


def model_bytes(model) -> bytes:
    if isinstance(model, UbmModel):
        meta, arrays = _ubm_parts(model)
        return _pack("ubm", meta, arrays)
    if isinstance(model, SpeakerModel):
        meta = {"model_id": model.model_id, "method": model.method, "alpha": model.alpha,
                "ubm_digest": model.ubm_digest}
        arrays = {"B": model.B}
        if model.z2 is not None:
            arrays["z2"] = model.z2
        return _pack("speaker", meta, arrays)
    if isinstance(model, SufficientStats):
        return _pack("stats", {"n": model.n}, {"syy": model.syy, "syx": model.syx})
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_digest(model) -> str:
    """Hex sha256 of a model's serialized form."""
    return hashlib.sha256(model_bytes(model)).hexdigest()


def save_model(path, model) -> None:
    atomic_write(path, model_bytes(model))


def parse_model(buf: bytes):
    kind, meta, arrays = _unpack(buf)
    if kind == "ubm":
        specs = tuple(LayerSpec(**s) for s in meta["specs"])
        theta = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("theta/")}
        params = NetworkParams(specs, meta["r1"], meta["r2"], theta)
        params.validate()
        head = RegressionHead(arrays["head/B"], arrays["head/psi"], meta["lam0"])
        stats = SufficientStats(arrays["stats/syy"], arrays["stats/syx"], meta["stats_n"])
        factors = LatentFactors(arrays["factors/Z1"], arrays["factors/Z2"])
        return UbmModel(params, head, stats, factors, meta["stats_factors"])
    if kind == "speaker":
        return SpeakerModel(meta["model_id"], arrays["B"], meta["method"], arrays.get("z2"), meta["alpha"],
                            meta["ubm_digest"])
    if kind == "stats":
        return SufficientStats(arrays["syy"], arrays["syx"], meta["n"])
    raise ModelFormatError(f"unknown model kind {kind!r}")


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


# -- trial lists ---------------------------------------------------------------


def trial_list_text(trials) -> str:
    buf = io.StringIO()
    for model_id, utt_id, label in trials:
        buf.write(f"{model_id}\t{utt_id}\t{label}\n")
    return buf.getvalue()


def read_trial_list(path) -> list[tuple[str, str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 2:
                parts.append("unk")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected model<TAB>utterance[<TAB>label]")
            out.append(tuple(parts))
    return out
