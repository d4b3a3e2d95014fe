"""Binary trajectory store: per-trajectory C(t) samples plus run metadata.

One store file per study so expensive ensembles are propagated once and
analyzed many times. Layout (all little-endian):

    magic    4 bytes  b"HOPS"
    version  u32
    meta_len u32
    metadata JSON (utf-8), meta_len bytes

followed by length-prefixed records

    length   u32      payload byte count
    payload  u64 trajectory id
             u64 seed
             u8  equation kind (0 linear, 1 nonlinear, 2 noisefree)
             u8  abort reason (0 completed, 1 non-finite, 2 norm collapse)
             f64 t0
             f64 dt_record
             u32 n_records
             n_records * (f64 re, f64 im)
    crc      u32      CRC-32 of the payload

Appends are safe: a reader stops at the first short or corrupt record and
reports the valid prefix, so an interrupted run loses at most its last
record. Abort-flagged records carry samples only up to the abort.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"HOPS"
VERSION = 1

_HEADER = struct.Struct("<4sII")
_REC_FIXED = struct.Struct("<QQBBddI")

KIND_CODES = {"linear": 0, "nonlinear": 1, "noisefree": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


@dataclass(frozen=True)
class TrajectoryRecord:
    """One trajectory's correlation samples and provenance."""

    traj_id: int
    seed: int
    kind: str
    t0: float
    dt_record: float
    values: np.ndarray
    abort_reason: int = 0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown equation kind {self.kind!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    @property
    def n_records(self) -> int:
        return self.values.shape[0]

    @property
    def aborted(self) -> bool:
        return self.abort_reason != 0


@dataclass(frozen=True)
class StoreContents:
    records: list
    metadata: dict
    corrupt_after: int | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.corrupt_after is None


def _encode_record(rec: TrajectoryRecord) -> bytes:
    payload = _REC_FIXED.pack(
        rec.traj_id, np.uint64(rec.seed), KIND_CODES[rec.kind],
        rec.abort_reason, rec.t0, rec.dt_record, rec.n_records,
    ) + np.ascontiguousarray(rec.values, dtype="<c16").tobytes()
    return struct.pack("<I", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


def _decode_payload(payload: bytes) -> TrajectoryRecord:
    traj_id, seed, kind_code, abort, t0, dt_rec, n_rec = _REC_FIXED.unpack_from(payload, 0)
    body = payload[_REC_FIXED.size:]
    if len(body) != 16 * n_rec:
        raise ValueError("record body length mismatch")
    values = np.frombuffer(body, dtype="<c16").copy()
    return TrajectoryRecord(traj_id=traj_id, seed=int(seed), kind=KIND_NAMES[kind_code],
                            t0=t0, dt_record=dt_rec, values=values, abort_reason=abort)


def write_store(path, records, metadata: dict, append: bool = False) -> None:
    """Write (or append to) a store file.

    Appending validates that the existing header metadata matches; stores
    from different models refuse to mix.
    """
    path = Path(path)
    if append and path.exists():
        existing = read_metadata(path)
        ensure_compatible_metadata(existing, metadata)
        with open(path, "ab") as fh:
            for rec in records:
                fh.write(_encode_record(rec))
        return
    meta_blob = json.dumps(metadata, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(meta_blob)))
        fh.write(meta_blob)
        for rec in records:
            fh.write(_encode_record(rec))


def _read_header(fh, label) -> dict:
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ValueError(f"{label}: truncated header")
    magic, version, meta_len = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ValueError(f"{label}: not a trajectory store (bad magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{label}: unsupported store version {version}")
    blob = fh.read(meta_len)
    if len(blob) < meta_len:
        raise ValueError(f"{label}: truncated metadata block")
    return json.loads(blob.decode())


def read_metadata(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def read_store(path) -> StoreContents:
    """Read all valid records; corruption truncates to the valid prefix.

    Never raises on a damaged tail: the result carries `corrupt_after`,
    the index of the last intact record, and a diagnostic message.
    """
    path = Path(path)
    records: list[TrajectoryRecord] = []
    with open(path, "rb") as fh:
        metadata = _read_header(fh, path)
        index = 0
        while True:
            len_raw = fh.read(4)
            if not len_raw:
                break
            if len(len_raw) < 4:
                return StoreContents(records, metadata, corrupt_after=index - 1,
                                     message=f"corrupt after record {index - 1}: "
                                             "truncated length prefix")
            (length,) = struct.unpack("<I", len_raw)
            payload = fh.read(length)
            crc_raw = fh.read(4)
            if len(payload) < length or len(crc_raw) < 4:
                return StoreContents(records, metadata, corrupt_after=index - 1,
                                     message=f"corrupt after record {index - 1}: "
                                             "truncated record body")
            (crc,) = struct.unpack("<I", crc_raw)
            if zlib.crc32(payload) != crc:
                return StoreContents(records, metadata, corrupt_after=index - 1,
                                     message=f"corrupt after record {index - 1}: "
                                             "checksum mismatch")
            try:
                records.append(_decode_payload(payload))
            except Exception as exc:
                return StoreContents(records, metadata, corrupt_after=index - 1,
                                     message=f"corrupt after record {index - 1}: {exc}")
            index += 1
    return StoreContents(records, metadata)


_COMPAT_KEYS = ("model_hash", "K", "dt", "equation")


def ensure_compatible_metadata(a: dict, b: dict) -> None:
    """Refuse to merge stores whose physics or grids differ."""
    for key in _COMPAT_KEYS:
        if key in a and key in b and a[key] != b[key]:
            raise ValueError(
                f"incompatible stores: metadata {key!r} differs ({a[key]!r} vs {b[key]!r})"
            )
