"""SCAR1 binary trace container.

Layout (all integers little-endian)::

    0   4   magic  b"SCAR"
    4   2   version (u16) = 1
    6   2   flags (u16); bit0 set => variable-length traces
    8   8   n_traces (u64)
    16  8   trace_len (u64); 0 in variable mode
    24  1   dtype (u8); 0 = float32
    25  1   label_width (u8); 2 = u16 labels
    26  6   reserved, zero
    32  4   metadata length (u32), then UTF-8 JSON metadata
    ...     per trace: [u64 length if variable] u16 label, float32 samples
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .traces import Trace, TraceSet

MAGIC = b"SCAR"
VERSION = 1
FLAG_VARIABLE = 0x1
DTYPE_F32 = 0
LABEL_U16 = 2

_HEADER = struct.Struct("<4sHHQQBB6s")


class ScarError(Exception):
    pass


class BadMagicError(ScarError):
    pass


class UnsupportedVersionError(ScarError):
    pass


class TruncatedPayloadError(ScarError):
    pass


class LengthMismatchError(ScarError):
    pass


def _metadata(ts: TraceSet) -> dict:
    meta = dict(ts.meta)
    meta["n_classes"] = ts.n_classes
    meta.setdefault("sample_rate_hz", 0)
    meta.setdefault("generator", "scaar")
    sessions = [t.session_id for t in ts.traces]
    if sessions and any(s != sessions[0] for s in sessions):
        meta["session_ids"] = sessions
        meta.pop("session_id", None)
    else:
        meta["session_id"] = sessions[0] if sessions else 0
        meta.pop("session_ids", None)
    if any(t.meta for t in ts.traces):
        meta["trace_meta"] = [dict(t.meta) for t in ts.traces]
    else:
        meta.pop("trace_meta", None)
    return meta


def encode(ts: TraceSet) -> bytes:
    variable = ts.fixed_len is None
    for t in ts.traces:
        if not 0 <= t.label < 0x10000:
            raise ValueError(f"label {t.label} does not fit in u16")
    meta = json.dumps(_metadata(ts), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            FLAG_VARIABLE if variable else 0,
            len(ts),
            0 if variable else ts.fixed_len,
            DTYPE_F32,
            LABEL_U16,
            b"\0" * 6,
        ),
        struct.pack("<I", len(meta)),
        meta,
    ]
    if not variable and len(ts):
        rec = np.dtype([("label", "<u2"), ("samples", "<f4", (ts.fixed_len,))])
        block = np.empty(len(ts), dtype=rec)
        block["label"] = ts.labels
        block["samples"] = ts.matrix
        parts.append(block.tobytes())
    else:
        for t in ts.traces:
            if variable:
                parts.append(struct.pack("<Q", len(t)))
            parts.append(struct.pack("<H", t.label))
            parts.append(t.samples.astype("<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> TraceSet:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size + 4:
        raise TruncatedPayloadError("file ends inside the header")
    _, version, flags, n, trace_len, dtype, lw, _res = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported SCAR version {version}")
    if dtype != DTYPE_F32 or lw != LABEL_U16:
        raise UnsupportedVersionError(f"unsupported dtype/label width ({dtype}, {lw})")
    variable = bool(flags & FLAG_VARIABLE)
    if not variable and trace_len == 0 and n > 0:
        raise LengthMismatchError("fixed-length file declares trace_len 0")
    (mlen,) = struct.unpack_from("<I", buf, _HEADER.size)
    pos = _HEADER.size + 4
    if pos + mlen > len(buf):
        raise TruncatedPayloadError("file ends inside the metadata block")
    meta = json.loads(bytes(buf[pos : pos + mlen]).decode("utf-8"))
    pos += mlen

    n_classes = int(meta.pop("n_classes"))
    sessions = meta.pop("session_ids", None)
    session0 = int(meta.pop("session_id", 0))
    tmeta = meta.pop("trace_meta", None)
    if sessions is None:
        sessions = [session0] * n
    if tmeta is None:
        tmeta = [{}] * n
    if len(sessions) != n or len(tmeta) != n:
        raise LengthMismatchError("per-trace metadata does not match n_traces")

    traces = []
    if not variable:
        rec = np.dtype([("label", "<u2"), ("samples", "<f4", (trace_len,))])
        need = n * rec.itemsize
        if pos + need > len(buf):
            raise TruncatedPayloadError(
                f"payload holds {len(buf) - pos} bytes, {need} needed for {n} traces of {trace_len}"
            )
        if pos + need != len(buf):
            raise LengthMismatchError(f"{len(buf) - pos - need} trailing bytes after last trace")
        block = np.frombuffer(buf, dtype=rec, count=n, offset=pos)
        x = block["samples"].astype(np.float32)
        labels = block["label"].astype(np.int64)
        traces = [Trace(x[i], labels[i], sessions[i], tmeta[i]) for i in range(n)]
        ts = TraceSet(tuple(traces), n_classes, int(trace_len), meta)
        x.setflags(write=False)
        ts.__dict__["matrix"] = x
        return ts

    for i in range(n):
        if pos + 8 > len(buf):
            raise TruncatedPayloadError(f"file ends before length of trace {i}")
        (length,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        end = pos + 2 + 4 * length
        if end > len(buf):
            raise TruncatedPayloadError(f"file ends inside trace {i}")
        (label,) = struct.unpack_from("<H", buf, pos)
        samples = np.frombuffer(buf, dtype="<f4", count=length, offset=pos + 2).astype(np.float32)
        traces.append(Trace(samples, label, sessions[i], tmeta[i]))
        pos = end
    if pos != len(buf):
        raise LengthMismatchError(f"{len(buf) - pos} trailing bytes after last trace")
    return TraceSet(tuple(traces), n_classes, None, meta)


def write_scar(ts: TraceSet, path: str | os.PathLike) -> int:
    data = encode(ts)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def read_scar(path: str | os.PathLike) -> TraceSet:
    with open(path, "rb") as f:
        return decode(f.read())
