"""Checkpoint files, canonical JSON reports and CSV emission.

Checkpoint layout (all integers little-endian)::

    b"SNKP" | u32 version=1 | u32 len | config JSON (canonical)
    u32 count | count x (u32 name_len, name UTF-8, u64 rows, u64 cols, u64 offset)
    payload: float32 LE, row-major; offsets are relative to the payload start

Weights computed in float64 are truncated to float32 on write.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BadMagic, IoFailure, ManifestOverlap, NonFiniteValue, TruncatedFile, UnsupportedVersion
from .model import ModelConfig, NamedTensorCheckpoint

MAGIC = b"SNKP"
VERSION = 1
_F32 = np.dtype("<f4")


def canonical_json(obj) -> str:
    """Sorted keys, compact separators, shortest round-trip floats, no NaN/inf."""
    try:
        return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise NonFiniteValue(str(exc)) from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise NonFiniteValue(f"non-finite number {v!r} in report")
        return v
    return obj


def checkpoint_bytes(ckpt: NamedTensorCheckpoint) -> bytes:
    config = canonical_json(ckpt.config.to_dict()).encode("utf-8")
    header = [MAGIC, struct.pack("<II", VERSION, len(config)), config, struct.pack("<I", len(ckpt.tensors))]
    payload, offset = [], 0
    for name, t in ckpt.tensors.items():
        raw = np.ascontiguousarray(t, dtype=_F32).tobytes()
        enc = name.encode("utf-8")
        header.append(struct.pack("<I", len(enc)) + enc + struct.pack("<QQQ", t.shape[0], t.shape[1], offset))
        payload.append(raw)
        offset += len(raw)
    return b"".join(header + payload)


def write_checkpoint(ckpt: NamedTensorCheckpoint, path) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(ckpt))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf: bytes) -> NamedTensorCheckpoint:
    if buf[:4] != MAGIC:
        raise BadMagic("not a SNKP checkpoint")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, supported {VERSION}")
    (cfg_len,) = r.unpack("<I")
    config = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    (count,) = r.unpack("<I")
    manifest = []
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        rows, cols, offset = r.unpack("<QQQ")
        manifest.append((name, rows, cols, offset))

    payload = buf[r.pos :]
    spans = []
    for name, rows, cols, offset in manifest:
        nbytes = rows * cols * _F32.itemsize
        if offset + nbytes > len(payload):
            raise TruncatedFile(f"tensor {name} runs past the end of the payload")
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ManifestOverlap(f"tensors {n0} and {n1} overlap")

    tensors = {}
    for name, rows, cols, offset in manifest:
        if name in tensors:
            raise ManifestOverlap(f"duplicate tensor name {name}")
        data = np.frombuffer(payload, dtype=_F32, count=rows * cols, offset=offset)
        tensors[name] = data.reshape(rows, cols).astype(np.float32)
    return NamedTensorCheckpoint(config, tensors)


def read_checkpoint(path) -> NamedTensorCheckpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_checkpoint(buf)


def write_report(report: dict, path) -> None:
    text = canonical_json(report) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read report {path}: {exc}") from exc


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            raise NonFiniteValue(f"non-finite value {v!r} in CSV row")
        return repr(v)
    return v


def write_csv(header: Sequence[str], rows: Iterable[Sequence], path) -> None:
    """RFC-4180 CSV (CRLF line endings) with a mandatory header row."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
