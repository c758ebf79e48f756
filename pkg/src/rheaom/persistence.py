"""Model snapshots.

A snapshot is two text lines: a JSON header, then the base64 of six
little-endian float64 arrays in row-major order (W, b, m_W, m_b, v_W, v_b).
Loading restores every bit, including the Adam step counter.
"""

from __future__ import annotations

import base64
import binascii
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .opponent_model import LinearSoftmaxModel, ModelKind

FORMAT = "rheaom-model/1"


class SnapshotError(ValueError):
    pass


class CorruptHeader(SnapshotError):
    pass


class ShapeMismatch(SnapshotError):
    pass


class TruncatedPayload(SnapshotError):
    pass


def _arrays(m: LinearSoftmaxModel):
    return (m.W, m.b, m.m_W, m.m_b, m.v_W, m.v_b)


def dumps(model: LinearSoftmaxModel, created: str | None = None) -> str:
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in _arrays(model))
    header = {
        "format": FORMAT,
        "kind": model.kind.value,
        "F": model.n_features,
        "A": model.n_actions,
        "adam_t": model.t,
        "created": created or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "payload_bytes": len(payload),
    }
    return json.dumps(header, sort_keys=True) + "\n" + base64.b64encode(payload).decode() + "\n"


def loads(text: str) -> LinearSoftmaxModel:
    head, _, body = text.partition("\n")
    try:
        h = json.loads(head)
        if h.get("format") != FORMAT:
            raise CorruptHeader(f"unknown format {h.get('format')!r}")
        kind = ModelKind(h["kind"])
        F, A, t, nbytes = int(h["F"]), int(h["A"]), int(h["adam_t"]), int(h["payload_bytes"])
    except CorruptHeader:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeader(f"bad snapshot header: {exc}") from None
    if F < 1 or A < 1 or t < 0:
        raise CorruptHeader("header dimensions must be positive")
    expected = 8 * 3 * (A * F + A)
    if nbytes != expected:
        raise ShapeMismatch(f"header shape F={F}, A={A} needs {expected} bytes, "
                            f"header declares {nbytes}")
    try:
        raw = base64.b64decode(body.strip(), validate=True)
    except (binascii.Error, ValueError):
        raise TruncatedPayload("payload is not valid base64 (truncated?)") from None
    if len(raw) != nbytes:
        raise TruncatedPayload(f"payload has {len(raw)} bytes, expected {nbytes}")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    out = []
    off = 0
    for shape in ((A, F), (A,)) * 3:
        size = int(np.prod(shape))
        out.append(flat[off:off + size].reshape(shape).copy())
        off += size
    return LinearSoftmaxModel(kind, out[0], out[1], out[2], out[3], out[4], out[5], t)


def save_model(model: LinearSoftmaxModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model))
    return path


def load_model(path: str | Path) -> LinearSoftmaxModel:
    return loads(Path(path).read_text())


def summary(model: LinearSoftmaxModel) -> dict:
    return {
        "kind": model.kind.value,
        "F": model.n_features,
        "A": model.n_actions,
        "adam_t": model.t,
        "weight_norm": float(np.linalg.norm(model.W)),
        "bias_range": [float(model.b.min()), float(model.b.max())],
        "finite": model.is_finite(),
    }
