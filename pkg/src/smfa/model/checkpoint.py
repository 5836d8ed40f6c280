"""Bit-exact checkpoint/adapter files.

Layout: bytes 0-3 magic ``SMFA``; bytes 4-7 version (u32 LE); bytes 8-15
header length H (u64 LE); H bytes of UTF-8 JSON mapping tensor name ->
{"dtype": "f64", "shape": [...], "offsets": [begin, end]} plus a
``__meta__`` object {kind, method, base_digest_hex, seed, k}; then the
raw little-endian IEEE-754 payload.  Offsets are relative to the payload
start, ascending and non-overlapping (tensors are written in name order).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DigestMismatch, FormatError, IoError
from ..numerics.tensor import Tensor
from .network import DeltaAdapter, DeltaMeta, ModelWeights

MAGIC = b"SMFA"
VERSION = 1


def _tensor_bytes(t: Tensor) -> bytes:
    return np.ascontiguousarray(t.data, dtype="<f8").tobytes()


def weights_digest(weights: ModelWeights) -> bytes:
    """SHA-256 over name-sorted (name, shape, raw LE payload) tuples."""
    h = hashlib.sha256()
    for name in sorted(weights):
        t = weights[name]
        h.update(name.encode("utf-8"))
        h.update(struct.pack("<I", len(t.shape)))
        for dim in t.shape:
            h.update(struct.pack("<Q", dim))
        h.update(_tensor_bytes(t))
    return h.digest()


def file_digest(path: str | Path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_file(
    path: str | Path,
    tensors: dict[str, Tensor],
    meta: dict,
) -> None:
    header: dict = {"__meta__": meta}
    payload_parts: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        raw = _tensor_bytes(tensors[name])
        header[name] = {
            "dtype": "f64",
            "shape": list(tensors[name].shape),
            "offsets": [offset, offset + len(raw)],
        }
        payload_parts.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    blob = (
        MAGIC
        + struct.pack("<I", VERSION)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + b"".join(payload_parts)
    )
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_weights(
    path: str | Path,
    weights: ModelWeights,
    *,
    method: str = "train",
    seed: int | None = None,
) -> None:
    meta = {
        "kind": "weights",
        "method": method,
        "base_digest_hex": None,
        "seed": seed,
        "k": None,
    }
    _write_file(path, weights, meta)


def save_delta(path: str | Path, delta: DeltaAdapter) -> None:
    meta = {
        "kind": "delta",
        "method": delta.meta.method,
        "base_digest_hex": delta.meta.base_digest.hex() if delta.meta.base_digest else None,
        "seed": delta.meta.seed,
        "k": delta.meta.k,
    }
    _write_file(path, delta.tensors, meta)


def save_mask(
    path: str | Path,
    mask: dict[str, Tensor],
    *,
    method: str,
    seed: int | None,
    k: float | None,
    base_digest: bytes = b"",
) -> None:
    meta = {
        "kind": "mask",
        "method": method,
        "base_digest_hex": base_digest.hex() if base_digest else None,
        "seed": seed,
        "k": k,
    }
    _write_file(path, mask, meta)


def save_checkpoint(obj, path: str | Path, **kwargs) -> None:
    """Dispatch on object type: weight map or delta adapter."""
    if isinstance(obj, DeltaAdapter):
        save_delta(path, obj)
    elif isinstance(obj, dict):
        save_weights(path, obj, **kwargs)
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")


@dataclass
class LoadedCheckpoint:
    kind: str
    tensors: dict[str, Tensor]
    meta: dict

    def weights(self) -> ModelWeights:
        if self.kind != "weights":
            raise FormatError(f"expected a weights checkpoint, found {self.kind!r}")
        return self.tensors

    def delta(self) -> DeltaAdapter:
        if self.kind != "delta":
            raise FormatError(f"expected a delta checkpoint, found {self.kind!r}")
        digest_hex = self.meta.get("base_digest_hex")
        return DeltaAdapter(
            tensors=self.tensors,
            meta=DeltaMeta(
                method=self.meta.get("method", ""),
                base_digest=bytes.fromhex(digest_hex) if digest_hex else b"",
                seed=self.meta.get("seed") or 0,
                k=self.meta.get("k"),
            ),
        )

    def mask(self) -> dict[str, Tensor]:
        if self.kind != "mask":
            raise FormatError(f"expected a mask checkpoint, found {self.kind!r}")
        return self.tensors


def load_checkpoint(
    path: str | Path, *, verify_base: ModelWeights | None = None
) -> LoadedCheckpoint:
    """Parse and validate a checkpoint file.

    With ``verify_base``, a recorded base digest must match those weights
    (DigestMismatch otherwise).  Structural problems raise FormatError.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if len(blob) < 16:
        raise FormatError("file too short for magic/version/header length")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise FormatError("header length exceeds file size")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid JSON header: {exc}") from exc
    if not isinstance(header, dict) or "__meta__" not in header:
        raise FormatError("header missing __meta__")
    meta = header.pop("__meta__")
    kind = meta.get("kind")
    if kind not in ("weights", "delta", "mask"):
        raise FormatError(f"unknown checkpoint kind {kind!r}")

    payload = blob[16 + header_len :]
    entries = []
    for name, info in header.items():
        if info.get("dtype") != "f64":
            raise FormatError(f"{name}: unsupported dtype {info.get('dtype')!r}")
        shape = tuple(int(s) for s in info["shape"])
        begin, end = (int(x) for x in info["offsets"])
        numel = 1
        for dim in shape:
            numel *= dim
        if begin < 0 or end > len(payload) or begin > end:
            raise FormatError(f"{name}: offsets [{begin}, {end}) out of bounds")
        if end - begin != 8 * numel:
            raise FormatError(f"{name}: span {end - begin} != 8 * {numel}")
        entries.append((begin, end, name, shape))
    entries.sort()
    for (b1, e1, n1, _), (b2, _, n2, _) in zip(entries, entries[1:]):
        if b2 < e1:
            raise FormatError(f"overlapping offsets: {n1!r} and {n2!r}")

    tensors: dict[str, Tensor] = {}
    for begin, end, name, shape in entries:
        arr = np.frombuffer(payload[begin:end], dtype="<f8").reshape(shape)
        tensors[name] = Tensor(arr.astype(np.float64))

    if verify_base is not None:
        digest_hex = meta.get("base_digest_hex")
        if digest_hex and weights_digest(verify_base) != bytes.fromhex(digest_hex):
            raise DigestMismatch(f"{path}: base digest does not match given weights")

    return LoadedCheckpoint(kind=kind, tensors=tensors, meta=meta)
