"""Self-describing binary container for synthetic sets ("DDS1").

Layout: magic "DDS1"; little-endian u32 header (version, count, C, H, W, K,
ipc); float32 LE pixel payload, row-major; u16 LE labels; u32
length-prefixed UTF-8 JSON manifest. Writes are byte-deterministic so
identical runs produce identical files.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distill import SyntheticSet
from .tensor import Tensor

MAGIC = b"DDS1"
VERSION = 1
_HEADER = struct.Struct("<7I")


class SynFileError(ValueError):
    """Synthetic-set file violates a format invariant."""


@dataclass
class RunManifest:
    """Everything needed to reproduce and reinterpret a run.

    duration_sec is kept out of the serialized artifact (written as null) so
    identical runs stay byte-identical; callers that want timing read it from
    the in-memory object.
    """

    tool_version: str
    seed: int
    dataset: dict                 # {"path": ..., "sha256": ..., possibly "toy": {...}}
    distill: dict
    encoder: dict
    stats: dict                   # {"mean": [...], "std": [...]}
    duration_sec: float | None = None
    eval: dict = field(default_factory=dict)

    def to_dict(self, include_duration=False):
        d = asdict(self)
        if not include_duration:
            d["duration_sec"] = None
        return d

    def to_json(self, include_duration=False):
        return json.dumps(self.to_dict(include_duration), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def write_synthetic(path, syn, num_classes, manifest):
    """Serialize a synthetic set plus its manifest."""
    count, c, h, w = syn.images.data.shape
    if count != num_classes * syn.ipc:
        raise SynFileError(f"count {count} != num_classes {num_classes} * ipc {syn.ipc}")
    mdict = manifest.to_dict() if isinstance(manifest, RunManifest) else dict(manifest)
    mjson = json.dumps(mdict, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += _HEADER.pack(VERSION, count, c, h, w, num_classes, syn.ipc)
    blob += np.ascontiguousarray(syn.images.data, dtype="<f4").tobytes()
    blob += np.ascontiguousarray(syn.labels, dtype="<u2").tobytes()
    blob += struct.pack("<I", len(mjson))
    blob += mjson
    Path(path).write_bytes(bytes(blob))


def read_synthetic(path):
    """Parse and validate a DDS1 file; returns (SyntheticSet, manifest dict)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise SynFileError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 4 + _HEADER.size:
        raise SynFileError(f"{path}: truncated header")
    version, count, c, h, w, k, ipc = _HEADER.unpack_from(blob, 4)
    if version != VERSION:
        raise SynFileError(f"{path}: unsupported version {version}")
    if count != k * ipc:
        raise SynFileError(f"{path}: header count {count} != K {k} * ipc {ipc}")
    off = 4 + _HEADER.size
    pixel_bytes = count * c * h * w * 4
    if len(blob) < off + pixel_bytes + count * 2 + 4:
        raise SynFileError(
            f"{path}: payload length {len(blob) - off} inconsistent with header "
            f"count {count} ({pixel_bytes} pixel bytes expected)")
    pixels = np.frombuffer(blob, dtype="<f4", count=count * c * h * w,
                           offset=off).reshape(count, c, h, w)
    off += pixel_bytes
    labels = np.frombuffer(blob, dtype="<u2", count=count, offset=off).astype(np.int64)
    off += count * 2
    (mlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) != off + mlen:
        raise SynFileError(f"{path}: manifest length {mlen} inconsistent with file size")
    manifest = json.loads(blob[off:off + mlen].decode("utf-8"))
    syn = SyntheticSet(images=Tensor(pixels.copy(), requires_grad=True),
                       labels=labels, ipc=ipc)
    return syn, manifest
