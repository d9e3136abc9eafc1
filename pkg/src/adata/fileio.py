"""On-disk formats: binary tensor containers and corpus line files.

Tensor container layout (all integers little-endian):

    bytes 0..7    magic tag  b"ADATA\\x00\\x00\\x01"
    bytes 8..11   dtype code u32 (0 = IEEE754 float32 little-endian)
    bytes 12..15  rank u32
    then          rank x u32 dims
    then          row-major payload, 4 * prod(dims) bytes

A JSON sidecar at <path>.json carries {"name", "role", "seed"}; role must be
one of features / saliency / text_embedding / tokens. Writes are fully
deterministic, so a round trip is bitwise lossless.

Corpus lines pair space-separated token ids with a comma-separated label:

    <id id id ...>\\t<p1,p2,...,pn>
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import GranularityCorpus
from .errors import (
    BadMagic,
    InputError,
    TruncatedPayload,
    UnknownDtype,
)

MAGIC = b"ADATA\x00\x00\x01"
DTYPE_FLOAT32 = 0
TENSOR_ROLES = ("features", "saliency", "text_embedding", "tokens")


@dataclass
class TensorContainer:
    """A float32 array plus its sidecar metadata."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype="<f4")
        if arr.ndim < 1:
            arr = arr.reshape(1)
        self.values = arr
        role = self.meta.get("role")
        if role is not None and role not in TENSOR_ROLES:
            raise InputError(f"unknown tensor role {role!r}")


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_tensor(container: TensorContainer, path) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(container.values, dtype="<f4")
    header = MAGIC
    header += struct.pack("<I", DTYPE_FLOAT32)
    header += struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    path.write_bytes(header + arr.tobytes())
    sidecar_path(path).write_text(
        json.dumps(container.meta, sort_keys=True) + "\n"
    )


def read_tensor(path) -> TensorContainer:
    path = Path(path)
    if not path.exists():
        raise InputError(f"tensor file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"bad magic in {path}: expected {MAGIC!r}")
    offset = len(MAGIC)
    if len(blob) < offset + 8:
        raise TruncatedPayload(f"{path} ends inside the header")
    (dtype_code,) = struct.unpack_from("<I", blob, offset)
    if dtype_code != DTYPE_FLOAT32:
        raise UnknownDtype(f"unknown dtype code {dtype_code} in {path}")
    (rank,) = struct.unpack_from("<I", blob, offset + 4)
    if rank < 1:
        raise InputError(f"tensor rank must be >= 1, got {rank} in {path}")
    offset += 8
    if len(blob) < offset + 4 * rank:
        raise TruncatedPayload(f"{path} ends inside the dims block")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    payload = blob[offset:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"payload of {path} is {len(payload)} bytes, dims {dims} imply {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return TensorContainer(values=values, meta=meta)


def write_corpus(corpus: GranularityCorpus, path) -> None:
    lines = []
    for ids, label in corpus.items:
        id_part = " ".join(str(i) for i in ids)
        label_part = ",".join(repr(float(v)) for v in label)
        lines.append(f"{id_part}\t{label_part}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_corpus(path) -> GranularityCorpus:
    path = Path(path)
    if not path.exists():
        raise InputError(f"corpus file not found: {path}")
    items = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected '<ids>\\t<label>'")
        try:
            ids = tuple(int(t) for t in parts[0].split())
            label = np.array([float(v) for v in parts[1].split(",")])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        items.append((ids, label))
    return GranularityCorpus(items=tuple(items))
