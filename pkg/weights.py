# weights.py
"""
Weight archive: `<base>.json` manifest listing every tensor (name, shape,
byte offset) in archive order, plus `<base>.bin` holding the tensors as
little-endian float32, back to back in manifest order.
"""
from __future__ import annotations
from typing import Optional
import json
import logging
import os

import numpy as np
from pydantic import BaseModel, ValidationError

from config import ModelDims
from encoder import EncoderWeights, tensor_shapes
from errors import ContractViolation, WeightArchiveError

logger = logging.getLogger(__name__)

ARCHIVE_FORMAT = "alpine-weights/1"
_DTYPE = np.dtype("<f4")


class _TensorEntry(BaseModel):
    name: str
    shape: list[int]
    offset: int


class _Manifest(BaseModel):
    format: str
    dims: ModelDims
    total_bytes: int
    tensors: list[_TensorEntry]


def archive_paths(path: str) -> tuple[str, str]:
    base = path[: -len(".json")] if path.endswith(".json") else path
    base = base[: -len(".bin")] if base.endswith(".bin") else base
    return f"{base}.json", f"{base}.bin"


def save_weights(weights: EncoderWeights, path: str) -> tuple[str, str]:
    manifest_path, blob_path = archive_paths(path)
    parent = os.path.dirname(manifest_path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    entries = []
    offset = 0
    with open(blob_path, "wb") as blob:
        for name, arr in weights.tensors().items():
            data = np.ascontiguousarray(arr, dtype=_DTYPE)
            blob.write(data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "offset": offset})
            offset += data.nbytes

    manifest = {
        "format": ARCHIVE_FORMAT,
        "dims": weights.dims.model_dump(),
        "total_bytes": offset,
        "tensors": entries,
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info("Saved %d tensors (%d bytes) to %s", len(entries), offset, blob_path)
    return manifest_path, blob_path


def load_weights(path: str, dims: Optional[ModelDims] = None) -> EncoderWeights:
    """
    Load an archive. When `dims` is given it must match the dims recorded in
    the manifest.
    """
    manifest_path, blob_path = archive_paths(path)
    for p in (manifest_path, blob_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"Weight archive file not found: {p}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise WeightArchiveError(f"unreadable manifest {manifest_path}: {e}") from e

    if not isinstance(manifest, dict) or manifest.get("format") != ARCHIVE_FORMAT:
        found = manifest.get("format") if isinstance(manifest, dict) else None
        raise WeightArchiveError(f"{manifest_path}: unsupported format {found!r}")
    try:
        parsed = _Manifest.model_validate(manifest)
    except ValidationError as e:
        raise WeightArchiveError(f"{manifest_path}: malformed manifest: {e}") from e
    stored = parsed.dims
    if dims is not None and dims != stored:
        raise WeightArchiveError(f"{manifest_path}: archive dims {stored} differ from requested {dims}")

    entries = parsed.tensors
    expected_bytes = 0
    for e in entries:
        if e.offset != expected_bytes:
            raise WeightArchiveError(
                f"{manifest_path}: tensor {e.name} at offset {e.offset}, expected {expected_bytes}"
            )
        expected_bytes += int(np.prod(e.shape)) * _DTYPE.itemsize
    actual_bytes = os.path.getsize(blob_path)
    if expected_bytes != parsed.total_bytes or actual_bytes != expected_bytes:
        raise WeightArchiveError(
            f"{blob_path}: blob holds {actual_bytes} bytes, manifest describes {expected_bytes}"
        )

    blob = np.fromfile(blob_path, dtype=_DTYPE)
    tensors: dict[str, np.ndarray] = {}
    for e in entries:
        start = e.offset // _DTYPE.itemsize
        count = int(np.prod(e.shape))
        tensors[e.name] = (
            blob[start : start + count].reshape(e.shape).astype(np.float32)
        )

    missing = set(tensor_shapes(stored)) - set(tensors)
    if missing:
        raise WeightArchiveError(f"{manifest_path}: missing tensors {sorted(missing)[:5]}")
    try:
        weights = EncoderWeights.from_tensors(stored, tensors)
    except ContractViolation as e:
        raise WeightArchiveError(f"{manifest_path}: {e}") from e
    logger.info("Loaded %d tensors from %s", len(tensors), blob_path)
    return weights
