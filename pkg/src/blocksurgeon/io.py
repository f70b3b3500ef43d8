"""On-disk formats: raw float blobs with JSON manifests, plus checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np


class ArtifactError(Exception):
    """Base class for problems with files in a workspace."""


class MissingArtifactError(ArtifactError):
    pass


class CorruptArtifactError(ArtifactError):
    pass


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dump_json(path: Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptArtifactError(f"{path} is not valid JSON: {e}") from None


def write_blob(path: Path, arr: np.ndarray, dtype: str) -> str:
    data = np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes()
    Path(path).write_bytes(data)
    return sha256_bytes(data)


def read_blob(path: Path, dtype: str, shape, digest: str | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing blob {path}")
    data = path.read_bytes()
    if digest is not None and sha256_bytes(data) != digest:
        raise CorruptArtifactError(f"checksum mismatch for {path}")
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise CorruptArtifactError(f"{path} holds {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype=np.dtype(dtype)).astype(np.float64).reshape(shape)


def save_checkpoint(directory: Path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """``manifest.json`` (name, shape, byte offset per tensor) plus ``weights.f64``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    blob = b"".join(chunks)
    (directory / "weights.f64").write_bytes(blob)
    manifest = {"tensors": entries, "bytes": offset, "sha256": sha256_bytes(blob)}
    if meta:
        manifest["meta"] = meta
    dump_json(directory / "manifest.json", manifest)


def load_checkpoint(directory: Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = load_json(directory / "manifest.json")
    blob_path = directory / "weights.f64"
    if not blob_path.exists():
        raise MissingArtifactError(f"missing blob {blob_path}")
    blob = blob_path.read_bytes()
    if len(blob) != manifest.get("bytes") or sha256_bytes(blob) != manifest.get("sha256"):
        raise CorruptArtifactError(f"checkpoint blob {blob_path} does not match its manifest")
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"]))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"])
        out[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return out, manifest.get("meta", {})
