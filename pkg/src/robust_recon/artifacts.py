"""Binary artifact container and run manifests.

Every array the pipeline persists goes through one little-endian format:

    magic "RRC1" | kind u8 | ndim u64 | dims u64[ndim] | payload f64[]

Payload is row-major. Kind 3 (spectrum set) is complex and stores each
element as (re, im); all other kinds are real. Readers validate magic,
kind, dimension count and exact payload length and raise IntegrityError
on any mismatch, so a truncated or bit-flipped file never parses.

manifest.json maps artifact names to sha256 hex digests. It is written
with sorted keys and no timestamps, so reruns with the same seed produce
byte-identical bytes. Wall-clock timing lives in sidecar files that are
deliberately not part of the manifest.

All writes go through a temp file and os.replace, so a crash cannot leave
a half-written artifact under the final name.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import IntegrityError

__all__ = [
    "KIND_MATRIX",
    "KIND_VECTOR",
    "KIND_SPECTRUM_SET",
    "KIND_IMAGE",
    "write_artifact",
    "read_artifact",
    "atomic_write_bytes",
    "atomic_write_text",
    "sha256_file",
    "MANIFEST_NAME",
    "write_manifest",
    "load_manifest",
    "verify_manifest",
]

MAGIC = b"RRC1"
KIND_MATRIX = 1
KIND_VECTOR = 2
KIND_SPECTRUM_SET = 3
KIND_IMAGE = 4

_KIND_NDIM = {KIND_MATRIX: 2, KIND_VECTOR: 1, KIND_SPECTRUM_SET: 3, KIND_IMAGE: 3}
_MAX_NDIM = 8

MANIFEST_NAME = "manifest.json"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_artifact(path, kind: int, array: np.ndarray) -> None:
    """Serialize one array. The kind fixes both rank and realness."""
    if kind not in _KIND_NDIM:
        raise ValueError(f"unknown artifact kind {kind}")
    array = np.asarray(array)
    if array.ndim != _KIND_NDIM[kind]:
        raise ValueError(
            f"kind {kind} stores {_KIND_NDIM[kind]}-d arrays, got {array.ndim}-d")
    if kind == KIND_SPECTRUM_SET:
        payload = np.ascontiguousarray(array, dtype="<c16")
    else:
        if np.iscomplexobj(array):
            raise ValueError(f"kind {kind} stores real arrays")
        payload = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<B", kind) + struct.pack("<Q", array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    atomic_write_bytes(path, header + payload.tobytes())


def read_artifact(path):
    """Read one artifact; returns (kind, array). Raises IntegrityError on
    a malformed or truncated file and OSError when the file is missing."""
    data = Path(path).read_bytes()
    name = os.fspath(path)
    if len(data) < 13:
        raise IntegrityError(f"{name}: too short for an artifact header")
    if data[:4] != MAGIC:
        raise IntegrityError(f"{name}: bad magic {data[:4]!r}")
    kind = data[4]
    if kind not in _KIND_NDIM:
        raise IntegrityError(f"{name}: unknown artifact kind {kind}")
    (ndim,) = struct.unpack_from("<Q", data, 5)
    if ndim != _KIND_NDIM[kind] or ndim > _MAX_NDIM:
        raise IntegrityError(f"{name}: kind {kind} with {ndim} dims")
    offset = 13
    if len(data) < offset + 8 * ndim:
        raise IntegrityError(f"{name}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}Q", data, offset)
    offset += 8 * ndim
    count = 1
    for d in dims:
        count *= d
    itemsize = 16 if kind == KIND_SPECTRUM_SET else 8
    if len(data) - offset != count * itemsize:
        raise IntegrityError(
            f"{name}: payload is {len(data) - offset} bytes, expected {count * itemsize}")
    dtype = "<c16" if kind == KIND_SPECTRUM_SET else "<f8"
    array = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(dims)
    return kind, array.astype(np.complex128 if kind == KIND_SPECTRUM_SET else np.float64)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_bytes(entries: dict) -> bytes:
    return (json.dumps({"files": dict(sorted(entries.items()))}, indent=2,
                       sort_keys=True) + "\n").encode("utf-8")


def write_manifest(directory, entries: dict) -> None:
    """Write {name: sha256} for a run directory, deterministically."""
    atomic_write_bytes(Path(directory) / MANIFEST_NAME, _manifest_bytes(entries))


def load_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: malformed manifest: {exc}") from exc
    files = raw.get("files")
    if not isinstance(files, dict):
        raise IntegrityError(f"{path}: manifest lacks a files table")
    return files


def verify_manifest(directory, names=None) -> dict:
    """Check recorded hashes against the files on disk.

    names limits the check to those artifacts (all recorded otherwise).
    Returns the manifest entries; raises IntegrityError on any mismatch
    or missing record.
    """
    directory = Path(directory)
    entries = load_manifest(directory)
    for name in (entries if names is None else names):
        if name not in entries:
            raise IntegrityError(f"{name}: not recorded in manifest")
        actual = sha256_file(directory / name)
        if actual != entries[name]:
            raise IntegrityError(f"{name}: sha256 mismatch, file was modified")
    return entries
