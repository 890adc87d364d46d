"""On-disk formats: point clouds (text and binary), checkpoints, JSON records.

Binary point cloud (little-endian)::

    b"PMD1" | u32 count | count * (f32 x, f32 y, f32 z)

Checkpoint (little-endian)::

    b"PMCK" | u32 version | u32 len | UTF-8 JSON header | u32 n_tensors |
    n_tensors * ( u32 len | UTF-8 name | u8 dtype | u32 ndim | ndim * u32 | raw values )

The JSON header holds the resolved run config and training metadata
(step, seeds). Dtype tags: 0 = f32, 1 = f64, 2 = i64.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

POINTS_MAGIC = b"PMD1"
CKPT_MAGIC = b"PMCK"
CKPT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class FormatError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# -- point clouds ------------------------------------------------------

def encode_points(points: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 3)
    return POINTS_MAGIC + struct.pack("<I", len(pts)) + pts.tobytes()


def decode_points(blob: bytes) -> np.ndarray:
    if blob[:4] != POINTS_MAGIC:
        raise FormatError("not a PMD1 point file (bad magic)")
    (n,) = struct.unpack_from("<I", blob, 4)
    body = blob[8:]
    if len(body) != 12 * n:
        raise FormatError(f"PMD1 payload holds {len(body)} bytes, expected {12 * n}")
    return np.frombuffer(body, dtype="<f4").reshape(n, 3).astype(np.float64)


def write_points(path, points: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        lines = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in np.asarray(points, dtype=np.float64).tolist())
        atomic_write(path, lines.encode())
    else:
        atomic_write(path, encode_points(points))


def read_points(path, expected_sha256: str | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"point file not found: {path}")
    blob = path.read_bytes()
    if expected_sha256 is not None and hashlib.sha256(blob).hexdigest() != expected_sha256:
        raise ChecksumError(f"checksum mismatch for {path}")
    if path.suffix == ".txt":
        rows = [line.split() for line in blob.decode().splitlines() if line.strip()]
        if any(len(r) != 3 for r in rows):
            raise FormatError(f"{path}: every line must hold exactly 'x y z'")
        return np.array(rows, dtype=np.float64).reshape(-1, 3)
    return decode_points(blob)


# -- checkpoints -------------------------------------------------------

def encode_checkpoint(tensors: dict[str, np.ndarray], header: dict) -> bytes:
    head = json.dumps(header, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(head)), head, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode()
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<BI", tag, arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()]
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"checkpoint format version {version} is not supported (this build reads {CKPT_VERSION})")
    off = 12
    header = json.loads(blob[off:off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode()
        off += nlen
        tag, ndim = struct.unpack_from("<BI", blob, off)
        off += 5
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dt = _DTYPES[tag]
        size = int(np.prod(shape)) * dt.itemsize
        tensors[name] = np.frombuffer(blob[off:off + size], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        off += size
    if off != len(blob):
        raise FormatError(f"checkpoint has {len(blob) - off} trailing bytes")
    return tensors, header


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict) -> None:
    atomic_write(path, encode_checkpoint(tensors, header))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
