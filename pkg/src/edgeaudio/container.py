"""Binary tensor container: JSON manifest plus a little-endian raw blob.

Layout::

    b"EATC"  magic
    uint16   format version
    uint32   manifest length in bytes
    manifest UTF-8 JSON
    blob     concatenated tensor bytes (little-endian, row-major)

The manifest lists every tensor (name, shape, dtype, offset, nbytes,
optional quant params), the blob length and SHA-256, and free-form
metadata.  Used for spectrograms, single tensors and model weights alike.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContainerError, ManifestError
from .tensor.quant import QuantParams

MAGIC = b"EATC"
VERSION = 1
_HEADER = struct.Struct("<4sHI")

DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int8": np.dtype("i1"),
    "uint8": np.dtype("u1"),
    "int16": np.dtype("<i2"),
    "uint16": np.dtype("<u2"),
    "int32": np.dtype("<i4"),
    "uint32": np.dtype("<u4"),
    "int64": np.dtype("<i8"),
}


@dataclass
class Container:
    tensors: dict[str, np.ndarray]
    quant: dict[str, QuantParams] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _dtype_name(a: np.ndarray) -> str:
    for name, dt in DTYPES.items():
        if a.dtype.kind == dt.kind and a.dtype.itemsize == dt.itemsize:
            return name
    raise ContainerError(f"unsupported dtype {a.dtype}")


def encode(container: Container) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in container.tensors.items():
        arr = np.asarray(arr)
        dname = _dtype_name(arr)
        raw = np.ascontiguousarray(arr, dtype=DTYPES[dname]).tobytes()
        entry = {"name": name, "shape": list(arr.shape), "dtype": dname,
                 "offset": offset, "nbytes": len(raw)}
        if name in container.quant:
            entry["quant"] = container.quant[name].to_dict()
        entries.append(entry)
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "version": VERSION,
        "endianness": "little",
        "tensors": entries,
        "blob_nbytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "metadata": container.metadata,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return _HEADER.pack(MAGIC, VERSION, len(mbytes)) + mbytes + blob


def decode(data: bytes) -> Container:
    if len(data) < _HEADER.size:
        raise ManifestError("file too short for a container header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("not a tensor container (bad magic)")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    start = _HEADER.size
    if len(data) < start + mlen:
        raise ManifestError("manifest truncated")
    try:
        manifest = json.loads(data[start:start + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    blob = data[start + mlen:]
    try:
        expected = int(manifest["blob_nbytes"])
        entries = manifest["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"manifest missing field: {exc}") from exc
    if len(blob) < expected:
        raise ManifestError(f"blob truncated: {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise ContainerError("trailing bytes after blob")
    if hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise ContainerError("blob checksum mismatch")
    if manifest.get("endianness", "little") != "little":
        raise ContainerError("only little-endian containers are supported")
    tensors, quant = {}, {}
    for e in entries:
        try:
            dt = DTYPES[e["dtype"]]
            shape = tuple(int(d) for d in e["shape"])
            off, nbytes = int(e["offset"]), int(e["nbytes"])
            name = e["name"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad tensor entry {e!r}: {exc}") from exc
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise ContainerError(f"tensor {name!r}: shape {shape} does not match {nbytes} bytes")
        if off < 0 or off + nbytes > expected:
            raise ContainerError(f"tensor {name!r} lies outside the blob")
        tensors[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize,
                                      offset=off).reshape(shape).copy()
        if "quant" in e:
            quant[name] = QuantParams.from_dict(e["quant"])
    return Container(tensors, quant, manifest.get("metadata", {}))


def write_container(path: str | Path, container: Container) -> None:
    Path(path).write_bytes(encode(container))


def read_container(path: str | Path) -> Container:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc}") from exc
    return decode(data)


def emit_tensor_container(tensor: np.ndarray, path: str | Path, quant: QuantParams | None = None,
                          metadata: dict | None = None, name: str = "tensor") -> None:
    """Write a single tensor."""
    write_container(path, Container({name: np.asarray(tensor)},
                                    {name: quant} if quant is not None else {},
                                    dict(metadata or {}, primary=name)))


def read_tensor_container(path: str | Path) -> tuple[np.ndarray, QuantParams | None, dict]:
    """Read a single-tensor container; returns ``(array, quant or None, metadata)``."""
    c = read_container(path)
    name = c.metadata.get("primary")
    if name is None:
        if len(c.tensors) != 1:
            raise ContainerError("container holds several tensors and names no primary one")
        name = next(iter(c.tensors))
    if name not in c.tensors:
        raise ManifestError(f"primary tensor {name!r} missing")
    return c.tensors[name], c.quant.get(name), c.metadata
