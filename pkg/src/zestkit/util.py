"""Small shared helpers: seed derivation, canonical JSON, atomic binary files.

Every artifact file in the toolkit (models, plans, signatures, adversarial
batches) uses one container layout so round trips are bit-exact:

    magic "ZSTK" | u32 LE header length | header JSON (utf-8) | payload

The header records the container kind, a format version, a free-form
``meta`` dict, the ordered array directory (name/dtype/shape), and a
sha256 of the payload. Arrays are stored little-endian, C-order.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import IntegrityError

_MAGIC = b"ZSTK"
_VERSION = 1

# dtypes allowed in containers; bools are widened to u1 on disk
_DTYPES = {"<f8": np.float64, "<i8": np.int64, "|u1": np.uint8}


def derived_seed(master: int, label: str) -> int:
    """Deterministic child seed for a labeled pipeline stage."""
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable hex digest of a JSON-serializable configuration."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via temp file + rename so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _disk_dtype(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return "|u1"
    if arr.dtype == np.float64:
        return "<f8"
    if arr.dtype == np.int64:
        return "<i8"
    raise TypeError(f"unsupported container dtype: {arr.dtype}")


def container_bytes(kind: str, meta: dict, arrays: "dict[str, np.ndarray]") -> bytes:
    """Serialize a container to bytes (deterministic for identical inputs)."""
    payload = bytearray()
    directory = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = _disk_dtype(arr)
        payload += arr.astype(dt, copy=False).tobytes(order="C")
        directory.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
    header = {
        "magic_kind": kind,
        "format_version": _VERSION,
        "meta": meta,
        "arrays": directory,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    hdr = canonical_json(header).encode("utf-8")
    return _MAGIC + struct.pack("<I", len(hdr)) + hdr + bytes(payload)


def write_container(path, kind: str, meta: dict, arrays: "dict[str, np.ndarray]") -> None:
    atomic_write_bytes(path, container_bytes(kind, meta, arrays))


def read_container(path, kind: str):
    """Load a container, verifying magic, kind, and payload checksum.

    Returns ``(meta, arrays)``; bool arrays come back as uint8 and must be
    reinterpreted by the caller that stored them.
    """
    path = os.fspath(path)
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise IntegrityError(f"{path}: not a toolkit container file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise IntegrityError(f"{path}: corrupt container header ({e})") from e
    if header.get("magic_kind") != kind:
        raise IntegrityError(
            f"{path}: expected container kind {kind!r}, found {header.get('magic_kind')!r}")
    if header.get("format_version") != _VERSION:
        raise IntegrityError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = blob[8 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise IntegrityError(f"{path}: payload checksum mismatch")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dt).itemsize
        if offset + nbytes > len(payload):
            raise IntegrityError(f"{path}: truncated payload for array {entry['name']!r}")
        arr = np.frombuffer(payload, dtype=entry["dtype"], count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).copy()
        offset += nbytes
    return header["meta"], arrays


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
