"""Binary and JSON codecs for features, checkpoints and reports.

Feature caches (``EVSF``)::

    magic "EVSF" | version u8 | ndim u8 | dims u32 * ndim | float32 LE row-major

Checkpoints (``EVCK``)::

    magic "EVCK" | version u8 | count u32 |
    count * (name_len u16 | utf-8 name | ndim u8 | dims u32 * ndim | float64 LE) |
    sha256(payload) (32 raw bytes)
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from app.utils.errors import CheckpointError

FEATURE_MAGIC = b"EVSF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"EVCK"
CHECKPOINT_VERSION = 1


def atomic_write_bytes(path, payload):
    """Write bytes to path through a temporary file in the same directory"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def encode_features(matrix):
    array = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    header = FEATURE_MAGIC + struct.pack("<BB", FEATURE_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes(order="C")


def decode_features(payload):
    if payload[:4] != FEATURE_MAGIC:
        raise CheckpointError("not a feature file (bad magic)")
    version, ndim = struct.unpack_from("<BB", payload, 4)
    if version != FEATURE_VERSION:
        raise CheckpointError(f"unsupported feature file version {version}")
    shape = struct.unpack_from(f"<{ndim}I", payload, 6)
    offset = 6 + 4 * ndim
    data = np.frombuffer(payload, dtype="<f4", offset=offset)
    if data.size != int(np.prod(shape)):
        raise CheckpointError("truncated feature file")
    return data.reshape(shape).astype(np.float64)


def save_features(path, matrix):
    atomic_write_bytes(path, encode_features(matrix))


def load_features(path):
    with open(path, "rb") as f:
        return decode_features(f.read())


def _checkpoint_payload(params):
    parts = [CHECKPOINT_MAGIC, struct.pack("<BI", CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        array = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes(order="C"))
    return b"".join(parts)


def checkpoint_hash(params):
    """SHA-256 of the checkpoint payload for a name -> array mapping"""
    return hashlib.sha256(_checkpoint_payload(params)).hexdigest()


def save_checkpoint(path, params):
    """Write params to path; returns the content hash stored in the footer"""
    payload = _checkpoint_payload(params)
    digest = hashlib.sha256(payload).digest()
    atomic_write_bytes(path, payload + digest)
    return digest.hex()


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: content hash mismatch")
    version, count = struct.unpack_from("<BI", payload, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 9
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", payload, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(payload, dtype="<f8", count=size, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * size
    return params


def file_hash(path):
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def dump_json(path, obj):
    """Deterministic JSON (sorted keys, fixed indentation)"""
    text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
