"""
checkpoint file: magic, uvarint format version, then records. tensor payloads
are a uvarint dtype code, uvarint rank, uvarint extents and little-endian values
"""

import os
from typing import Dict, Tuple
import numpy as np
import uvarint
from structlog import get_logger
from dvae.storage import compression as cmp
from dvae.storage.record import Record, scan, split_header
from dvae import errors as err, const as k

_LOGGER = get_logger()

_DTYPES = {k.DTYPE_F32: np.dtype("<f4"), k.DTYPE_I64: np.dtype("<i8")}


def encode_array(array: np.ndarray) -> bytes:
    """floats are stored as float32, integers as int64"""

    array = np.asarray(array)
    code = k.DTYPE_I64 if np.issubdtype(array.dtype, np.integer) else k.DTYPE_F32
    out = bytearray(uvarint.encode(code))
    out += uvarint.encode(array.ndim)

    for extent in array.shape:
        out += uvarint.encode(extent)

    out += np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
    return bytes(out)


def decode_array(payload: bytes) -> np.ndarray:
    code, rank = uvarint.cut(2, payload).integers

    if code not in _DTYPES:
        raise err.CheckpointError(f"unknown dtype code {code}")

    decoded = uvarint.cut(2 + rank, payload)
    shape = tuple(decoded.integers[2:])
    dtype = _DTYPES[code]
    raw = bytes(decoded.rest)
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize

    if len(raw) != expected:
        raise err.CheckpointError(f"tensor payload has {len(raw)} bytes, shape {shape} needs {expected}")

    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def write_bundle(
    path: str,
    config_text: str,
    arrays: Dict[str, np.ndarray],
    compression: cmp.Compression = cmp.Compression(),
):
    """config record first, then one record per named array. atomic via rename"""

    buf = bytearray(k.MAGIC)
    buf += uvarint.encode(k.FORMAT_VERSION)
    buf += Record(name=k.REC_CONFIG, payload=config_text.encode()).encode(compression)

    for name, array in arrays.items():
        buf += Record(name=name, payload=encode_array(array)).encode(compression)

    tmp = f"{path}.tmp"

    with open(tmp, "wb") as handle:
        handle.write(bytes(buf))

    os.replace(tmp, path)
    _LOGGER.debug("checkpoint.write", path=path, records=len(arrays) + 1, size=len(buf))


def read_bundle(path: str) -> Tuple[str, Dict[str, np.ndarray]]:
    """(config text, named arrays)"""

    with open(path, "rb") as handle:
        buf = handle.read()

    version, rest = split_header(buf, k.MAGIC)

    if version != k.FORMAT_VERSION:
        raise err.VersionMismatch(f"{path}: format version {version}, this build reads {k.FORMAT_VERSION}")

    config_text = None
    arrays: Dict[str, np.ndarray] = {}

    for record in scan(rest):
        if record.name == k.REC_CONFIG:
            config_text = record.payload.decode()
        else:
            arrays[record.name] = decode_array(record.payload)

    if config_text is None:
        raise err.CheckpointError(f"{path}: no config record")

    return config_text, arrays
