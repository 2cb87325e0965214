"""STEN tensor files and SNET model bundles.

STEN: b"STEN", u8 version (1), u8 ndims, ndims x u32 LE dims, float32 LE data.
SNET: b"SNET", u32 LE header length, UTF-8 JSON index, concatenated STEN blobs.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from stereosparse.core.errors import StereoSparseError

logger = logging.getLogger(__name__)

STEN_MAGIC = b"STEN"
STEN_VERSION = 1
MODEL_MAGIC = b"SNET"

PathLike = Union[str, Path]


class StenFormatError(StereoSparseError):
    """Raised when a tensor or model file is malformed."""
    pass


def encode_sten(x: np.ndarray) -> bytes:
    """Serialize an array as a STEN blob."""
    x = np.asarray(x)
    if x.ndim > 255:
        raise StenFormatError(f"cannot store {x.ndim} dimensions")
    header = STEN_MAGIC + struct.pack("<BB", STEN_VERSION, x.ndim)
    header += struct.pack(f"<{x.ndim}I", *x.shape)
    return header + np.ascontiguousarray(x, dtype="<f4").tobytes()


def decode_sten(blob: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Parse one STEN blob starting at `offset`; return (array, next offset)."""
    if blob[offset:offset + 4] != STEN_MAGIC:
        raise StenFormatError(f"bad STEN magic at byte {offset}")
    if len(blob) < offset + 6:
        raise StenFormatError(f"truncated STEN header at byte {offset}")
    version, ndims = struct.unpack_from("<BB", blob, offset + 4)
    if version != STEN_VERSION:
        raise StenFormatError(f"unsupported STEN version {version} at byte {offset + 4}")
    pos = offset + 6
    if len(blob) < pos + 4 * ndims:
        raise StenFormatError(f"truncated STEN dims at byte {pos}")
    dims = struct.unpack_from(f"<{ndims}I", blob, pos)
    pos += 4 * ndims
    count = int(np.prod(dims, dtype=np.int64))
    end = pos + 4 * count
    if len(blob) < end:
        raise StenFormatError(f"truncated STEN data at byte {len(blob)}, expected {end}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
    return data.reshape(dims).astype(np.float64), end


def write_sten(path: PathLike, x: np.ndarray) -> None:
    """Write an array to a STEN file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sten(x))
    logger.debug(f"Wrote tensor {tuple(np.shape(x))} to {path}")


def read_sten(path: PathLike) -> np.ndarray:
    """Read a STEN file."""
    blob = Path(path).read_bytes()
    x, end = decode_sten(blob)
    if end != len(blob):
        raise StenFormatError(f"{path}: {len(blob) - end} trailing bytes after tensor data")
    return x


def write_bundle(path: PathLike, header: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> None:
    """Write named tensors plus a JSON header as one SNET file."""
    blobs: List[bytes] = []
    index = []
    offset = 0
    for name, x in tensors.items():
        blob = encode_sten(x)
        index.append({"name": name, "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = dict(header, tensors=index)
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MODEL_MAGIC + struct.pack("<I", len(text)) + text + b"".join(blobs))
    logger.debug(f"Wrote {len(tensors)} tensors to {path}")


def read_bundle(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read an SNET file written by `write_bundle`."""
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC or len(blob) < 8:
        raise StenFormatError(f"{path}: not a model file")
    (length,) = struct.unpack_from("<I", blob, 4)
    try:
        header = json.loads(blob[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StenFormatError(f"{path}: bad model header: {e}")
    base = 8 + length
    tensors = {}
    for entry in header.get("tensors", []):
        x, end = decode_sten(blob, base + entry["offset"])
        if end != base + entry["offset"] + entry["length"]:
            raise StenFormatError(f"{path}: tensor {entry['name']} length mismatch")
        tensors[entry["name"]] = x
    return header, tensors
