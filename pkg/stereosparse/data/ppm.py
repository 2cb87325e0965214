"""Binary P6 PPM images, maxval 255."""
import logging
from typing import Tuple

import numpy as np

from stereosparse.core.errors import ShapeError, StereoSparseError

logger = logging.getLogger(__name__)

_WHITESPACE = b" \t\n\r\x0b\x0c"

class PPMParseError(StereoSparseError):
    """Raised on a malformed PPM file; the message names the byte offset."""
    pass

def _skip(data: bytes, pos: int) -> int:
    """Skip whitespace and '#' comments."""
    while pos < len(data):
        c = data[pos:pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    return pos

def _header_int(data: bytes, pos: int, name: str) -> Tuple[int, int]:
    pos = _skip(data, pos)
    start = pos
    while pos < len(data) and data[pos:pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PPMParseError(f"expected {name} at byte {start}")
    return int(data[start:pos]), pos

def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 file into an [H, W, 3] uint8 array."""
    if data[:2] != b"P6":
        raise PPMParseError("bad magic at byte 0, expected P6")
    width, pos = _header_int(data, 2, "width")
    height, pos = _header_int(data, pos, "height")
    maxval, pos = _header_int(data, pos, "maxval")
    if maxval != 255:
        raise PPMParseError(f"unsupported maxval {maxval} before byte {pos}; only 255 is accepted")
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise PPMParseError(f"expected whitespace after header at byte {pos}")
    pos += 1
    size = width * height * 3
    if len(data) < pos + size:
        raise PPMParseError(f"truncated pixel data at byte {len(data)}, expected {pos + size} bytes")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=pos).reshape(height, width, 3).copy()

def write_ppm(image: np.ndarray) -> bytes:
    """Encode an [H, W, 3] image (values clipped to 0-255) as P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"PPM images must be [H, W, 3], got shape {image.shape}")
    pixels = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()

def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_ppm(f.read())

def save_ppm(path: str, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(write_ppm(image))
    logger.debug(f"Wrote {image.shape[1]}x{image.shape[0]} image to {path}")
