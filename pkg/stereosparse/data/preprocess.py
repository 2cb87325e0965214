"""Network inputs and window label grids from stereo clips."""
import logging
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np

from stereosparse.core.tensor import downsample_area, stats
from stereosparse.models.data import BoundingBox, Example, StereoClip

logger = logging.getLogger(__name__)

INPUT_SIZE = (64, 256)
WINDOW = (16, 32)

def window_labels(boxes: Iterable[BoundingBox], size: Tuple[int, int] = INPUT_SIZE,
                  window: Tuple[int, int] = WINDOW) -> np.ndarray:
    """Binary [rows, cols] grid; a window is positive when any box overlaps it with positive area.

    Windows are half-open: window (r, c) spans rows [wh*r, wh*(r+1)) and
    columns [ww*c, ww*(c+1)).
    """
    rows, cols = size[0] // window[0], size[1] // window[1]
    row_lo = np.arange(rows) * window[0]
    col_lo = np.arange(cols) * window[1]
    labels = np.zeros((rows, cols))
    for box in boxes:
        dy = np.minimum(box.bottom, row_lo + window[0]) - np.maximum(box.top, row_lo)
        dx = np.minimum(box.right, col_lo + window[1]) - np.maximum(box.left, col_lo)
        labels[np.ix_(dy > 0, dx > 0)] = 1.0
    return labels

def stack_views(clip: StereoClip) -> np.ndarray:
    """[frames, H, W, 6]: channels 0-2 left RGB, 3-5 right RGB."""
    return np.concatenate([clip.left, clip.right], axis=-1).astype(np.float64)

def preprocess(clip: StereoClip, boxes: Iterable[BoundingBox], meta: Optional[Dict[str, Any]] = None,
               size: Tuple[int, int] = INPUT_SIZE, window: Tuple[int, int] = WINDOW) -> Example:
    """Downsample, stack and globally normalize a clip; rescale its boxes to label windows."""
    meta = dict(meta or {})
    height, width = clip.frame_size
    x = downsample_area(stack_views(clip)[None], size)[0]
    mean, std = stats(x)
    if std <= 1e-12:
        logger.warning(f"Constant clip {meta.get('id', '')}; normalizing with std = 1")
        std = 1.0
        meta["degenerate"] = True
    sy, sx = size[0] / height, size[1] / width
    scaled = [b.scaled(sx, sy).clamped(size[1], size[0]) for b in boxes]
    meta.update(scale=[sx, sy], mean=mean, std=std)
    return Example((x - mean) / std, window_labels([b for b in scaled if b is not None], size, window), meta)
