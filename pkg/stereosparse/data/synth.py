"""Synthetic stereo-video scenes and planted sparse-coding data.

Scenes are textured rectangles ("vehicles") over a textured background. A
point at left-view column x appears at right-view column x - d, where d is
its disparity; nearer objects have larger disparity and move faster.
"""
import logging
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from stereosparse.core.errors import DomainError, StereoSparseError
from stereosparse.core.tensor import KernelStack
from stereosparse.models.data import VEHICLE_CLASSES, BoundingBox, StereoClip, SynthParams, SynthScene

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 100
BACKGROUND_CELL = 8

class GenerationError(StereoSparseError):
    """Raised when objects cannot be placed in a scene."""
    pass

def _background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    rows = -(-height // BACKGROUND_CELL)
    cols = -(-width // BACKGROUND_CELL)
    coarse = rng.uniform(40.0, 200.0, size=(rows, cols, 3))
    return np.repeat(np.repeat(coarse, BACKGROUND_CELL, axis=0), BACKGROUND_CELL, axis=1)[:height, :width]

def _overlaps(a: Tuple[int, int, int, int], b: Tuple[int, int, int, int]) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]

def synth_scene(seed: int, params: Optional[SynthParams] = None) -> SynthScene:
    """Render one deterministic clip with its last-frame boxes and disparity map."""
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    H, W, T = p.height, p.width, p.frames
    bg_d = p.background_disparity
    if bg_d < 0 or bg_d >= W:
        raise DomainError(f"background disparity must lie in [0, {W}), got {bg_d}")

    canvas = _background(rng, H, W + bg_d)
    bg_left, bg_right = canvas[:, :W], canvas[:, bg_d:W + bg_d]

    objects = []
    placed: List[Tuple[int, int, int, int]] = []
    for n in range(p.n_objects):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            h = int(rng.integers(p.object_height[0], p.object_height[1] + 1))
            w = int(rng.integers(p.object_width[0], p.object_width[1] + 1))
            if p.disparity_levels:
                d = int(rng.choice(p.disparity_levels))
            else:
                d = int(rng.integers(p.disparity_range[0], p.disparity_range[1] + 1))
            v = p.velocity_gain * d * (1.0 if rng.random() < 0.5 else -1.0)
            offsets = [-int(round(v * (T - 1 - t))) for t in range(T)]
            lo, hi = d - min(offsets), W - w - max(offsets)
            if h > H or hi < lo:
                continue
            x = int(rng.integers(lo, hi + 1))
            y = int(rng.integers(0, H - h + 1))
            box = (x, y, x + w, y + h)
            if any(_overlaps(box, other) for other in placed):
                continue
            color = rng.uniform(0.0, 255.0, size=3)
            patch = np.clip(color + rng.uniform(-30.0, 30.0, size=(h, w, 3)), 0.0, 255.0)
            placed.append(box)
            objects.append((d, x, y, w, h, offsets, patch, str(rng.choice(VEHICLE_CLASSES))))
            break
        else:
            raise GenerationError(
                f"seed {seed}: could not place object {n + 1} of {p.n_objects} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )

    # far objects first so nearer ones occlude them
    objects.sort(key=lambda o: o[0])
    left = np.empty((T, H, W, 3))
    right = np.empty((T, H, W, 3))
    disparity = np.full((H, W), float(bg_d))
    for t in range(T):
        left[t], right[t] = bg_left, bg_right
        for d, x, y, w, h, offsets, patch, _ in objects:
            xt = x + offsets[t]
            left[t, y:y + h, xt:xt + w] = patch
            right[t, y:y + h, xt - d:xt - d + w] = patch
    for d, x, y, w, h, _, _, _ in objects:
        disparity[y:y + h, x:x + w] = d

    if p.noise > 0:
        left += rng.normal(0.0, p.noise, size=left.shape)
        right += rng.normal(0.0, p.noise, size=right.shape)
    clip = StereoClip(np.clip(np.rint(left), 0, 255).astype(np.uint8),
                      np.clip(np.rint(right), 0, 255).astype(np.uint8))
    boxes = [BoundingBox(cls, x, y, x + w, y + h) for d, x, y, w, h, _, _, cls in objects]
    return SynthScene(clip, boxes, disparity, [o[0] for o in objects])

def recover_disparity(left: np.ndarray, right: np.ndarray, box: BoundingBox, max_disparity: int) -> int:
    """Disparity of the box content by SSD block matching against the right view."""
    gray_left = np.asarray(left, dtype=np.float64).mean(axis=-1)
    gray_right = np.asarray(right, dtype=np.float64).mean(axis=-1)
    top, bottom = int(np.floor(box.top)), int(np.ceil(box.bottom))
    x0, x1 = int(np.floor(box.left)), int(np.ceil(box.right))
    block = gray_left[top:bottom, x0:x1]
    best, best_cost = 0, np.inf
    for d in range(min(max_disparity, x0) + 1):
        cost = float(np.sum((block - gray_right[top:bottom, x0 - d:x1 - d]) ** 2))
        if cost < best_cost:
            best, best_cost = d, cost
    return best

def planted_atoms(n: int, kernel: Sequence[int], channels: int, seed: int) -> KernelStack:
    """n random unit-norm atoms [n, kt, kh, kw, channels]."""
    weights = np.random.default_rng(seed).standard_normal((n, *kernel, channels))
    norms = np.linalg.norm(weights.reshape(n, -1), axis=1)
    return KernelStack(weights / norms.reshape(n, 1, 1, 1, 1))

def planted_sparse_batches(atoms: KernelStack, k: int = 2, noise: float = 0.01, seed: int = 0,
                           amplitude: Tuple[float, float] = (0.5, 1.5)) -> Iterator[np.ndarray]:
    """Endless samples, each a sum of k distinct atoms with random signed amplitudes plus Gaussian noise."""
    if not 0 < k <= atoms.features:
        raise DomainError(f"k must lie in [1, {atoms.features}], got {k}")
    rng = np.random.default_rng(seed)
    while True:
        chosen = rng.choice(atoms.features, size=k, replace=False)
        coeffs = rng.uniform(*amplitude, size=k) * rng.choice([-1.0, 1.0], size=k)
        sample = np.tensordot(coeffs, atoms.weights[chosen], axes=1)
        yield sample + noise * rng.standard_normal(sample.shape)
