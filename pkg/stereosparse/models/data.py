from typing import List, Optional, Dict, Any, Tuple
from dataclasses import dataclass, field, asdict

import numpy as np

from stereosparse.core.errors import DomainError, ShapeError

VEHICLE_CLASSES = ("Car", "Van", "Truck")

@dataclass
class StereoClip:
    """Three time-ordered stereo frame pairs, each [frames, H, W, 3] uint8, oldest first."""
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self) -> None:
        if self.left.ndim != 4 or self.left.shape[-1] != 3:
            raise ShapeError(f"left view must be [frames, H, W, 3], got {self.left.shape}")
        if self.left.shape != self.right.shape:
            raise ShapeError(f"left view {self.left.shape} and right view {self.right.shape} differ")

    @property
    def frame_size(self) -> Tuple[int, int]:
        """(height, width) of every frame."""
        return self.left.shape[1], self.left.shape[2]

@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in the left camera's last frame, pixel coordinates."""
    class_name: str
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self) -> None:
        if not (self.right > self.left and self.bottom > self.top):
            raise DomainError(
                f"degenerate box ({self.left}, {self.top}, {self.right}, {self.bottom})"
            )

    def scaled(self, sx: float, sy: float) -> 'BoundingBox':
        return BoundingBox(self.class_name, self.left * sx, self.top * sy, self.right * sx, self.bottom * sy)

    def clamped(self, width: float, height: float) -> Optional['BoundingBox']:
        """Clip to [0, width] x [0, height]; None when nothing is left inside."""
        left, right = max(self.left, 0.0), min(self.right, float(width))
        top, bottom = max(self.top, 0.0), min(self.bottom, float(height))
        if right <= left or bottom <= top:
            return None
        return BoundingBox(self.class_name, left, top, right, bottom)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

@dataclass
class Example:
    """One normalized network input [frames, H, W, 6] with its window label grid."""
    input: np.ndarray
    labels: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return str(self.meta.get("id", ""))

@dataclass(frozen=True)
class SynthParams:
    """Scene generator settings. Disparities and velocities are in pixels."""
    height: int = 64
    width: int = 256
    n_objects: int = 2
    disparity_range: Tuple[int, int] = (2, 12)
    disparity_levels: Optional[Tuple[int, ...]] = None
    velocity_gain: float = 0.5
    noise: float = 4.0
    object_height: Tuple[int, int] = (10, 24)
    object_width: Tuple[int, int] = (20, 48)
    background_disparity: int = 0
    frames: int = 3

    def __post_init__(self) -> None:
        for name in ("disparity_range", "object_height", "object_width"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.disparity_levels is not None:
            object.__setattr__(self, "disparity_levels", tuple(int(v) for v in self.disparity_levels))
        if self.n_objects < 0:
            raise DomainError(f"n_objects must be >= 0, got {self.n_objects}")
        if self.disparity_range[0] > self.disparity_range[1]:
            raise DomainError(f"empty disparity range {self.disparity_range}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SynthParams':
        return cls(**data)

@dataclass
class SynthScene:
    """A rendered clip, its vehicle boxes and the last-frame left-view disparity map."""
    clip: StereoClip
    boxes: List[BoundingBox]
    disparity: np.ndarray
    object_disparities: List[int] = field(default_factory=list)
