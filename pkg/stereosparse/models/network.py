from typing import List, Optional, Dict, Any, Tuple
from dataclasses import dataclass, field, asdict, replace
from enum import Enum

import numpy as np

from stereosparse.core.errors import ConfigurationError, DomainError, ShapeError
from stereosparse.core.tensor import KernelStack, Padding, same_padding
from stereosparse.models.base import LcaConfig

class VariantKind(str, Enum):
    """First-layer encoding scheme of a detector."""
    CONV_SUP = "conv_sup"
    SPARSE_UNSUP = "sparse_unsup"
    CONV_RAND = "conv_rand"
    CONV_UNSUP = "conv_unsup"
    CONV_FINETUNE = "conv_finetune"

    @property
    def requires_dictionary(self) -> bool:
        return self in (VariantKind.SPARSE_UNSUP, VariantKind.CONV_UNSUP, VariantKind.CONV_FINETUNE)

    @property
    def first_layer_trainable(self) -> bool:
        return self in (VariantKind.CONV_SUP, VariantKind.CONV_FINETUNE)

    @property
    def is_sparse(self) -> bool:
        return self is VariantKind.SPARSE_UNSUP

    @property
    def label(self) -> str:
        """Display name, e.g. 'SparseUnsup'."""
        return "".join(part.title() for part in self.value.split("_"))

    @classmethod
    def parse(cls, value: Any) -> 'VariantKind':
        """Accept 'sparse_unsup', 'sparse-unsup' or 'SparseUnsup'."""
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        for kind in cls:
            if text.lower().replace("-", "_") == kind.value or text == kind.label:
                return kind
        raise ConfigurationError(f"Unknown variant: {value}. Must be one of {[k.value for k in cls]}")

@dataclass(frozen=True)
class LayerGeometry:
    """Kernel extents, stride and explicit padding of one layer."""
    name: str
    kernel: Tuple[int, int, int]
    stride: Tuple[int, int, int]
    pad: Padding
    in_features: int
    out_features: int
    relu: bool

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        return (self.out_features, *self.kernel, self.in_features)

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.kernel)) * self.in_features

MID_STRIDES = {2: [], 3: [(1, 2, 2)], 4: [(1, 2, 2), (1, 1, 1)]}

@dataclass(frozen=True)
class NetworkSpec:
    """Layered detector description. Defaults give the 3x64x256x6 -> 4x8 geometry."""
    variant: VariantKind = VariantKind.CONV_SUP
    depth: int = 3
    frames: int = 3
    height: int = 64
    width: int = 256
    channels: int = 6
    features: int = 64
    mid_features: int = 64
    first_kernel: Tuple[int, int, int] = (3, 8, 8)
    first_stride: Tuple[int, int, int] = (1, 2, 2)
    mid_kernel: Tuple[int, int, int] = (1, 3, 3)
    window: Tuple[int, int] = (16, 32)
    lca: LcaConfig = field(default_factory=LcaConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", VariantKind.parse(self.variant))
        for name in ("first_kernel", "first_stride", "mid_kernel", "window"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if isinstance(self.lca, dict):
            object.__setattr__(self, "lca", LcaConfig.from_dict(self.lca))

    @property
    def input_shape(self) -> Tuple[int, int, int, int]:
        return (self.frames, self.height, self.width, self.channels)

    @property
    def grid(self) -> Tuple[int, int]:
        """Window lattice (rows, cols)."""
        return (self.height // self.window[0], self.width // self.window[1])

    def geometry(self) -> List[LayerGeometry]:
        """Per-layer geometry: first layer, (depth - 2) mid layers, head."""
        if self.depth not in MID_STRIDES:
            raise ConfigurationError(f"depth must be 2, 3 or 4, got {self.depth}")
        if self.first_kernel[0] != self.frames:
            raise ConfigurationError(
                f"first-layer kernel {self.first_kernel} must span all {self.frames} frames"
            )
        if self.height % self.window[0] or self.width % self.window[1]:
            raise ConfigurationError(f"window {self.window} does not tile {self.height}x{self.width}")
        _, sh, sw = self.first_stride
        if self.height % sh or self.width % sw:
            raise ConfigurationError(f"stride {self.first_stride} does not divide {self.height}x{self.width}")

        layers = [LayerGeometry("first", self.first_kernel, self.first_stride,
                                same_padding(self.first_kernel, self.first_stride),
                                self.channels, self.features, relu=not self.variant.is_sparse)]
        cells = (self.height // sh, self.width // sw)
        in_features = self.features
        for i, stride in enumerate(MID_STRIDES[self.depth]):
            if cells[0] % stride[1] or cells[1] % stride[2]:
                raise ConfigurationError(f"mid layer {i + 1} stride {stride} does not divide {cells}")
            layers.append(LayerGeometry(f"mid{i + 1}", self.mid_kernel, stride,
                                        same_padding(self.mid_kernel, stride),
                                        in_features, self.mid_features, relu=True))
            cells = (cells[0] // stride[1], cells[1] // stride[2])
            in_features = self.mid_features

        cell_h, cell_w = self.height // cells[0], self.width // cells[1]
        if self.window[0] % cell_h or self.window[1] % cell_w:
            raise ConfigurationError(
                f"window {self.window} is not a whole number of {cell_h}x{cell_w} feature cells"
            )
        head = (1, self.window[0] // cell_h, self.window[1] // cell_w)
        layers.append(LayerGeometry("head", head, head, ((0, 0), (0, 0), (0, 0)),
                                    in_features, 1, relu=False))
        return layers

    def with_overrides(self, **kwargs) -> 'NetworkSpec':
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        for name in ("first_kernel", "first_stride", "mid_kernel", "window"):
            data[name] = list(data[name])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'NetworkSpec':
        return cls(**data)

@dataclass
class LayerParams:
    """Learnable weights of one layer."""
    kernel: KernelStack
    bias: np.ndarray
    trainable: bool = True

@dataclass
class NetworkParams:
    """Weights of every layer, first layer at index 0."""
    layers: List[LayerParams] = field(default_factory=list)

    def copy(self) -> 'NetworkParams':
        return NetworkParams([
            LayerParams(layer.kernel.with_weights(layer.kernel.weights.copy()), layer.bias.copy(), layer.trainable)
            for layer in self.layers
        ])

    def tensors(self) -> Dict[str, np.ndarray]:
        """Named arrays for serialization."""
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"layer{i}.weights"] = layer.kernel.weights
            named[f"layer{i}.bias"] = layer.bias
        return named

@dataclass
class DetectionGrid:
    """Per-window vehicle probabilities and, when known, ground-truth labels."""
    probs: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.probs).all() or self.probs.min() < 0 or self.probs.max() > 1:
            raise DomainError("detection probabilities must be finite and within [0, 1]")
        if self.labels is not None and self.labels.shape != self.probs.shape:
            raise ShapeError(f"labels shape {self.labels.shape} does not match probs {self.probs.shape}")
