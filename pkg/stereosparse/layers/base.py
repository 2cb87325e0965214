from abc import ABC, abstractmethod
from typing import Any, Optional, Tuple
import logging

import numpy as np

from stereosparse.core.errors import StereoSparseError
from stereosparse.models.network import LayerGeometry, LayerParams

class LayerError(StereoSparseError):
    """Raised when a layer fails outside the shared error types."""
    pass

Gradients = Tuple[Optional[np.ndarray], Optional[np.ndarray], Optional[np.ndarray]]

class BaseLayer(ABC):
    """A network layer: geometry plus the weights it applies."""

    def __init__(self, geometry: LayerGeometry, params: LayerParams):
        self.geometry = geometry
        self.params = params
        self.name = geometry.name
        self.logger = logging.getLogger(f"stereosparse.layer.{self.name}")

    @property
    def trainable(self) -> bool:
        return self.params.trainable

    def apply(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        """Run `forward`, logging and wrapping unexpected failures."""
        try:
            out, cache = self.forward(x)
            self.logger.debug(f"{tuple(x.shape)} -> {tuple(out.shape)}")
            return out, cache
        except StereoSparseError as e:
            self.logger.error(f"Forward pass failed: {e}")
            raise
        except Exception as e:
            self.logger.error(f"Forward pass failed: {e}")
            raise LayerError(f"layer {self.name} encountered an error: {e}") from e

    @abstractmethod
    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        """Map [b,t,h,w,c] inputs to outputs; also return what backward needs."""
        pass

    @abstractmethod
    def backward(self, dy: np.ndarray, cache: Any, need_input_grad: bool = True) -> Gradients:
        """Return (d input, d weights, d bias) for an upstream gradient dy."""
        pass
