from typing import Tuple

import numpy as np

from stereosparse.core.tensor import correlate, crop_spatial, kernel_gradient, pad_spatial, reconstruct
from stereosparse.layers.base import BaseLayer, Gradients

ConvCache = Tuple[np.ndarray, np.ndarray]

class ConvLayer(BaseLayer):
    """Zero padding, strided correlation, bias and an optional ReLU."""

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        """Correlation plus bias, before any nonlinearity."""
        padded = pad_spatial(x, self.geometry.pad)
        return correlate(padded, self.params.kernel) + self.params.bias

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, ConvCache]:
        padded = pad_spatial(x, self.geometry.pad)
        z = correlate(padded, self.params.kernel) + self.params.bias
        out = np.maximum(z, 0.0) if self.geometry.relu else z
        return out, (padded, z)

    def backward(self, dy: np.ndarray, cache: ConvCache, need_input_grad: bool = True) -> Gradients:
        padded, z = cache
        # ReLU subgradient is 0 at 0
        dz = dy * (z > 0) if self.geometry.relu else dy
        d_weights = kernel_gradient(padded, dz, self.params.kernel)
        d_bias = dz.sum(axis=(0, 1, 2, 3))
        if not need_input_grad:
            return None, d_weights, d_bias
        dx = reconstruct(dz, self.params.kernel, padded.shape[1:4])
        return crop_spatial(dx, self.geometry.pad), d_weights, d_bias
