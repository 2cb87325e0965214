from typing import Optional, Tuple

import numpy as np

from stereosparse.core.tensor import pad_spatial
from stereosparse.layers.base import BaseLayer, Gradients, LayerError
from stereosparse.models.base import LcaConfig
from stereosparse.models.network import LayerGeometry, LayerParams
from stereosparse.solvers.lca import lca_encode

class SparseCodingLayer(BaseLayer):
    """LCA activations of the padded input against a fixed dictionary.

    Emits the raw signed activations with no bias or ReLU. Every example is
    encoded on its own so the output does not depend on batch composition.
    """

    def __init__(self, geometry: LayerGeometry, params: LayerParams, lca: Optional[LcaConfig] = None):
        super().__init__(geometry, params)
        self.lca = lca or LcaConfig()

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, None]:
        padded = pad_spatial(x, self.geometry.pad)
        codes = []
        for item in padded:
            state = lca_encode(item[None], self.params.kernel, self.lca)
            self.logger.debug(f"LCA: {state.iterations} iterations, nnz {state.energy.nnz}/{state.a.size}")
            codes.append(state.a[0])
        return np.stack(codes), None

    def backward(self, dy: np.ndarray, cache: None, need_input_grad: bool = True) -> Gradients:
        raise LayerError("sparse coding layer is not differentiable; its activations are treated as inputs")
