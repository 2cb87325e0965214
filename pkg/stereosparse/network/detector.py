"""Forward and backward passes of the window detector."""
import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np

from stereosparse.core.errors import ShapeError
from stereosparse.layers import BaseLayer, ConvLayer, SparseCodingLayer
from stereosparse.models.data import Example
from stereosparse.models.network import DetectionGrid, NetworkParams, NetworkSpec
from stereosparse.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7

LayerGrads = Optional[Tuple[np.ndarray, np.ndarray]]

@dataclass
class ForwardPass:
    """Head logits [b, rows, cols] plus per-layer caches for backward."""
    logits: np.ndarray
    caches: List[Any] = field(default_factory=list)

    @property
    def probs(self) -> np.ndarray:
        return sigmoid(self.logits)

    def grids(self, labels: Optional[np.ndarray] = None) -> List[DetectionGrid]:
        probs = self.probs
        return [DetectionGrid(probs[i], None if labels is None else labels[i]) for i in range(probs.shape[0])]

    @property
    def grid(self) -> DetectionGrid:
        """Grid of the first batch item."""
        return self.grids()[0]

def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))

def make_layers(params: NetworkParams, spec: NetworkSpec) -> List[BaseLayer]:
    geometry = spec.geometry()
    if len(geometry) != len(params.layers):
        raise ShapeError(f"{len(params.layers)} parameter layers for a {len(geometry)}-layer spec")
    layers: List[BaseLayer] = []
    for i, (g, p) in enumerate(zip(geometry, params.layers)):
        if p.kernel.weights.shape != g.weight_shape:
            raise ShapeError(f"layer {g.name} weights {p.kernel.weights.shape} do not match {g.weight_shape}")
        if i == 0 and spec.variant.is_sparse:
            layers.append(SparseCodingLayer(g, p, spec.lca))
        else:
            layers.append(ConvLayer(g, p))
    return layers

def as_batch(x: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Accept [t,h,w,c] or [b,t,h,w,c] inputs of exactly the spec's extents."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[1:] != spec.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match network input {spec.input_shape}")
    return x

def first_layer_features(params: NetworkParams, spec: NetworkSpec, inputs: Sequence[np.ndarray],
                         workers: int = 1) -> List[np.ndarray]:
    """First-layer outputs of each input, one example at a time."""
    first = make_layers(params, spec)[0]
    return ordered_map(lambda x: first.apply(as_batch(x, spec))[0][0], list(inputs), workers)

def forward(params: NetworkParams, spec: NetworkSpec, x: np.ndarray,
            first_out: Optional[np.ndarray] = None) -> ForwardPass:
    """Run the detector on a batch.

    When `first_out` holds precomputed first-layer outputs the first layer is
    skipped and its cache entry is None.
    """
    layers = make_layers(params, spec)
    caches: List[Any] = []
    if first_out is None:
        h, cache = layers[0].apply(as_batch(x, spec))
    else:
        h, cache = np.asarray(first_out, dtype=np.float64), None
        if h.ndim == 4:
            h = h[None]
    caches.append(cache)
    for layer in layers[1:]:
        h, cache = layer.apply(h)
        caches.append(cache)
    if h.shape[1:] != (1, *spec.grid, 1):
        raise ShapeError(f"head output {h.shape} is not a {spec.grid} window grid")
    return ForwardPass(h[:, 0, :, :, 0], caches)

def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy over all windows, probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeError(f"probs shape {probs.shape} does not match labels shape {labels.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))))

def backward(params: NetworkParams, spec: NetworkSpec, fp: ForwardPass, labels: np.ndarray) -> List[LayerGrads]:
    """Gradients of `cross_entropy` for every trainable layer; None for frozen ones.

    Activations of a frozen first layer are constants; nothing flows into it.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != fp.logits.shape:
        raise ShapeError(f"labels shape {labels.shape} does not match logits shape {fp.logits.shape}")
    layers = make_layers(params, spec)
    grads: List[LayerGrads] = [None] * len(layers)
    lowest = 0 if layers[0].trainable else 1
    dy = ((fp.probs - labels) / labels.size)[:, None, :, :, None]
    for i in range(len(layers) - 1, lowest - 1, -1):
        dx, d_weights, d_bias = layers[i].backward(dy, fp.caches[i], need_input_grad=i > lowest)
        if layers[i].trainable:
            grads[i] = (d_weights, d_bias)
        dy = dx
    return grads

def predict(params: NetworkParams, spec: NetworkSpec, examples: Sequence[Union[Example, np.ndarray]],
            workers: int = 1, first_out: Optional[Sequence[np.ndarray]] = None) -> List[DetectionGrid]:
    """Detection grids for each example; labels are attached when known."""
    def run(i: int) -> DetectionGrid:
        item = examples[i]
        x = item.input if isinstance(item, Example) else item
        labels = item.labels[None] if isinstance(item, Example) else None
        fp = forward(params, spec, x, None if first_out is None else first_out[i])
        return fp.grids(labels)[0]

    return ordered_map(run, range(len(examples)), workers)
