import logging
from typing import Optional

import numpy as np

from stereosparse.core.errors import ConfigurationError
from stereosparse.core.tensor import KernelStack
from stereosparse.models.network import LayerGeometry, LayerParams, NetworkParams, NetworkSpec

logger = logging.getLogger(__name__)

def _gaussian(rng: np.random.Generator, geometry: LayerGeometry, gain: float) -> np.ndarray:
    return rng.standard_normal(geometry.weight_shape) * np.sqrt(gain / geometry.fan_in)

def build_network(spec: NetworkSpec, dictionary: Optional[KernelStack] = None, seed: int = 1) -> NetworkParams:
    """Initialize every layer of a detector.

    Dictionary variants copy their first layer from `dictionary`; the others draw
    fan-in scaled Gaussian weights. Later layers are always Gaussian with zero bias.
    """
    variant = spec.variant
    if variant.requires_dictionary and dictionary is None:
        raise ConfigurationError(f"{variant.label} requires a dictionary")
    if not variant.requires_dictionary and dictionary is not None:
        raise ConfigurationError(f"{variant.label} does not take a dictionary")

    rng = np.random.default_rng(seed)
    geometry = spec.geometry()
    first = geometry[0]
    if dictionary is not None:
        if dictionary.weights.shape != first.weight_shape or dictionary.stride != first.stride:
            raise ConfigurationError(
                f"dictionary shape {dictionary.weights.shape} stride {dictionary.stride} does not match "
                f"first layer shape {first.weight_shape} stride {first.stride}"
            )
        weights = np.array(dictionary.weights, dtype=np.float64)
    else:
        weights = _gaussian(rng, first, 2.0)

    layers = [LayerParams(KernelStack(weights, first.stride), np.zeros(first.out_features),
                          trainable=variant.first_layer_trainable)]
    for g in geometry[1:]:
        gain = 2.0 if g.relu else 1.0
        layers.append(LayerParams(KernelStack(_gaussian(rng, g, gain), g.stride), np.zeros(g.out_features)))

    logger.debug(f"Built {variant.label} depth-{spec.depth} network with seed {seed}")
    return NetworkParams(layers)
