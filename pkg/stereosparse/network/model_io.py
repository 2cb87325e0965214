import logging
from typing import Tuple

from stereosparse.core.tensor import KernelStack
from stereosparse.models.network import LayerParams, NetworkParams, NetworkSpec
from stereosparse.utils.sten import PathLike, StenFormatError, read_bundle, write_bundle

logger = logging.getLogger(__name__)

MODEL_FORMAT = "stereosparse-model"

def save_model(path: PathLike, params: NetworkParams, spec: NetworkSpec) -> None:
    """Write the spec and every layer's weights as one SNET file."""
    header = {
        "format": MODEL_FORMAT,
        "variant": spec.variant.value,
        "spec": spec.to_dict(),
        "trainable": [layer.trainable for layer in params.layers],
    }
    write_bundle(path, header, params.tensors())
    logger.info(f"Saved {spec.variant.label} model to {path}")

def load_model(path: PathLike) -> Tuple[NetworkParams, NetworkSpec]:
    header, tensors = read_bundle(path)
    if header.get("format") != MODEL_FORMAT:
        raise StenFormatError(f"{path}: unknown model format {header.get('format')!r}")
    spec = NetworkSpec.from_dict(header["spec"])
    layers = []
    for i, (g, trainable) in enumerate(zip(spec.geometry(), header["trainable"])):
        try:
            weights, bias = tensors[f"layer{i}.weights"], tensors[f"layer{i}.bias"]
        except KeyError as e:
            raise StenFormatError(f"{path}: missing tensor {e}")
        layers.append(LayerParams(KernelStack(weights, g.stride), bias, bool(trainable)))
    return NetworkParams(layers), spec
