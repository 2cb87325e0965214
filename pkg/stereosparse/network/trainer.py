"""Supervised training of the detector with Adam."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, MutableMapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from stereosparse.core.errors import ConfigurationError, DomainError, NonFiniteError, StereoSparseError
from stereosparse.core.tensor import KernelStack
from stereosparse.models.data import Example
from stereosparse.models.network import LayerParams, NetworkParams, NetworkSpec
from stereosparse.network.builder import build_network
from stereosparse.network.detector import backward, cross_entropy, first_layer_features, forward

logger = logging.getLogger(__name__)

class TrainingDivergenceError(StereoSparseError):
    """Raised when the training loss or its gradients stop being finite."""
    pass

@dataclass
class AdamState:
    """First and second moment estimates per trainable tensor."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams) -> 'AdamState':
        state = cls()
        for i, layer in enumerate(params.layers):
            if layer.trainable:
                for name, x in ((f"layer{i}.weights", layer.kernel.weights), (f"layer{i}.bias", layer.bias)):
                    state.m[name] = np.zeros_like(x)
                    state.v[name] = np.zeros_like(x)
        return state

    def update(self, name: str, x: np.ndarray, grad: np.ndarray, lr: float, step: int) -> np.ndarray:
        self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
        self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad ** 2
        m_hat = self.m[name] / (1.0 - self.beta1 ** step)
        v_hat = self.v[name] / (1.0 - self.beta2 ** step)
        return x - lr * m_hat / (np.sqrt(v_hat) + self.eps)

Batch = Tuple[np.ndarray, np.ndarray]

def train_step(params: NetworkParams, spec: NetworkSpec, batch: Batch, state: AdamState, lr: float,
               first_out: Optional[np.ndarray] = None) -> Tuple[NetworkParams, AdamState, float]:
    """One Adam step on a batch of (inputs, labels); returns new params, state and the batch loss."""
    if lr < 0:
        raise DomainError(f"learning rate must be >= 0, got {lr}")
    inputs, labels = batch
    try:
        fp = forward(params, spec, inputs, first_out)
        loss = cross_entropy(fp.probs, labels)
        if not np.isfinite(loss):
            raise NonFiniteError(f"loss is {loss}")
        grads = backward(params, spec, fp, labels)
    except NonFiniteError as e:
        logger.error(f"Training diverged: {e}")
        raise TrainingDivergenceError(f"non-finite values during training: {e}") from e

    state = AdamState({k: v.copy() for k, v in state.m.items()}, {k: v.copy() for k, v in state.v.items()},
                      state.step + 1, state.beta1, state.beta2, state.eps)
    layers = []
    for i, (layer, grad) in enumerate(zip(params.layers, grads)):
        if grad is None or not layer.trainable:
            layers.append(layer)
            continue
        d_weights, d_bias = grad
        weights = state.update(f"layer{i}.weights", layer.kernel.weights, d_weights, lr, state.step)
        bias = state.update(f"layer{i}.bias", layer.bias, d_bias, lr, state.step)
        layers.append(LayerParams(KernelStack(weights, layer.kernel.stride), bias, layer.trainable))
    return NetworkParams(layers), state, loss

def _mean_loss(params: NetworkParams, spec: NetworkSpec, examples: Sequence[Example],
               first: Optional[Sequence[np.ndarray]], batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        first_out = None if first is None else np.stack(first[start:start + batch_size])
        fp = forward(params, spec, np.stack([e.input for e in chunk]), first_out)
        total += cross_entropy(fp.probs, np.stack([e.labels for e in chunk])) * len(chunk)
    return total / len(examples)

def train_detector(spec: NetworkSpec, dataset: Sequence[Example], n_train_examples: int, epochs: int, seed: int,
                   dictionary: Optional[KernelStack] = None, batch_size: int = 16, lr: float = 1e-3,
                   workers: int = 1, first_cache: Optional[MutableMapping[str, np.ndarray]] = None,
                   ) -> Tuple[NetworkParams, List[float]]:
    """Train a detector on a seeded subset of `dataset`.

    Returns the trained parameters and the loss curve: the subset's mean loss
    before any update, then the mean loss of every epoch. Frozen first layers
    are evaluated once per example; `first_cache` (keyed by example id) lets
    callers share those outputs between runs.
    """
    if n_train_examples < 1:
        raise ConfigurationError(f"training subset must be non-empty, got {n_train_examples}")
    if n_train_examples > len(dataset):
        raise ConfigurationError(f"n_train {n_train_examples} exceeds the {len(dataset)} available examples")
    if epochs < 0 or batch_size < 1:
        raise ConfigurationError(f"epochs must be >= 0 and batch_size positive, got {epochs}, {batch_size}")

    params = build_network(spec, dictionary, seed)
    order = np.random.default_rng([seed, 1])
    subset = [dataset[i] for i in np.sort(order.permutation(len(dataset))[:n_train_examples])]

    first: Optional[List[np.ndarray]] = None
    if not params.layers[0].trainable:
        cache = first_cache if first_cache is not None else {}
        keys = [e.id or f"#{i}" for i, e in enumerate(subset)]
        missing = [i for i, k in enumerate(keys) if k not in cache]
        if missing:
            logger.info(f"Computing frozen first-layer features for {len(missing)} examples")
            outputs = first_layer_features(params, spec, [subset[i].input for i in missing], workers)
            for i, out in zip(missing, outputs):
                cache[keys[i]] = out
        first = [cache[k] for k in keys]

    state = AdamState.for_params(params)
    curve = [_mean_loss(params, spec, subset, first, batch_size)]
    logger.info(f"{spec.variant.label} depth {spec.depth} seed {seed}: initial loss {curve[0]:.6f}")

    for epoch in tqdm(range(epochs), desc=f"train {spec.variant.value}", disable=None):
        perm = order.permutation(len(subset))
        total = 0.0
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            inputs = np.stack([subset[i].input for i in idx])
            labels = np.stack([subset[i].labels for i in idx])
            first_out = None if first is None else np.stack([first[i] for i in idx])
            params, state, loss = train_step(params, spec, (inputs, labels), state, lr, first_out)
            total += loss * len(idx)
        curve.append(total / len(subset))
        logger.debug(f"Epoch {epoch + 1}/{epochs}: loss {curve[-1]:.6f}")

    logger.info(f"{spec.variant.label} depth {spec.depth} seed {seed}: final loss {curve[-1]:.6f}")
    return params, curve
