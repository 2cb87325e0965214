"""The supervised window detector."""

from stereosparse.network.builder import build_network
from stereosparse.network.detector import ForwardPass, forward, backward, cross_entropy, first_layer_features, predict
from stereosparse.network.trainer import AdamState, TrainingDivergenceError, train_step, train_detector
from stereosparse.network.model_io import save_model, load_model

__all__ = [
    'build_network',
    'ForwardPass',
    'forward',
    'backward',
    'cross_entropy',
    'first_layer_features',
    'predict',
    'AdamState',
    'TrainingDivergenceError',
    'train_step',
    'train_detector',
    'save_model',
    'load_model'
]
