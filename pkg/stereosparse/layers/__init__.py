"""Layer objects composing the detector."""

from stereosparse.layers.base import BaseLayer, LayerError
from stereosparse.layers.conv import ConvLayer
from stereosparse.layers.sparse import SparseCodingLayer

__all__ = [
    'BaseLayer',
    'LayerError',
    'ConvLayer',
    'SparseCodingLayer'
]
