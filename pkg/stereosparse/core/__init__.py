"""Tensor arithmetic and shared errors."""

from stereosparse.core.errors import (
    StereoSparseError,
    ShapeError,
    DomainError,
    ConfigurationError,
    NonFiniteError
)
from stereosparse.core.tensor import (
    KernelStack,
    correlate,
    reconstruct,
    kernel_gradient,
    stats,
    downsample_area,
    same_padding,
    pad_spatial,
    crop_spatial,
    output_dims
)

__all__ = [
    'StereoSparseError',
    'ShapeError',
    'DomainError',
    'ConfigurationError',
    'NonFiniteError',
    'KernelStack',
    'correlate',
    'reconstruct',
    'kernel_gradient',
    'stats',
    'downsample_area',
    'same_padding',
    'pad_spatial',
    'crop_spatial',
    'output_dims'
]
