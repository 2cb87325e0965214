"""Dense tensor operations on channels-last arrays.

Every tensor is a numpy array laid out as [batch, time, height, width, channel],
row-major. Kernels are [features, time, height, width, in-channels]. All
convolutions are valid (unpadded) cross-correlations; callers pad explicitly.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from stereosparse.core.errors import DomainError, NonFiniteError, ShapeError

AXES = ("batch", "time", "height", "width", "channel")

Dims3 = Tuple[int, int, int]
Padding = Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]


@dataclass(frozen=True)
class KernelStack:
    """A bank of 3D kernels plus the stride they are applied with."""
    weights: np.ndarray
    stride: Dims3 = (1, 1, 1)

    def __post_init__(self) -> None:
        if self.weights.ndim != 5:
            raise ShapeError(
                f"kernel weights must be [features, t, kh, kw, cin], got shape {self.weights.shape}"
            )
        stride = tuple(int(s) for s in self.stride)
        if len(stride) != 3 or any(s < 1 for s in stride):
            raise DomainError(f"stride must be three positive integers, got {self.stride}")
        object.__setattr__(self, "stride", stride)

    @property
    def features(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel_size(self) -> Dims3:
        return tuple(self.weights.shape[1:4])

    @property
    def in_channels(self) -> int:
        return self.weights.shape[4]

    def with_weights(self, weights: np.ndarray) -> "KernelStack":
        """Return a stack with new weights and the same stride."""
        return KernelStack(weights, self.stride)


def _check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return x


def _require_rank5(x: np.ndarray, name: str) -> None:
    if x.ndim != 5:
        raise ShapeError(f"{name} must be [b, t, h, w, c], got shape {x.shape}")


def output_dims(input_dims: Sequence[int], kernel: Sequence[int], stride: Sequence[int]) -> Dims3:
    """Valid-correlation output extents for (t, h, w)."""
    dims = []
    for n, k, s in zip(input_dims, kernel, stride):
        if k > n:
            raise ShapeError(f"kernel {tuple(kernel)} exceeds input extents {tuple(input_dims)}")
        dims.append((n - k) // s + 1)
    return tuple(dims)


def correlate(x: np.ndarray, k: KernelStack) -> np.ndarray:
    """Strided valid cross-correlation: [b,t,h,w,cin] -> [b,t',h',w',features]."""
    _require_rank5(x, "input")
    if x.shape[4] != k.in_channels:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[4]} channels but kernel shape "
            f"{k.weights.shape} expects {k.in_channels}"
        )
    kt, kh, kw = k.kernel_size
    st, sh, sw = k.stride
    t_out, h_out, w_out = output_dims(x.shape[1:4], k.kernel_size, k.stride)
    # [b, T, H, W, cin, kt, kh, kw]
    windows = sliding_window_view(x, (kt, kh, kw), axis=(1, 2, 3))
    windows = windows[:, ::st, ::sh, ::sw][:, :t_out, :h_out, :w_out]
    out = np.tensordot(windows, k.weights, axes=([4, 5, 6, 7], [4, 1, 2, 3]))
    return _check_finite(out, "correlate")


def reconstruct(y: np.ndarray, k: KernelStack, input_dims: Optional[Sequence[int]] = None) -> np.ndarray:
    """Transposed correlation, the exact adjoint of `correlate`.

    With `input_dims` the output takes those (t, h, w) extents; otherwise the
    smallest extents whose correlation has y's shape.
    """
    _require_rank5(y, "activations")
    if y.shape[4] != k.features:
        raise ShapeError(
            f"activation shape {y.shape} has {y.shape[4]} features but kernel shape "
            f"{k.weights.shape} has {k.features}"
        )
    b, t_out, h_out, w_out, _ = y.shape
    kt, kh, kw = k.kernel_size
    st, sh, sw = k.stride
    if input_dims is None:
        input_dims = ((t_out - 1) * st + kt, (h_out - 1) * sh + kh, (w_out - 1) * sw + kw)
    else:
        input_dims = tuple(int(n) for n in input_dims)
        if output_dims(input_dims, k.kernel_size, k.stride) != (t_out, h_out, w_out):
            raise ShapeError(
                f"activation shape {y.shape} does not correlate back to input dims {input_dims} "
                f"with kernel shape {k.weights.shape} and stride {k.stride}"
            )
    # [b, T, H, W, kt, kh, kw, cin]
    cols = np.tensordot(y, k.weights, axes=([4], [0]))
    x = np.zeros((b, *input_dims, k.in_channels), dtype=np.result_type(y, k.weights))
    for i in range(kt):
        for j in range(kh):
            for l in range(kw):
                x[:, i:i + st * t_out:st, j:j + sh * h_out:sh, l:l + sw * w_out:sw, :] += cols[:, :, :, :, i, j, l, :]
    return _check_finite(x, "reconstruct")


def kernel_gradient(x: np.ndarray, dy: np.ndarray, k: KernelStack) -> np.ndarray:
    """Gradient of <correlate(x, k), dy> with respect to k.weights."""
    _require_rank5(x, "input")
    _require_rank5(dy, "output gradient")
    kt, kh, kw = k.kernel_size
    st, sh, sw = k.stride
    dims = output_dims(x.shape[1:4], k.kernel_size, k.stride)
    if dy.shape[:4] != (x.shape[0], *dims) or dy.shape[4] != k.features:
        raise ShapeError(
            f"output gradient shape {dy.shape} does not match correlate({x.shape}, {k.weights.shape})"
        )
    windows = sliding_window_view(x, (kt, kh, kw), axis=(1, 2, 3))
    windows = windows[:, ::st, ::sh, ::sw][:, :dims[0], :dims[1], :dims[2]]
    # [f, cin, kt, kh, kw]
    grad = np.tensordot(dy, windows, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
    return _check_finite(grad.transpose(0, 2, 3, 4, 1), "kernel_gradient")


def stats(x: np.ndarray) -> Tuple[float, float]:
    """Mean and population standard deviation over all elements."""
    if x.size == 0:
        raise DomainError("stats of an empty tensor is undefined")
    values = np.asarray(x, dtype=np.float64)
    mean = float(values.mean())
    std = float(np.sqrt(np.mean((values - mean) ** 2)))
    return mean, std


def _area_weights(source: int, target: int) -> np.ndarray:
    """[target, source] matrix averaging each fractional source box."""
    scale = source / target
    lo = np.arange(target)[:, None] * scale
    hi = lo + scale
    j = np.arange(source)[None, :]
    overlap = np.clip(np.minimum(j + 1, hi) - np.maximum(j, lo), 0.0, None)
    return overlap / scale


def downsample_area(x: np.ndarray, target: Tuple[int, int]) -> np.ndarray:
    """Area-average [b,t,h,w,c] down to (H, W)."""
    _require_rank5(x, "input")
    height, width = int(target[0]), int(target[1])
    h, w = x.shape[2], x.shape[3]
    if height < 1 or width < 1 or height > h or width > w:
        raise DomainError(f"cannot resample {h}x{w} to {height}x{width}; only downsampling is supported")
    rows = _area_weights(h, height)
    cols = _area_weights(w, width)
    out = np.einsum("Hh,bthwc,Ww->btHWc", rows, np.asarray(x, dtype=np.float64), cols)
    return _check_finite(out, "downsample_area")


def same_padding(kernel: Sequence[int], stride: Sequence[int]) -> Padding:
    """Spatial zero padding that maps extent n to n/s; time stays unpadded."""
    pads = [(0, 0)]
    for k, s in zip(kernel[1:], stride[1:]):
        total = max(int(k) - int(s), 0)
        pads.append((total // 2, total - total // 2))
    return tuple(pads)


def pad_spatial(x: np.ndarray, pads: Padding) -> np.ndarray:
    """Zero-pad the (t, h, w) axes of a [b,t,h,w,c] tensor."""
    if not any(lo or hi for lo, hi in pads):
        return x
    return np.pad(x, ((0, 0), *pads, (0, 0)))


def crop_spatial(x: np.ndarray, pads: Padding) -> np.ndarray:
    """Inverse of `pad_spatial`."""
    (t0, t1), (h0, h1), (w0, w1) = pads
    return x[:, t0:x.shape[1] - t1, h0:x.shape[2] - h1, w0:x.shape[3] - w1, :]
