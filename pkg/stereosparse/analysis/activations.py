"""Activation overlays and depth-selectivity of first-layer features."""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from stereosparse.core.errors import ConfigurationError, DomainError, ShapeError
from stereosparse.core.tensor import KernelStack, output_dims
from stereosparse.data.ppm import save_ppm
from stereosparse.models.base import LcaConfig
from stereosparse.models.data import Example
from stereosparse.models.network import LayerGeometry, NetworkParams, NetworkSpec, VariantKind
from stereosparse.network.builder import build_network
from stereosparse.network.detector import first_layer_features

logger = logging.getLogger(__name__)

ActivationSet = Union[np.ndarray, Sequence[np.ndarray]]

def _magnitudes(activations: ActivationSet) -> np.ndarray:
    if isinstance(activations, np.ndarray):
        return np.abs(activations).ravel()
    return np.concatenate([np.abs(np.asarray(a)).ravel() for a in activations])

def sparsity_match_threshold(activations: ActivationSet, target_nnz: int) -> float:
    """Largest survivor count not above target_nnz: count(|a| > t) <= target_nnz, maximal.

    Returns +inf for a zero target and a value just below zero when every
    activation may survive.
    """
    mags = _magnitudes(activations)
    if target_nnz < 0 or target_nnz > mags.size:
        raise DomainError(f"target nnz must lie in [0, {mags.size}], got {target_nnz}")
    if target_nnz == 0:
        return float("inf")
    if target_nnz == mags.size:
        return float(np.nextafter(0.0, -1.0))
    ranked = np.sort(mags)[::-1]
    return float(ranked[target_nnz])

def apply_threshold(activations: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(np.abs(activations) > threshold, activations, 0.0)

def _receptive_field(index: int, kernel: int, stride: int, pad_lo: int, extent: int) -> Tuple[int, int]:
    lo = index * stride - pad_lo
    return max(lo, 0), min(lo + kernel, extent)

def activation_overlay(frame: np.ndarray, activations: np.ndarray, geometry: LayerGeometry,
                       path: Optional[Union[str, Path]] = None) -> np.ndarray:
    """Grayscale frame with the green channel set from |activation| over each receptive field.

    `activations` is one feature's [h', w'] map aligned to the frame by the
    layer geometry. Pixels covered by several activations take the largest.
    """
    frame = np.asarray(frame, dtype=np.float64)
    gray = frame.mean(axis=-1) if frame.ndim == 3 else frame
    H, W = gray.shape
    (_, (ph0, ph1), (pw0, pw1)) = geometry.pad
    _, kh, kw = geometry.kernel
    _, sh, sw = geometry.stride
    expected = output_dims((1, H + ph0 + ph1, W + pw0 + pw1), (1, kh, kw), (1, sh, sw))[1:]
    activations = np.asarray(activations, dtype=np.float64)
    if activations.shape != expected:
        raise ShapeError(f"activation shape {activations.shape} does not align with frame {gray.shape}; "
                         f"expected {expected}")

    lo, hi = gray.min(), gray.max()
    base = (gray - lo) / (hi - lo) * 255.0 if hi > lo else np.full_like(gray, 128.0)
    image = np.repeat(base[:, :, None], 3, axis=2)

    mags = np.abs(activations)
    peak = mags.max() if mags.size else 0.0
    if peak > 0:
        green = np.zeros_like(gray)
        for i, j in zip(*np.nonzero(mags)):
            r0, r1 = _receptive_field(i, kh, sh, ph0, H)
            c0, c1 = _receptive_field(j, kw, sw, pw0, W)
            green[r0:r1, c0:c1] = np.maximum(green[r0:r1, c0:c1], mags[i, j] / peak * 255.0)
        covered = green > 0
        image[:, :, 1][covered] = green[covered]
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    if path is not None:
        save_ppm(str(path), image)
    return image

def cell_disparity(disparity: np.ndarray, geometry: LayerGeometry, cells: Tuple[int, int]) -> np.ndarray:
    """Disparity at the centre of each feature cell's receptive field."""
    H, W = disparity.shape
    (_, (ph0, _), (pw0, _)) = geometry.pad
    _, kh, kw = geometry.kernel
    _, sh, sw = geometry.stride
    rows = np.clip(np.arange(cells[0]) * sh - ph0 + (kh - 1) // 2, 0, H - 1)
    cols = np.clip(np.arange(cells[1]) * sw - pw0 + (kw - 1) // 2, 0, W - 1)
    return disparity[np.ix_(rows, cols)]

def disparity_histograms(activations: Sequence[np.ndarray], disparities: Sequence[np.ndarray],
                         geometry: LayerGeometry, levels: Sequence[float]) -> np.ndarray:
    """[features, levels] activation mass per disparity level (nearest level per cell)."""
    levels = np.asarray(sorted(levels), dtype=np.float64)
    hist = None
    for a, d in zip(activations, disparities):
        a = np.asarray(a)
        a = a.reshape(a.shape[-3], a.shape[-2], a.shape[-1]) if a.ndim == 4 else a
        cells = cell_disparity(np.asarray(d), geometry, a.shape[:2])
        bins = np.abs(cells[:, :, None] - levels[None, None, :]).argmin(axis=-1).ravel()
        mags = np.abs(a).reshape(-1, a.shape[-1])
        if hist is None:
            hist = np.zeros((a.shape[-1], levels.size))
        for f in range(a.shape[-1]):
            hist[f] += np.bincount(bins, weights=mags[:, f], minlength=levels.size)
    if hist is None:
        raise DomainError("no activations to histogram")
    return hist

def selectivity_index(histograms: np.ndarray) -> np.ndarray:
    """Max-bin mass over total mass per feature; NaN for features that never fire."""
    histograms = np.asarray(histograms, dtype=np.float64)
    total = histograms.sum(axis=-1)
    index = np.full(total.shape, np.nan)
    active = total > 0
    index[active] = histograms[active].max(axis=-1) / total[active]
    return index

def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else float("nan")

@dataclass
class SelectivityReport:
    """Per-feature selectivity of sparse codes versus a sparsity-matched convolutional control."""
    sparse_index: np.ndarray
    control_index: np.ndarray
    threshold: float
    sparse_nnz: int
    control_survivors: int
    levels: List[float]

    @property
    def sparse_mean(self) -> float:
        return _nanmean(self.sparse_index)

    @property
    def control_mean(self) -> float:
        return _nanmean(self.control_index)

def depth_selectivity_report(sparse_codes: Sequence[np.ndarray], control_codes: Sequence[np.ndarray],
                             disparities: Sequence[np.ndarray], geometry: LayerGeometry,
                             levels: Optional[Sequence[float]] = None) -> SelectivityReport:
    """Selectivity of sparse codes and of control activations thresholded to the same nnz."""
    if not len(sparse_codes) == len(control_codes) == len(disparities):
        raise ShapeError("sparse codes, control activations and disparity maps must pair up")
    if levels is None:
        levels = sorted({float(v) for d in disparities for v in np.unique(np.rint(d))})
    nnz = int(sum(np.count_nonzero(a) for a in sparse_codes))
    threshold = sparsity_match_threshold(control_codes, nnz)
    control = [apply_threshold(np.asarray(c), threshold) for c in control_codes]
    survivors = int(sum(np.count_nonzero(c) for c in control))
    report = SelectivityReport(
        sparse_index=selectivity_index(disparity_histograms(sparse_codes, disparities, geometry, levels)),
        control_index=selectivity_index(disparity_histograms(control, disparities, geometry, levels)),
        threshold=threshold, sparse_nnz=nnz, control_survivors=survivors, levels=list(levels),
    )
    logger.info(f"Depth selectivity: sparse {report.sparse_mean:.4f}, matched control {report.control_mean:.4f} "
                f"(nnz {nnz}, control survivors {survivors})")
    return report

def write_selectivity_csv(report: SelectivityReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["feature", "sparse_index", "control_index"])
        for i, (s, c) in enumerate(zip(report.sparse_index, report.control_index)):
            writer.writerow([i, "" if np.isnan(s) else f"{s:.6f}", "" if np.isnan(c) else f"{c:.6f}"])
        writer.writerow(["mean", f"{report.sparse_mean:.6f}", f"{report.control_mean:.6f}"])

def _most_selective(index: np.ndarray) -> Optional[int]:
    if np.all(np.isnan(index)):
        return None
    return int(np.nanargmax(index))

def _overlay_best(name: str, codes: Sequence[np.ndarray], examples: Sequence[Example], index: np.ndarray,
                  geometry: LayerGeometry, out: Path) -> Optional[Path]:
    feature = _most_selective(index)
    if feature is None:
        return None
    masses = [float(np.abs(np.asarray(c)[..., feature]).sum()) for c in codes]
    best = int(np.argmax(masses))
    code = np.asarray(codes[best])
    frame = examples[best].input[-1, :, :, 0:3]
    path = out / f"overlay_{name}_feature{feature}.ppm"
    activation_overlay(frame, code.reshape(code.shape[-3:])[:, :, feature], geometry, path)
    return path

def analyze_depth_selectivity(dictionary: KernelStack, control_params: NetworkParams, control_spec: NetworkSpec,
                              examples: Sequence[Example], disparities: Sequence[np.ndarray],
                              out_dir: Union[str, Path], lca: Optional[LcaConfig] = None,
                              workers: int = 1) -> SelectivityReport:
    """Compare LCA codes of `dictionary` with the control model's first layer on the same examples.

    Writes selectivity.csv and one overlay PPM per encoding for its most
    selective feature.
    """
    if control_spec.variant is not VariantKind.CONV_SUP:
        logger.warning(f"Control model is {control_spec.variant.label}, not ConvSup")
    if any(d is None for d in disparities):
        raise ConfigurationError("depth selectivity needs a disparity map for every example")
    sparse_spec = control_spec.with_overrides(variant=VariantKind.SPARSE_UNSUP, lca=lca or control_spec.lca)
    sparse_params = build_network(sparse_spec, dictionary)
    inputs = [e.input for e in examples]
    sparse_codes = first_layer_features(sparse_params, sparse_spec, inputs, workers)
    control_codes = first_layer_features(control_params, control_spec, inputs, workers)
    geometry = control_spec.geometry()[0]

    report = depth_selectivity_report(sparse_codes, control_codes, disparities, geometry)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_selectivity_csv(report, out / "selectivity.csv")
    control = [apply_threshold(np.asarray(c), report.threshold) for c in control_codes]
    _overlay_best("sparse", sparse_codes, examples, report.sparse_index, geometry, out)
    _overlay_best("control", control, examples, report.control_index, geometry, out)
    return report
