"""Unsupervised convolutional dictionary learning.

Each batch alternates LCA inference with Φ held fixed and one gradient step
on Φ with the activations held fixed, followed by unit-norm projection.
Each atom's step is scaled by the activation energy it received, so `lr`
is the fraction of a per-atom Newton step whatever the input size.
"""
import csv
import json
import logging
from collections import deque
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from stereosparse.core.errors import ConfigurationError, DomainError, ShapeError
from stereosparse.core.tensor import KernelStack, kernel_gradient, pad_spatial, reconstruct, same_padding
from stereosparse.models.base import DictHistory, DictTrainConfig, EnergyReport
from stereosparse.solvers.lca import SolverDivergenceError, activation_shape, lca_encode, step_rate
from stereosparse.utils.parallel import ordered_map
from stereosparse.utils.sten import read_sten, write_sten

logger = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12
_CURVATURE_FLOOR = 1e-6


def _unit_norm(weights: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Rescale every feature kernel to unit L2 norm; zero kernels are redrawn."""
    weights = np.array(weights, dtype=np.float64)
    flat = weights.reshape(weights.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    dead = norms < _NORM_FLOOR
    if dead.any():
        rng = rng or np.random.default_rng(0)
        flat[dead] = rng.standard_normal((int(dead.sum()), flat.shape[1]))
        norms = np.linalg.norm(flat, axis=1)
    return (flat / norms[:, None]).reshape(weights.shape)


def initial_dictionary(features: int, kernel: Sequence[int], in_channels: int, seed: int,
                       stride: Sequence[int] = (1, 1, 1)) -> KernelStack:
    """Seeded i.i.d. Gaussian kernels projected to unit norm."""
    rng = np.random.default_rng([seed, 0])
    weights = rng.standard_normal((features, *kernel, in_channels))
    return KernelStack(_unit_norm(weights), tuple(stride))


def dict_gradient(I: np.ndarray, a: np.ndarray, phi: KernelStack) -> np.ndarray:
    """dJ/dPhi of the sparse-coding energy with the activations held fixed."""
    recon = reconstruct(a, phi, I.shape[1:4])
    if recon.shape != I.shape:
        raise ShapeError(f"reconstruction shape {recon.shape} does not match input shape {I.shape}")
    return -kernel_gradient(I - recon, a, phi)


def atom_curvature(a: np.ndarray) -> np.ndarray:
    """Per-feature sum of squared activations: the diagonal of d2J/dPhi2 for each atom."""
    a = np.asarray(a, dtype=np.float64)
    return np.sum(a * a, axis=tuple(range(a.ndim - 1)))


def preconditioned_step(grad: np.ndarray, curvature: np.ndarray) -> np.ndarray:
    """Scale every atom's gradient by the inverse of its activation energy."""
    if curvature.shape != grad.shape[:1]:
        raise ShapeError(f"curvature shape {curvature.shape} does not match gradient shape {grad.shape}")
    return grad / (curvature + _CURVATURE_FLOOR).reshape(-1, *([1] * (grad.ndim - 1)))


def dict_update(phi: KernelStack, grad: np.ndarray, lr: float,
                rng: Optional[np.random.Generator] = None) -> KernelStack:
    """One descent step followed by unit-norm projection of every feature."""
    if lr <= 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    if grad.shape != phi.weights.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match kernel shape {phi.weights.shape}")
    return phi.with_weights(_unit_norm(phi.weights - lr * grad, rng))


def learning_rate(cfg: DictTrainConfig, t: int) -> float:
    """Constant for the first half of training, then inverse-sqrt decay."""
    half = max(cfg.batches // 2, 1)
    if t < half:
        return cfg.lr
    return cfg.lr * float(np.sqrt(half / t))


def _as_items(sample: np.ndarray) -> List[np.ndarray]:
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 4:
        return [sample]
    if sample.ndim == 5:
        return list(sample)
    raise ShapeError(f"training samples must be [t, h, w, c] or [b, t, h, w, c], got shape {sample.shape}")


def _batches(dataset: Union[Sequence[np.ndarray], Iterable[np.ndarray]], batch_size: int,
             count: int) -> Iterator[np.ndarray]:
    """Group samples into [batch_size, t, h, w, c] arrays.

    Sequences are cycled in order; one-shot iterators are consumed once.
    """
    reusable = isinstance(dataset, Sequence)
    source = iter(dataset)
    pending: List[np.ndarray] = []
    produced = 0
    while produced < count:
        try:
            sample = next(source)
        except StopIteration:
            if not reusable or len(dataset) == 0:
                raise ConfigurationError(f"dataset ran out after {produced} of {count} batches")
            source = iter(dataset)
            continue
        pending.extend(_as_items(sample))
        while len(pending) >= batch_size and produced < count:
            batch, pending = pending[:batch_size], pending[batch_size:]
            yield np.stack(batch)
            produced += 1


def _encode_chunk(chunk: np.ndarray, phi: KernelStack, cfg: DictTrainConfig,
                  rate: float) -> Tuple[np.ndarray, np.ndarray, EnergyReport, np.ndarray, int]:
    state = lca_encode(chunk, phi, cfg.lca, rate)
    return (dict_gradient(chunk, state.a, phi), atom_curvature(state.a), state.energy,
            np.abs(state.a).sum(axis=(0, 1, 2, 3)), state.a.size)


def train_dictionary(dataset: Union[Sequence[np.ndarray], Iterable[np.ndarray]], cfg: DictTrainConfig,
                     initial: Optional[KernelStack] = None) -> Tuple[KernelStack, DictHistory]:
    """Learn a convolutional dictionary from unlabeled samples.

    Samples are [t, h, w, c] arrays (or batches of them). Returns the final
    dictionary and the per-batch mean energy history.
    """
    cfg = cfg.validate()
    history = DictHistory()
    phi = initial
    pads = same_padding(cfg.kernel, cfg.stride) if cfg.pad_spatial else ((0, 0), (0, 0), (0, 0))
    chunk = cfg.encode_chunk or 1
    noise = np.random.default_rng([cfg.seed, 1])
    usage: deque = deque(maxlen=cfg.dead_atom_window)

    if cfg.batches == 0:
        if phi is None:
            first = next(iter(dataset), None)
            if first is None:
                raise ConfigurationError("cannot size a dictionary from an empty dataset")
            phi = initial_dictionary(cfg.features, cfg.kernel, _as_items(first)[0].shape[-1], cfg.seed, cfg.stride)
        return phi, history

    for t, batch in enumerate(tqdm(_batches(dataset, cfg.batch_size, cfg.batches), total=cfg.batches,
                                   desc="train-dict", disable=None)):
        I = pad_spatial(batch, pads)
        if phi is None:
            phi = initial_dictionary(cfg.features, cfg.kernel, I.shape[4], cfg.seed, cfg.stride)
        elif phi.in_channels != I.shape[4]:
            raise ShapeError(f"input shape {batch.shape} does not match kernel shape {phi.weights.shape}")

        chunks = [I[i:i + chunk] for i in range(0, I.shape[0], chunk)]
        rate = step_rate(phi, cfg.lca, activation_shape(I, phi)[1:4])
        try:
            results = ordered_map(lambda c: _encode_chunk(c, phi, cfg, rate), chunks, cfg.workers)
        except SolverDivergenceError as e:
            logger.error(f"Dictionary training diverged at batch {t}: {e}")
            raise SolverDivergenceError(f"batch {t}: {e}") from e

        n = I.shape[0]
        grad = np.zeros_like(phi.weights)
        curvature = np.zeros(phi.features)
        recon_err = sparsity = 0.0
        mass = np.zeros(phi.features)
        nnz = size = 0
        for g, c, report, feature_mass, count in results:
            grad += g
            curvature += c
            recon_err += report.recon_err
            sparsity += report.sparsity
            nnz += report.nnz
            mass += feature_mass
            size += count
        history.append(EnergyReport.from_terms(recon_err / n, sparsity / n, cfg.lca.lam, nnz), nnz / size)

        phi = dict_update(phi, preconditioned_step(grad, curvature), learning_rate(cfg, t), noise)

        usage.append(mass / (size / phi.features))
        if len(usage) == cfg.dead_atom_window:
            dead = np.flatnonzero(np.mean(usage, axis=0) < cfg.dead_atom_threshold)
            if dead.size:
                logger.info(f"Reinitializing {dead.size} unused atoms at batch {t}")
                weights = phi.weights.copy()
                weights[dead] = noise.standard_normal((dead.size, *weights.shape[1:]))
                phi = phi.with_weights(_unit_norm(weights, noise))
                usage.clear()

        if (t + 1) % 100 == 0:
            logger.info(f"Batch {t + 1}/{cfg.batches}: energy {history.total[-1]:.6g}, "
                        f"nnz fraction {history.nnz_fraction[-1]:.4f}")

    logger.info(f"Dictionary training finished after {len(history)} batches; "
                f"smoothed descent {'holds' if smoothed_descent(history) else 'does not hold'}")
    return phi, history


def smoothed_descent(history: Union[DictHistory, Sequence[float]], window: int = 10, tolerance: float = 0.05) -> bool:
    """True when the smoothed energy never rises above its running minimum by more
    than `tolerance` over the final half of training."""
    totals = np.asarray(history.total if isinstance(history, DictHistory) else history, dtype=np.float64)
    if totals.size < window:
        return True
    smoothed = np.convolve(totals, np.ones(window) / window, mode="valid")
    running_min = np.minimum.accumulate(smoothed)
    tail = slice(smoothed.size // 2, None)
    return bool(np.all(smoothed[tail] <= running_min[tail] * (1.0 + tolerance)))


def match_atoms(planted: Union[KernelStack, np.ndarray], learned: Union[KernelStack, np.ndarray]) -> List[Tuple[int, int, float]]:
    """Greedy one-to-one matching by |cosine|; returns (planted, learned, |cos|) per planted atom."""
    p = planted.weights if isinstance(planted, KernelStack) else np.asarray(planted)
    q = learned.weights if isinstance(learned, KernelStack) else np.asarray(learned)
    p = p.reshape(p.shape[0], -1)
    q = q.reshape(q.shape[0], -1)
    if p.shape[1] != q.shape[1]:
        raise ShapeError(f"planted atoms {p.shape} and learned atoms {q.shape} differ in size")
    p = p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), _NORM_FLOOR)
    q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), _NORM_FLOOR)
    cos = np.abs(p @ q.T)
    matches = []
    for _ in range(min(cos.shape)):
        i, j = np.unravel_index(np.argmax(cos), cos.shape)
        matches.append((int(i), int(j), float(cos[i, j])))
        cos[i, :] = -1.0
        cos[:, j] = -1.0
    return sorted(matches)


def write_history_csv(history: DictHistory, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["batch", "recon_err", "sparsity", "total", "nnz_fraction"])
        for i in range(len(history)):
            writer.writerow([i, f"{history.recon_err[i]:.6g}", f"{history.sparsity[i]:.6g}",
                             f"{history.total[i]:.6g}", f"{history.nnz_fraction[i]:.6g}"])


def _sidecar(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def save_dictionary(path: Union[str, Path], phi: KernelStack) -> None:
    """Write the weights as STEN plus a JSON sidecar recording the stride."""
    write_sten(path, phi.weights)
    _sidecar(path).write_text(json.dumps({"kernel": list(phi.kernel_size), "stride": list(phi.stride),
                                          "features": phi.features, "in_channels": phi.in_channels}) + "\n")


def load_dictionary(path: Union[str, Path], stride: Sequence[int]) -> KernelStack:
    """Read a dictionary to apply at `stride`.

    A dictionary saved with a sidecar is refused at any other stride; a bare
    STEN file is taken at the stride given.
    """
    stride = tuple(int(s) for s in stride)
    meta = _sidecar(path)
    if meta.exists():
        try:
            trained = tuple(json.loads(meta.read_text())["stride"])
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigurationError(f"unreadable dictionary metadata {meta}: {e}")
        if trained != stride:
            raise ConfigurationError(f"dictionary {path} was trained at stride {trained}, not {stride}")
    else:
        logger.debug(f"No metadata beside {path}; applying it at stride {stride}")
    return KernelStack(read_sten(path), stride)
