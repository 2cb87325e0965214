"""Locally Competitive Algorithm inference for convolutional sparse coding.

Minimizes J(a) = 1/2 ||I - a (*) phi||^2 + lam * ||a||_1 by integrating the
membrane potentials u with soft-threshold activations a = T(u). Lateral
competition is applied in residual form, correlate(I - recon(a), phi) + a,
so the Gram operator of the dictionary is never built.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from stereosparse.core.errors import DomainError, NonFiniteError, ShapeError, StereoSparseError
from stereosparse.core.tensor import KernelStack, correlate, output_dims, pad_spatial, reconstruct
from stereosparse.models.base import EnergyReport, LcaConfig, LcaState

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0


class SolverDivergenceError(StereoSparseError):
    """Raised when the LCA energy blows up."""
    pass


def soft_threshold(u: np.ndarray, lam: float) -> np.ndarray:
    """Elementwise sign(u) * max(|u| - lam, 0)."""
    if lam < 0:
        raise DomainError(f"threshold must be >= 0, got {lam}")
    return np.sign(u) * np.maximum(np.abs(u) - lam, 0.0)


def _report(I: np.ndarray, a: np.ndarray, recon: np.ndarray, lam: float) -> Tuple[EnergyReport, np.ndarray]:
    residual = I - recon
    report = EnergyReport.from_terms(0.5 * np.sum(residual ** 2), np.sum(np.abs(a)), lam, np.count_nonzero(a))
    return report, residual


def energy(I: np.ndarray, a: np.ndarray, phi: KernelStack, lam: float) -> EnergyReport:
    """Reconstruction error, L1 sparsity and total energy of activations a."""
    recon = reconstruct(a, phi)
    if recon.shape != I.shape:
        recon = reconstruct(a, phi, I.shape[1:4])
    if recon.shape != I.shape:
        raise ShapeError(f"reconstruction shape {recon.shape} does not match input shape {I.shape}")
    report, _ = _report(I, a, recon, lam)
    return report


def activation_shape(I: np.ndarray, phi: KernelStack) -> Tuple[int, ...]:
    """Shape of correlate(I, phi)."""
    if I.ndim != 5 or I.shape[4] != phi.in_channels:
        raise ShapeError(f"input shape {I.shape} does not match kernel shape {phi.weights.shape}")
    return (I.shape[0], *output_dims(I.shape[1:4], phi.kernel_size, phi.stride), phi.features)


def lipschitz_bound(phi: KernelStack, act_dims: Optional[Sequence[int]] = None) -> float:
    """Upper bound on the largest eigenvalue of correlate(reconstruct(., phi), phi).

    The Gram operator is block Toeplitz over activation sites, with one f x f
    block per pair of overlapping atom shifts. Its norm on any finite domain
    is at most the peak eigenvalue of the block symbol, evaluated here on a
    frequency grid. `act_dims` limits the shifts to those an input with that
    activation extent can realize.
    """
    reach = []
    for axis, (k, s) in enumerate(zip(phi.kernel_size, phi.stride)):
        d = (k - 1) // s
        if act_dims is not None:
            d = min(d, int(act_dims[axis]) - 1)
        reach.append(max(d, 0))
    # each atom correlated against every shifted atom: [g, 2dt+1, 2dh+1, 2dw+1, f]
    shifted = pad_spatial(phi.weights, tuple((d * s, d * s) for d, s in zip(reach, phi.stride)))
    blocks = np.moveaxis(correlate(shifted, phi), 0, -1)
    sizes = [1 if d == 0 else 4 * (2 * d + 1) for d in reach]
    symbol = np.zeros((*sizes, phi.features, phi.features))
    symbol[:blocks.shape[0], :blocks.shape[1], :blocks.shape[2]] = blocks
    symbol = np.roll(symbol, [-d for d in reach], axis=(0, 1, 2))
    spectrum = np.fft.rfftn(symbol, axes=(0, 1, 2))
    peak = max(float(np.linalg.eigvalsh(plane).max()) for plane in spectrum)
    return max(peak, 0.0)


def step_rate(phi: KernelStack, cfg: LcaConfig, act_dims: Optional[Sequence[int]] = None) -> float:
    """dt/tau, capped at 1/L when cfg.stable_rate is set."""
    if not cfg.stable_rate:
        return cfg.rate
    bound = lipschitz_bound(phi, act_dims)
    if bound * cfg.rate <= 1.0:
        return cfg.rate
    logger.debug(f"LCA: capping dt/tau {cfg.rate:g} at 1/L = {1.0 / bound:.4g}")
    return 1.0 / bound


def init_state(I: np.ndarray, phi: KernelStack, lam: float) -> LcaState:
    """All-zero potentials; the trace starts with the energy of a = 0."""
    shape = activation_shape(I, phi)
    a = np.zeros(shape)
    report = EnergyReport.from_terms(0.5 * np.sum(I ** 2), 0.0, lam, 0)
    return LcaState(u=np.zeros(shape), a=a, energy_trace=[report], residual=np.array(I, dtype=np.float64))


def lca_step(state: LcaState, I: np.ndarray, phi: KernelStack, cfg: LcaConfig,
             rate: Optional[float] = None) -> LcaState:
    """One Euler step: u += rate * (correlate(I - recon(a), phi) + a - u).

    `rate` defaults to cfg.rate; lca_encode passes the capped rate from step_rate.
    """
    rate = cfg.rate if rate is None else rate
    if state.u.shape != activation_shape(I, phi) or state.a.shape != state.u.shape:
        raise ShapeError(
            f"state shape {state.u.shape} does not match correlate({I.shape}, {phi.weights.shape})"
        )
    residual = state.residual
    if residual is None:
        residual = I - reconstruct(state.a, phi, I.shape[1:4])
    drive = correlate(residual, phi) + state.a
    gap = float(np.max(np.abs(drive - state.u))) if drive.size else 0.0
    u = state.u + rate * (drive - state.u)
    a = soft_threshold(u, cfg.lam)
    report, residual = _report(I, a, reconstruct(a, phi, I.shape[1:4]), cfg.lam)
    return LcaState(u=u, a=a, energy_trace=state.energy_trace + [report], residual=residual,
                    iterations=state.iterations + 1, fixed_point_gap=gap)


def lca_encode(I: np.ndarray, phi: KernelStack, cfg: Optional[LcaConfig] = None,
               rate: Optional[float] = None) -> LcaState:
    """Run LCA from u = 0 until convergence or cfg.max_iters.

    A batch [b, ...] is one separable problem: each item follows the same
    trajectory it would follow alone; only the stopping step is shared.
    The integration rate depends only on phi and the activation extent, so
    callers encoding many same-shaped inputs may compute it once and pass it.
    """
    cfg = (cfg or LcaConfig()).validate()
    I = np.asarray(I, dtype=np.float64)
    state = init_state(I, phi, cfg.lam)
    j0 = state.energy_trace[0].total

    drive = correlate(I, phi)
    if drive.size == 0 or np.max(np.abs(drive)) <= cfg.lam:
        # a = 0 already satisfies the optimality condition
        state.converged = True
        logger.debug("LCA: threshold dominates the drive; activations stay zero")
        return state

    if rate is None:
        rate = step_rate(phi, cfg, state.u.shape[1:4])
    try:
        for _ in range(cfg.max_iters):
            previous = state.energy.total
            state = lca_step(state, I, phi, cfg, rate)
            total = state.energy.total
            if total > DIVERGENCE_FACTOR * j0:
                raise SolverDivergenceError(
                    f"LCA energy {total:.6g} exceeded {DIVERGENCE_FACTOR:g}x its initial value {j0:.6g} "
                    f"at iteration {state.iterations}; reduce dt/tau (currently {rate:g})"
                )
            if state.energy.nnz == 0:
                continue
            change = abs(previous - total) / max(total, np.finfo(float).tiny)
            if change <= cfg.stop_tol and state.fixed_point_gap <= cfg.residual_tol * np.max(np.abs(state.u)):
                state.converged = True
                break
    except NonFiniteError as e:
        logger.error(f"LCA diverged: {e}")
        raise SolverDivergenceError(f"LCA produced non-finite values; reduce dt/tau (currently {rate:g})") from e

    logger.debug(
        f"LCA: {state.iterations} iterations, energy {state.energy.total:.6g}, "
        f"nnz {state.energy.nnz}/{state.a.size}, converged={state.converged}"
    )
    return state
