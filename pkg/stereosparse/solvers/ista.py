"""Dense proximal-gradient reference solver for small sparse-coding problems."""
import logging
from typing import Tuple

import numpy as np

from stereosparse.core.errors import DomainError, StereoSparseError
from stereosparse.core.tensor import KernelStack, reconstruct
from stereosparse.solvers.lca import activation_shape, soft_threshold

logger = logging.getLogger(__name__)

MAX_ORACLE_VARIABLES = 4096
_BASIS_CHUNK = 256


class OracleSizeError(StereoSparseError):
    """Raised when a problem is too large to flatten into a dense matrix."""
    pass


def dense_operator(phi: KernelStack, input_shape: Tuple[int, ...]) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Matrix D with D @ a.ravel() == reconstruct(a, phi).ravel()."""
    act_shape = activation_shape(np.empty(input_shape), phi)
    n_act = int(np.prod(act_shape))
    if n_act > MAX_ORACLE_VARIABLES:
        raise OracleSizeError(
            f"{n_act} activation variables exceed the dense oracle limit of {MAX_ORACLE_VARIABLES}"
        )
    b = act_shape[0]
    columns = []
    for start in range(0, n_act, _BASIS_CHUNK):
        stop = min(start + _BASIS_CHUNK, n_act)
        basis = np.zeros((stop - start, n_act))
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        atoms = reconstruct(basis.reshape((stop - start) * b, *act_shape[1:]), phi, input_shape[1:4])
        columns.append(atoms.reshape(stop - start, -1))
    return np.concatenate(columns, axis=0).T, act_shape


def power_iteration(gram: np.ndarray, iters: int = 500, tol: float = 1e-12, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    v = np.random.default_rng(seed).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    eig = 0.0
    for _ in range(iters):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new_eig = float(v @ gram @ v)
        if abs(new_eig - eig) <= tol * max(new_eig, 1.0):
            eig = new_eig
            break
        eig = new_eig
    return eig


def ista_oracle(I: np.ndarray, phi: KernelStack, lam: float, iters: int, accelerated: bool = False) -> np.ndarray:
    """Minimize the sparse-coding energy on the flattened dense problem.

    Step size 1/L with L the largest squared singular value of D, estimated by
    power iteration. `accelerated` adds FISTA momentum.
    """
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    I = np.asarray(I, dtype=np.float64)
    D, act_shape = dense_operator(phi, I.shape)
    gram = D.T @ D
    target = D.T @ I.ravel()
    L = power_iteration(gram)
    if L == 0.0:
        return np.zeros(act_shape)

    a = np.zeros(gram.shape[0])
    z = a
    t = 1.0
    for _ in range(iters):
        a_next = soft_threshold(z - (gram @ z - target) / L, lam / L)
        if accelerated:
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            z = a_next + ((t - 1.0) / t_next) * (a_next - a)
            t = t_next
        else:
            z = a_next
        a = a_next
    logger.debug(f"ISTA oracle: {iters} iterations, L={L:.6g}, nnz={np.count_nonzero(a)}/{a.size}")
    return a.reshape(act_shape)
