from typing import List, Optional, Dict, Any, Tuple
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from stereosparse.core.errors import ConfigurationError

@dataclass(frozen=True)
class LcaConfig:
    """Solver settings for LCA inference. `lam` is the sparsity weight λ."""
    lam: float = 0.1
    tau: float = 1.0
    dt: float = 0.1
    max_iters: int = 400
    stop_tol: float = 1e-4
    residual_tol: float = 1e-3
    stable_rate: bool = True

    @property
    def rate(self) -> float:
        """Integration rate dt/τ. With `stable_rate` the solver caps it at 1/L of the dictionary in use."""
        return self.dt / self.tau

    def validate(self) -> 'LcaConfig':
        """Raise ConfigurationError unless every field is in range."""
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.tau <= 0 or self.dt <= 0:
            raise ConfigurationError(f"tau and dt must be positive, got tau={self.tau}, dt={self.dt}")
        if self.dt > self.tau:
            raise ConfigurationError(f"dt/tau must lie in (0, 1], got {self.rate}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be positive, got {self.max_iters}")
        if self.stop_tol < 0 or self.residual_tol < 0:
            raise ConfigurationError("stop_tol and residual_tol must be >= 0")
        return self

    def with_overrides(self, **kwargs) -> 'LcaConfig':
        """Copy with the non-None keyword overrides applied."""
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LcaConfig':
        """Create from a mapping; accepts 'lambda' as an alias of 'lam'."""
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**data).validate()

@dataclass(frozen=True)
class EnergyReport:
    """Terms of the sparse-coding energy for one activation state."""
    recon_err: float
    sparsity: float
    total: float
    nnz: int

    @classmethod
    def from_terms(cls, recon_err: float, sparsity: float, lam: float, nnz: int) -> 'EnergyReport':
        return cls(float(recon_err), float(sparsity), float(recon_err + lam * sparsity), int(nnz))

@dataclass
class LcaState:
    """Membrane potentials, activations and energy history of one encoding run."""
    u: np.ndarray
    a: np.ndarray
    energy_trace: List[EnergyReport] = field(default_factory=list)
    residual: Optional[np.ndarray] = None
    iterations: int = 0
    converged: bool = False
    fixed_point_gap: float = float("inf")

    @property
    def energy(self) -> EnergyReport:
        """Most recent energy report."""
        return self.energy_trace[-1]

@dataclass(frozen=True)
class DictTrainConfig:
    """Settings for unsupervised dictionary training."""
    lr: float = 0.1
    batches: int = 1000
    batch_size: int = 16
    lca: LcaConfig = field(default_factory=LcaConfig)
    seed: int = 1
    features: int = 64
    kernel: Tuple[int, int, int] = (3, 8, 8)
    stride: Tuple[int, int, int] = (1, 2, 2)
    pad_spatial: bool = True
    encode_chunk: Optional[int] = None
    dead_atom_window: int = 100
    dead_atom_threshold: float = 1e-6
    workers: int = 1

    def validate(self) -> 'DictTrainConfig':
        """Raise ConfigurationError on non-positive counts or rates."""
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.batches < 0:
            raise ConfigurationError(f"batches must be >= 0, got {self.batches}")
        for name in ("batch_size", "features", "dead_atom_window", "workers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.encode_chunk is not None and self.encode_chunk < 1:
            raise ConfigurationError(f"encode_chunk must be positive, got {self.encode_chunk}")
        if len(self.kernel) != 3 or len(self.stride) != 3 or min(tuple(self.kernel) + tuple(self.stride)) < 1:
            raise ConfigurationError("kernel and stride must be three positive integers")
        self.lca.validate()
        return self

@dataclass
class DictHistory:
    """Per-batch mean energy terms and activation density during training."""
    recon_err: List[float] = field(default_factory=list)
    sparsity: List[float] = field(default_factory=list)
    total: List[float] = field(default_factory=list)
    nnz_fraction: List[float] = field(default_factory=list)

    def append(self, report: EnergyReport, nnz_fraction: float) -> None:
        self.recon_err.append(report.recon_err)
        self.sparsity.append(report.sparsity)
        self.total.append(report.total)
        self.nnz_fraction.append(float(nnz_fraction))

    def __len__(self) -> int:
        return len(self.total)

@dataclass
class Command:
    """A fully resolved CLI invocation."""
    name: str
    config: Dict[str, Any] = field(default_factory=dict)
    seed: int = 1
