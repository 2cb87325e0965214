from typing import List, Optional, Dict, Any, Tuple, Union
from dataclasses import dataclass, field, asdict, fields

import numpy as np

from stereosparse.core.errors import ConfigurationError
from stereosparse.models.network import VariantKind, MID_STRIDES

@dataclass
class PRCurve:
    """Precision/recall points from a descending threshold sweep."""
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    positive_count: int
    total_count: int

    @property
    def points(self) -> List[Tuple[float, float]]:
        return [(float(r), float(p)) for r, p in zip(self.recall, self.precision)]

    @property
    def positive_fraction(self) -> float:
        return self.positive_count / self.total_count

@dataclass(frozen=True)
class RunRecord:
    """AUC of one trained detector."""
    variant: str
    depth: int
    n_train: int
    seed: int
    auc: float

@dataclass(frozen=True)
class CellSummary:
    """Median and range over the seeds of one (variant, depth, n_train) cell."""
    variant: str
    depth: int
    n_train: int
    median: float
    range: float
    runs: int

@dataclass
class RunReport:
    """All run records of an experiment plus the chance level of its test set."""
    records: List[RunRecord] = field(default_factory=list)
    chance: Optional[float] = None

    def cells(self) -> List[CellSummary]:
        """Aggregate records per cell, in order of first appearance."""
        grouped: Dict[Tuple[str, int, int], List[float]] = {}
        for record in self.records:
            grouped.setdefault((record.variant, record.depth, record.n_train), []).append(record.auc)
        return [
            CellSummary(variant, depth, n_train, float(np.median(aucs)),
                        float(max(aucs) - min(aucs)), len(aucs))
            for (variant, depth, n_train), aucs in grouped.items()
        ]

NTrain = Union[int, str]

@dataclass
class ExperimentConfig:
    """Variants x depths x training sizes x seeds, plus shared training settings."""
    data: str = ""
    dict: Optional[str] = None
    variants: List[str] = field(default_factory=lambda: [k.value for k in VariantKind])
    depths: List[int] = field(default_factory=lambda: [2, 3, 4])
    n_train: List[NTrain] = field(default_factory=lambda: [100, 300, 1000, "all"])
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    features: int = 64
    mid_features: int = 64
    lam: float = 0.1
    iters: int = 400
    dict_batches: Optional[int] = None
    dict_batch_size: int = 16
    dict_lr: float = 0.1
    dict_seed: int = 1
    window: List[int] = field(default_factory=lambda: [16, 32])
    first_kernel: Optional[List[int]] = None
    first_stride: List[int] = field(default_factory=lambda: [1, 2, 2])
    workers: int = 1
    analyze: bool = False
    analyze_limit: int = 20

    def validate(self) -> 'ExperimentConfig':
        """Normalize variants and reject impossible settings."""
        if not self.data:
            raise ConfigurationError("experiment config needs a 'data' manifest")
        self.variants = [VariantKind.parse(v).value for v in self.variants]
        for depth in self.depths:
            if depth not in MID_STRIDES:
                raise ConfigurationError(f"depth must be 2, 3 or 4, got {depth}")
        for n in self.n_train:
            if not (n == "all" or (isinstance(n, int) and n > 0)):
                raise ConfigurationError(f"n_train entries must be positive integers or 'all', got {n}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigurationError("epochs, batch_size and workers must be positive")
        return self

    @property
    def needs_dictionary(self) -> bool:
        return any(VariantKind.parse(v).requires_dictionary for v in self.variants)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Create from flat JSON keys; dashes and 'lambda' are accepted."""
        values = {k.replace("-", "_"): v for k, v in data.items()}
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"Unknown experiment keys: {', '.join(unknown)}")
        return cls(**values).validate()
