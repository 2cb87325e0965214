"""The variants x depths x training sizes x seeds experiment matrix."""
import csv
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from stereosparse.core.errors import ConfigurationError
from stereosparse.core.tensor import KernelStack
from stereosparse.data.manifest import Dataset, load_manifest
from stereosparse.models.base import DictTrainConfig, LcaConfig
from stereosparse.models.data import Example
from stereosparse.models.evaluation import ExperimentConfig, RunRecord, RunReport
from stereosparse.models.network import NetworkSpec, VariantKind
from stereosparse.network.builder import build_network
from stereosparse.network.detector import first_layer_features, predict
from stereosparse.network.model_io import load_model, save_model
from stereosparse.network.trainer import train_detector
from stereosparse.solvers.dictionary import load_dictionary, save_dictionary, train_dictionary, write_history_csv
from stereosparse.analysis.activations import analyze_depth_selectivity
from stereosparse.analysis.metrics import grid_auc, positive_fraction
from stereosparse.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

SWEEP_SLACK = 0.02
# first layers that depend only on the dictionary, so every cell can share them
SHARED_FIRST_LAYERS = (VariantKind.SPARSE_UNSUP, VariantKind.CONV_UNSUP)

@dataclass(frozen=True)
class Cell:
    """One training run of the matrix."""
    variant: VariantKind
    depth: int
    n_train: int
    seed: int

def network_spec(cfg: ExperimentConfig, variant: VariantKind, depth: int,
                 input_shape: Tuple[int, int, int, int]) -> NetworkSpec:
    """Detector geometry for inputs of `input_shape` (frames, height, width, channels)."""
    frames, height, width, channels = input_shape
    first_kernel = tuple(cfg.first_kernel) if cfg.first_kernel else (frames, 8, 8)
    return NetworkSpec(variant=variant, depth=depth, frames=frames, height=height, width=width,
                       channels=channels, features=cfg.features, mid_features=cfg.mid_features,
                       first_kernel=first_kernel, first_stride=tuple(cfg.first_stride),
                       window=tuple(cfg.window), lca=lca_config(cfg))

def lca_config(cfg: ExperimentConfig) -> LcaConfig:
    return LcaConfig(lam=cfg.lam, max_iters=cfg.iters).validate()

def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()

def cell_key(cfg: ExperimentConfig, cell: Cell, data_digest: str, dict_digest: Optional[str]) -> str:
    """Content hash of everything that determines a cell's result."""
    record = {
        "variant": cell.variant.value, "depth": cell.depth, "n_train": cell.n_train, "seed": cell.seed,
        "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr, "features": cfg.features,
        "mid_features": cfg.mid_features, "lam": cfg.lam, "iters": cfg.iters, "window": list(cfg.window),
        "first_kernel": cfg.first_kernel, "first_stride": list(cfg.first_stride), "data": data_digest,
        "dict": dict_digest if cell.variant.requires_dictionary else None,
    }
    return _digest(json.dumps(record, sort_keys=True).encode("utf-8"))

def _splits(dataset: Dataset) -> Tuple[List[Example], List[Example]]:
    train = dataset.split("train")
    test = dataset.split("test")
    if len(test) == 0:
        raise ConfigurationError("the manifest has no 'test' split")
    if len(train) == 0:
        raise ConfigurationError("the manifest has no 'train' split")
    return train.examples(), test.examples()

def resolve_dictionary(cfg: ExperimentConfig, train: Sequence[Example], out: Path) -> Optional[KernelStack]:
    """Load the configured dictionary, or train one when only dict_batches is given."""
    if not cfg.needs_dictionary:
        return None
    stride = tuple(cfg.first_stride)
    if cfg.dict:
        path = Path(cfg.dict)
        if not path.exists():
            raise ConfigurationError(f"dictionary {path} does not exist")
        return load_dictionary(path, stride)
    if not cfg.dict_batches:
        raise ConfigurationError(
            "variants " + ", ".join(v for v in cfg.variants if VariantKind.parse(v).requires_dictionary)
            + " need a dictionary: set 'dict' or 'dict_batches'"
        )
    frames = train[0].input.shape[0]
    dict_cfg = DictTrainConfig(lr=cfg.dict_lr, batches=cfg.dict_batches, batch_size=cfg.dict_batch_size,
                               lca=lca_config(cfg), seed=cfg.dict_seed, features=cfg.features,
                               kernel=tuple(cfg.first_kernel) if cfg.first_kernel else (frames, 8, 8),
                               stride=stride, workers=cfg.workers)
    logger.info(f"Training a {cfg.features}-feature dictionary for {cfg.dict_batches} batches")
    dictionary, history = train_dictionary([e.input for e in train], dict_cfg)
    save_dictionary(out / "dict.sten", dictionary)
    write_history_csv(history, str(out / "dict_history.csv"))
    return dictionary

def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

def training_size_trend(report: RunReport, slack: float = SWEEP_SLACK) -> Dict[Tuple[str, int], bool]:
    """Whether the median AUC is non-decreasing in n_train (within slack) per variant and depth."""
    medians: Dict[Tuple[str, int], List[Tuple[int, float]]] = {}
    for cell in report.cells():
        medians.setdefault((cell.variant, cell.depth), []).append((cell.n_train, cell.median))
    trend = {}
    for key, points in medians.items():
        values = [m for _, m in sorted(points)]
        trend[key] = all(b >= a - slack for a, b in zip(values, values[1:]))
    return trend

def consistency_check(report: RunReport) -> Dict[int, bool]:
    """Per depth: is the SparseUnsup seed range smaller than ConvSup's at the largest n_train?"""
    cells = report.cells()
    if not cells:
        return {}
    largest = max(c.n_train for c in cells)
    ranges = {(c.variant, c.depth): c.range for c in cells if c.n_train == largest}
    result = {}
    for depth in sorted({c.depth for c in cells}):
        sparse = ranges.get((VariantKind.SPARSE_UNSUP.value, depth))
        conv = ranges.get((VariantKind.CONV_SUP.value, depth))
        if sparse is None or conv is None:
            continue
        result[depth] = sparse < conv
        logger.info(f"Consistency at depth {depth}: SparseUnsup range {sparse:.4f} vs ConvSup range {conv:.4f} "
                    f"-> {'pass' if result[depth] else 'fail'}")
    return result

def write_reports(report: RunReport, cfg: ExperimentConfig, out: Path) -> None:
    """results.csv, summary.csv, table.csv and sweep.csv."""
    _write_csv(out / "results.csv", ["variant", "depth", "n_train", "seed", "auc"],
               [[r.variant, r.depth, r.n_train, r.seed, f"{r.auc:.6f}"] for r in report.records])
    cells = report.cells()
    _write_csv(out / "summary.csv", ["variant", "depth", "n_train", "median", "range", "runs"],
               [[c.variant, c.depth, c.n_train, f"{c.median:.6f}", f"{c.range:.6f}", c.runs] for c in cells])

    largest = max(c.n_train for c in cells)
    by_key = {(c.variant, c.depth): c for c in cells if c.n_train == largest}
    rows = []
    for variant in cfg.variants:
        row = [VariantKind.parse(variant).label]
        for depth in cfg.depths:
            c = by_key.get((variant, depth))
            row.append("" if c is None else f"{c.median:.3f} ({c.range:.3f})")
        rows.append(row)
    rows.append(["Chance"] + [f"{report.chance:.3f}"] * len(cfg.depths))
    _write_csv(out / "table.csv", ["variant"] + [f"{d}_layers" for d in cfg.depths], rows)

    trend = training_size_trend(report)
    _write_csv(out / "sweep.csv", ["variant", "depth", "n_train", "median", "non_decreasing"],
               [[c.variant, c.depth, c.n_train, f"{c.median:.6f}", str(trend[(c.variant, c.depth)]).lower()]
                for c in sorted(cells, key=lambda c: (cfg.variants.index(c.variant), c.depth, c.n_train))])

def run_matrix(cfg: ExperimentConfig, out_dir: Union[str, Path]) -> RunReport:
    """Train and score every cell, reusing cached cells from earlier runs."""
    cfg = cfg.validate()
    out = Path(out_dir)
    cache_dir = out / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)

    dataset = load_manifest(cfg.data, cfg.workers)
    train, test = _splits(dataset)
    sizes = [len(train) if n == "all" else int(n) for n in cfg.n_train]
    for n in sizes:
        if n > len(train):
            raise ConfigurationError(f"n_train {n} exceeds the {len(train)} training examples")
    dictionary = resolve_dictionary(cfg, train, out)

    data_digest = _digest(Path(cfg.data).read_bytes())
    dict_digest = None if dictionary is None else _digest(np.ascontiguousarray(dictionary.weights, "<f4").tobytes())
    input_shape = tuple(train[0].input.shape)
    chance = positive_fraction(e.labels for e in test)
    logger.info(f"{len(train)} train / {len(test)} test examples; chance AUC {chance:.4f}")

    cells = [Cell(VariantKind.parse(v), d, n, s)
             for v, d, n, s in itertools.product(cfg.variants, cfg.depths, sizes, cfg.seeds)]
    pending = [c for c in cells if not (cache_dir / f"{cell_key(cfg, c, data_digest, dict_digest)}.json").exists()]
    logger.info(f"{len(cells)} cells, {len(cells) - len(pending)} cached")

    shared: Dict[VariantKind, Dict[str, np.ndarray]] = {}
    for variant in SHARED_FIRST_LAYERS:
        if any(c.variant is variant for c in pending):
            spec = network_spec(cfg, variant, cfg.depths[0], input_shape)
            params = build_network(spec, dictionary)
            logger.info(f"Encoding {len(train) + len(test)} examples with the {variant.label} first layer")
            examples = train + test
            outputs = first_layer_features(params, spec, [e.input for e in examples], cfg.workers)
            shared[variant] = {e.id: o for e, o in zip(examples, outputs)}

    def run_cell(cell: Cell) -> float:
        key = cell_key(cfg, cell, data_digest, dict_digest)
        result_path = cache_dir / f"{key}.json"
        if result_path.exists():
            return float(json.loads(result_path.read_text())["auc"])
        spec = network_spec(cfg, cell.variant, cell.depth, input_shape)
        first_cache = shared.get(cell.variant)
        params, curve = train_detector(spec, train, cell.n_train, cfg.epochs, cell.seed,
                                       dictionary if cell.variant.requires_dictionary else None,
                                       cfg.batch_size, cfg.lr, first_cache=first_cache)
        first_out = None if first_cache is None else [first_cache[e.id] for e in test]
        score = grid_auc(predict(params, spec, test, first_out=first_out))
        save_model(cache_dir / f"{key}.model", params, spec)
        result_path.write_text(json.dumps({"variant": cell.variant.value, "depth": cell.depth,
                                           "n_train": cell.n_train, "seed": cell.seed, "auc": score,
                                           "loss_curve": curve}, sort_keys=True))
        logger.info(f"{cell.variant.label} depth {cell.depth} n={cell.n_train} seed {cell.seed}: auc {score:.4f}")
        return score

    aucs = ordered_map(run_cell, cells, cfg.workers)
    report = RunReport([RunRecord(c.variant.value, c.depth, c.n_train, c.seed, a) for c, a in zip(cells, aucs)],
                       chance)
    write_reports(report, cfg, out)
    consistency_check(report)

    if cfg.analyze:
        _analyze(cfg, cells, dictionary, test, dataset, data_digest, dict_digest, cache_dir, out)
    return report

def _analyze(cfg: ExperimentConfig, cells: Sequence[Cell], dictionary: Optional[KernelStack],
             test: Sequence[Example], dataset: Dataset, data_digest: str, dict_digest: Optional[str],
             cache_dir: Path, out: Path) -> None:
    control = next((c for c in cells if c.variant is VariantKind.CONV_SUP), None)
    if dictionary is None or control is None:
        logger.warning("Depth selectivity needs a dictionary and a ConvSup run; skipping analysis")
        return
    disparities = dataset.split("test").disparities()
    limit = min(cfg.analyze_limit, len(test))
    params, spec = load_model(cache_dir / f"{cell_key(cfg, control, data_digest, dict_digest)}.model")
    analyze_depth_selectivity(dictionary, params, spec, test[:limit], disparities[:limit], out / "analysis",
                              lca_config(cfg), cfg.workers)
