"""JSON-lines dataset manifests.

Each line is an object with "id", "split", "input", "labels" and an optional
"disparity". "input" is a STEN path relative to the manifest or
{"synth": {"seed": S, ...scene parameters}}; "labels" is a STEN path or an
inline grid. Synthetic entries without labels take them from the rendered
boxes.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from stereosparse.core.errors import StereoSparseError
from stereosparse.core.tensor import downsample_area
from stereosparse.data.preprocess import INPUT_SIZE, preprocess
from stereosparse.data.synth import synth_scene
from stereosparse.models.data import Example, SynthParams
from stereosparse.utils.parallel import ordered_map
from stereosparse.utils.sten import read_sten, write_sten

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
SYNTH_SEED_STRIDE = 100003

class ManifestError(StereoSparseError):
    """Raised on unreadable manifests; the message names the line number."""
    pass

def _resolve(root: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else root / p

def _synth_params(spec: Dict[str, Any]) -> Tuple[int, SynthParams]:
    spec = dict(spec)
    seed = int(spec.pop("seed"))
    return seed, SynthParams.from_dict(spec)

def network_disparity(disparity: np.ndarray) -> np.ndarray:
    """Area-average a full-resolution disparity map down to the network input size."""
    if disparity.shape == INPUT_SIZE:
        return disparity
    return downsample_area(disparity[None, None, :, :, None], INPUT_SIZE)[0, 0, :, :, 0]

class Dataset:
    """Manifest entries plus lazily materialized examples."""

    def __init__(self, entries: Sequence[Dict[str, Any]], root: Union[str, Path] = ".", workers: int = 1):
        self.entries = list(entries)
        self.root = Path(root)
        self.workers = workers
        self._examples: Optional[List[Example]] = None
        self._disparities: Optional[List[Optional[np.ndarray]]] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples())

    def __getitem__(self, i: int) -> Example:
        return self.examples()[i]

    @property
    def ids(self) -> List[str]:
        return [str(e["id"]) for e in self.entries]

    def split(self, name: str) -> 'Dataset':
        return Dataset([e for e in self.entries if e.get("split") == name], self.root, self.workers)

    def shuffled(self, seed: int) -> 'Dataset':
        order = np.random.default_rng(seed).permutation(len(self.entries))
        return Dataset([self.entries[i] for i in order], self.root, self.workers)

    def _resolve(self, path: str) -> Path:
        return _resolve(self.root, path)

    def _load(self, entry: Dict[str, Any]) -> Tuple[Example, Optional[np.ndarray]]:
        source = entry["input"]
        disparity = None
        if isinstance(source, dict) and "synth" in source:
            seed, params = _synth_params(source["synth"])
            scene = synth_scene(seed, params)
            example = preprocess(scene.clip, scene.boxes, {"id": entry["id"]})
            disparity = network_disparity(scene.disparity)
        else:
            x = read_sten(self._resolve(source))
            example = Example(x, np.zeros((0, 0)), {"id": entry["id"]})
        labels = entry.get("labels")
        if isinstance(labels, str):
            example.labels = read_sten(self._resolve(labels))
        elif labels is not None:
            example.labels = np.asarray(labels, dtype=np.float64)
        elif example.labels.size == 0:
            raise ManifestError(f"entry {entry['id']}: no labels")
        if entry.get("disparity"):
            disparity = read_sten(self._resolve(entry["disparity"]))
        example.meta["split"] = entry.get("split")
        return example, disparity

    def _materialize(self) -> None:
        if self._examples is not None:
            return
        loaded = ordered_map(self._load, self.entries, self.workers)
        self._examples = [e for e, _ in loaded]
        self._disparities = [d for _, d in loaded]

    def examples(self) -> List[Example]:
        self._materialize()
        return self._examples

    def disparities(self) -> List[Optional[np.ndarray]]:
        """Per-pixel disparity maps at network scale, None where unknown."""
        self._materialize()
        return self._disparities

def parse_manifest(text: str, root: Union[str, Path] = ".", workers: int = 1) -> Dataset:
    entries = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {lineno}: invalid JSON: {e.msg}")
        if not isinstance(entry, dict) or "id" not in entry or "input" not in entry:
            raise ManifestError(f"line {lineno}: entries need 'id' and 'input'")
        for key in ("input", "labels", "disparity"):
            value = entry.get(key)
            if isinstance(value, str) and not _resolve(Path(root), value).exists():
                raise ManifestError(f"line {lineno}: missing {key} file {value}")
        # examples are keyed by str(id) downstream
        key = str(entry["id"])
        if key in seen:
            raise ManifestError(f"line {lineno}: duplicate id {entry['id']!r}")
        seen.add(key)
        entries.append(entry)
    return Dataset(entries, root, workers)

def load_manifest(path: Union[str, Path], workers: int = 1) -> Dataset:
    """Read a manifest; paths inside it are relative to its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}")
    dataset = parse_manifest(text, path.parent, workers)
    logger.info(f"Loaded {len(dataset)} manifest entries from {path}")
    return dataset

def write_manifest(path: Union[str, Path], entries: Sequence[Dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

def materialize_synthetic(out_dir: Union[str, Path], n_train: int, n_test: int, seed: int,
                          params: Optional[SynthParams] = None, workers: int = 1) -> Path:
    """Render synthetic examples to STEN files and write their manifest.

    Example i (train first, then test) uses scene seed seed * 100003 + i.
    """
    out = Path(out_dir)
    params = params or SynthParams()
    jobs = [(i, "train" if i < n_train else "test") for i in range(n_train + n_test)]

    def render(job: Tuple[int, str]) -> Dict[str, Any]:
        i, split = job
        example_id = f"{split}-{i:06d}"
        scene = synth_scene(seed * SYNTH_SEED_STRIDE + i, params)
        example = preprocess(scene.clip, scene.boxes, {"id": example_id})
        write_sten(out / "inputs" / f"{example_id}.sten", example.input)
        write_sten(out / "disparity" / f"{example_id}.sten", network_disparity(scene.disparity))
        return {"id": example_id, "split": split, "input": f"inputs/{example_id}.sten",
                "labels": example.labels.astype(int).tolist(), "disparity": f"disparity/{example_id}.sten"}

    entries = ordered_map(render, jobs, workers)
    manifest = out / MANIFEST_NAME
    write_manifest(manifest, entries)
    logger.info(f"Wrote {n_train} train and {n_test} test examples to {manifest}")
    return manifest
