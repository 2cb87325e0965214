import json
import os
import tempfile

import numpy as np
import pytest

from stereosparse.config import Config
from stereosparse.core.tensor import KernelStack
from stereosparse.models.base import LcaConfig
from stereosparse.models.data import Example
from stereosparse.models.network import NetworkSpec, VariantKind
from stereosparse.utils.sten import write_sten

@pytest.fixture(scope="session")
def test_config():
    """Create a test configuration."""
    return Config(LOG_LEVEL="DEBUG", WORKERS=1, SEED=1)

@pytest.fixture
def temp_dir():
    """Create a temporary directory for test output."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield tmp_dir

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture
def small_dictionary(rng):
    """Four unit-norm 1x3x3 atoms over one channel."""
    weights = rng.standard_normal((4, 1, 3, 3, 1))
    weights /= np.linalg.norm(weights.reshape(4, -1), axis=1).reshape(4, 1, 1, 1, 1)
    return KernelStack(weights)

@pytest.fixture
def tiny_spec():
    """A 2x8x16x2 detector with a 2x2 window grid."""
    def make(variant=VariantKind.CONV_SUP, depth=3):
        return NetworkSpec(variant=variant, depth=depth, frames=2, height=8, width=16, channels=2,
                           features=2, mid_features=2, first_kernel=(2, 3, 3), first_stride=(1, 2, 2),
                           window=(4, 8), lca=LcaConfig(lam=0.05, max_iters=50))
    return make

@pytest.fixture
def tiny_examples(rng):
    """Six labelled examples for the tiny spec; every grid has a positive window."""
    examples = []
    for i in range(6):
        labels = np.zeros((2, 2))
        labels[i % 2, (i // 2) % 2] = 1.0
        x = rng.standard_normal((2, 8, 16, 2))
        x[:, 4 * (i % 2):4 * (i % 2) + 4, 8 * ((i // 2) % 2):8 * ((i // 2) % 2) + 8] += 2.0
        examples.append(Example(x, labels, {"id": f"ex-{i}"}))
    return examples

@pytest.fixture
def sten_manifest(temp_dir, rng):
    """A manifest of small STEN inputs: 4 train and 2 test examples, 3x16x64x6 each."""
    def make(n_train=4, n_test=2):
        os.makedirs(os.path.join(temp_dir, "inputs"), exist_ok=True)
        lines = []
        for i in range(n_train + n_test):
            split = "train" if i < n_train else "test"
            x = rng.standard_normal((3, 16, 64, 6))
            col = i % 2
            x[:, :, 32 * col:32 * col + 32] += 1.5
            path = os.path.join("inputs", f"{split}-{i}.sten")
            write_sten(os.path.join(temp_dir, path), x)
            labels = [[1, 0]] if col == 0 else [[0, 1]]
            lines.append(json.dumps({"id": f"{split}-{i}", "split": split, "input": path, "labels": labels}))
        manifest = os.path.join(temp_dir, "manifest.jsonl")
        with open(manifest, "w") as f:
            f.write("\n".join(lines) + "\n")
        return manifest
    return make

@pytest.fixture(autouse=True)
def mock_env_vars(monkeypatch):
    """Keep process settings deterministic for every test."""
    monkeypatch.setenv("STEREOSPARSE_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("STEREOSPARSE_WORKERS", "1")
    monkeypatch.delenv("STEREOSPARSE_LOG_FILE", raising=False)
