import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from core_ecg.model import ModelConfig  # noqa: E402
from core_ecg.signal import build_cache, generate_synthetic  # noqa: E402


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records a PASS/FAIL line and asserts ``ok``."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{n:02d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        assert ok, line

    return record


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(dim=8, heads=2, enc_layers=1, latent_dec_layers=1, time_dec_layers=1, patch_len=8,
                n_leads=3, n_patches=4, proj_hidden=8, proj_out=6, mlp_ratio=2)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    records, manifest = generate_synthetic(32, seed=3)
    return records, manifest


@pytest.fixture(scope="session")
def small_cache(small_dataset):
    records, manifest = small_dataset
    cache, failures = build_cache(records, {e.record_id: e.split for e in manifest.entries}, manifest.class_names)
    assert not failures
    return cache


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
