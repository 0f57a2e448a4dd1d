"""
Pytest configuration and fixtures for byzsgd tests.
"""

from pathlib import Path
from typing import List

import numpy as np
import pytest

from byzsgd.datagen import HeteroModelSpec, generate
from byzsgd.model import LocalDataset, ObjectiveSpec


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers",
        "slow: statistical multi-seed acceptance runs (deselect with -m 'not slow')",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quadratic():
    return ObjectiveSpec()


@pytest.fixture
def small_spec():
    return HeteroModelSpec(d=4, R=6, n=50, noise_std=0.1, shift_radius=0.5)


@pytest.fixture
def small_worlds(small_spec) -> List[LocalDataset]:
    """Six heterogeneous linear-regression workers in d=4"""
    return generate(np.random.default_rng(7), small_spec).worlds


@pytest.fixture
def write_ini(tmp_path):
    """Write an INI config into tmp_path; output goes to tmp_path/out unless the text sets out"""

    def _write(text: str, name: str = "run.ini") -> Path:
        path = tmp_path / name
        out_line = f"out = {tmp_path / 'out'}\n"
        if "[experiment]" not in text:
            body = "[experiment]\n" + out_line + text
        elif "\nout =" not in "\n" + text:
            body = text.replace("[experiment]\n", "[experiment]\n" + out_line, 1)
        else:
            body = text
        path.write_text(body, encoding="utf-8")
        return path

    return _write
