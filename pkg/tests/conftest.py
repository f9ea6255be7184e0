"""Shared fixtures: repository paths and the stock interaction kernel."""
from pathlib import Path

import pytest

from pchaos.core import KernelSpec

REPO_ROOT = Path(__file__).resolve().parents[1]
KERNEL_PATH = REPO_ROOT / "kernels" / "default.txt"
RATES_CONFIG_PATH = REPO_ROOT / "configs" / "rates.cfg"


@pytest.fixture(scope="session")
def default_kernel() -> KernelSpec:
    """The stock kernel shipped with the repository: one cosine confinement
    mode plus one sine interaction mode, sup-norm bound 1."""
    return KernelSpec.from_file(KERNEL_PATH)
