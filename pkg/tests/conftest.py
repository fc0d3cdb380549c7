import numpy as np
import pytest

from bbm92kit._kernels import warmup


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    """Compile the numba kernels once so timed tests measure steady state."""
    warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260819)
