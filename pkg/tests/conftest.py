import os

# Single-threaded BLAS: faster at these matrix sizes and keeps every
# reduction order fixed for the bit-exact determinism tests.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402  (import after the env guard)
import pytest

from latentsteer.model import init_params


@pytest.fixture(scope="session")
def params7():
    """Frozen reference model used across the suite."""
    return init_params(7)
