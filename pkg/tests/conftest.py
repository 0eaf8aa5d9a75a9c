import numpy as np
import pytest

from ksm.engine import set_debug_checks, use_dtype


@pytest.fixture(autouse=True)
def _finite_checks():
    # every op result is screened for NaN/Inf while tests run
    set_debug_checks(True)
    yield
    set_debug_checks(False)


@pytest.fixture
def f64():
    with use_dtype(np.float64):
        yield
