import numpy as np
import pytest

import darer.autodiff as ad


@pytest.fixture(autouse=True)
def _no_debug_checks():
    yield
    ad.set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240229)
