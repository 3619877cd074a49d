import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def kron_chain(mats):
    """Independent Kronecker-product oracle used across the tests."""
    out = np.asarray(mats[0], dtype=complex)
    for m in mats[1:]:
        out = np.kron(out, np.asarray(m, dtype=complex))
    return out
