import numpy as np
import pytest

from hirota_rh.core import Convention, make_spec


def random_spec(rng, n, convention, components=2, epsilon=None):
    """Random spectral data with well separated points and moderate amplitudes."""
    lams = []
    while len(lams) < n:
        lam = complex(rng.uniform(-0.6, 0.6), rng.uniform(0.3, 0.9))
        if all(abs(lam - l) > 0.15 for l in lams):
            lams.append(lam)
    norms = [list(rng.uniform(0.4, 1.5, components) * np.exp(1j * rng.uniform(0, 2 * np.pi, components)))
             for _ in range(n)]
    eps = rng.choice([0.0, 0.1, 0.25]) if epsilon is None else epsilon
    return make_spec(lams, norms, epsilon=float(eps), convention=convention)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture
def reg1():
    return make_spec([0.2 + 0.5j], [[1.0, 0.5j]], epsilon=0.1, convention=Convention.REGULARIZED)


@pytest.fixture
def reg2():
    return make_spec([0.2 + 0.35j, -0.2 + 0.4j], [[1.0, 0.5j], [0.7, -0.3]], epsilon=0.1,
                     convention=Convention.REGULARIZED)


@pytest.fixture
def asp1():
    return make_spec([0.2 + 0.5j], [[1.0, 0.5j]], epsilon=0.1, convention=Convention.AS_PRINTED)
