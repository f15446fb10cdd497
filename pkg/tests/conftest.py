import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gchmm.data import MISSING, DynamicNetwork  # noqa: E402
from gchmm.model import InfectionParams  # noqa: E402


def random_network(rng, N, T, p_edge=0.4):
    days = []
    for _ in range(T):
        days.append([(i, j) for i in range(N) for j in range(i + 1, N) if rng.random() < p_edge])
    return DynamicNetwork(N, days)


def random_params(rng, N, S, homogeneous=False, lo=0.05, hi=0.95):
    u = lambda: rng.uniform(lo, hi, size=N)  # noqa: E731
    if homogeneous:
        g, a, b = rng.uniform(lo, hi, size=3)
        return InfectionParams.homogeneous(N, g, a, b, rng.uniform(lo, hi), rng.uniform(lo, hi, (2, S)))
    return InfectionParams(u(), u(), u(), rng.uniform(lo, hi), rng.uniform(lo, hi, (2, S)))


def random_symptoms(rng, N, T, S, p_miss=0.3):
    Y = (rng.random((N, T, S)) < 0.5).astype(np.int8)
    Y[rng.random((N, T, S)) < p_miss] = MISSING
    return Y


def random_states(rng, N, T, p=0.4):
    return (rng.random((N, T + 1)) < p).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
