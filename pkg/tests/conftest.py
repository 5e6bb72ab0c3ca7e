import numpy as np
import pytest

from evoflow.envs import HypergridEnv, SeqEnv


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid2x4():
    return HypergridEnv(dims=2, horizon=4, r0=1e-2)


@pytest.fixture
def grid1x2():
    return HypergridEnv(dims=1, horizon=2, r0=1e-3)


def random_seq_env(rng, alphabet=("A", "C"), length=3, beta=1.0):
    """Sequence env over a fully random positive reward table."""
    import itertools

    table = {
        "".join(p): float(rng.uniform(0.1, 2.0))
        for p in itertools.product(alphabet, repeat=length)
    }
    return SeqEnv(alphabet=alphabet, length=length, reward_table=table, beta=beta)


@pytest.fixture
def seq_ac3(rng):
    return random_seq_env(rng)
