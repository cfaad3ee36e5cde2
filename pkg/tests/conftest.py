import numpy as np
import pytest

from scenerylab.walk import StepLaw


@pytest.fixture(scope="session")
def lazy3():
    return StepLaw.lazy(3)


@pytest.fixture(scope="session")
def simple2():
    return StepLaw.simple(2)


def pairwise_ell2(pos: np.ndarray) -> int:
    return int(np.all(pos[:, None, :] == pos[None, :, :], axis=-1).sum())


def triple_ell3(pos: np.ndarray) -> int:
    eq = np.all(pos[:, None, :] == pos[None, :, :], axis=-1).astype(np.int64)
    return int(np.einsum("ij,ik,jk->", eq, eq, eq))
