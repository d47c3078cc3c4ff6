import numpy as np
import pytest

import soarmor as sm
from soarmor.linalg import from_triplets
from soarmor.system import SecondOrderSystem


def dense_system(M, D, K, B=None, C=None) -> SecondOrderSystem:
    """SecondOrderSystem from small dense (or scalar) real matrices."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = M.shape[0]
    B = np.ones((n, 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float)).reshape(n, -1)
    C = np.ones((1, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, n)

    def sparsify(A):
        trips = [(i, j, A[i, j]) for i in range(A.shape[0]) for j in range(A.shape[1])
                 if A[i, j] != 0.0]
        return from_triplets(trips, *A.shape)

    return SecondOrderSystem(M=sparsify(M), D=sparsify(D), K=sparsify(K),
                             B=sparsify(B), C=sparsify(C))


def helmholtz_model(m: int) -> SecondOrderSystem:
    mesh = sm.classify_boundary(sm.build_unit_square_mesh(m))
    return sm.assemble(mesh)


@pytest.fixture(scope="session")
def model4():
    """Coarsest classifiable unit-square model (n = 25)."""
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # default probes collide at m = 4
        return helmholtz_model(4)


@pytest.fixture(scope="session")
def model8():
    return helmholtz_model(8)


@pytest.fixture(scope="session")
def model16():
    return helmholtz_model(16)
