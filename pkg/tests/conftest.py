"""Shared instances and random-matrix helpers for the test suite."""

import numpy as np
import pytest

from cmps_lab import Finite, new_cmps

# driven two-level emitter: K = (Omega/2) sigma_x with Omega = 1, R = sigma_minus.
# Exact stationary values used throughout: density 1/3, Liouvillian gap 1/2,
# eigenvalues {0, -1/2, -3/4 +- i sqrt(15)/4}, |<R>_ss|^2 = 1/9.
RF_K = np.array([[0.0, 0.5], [0.5, 0.0]])
RF_R = np.array([[0.0, 0.0], [1.0, 0.0]])

# pure decay: no drive, emission only.  From the excited state the no-jump
# survival is exp(-tau) and exactly one jump ever happens.
DAMP_K = np.zeros((2, 2))
DAMP_R = np.array([[0.0, 0.0], [1.0, 0.0]])
EXCITED = np.array([[1.0, 0.0], [0.0, 0.0]])


def rand_herm(n, rng):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def rand_mat(n, rng):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def random_instance(seed, dims=(2, 5), scale=0.7):
    """Seeded random thermodynamic instance with Hermitian K."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(dims[0], dims[1]))
    return new_cmps(d, rand_herm(d, rng), scale * rand_mat(d, rng))


@pytest.fixture
def rf():
    return new_cmps(2, RF_K, RF_R)


@pytest.fixture
def damping_finite():
    return new_cmps(2, DAMP_K, DAMP_R, Finite(length=8.0, boundary_rho=EXCITED))


@pytest.fixture
def coherent():
    """D=1 instance; the field is a coherent state with amplitude r."""
    def make(r=0.8, k=0.3):
        return new_cmps(1, np.array([[k]]), np.array([[r]], dtype=complex))
    return make
