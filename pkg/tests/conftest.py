"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest
import scipy.linalg

from viskip.numerics import RngStream
from viskip.problems import BlockDims, OperatorHandle


def exact_star_cocoercivity(jac: np.ndarray) -> float:
    """Tight modulus max_v |J v|^2 / <J v, v>, by a generalized eigenproblem.

    Independent of the library's spectral-formula route; valid whenever the
    symmetrized Jacobian's kernel is contained in the Jacobian's kernel.
    """
    sym = 0.5 * (jac + jac.T)
    evals, evecs = np.linalg.eigh(sym)
    keep = evals > 1e-10 * max(1.0, float(evals.max()))
    basis = evecs[:, keep]
    m1 = basis.T @ (jac.T @ jac) @ basis
    m2 = basis.T @ sym @ basis
    return float(np.max(scipy.linalg.eigh(m1, m2, eigvals_only=True)))


def two_client_scalar_handle(slopes=(1.0, 2.0), offsets=(0.0, 0.0)) -> OperatorHandle:
    """Clients F_i(x) = slope_i * x + offset_i on a 1-d variable."""
    n = len(slopes)
    jac = np.array(slopes, dtype=np.float64).reshape(n, 1, 1, 1)
    off = np.array(offsets, dtype=np.float64).reshape(n, 1, 1)
    dims = BlockDims(d1=1, d2=0, n=n, m=(1,) * n)
    return OperatorHandle(dims, jac, off)


def finite_sum_scalar_handle(slopes_by_client, offsets_by_client=None) -> OperatorHandle:
    """Finite-sum scalar problem: client i has samples F_ij(x) = a_ij x + b_ij."""
    slopes = np.asarray(slopes_by_client, dtype=np.float64)
    n, m = slopes.shape
    if offsets_by_client is None:
        offsets_by_client = np.zeros((n, m))
    off = np.asarray(offsets_by_client, dtype=np.float64).reshape(n, m, 1)
    dims = BlockDims(d1=1, d2=0, n=n, m=(m,) * n)
    return OperatorHandle(dims, slopes.reshape(n, m, 1, 1), off)


@pytest.fixture
def rng():
    return RngStream(1234, 99)
