"""Lattice oracle: site tensors, transfer matrix, and lattice correlators.

A step-eps discretization replaces the continuum state by a chain with site
tensors

    A0 = 1 + eps Q,   A1 = sqrt(eps) R,   A2 = (eps / sqrt 2) R^2 (order 2),

where the particle number carried by a site is the tensor index.  The site
update of the flattened density matrix is the transfer matrix
E = sum_n A^n kron conj(A^n); it reproduces the continuum generator to
first order, E = 1 + eps L + O(eps^2).  Lattice expectation values
(occupation / eps, hopping / eps, pair occupation / eps^2) converge to the
continuum density, two-point function and pair correlator with O(eps)
error, which is what makes this module an independent check on the
insertion calculus: everything here is contracted directly from the
tensors, with no use of the continuum generator or its exponential.

Thermodynamic values use the dominant left/right eigenvectors of E; finite
chains contract the full product with the boundary state, anchored at the
left edge like the continuum convention.
"""

from dataclasses import dataclass

import numpy as np

from .core import Finite, q_matrix
from .errors import (
    ShapeMismatchError,
    StepNotPositiveError,
    WindowTooSmallError,
)

FIXED_POINT_TOL = 1e-10


@dataclass(frozen=True)
class LatticeTensors:
    eps: float
    matrices: tuple
    dim: int
    order: int


@dataclass(frozen=True)
class TransferMatrix:
    mat: np.ndarray
    eps: float
    dim: int


def lattice_tensors(params, eps, order=1):
    """Site tensors at step eps; order 2 adds the two-particle tensor."""
    eps = float(eps)
    if eps <= 0:
        raise StepNotPositiveError(f"lattice step must be positive, got {eps}")
    if order not in (1, 2):
        raise ShapeMismatchError(f"tensor order must be 1 or 2, got {order}")
    q = q_matrix(params).mat
    mats = [np.eye(params.dim, dtype=complex) + eps * q, np.sqrt(eps) * params.R]
    if order == 2:
        mats.append((eps / np.sqrt(2.0)) * (params.R @ params.R))
    return LatticeTensors(eps=eps, matrices=tuple(mats), dim=params.dim, order=order)


def transfer_matrix(tensors):
    """E = sum_n A^n kron conj(A^n) acting on row-stacked density matrices."""
    mat = sum(np.kron(a, a.conj()) for a in tensors.matrices)
    return TransferMatrix(mat=mat, eps=tensors.eps, dim=tensors.dim)


def _site_superops(tensors, observable):
    """Superoperators whose chain contraction gives the lattice estimator."""
    mats = tensors.matrices
    if observable == "occupation":
        number = sum(n * np.kron(a, a.conj()) for n, a in enumerate(mats) if n)
        return (number,)
    if observable == "hopping":
        lower = sum(
            np.sqrt(n) * np.kron(mats[n], mats[n - 1].conj())
            for n in range(1, len(mats))
        )
        raise_ = sum(
            np.sqrt(n) * np.kron(mats[n - 1], mats[n].conj())
            for n in range(1, len(mats))
        )
        return (lower, raise_)
    if observable == "pair":
        number = sum(n * np.kron(a, a.conj()) for n, a in enumerate(mats) if n)
        return (number, number)
    raise ShapeMismatchError(f"unknown lattice observable {observable!r}")


def _dominant_pair(emat):
    """Dominant eigenvalue with left/right eigenvectors of E."""
    evals, vr = np.linalg.eig(emat)
    i = int(np.argmax(np.abs(evals)))
    eta = evals[i]
    mags = np.sort(np.abs(evals))[::-1]
    if mags.size > 1 and mags[0] - mags[1] < 1e-12 * max(1.0, mags[0]):
        raise WindowTooSmallError("dominant transfer eigenvalue is degenerate")
    evals_l, vl = np.linalg.eig(emat.conj().T)
    j = int(np.argmin(np.abs(evals_l - np.conj(eta))))
    left = vl[:, j]
    right = vr[:, i]
    res = max(
        np.abs(emat @ right - eta * right).max(),
        np.abs(emat.conj().T @ left - np.conj(eta) * left).max(),
    )
    if res > FIXED_POINT_TOL * max(1.0, abs(eta)):
        raise WindowTooSmallError(f"transfer fixed-point residual {res:.3e}")
    overlap = left.conj() @ right
    if abs(overlap) < 1e-12:
        raise WindowTooSmallError("left/right transfer fixed points are orthogonal")
    return eta, left.conj() / overlap, right


def lattice_correlators(tensors, observable, distances=None, n_sites=None, boundary_rho=None):
    """Lattice estimators of continuum observables.

    observable: "occupation" (scalar density), "hopping" or "pair" (values
    at integer site distances >= 1, continuum separation = distance * eps).
    Thermodynamic contraction (n_sites None) uses the dominant fixed points
    of E; a finite chain of n_sites sites contracts the boundary state at
    the left edge against the trace functional, insertions anchored at
    site 0.  Values are rescaled by the eps powers that map lattice
    operators to field operators.
    """
    eps = tensors.eps
    d = tensors.dim
    superops = _site_superops(tensors, observable)
    emat = transfer_matrix(tensors).mat

    if observable == "occupation":
        distances = [0]
    else:
        if distances is None:
            raise ShapeMismatchError("hopping/pair observables need distances")
        distances = [int(m) for m in np.atleast_1d(distances)]
        if any(m < 1 for m in distances):
            raise ShapeMismatchError("site distances must be >= 1")

    if all(np.abs(s).max() == 0.0 for s in superops):
        vals = np.zeros(len(distances))
        return float(vals[0]) if observable == "occupation" else vals

    if n_sites is None:
        eta, left, right = _dominant_pair(emat)
        close = left
        open_vec = right
        total_sites = None
    else:
        n_sites = int(n_sites)
        if boundary_rho is None:
            raise ShapeMismatchError("finite chains need boundary_rho")
        span = 1 if observable == "occupation" else max(distances) + 1
        if n_sites < span:
            raise WindowTooSmallError(f"chain of {n_sites} sites cannot hold span {span}")
        close = np.eye(d, dtype=complex).reshape(-1)
        open_vec = np.asarray(boundary_rho, dtype=complex).reshape(-1)
        eta = 1.0  # finite chains normalize by the full-norm contraction instead
        total_sites = n_sites

    def contract(m):
        """Chain value with insertions at site 0 and (for pairs) site m."""
        if observable == "occupation":
            v = superops[0] @ open_vec
            used = 1
        else:
            v = superops[1] @ open_vec  # creation-side insertion at site 0
            for _ in range(m - 1):
                v = emat @ v
            v = superops[0] @ v
            used = m + 1
        if total_sites is None:
            return (close @ v) / (close @ open_vec) / eta**used
        for _ in range(total_sites - used):
            v = emat @ v
        norm_v = open_vec
        for _ in range(total_sites):
            norm_v = emat @ norm_v
        return (close @ v) / (close @ norm_v)

    scale = {"occupation": eps, "hopping": eps, "pair": eps**2}[observable]
    values = np.array([contract(m) for m in distances]) / scale
    if observable == "occupation":
        return float(values[0].real)
    if observable == "pair":
        return values.real
    return values


@dataclass(frozen=True)
class ConvergenceStudy:
    eps: np.ndarray
    values: np.ndarray
    extrapolated: float
    errors: np.ndarray
    orders: np.ndarray


def convergence_study(params, eps_list, observable="occupation", order=1):
    """Lattice values across eps with Richardson-extrapolated errors.

    observable is "occupation" or a tuple ("hopping"/"pair", separation);
    separations must be integer multiples of every eps.  The reference
    value extrapolates the two finest steps assuming first-order
    convergence, so the error column should shrink by the eps ratio (the
    empirical orders report the observed exponents).
    """
    eps_arr = np.sort(np.atleast_1d(np.asarray(eps_list, dtype=float)))[::-1]
    if eps_arr.size < 2:
        raise ShapeMismatchError("need at least two eps values")
    if np.any(eps_arr <= 0):
        raise StepNotPositiveError("eps values must be positive")

    finite = isinstance(params.geometry, Finite)
    values = []
    for eps in eps_arr:
        tensors = lattice_tensors(params, eps, order=order)
        kwargs = {}
        if finite:
            n_sites = int(round(params.geometry.length / eps))
            if abs(n_sites * eps - params.geometry.length) > 1e-9:
                raise ShapeMismatchError(f"eps {eps} does not divide the length")
            kwargs = {"n_sites": n_sites, "boundary_rho": params.geometry.boundary_rho}
        if observable == "occupation":
            values.append(lattice_correlators(tensors, "occupation", **kwargs))
        else:
            kind, sep = observable
            m = int(round(sep / eps))
            if abs(m * eps - sep) > 1e-9 * max(1.0, sep):
                raise ShapeMismatchError(f"separation {sep} is not a multiple of eps {eps}")
            val = lattice_correlators(tensors, kind, distances=[m], **kwargs)[0]
            values.append(val.real if np.iscomplexobj(val) else val)
    values = np.asarray(values, dtype=float)

    ratio = eps_arr[-2] / eps_arr[-1]
    extrapolated = (ratio * values[-1] - values[-2]) / (ratio - 1.0)
    errors = np.abs(values - extrapolated)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(errors[:-1] / errors[1:]) / np.log(eps_arr[:-1] / eps_arr[1:])
    return ConvergenceStudy(
        eps=eps_arr,
        values=values,
        extrapolated=float(extrapolated),
        errors=errors,
        orders=orders,
    )
