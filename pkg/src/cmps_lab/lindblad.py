"""Dissipative generator for a general Gaussian input field.

The input field is specified by its per-meter second moments
(psi_dag_sq, psi_sq, psi_dag_psi, psi_psi_dag) = (<a^dag a^dag>, <a a>,
<a^dag a>, <a a^dag>), dimensionless, with psi_sq = conj(psi_dag_sq) and
psi_psi_dag = psi_dag_psi + 1 (canonical commutator).  Vacuum is
(0, 0, 0, 1).

Expanding the meter interaction to second order gives, in addition to the
Hamiltonian part -i[K, rho]:

    (1/2) (psi_dag_sq [R, [R, rho]] + h.c.)          anomalous part
    + psi_dag_psi  D[R^dag](rho)                      upward jumps
    + psi_psi_dag  D[R](rho)                          downward jumps

with D[M](rho) = M rho M^dag - (1/2){M^dag M, rho}.  At vacuum this reduces
entrywise to the standard vectorized generator of `build_liouvillian`, and
for thermal moments (0, 0, nbar, nbar + 1) it is the familiar two-sided
damping generator.  The whole expression is trace preserving for every
admissible moment set, anomalous or not.

A flat list of jump operators

    M1 = i a R - b R^dag,  M2 = i a R + b R^dag,  M3 = c R^dag,  M4 = d R
    a = sqrt(psi_dag_sq / 2), b = sqrt(psi_sq / 2),
    c = sqrt(psi_dag_psi),    d = sqrt(psi_psi_dag)     (principal roots)

reproduces the diagonal-moment part exactly, but the cross terms of M1 and
M2 cancel pairwise, so sum_j D[M_j] cannot represent the anomalous
double-commutator part.  `compare_forms` therefore measures the discrepancy
instead of asserting it away; it vanishes (to roundoff) iff psi_dag_sq = 0.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidMomentsError, ShapeMismatchError
from .liouville import (
    Superoperator,
    build_liouvillian,
    choi_min_eigenvalue,
    trace_functional,
)

MOMENT_TOL = 1e-12


@dataclass(frozen=True)
class FieldMoments:
    """Validated second moments of the input field (per meter)."""

    psi_dag_sq: complex
    psi_sq: complex
    psi_dag_psi: float
    psi_psi_dag: float

    def __post_init__(self):
        a = complex(self.psi_dag_sq)
        b = complex(self.psi_sq)
        n = complex(self.psi_dag_psi)
        nt = complex(self.psi_psi_dag)
        scale = 1.0 + max(abs(a), abs(n))
        if abs(b - a.conjugate()) > MOMENT_TOL * scale:
            raise InvalidMomentsError("psi_sq must equal conj(psi_dag_sq)")
        if abs(n.imag) > MOMENT_TOL * scale or n.real < -MOMENT_TOL:
            raise InvalidMomentsError("psi_dag_psi must be real and nonnegative")
        if abs(nt - n - 1.0) > MOMENT_TOL * scale:
            raise InvalidMomentsError("psi_psi_dag must equal psi_dag_psi + 1")
        # Gaussian admissibility: |<a a>|^2 <= <a^dag a> <a a^dag>
        if abs(a) ** 2 > n.real * (n.real + 1.0) + MOMENT_TOL * scale:
            raise InvalidMomentsError(
                "anomalous moment too large: |psi_dag_sq|^2 must not exceed "
                "psi_dag_psi * psi_psi_dag"
            )
        occ = max(0.0, float(n.real))
        object.__setattr__(self, "psi_dag_sq", a)
        object.__setattr__(self, "psi_sq", a.conjugate())
        object.__setattr__(self, "psi_dag_psi", occ)
        object.__setattr__(self, "psi_psi_dag", occ + 1.0)

    @classmethod
    def vacuum(cls):
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def thermal(cls, nbar):
        if nbar < 0:
            raise InvalidMomentsError("thermal occupation must be >= 0")
        return cls(0.0, 0.0, float(nbar), float(nbar) + 1.0)


@dataclass(frozen=True)
class JumpSet:
    """Jump operators of the flat decomposition plus the Hamiltonian part."""

    operators: tuple
    K: np.ndarray


def _dissipator(m):
    """Vectorized D[M]: rho -> M rho M^dag - (1/2){M^dag M, rho}."""
    m = np.asarray(m, dtype=complex)
    eye = np.eye(m.shape[0])
    mdm = m.conj().T @ m
    return np.kron(m, m.conj()) - 0.5 * (np.kron(mdm, eye) + np.kron(eye, mdm.T))


def _double_commutator(r):
    """Vectorized rho -> [R, [R, rho]]."""
    r = np.asarray(r, dtype=complex)
    eye = np.eye(r.shape[0])
    r2 = r @ r
    return np.kron(r2, eye) - 2.0 * np.kron(r, r.T) + np.kron(eye, r2.T)


def build_general_generator(K, R, moments):
    """Vectorized generator for the given field moments.

    Reduces exactly to `build_liouvillian(K, R)` at vacuum moments and is
    trace preserving for every admissible moment set.
    """
    if not isinstance(moments, FieldMoments):
        moments = FieldMoments(*moments)
    K = np.asarray(K, dtype=complex)
    R = np.asarray(R, dtype=complex)
    if K.shape != R.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeMismatchError(f"K and R must be square and equal-shaped, got {K.shape}, {R.shape}")
    if moments.psi_dag_sq == 0 and moments.psi_dag_psi == 0.0:
        return build_liouvillian(K, R)
    d = K.shape[0]
    eye = np.eye(d)
    mat = -1j * np.kron(K, eye) + 1j * np.kron(eye, K.T)
    alpha = moments.psi_dag_sq
    if alpha != 0:
        dc = _double_commutator(R)
        dc_conj = _double_commutator(R.conj().T)
        mat = mat + 0.5 * (alpha * dc + np.conj(alpha) * dc_conj)
    mat = mat + moments.psi_dag_psi * _dissipator(R.conj().T)
    mat = mat + moments.psi_psi_dag * _dissipator(R)
    return Superoperator(mat=mat, dim=d)


def jump_decomposition(K, R, moments):
    """Flat jump-operator list (principal square roots of the moments).

    Diagnostic companion to `build_general_generator`: the sum of standard
    dissipators over these operators matches the generator exactly only for
    diagonal moments (psi_dag_sq = 0); see `compare_forms`.
    """
    if not isinstance(moments, FieldMoments):
        moments = FieldMoments(*moments)
    R = np.asarray(R, dtype=complex)
    K = np.asarray(K, dtype=complex)
    a = np.sqrt(complex(moments.psi_dag_sq) / 2.0)
    b = np.sqrt(complex(moments.psi_sq) / 2.0)
    c = np.sqrt(complex(moments.psi_dag_psi))
    dd = np.sqrt(complex(moments.psi_psi_dag))
    rd = R.conj().T
    ops = (
        1j * a * R - b * rd,
        1j * a * R + b * rd,
        c * rd,
        dd * R,
    )
    return JumpSet(operators=ops, K=K)


@dataclass(frozen=True)
class FormComparison:
    """Diagnostics from comparing the two generator constructions."""

    max_difference: float
    trace_defect_general: float
    trace_defect_jump_form: float
    choi_min_general: float
    choi_min_jump_form: float


def compare_forms(K, R, moments, dx=0.1):
    """Measure the gap between the moment generator and the jump-sum form.

    Returns max-norm matrix difference, trace defects of both forms, and
    the minimum Choi eigenvalue of exp(G dx) for both.  Nothing is
    asserted here; callers decide what counts as agreement (diagonal
    moments should give max_difference at roundoff, anomalous moments a
    finite discrepancy).
    """
    gen = build_general_generator(K, R, moments)
    jumps = jump_decomposition(K, R, moments)
    d = gen.dim
    eye = np.eye(d)
    jmat = -1j * np.kron(jumps.K, eye) + 1j * np.kron(eye, jumps.K.T)
    for m in jumps.operators:
        jmat = jmat + _dissipator(m)
    tr = trace_functional(d)
    return FormComparison(
        max_difference=float(np.abs(gen.mat - jmat).max()),
        trace_defect_general=float(np.abs(tr @ gen.mat).max()),
        trace_defect_jump_form=float(np.abs(tr @ jmat).max()),
        choi_min_general=choi_min_eigenvalue(scipy.linalg.expm(gen.mat * dx)),
        choi_min_jump_form=choi_min_eigenvalue(scipy.linalg.expm(jmat * dx)),
    )
