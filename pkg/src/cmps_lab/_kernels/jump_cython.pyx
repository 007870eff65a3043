# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-trajectory stepping loop.

Implements exactly the scheme of jump_numpy.run_steps_batch for one state:
per step, jump with probability dt * <phi|rate_op|phi> against the supplied
uniform, apply jump_op or step_op, renormalize.  The state is updated in
place; jump step indices are written to the caller's buffer.  Returns the
jump count, or -(step + 1) on norm underflow.
"""

from libc.math cimport sqrt
from libc.stdint cimport int64_t


def run_steps(double complex[:, ::1] step_op,
              double complex[:, ::1] jump_op,
              double complex[:, ::1] rate_op,
              double complex[::1] state,
              double[::1] uniforms,
              double dt,
              int64_t[::1] jump_steps):
    cdef Py_ssize_t n_steps = uniforms.shape[0]
    cdef Py_ssize_t dim = state.shape[0]
    cdef Py_ssize_t k, i, j
    cdef int64_t n_jumps = 0
    cdef double p, nrm
    cdef double complex acc
    cdef double complex work[64]
    if dim > 64:
        raise ValueError("compiled kernel supports dim <= 64")
    if jump_steps.shape[0] < n_steps:
        raise ValueError("jump buffer too small")

    with nogil:
        for k in range(n_steps):
            p = 0.0
            for i in range(dim):
                acc = 0
                for j in range(dim):
                    acc = acc + rate_op[i, j] * state[j]
                p = p + state[i].real * acc.real + state[i].imag * acc.imag
            p = p * dt
            if uniforms[k] < p:
                for i in range(dim):
                    acc = 0
                    for j in range(dim):
                        acc = acc + jump_op[i, j] * state[j]
                    work[i] = acc
                jump_steps[n_jumps] = k
                n_jumps = n_jumps + 1
            else:
                for i in range(dim):
                    acc = 0
                    for j in range(dim):
                        acc = acc + step_op[i, j] * state[j]
                    work[i] = acc
            nrm = 0.0
            for i in range(dim):
                nrm = nrm + work[i].real * work[i].real + work[i].imag * work[i].imag
            nrm = sqrt(nrm)
            if nrm < 1e-150:
                n_jumps = -(k + 1)
                break
            for i in range(dim):
                state[i] = work[i] / nrm
    return n_jumps
