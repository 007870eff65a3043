"""Vectorized fallback stepping loop.

Advances a batch of pure states through the jump/no-jump scheme: at each
step a trajectory jumps when its uniform draw falls below
dt * <phi|rate_op|phi>, in which case jump_op is applied, otherwise
step_op; the state is renormalized either way.  Semantics match the
compiled kernel step for step, so jump records from the two backends
agree on identical uniform streams (up to last-ulp rounding of the
threshold, which flips a decision with negligible probability).
"""

import numpy as np

from ..errors import NonNormalizableStateError

NORM_FLOOR = 1e-150


def run_steps_batch(step_op, jump_op, rate_op, states, uniforms, dt, step_offset=0):
    """Advance every row of states through uniforms.shape[1] steps in place.

    Returns (jump_rows, jump_steps): the trajectory row and global step
    index (local index + step_offset) of every jump, in step order.
    """
    n_traj, n_steps = uniforms.shape
    rows_out = []
    steps_out = []
    step_t = np.ascontiguousarray(step_op.T)
    jump_t = np.ascontiguousarray(jump_op.T)
    rate_t = np.ascontiguousarray(rate_op.T)
    for k in range(n_steps):
        acc = states @ rate_t
        p = dt * np.einsum("bi,bi->b", states.conj(), acc).real
        jumping = uniforms[:, k] < p
        new = states @ step_t
        if jumping.any():
            rows = np.nonzero(jumping)[0]
            new[rows] = states[rows] @ jump_t
            rows_out.append(rows)
            steps_out.append(np.full(rows.size, k + step_offset, dtype=np.int64))
        norms = np.sqrt((new.real**2 + new.imag**2).sum(axis=1))
        bad = norms < NORM_FLOOR
        if bad.any():
            row = int(np.nonzero(bad)[0][0])
            raise NonNormalizableStateError(
                "state norm underflow in trajectory row %d at step %d"
                % (row, k + step_offset)
            )
        states[...] = new / norms[:, None]
    if rows_out:
        return np.concatenate(rows_out), np.concatenate(steps_out)
    return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
