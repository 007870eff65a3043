"""Unraveled photon-counting trajectories of the measured field.

A pure internal state phi is stepped with the no-jump contraction
exp(Q dt) and interrupted by jumps phi -> R phi at rate <phi|R^dag R|phi>,
renormalizing after every step.  Jump positions along the record are the
point process whose statistics (intensity, pair correlation, waiting
times) the state-space correlators predict; the estimators here are the
empirical side of that comparison.

Reproducibility: trajectory index i of master seed s draws from
Generator(PCG64(SeedSequence([s, i]))), consuming one uniform for the
initial-state draw and then one per step, so results are independent of
backend, threading, and chunking (up to last-ulp threshold rounding).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels
from ._kernels import jump_numpy
from .core import Finite, Thermodynamic, q_matrix
from .errors import (
    InsufficientDataError,
    NonNormalizableStateError,
    StepNotPositiveError,
    StepTooLargeError,
    ValidationError,
    WindowTooSmallError,
)
from .liouville import build_liouvillian, require_unique_fixed_space, steady_state

# dt must resolve the fastest jump scale; ceiling keeps the O(dt) scheme
# bias well below statistical resolution at the accepted ensemble sizes
DT_CEILING_FACTOR = 0.01
MEMORY_BUDGET_BYTES = 64 * 2**20


@dataclass(frozen=True)
class JumpRecord:
    """One trajectory: jump positions plus the surviving pure state."""

    positions: np.ndarray
    final_state: np.ndarray
    seed_info: tuple
    length: float
    dt: float


@dataclass(frozen=True)
class TrajectoryStats:
    n_traj: int
    length: float
    rate: float
    rate_stderr: float
    bin_edges: np.ndarray
    pair_correlation: np.ndarray
    pair_stderr: np.ndarray
    waiting_probs: np.ndarray
    waiting_stderr: np.ndarray
    n_conditioning_jumps: int


def max_step(params):
    """Largest admissible dt for the given emission operator."""
    rate_scale = np.linalg.norm(params.R.conj().T @ params.R, 2)
    return DT_CEILING_FACTOR / max(1.0, rate_scale)


def _validate_step(params, length, dt):
    if dt <= 0:
        raise StepNotPositiveError("dt must be positive")
    ceiling = max_step(params)
    if dt > ceiling * (1 + 1e-12):
        raise StepTooLargeError(
            "dt=%g exceeds the stability ceiling %g for this emission operator"
            % (dt, ceiling)
        )
    if length <= 0:
        raise ValidationError("record length must be positive")
    n_steps = int(round(length / dt))
    if n_steps < 1:
        raise ValidationError("record shorter than one step")
    return n_steps


def _stream(master_seed, index):
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(master_seed), int(index)]))
    )


def _initial_ensemble(params):
    """Eigen-decomposed rho(0): cumulative weights and the pure states."""
    if isinstance(params.geometry, Finite):
        rho = params.geometry.boundary_rho
    else:
        rho = require_unique_fixed_space(
            steady_state(build_liouvillian(params.K, params.R))).steady_state
    vals, vecs = np.linalg.eigh(rho)
    probs = np.clip(vals.real, 0.0, None)
    probs = probs / probs.sum()
    return np.cumsum(probs), vecs


def _pick_initial(u, cum, vecs):
    idx = min(int(np.searchsorted(cum, u, side="right")), vecs.shape[1] - 1)
    phi = np.ascontiguousarray(vecs[:, idx])
    return phi / np.linalg.norm(phi)


def _step_operators(params, dt):
    q = q_matrix(params).mat
    step_op = np.ascontiguousarray(scipy.linalg.expm(q * dt))
    jump_op = np.ascontiguousarray(params.R.copy())
    rate = params.R.conj().T @ params.R
    rate_op = np.ascontiguousarray((rate + rate.conj().T) / 2)
    return step_op, jump_op, rate_op


def sample_trajectory(params, length, dt, master_seed, index=0):
    records = sample_ensemble(params, 1, length, dt, master_seed,
                              first_index=index, threads=1)
    return records[0]


def sample_ensemble(params, n_traj, length, dt, master_seed,
                    threads=None, first_index=0):
    """Draw n_traj independent trajectories of the given record length."""
    n_steps = _validate_step(params, length, dt)
    if n_traj < 1:
        raise ValidationError("n_traj must be at least 1")
    step_op, jump_op, rate_op = _step_operators(params, dt)
    cum, vecs = _initial_ensemble(params)
    indices = [first_index + i for i in range(n_traj)]

    # compiled kernel has a fixed-size work buffer; huge bond dimensions
    # fall back to the batched numpy path
    if _kernels.backend_name() == "cython" and params.dim <= 64:
        results = _run_compiled(step_op, jump_op, rate_op, cum, vecs,
                                indices, master_seed, n_steps, dt, threads)
    else:
        results = _run_numpy(step_op, jump_op, rate_op, cum, vecs,
                             indices, master_seed, n_steps, dt)
    return [
        JumpRecord(positions=pos, final_state=phi,
                   seed_info=(int(master_seed), int(idx)),
                   length=float(length), dt=float(dt))
        for idx, pos, phi in results
    ]


def _run_compiled(step_op, jump_op, rate_op, cum, vecs, indices,
                  master_seed, n_steps, dt, threads):
    kernel = _kernels.jump_cython.run_steps

    def worker(index):
        gen = _stream(master_seed, index)
        phi = _pick_initial(gen.random(), cum, vecs)
        uniforms = gen.random(n_steps)
        buf = np.empty(n_steps, dtype=np.int64)
        n_jumps = kernel(step_op, jump_op, rate_op, phi, uniforms, dt, buf)
        if n_jumps < 0:
            raise NonNormalizableStateError(
                "state norm underflow in trajectory %d at step %d"
                % (index, -n_jumps - 1)
            )
        positions = (buf[:n_jumps] + 1).astype(float) * dt
        return index, positions, phi

    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(indices) == 1:
        return [worker(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, indices))


def _run_numpy(step_op, jump_op, rate_op, cum, vecs, indices,
               master_seed, n_steps, dt):
    n_traj = len(indices)
    gens = [_stream(master_seed, i) for i in indices]
    states = np.empty((n_traj, vecs.shape[0]), dtype=complex)
    for b, gen in enumerate(gens):
        states[b] = _pick_initial(gen.random(), cum, vecs)

    chunk = max(1, int(MEMORY_BUDGET_BYTES / (8 * n_traj)))
    all_rows, all_steps = [], []
    offset = 0
    while offset < n_steps:
        size = min(chunk, n_steps - offset)
        uniforms = np.empty((n_traj, size))
        for b, gen in enumerate(gens):
            uniforms[b] = gen.random(size)
        rows, steps = jump_numpy.run_steps_batch(
            step_op, jump_op, rate_op, states, uniforms, dt, step_offset=offset)
        all_rows.append(rows)
        all_steps.append(steps)
        offset += size
    rows = np.concatenate(all_rows) if all_rows else np.empty(0, dtype=np.int64)
    steps = np.concatenate(all_steps) if all_steps else np.empty(0, dtype=np.int64)

    order = np.argsort(rows, kind="stable")
    rows, steps = rows[order], steps[order]
    bounds = np.searchsorted(rows, np.arange(n_traj + 1))
    out = []
    for b, index in enumerate(indices):
        pos = (steps[bounds[b]:bounds[b + 1]] + 1).astype(float) * dt
        out.append((index, pos, states[b].copy()))
    return out


def estimate_stats(records, bins, burn_in=0.0):
    """Empirical rate, pair correlation, and waiting-time histogram.

    bins is one ascending edge array shared by the pair-separation and
    waiting-time histograms; its last edge is the waiting-time horizon.
    """
    if len(records) < 2:
        raise InsufficientDataError("need at least 2 trajectories")
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin edges must be a 1d ascending array")
    if edges[0] < 0:
        raise ValidationError("bin edges must be nonnegative")
    length = records[0].length
    tau_max = edges[-1]
    window = length - burn_in
    if window <= tau_max:
        raise WindowTooSmallError(
            "record length after burn-in (%g) must exceed the largest bin edge (%g)"
            % (window, tau_max))

    n_rec = len(records)
    n_bins = edges.size - 1
    counts = np.empty(n_rec)
    pair_hist = np.zeros((n_rec, n_bins))
    wait_counts = np.zeros((n_rec, n_bins))
    wait_cond = np.zeros(n_rec)

    for i, rec in enumerate(records):
        if abs(rec.length - length) > 1e-12:
            raise ValidationError("records must share one length")
        pos = rec.positions[rec.positions >= burn_in] - burn_in
        counts[i] = pos.size

        # ordered pairs, weighted by the inverse of the admissible left-point
        # measure so the bin average is the raw pair density
        stop = np.searchsorted(pos, pos + tau_max, side="left")
        for j, left in enumerate(pos):
            if stop[j] <= j + 1:
                continue
            gaps = pos[j + 1:stop[j]] - left
            which = np.searchsorted(edges, gaps, side="right") - 1
            keep = (which >= 0) & (which < n_bins)
            np.add.at(pair_hist[i], which[keep], 1.0 / (window - gaps[keep]))

        # waiting times conditioned on a jump early enough that any gap up
        # to tau_max is observable, which removes censoring entirely
        left_ok = pos[pos <= window - tau_max]
        wait_cond[i] = left_ok.size
        if left_ok.size:
            nxt = np.searchsorted(pos, left_ok, side="right")
            has_next = nxt < pos.size
            gaps = pos[nxt[has_next]] - left_ok[has_next]
            gaps = gaps[gaps < tau_max]
            which = np.searchsorted(edges, gaps, side="right") - 1
            keep = (which >= 0) & (which < n_bins)
            np.add.at(wait_counts[i], which[keep], 1.0)

    rates = counts / window
    rate = float(rates.mean())
    rate_stderr = float(rates.std(ddof=1) / np.sqrt(n_rec))
    if rate <= 0:
        # jump-free ensemble: the rate is an honest zero, the normalized
        # histograms are 0/0 and reported as NaN
        nan = np.full(n_bins, np.nan)
        return TrajectoryStats(
            n_traj=n_rec, length=float(length),
            rate=0.0, rate_stderr=0.0, bin_edges=edges.copy(),
            pair_correlation=nan.copy(), pair_stderr=nan.copy(),
            waiting_probs=nan.copy(), waiting_stderr=nan.copy(),
            n_conditioning_jumps=0)

    widths = np.diff(edges)
    dens = pair_hist / widths
    pair_g2 = dens.mean(axis=0) / rate**2
    pair_stderr = np.empty(n_bins)
    for k in range(n_bins):
        # delta method for mean pair density over rate^2
        h = dens[:, k]
        grad = np.array([1.0 / rate**2, -2.0 * h.mean() / rate**3])
        cov = np.cov(h, rates, ddof=1)
        var = grad @ cov @ grad / n_rec
        pair_stderr[k] = np.sqrt(max(var, 0.0))

    total_cond = wait_cond.sum()
    if total_cond < 1:
        # every jump fell inside the final tau_max stretch; waiting times
        # are unestimable without censoring bias, so report NaN
        probs = np.full(n_bins, np.nan)
        wait_stderr = np.full(n_bins, np.nan)
    else:
        probs = wait_counts.sum(axis=0) / total_cond
        wait_stderr = np.empty(n_bins)
        m_mean = wait_cond.mean()
        for k in range(n_bins):
            c = wait_counts[:, k]
            p = probs[k]
            cov = np.cov(c, wait_cond, ddof=1)
            var = (cov[0, 0] + p * p * cov[1, 1] - 2 * p * cov[0, 1]) / (n_rec * m_mean**2)
            wait_stderr[k] = np.sqrt(max(var, 0.0))

    return TrajectoryStats(
        n_traj=n_rec, length=float(length),
        rate=rate, rate_stderr=rate_stderr, bin_edges=edges.copy(),
        pair_correlation=pair_g2, pair_stderr=pair_stderr,
        waiting_probs=probs, waiting_stderr=wait_stderr,
        n_conditioning_jumps=int(total_cond))


def _post_jump_state(params):
    """Stationary state immediately after a jump, or None when R = 0."""
    data = require_unique_fixed_space(steady_state(build_liouvillian(params.K, params.R)))
    rho = params.R @ data.steady_state @ params.R.conj().T
    weight = np.trace(rho).real
    if weight <= 1e-300:
        return None
    return rho / weight


def _resolve_initial(params, initial):
    if initial is not None:
        return np.asarray(initial, dtype=complex)
    if isinstance(params.geometry, Finite):
        return params.geometry.boundary_rho
    return _post_jump_state(params)


def no_jump_survival(params, taus, initial=None):
    """Probability that no jump occurs up to each tau."""
    taus = np.asarray(taus, dtype=float)
    rho0 = _resolve_initial(params, initial)
    if rho0 is None:
        return np.ones_like(taus)
    q = q_matrix(params).mat
    out = np.empty(taus.shape)
    for i, tau in enumerate(taus.ravel()):
        if tau < 0:
            raise ValidationError("tau must be nonnegative")
        prop = scipy.linalg.expm(q * tau)
        out.ravel()[i] = np.trace(prop @ rho0 @ prop.conj().T).real
    return out


def waiting_time_analytic(params, taus, initial=None):
    """Waiting-time density w(tau) = -dS/dtau from the post-jump ensemble.

    S is the no-jump survival; w integrates to at most 1 and is defective
    when dark states can trap the evolution.
    """
    taus = np.asarray(taus, dtype=float)
    rho0 = _resolve_initial(params, initial)
    if rho0 is None:
        return np.zeros_like(taus)
    q = q_matrix(params).mat
    r = params.R
    out = np.empty(taus.shape)
    for i, tau in enumerate(taus.ravel()):
        if tau < 0:
            raise ValidationError("tau must be nonnegative")
        prop = scipy.linalg.expm(q * tau)
        sigma = prop @ rho0 @ prop.conj().T
        out.ravel()[i] = np.trace(r @ sigma @ r.conj().T).real
    return out


def waiting_bin_probs(params, edges, initial=None):
    """Exact per-bin waiting-time probabilities S(a) - S(b) over edge pairs."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin edges must be a 1d ascending array")
    surv = no_jump_survival(params, edges, initial=initial)
    return -np.diff(surv)
