"""Jump trajectory sampler and record statistics.

Exact checks use hand-built records and closed-form waiting densities; the
Monte Carlo checks run at fixed master seeds so every assertion is a
deterministic 3 sigma test against an independently computed reference.
"""

import numpy as np
import pytest

from cmps_lab import (
    Finite,
    JumpRecord,
    build_liouvillian,
    density,
    devectorize,
    estimate_stats,
    max_step,
    new_cmps,
    no_jump_survival,
    pair_correlation,
    propagate,
    require_unique_fixed_space,
    sample_ensemble,
    sample_trajectory,
    steady_state,
    vectorize,
    waiting_bin_probs,
    waiting_time_analytic,
)
from cmps_lab.errors import (
    InsufficientDataError,
    StepNotPositiveError,
    StepTooLargeError,
    ValidationError,
    WindowTooSmallError,
)

from conftest import EXCITED, RF_K, RF_R, random_instance


def _record(positions, length=10.0, dt=0.01):
    return JumpRecord(
        positions=np.asarray(positions, dtype=float),
        final_state=np.array([1.0 + 0j, 0.0j]),
        seed_info=(0, 0),
        length=length,
        dt=dt,
    )


def test_max_step_scales_inversely_with_emission_strength(rf):
    assert max_step(rf) == pytest.approx(0.01)
    # weak emission is clamped: the ceiling never exceeds the bare step
    weak = new_cmps(2, RF_K, 0.1 * RF_R)
    assert max_step(weak) == pytest.approx(0.01)
    strong = new_cmps(2, RF_K, 3.0 * RF_R)
    assert max_step(strong) == pytest.approx(0.01 / 9.0)


def test_sampler_rejects_bad_steps_and_lengths(rf):
    with pytest.raises(StepTooLargeError):
        sample_ensemble(rf, 2, 1.0, 0.02, master_seed=0)
    with pytest.raises(StepNotPositiveError):
        sample_ensemble(rf, 2, 1.0, 0.0, master_seed=0)
    with pytest.raises(StepNotPositiveError):
        sample_ensemble(rf, 2, 1.0, -0.01, master_seed=0)
    with pytest.raises(ValidationError):
        sample_ensemble(rf, 2, -1.0, 0.01, master_seed=0)
    with pytest.raises(ValidationError):
        sample_ensemble(rf, 2, 0.001, 0.01, master_seed=0)
    with pytest.raises(ValidationError):
        sample_ensemble(rf, 0, 1.0, 0.01, master_seed=0)


def test_zero_emission_gives_empty_records_and_zero_rate():
    p = new_cmps(2, RF_K, np.zeros((2, 2)), Finite(length=2.0, boundary_rho=np.eye(2) / 2))
    recs = sample_ensemble(p, 3, 2.0, 0.01, master_seed=5)
    assert all(r.positions.size == 0 for r in recs)
    assert all(abs(np.linalg.norm(r.final_state) - 1.0) < 1e-9 for r in recs)
    stats = estimate_stats(recs, [0.0, 0.5, 1.0])
    assert stats.rate == 0.0
    assert stats.rate_stderr == 0.0
    assert np.isnan(stats.pair_correlation).all()
    assert np.isnan(stats.waiting_probs).all()
    assert stats.n_conditioning_jumps == 0


def test_pure_decay_jumps_exactly_once(damping_finite):
    recs = sample_ensemble(damping_finite, 10000, 8.0, 0.01, master_seed=42)
    njumps = np.array([r.positions.size for r in recs])
    # the post-jump state is dark, so a second jump is impossible
    assert njumps.max() <= 1
    # no-jump survival over the whole record is exp(-8)
    assert (njumps == 0).mean() < 2e-3
    pos = np.concatenate([r.positions for r in recs if r.positions.size])
    # first passage of the per-step hazard has mean exactly 1/rate
    assert abs(pos.mean() - 1.0) < 3.5 * pos.std() / np.sqrt(pos.size) + 3e-3
    # positions land on the step grid
    assert np.allclose(pos / 0.01, np.round(pos / 0.01), atol=1e-9)


def test_coherent_counts_are_poissonian(coherent):
    p = coherent(r=0.8, k=0.3)
    recs = sample_ensemble(p, 2000, 50.0, 0.01, master_seed=7)
    edges = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0])
    stats = estimate_stats(recs, edges)
    assert abs(stats.rate - 0.64) < 3.0 * stats.rate_stderr
    # memoryless emission: flat pair correlation, exponential waiting times.
    # one grid cell per bin covers the per-step discretization of gaps.
    allowance = 0.01 / np.diff(edges)
    assert np.all(np.abs(stats.pair_correlation - 1.0)
                  < 3.0 * stats.pair_stderr + allowance)
    ref = waiting_bin_probs(p, edges)
    assert np.all(np.abs(stats.waiting_probs - ref)
                  < 3.0 * stats.waiting_stderr + 0.0064 * ref + 1e-4)


def test_stationary_rate_matches_density(rf):
    recs = sample_ensemble(rf, 1200, 50.0, 0.002, master_seed=11)
    stats = estimate_stats(recs, [0.0, 1.0, 2.0], burn_in=20.0)
    assert abs(stats.rate - 1.0 / 3.0) < 3.0 * stats.rate_stderr + 1e-3


def test_bitwise_reproducibility_and_stream_independence(rf):
    a = sample_trajectory(rf, 30.0, 0.005, master_seed=123, index=4)
    b = sample_trajectory(rf, 30.0, 0.005, master_seed=123, index=4)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.final_state, b.final_state)
    assert a.seed_info == (123, 4)
    assert a.length == 30.0 and a.dt == 0.005
    c = sample_trajectory(rf, 30.0, 0.005, master_seed=123, index=5)
    d = sample_trajectory(rf, 30.0, 0.005, master_seed=124, index=4)
    assert not np.array_equal(a.positions, c.positions)
    assert not np.array_equal(a.positions, d.positions)


def test_estimator_semantics_on_synthetic_records():
    recs = [_record([1.0, 1.5, 9.0]), _record([4.0, 5.2])]
    stats = estimate_stats(recs, [0.0, 1.0, 2.0])
    assert stats.rate == pytest.approx(0.25, abs=1e-15)
    assert stats.rate_stderr == pytest.approx(np.std([0.3, 0.2], ddof=1) / np.sqrt(2))
    # ordered pairs below the horizon: gap 0.5 weighted 1/9.5, gap 1.2
    # weighted 1/8.8; per-record densities averaged then divided by rate^2
    assert stats.pair_correlation == pytest.approx([16.0 / 19.0, 16.0 / 17.6], rel=1e-12)
    # conditioning jumps are those at most window - tau_max = 8: two per
    # record; observed next-gaps below the horizon are 0.5 and 1.2
    assert stats.n_conditioning_jumps == 4
    assert stats.waiting_probs == pytest.approx([0.25, 0.25], abs=1e-15)

    # burn-in drops early jumps and shrinks the window
    late = estimate_stats(recs, [0.0, 1.0], burn_in=5.0)
    assert late.rate == pytest.approx(0.2, abs=1e-15)
    assert late.pair_correlation[0] == 0.0
    assert late.waiting_probs[0] == 0.0
    assert late.n_conditioning_jumps == 2


def test_estimator_rejects_malformed_input():
    recs = [_record([1.0]), _record([2.0])]
    with pytest.raises(InsufficientDataError):
        estimate_stats(recs[:1], [0.0, 1.0])
    with pytest.raises(ValidationError):
        estimate_stats(recs, [1.0, 0.5])
    with pytest.raises(ValidationError):
        estimate_stats(recs, [-1.0, 1.0])
    with pytest.raises(ValidationError):
        estimate_stats(recs, [0.0])
    with pytest.raises(WindowTooSmallError):
        estimate_stats(recs, [0.0, 10.0])
    with pytest.raises(WindowTooSmallError):
        estimate_stats(recs, [0.0, 4.0], burn_in=6.0)
    mixed = [_record([1.0]), _record([2.0], length=12.0)]
    with pytest.raises(ValidationError):
        estimate_stats(mixed, [0.0, 1.0])


def test_rate_survives_step_refinement(rf):
    # halving dt must not move the rate by more than the combined noise
    out = {}
    for dt in (0.004, 0.002):
        recs = sample_ensemble(rf, 10000, 50.0, dt, master_seed=31)
        out[dt] = estimate_stats(recs, [0.0, 1.0], burn_in=20.0)
    diff = abs(out[0.004].rate - out[0.002].rate)
    combined = np.hypot(out[0.004].rate_stderr, out[0.002].rate_stderr)
    assert diff < combined


def test_finite_ensemble_tracks_driven_relaxation():
    p = new_cmps(2, RF_K, RF_R, Finite(length=4.0, boundary_rho=EXCITED))
    recs = sample_ensemble(p, 16000, 3.5, 0.002, master_seed=88)
    lv = build_liouvillian(RF_K, RF_R)
    v0 = vectorize(EXCITED)
    half = 0.125
    for center in (0.5, 1.5, 3.0):
        in_bin = np.array([np.count_nonzero(np.abs(r.positions - center) <= half)
                           for r in recs])
        empirical = in_bin.mean() / (2 * half)
        stderr = in_bin.std(ddof=1) / np.sqrt(in_bin.size) / (2 * half)
        grid = np.linspace(center - half, center + half, 61)
        exact = [
            np.trace(RF_R @ devectorize(propagate(lv, v0, s)) @ RF_R.conj().T).real
            for s in grid
        ]
        expected = np.trapezoid(exact, grid) / (2 * half)
        assert abs(empirical - expected) < 3.5 * stderr + 2e-3


def test_random_instances_match_spectral_predictions():
    # two bond-dimension-3 instances with well-separated gaps
    for inst_seed, ens_seed in ((5002, 7702), (5007, 7707)):
        p = random_instance(inst_seed, dims=(3, 4))
        data = require_unique_fixed_space(steady_state(build_liouvillian(p.K, p.R)))
        gap = data.gap
        dens = density(p)
        dt = min(max_step(p), 0.003)
        burn = 10.0 / gap
        edges = np.array([0.0, 0.5, 1.0, 1.5, 2.5, 4.0]) / gap
        recs = sample_ensemble(p, 4000, 30.0 / gap + burn, dt, master_seed=ens_seed)
        stats = estimate_stats(recs, edges, burn_in=burn)
        assert abs(stats.rate - dens) < 3.0 * stats.rate_stderr
        for k in range(edges.size - 1):
            grid = np.linspace(edges[k], edges[k + 1], 201)
            g2 = pair_correlation(p, grid).values.real
            mean_g2 = np.trapezoid(g2, grid) / (grid[-1] - grid[0])
            z = (stats.pair_correlation[k] - mean_g2) / stats.pair_stderr[k]
            assert abs(z) < 3.0


def test_waiting_histogram_matches_renewal_density(rf):
    edges = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.5])
    recs = sample_ensemble(rf, 6000, 60.0, 0.002, master_seed=314)
    stats = estimate_stats(recs, edges, burn_in=20.0)
    ref = waiting_bin_probs(rf, edges)
    z = (stats.waiting_probs - ref) / stats.waiting_stderr
    assert np.max(np.abs(z)) < 3.0
    assert stats.n_conditioning_jumps > 10000


def test_waiting_closed_forms(damping_finite):
    taus = np.linspace(0.0, 6.0, 25)
    # pure decay from the excited state: survival and density are exp(-tau)
    assert np.allclose(no_jump_survival(damping_finite, taus), np.exp(-taus), atol=1e-12)
    assert np.allclose(waiting_time_analytic(damping_finite, taus), np.exp(-taus), atol=1e-12)
    probs = waiting_bin_probs(damping_finite, [0.0, 1.0, 3.0])
    assert probs == pytest.approx([1 - np.exp(-1), np.exp(-1) - np.exp(-3)], abs=1e-12)

    # no emission channel: flat survival, vanishing density
    p0 = new_cmps(2, RF_K, np.zeros((2, 2)), Finite(length=2.0, boundary_rho=np.eye(2) / 2))
    assert np.allclose(no_jump_survival(p0, taus), 1.0, atol=1e-12)
    assert np.allclose(waiting_time_analytic(p0, taus), 0.0)
    assert np.allclose(waiting_bin_probs(p0, [0.0, 1.0, 2.0]), 0.0, atol=1e-12)

    with pytest.raises(ValidationError):
        no_jump_survival(damping_finite, [-0.1])
    with pytest.raises(ValidationError):
        waiting_bin_probs(damping_finite, [1.0, 0.5])


def test_waiting_density_integrates_to_bin_masses(rf):
    # w = -dS/dtau, so quadrature of w over a bin recovers S(a) - S(b)
    edges = np.array([0.0, 0.8, 2.0, 4.0])
    probs = waiting_bin_probs(rf, edges)
    for k in range(edges.size - 1):
        grid = np.linspace(edges[k], edges[k + 1], 801)
        quad = np.trapezoid(waiting_time_analytic(rf, grid), grid)
        assert abs(quad - probs[k]) < 1e-6
    assert 0.0 < probs.sum() < 1.0
    # the density is normalizable: it never integrates past unity
    wide = np.linspace(0.0, 40.0, 1501)
    total = np.trapezoid(waiting_time_analytic(rf, wide), wide)
    assert total < 1.0 + 1e-9
