"""Compare the compiled and numpy trajectory kernels on the same workload.

Both backends consume identical pre-drawn uniform streams, so their jump
records must agree exactly; the interesting number is steps/second.

Run:  python3 benchmarks/benchmark_kernels.py [--n-traj 2000] [--length 50]
"""

import argparse
import os
import time

import numpy as np


def run_backend(backend, n_traj, length, dt, seed, threads):
    os.environ["CMPS_LAB_KERNEL"] = backend
    # re-import with the override in place
    import importlib

    import cmps_lab._kernels
    import cmps_lab.trajectories

    importlib.reload(cmps_lab._kernels)
    importlib.reload(cmps_lab.trajectories)
    from cmps_lab import new_cmps
    from cmps_lab.trajectories import sample_ensemble

    K = np.array([[0.0, 0.5], [0.5, 0.0]])
    R = np.array([[0.0, 0.0], [1.0, 0.0]])
    params = new_cmps(2, K, R)
    t0 = time.perf_counter()
    records = sample_ensemble(
        params, n_traj=n_traj, length=length, dt=dt, master_seed=seed, threads=threads
    )
    elapsed = time.perf_counter() - t0
    n_steps = n_traj * int(np.ceil(length / dt))
    n_jumps = sum(len(r.positions) for r in records)
    return records, elapsed, n_steps, n_jumps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-traj", type=int, default=2000)
    ap.add_argument("--length", type=float, default=50.0)
    ap.add_argument("--dt", type=float, default=0.002)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    results = {}
    for backend in ("cython", "numpy"):
        try:
            recs, elapsed, n_steps, n_jumps = run_backend(
                backend, args.n_traj, args.length, args.dt, args.seed, args.threads
            )
        except Exception as exc:  # compiled module may be absent
            print(f"{backend:>7}: unavailable ({exc})")
            continue
        results[backend] = recs
        rate = n_steps / elapsed / 1e6
        print(
            f"{backend:>7}: {elapsed:7.2f} s   {rate:7.1f} M steps/s   "
            f"{n_jumps} jumps over {args.n_traj} trajectories"
        )

    if len(results) == 2:
        pairs = zip(results["cython"], results["numpy"])
        agree = all(np.array_equal(a.positions, b.positions) for a, b in pairs)
        print(f"jump records identical across backends: {agree}")


if __name__ == "__main__":
    main()
