"""Time the numba and numpy paths of each kernel.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from protocover import _kernels as K


def cases(rng):
    A, B = rng.normal(size=(2000, 128)), rng.normal(size=(500, 128))
    T, R = 4000, 36
    d_cand = rng.uniform(0, 3, size=(T, R))
    d_ap = rng.uniform(0, 2, size=T)
    valid = rng.random((T, R)) < 0.9
    n, m, d = 36, 36, 128
    Ag, Pg = rng.normal(size=(n, d)), rng.normal(size=(m, d))
    anchors, pos, neg = rng.integers(0, n, T), rng.integers(0, m, T), rng.integers(0, m, T)
    dap = np.linalg.norm(Ag[anchors] - Pg[pos], axis=1)
    dan = np.linalg.norm(Ag[anchors] - Pg[neg], axis=1)
    D = rng.uniform(size=(2000, 500))
    keys = rng.permutation(500).astype(np.int64)
    return {
        "pairwise_distances": (A, B),
        "select_semihard": (d_ap, d_cand, valid, 1.0),
        "triplet_grad": (Ag, Pg, anchors, pos, neg, dap, dan, 1.0, 1e-12),
        "best_per_row": (D, keys),
    }


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, a in cases(np.random.default_rng(0)).items():
        np_fn, nb_fn = getattr(K, name + "_np"), getattr(K, name + "_nb")
        nb_fn(*a)  # compile outside the timed region
        t_np, t_nb = best(np_fn, a, args.repeat), best(nb_fn, a, args.repeat)
        print(f"{name:<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}")


if __name__ == "__main__":
    main()
