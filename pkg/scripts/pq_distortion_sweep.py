"""Reconstruction error and bytes per point of product quantization for several (M, K)."""
import argparse
import time

import numpy as np

from mapquant.pq import decode, encode, train_codebooks
from mapquant.synthetic import synthetic_map


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    x = synthetic_map(a.points, a.dim, seed=a.seed).descriptors.astype(np.float64)
    energy = float(np.mean(np.sum(x ** 2, axis=1)))
    print(f"mean squared norm {energy:.4f}")
    print(f"{'M':>3} {'K':>4} {'bytes/pt':>8} {'mse':>10} {'rel':>7} {'sec':>6}")
    for M in (4, 8, 16):
        for K in (16, 64, 256):
            t0 = time.perf_counter()
            cb = train_codebooks(x, M, K, seed=a.seed)
            err = float(np.mean(np.sum((x - decode(encode(x, cb), cb)) ** 2, axis=1)))
            dt = time.perf_counter() - t0
            nbytes = M * (1 if K <= 256 else 2)
            print(f"{M:3d} {K:4d} {nbytes:8d} {err:10.4f} {err / energy:7.4f} {dt:6.2f}")


if __name__ == "__main__":
    main()
