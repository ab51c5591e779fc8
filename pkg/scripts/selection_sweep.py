"""Support size, objective and solve time of the point selector across alpha, tau and kernel."""
import argparse
import math
import time

from mapquant.selector import SolverOptions, problem_from_map, solve_selection
from mapquant.synthetic import synthetic_map


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--points", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernels", nargs="+", default=["euclidean", "rbf:5"])
    a = p.parse_args()
    scene = synthetic_map(a.points, 32, seed=a.seed)
    print(f"{'kernel':>10} {'alpha':>6} {'tau':>5} {'support':>8} {'floor':>6} {'objective':>12} {'iters':>6} {'sec':>6}")
    for kernel in a.kernels:
        for alpha in (0.1, 0.3, 0.5, 1.0):
            for tau in (0.0, 1.0, 10.0):
                prob = problem_from_map(scene, alpha, tau, kernel=kernel)
                t0 = time.perf_counter()
                sol = solve_selection(prob, SolverOptions(seed=a.seed))
                dt = time.perf_counter() - t0
                floor = math.ceil(alpha * a.points - 1e-9)
                print(f"{kernel:>10} {alpha:6.2f} {tau:5.1f} {len(sol.support):8d} {floor:6d} "
                      f"{sol.objective:12.5f} {sol.iterations:6d} {dt:6.2f}")


if __name__ == "__main__":
    main()
