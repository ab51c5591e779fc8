"""Write a clustered synthetic map in the canonical JSON format."""
import argparse

from mapquant.mapio import save_map
from mapquant.synthetic import synthetic_map


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out")
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--cameras", type=int, default=50)
    p.add_argument("--clusters", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    save_map(synthetic_map(a.points, a.dim, num_cameras=a.cameras, n_clusters=a.clusters, seed=a.seed), a.out)
    print(f"wrote {a.points} points to {a.out}")


if __name__ == "__main__":
    main()
