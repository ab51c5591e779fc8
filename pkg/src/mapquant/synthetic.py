"""Seeded synthetic scene maps for tests, benchmarks and the scripts."""

from __future__ import annotations

import numpy as np

from .mapio import MapPoint, SceneMap


def synthetic_map(n_points: int = 1000, descriptor_dim: int = 128, num_cameras: int = 50,
                  n_clusters: int = 16, seed: int = 0, extent: float = 20.0,
                  noise: float = 0.15) -> SceneMap:
    """Points scattered around a few blobs, with descriptors drawn around cluster prototypes.

    Each point is seen by between 1 and ``min(num_cameras, 12)`` distinct cameras.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-extent, extent, size=(n_clusters, 3))
    protos = rng.normal(size=(n_clusters, descriptor_dim))
    which = rng.integers(n_clusters, size=n_points)
    xyz = centers[which] + rng.normal(scale=extent / 10, size=(n_points, 3))
    desc = (protos[which] + noise * rng.normal(size=(n_points, descriptor_dim))).astype(np.float32)
    max_obs = min(num_cameras, 12)
    points = []
    for i in range(n_points):
        k = int(rng.integers(1, max_obs + 1))
        cams = rng.choice(num_cameras, size=k, replace=False)
        points.append(MapPoint(i, tuple(xyz[i]), tuple(desc[i]), tuple(int(c) for c in cams)))
    return SceneMap(num_cameras, descriptor_dim, tuple(points))
