"""Select -> train codebooks -> encode, as separate stages and as one call."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pq
from .errors import DataError, NumericalError
from .mapio import CompressedMap, SceneMap, serialize_map, write_compressed
from .selector import (DEFAULT_TAU, SelectionSolution, SolverOptions, problem_from_map,
                       solve_selection)


@dataclass
class CompressionStats:
    original_points: int
    selected_points: int
    original_bytes: int
    compressed_bytes: int
    original_descriptor_bytes: int
    compressed_descriptor_bytes: int
    mean_sq_reconstruction_error: float
    solver_objective: float
    solver_iterations: int
    solver_converged: bool
    wall_times: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _staged(stage: str, fn, *args, **kwargs):
    """Run ``fn`` and prefix any data/numerical error with the stage name."""
    try:
        return fn(*args, **kwargs)
    except (DataError, NumericalError) as e:
        if not str(e).startswith(f"[{stage}]"):
            e.args = (f"[{stage}] {e}",)
        raise


def select_points(scene: SceneMap, alpha: float, tau: float = DEFAULT_TAU,
                  opts: SolverOptions | None = None, kernel: str = "euclidean",
                  force: bool = False) -> SelectionSolution:
    problem = problem_from_map(scene, alpha, tau, kernel=kernel, force=force)
    return solve_selection(problem, opts)


def training_descriptors(scene: SceneMap, support, train_on: str = "selected") -> np.ndarray:
    if train_on == "selected":
        return scene.descriptors[np.asarray(support, dtype=np.intp)]
    if train_on == "all":
        return scene.descriptors
    raise DataError(f"train_on must be 'selected' or 'all', got {train_on!r}")


def train_stage(scene: SceneMap, support, M: int, K: int, seed: int = 0, max_iters: int = 100,
                train_on: str = "selected") -> pq.Codebook:
    if scene.descriptor_dim % M:
        raise DataError(f"descriptor dimension {scene.descriptor_dim} is not divisible by M={M}")
    data = training_descriptors(scene, support, train_on)
    return pq.train_codebooks(data, M, K, seed=seed, max_iters=max_iters)


def encode_stage(scene: SceneMap, support, cb: pq.Codebook, alpha: float, tau: float) -> CompressedMap:
    idx = np.asarray(support, dtype=np.intp)
    kept = scene.subset(idx)
    codes = pq.encode(kept.descriptors, cb) if len(kept) else np.zeros((0, cb.M), dtype=np.int64)
    return CompressedMap(
        codebook=cb,
        ids=kept.ids,
        xyz=kept.positions,
        codes=codes,
        alpha=alpha,
        tau=tau,
        original_point_count=len(scene),
    )


def reconstruction_error(scene: SceneMap, cm: CompressedMap) -> float:
    """Mean squared distance between the kept descriptors and their PQ reconstructions."""
    if len(cm) == 0:
        return 0.0
    by_id = {p.id: i for i, p in enumerate(scene.points)}
    rows = [by_id[int(i)] for i in cm.ids]
    x = scene.descriptors[rows].astype(np.float64)
    diff = x - pq.decode(cm.codes, cm.codebook)
    return float(np.mean(np.einsum("nd,nd->n", diff, diff)))


def compress_map(scene: SceneMap, alpha: float, tau: float = DEFAULT_TAU, M: int = 8, K: int = 256,
                 seed: int = 0, *, opts: SolverOptions | None = None, max_iters: int = 100,
                 train_on: str = "selected", kernel: str = "euclidean", force: bool = False):
    """Full pipeline. Returns ``(CompressedMap, CompressionStats)``.

    Errors are re-raised with the failing stage (select, train-pq, encode) in
    the message.
    """
    opts = opts or SolverOptions(seed=seed)
    times = {}

    t0 = time.perf_counter()
    sol = _staged("select", select_points, scene, alpha, tau, opts, kernel=kernel, force=force)
    times["select"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cb = _staged("train-pq", train_stage, scene, sol.support, M, K, seed=seed,
                 max_iters=max_iters, train_on=train_on)
    times["train-pq"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cm = _staged("encode", encode_stage, scene, sol.support, cb, alpha, tau)
    times["encode"] = time.perf_counter() - t0

    n_kept = len(cm)
    if n_kept < math.ceil(alpha * len(scene) - 1e-9):
        raise NumericalError(f"[select] support of {n_kept} points is below ceil(alpha*m)")
    code_bytes = 1 if K <= 256 else 2
    stats = CompressionStats(
        original_points=len(scene),
        selected_points=n_kept,
        original_bytes=len(serialize_map(scene).encode("utf-8")),
        compressed_bytes=len(write_compressed(cm)),
        original_descriptor_bytes=n_kept * scene.descriptor_dim * 4,
        compressed_descriptor_bytes=n_kept * M * code_bytes,
        mean_sq_reconstruction_error=reconstruction_error(scene, cm),
        solver_objective=sol.objective,
        solver_iterations=sol.iterations,
        solver_converged=sol.converged,
        wall_times=times,
    )
    return cm, stats
