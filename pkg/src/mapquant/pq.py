"""Product quantization: k-means codebooks, encoding, reconstruction and ADC search.

A D-dimensional vector is split into M contiguous sub-vectors of length D/M.
Each subspace gets its own table of K centroids; a vector is stored as the
M indices of its nearest centroids.

All training arithmetic is float64. Trained centroids are stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# rows per block when materialising point-to-centroid differences
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class Codebook:
    """M centroid tables of shape (K, D'), held as one (M, K, D') float32 array."""

    centroids: np.ndarray

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float32, copy=True)
        if c.ndim != 3 or min(c.shape) < 1:
            raise DataError(f"codebook must have shape (M, K, D') with positive sizes, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DataError("codebook contains non-finite centroids")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def M(self) -> int:
        return self.centroids.shape[0]

    @property
    def K(self) -> int:
        return self.centroids.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.M * self.sub_dim

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return np.array_equal(self.centroids, other.centroids)

    def __hash__(self):
        return hash((self.centroids.shape, self.centroids.tobytes()))


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    distortion: float
    # distortion after the k-means++ seeding, then after every Lloyd iteration
    history: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def init_distortion(self) -> float:
        return self.history[0]


def split_vector(x, M: int) -> list[np.ndarray]:
    """Split ``x`` into ``M`` equal contiguous sub-vectors.

    >>> [s.tolist() for s in split_vector([1, 2, 3, 4], 2)]
    [[1, 2], [3, 4]]
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise DataError(f"expected a 1-D vector, got shape {x.shape}")
    if M < 1 or x.shape[0] % M != 0:
        raise DataError(f"vector length {x.shape[0]} is not divisible by M={M}")
    sub = x.shape[0] // M
    return [x[m * sub:(m + 1) * sub] for m in range(M)]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (n, k), by explicit differences.

    The expanded ||x||^2 - 2x.c + ||c||^2 form is avoided: its cancellation error
    breaks exact argmin oracles and Lloyd monotonicity near convergence.
    """
    out = np.empty((X.shape[0], C.shape[0]), dtype=np.float64)
    for start in range(0, X.shape[0], _CHUNK):
        diff = X[start:start + _CHUNK, None, :] - C[None, :, :]
        np.einsum("nkd,nkd->nk", diff, diff, out=out[start:start + _CHUNK])
    return out


def kmeans_plusplus(data: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((K, data.shape[1]), dtype=np.float64)
    centroids[0] = data[rng.integers(n)]
    closest = _sq_dists(data, centroids[:1])[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            # every point already coincides with a centroid
            idx = rng.integers(n)
        centroids[k] = data[idx]
        np.minimum(closest, _sq_dists(data, centroids[k:k + 1])[:, 0], out=closest)
    return centroids


def _assign(data, centroids):
    d = _sq_dists(data, centroids)
    labels = np.argmin(d, axis=1)  # first minimum on ties -> lowest index
    best = d[np.arange(d.shape[0]), labels]
    return labels, best


def _update(data, labels, K):
    """Centroid means with a fixed (row-order) reduction, plus empty-cluster repair."""
    n, dim = data.shape
    sums = np.zeros((K, dim), dtype=np.float64)
    np.add.at(sums, labels, data)
    counts = np.bincount(labels, minlength=K)
    centroids = np.zeros((K, dim), dtype=np.float64)
    filled = counts > 0
    centroids[filled] = sums[filled] / counts[filled, None]

    empty = np.flatnonzero(~filled)
    if empty.size == 0:
        return centroids, labels

    labels = labels.copy()
    diff = data - centroids[labels]
    own = np.einsum("nd,nd->n", diff, diff)
    donors = set()
    for j in empty:
        p = int(np.argmax(own))
        donors.add(int(labels[p]))
        labels[p] = j
        centroids[j] = data[p]
        own[p] = 0.0
    # recompute donor means once, without the points they gave away
    for j in sorted(donors):
        members = labels == j
        if members.any():
            s = np.zeros((1, dim), dtype=np.float64)
            np.add.at(s, np.zeros(int(members.sum()), dtype=np.intp), data[members])
            centroids[j] = s[0] / members.sum()
    return centroids, labels


def kmeans(data, K: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no assignment changes or after ``max_iters`` update steps. The
    returned assignments are the argmin assignments for the returned centroids.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise DataError(f"k-means data must be a matrix, got shape {data.shape}")
    n = data.shape[0]
    if K < 1:
        raise DataError(f"K must be >= 1, got {K}")
    if n < K:
        raise DataError(f"codebook larger than training set (n={n}, K={K})")
    if max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {max_iters}")
    if not np.all(np.isfinite(data)):
        raise DataError("k-means data contains non-finite values")

    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(data, K, rng)
    labels, best = _assign(data, centroids)
    history = [float(best.mean())]

    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        centroids, repaired = _update(data, labels, K)
        new_labels, best = _assign(data, centroids)
        history.append(float(best.mean()))
        # centroids are the means of `repaired`; unchanged labels make this a fixed point
        if np.array_equal(new_labels, repaired):
            labels = new_labels
            converged = True
            break
        labels = new_labels

    return KMeansResult(
        centroids=centroids,
        assignments=labels,
        distortion=history[-1],
        history=history,
        n_iter=it,
        converged=converged,
    )


def subspace_seed(seed: int, m: int) -> int:
    """Seed for subspace ``m``: (seed, m) mixed through a SeedSequence."""
    return int(np.random.SeedSequence([seed, m]).generate_state(1, dtype=np.uint64)[0])


def train_codebooks(dataset, M: int, K: int, seed: int = 0, max_iters: int = 100,
                    return_results: bool = False):
    """Train one k-means codebook per subspace.

    Subspaces are trained independently, in ascending order, each with its
    own derived seed. With ``return_results`` the per-subspace
    :class:`KMeansResult` list is returned alongside the codebook.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2:
        raise DataError(f"training set must be a matrix, got shape {dataset.shape}")
    D = dataset.shape[1]
    if M < 1 or D % M != 0:
        raise DataError(f"descriptor dimension {D} is not divisible by M={M}")
    sub = D // M
    results = [
        kmeans(dataset[:, m * sub:(m + 1) * sub], K, seed=subspace_seed(seed, m), max_iters=max_iters)
        for m in range(M)
    ]
    cb = Codebook(np.stack([r.centroids for r in results]))
    if return_results:
        return cb, results
    return cb


def _check_dim(X: np.ndarray, cb: Codebook, what: str):
    if X.shape[-1] != cb.dim:
        raise DataError(f"{what} has dimension {X.shape[-1]}, codebook expects {cb.dim}")


def encode(x, cb: Codebook) -> np.ndarray:
    """Nearest-centroid index per subspace, ties to the lowest index.

    Accepts a single vector (returns shape (M,)) or a batch (returns (n, M)).
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    _check_dim(X, cb, "vector")
    if not np.all(np.isfinite(X)):
        raise DataError("cannot encode non-finite vectors")
    sub = cb.sub_dim
    C = cb.centroids.astype(np.float64)
    codes = np.empty((X.shape[0], cb.M), dtype=np.int64)
    for m in range(cb.M):
        codes[:, m] = np.argmin(_sq_dists(X[:, m * sub:(m + 1) * sub], C[m]), axis=1)
    return codes[0] if single else codes


def _check_codes(codes: np.ndarray, cb: Codebook):
    if codes.shape[-1] != cb.M:
        raise DataError(f"code has {codes.shape[-1]} indices, codebook has M={cb.M}")
    if codes.size and (codes.min() < 0 or codes.max() >= cb.K):
        raise DataError(f"code index out of range [0, {cb.K})")


def decode(code, cb: Codebook) -> np.ndarray:
    """Concatenate the selected centroid rows. Works on one code or a batch."""
    codes = np.asarray(code, dtype=np.int64)
    _check_codes(codes, cb)
    parts = [cb.centroids[m][codes[..., m]] for m in range(cb.M)]
    return np.concatenate(parts, axis=-1).astype(np.float64)


def adc_table(query, cb: Codebook) -> np.ndarray:
    """(M, K) table of squared distances from each query sub-vector to each centroid."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1:
        raise DataError(f"query must be a vector, got shape {q.shape}")
    _check_dim(q, cb, "query")
    sub = cb.sub_dim
    C = cb.centroids.astype(np.float64)
    return np.stack([_sq_dists(q[None, m * sub:(m + 1) * sub], C[m])[0] for m in range(cb.M)])


def adc_distance(table: np.ndarray, code) -> float:
    codes = np.asarray(code, dtype=np.int64)
    M, K = table.shape
    if codes.shape != (M,):
        raise DataError(f"code has shape {codes.shape}, table expects ({M},)")
    if codes.min() < 0 or codes.max() >= K:
        raise DataError(f"code index out of range [0, {K})")
    total = 0.0
    for m in range(M):
        total += table[m, codes[m]]
    return float(total)


def adc_distances(table: np.ndarray, codes) -> np.ndarray:
    """Vectorised :func:`adc_distance`; same subspace-ascending summation order."""
    codes = np.asarray(codes, dtype=np.int64)
    M, K = table.shape
    if codes.ndim != 2 or codes.shape[1] != M:
        raise DataError(f"codes must have shape (n, {M}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= K):
        raise DataError(f"code index out of range [0, {K})")
    total = np.zeros(codes.shape[0], dtype=np.float64)
    for m in range(M):
        total += table[m, codes[:, m]]
    return total


def topk_search(query, ids, codes, cb: Codebook, k: int):
    """Rank stored codes against ``query`` by asymmetric distance.

    Returns up to ``k`` ``(id, squared_distance)`` pairs, ascending, ties by id.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    ids = np.asarray(ids, dtype=np.uint64)
    codes = np.asarray(codes, dtype=np.int64).reshape(len(ids), cb.M)
    table = adc_table(query, cb)
    dists = adc_distances(table, codes)
    order = np.lexsort((ids, dists))[:k]
    return [(int(ids[i]), float(dists[i])) for i in order]
