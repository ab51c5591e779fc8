"""Low-rank adaptation of a frozen linear map.

Rows are samples: ``y = x @ W`` maps d_in -> d_out. The adapter adds the
product ``B @ A`` (B: d_in x r, A: r x d_out) without ever touching W, and
without a scaling factor on BA.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class LoraAdapter:
    w: np.ndarray
    b: np.ndarray
    a: np.ndarray

    @property
    def rank(self) -> int:
        return self.b.shape[1]

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]

    @property
    def n_trainable(self) -> int:
        return self.b.size + self.a.size


def _frozen(w) -> np.ndarray:
    w = np.array(w, dtype=np.float64, copy=True)
    w.flags.writeable = False
    return w


def init_adapter(w, r: int, seed: int = 0) -> LoraAdapter:
    """B = 0 and A ~ N(0, 1/r), so the adapter starts out as the identity on W."""
    w = _frozen(w)
    if w.ndim != 2:
        raise DataError(f"base weight must be a matrix, got shape {w.shape}")
    d_in, d_out = w.shape
    if not 1 <= r <= min(d_in, d_out):
        raise DataError(f"rank must be in [1, {min(d_in, d_out)}], got {r}")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0 / math.sqrt(r), size=(r, d_out))
    return LoraAdapter(w=w, b=np.zeros((d_in, r)), a=a)


def _batch(x, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise DataError(f"{what} must have width {width}, got shape {x.shape}")
    return x


def adapter_forward(adapter: LoraAdapter, x) -> np.ndarray:
    x = _batch(x, adapter.d_in, "input")
    return x @ adapter.w + (x @ adapter.b) @ adapter.a


def adapter_grads(adapter: LoraAdapter, x, gy):
    """Gradients w.r.t. A and B given the upstream gradient dL/dy. W gets none."""
    x = _batch(x, adapter.d_in, "input")
    gy = _batch(gy, adapter.d_out, "upstream gradient")
    if gy.shape[0] != x.shape[0]:
        raise DataError(f"batch sizes differ: x has {x.shape[0]} rows, gy has {gy.shape[0]}")
    ga = (x @ adapter.b).T @ gy
    gb = x.T @ (gy @ adapter.a.T)
    return ga, gb


def merge(adapter: LoraAdapter) -> np.ndarray:
    return adapter.w + adapter.b @ adapter.a


def mse(adapter: LoraAdapter, x, t) -> float:
    resid = adapter_forward(adapter, x) - np.asarray(t, dtype=np.float64).reshape(-1, adapter.d_out)
    return float(np.sum(resid * resid)) / resid.shape[0]


def fit_lora(w, samples, r: int, lr: float, steps: int, seed: int = 0, losses: list | None = None) -> LoraAdapter:
    """Full-batch gradient descent on the mean squared error, updating A and B only.

    ``samples`` is either a sequence of ``(x, target)`` pairs or an ``(X, T)``
    tuple of 2-D arrays. The loss is the squared error of each sample averaged
    over samples. When ``losses`` is a list, the loss before each step and
    after the last one is appended to it.
    """
    adapter = init_adapter(w, r, seed)
    if not lr > 0:
        raise DataError(f"learning rate must be positive, got {lr}")
    if steps < 0:
        raise DataError(f"steps must be >= 0, got {steps}")
    X, T = _stack_samples(samples, adapter)

    full = adapter.d_in * adapter.d_out
    log.debug(
        "lora fit: %d trainable vs %d frozen parameters (economical: %s)",
        adapter.n_trainable, full, adapter.n_trainable < full,
    )
    if r < full / (adapter.d_in + adapter.d_out):
        assert adapter.n_trainable < full

    scale = 2.0 / T.shape[0]
    for step in range(steps + 1):
        resid = adapter_forward(adapter, X) - T
        loss = float(np.sum(resid * resid)) / T.shape[0]
        if not math.isfinite(loss):
            raise NumericalError(f"lora fit diverged at step {step}: loss={loss}")
        if losses is not None:
            losses.append(loss)
        if step == steps:
            break
        ga, gb = adapter_grads(adapter, X, scale * resid)
        adapter.a = adapter.a - lr * ga
        adapter.b = adapter.b - lr * gb
    return adapter


def _stack_samples(samples, adapter):
    if (isinstance(samples, tuple) and len(samples) == 2
            and all(isinstance(s, np.ndarray) and s.ndim == 2 for s in samples)):
        X, T = samples
    else:
        samples = list(samples)
        if not samples:
            raise DataError("fit_lora needs at least one sample")
        X = [s[0] for s in samples]
        T = [s[1] for s in samples]
    X = _batch(np.asarray(X, dtype=np.float64), adapter.d_in, "sample inputs")
    T = _batch(np.asarray(T, dtype=np.float64), adapter.d_out, "sample targets")
    if X.shape[0] != T.shape[0]:
        raise DataError(f"{X.shape[0]} inputs but {T.shape[0]} targets")
    return X, T
