"""Self-checks for the LoRA module, used by ``mapquant lora selftest``."""

from __future__ import annotations

import numpy as np

from .lora import LoraAdapter, adapter_forward, adapter_grads, fit_lora, mse

GRAD_TOL = 1e-5
FD_STEP = 1e-6
MSE_TOL = 1e-6


def half_sq_loss(adapter: LoraAdapter, x, t) -> float:
    r = adapter_forward(adapter, x) - t
    return 0.5 * float(np.sum(r * r))


def finite_difference(adapter: LoraAdapter, x, t, name: str, h: float = FD_STEP) -> np.ndarray:
    """Central differences of 0.5*||y - t||^2 w.r.t. ``adapter.<name>``, one entry at a time."""
    p = getattr(adapter, name)
    out = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        orig = p[idx]
        p[idx] = orig + h
        up = half_sq_loss(adapter, x, t)
        p[idx] = orig - h
        down = half_sq_loss(adapter, x, t)
        p[idx] = orig
        out[idx] = (up - down) / (2 * h)
    return out


def rel_error(analytic, numeric) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, 1)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0), initial=0.0))


def gradient_check(n_instances: int = 20, seed: int = 0, max_dim: int = 8, max_rank: int = 4) -> float:
    """Worst relative error of the analytic gradients over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        d_in, d_out = (int(v) for v in rng.integers(1, max_dim + 1, size=2))
        r = int(rng.integers(1, min(d_in, d_out, max_rank) + 1))
        n = int(rng.integers(1, 9))
        ad = LoraAdapter(rng.normal(size=(d_in, d_out)), rng.normal(size=(d_in, r)), rng.normal(size=(r, d_out)))
        x = rng.normal(size=(n, d_in))
        t = rng.normal(size=(n, d_out))
        ga, gb = adapter_grads(ad, x, adapter_forward(ad, x) - t)
        worst = max(worst, rel_error(ga, finite_difference(ad, x, t, "a")))
        worst = max(worst, rel_error(gb, finite_difference(ad, x, t, "b")))
    return worst


def rank1_problem(seed: int = 0, dim: int = 8, n: int = 64):
    """Base map W plus a unit-norm rank-1 perturbation u v^T, and samples of the perturbed map."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(dim, dim))
    u = rng.normal(size=dim)
    v = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    x = rng.normal(size=(n, dim))
    return w, x, x @ (w + np.outer(u, v))


def rank1_recovery(seed: int = 0, lr: float = 0.05, steps: int = 2000):
    w, x, t = rank1_problem(seed)
    w_before = w.tobytes()
    ad = fit_lora(w, list(zip(x, t)), r=1, lr=lr, steps=steps, seed=seed)
    unchanged = w.tobytes() == w_before and ad.w.tobytes() == w_before
    return mse(ad, x, t), unchanged


def run(seed: int = 0) -> dict:
    grad_err = gradient_check(seed=seed)
    final_mse, frozen = rank1_recovery(seed=seed)
    checks = {
        "gradient_check": grad_err < GRAD_TOL,
        "rank1_recovery": final_mse < MSE_TOL,
        "base_frozen": frozen,
    }
    return {
        "max_grad_rel_error": grad_err,
        "rank1_final_mse": final_mse,
        "checks": checks,
        "passed": all(checks.values()),
    }


def format_report(report: dict) -> list[str]:
    c = report["checks"]
    flag = {True: "PASS", False: "FAIL"}
    return [
        f"{flag[c['gradient_check']]} gradient check: max relative error {report['max_grad_rel_error']:.3e} (< {GRAD_TOL:g})",
        f"{flag[c['rank1_recovery']]} rank-1 recovery: final mse {report['rank1_final_mse']:.3e} (< {MSE_TOL:g})",
        f"{flag[c['base_frozen']]} base weight bitwise unchanged",
    ]
