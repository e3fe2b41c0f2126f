"""Fine-grained interest regression on raw embeddings.

Targets are the [0, 1] min-max normalized partition CI scores, inherited by
every member image. The linear model minimizes

    sum_i (w . x_i + b - t_i)^2 + lambda ||w||^2        (bias unpenalized)

via conjugate gradient on the centered normal equations, which is exact about
leaving the bias out of the penalty.
"""
from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .model import CiRegressor

_CG_TOL = 1e-8


def normalize_targets(
    ci_scores: Mapping[int, float]
) -> tuple[dict[int, float], float, float]:
    """Min-max normalize partition CI scores to [0, 1].

    Raises DataError when all scores coincide (targets would be constant).
    """
    if not ci_scores:
        raise DataError("no partitions to normalize")
    lo = min(ci_scores.values())
    hi = max(ci_scores.values())
    if not (lo < hi):
        raise DataError(f"degenerate targets: every partition has CI {lo}")
    span = hi - lo
    return (
        {pid: (ci - lo) / span for pid, ci in ci_scores.items()},
        float(lo),
        float(hi),
    )


def default_ridge_lambda(embeddings) -> float:
    """Stabilizing default: 1e-4 * trace(X^T X) / d."""
    X = np.asarray(embeddings, dtype=np.float64)
    return 1e-4 * float(np.sum(X * X)) / X.shape[1]


def _conjugate_gradient(A: np.ndarray, b: np.ndarray, singular_hint: str) -> np.ndarray:
    x = np.zeros_like(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max(10 * len(b), 100)):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0 or not math.isfinite(pAp):
            raise DataError(singular_hint)
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= _CG_TOL * b_norm:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise DataError(f"conjugate gradient did not converge; {singular_hint}")


def fit(
    embeddings,
    targets,
    ridge_lambda: float,
    target_min: float = 0.0,
    target_max: float = 1.0,
) -> CiRegressor:
    """Fit the penalized least-squares weights on an n x d matrix."""
    X = np.asarray(embeddings, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or t.ndim != 1 or len(X) != len(t):
        raise DataError(f"shape mismatch: embeddings {X.shape}, targets {t.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(t))):
        raise DataError("non-finite values in the training data")
    if ridge_lambda < 0:
        raise DataError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    n, d = X.shape
    if ridge_lambda == 0.0 and n <= d:
        raise DataError(
            f"unregularized fit needs more samples than dimensions ({n} <= {d})"
        )

    x_mean = X.mean(axis=0)
    t_mean = float(t.mean())
    Xc = X - x_mean
    A = Xc.T @ Xc + ridge_lambda * np.eye(d)
    b = Xc.T @ (t - t_mean)
    hint = (
        "normal equations are singular; add ridge regularization"
        if ridge_lambda == 0.0
        else "normal equations are numerically singular"
    )
    w = _conjugate_gradient(A, b, hint)
    bias = t_mean - float(w @ x_mean)
    return CiRegressor(
        weights=w,
        bias=bias,
        ridge_lambda=float(ridge_lambda),
        target_min=target_min,
        target_max=target_max,
    )


def predict(model: CiRegressor, embeddings, clamp: bool = False) -> np.ndarray:
    """Raw scores w . x + b per row; clamped to [0, 1] when asked."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dimension:
        raise DataError(
            f"expected n x {model.dimension} embeddings, got shape {X.shape}"
        )
    scores = X @ model.weights + model.bias
    if clamp:
        scores = np.clip(scores, 0.0, 1.0)
    return scores


def r_squared(predictions, targets) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or len(p) < 2:
        raise DataError("predictions and targets must be equal-length vectors (>= 2)")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("targets are constant; R^2 is undefined")
    ss_res = float(np.sum((p - t) ** 2))
    return 1.0 - ss_res / ss_tot


def split_train_test(
    image_ids: Sequence[str], fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Seed-keyed shuffle, then split: test side floors at n*(1-fraction), min 1."""
    if not (0.0 < fraction < 1.0):
        raise DataError(f"fraction must be in (0, 1), got {fraction}")
    ids = list(image_ids)
    n = len(ids)
    test_n = max(1, math.floor(n * (1.0 - fraction) + 1e-9))
    train_n = n - test_n
    if train_n < 1:
        raise DataError(f"split of {n} ids at fraction {fraction} leaves no training side")
    perm = np.random.default_rng(seed).permutation(n)
    train = [ids[i] for i in perm[:train_n]]
    test = [ids[i] for i in perm[train_n:]]
    return train, test
