"""Dimensionality reduction applied before partitioning.

Two reducers: ``identity`` passes raw vectors straight through (for inputs
that were already reduced upstream), ``pca`` projects onto the top principal
directions. PCA is deterministic: covariance eigenvectors in descending
eigenvalue order, each component sign-fixed so its largest-magnitude entry
is positive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

_ORTHO_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class Reducer:
    kind: str
    mean: np.ndarray
    components: np.ndarray | None
    input_dim: int
    output_dim: int

    def __post_init__(self):
        if self.kind not in ("identity", "pca"):
            raise DataError(f"unknown reducer kind {self.kind!r}")
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.shape != (self.input_dim,):
            raise DataError(f"mean must have shape ({self.input_dim},), got {mean.shape}")
        object.__setattr__(self, "mean", mean)
        if self.kind == "identity":
            if self.output_dim != self.input_dim:
                raise DataError("identity reducer requires output_dim == input_dim")
            if self.components is not None:
                raise DataError("identity reducer carries no components")
            return
        components = np.asarray(self.components, dtype=np.float64)
        if components.shape != (self.output_dim, self.input_dim):
            raise DataError(
                f"components must have shape ({self.output_dim}, {self.input_dim}), "
                f"got {components.shape}"
            )
        gram = components @ components.T
        if np.max(np.abs(gram - np.eye(self.output_dim))) >= _ORTHO_TOL:
            raise DataError("components are not orthonormal")
        object.__setattr__(self, "components", components)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Reducer):
            return NotImplemented
        same_components = (
            self.components is None
            if other.components is None
            else other.components is not None
            and np.array_equal(self.components, other.components)
        )
        return (
            self.kind == other.kind
            and self.input_dim == other.input_dim
            and self.output_dim == other.output_dim
            and np.array_equal(self.mean, other.mean)
            and same_components
        )


def identity_reducer(dim: int) -> Reducer:
    return Reducer(
        kind="identity",
        mean=np.zeros(dim, dtype=np.float64),
        components=None,
        input_dim=dim,
        output_dim=dim,
    )


def fit_pca(vectors, r: int, seed: int = 0) -> Reducer:
    """Fit a PCA reducer to an n x d matrix.

    ``seed`` is part of the signature for interface stability; the fit itself
    is deterministic and does not consume randomness. When n < d the
    eigenproblem is solved on the n x n Gram matrix instead of the d x d
    covariance.
    """
    del seed
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("vectors must be an n x d matrix")
    n, d = X.shape
    if not np.all(np.isfinite(X)):
        raise DataError("vectors contain non-finite values")
    if r < 1:
        raise DataError(f"target dimension must be >= 1, got {r}")
    if r > d:
        raise DataError(f"target dimension {r} exceeds input dimension {d}")
    if r >= n:
        raise DataError(f"need more than {r} samples to fit {r} components, got {n}")

    mean = X.mean(axis=0)
    centered = X - mean
    if n >= d:
        cov = centered.T @ centered / n
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals = eigvals[order]
        components = eigvecs[:, order].T
    else:
        gram = centered @ centered.T / n
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1]
        eigvals = eigvals[order]
        directions = centered.T @ eigvecs[:, order]
        norms = np.linalg.norm(directions, axis=0)
        keep = norms > 0
        components = np.zeros((d, len(eigvals)))
        components[:, keep] = directions[:, keep] / norms[keep]
        components = components.T

    scale = max(float(eigvals[0]), 0.0)
    rank = int(np.sum(eigvals > scale * 1e-10)) if scale > 0 else 0
    if rank < r:
        raise DataError(
            f"data supports only {rank} nonzero principal directions, requested {r}"
        )
    components = components[:r].copy()
    # Fix each component's sign: largest-magnitude entry positive.
    for row in components:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    return Reducer(
        kind="pca",
        mean=mean,
        components=components,
        input_dim=d,
        output_dim=r,
    )


def transform(reducer: Reducer, vectors) -> np.ndarray:
    """Project an n x d matrix into the reduced space."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != reducer.input_dim:
        raise DataError(
            f"expected n x {reducer.input_dim} input, got shape {X.shape}"
        )
    if reducer.kind == "identity":
        return X
    return (X - reducer.mean) @ reducer.components.T
