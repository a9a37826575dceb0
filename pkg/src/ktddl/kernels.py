"""Mercer kernels, Gram matrices and derivatives in the second argument.

All kernels operate on column-stacked data: a matrix of shape ``(n, p)``
holds ``p`` vectors of dimension ``n``.

The Gaussian kernel is ``exp(-||x1 - x2||^2 / sigma)`` with no factor of two,
and the polynomial kernel is the homogeneous ``<x1, x2>^degree``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import InvalidInputError

KERNEL_KINDS = ("linear", "gaussian", "polynomial")


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel to use and its parameters.

    Parameters
    ----------
    kind : {"linear", "gaussian", "polynomial"}
    sigma : float, default=1.0
        Gaussian bandwidth in units of squared distance. Ignored otherwise.
    degree : int, default=2
        Polynomial exponent. Ignored otherwise.
    """

    kind: str = "gaussian"
    sigma: float = 1.0
    degree: int = 2

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in KERNEL_KINDS:
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "gaussian" and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidInputError(f"gaussian kernel requires sigma > 0, got {self.sigma}")
        if kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise InvalidInputError(f"polynomial kernel requires an integer degree >= 1, got {self.degree}")
            object.__setattr__(self, "degree", int(self.degree))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "gaussian":
            out["sigma"] = float(self.sigma)
        elif self.kind == "polynomial":
            out["degree"] = int(self.degree)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        unknown = set(data) - {"kind", "sigma", "degree"}
        if unknown:
            raise InvalidInputError(f"unknown kernel fields: {sorted(unknown)}")
        return cls(
            kind=data.get("kind", "gaussian"),
            sigma=float(data.get("sigma", 1.0)),
            degree=int(data.get("degree", 2)),
        )


LINEAR = KernelSpec("linear")


def _as_vector(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError(f"{name} must be a 1-d vector, got shape {x.shape}")
    return x


def _as_columns(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-d matrix, got shape {A.shape}")
    return A


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """Evaluate ``k(x1, x2)`` for two vectors."""
    x1 = _as_vector(x1, "x1")
    x2 = _as_vector(x2, "x2")
    if x1.shape != x2.shape:
        raise InvalidInputError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    if spec.kind == "linear":
        return float(np.dot(x1, x2))
    if spec.kind == "gaussian":
        diff = x1 - x2
        return float(np.exp(-np.dot(diff, diff) / spec.sigma))
    return float(np.dot(x1, x2) ** spec.degree)


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Kernel matrix with entry ``(i, j) = k(A[:, i], B[:, j])``."""
    A = _as_columns(A, "A")
    B = _as_columns(B, "B")
    if A.shape[0] != B.shape[0]:
        raise InvalidInputError(f"row count mismatch: {A.shape[0]} vs {B.shape[0]}")
    if spec.kind == "linear":
        return A.T @ B
    if spec.kind == "gaussian":
        return np.exp(-cdist(A.T, B.T, "sqeuclidean") / spec.sigma)
    return (A.T @ B) ** spec.degree


def grad2(spec: KernelSpec, x, d) -> np.ndarray:
    """Gradient of ``k(x, d)`` with respect to ``d``."""
    x = _as_vector(x, "x")
    d = _as_vector(d, "d")
    if x.shape != d.shape:
        raise InvalidInputError(f"dimension mismatch: {x.shape} vs {d.shape}")
    return grad2_matrix(spec, x[:, None], d)[:, 0]


def grad2_matrix(spec: KernelSpec, X, d) -> np.ndarray:
    """Stack ``[dk(x_1, d)/dd, ..., dk(x_p, d)/dd]`` into an ``(n, p)`` matrix.

    For the linear kernel this is ``X`` itself (returned without copying).
    """
    X = _as_columns(X, "X")
    d = _as_vector(d, "d")
    if X.shape[0] != d.shape[0]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[0]} vs {d.shape[0]}")
    if spec.kind == "linear":
        return X
    if spec.kind == "gaussian":
        diff = X - d[:, None]
        weights = np.exp(-np.einsum("ij,ij->j", diff, diff) / spec.sigma)
        return (2.0 / spec.sigma) * diff * weights
    c = spec.degree
    # 0**0 is 1 in numpy, so degree 1 yields X at orthogonal points too
    return c * X * (d @ X) ** (c - 1)


def fingerprint(array) -> str:
    """Content hash of an array (shape, dtype and bytes)."""
    array = np.ascontiguousarray(array, dtype=float)
    h = hashlib.sha256()
    h.update(str(array.shape).encode())
    h.update(array.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class GramMatrix:
    """``k(D, D)`` tagged with the fingerprint of the dictionary it came from."""

    values: np.ndarray
    source_fingerprint: str

    @classmethod
    def from_dictionary(cls, spec: KernelSpec, D) -> "GramMatrix":
        D = _as_columns(D, "D")
        return cls(gram(spec, D, D), fingerprint(D))

    def is_symmetric(self, atol=1e-12) -> bool:
        return bool(np.allclose(self.values, self.values.T, rtol=0.0, atol=atol))

    def min_eigenvalue(self) -> float:
        sym = 0.5 * (self.values + self.values.T)
        return float(np.linalg.eigvalsh(sym)[0])

    def is_psd(self, tol=1e-8) -> bool:
        return self.min_eigenvalue() >= -tol
