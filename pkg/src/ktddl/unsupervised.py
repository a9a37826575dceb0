"""Unsupervised kernel dictionary learning and classifier initialization.

Projected SGD on the expected elastic-net reconstruction loss over the set of
dictionaries whose atoms lie in the unit l2 ball. Used to initialize the
task-driven trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError
from .jsc import JscProblem, SolverOptions, solve
from .kernels import KernelSpec, fingerprint, gram, grad2_matrix


@dataclass(frozen=True)
class Dictionary:
    """Atoms stored as the columns of an ``(n, d)`` matrix."""

    atoms: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim != 2:
            raise InvalidInputError(f"atoms must be 2-d, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise InvalidInputError("dictionary contains NaN or Inf")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def n_features(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.atoms)

    def in_unit_ball(self, tol=1e-12) -> bool:
        return bool(np.all(np.linalg.norm(self.atoms, axis=0) <= 1.0 + tol))


def project_unit_ball(D) -> np.ndarray:
    """Scale every column with l2 norm above one back onto the unit sphere."""
    D = np.array(D, dtype=float)
    norms = np.linalg.norm(D, axis=0)
    over = norms > 1.0
    D[:, over] /= norms[over]
    return D


def learning_rate(rho, t0, t) -> float:
    """``min(rho, rho * t0 / t)``."""
    return min(rho, rho * t0 / t)


def init_dictionary(X, d, seed=0) -> Dictionary:
    """Sample ``d`` distinct training columns of ``X`` (n, N) as starting atoms."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("X must be an (n, N) matrix")
    if d < 1 or d > X.shape[1]:
        raise InvalidInputError(f"need 1 <= d <= N, got d={d}, N={X.shape[1]}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(X.shape[1], size=d, replace=False)
    return Dictionary(project_unit_ball(X[:, idx]), {"init": "sampled", "seed": seed})


def reconstruction_gradient(spec: KernelSpec, D, x, alpha) -> np.ndarray:
    """Gradient in ``D`` of ``1/2 ||phi(x) - phi(D) alpha||^2`` with ``alpha`` fixed.

    Column ``k`` equals ``alpha_k (k'(D, d_k) alpha - k'(x, d_k))``. Only atoms
    with a nonzero coefficient receive a gradient.
    """
    G = np.zeros_like(D)
    for k in np.flatnonzero(alpha):
        G[:, k] = alpha[k] * (grad2_matrix(spec, D, D[:, k]) @ alpha
                              - grad2_matrix(spec, x, D[:, k])[:, 0])
    return G


def unsupervised_loss(spec: KernelSpec, D, X, lambda1, lambda2=0.0, opts=None) -> float:
    """Average elastic-net coding cost of the columns of ``X`` under ``D``."""
    X = np.asarray(X, dtype=float)
    K = gram(spec, D, D)
    total = 0.0
    for i in range(X.shape[1]):
        problem = JscProblem.from_data(spec, D, X[:, i], lambda1, lambda2, gram_DD=K)
        total += solve(problem, opts).objective
    return total / X.shape[1]


def train_unsupervised(X, d, lambda1, lambda2=0.0, rho=0.1, t0=None, T=1000,
                       kernel: KernelSpec | None = None, seed=0, opts=None,
                       init: Dictionary | None = None, callback=None) -> Dictionary:
    """Projected SGD on the expected elastic-net reconstruction loss.

    Parameters
    ----------
    X : ndarray of shape (n, N)
        Training pixels as columns.
    d : int
        Number of atoms.
    lambda1, lambda2 : float
        Coding penalties.
    rho, t0 : float
        Learning rate ``min(rho, rho * t0 / t)``; ``t0`` defaults to ``T / 10``.
    T : int
        Number of SGD steps.
    kernel : KernelSpec, default=linear
    seed : int or sequence of int
        Seeds both the initial atom sample and the draws.
    init : Dictionary, optional
        Starting point; sampled from ``X`` when omitted.
    callback : callable, optional
        Called as ``callback(t, D)`` after every projected step.
    """
    kernel = kernel or KernelSpec("linear")
    X = np.asarray(X, dtype=float)
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if rho < 0:
        raise InvalidInputError("rho must be nonnegative")
    t0 = T / 10.0 if t0 is None else t0
    opts = opts or SolverOptions()
    seq = np.random.SeedSequence(seed)
    init_seed, draw_seed = seq.spawn(2)
    if init is None:
        init = init_dictionary(X, d, np.random.default_rng(init_seed).integers(2**63))
    D = np.array(init.atoms)
    rng = np.random.default_rng(draw_seed)
    for t in range(1, T + 1):
        x = X[:, rng.integers(X.shape[1])]
        step = learning_rate(rho, t0, t)
        if step == 0.0:
            continue
        problem = JscProblem.from_data(kernel, D, x, lambda1, lambda2)
        alpha = solve(problem, opts).A[:, 0]
        G = reconstruction_gradient(kernel, D, x[:, None], alpha)
        D = project_unit_ball(D - step * G)
        if callback is not None:
            callback(t, D)
    return Dictionary(D, {"init": "unsupervised", "seed": repr(seed), "T": T,
                          "kernel": kernel.to_dict()})


def init_classifier(codes, Y, nu) -> np.ndarray:
    """Ridge solution ``W = Y A^T (A A^T + nu N I)^{-1}``.

    Minimizes the average quadratic loss ``1/2 ||y_i - W a_i||^2`` plus
    ``nu/2 ||W||_F^2`` for codes ``A`` (d, N) and one-hot labels ``Y`` (C, N).
    """
    A = np.asarray(codes, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if A.ndim != 2 or Y.ndim != 2 or A.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"codes {A.shape} and labels {Y.shape} must share N columns")
    if not nu > 0:
        raise InvalidInputError("nu must be positive")
    N = A.shape[1]
    system = A @ A.T + nu * N * np.eye(A.shape[0])
    return np.linalg.solve(system, A @ Y.T).T
