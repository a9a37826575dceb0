"""Kernelized task-driven dictionary learning under the joint sparsity prior.

Each SGD step codes one pixel neighborhood, differentiates the quadratic
classification loss of the center code through the joint sparse coding
problem (implicitly, on the active rows), and takes a projected gradient step
on the dictionary and the linear classifier.

Index conventions: the code ``A`` has shape ``(d, S)``. The implicit-gradient
system is assembled row-major over the active rows, i.e. unknown ``(j, s)``
sits at position ``jj * S + s`` where ``jj`` is the rank of ``j`` in the
active set. The full multiplier vector ``beta`` of length ``d * S`` uses the
same interleaving, ``beta[j * S + s]``, so ``beta[s::S]`` is the per-pixel
slice used by the dictionary update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import (ConvergenceError, InvalidInputError, NotPositiveDefiniteError,
                         NumericalError, TrainingError)
from .jsc import JointSparseCode, JscProblem, SolverOptions, solve
from .kernels import KernelSpec, gram, grad2_matrix
from .unsupervised import Dictionary, learning_rate, project_unit_ball

logger = logging.getLogger(__name__)

EPSILON_PD = 1e-8

# "interleaved" places beta at j*S + s, consistent with the row-major system.
# "literal" scatters the system solution onto {j, j+d, ..., j+(S-1)d} while the
# update still reads {s, s+S, ...}; it is kept only to show that the mixed
# layout does not reproduce the true gradient.
BETA_LAYOUTS = ("interleaved", "literal")


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 0.01
    lambda2: float = 0.0
    nu: float = 1e-6
    rho: float = 0.1
    t0: float | None = None
    T: int = 1000
    S: int = 1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    pd_guard: bool = True
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.nu < 0:
            raise InvalidInputError("lambda1, lambda2 and nu must be nonnegative")
        if not self.rho > 0:
            raise InvalidInputError("rho must be positive")
        if self.t0 is not None and not self.t0 > 0:
            raise InvalidInputError("t0 must be positive")
        if self.T < 0 or self.S < 1:
            raise InvalidInputError("need T >= 0 and S >= 1")
        if self.T > 0 and self.lambda1 > 0 and self.lambda2 == 0 and not self.pd_guard:
            raise InvalidInputError("lambda2 = 0 with lambda1 > 0 requires the PD guard")

    @property
    def effective_t0(self) -> float:
        return self.T / 10.0 if self.t0 is None else self.t0

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1, "lambda2": self.lambda2, "nu": self.nu,
            "rho": self.rho, "t0": self.t0, "T": self.T, "S": self.S,
            "kernel": self.kernel.to_dict(), "seed": self.seed, "pd_guard": self.pd_guard,
            "solver": {"max_iters": self.solver.max_iters, "kkt_tol": self.solver.kkt_tol,
                       "active_tol": self.solver.active_tol},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        kernel = KernelSpec.from_dict(data.pop("kernel", {}))
        solver = SolverOptions(**data.pop("solver", {}))
        return cls(kernel=kernel, solver=solver, **data)


@dataclass(frozen=True)
class NeighborhoodSample:
    """``pixels`` is ``(n, S)`` with the center first; ``label`` is one-hot."""

    pixels: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=float)
        if pixels.ndim == 1:
            pixels = pixels[:, None]
        label = np.asarray(self.label, dtype=float)
        if label.ndim != 1 or np.count_nonzero(label == 1.0) != 1 or np.count_nonzero(label) != 1:
            raise InvalidInputError("label must be a one-hot vector")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "label", label)

    @classmethod
    def from_class(cls, pixels, class_index, n_classes):
        y = np.zeros(n_classes)
        y[class_index] = 1.0
        return cls(pixels, y)


@dataclass(frozen=True)
class TrainLogRecord:
    t: int
    step: float
    active_count: int
    sample_loss: float


@dataclass(frozen=True)
class ModelPair:
    dictionary: Dictionary
    weights: np.ndarray
    train_log: tuple = ()

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[1] != self.dictionary.n_atoms:
            raise InvalidInputError(f"weights must be (C, {self.dictionary.n_atoms}), got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise InvalidInputError("weights contain NaN or Inf")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class TrainingSet:
    """Labeled neighborhoods for SGD.

    ``neighborhoods`` has shape ``(N, n, S)``; ``labels`` holds 0-based
    class indices.
    """

    neighborhoods: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.neighborhoods, dtype=float)
        if X.ndim == 2:
            X = X[:, :, None]
        y = np.asarray(self.labels, dtype=int)
        if X.ndim != 3 or y.shape != (X.shape[0],):
            raise InvalidInputError("neighborhoods must be (N, n, S) with one label per sample")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise InvalidInputError("labels out of range")
        object.__setattr__(self, "neighborhoods", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.neighborhoods.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.neighborhoods[:, :, 0].T

    def sample(self, i) -> NeighborhoodSample:
        return NeighborhoodSample.from_class(self.neighborhoods[i], self.labels[i], self.n_classes)


def supervised_loss(y, W, alpha) -> float:
    """Quadratic loss ``1/2 ||y - W alpha||^2``."""
    r = np.asarray(y, dtype=float) - np.asarray(W, dtype=float) @ np.asarray(alpha, dtype=float)
    return 0.5 * float(r @ r)


def code_sample(D, pixels, config: TrainConfig, gram_DD=None) -> JointSparseCode:
    problem = JscProblem.from_data(config.kernel, D, pixels, config.lambda1, config.lambda2, gram_DD)
    return solve(problem, config.solver)


def assemble_delta(rows) -> np.ndarray:
    """Block-diagonal curvature of the row norms, one ``(S, S)`` block per row.

    Block ``j`` is ``(I - u u^T) / ||a_j||`` with ``u = a_j / ||a_j||``, the
    Jacobian of ``a_j / ||a_j||``.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[None, :]
    m, S = rows.shape
    out = np.zeros((m * S, m * S))
    eye = np.eye(S)
    for i, a in enumerate(rows):
        r = np.linalg.norm(a)
        if r == 0.0:
            raise InvalidInputError(f"row {i} has zero norm; filter by the active set first")
        u = a / r
        out[i * S:(i + 1) * S, i * S:(i + 1) * S] = (eye - np.outer(u, u)) / r
    return out


def beta_system(gram_active, delta, lambda1, lambda2, S) -> np.ndarray:
    """``k(D_L, D_L) (x) I_S + lambda1 * Delta + lambda2 * I``."""
    m = gram_active.shape[0]
    return np.kron(gram_active, np.eye(S)) + lambda1 * delta + lambda2 * np.eye(m * S)


def solve_beta(gram_active, delta, lambda1, lambda2, W_active, alpha_center, y, W,
               support, d, S, pd_guard=True, layout="interleaved") -> np.ndarray:
    """Multipliers of the implicit gradient, a ``d * S`` vector.

    Solves ``M beta_U = g`` on the active rows, with
    ``g = vec((W A_bar - Y_bar)^T W_L)``. Only the center column of
    ``W A_bar - Y_bar`` is nonzero, so ``g`` carries ``W_L^T (W alpha - y)``
    at the center-pixel slots and zeros elsewhere.

    Raises
    ------
    NotPositiveDefiniteError
        If the Cholesky factorization of the system fails.
    """
    if layout not in BETA_LAYOUTS:
        raise InvalidInputError(f"unknown beta layout {layout!r}")
    support = np.asarray(support, dtype=int)
    beta = np.zeros(d * S)
    m = support.size
    if m == 0:
        return beta
    M = beta_system(gram_active, delta, lambda1, lambda2, S)
    if lambda2 == 0.0 and pd_guard:
        M = M + EPSILON_PD * np.eye(m * S)
        logger.debug("PD guard applied: +%g on the beta system diagonal", EPSILON_PD)
    residual = W @ alpha_center - y
    g = np.zeros((m, S))
    g[:, 0] = W_active.T @ residual
    try:
        factor = linalg.cho_factor(M)
        sol = linalg.cho_solve(factor, g.ravel())
    except linalg.LinAlgError as exc:
        min_eig = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        raise NotPositiveDefiniteError(
            f"beta system is not positive definite (min eigenvalue ~ {min_eig:.3e}); "
            "use lambda2 > 0 or enable the PD guard", min_eigenvalue=min_eig) from exc
    if layout == "interleaved":
        idx = (support[:, None] * S + np.arange(S)[None, :]).ravel()
        beta[idx] = sol
    else:
        upsilon = np.sort((support[:, None] + d * np.arange(S)[None, :]).ravel())
        beta[upsilon] = sol
    return beta


def dictionary_gradient(kernel: KernelSpec, D, pixels, A, beta) -> np.ndarray:
    """Gradient of the sampled loss with respect to the dictionary.

    For every pixel ``s`` and atom ``k``, column ``k`` accumulates::

        (k'(x^s, d_k) - k'(D, d_k) a^s) beta_s[k] - k'(D, d_k) beta_s a^s[k]

    where ``beta_s = beta[s::S]`` and ``k'`` differentiates in the second
    argument. Only atoms with a nonzero multiplier or coefficient contribute.
    """
    d, S = A.shape
    G = np.zeros_like(D)
    for s in range(S):
        b = beta[s::S]
        a = A[:, s]
        x = pixels[:, s]
        for k in np.flatnonzero((b != 0.0) | (a != 0.0)):
            KpD = grad2_matrix(kernel, D, D[:, k])
            G[:, k] += ((grad2_matrix(kernel, x, D[:, k])[:, 0] - KpD @ a) * b[k]
                        - (KpD @ b) * a[k])
    return G


def weights_gradient(W, alpha_center, y, nu) -> np.ndarray:
    return np.outer(W @ alpha_center - y, alpha_center) + nu * W


def sample_objective(D, W, sample: NeighborhoodSample, config: TrainConfig) -> float:
    """Sampled training cost: quadratic loss of the center code plus ``nu/2 ||W||_F^2``."""
    code = code_sample(D, sample.pixels, config)
    return supervised_loss(sample.label, W, code.center) + 0.5 * config.nu * float(np.sum(W * W))


@dataclass
class SampleGradient:
    code: JointSparseCode
    beta: np.ndarray
    grad_D: np.ndarray
    grad_W: np.ndarray
    loss: float


def sample_gradient(D, W, sample: NeighborhoodSample, config: TrainConfig,
                    layout="interleaved", gram_DD=None) -> SampleGradient:
    """Analytic gradients of :func:`sample_objective` in ``D`` and ``W``."""
    D = np.asarray(D, dtype=float)
    W = np.asarray(W, dtype=float)
    if gram_DD is None:
        gram_DD = gram(config.kernel, D, D)
    code = code_sample(D, sample.pixels, config, gram_DD)
    alpha = code.center
    d, S = code.A.shape
    support = code.active_set
    y = sample.label
    if support.size:
        delta = assemble_delta(code.A[support])
        beta = solve_beta(gram_DD[np.ix_(support, support)], delta, config.lambda1,
                          config.lambda2, W[:, support], alpha, y, W, support, d, S,
                          pd_guard=config.pd_guard, layout=layout)
        grad_D = dictionary_gradient(config.kernel, D, sample.pixels, code.A, beta)
    else:
        beta = np.zeros(d * S)
        grad_D = np.zeros_like(D)
    return SampleGradient(code, beta, grad_D, weights_gradient(W, alpha, y, config.nu),
                          supervised_loss(y, W, alpha))


def gradient_step(model: ModelPair, sample: NeighborhoodSample, code: JointSparseCode,
                  beta, step, config: TrainConfig, grad_D=None) -> ModelPair:
    """One projected gradient update of ``(D, W)``.

    ``grad_D`` may be passed when already computed for this sample and beta.
    """
    if step < 0:
        raise InvalidInputError("step must be nonnegative")
    D = np.array(model.dictionary.atoms)
    W = np.array(model.weights)
    alpha = code.center
    if step == 0.0:
        return model
    W_new = W - step * (np.outer(W @ alpha - sample.label, alpha) + config.nu * W)
    if code.active_set.size:
        G = grad_D if grad_D is not None else dictionary_gradient(
            config.kernel, D, sample.pixels, code.A, beta)
        D = project_unit_ball(D - step * G)
        dictionary = Dictionary(D, model.dictionary.provenance)
    else:
        dictionary = model.dictionary
    return ModelPair(dictionary, W_new, model.train_log)


def train(data: TrainingSet, init: ModelPair, config: TrainConfig, layout="interleaved",
          callback=None) -> ModelPair:
    """Run ``config.T`` SGD iterations starting from ``init``.

    Centers are drawn uniformly with replacement from ``data`` using a
    generator seeded by ``config.seed``.

    Parameters
    ----------
    callback : callable, optional
        Called as ``callback(t, model)`` after every iteration.
    """
    if len(data) == 0 and config.T > 0:
        raise InvalidInputError("empty training set")
    if init.n_classes != data.n_classes:
        raise InvalidInputError(f"model has {init.n_classes} classes, data has {data.n_classes}")
    if data.neighborhoods.shape[2] != config.S:
        raise InvalidInputError(f"neighborhoods have S={data.neighborhoods.shape[2]}, config S={config.S}")
    if not init.dictionary.in_unit_ball():
        raise InvalidInputError("initial dictionary has atoms outside the unit ball")
    rng = np.random.default_rng(config.seed)
    model = init
    log = list(init.train_log)
    t0 = config.effective_t0
    if config.lambda2 == 0.0 and config.lambda1 > 0 and config.T > 0:
        logger.info("lambda2 = 0: PD guard adds %g to the beta system diagonal", EPSILON_PD)
    for t in range(1, config.T + 1):
        i = rng.integers(len(data))
        sample = data.sample(i)
        try:
            grads = sample_gradient(model.dictionary.atoms, model.weights, sample, config, layout)
        except (ConvergenceError, NotPositiveDefiniteError, NumericalError) as exc:
            raise TrainingError(f"iteration {t}: {exc}", iteration=t) from exc
        step = learning_rate(config.rho, t0, t)
        model = gradient_step(model, sample, grads.code, grads.beta, step, config, grads.grad_D)
        log.append(TrainLogRecord(t, step, int(grads.code.active_set.size), grads.loss))
        if callback is not None:
            callback(t, model)
    return replace(model, train_log=tuple(log))
