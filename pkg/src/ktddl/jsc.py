"""Kernel joint sparse coding.

Solves, for a neighborhood ``{x^1, ..., x^S}`` and dictionary ``D``::

    min_A  1/2 sum_s ||phi(x^s) - phi(D) a^s||^2 + lambda1 ||A||_12 + lambda2/2 ||A||_F^2

where ``||A||_12`` sums the l2 norms of the rows of ``A`` (shape ``(d, S)``).
Only kernel blocks enter the problem, so ``phi`` is never formed.

The solver is proximal gradient descent with row-wise group soft-thresholding,
optionally finished by Newton iterations on the optimality equations of the
active rows once the support has settled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import ConvergenceError, InvalidInputError
from .kernels import KernelSpec, fingerprint, gram


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 10000
    kkt_tol: float = 1e-6
    active_tol: float = 1e-6
    polish: bool = True
    polish_every: int = 25
    accelerate: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.kkt_tol > 0 or not self.active_tol > 0:
            raise InvalidInputError("kkt_tol and active_tol must be positive")


@dataclass(frozen=True)
class JscProblem:
    """Kernel blocks and penalties of one joint sparse coding instance.

    Attributes
    ----------
    gram_DD : ndarray of shape (d, d)
    gram_DX : ndarray of shape (d, S)
        Column ``s`` is ``k(D, x^s)``.
    kxx : ndarray of shape (S,)
        ``k(x^s, x^s)``; constant in ``A``, kept so objective values are exact.
    lambda1, lambda2 : float
    """

    gram_DD: np.ndarray
    gram_DX: np.ndarray
    kxx: np.ndarray
    lambda1: float
    lambda2: float = 0.0
    dictionary_fingerprint: str | None = None

    def __post_init__(self):
        K = np.asarray(self.gram_DD, dtype=float)
        B = np.asarray(self.gram_DX, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        kxx = np.atleast_1d(np.asarray(self.kxx, dtype=float))
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise InvalidInputError(f"gram_DD must be square, got {K.shape}")
        if B.ndim != 2 or B.shape[0] != K.shape[0]:
            raise InvalidInputError(f"gram_DX must have {K.shape[0]} rows, got {B.shape}")
        if kxx.shape != (B.shape[1],):
            raise InvalidInputError(f"kxx must have length {B.shape[1]}, got {kxx.shape}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidInputError("lambda1 and lambda2 must be nonnegative")
        object.__setattr__(self, "gram_DD", K)
        object.__setattr__(self, "gram_DX", B)
        object.__setattr__(self, "kxx", kxx)

    @property
    def n_atoms(self) -> int:
        return self.gram_DD.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.gram_DX.shape[1]

    @classmethod
    def from_data(cls, spec: KernelSpec, D, X, lambda1, lambda2=0.0, gram_DD=None):
        """Build the kernel blocks for dictionary ``D`` (n, d) and pixels ``X`` (n, S)."""
        D = np.asarray(D, dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if gram_DD is None:
            gram_DD = gram(spec, D, D)
        if spec.kind == "gaussian":
            kxx = np.ones(X.shape[1])
        else:
            kxx = np.array([gram(spec, X[:, s], X[:, s])[0, 0] for s in range(X.shape[1])])
        return cls(gram_DD, gram(spec, D, X), kxx, lambda1, lambda2, fingerprint(D))


@dataclass
class JointSparseCode:
    """Solution of a joint sparse coding problem.

    Rows of ``A`` outside ``active_set`` are exactly zero.
    """

    A: np.ndarray
    active_set: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    objective_history: list = field(default_factory=list, repr=False)
    polished: bool = False

    @property
    def center(self) -> np.ndarray:
        """Code of the center pixel (first column)."""
        return self.A[:, 0]


def objective(problem: JscProblem, A) -> float:
    """Joint sparse coding cost evaluated at ``A``."""
    A = np.asarray(A, dtype=float).reshape(problem.n_atoms, problem.n_pixels)
    K, B = problem.gram_DD, problem.gram_DX
    fit = 0.5 * (problem.kxx.sum() - 2.0 * np.sum(A * B) + np.sum(A * (K @ A)))
    return float(fit + problem.lambda1 * _row_norms(A).sum() + 0.5 * problem.lambda2 * np.sum(A * A))


def _smooth(problem: JscProblem, A, KA=None) -> float:
    """Differentiable part of the cost: the kernel fit plus the ridge term."""
    KA = problem.gram_DD @ A if KA is None else KA
    fit = 0.5 * (problem.kxx.sum() - 2.0 * np.sum(A * problem.gram_DX) + np.sum(A * KA))
    return float(fit + 0.5 * problem.lambda2 * np.sum(A * A))


def _row_norms(A):
    return np.sqrt(np.einsum("ij,ij->i", A, A))


def active_set(A, active_tol=1e-6) -> np.ndarray:
    """Indices of rows whose l2 norm exceeds ``active_tol``, ascending."""
    if not active_tol > 0:
        raise InvalidInputError("active_tol must be positive")
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    return np.flatnonzero(_row_norms(A) > active_tol)


def _stationarity(problem, A):
    # rows: [k(d_j, x^1) .. k(d_j, x^S)] - k(d_j, D) A - lambda2 a_j
    return problem.gram_DX - problem.gram_DD @ A - problem.lambda2 * A


def check_optimality(problem: JscProblem, A) -> float:
    """Largest violation of the subgradient optimality conditions over rows.

    Active rows must satisfy ``r_j = lambda1 a_j / ||a_j||``; inactive rows
    need ``||r_j|| <= lambda1``, where ``r_j`` is the row-``j`` residual
    ``k(d_j, X) - k(d_j, D) A - lambda2 a_j``.
    """
    A = np.asarray(A, dtype=float).reshape(problem.n_atoms, problem.n_pixels)
    R = _stationarity(problem, A)
    norms = _row_norms(A)
    nz = norms > 0
    out = np.empty(problem.n_atoms)
    if nz.any():
        diff = R[nz] - problem.lambda1 * A[nz] / norms[nz, None]
        out[nz] = _row_norms(diff)
    if (~nz).any():
        out[~nz] = np.maximum(0.0, _row_norms(R[~nz]) - problem.lambda1)
    return float(out.max()) if out.size else 0.0


def _power_iteration(K, iters=500, tol=1e-12):
    v = np.ones(K.shape[0]) / np.sqrt(K.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = K @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ K @ v)
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return new
        lam = new
    return lam


def lipschitz_constant(gram_DD, lambda2=0.0) -> float:
    """Step-size constant ``lambda_max(k(D, D)) + lambda2`` via power iteration."""
    return _power_iteration(np.asarray(gram_DD, dtype=float)) + lambda2


def _group_shrink(Z, threshold):
    norms = _row_norms(Z)
    scale = np.zeros_like(norms)
    keep = norms > threshold
    scale[keep] = 1.0 - threshold / norms[keep]
    return Z * scale[:, None]


def _sym_solve(M, rhs):
    """Solve a symmetric system, falling back to the minimum-norm least-squares
    solution when ``M`` is singular (rank-deficient Gram on the support)."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            return linalg.solve(M, rhs, assume_a="sym")
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
        pass
    try:
        return linalg.lstsq(M, rhs)[0]
    except (linalg.LinAlgError, ValueError):
        return None


def _newton_polish(problem, A, support, iters=30):
    """Newton's method on the optimality equations restricted to ``support``.

    Returns the refined matrix or ``None`` if the iteration breaks down.
    """
    S = problem.n_pixels
    K = problem.gram_DD[np.ix_(support, support)]
    B = problem.gram_DX[support]
    lam1, lam2 = problem.lambda1, problem.lambda2
    Z = A[support].copy()
    eye = np.eye(S)
    prev = np.inf
    for _ in range(iters):
        norms = _row_norms(Z)
        if np.any(norms == 0.0):
            return None
        F = B - K @ Z - lam2 * Z - lam1 * Z / norms[:, None]
        err = np.abs(F).max()
        if err < 1e-15 or err >= prev:
            break
        prev = err
        M = np.kron(K, eye) + lam2 * np.eye(K.shape[0] * S)
        for i, z in enumerate(Z):
            u = z / norms[i]
            M[i * S:(i + 1) * S, i * S:(i + 1) * S] += lam1 * (eye - np.outer(u, u)) / norms[i]
        step = _sym_solve(M, F.ravel())
        if step is None:
            return None
        if not np.all(np.isfinite(step)):
            return None
        Z = Z + step.reshape(Z.shape)
    out = np.zeros_like(A)
    out[support] = Z
    return out


def solve(problem: JscProblem, opts: SolverOptions | None = None, init=None,
          lipschitz: float | None = None) -> JointSparseCode:
    """Minimize the joint sparse coding cost.

    Parameters
    ----------
    problem : JscProblem
    opts : SolverOptions, optional
    init : ndarray of shape (d, S), optional
        Warm start. Cold start from zero when omitted.
    lipschitz : float, optional
        Precomputed ``lambda_max(gram_DD) + lambda2`` for batched calls.

    Raises
    ------
    ConvergenceError
        If the KKT residual is still above ``opts.kkt_tol`` after
        ``opts.max_iters`` iterations.
    """
    opts = opts or SolverOptions()
    d, S = problem.n_atoms, problem.n_pixels
    K, B = problem.gram_DD, problem.gram_DX
    lam1, lam2 = problem.lambda1, problem.lambda2

    A = np.zeros((d, S)) if init is None else np.array(init, dtype=float).reshape(d, S)
    if d == 0:
        return JointSparseCode(A, np.array([], dtype=int), objective(problem, A), 0, 0.0)

    L = lipschitz if lipschitz is not None else lipschitz_constant(K, lam2)
    L = max(L, np.finfo(float).tiny)
    obj = objective(problem, A)
    history = [obj]
    slack = 1e-12

    support = active_set(A, opts.active_tol)
    stable_since = 0
    kkt = check_optimality(problem, A)
    it = 0
    Y, tk = A, 1.0
    while kkt > opts.kkt_tol and it < opts.max_iters:
        it += 1
        KY = K @ Y
        grad = KY - B + lam2 * Y
        f_Y = _smooth(problem, Y, KY)
        while True:
            cand = _group_shrink(Y - grad / L, lam1 / L)
            step = cand - Y
            if _smooth(problem, cand) <= f_Y + np.sum(grad * step) + 0.5 * L * np.sum(step * step) \
                    + slack * max(1.0, abs(f_Y)):
                break
            # power iteration underestimated the curvature
            L *= 2.0
        cand_obj = objective(problem, cand)
        if cand_obj > obj + slack * max(1.0, abs(obj)):
            # momentum overshoot: restart from the last iterate
            Y, tk = A, 1.0
            continue
        if opts.accelerate:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            Y = cand + ((tk - 1.0) / t_next) * (cand - A)
            tk = t_next
        else:
            Y = cand
        A, obj = cand, cand_obj
        history.append(obj)
        kkt = check_optimality(problem, A)

        new_support = active_set(A, opts.active_tol)
        if np.array_equal(new_support, support):
            stable_since += 1
        else:
            support, stable_since = new_support, 0
        if (opts.polish and kkt > opts.kkt_tol and support.size
                and stable_since and stable_since % opts.polish_every == 0):
            polished = _try_polish(problem, A, obj, support, opts)
            if polished is not None and polished[2] <= opts.kkt_tol:
                A, obj, kkt = polished
                history.append(obj)
                return _finish(problem, A, opts, it, history, polished=True)

    if kkt > opts.kkt_tol:
        raise ConvergenceError(
            f"joint sparse coding did not converge in {opts.max_iters} iterations "
            f"(kkt residual {kkt:.3e} > {opts.kkt_tol:.1e})",
            last_iterate=A, kkt_residual=kkt, iterations=it)

    polished_flag = False
    if opts.polish:
        support = active_set(A, opts.active_tol)
        if support.size:
            polished = _try_polish(problem, A, obj, support, opts)
            if polished is not None and polished[2] <= kkt:
                A, obj, kkt = polished
                history.append(obj)
                polished_flag = True
    return _finish(problem, A, opts, it, history, polished=polished_flag)


def _try_polish(problem, A, obj, support, opts):
    cand = _newton_polish(problem, A, support)
    if cand is None:
        return None
    if not np.array_equal(active_set(cand, opts.active_tol), support):
        return None
    cand_obj = objective(problem, cand)
    if cand_obj > obj + 1e-12 * max(1.0, abs(obj)):
        return None
    return cand, cand_obj, check_optimality(problem, cand)


def _finish(problem, A, opts, iterations, history, polished):
    support = active_set(A, opts.active_tol)
    A = A.copy()
    mask = np.ones(problem.n_atoms, dtype=bool)
    mask[support] = False
    A[mask] = 0.0
    return JointSparseCode(
        A=A,
        active_set=support,
        objective=objective(problem, A),
        iterations=iterations,
        kkt_residual=check_optimality(problem, A),
        objective_history=history,
        polished=polished,
    )


def solve_elastic_net(gram_DD, gram_Dx, lambda1, lambda2=0.0, opts=None, kxx=0.0):
    """Single-pixel elastic-net code, the ``S = 1`` case of :func:`solve`.

    This is the inner problem of the unsupervised loss; with one column the
    row-group penalty is the plain l1 norm.
    """
    gram_Dx = np.asarray(gram_Dx, dtype=float).reshape(-1, 1)
    problem = JscProblem(gram_DD, gram_Dx, np.array([kxx], dtype=float), lambda1, lambda2)
    return solve(problem, opts).A[:, 0]
