"""Independent reference computations used by the test-suite.

Nothing here calls into the package's solvers or trainers, so each oracle
checks a code path it does not share.
"""

import numpy as np


def bcd_joint_sparse(K, B, lambda1, lambda2, sweeps=200000, tol=1e-15):
    """Exact block coordinate descent on the joint sparse coding cost.

    Row ``j`` has the closed-form minimizer
    ``max(0, 1 - lambda1 / ||r_j||) r_j / (K_jj + lambda2)`` with
    ``r_j = B_j - sum_{l != j} K_jl a_l``.
    """
    K = np.asarray(K, float)
    B = np.asarray(B, float)
    d, S = B.shape
    A = np.zeros((d, S))
    for _ in range(sweeps):
        change = 0.0
        for j in range(d):
            r = B[j] - K[j] @ A + K[j, j] * A[j]
            nr = np.sqrt(r @ r)
            denom = K[j, j] + lambda2
            new = np.zeros(S) if nr <= lambda1 or denom == 0 else (1 - lambda1 / nr) * r / denom
            change = max(change, np.abs(new - A[j]).max())
            A[j] = new
        if change < tol:
            break
    return A


def jsc_cost(K, B, kxx, A, lambda1, lambda2):
    total = 0.0
    for s in range(B.shape[1]):
        a = A[:, s]
        total += 0.5 * (kxx[s] - 2 * a @ B[:, s] + a @ K @ a)
    for j in range(A.shape[0]):
        total += lambda1 * np.sqrt(A[j] @ A[j])
    return total + 0.5 * lambda2 * np.sum(A ** 2)


def kernel_direct(kind, x1, x2, sigma=1.0, degree=2):
    """Scalar kernel from the closed forms, written out with Python loops."""
    if kind == "linear":
        return sum(a * b for a, b in zip(x1, x2))
    if kind == "gaussian":
        return float(np.exp(-sum((a - b) ** 2 for a, b in zip(x1, x2)) / sigma))
    return sum(a * b for a, b in zip(x1, x2)) ** degree


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def power_iteration_top_direction(X, iters=2000):
    """Leading left singular direction of ``X`` by power iteration on ``X X^T``."""
    v = np.ones(X.shape[0]) / np.sqrt(X.shape[0])
    M = X @ X.T
    for _ in range(iters):
        v = M @ v
        v /= np.linalg.norm(v)
    return v


def linear_task_driven_trainer(D, W, centers, Y, lambda1, lambda2, nu, rho, t0, T, seed,
                               sparse_coder):
    """Linear, single-pixel task-driven dictionary learning, written directly.

    ``centers`` is ``(n, N)``, ``Y`` one-hot ``(C, N)``. ``sparse_coder(G, b)``
    returns the elastic-net code for Gram ``G = D^T D`` and ``b = D^T x``; the
    multiplier is ``beta_L = (D_L^T D_L + lambda2 I)^{-1} W_L^T (W a - y)`` and
    the dictionary gradient ``(x - D a) beta^T - D beta a^T``.

    Returns the list of ``(D, W)`` after every iteration.
    """
    from scipy import linalg

    D = np.array(D, float)
    W = np.array(W, float)
    rng = np.random.default_rng(seed)
    history = []
    for t in range(1, T + 1):
        i = rng.integers(centers.shape[1])
        x = centers[:, i]
        y = Y[:, i]
        G = D.T @ D
        a = sparse_coder(G, D.T @ x[:, None])
        active = np.flatnonzero(np.abs(a) > 1e-6)
        a[np.abs(a) <= 1e-6] = 0.0
        beta = np.zeros_like(a)
        if active.size:
            r = W @ a - y
            M = G[np.ix_(active, active)] + lambda2 * np.eye(active.size)
            beta[active] = linalg.cho_solve(linalg.cho_factor(M), W[:, active].T @ r)
        step = min(rho, rho * t0 / t)
        W_new = W - step * (np.outer(W @ a - y, a) + nu * W)
        if active.size:
            grad = np.outer(x - D @ a, beta) - np.outer(D @ beta, a)
            D = D - step * grad
            norms = np.linalg.norm(D, axis=0)
            over = norms > 1.0
            D[:, over] /= norms[over]
        W = W_new
        history.append((D.copy(), W.copy()))
    return history
