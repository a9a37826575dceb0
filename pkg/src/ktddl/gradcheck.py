"""Finite-difference verification of the task-driven gradients.

Random small instances are drawn with a support that is neither empty nor
full, and with a margin on both sides of the shrinkage threshold so that a
perturbation of size ``h`` cannot change the active set.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .jsc import SolverOptions
from .kernels import KERNEL_KINDS, KernelSpec, gram
from .task_driven import NeighborhoodSample, TrainConfig, code_sample, sample_gradient, sample_objective

logger = logging.getLogger(__name__)

FD_SOLVER = SolverOptions(max_iters=20000, kkt_tol=1e-11, active_tol=1e-9)


@dataclass(frozen=True)
class GradcheckInstance:
    D: np.ndarray
    W: np.ndarray
    sample: NeighborhoodSample
    config: TrainConfig


@dataclass(frozen=True)
class GradcheckResult:
    kind: str
    n: int
    d: int
    S: int
    C: int
    active_count: int
    rel_error_D: float
    rel_error_W: float
    support_flipped: bool = False

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_error_D, self.rel_error_W)


@dataclass
class GradcheckReport:
    results: list = field(default_factory=list)
    redraws: int = 0
    tol: float = 1e-4
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.max_rel_error < self.tol for r in self.results)

    @property
    def worst(self) -> float:
        return max((r.max_rel_error for r in self.results), default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed, "tol": self.tol, "trials": len(self.results),
            "redraws": self.redraws, "worst_rel_error": self.worst, "seconds": self.seconds,
            "results": [dict(vars(r), max_rel_error=r.max_rel_error) for r in self.results],
        }


def _unit_columns(rng, n, m):
    Z = rng.normal(size=(n, m))
    return Z / np.linalg.norm(Z, axis=0)


def draw_instance(rng, kind=None, S=None, max_tries=200, margin=0.05) -> GradcheckInstance:
    """Random instance with ``1 <= |active set| < d`` and a support margin.

    ``lambda1`` is a random fraction of the smallest value that zeroes every
    row. The draw is rejected unless every active row has norm above
    ``margin`` and every inactive residual sits at least ``margin * lambda1``
    below the threshold.
    """
    for _ in range(max_tries):
        kind_t = kind or str(rng.choice(KERNEL_KINDS))
        S_t = S or int(rng.integers(1, 4))
        n = int(rng.integers(3, 9))
        d = int(rng.integers(2, 7))
        C = int(rng.integers(2, 4))
        spec = KernelSpec(kind_t, sigma=float(rng.uniform(0.5, 2.0)), degree=int(rng.integers(2, 4)))
        D = _unit_columns(rng, n, d) * rng.uniform(0.7, 1.0, size=d)
        X = _unit_columns(rng, n, S_t)
        lam_max = float(np.linalg.norm(gram(spec, D, X), axis=1).max())
        config = TrainConfig(lambda1=float(rng.uniform(0.1, 0.7)) * lam_max,
                             lambda2=float(rng.uniform(0.01, 0.1)), nu=float(rng.uniform(1e-3, 0.1)),
                             S=S_t, kernel=spec, solver=FD_SOLVER)
        code = code_sample(D, X, config)
        m = code.active_set.size
        if not 1 <= m < d:
            continue
        K = gram(spec, D, D)
        R = gram(spec, D, X) - K @ code.A - config.lambda2 * code.A
        inactive = np.setdiff1d(np.arange(d), code.active_set)
        if np.linalg.norm(code.A[code.active_set], axis=1).min() < margin:
            continue
        if np.linalg.norm(R[inactive], axis=1).max() > (1 - margin) * config.lambda1:
            continue
        W = rng.normal(size=(C, d))
        sample = NeighborhoodSample.from_class(X, int(rng.integers(C)), C)
        return GradcheckInstance(D, W, sample, config)
    raise RuntimeError("could not draw an instance with a partial support")


def finite_difference_check(inst: GradcheckInstance, h=1e-5, layout="interleaved",
                            corrupt=False) -> GradcheckResult:
    """Compare analytic and central-difference gradients on one instance.

    ``corrupt`` flips the sign of the analytic gradients; it exists as a
    negative control for the checker itself.
    """
    config = inst.config
    sample = inst.sample
    grads = sample_gradient(inst.D, inst.W, sample, config, layout)
    support = grads.code.active_set
    flipped = False

    def f_D(D):
        nonlocal flipped
        if not np.array_equal(code_sample(D, sample.pixels, config).active_set, support):
            flipped = True
        return sample_objective(D, inst.W, sample, config)

    fd_D = _central(f_D, inst.D, h)
    fd_W = _central(lambda W: sample_objective(inst.D, W, sample, config), inst.W, h)
    sign = -1.0 if corrupt else 1.0
    n, d = inst.D.shape
    return GradcheckResult(config.kernel.kind, n, d, config.S, inst.W.shape[0], int(support.size),
                           _rel_error(sign * grads.grad_D, fd_D), _rel_error(sign * grads.grad_W, fd_W),
                           flipped)


def _central(f, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def _rel_error(analytic, fd) -> float:
    scale = np.abs(fd).max()
    diff = np.abs(analytic - fd).max()
    return float(diff / scale) if scale > 0 else float(diff)


def run_gradcheck(trials=20, seed=0, tol=1e-4, h=1e-5, corrupt=False, layout="interleaved",
                  max_redraws=100) -> GradcheckReport:
    """Check ``trials`` random instances, cycling through every kernel and ``S``.

    Instances whose active set changes under perturbation are discarded and
    redrawn.
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tol=tol)
    combos = [(k, s) for k in KERNEL_KINDS for s in (1, 2, 3)]
    start = time.perf_counter()
    while len(report.results) < trials:
        kind, S = combos[len(report.results) % len(combos)]
        result = finite_difference_check(draw_instance(rng, kind, S), h, layout, corrupt)
        if result.support_flipped:
            report.redraws += 1
            logger.info("support changed under perturbation (%s, S=%d); redrawing", kind, S)
            if report.redraws > max_redraws:
                raise RuntimeError("too many redraws")
            continue
        report.results.append(result)
    report.seconds = time.perf_counter() - start
    return report


__all__ = ["GradcheckInstance", "GradcheckResult", "GradcheckReport", "draw_instance",
           "finite_difference_check", "run_gradcheck", "FD_SOLVER"]
