"""Prediction with learned models, sparse-representation baselines, and OA/AA.

Class indices are 0-based here; label maps on disk use 1..C.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .jsc import JscProblem, SolverOptions, lipschitz_constant, solve
from .kernels import KernelSpec, gram

PRIORS = ("l1", "l12")


@dataclass(frozen=True)
class LabeledDictionary:
    """All training pixels as atoms, ``atoms`` (n, N) with ``atom_labels`` in 0..C-1."""

    atoms: np.ndarray
    atom_labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        labels = np.asarray(self.atom_labels, dtype=int)
        if atoms.ndim != 2 or labels.shape != (atoms.shape[1],):
            raise InvalidInputError("need one label per atom")
        missing = set(range(self.n_classes)) - set(labels.tolist())
        if missing:
            raise InvalidInputError(f"classes without atoms: {sorted(missing)}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "atom_labels", labels)


@dataclass
class EvalReport:
    overall_accuracy: float
    average_accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "average_accuracy": self.average_accuracy,
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in self.per_class_accuracy],
            "confusion": self.confusion.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            float(data["overall_accuracy"]),
            float(data["average_accuracy"]),
            np.array([np.nan if v is None else v for v in data["per_class_accuracy"]], dtype=float),
            np.array(data["confusion"], dtype=np.int64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(predictions, truth, n_classes=None) -> EvalReport:
    """Confusion matrix (rows = truth), overall accuracy and mean per-class recall.

    Classes that never occur in ``truth`` get a NaN recall and are left out
    of the average.
    """
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(truth, dtype=int)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InvalidInputError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise InvalidInputError("nothing to evaluate")
    C = n_classes if n_classes is not None else int(max(pred.max(), true.max())) + 1
    if min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= C:
        raise InvalidInputError("class index out of range")
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    support = confusion.sum(axis=1)
    per_class = np.full(C, np.nan)
    seen = support > 0
    per_class[seen] = np.diag(confusion)[seen] / support[seen]
    return EvalReport(
        overall_accuracy=float(np.trace(confusion) / confusion.sum()),
        average_accuracy=float(np.mean(per_class[seen])),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


def predict_sdl(model, sample_pixels, kernel: KernelSpec, lambda1, lambda2=0.0, opts=None,
                gram_DD=None, lipschitz=None):
    """Class index and score vector ``W alpha^1`` for one neighborhood."""
    D = model.dictionary.atoms
    if gram_DD is None:
        gram_DD = gram(kernel, D, D)
    problem = JscProblem.from_data(kernel, D, sample_pixels, lambda1, lambda2, gram_DD)
    code = solve(problem, opts or SolverOptions(), lipschitz=lipschitz)
    scores = model.weights @ code.center
    return int(np.argmax(scores)), scores


def predict_sdl_batch(model, neighborhoods, kernel, lambda1, lambda2=0.0, opts=None):
    """Predictions and scores for ``neighborhoods`` of shape ``(N, n, S)``."""
    D = model.dictionary.atoms
    K = gram(kernel, D, D)
    L = lipschitz_constant(K, lambda2)
    preds, scores = [], []
    for X in neighborhoods:
        p, s = predict_sdl(model, X, kernel, lambda1, lambda2, opts, K, L)
        preds.append(p)
        scores.append(s)
    return np.array(preds, dtype=int), np.array(scores).reshape(len(preds), model.n_classes)


def class_residuals(kernel: KernelSpec, dictionary: LabeledDictionary, x, alpha, gram_DD=None,
                    gram_Dx=None) -> np.ndarray:
    """Kernel residual of pixel ``x`` using only each class's coefficients."""
    D = dictionary.atoms
    K = gram(kernel, D, D) if gram_DD is None else gram_DD
    b = gram(kernel, D, x)[:, 0] if gram_Dx is None else gram_Dx
    kxx = gram(kernel, x, x)[0, 0]
    out = np.empty(dictionary.n_classes)
    for c in range(dictionary.n_classes):
        a = np.where(dictionary.atom_labels == c, alpha, 0.0)
        out[c] = kxx - 2.0 * a @ b + a @ K @ a
    return out


def predict_src(dictionary: LabeledDictionary, sample_pixels, kernel: KernelSpec, prior="l12",
                lambda1=0.01, lambda2=0.0, opts=None, gram_DD=None, lipschitz=None) -> int:
    """Sparse-representation classification of the center pixel.

    The ``"l1"`` prior codes the center pixel alone; ``"l12"`` codes the whole
    neighborhood jointly. The class with the smallest residual wins, ties
    going to the lowest index.
    """
    if prior not in PRIORS:
        raise InvalidInputError(f"prior must be one of {PRIORS}")
    X = np.asarray(sample_pixels, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if prior == "l1":
        X = X[:, :1]
    D = dictionary.atoms
    K = gram(kernel, D, D) if gram_DD is None else gram_DD
    problem = JscProblem.from_data(kernel, D, X, lambda1, lambda2, K)
    code = solve(problem, opts or SolverOptions(), lipschitz=lipschitz)
    res = class_residuals(kernel, dictionary, X[:, 0], code.center, K, problem.gram_DX[:, 0])
    return int(np.argmin(res))


def predict_src_batch(dictionary, neighborhoods, kernel, prior="l12", lambda1=0.01, lambda2=0.0,
                      opts=None) -> np.ndarray:
    K = gram(kernel, dictionary.atoms, dictionary.atoms)
    L = lipschitz_constant(K, lambda2)
    return np.array([predict_src(dictionary, X, kernel, prior, lambda1, lambda2, opts, K, L)
                     for X in neighborhoods], dtype=int)


def write_predictions_csv(path, sample_ids, truth, predictions, scores=None):
    """``sample_id,true_class,pred_class,score_1..score_C`` with 1-based classes."""
    n_scores = 0 if scores is None else np.asarray(scores).shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "true_class", "pred_class"]
                        + [f"score_{c + 1}" for c in range(n_scores)])
        for i, (sid, t, p) in enumerate(zip(sample_ids, truth, predictions)):
            row = [int(sid), int(t) + 1, int(p) + 1]
            if scores is not None:
                row += [repr(float(v)) for v in scores[i]]
            writer.writerow(row)
