"""scikit-learn compatible estimators.

Inputs follow the scikit-learn convention of one sample per row:

* pixels: ``(n_samples, n_features)``;
* neighborhoods: ``(n_samples, S, n_features)`` with the center pixel at
  index 0 along the second axis. A 2-d array is read as ``S = 1``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from . import classify
from .exceptions import InvalidInputError
from .jsc import JscProblem, SolverOptions, lipschitz_constant, solve
from .kernels import KernelSpec, gram
from .task_driven import ModelPair, TrainConfig, TrainingSet, train
from .unsupervised import init_classifier, init_dictionary, train_unsupervised


def check_neighborhoods(X, n_features=None) -> np.ndarray:
    """Validate neighborhoods and return them as ``(N, n, S)`` float columns."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"expected a 2-d or 3-d array, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0 or X.shape[2] == 0:
        raise ValueError(f"empty input of shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"X has {X.shape[2]} features, but the estimator was fitted with {n_features}")
    return np.ascontiguousarray(np.transpose(X, (0, 2, 1)))


def _seeds(random_state, n):
    if random_state is None:
        random_state = 0
    if isinstance(random_state, np.random.RandomState):
        random_state = int(random_state.randint(2**31 - 1))
    children = np.random.SeedSequence(int(random_state)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


class _KernelParamsMixin:
    def _kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, sigma=self.sigma, degree=self.degree)

    def _solver_options(self) -> SolverOptions:
        return SolverOptions(max_iters=self.max_solver_iter, kkt_tol=self.kkt_tol,
                             active_tol=self.active_tol)


class KernelDictionaryLearning(_KernelParamsMixin, TransformerMixin, BaseEstimator):
    """Unsupervised kernel dictionary learning by projected SGD.

    Parameters
    ----------
    n_components : int
        Number of atoms.
    kernel : {"linear", "gaussian", "polynomial"}, default="gaussian"
    sigma, degree : kernel parameters
    lambda1, lambda2 : float
        Elastic-net coding penalties.
    rho, t0 : float
        Learning rate ``min(rho, rho * t0 / t)``; ``t0=None`` means ``max_iter / 10``.
    max_iter : int or None
        SGD steps; ``None`` means ``5 * n_samples``.
    random_state : int, default=0

    Attributes
    ----------
    dictionary_ : Dictionary
    components_ : ndarray of shape (n_components, n_features)
    """

    def __init__(self, n_components=10, kernel="gaussian", sigma=1.0, degree=2, lambda1=0.01,
                 lambda2=0.0, rho=0.1, t0=None, max_iter=None, max_solver_iter=10000,
                 kkt_tol=1e-6, active_tol=1e-6, random_state=0):
        self.n_components = n_components
        self.kernel = kernel
        self.sigma = sigma
        self.degree = degree
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.rho = rho
        self.t0 = t0
        self.max_iter = max_iter
        self.max_solver_iter = max_solver_iter
        self.kkt_tol = kkt_tol
        self.active_tol = active_tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_neighborhoods(X)[:, :, 0].T
        self.n_features_in_ = X.shape[0]
        T = self.max_iter if self.max_iter is not None else 5 * X.shape[1]
        init_seed, draw_seed = _seeds(self.random_state, 2)
        init = init_dictionary(X, self.n_components, init_seed)
        self.dictionary_ = train_unsupervised(
            X, self.n_components, self.lambda1, self.lambda2, self.rho, self.t0, T,
            self._kernel_spec(), draw_seed, self._solver_options(), init=init)
        self.components_ = self.dictionary_.atoms.T.copy()
        return self

    def transform(self, X):
        """Elastic-net codes of each pixel, shape ``(n_samples, n_components)``."""
        check_is_fitted(self, "dictionary_")
        X = check_neighborhoods(X, self.n_features_in_)
        return _center_codes(self.dictionary_.atoms, X[:, :, :1], self._kernel_spec(),
                             self.lambda1, self.lambda2, self._solver_options())


def _center_codes(D, neighborhoods, kernel, lambda1, lambda2, opts):
    K = gram(kernel, D, D)
    L = lipschitz_constant(K, lambda2)
    out = np.empty((neighborhoods.shape[0], D.shape[1]))
    for i, X in enumerate(neighborhoods):
        problem = JscProblem.from_data(kernel, D, X, lambda1, lambda2, K)
        out[i] = solve(problem, opts, lipschitz=L).center
    return out


class TaskDrivenDictionaryClassifier(_KernelParamsMixin, ClassifierMixin, BaseEstimator):
    """Kernelized task-driven dictionary learning classifier.

    Fitting runs three stages: unsupervised dictionary learning on the center
    pixels, a ridge fit of the linear classifier on the resulting codes, and
    task-driven SGD on ``(D, W)`` over labeled neighborhoods.

    Parameters
    ----------
    n_atoms_per_class : int, default=5
    kernel : {"linear", "gaussian", "polynomial"}, default="gaussian"
    sigma : float, default=1.0
    degree : int, default=2
    lambda1, lambda2 : float
        Joint sparse coding penalties. ``lambda2=0`` turns on a tiny diagonal
        shift in the gradient system.
    nu : float
        Ridge penalty on the classifier.
    rho, t0 : float
        Task-driven learning rate ``min(rho, rho * t0 / t)``; ``t0=None`` means
        ``max_iter / 10``.
    max_iter : int or None
        Task-driven SGD steps; ``None`` means ``20 * n_samples``. ``0`` keeps
        the initialization.
    unsup_rho, unsup_t0, unsup_max_iter :
        Same for the unsupervised stage; ``unsup_max_iter=None`` means
        ``5 * n_samples``.
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray
    model_ : ModelPair
        Trained dictionary and classifier.
    init_model_ : ModelPair
        The initialization the SGD started from.
    dictionary_ : ndarray of shape (n_features, n_atoms)
    coef_ : ndarray of shape (n_classes, n_atoms)
    """

    def __init__(self, n_atoms_per_class=5, kernel="gaussian", sigma=1.0, degree=2,
                 lambda1=0.01, lambda2=0.0, nu=1e-6, rho=0.1, t0=None, max_iter=None,
                 unsup_rho=0.1, unsup_t0=None, unsup_max_iter=None, max_solver_iter=10000,
                 kkt_tol=1e-6, active_tol=1e-6, random_state=0):
        self.n_atoms_per_class = n_atoms_per_class
        self.kernel = kernel
        self.sigma = sigma
        self.degree = degree
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.nu = nu
        self.rho = rho
        self.t0 = t0
        self.max_iter = max_iter
        self.unsup_rho = unsup_rho
        self.unsup_t0 = unsup_t0
        self.unsup_max_iter = unsup_max_iter
        self.max_solver_iter = max_solver_iter
        self.kkt_tol = kkt_tol
        self.active_tol = active_tol
        self.random_state = random_state

    def train_config(self, n_samples, S, seed=0) -> TrainConfig:
        T = self.max_iter if self.max_iter is not None else 20 * n_samples
        return TrainConfig(lambda1=self.lambda1, lambda2=self.lambda2, nu=self.nu, rho=self.rho,
                           t0=self.t0, T=T, S=S, kernel=self._kernel_spec(), seed=seed,
                           solver=self._solver_options())

    def fit(self, X, y):
        Xn = check_neighborhoods(X)
        check_classification_targets(y)
        y = np.asarray(y)
        if y.shape != (Xn.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({Xn.shape[0]},)")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        labels = self._encoder.transform(y)
        N, n, S = Xn.shape
        self.n_features_in_ = n
        self.n_neighbors_ = S
        C = self.classes_.size
        d = self.n_atoms_per_class * C
        if d > N:
            raise InvalidInputError(f"{d} atoms requested but only {N} training samples")
        init_seed, unsup_seed, task_seed = _seeds(self.random_state, 3)
        kernel = self._kernel_spec()
        opts = self._solver_options()
        data = TrainingSet(Xn, labels, C)

        centers = data.centers
        T_unsup = self.unsup_max_iter if self.unsup_max_iter is not None else 5 * N
        dictionary = init_dictionary(centers, d, init_seed)
        if T_unsup > 0:
            dictionary = train_unsupervised(centers, d, self.lambda1, self.lambda2, self.unsup_rho,
                                            self.unsup_t0, T_unsup, kernel, unsup_seed, opts,
                                            init=dictionary)
        codes = _center_codes(dictionary.atoms, Xn, kernel, self.lambda1, self.lambda2, opts)
        W = init_classifier(codes.T, np.eye(C)[labels].T, self.nu)
        self.init_model_ = ModelPair(dictionary, W)

        config = self.train_config(N, S, task_seed)
        self.train_config_ = config
        self.model_ = train(data, self.init_model_, config) if config.T > 0 else self.init_model_
        self.dictionary_ = np.array(self.model_.dictionary.atoms)
        self.coef_ = np.array(self.model_.weights)
        return self

    def _model(self, use_init):
        check_is_fitted(self, "model_")
        return self.init_model_ if use_init else self.model_

    def transform(self, X, use_init=False):
        """Center-pixel sparse codes, shape ``(n_samples, n_atoms)``."""
        model = self._model(use_init)
        Xn = check_neighborhoods(X, self.n_features_in_)
        return _center_codes(model.dictionary.atoms, Xn, self._kernel_spec(), self.lambda1,
                             self.lambda2, self._solver_options())

    def decision_function(self, X, use_init=False):
        """Class scores ``W alpha^1``, shape ``(n_samples, n_classes)``."""
        model = self._model(use_init)
        return self.transform(X, use_init) @ model.weights.T

    def predict(self, X, use_init=False):
        scores = self.decision_function(X, use_init)
        return self.classes_[np.argmax(scores, axis=1)]


class SparseRepresentationClassifier(_KernelParamsMixin, ClassifierMixin, BaseEstimator):
    """Sparse-representation classifier over a dictionary of all training pixels.

    Parameters
    ----------
    prior : {"l1", "l12"}, default="l12"
        ``"l1"`` codes the center pixel alone, ``"l12"`` the whole
        neighborhood jointly.
    kernel, sigma, degree, lambda1, lambda2 :
        As in :class:`TaskDrivenDictionaryClassifier`.
    """

    def __init__(self, prior="l12", kernel="gaussian", sigma=1.0, degree=2, lambda1=0.01,
                 lambda2=0.0, max_solver_iter=10000, kkt_tol=1e-6, active_tol=1e-6):
        self.prior = prior
        self.kernel = kernel
        self.sigma = sigma
        self.degree = degree
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.max_solver_iter = max_solver_iter
        self.kkt_tol = kkt_tol
        self.active_tol = active_tol

    def fit(self, X, y):
        Xn = check_neighborhoods(X)
        check_classification_targets(y)
        if self.prior not in classify.PRIORS:
            raise ValueError(f"prior must be one of {classify.PRIORS}")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        self.n_features_in_ = Xn.shape[1]
        self.dictionary_ = classify.LabeledDictionary(
            Xn[:, :, 0].T, self._encoder.transform(y), self.classes_.size)
        return self

    def predict(self, X):
        check_is_fitted(self, "dictionary_")
        Xn = check_neighborhoods(X, self.n_features_in_)
        idx = classify.predict_src_batch(self.dictionary_, Xn, self._kernel_spec(), self.prior,
                                         self.lambda1, self.lambda2, self._solver_options())
        return self.classes_[idx]

