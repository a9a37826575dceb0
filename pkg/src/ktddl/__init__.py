"""Kernelized task-driven dictionary learning with a joint-sparsity prior.

Pixels are coded jointly with their spatial neighbors over a dictionary that
lives in a kernel feature space; the dictionary and a linear classifier are
trained end to end by stochastic gradient descent.
"""

from .classify import EvalReport, LabeledDictionary, evaluate, predict_sdl, predict_src
from .data_io import HsiCube, LabelMap, load_cube, load_labels, split, synth_benchmark
from .estimators import (KernelDictionaryLearning, SparseRepresentationClassifier,
                         TaskDrivenDictionaryClassifier)
from .exceptions import (ConfigError, ConvergenceError, DataError, InvalidInputError, KtddlError,
                         NotPositiveDefiniteError, NumericalError, TrainingError)
from .jsc import JointSparseCode, JscProblem, SolverOptions, solve, solve_elastic_net
from .kernels import GramMatrix, KernelSpec, gram
from .task_driven import ModelPair, TrainConfig, TrainingSet, train
from .unsupervised import Dictionary, train_unsupervised

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "DataError", "Dictionary", "EvalReport", "GramMatrix",
    "HsiCube", "InvalidInputError", "JointSparseCode", "JscProblem", "KernelDictionaryLearning",
    "KernelSpec", "KtddlError", "LabelMap", "LabeledDictionary", "ModelPair",
    "NotPositiveDefiniteError", "NumericalError", "SolverOptions", "SparseRepresentationClassifier",
    "TaskDrivenDictionaryClassifier", "TrainConfig", "TrainingError", "TrainingSet", "evaluate",
    "gram", "load_cube", "load_labels", "predict_sdl", "predict_src", "solve", "solve_elastic_net",
    "split", "synth_benchmark", "train", "train_unsupervised",
]
