"""Command-line front-end: ``ktddl {train,eval,cv,gradcheck,synth}``.

Every command reads an optional flat JSON config (``--config``); flags
override config keys. The effective configuration is echoed next to the
outputs so a run can be repeated from it.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.model_selection import GridSearchCV, StratifiedKFold

from . import classify, data_io, model_io
from .estimators import SparseRepresentationClassifier, TaskDrivenDictionaryClassifier, _seeds
from .exceptions import (ConfigError, DataError, InvalidInputError, KtddlError, NumericalError,
                         TrainingError)
from .gradcheck import run_gradcheck
from .jsc import SolverOptions
from .kernels import KernelSpec

logger = logging.getLogger("ktddl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_LAMBDA1_GRID = (0.001, 0.01, 0.1)
DEFAULT_NU_GRID = tuple(10.0 ** -k for k in range(8, 0, -1))
DEFAULT_SIGMA_GRID = tuple(0.5 * k for k in range(1, 11))

_METHOD_RE = re.compile(r"^(SDL|SRC)-(l1|l12)-(l|k)$", re.IGNORECASE)


@dataclass(frozen=True)
class Method:
    family: str
    prior: str
    kernelized: bool

    @classmethod
    def parse(cls, tag: str) -> "Method":
        m = _METHOD_RE.match(tag.replace("ℓ", "l"))
        if not m:
            raise ConfigError(f"unknown method {tag!r}; expected e.g. SDL-l12-k or SRC-l1-l")
        return cls(m.group(1).upper(), m.group(2).lower(), m.group(3).lower() == "k")

    def __str__(self):
        return f"{self.family}-{self.prior}-{'k' if self.kernelized else 'l'}"


@dataclass(frozen=True)
class RunConfig:
    method: str = "SDL-l12-k"
    cube: str | None = None
    labels: str | None = None
    band_drop: tuple = ()
    train_fraction: float = 0.1
    train_size: int | None = None
    test_size: int | None = None
    atoms_per_class: int = 5
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("gaussian"))
    S: int | None = None
    lambda1: float = 0.01
    lambda2: float = 0.0
    nu: float = 1e-6
    rho: float = 0.1
    t0: float | None = None
    T: int | None = None
    unsup_rho: float = 0.1
    unsup_t0: float | None = None
    unsup_T: int | None = None
    max_solver_iter: int = 10000
    kkt_tol: float = 1e-6
    active_tol: float = 1e-6
    seed: int = 0
    out: str = "."
    model: str | None = None
    folds: int = 5
    n_jobs: int = -1
    lambda1_grid: tuple = DEFAULT_LAMBDA1_GRID
    nu_grid: tuple = DEFAULT_NU_GRID
    sigma_grid: tuple = DEFAULT_SIGMA_GRID
    trials: int = 20
    tol: float = 1e-4
    C: int = 3
    n_bands: int = 20
    pixels_per_class: int = 300
    noise_sigma: float = 0.1

    def __post_init__(self):
        for name in ("band_drop", "lambda1_grid", "nu_grid", "sigma_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if isinstance(self.kernel, dict):
            object.__setattr__(self, "kernel", KernelSpec.from_dict(self.kernel))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["kernel"] = self.kernel.to_dict()
        for name in ("band_drop", "lambda1_grid", "nu_grid", "sigma_grid"):
            out[name] = list(out[name])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def parsed_method(self) -> Method:
        return Method.parse(self.method)

    def resolved(self) -> "RunConfig":
        """Apply the method tag: ``l1`` forces ``S = 1``, ``-l`` forces the linear kernel."""
        m = self.parsed_method
        S = 1 if m.prior == "l1" else (self.S if self.S is not None else 9)
        if S < 1:
            raise ConfigError("S must be >= 1")
        kernel = self.kernel
        if not m.kernelized:
            kernel = KernelSpec("linear")
        elif kernel.kind == "linear":
            raise ConfigError(f"method {m} needs a nonlinear kernel")
        return dataclasses.replace(self, method=str(m), S=S, kernel=kernel)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(data)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Data:
    """Loaded cube, split and neighborhoods for one run."""

    def __init__(self, cfg: RunConfig, split_seed: int):
        if cfg.cube is None or cfg.labels is None:
            raise ConfigError("both cube and labels paths are required")
        try:
            self.cube = data_io.load_cube(cfg.cube, cfg.band_drop)
            self.labels = data_io.load_labels(cfg.labels)
            data_io.check_pair(self.cube, self.labels)
        except (OSError, InvalidInputError) as exc:
            raise DataError(str(exc)) from exc
        self.n_classes = int(self.labels.values.max())
        self.train_ids, self.test_ids = data_io.split(
            self.labels, cfg.train_fraction, split_seed, cfg.train_size, cfg.test_size)
        flat = self.labels.values.ravel()
        self.y_train = flat[self.train_ids] - 1
        self.y_test = flat[self.test_ids] - 1
        self.S = cfg.S

    def neighborhoods(self, ids):
        # estimators take (N, S, n)
        return np.transpose(data_io.extract_neighborhoods(self.cube, ids, self.S), (0, 2, 1))


def _stage_seeds(cfg: RunConfig):
    split_seed, fit_seed = _seeds(cfg.seed, 2)
    return split_seed, fit_seed


def build_estimator(cfg: RunConfig, random_state=0):
    m = cfg.parsed_method
    common = dict(kernel=cfg.kernel.kind, sigma=cfg.kernel.sigma, degree=cfg.kernel.degree,
                  lambda1=cfg.lambda1, lambda2=cfg.lambda2, max_solver_iter=cfg.max_solver_iter,
                  kkt_tol=cfg.kkt_tol, active_tol=cfg.active_tol)
    if m.family == "SRC":
        return SparseRepresentationClassifier(prior=m.prior, **common)
    return TaskDrivenDictionaryClassifier(
        n_atoms_per_class=cfg.atoms_per_class, nu=cfg.nu, rho=cfg.rho, t0=cfg.t0, max_iter=cfg.T,
        unsup_rho=cfg.unsup_rho, unsup_t0=cfg.unsup_t0, unsup_max_iter=cfg.unsup_T,
        random_state=random_state, **common)


def dictionary_size(cfg: RunConfig, n_classes: int) -> int:
    return cfg.atoms_per_class * n_classes


def format_table(method: str, report: classify.EvalReport) -> str:
    """Per-class accuracies then OA and AA, all in percent."""
    lines = [f"{'Class':<8}{method:>12}"]
    for c, acc in enumerate(report.per_class_accuracy, start=1):
        lines.append(f"{c:<8}{'n/a' if np.isnan(acc) else f'{100 * acc:.2f}':>12}")
    lines.append(f"{'OA':<8}{100 * report.overall_accuracy:>12.2f}")
    lines.append(f"{'AA':<8}{100 * report.average_accuracy:>12.2f}")
    return "\n".join(lines)


def _fit_sdl(cfg: RunConfig, data: _Data, fit_seed: int):
    est = build_estimator(cfg, fit_seed)
    est.fit(data.neighborhoods(data.train_ids), data.y_train)
    return est


def cmd_train(cfg: RunConfig) -> int:
    if cfg.parsed_method.family != "SDL":
        raise ConfigError("SRC methods have no training stage; run `eval` directly")
    split_seed, fit_seed = _stage_seeds(cfg)
    data = _Data(cfg, split_seed)
    est = _fit_sdl(cfg, data, fit_seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    C = data.n_classes
    meta = {"config": cfg.to_dict(), "train_config": est.train_config_.to_dict(),
            "n_classes": C, "d": dictionary_size(cfg, C)}
    model_io.save_model(out / "model.bin", est.model_, meta)
    model_io.write_train_log(out / "train_log.csv", est.model_.train_log)
    _write_json(out / "config.json", cfg.to_dict())
    print(f"trained {cfg.method}: d={dictionary_size(cfg, C)}, T={est.train_config_.T}, "
          f"N_train={data.train_ids.size} -> {out / 'model.bin'}")
    return EXIT_OK


def _check_compatible(cfg: RunConfig, trained: dict):
    current = cfg.to_dict()
    for key in ("kernel", "lambda1", "lambda2", "S"):
        if key in trained and trained[key] != current[key]:
            raise ConfigError(f"model was trained with {key}={trained[key]!r}, "
                              f"run uses {current[key]!r}")


def cmd_eval(cfg: RunConfig) -> int:
    split_seed, fit_seed = _stage_seeds(cfg)
    data = _Data(cfg, split_seed)
    m = cfg.parsed_method
    X_test = data.neighborhoods(data.test_ids)
    scores = None
    if m.family == "SRC":
        est = build_estimator(cfg).fit(data.neighborhoods(data.train_ids), data.y_train)
        pred = est.predict(X_test)
    elif cfg.model is not None:
        model, meta = model_io.load_model(cfg.model)
        _check_compatible(cfg, meta.get("config", {}))
        if model.dictionary.n_features != data.cube.bands:
            raise DataError(f"model has {model.dictionary.n_features} bands, data has {data.cube.bands}")
        if model.n_classes != data.n_classes:
            raise DataError(f"model has {model.n_classes} classes, data has {data.n_classes}")
        pred, scores = classify.predict_sdl_batch(
            model, np.transpose(X_test, (0, 2, 1)), cfg.kernel, cfg.lambda1, cfg.lambda2,
            SolverOptions(cfg.max_solver_iter, cfg.kkt_tol, cfg.active_tol))
    else:
        est = _fit_sdl(cfg, data, fit_seed)
        scores = est.decision_function(X_test)
        pred = est.classes_[np.argmax(scores, axis=1)]
    report = classify.evaluate(pred, data.y_test, data.n_classes)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    classify.write_predictions_csv(out / "predictions.csv", data.test_ids, data.y_test, pred, scores)
    _write_json(out / "config.json", cfg.to_dict())
    print(format_table(cfg.method, report))
    return EXIT_OK


def param_grid(cfg: RunConfig) -> dict:
    m = cfg.parsed_method
    grid = {"lambda1": list(cfg.lambda1_grid)}
    if m.family == "SDL":
        grid["nu"] = list(cfg.nu_grid)
    if m.kernelized and cfg.kernel.kind == "gaussian":
        grid["sigma"] = list(cfg.sigma_grid)
    if any(len(v) == 0 for v in grid.values()):
        raise ConfigError("cross-validation grids must be non-empty")
    return grid


def select_cell(cv_results) -> int:
    """Index of the best mean score; ties go to the smallest lambda1, then nu, then sigma."""
    means = np.asarray(cv_results["mean_test_score"])
    best = means.max()

    def key(i):
        p = cv_results["params"][i]
        return (p.get("lambda1", 0.0), p.get("nu", 0.0), p.get("sigma", 0.0))

    return min(np.flatnonzero(means == best), key=key)


def cmd_cv(cfg: RunConfig) -> int:
    split_seed, fit_seed = _stage_seeds(cfg)
    data = _Data(cfg, split_seed)
    counts = np.bincount(data.y_train, minlength=data.n_classes)
    if counts.min() < cfg.folds:
        raise ConfigError(f"class {int(counts.argmin()) + 1} has {counts.min()} training pixels, "
                          f"fewer than {cfg.folds} folds; use fewer folds")
    grid = param_grid(cfg)
    folds = StratifiedKFold(cfg.folds, shuffle=True, random_state=split_seed % 2**32)
    search = GridSearchCV(build_estimator(cfg, fit_seed), grid, scoring="accuracy", cv=folds,
                          refit=select_cell, n_jobs=cfg.n_jobs, error_score="raise")
    search.fit(data.neighborhoods(data.train_ids), data.y_train)
    res = search.cv_results_
    cells = [{"params": res["params"][i], "mean_oa": float(res["mean_test_score"][i]),
              "std_oa": float(res["std_test_score"][i])} for i in range(len(res["params"]))]
    best = cells[search.best_index_]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "cv.json", {"method": cfg.method, "folds": cfg.folds, "n_cells": len(cells),
                                  "best": best, "cells": cells})
    _write_json(out / "config.json", cfg.to_dict())
    print(f"{len(cells)} cells, {cfg.folds} folds; best {best['params']} "
          f"OA {100 * best['mean_oa']:.2f} +/- {100 * best['std_oa']:.2f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, corrupt=False) -> int:
    if cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    report = run_gradcheck(cfg.trials, cfg.seed, cfg.tol, corrupt=corrupt)
    for i, r in enumerate(report.results, start=1):
        print(f"trial {i:3d} {r.kind:<10} S={r.S} n={r.n} d={r.d} C={r.C} |active|={r.active_count} "
              f"rel_err={r.max_rel_error:.2e} {'ok' if r.max_rel_error < cfg.tol else 'FAIL'}")
    print(f"{'PASS' if report.passed else 'FAIL'}: worst {report.worst:.2e} (tol {cfg.tol:g}), "
          f"{report.redraws} redraws")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "gradcheck.json", {k: v for k, v in report.to_dict().items() if k != "seconds"})
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_synth(cfg: RunConfig) -> int:
    cube, labels = data_io.synth_benchmark(cfg.C, cfg.n_bands, cfg.pixels_per_class,
                                           cfg.noise_sigma, seed=cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cube_path = Path(cfg.cube) if cfg.cube else out / "synth.cube"
    label_path = Path(cfg.labels) if cfg.labels else out / "synth.labels"
    data_io.write_cube(cube_path, cube)
    data_io.write_labels(label_path, labels)
    print(f"wrote {cube.height}x{cube.width}x{cube.bands} cube to {cube_path} and labels to {label_path}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "cv": cmd_cv, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth}


def _list_of(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ktddl", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--cube")
    data.add_argument("--labels")
    data.add_argument("--band-drop", dest="band_drop", type=_list_of(int))
    data.add_argument("--train-fraction", dest="train_fraction", type=float)
    data.add_argument("--train-size", dest="train_size", type=int)
    data.add_argument("--test-size", dest="test_size", type=int)
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--method", help="SDL|SRC - l1|l12 - l|k, e.g. SDL-l12-k")
    model.add_argument("--kernel", choices=["linear", "gaussian", "polynomial"])
    model.add_argument("--sigma", type=float)
    model.add_argument("--degree", type=int)
    model.add_argument("--S", "--neighbors", dest="S", type=int)
    model.add_argument("--atoms-per-class", dest="atoms_per_class", type=int)
    for name in ("lambda1", "lambda2", "nu", "rho", "t0", "unsup_rho", "unsup_t0"):
        model.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    model.add_argument("--T", dest="T", type=int)
    model.add_argument("--unsup-T", dest="unsup_T", type=int)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common, data, model], help="fit an SDL model")
    p = sub.add_parser("eval", parents=[common, data, model], help="evaluate on the test split")
    p.add_argument("--model", help="trained model.bin; omitted means fit first")
    p = sub.add_parser("cv", parents=[common, data, model], help="grid-search cross-validation")
    p.add_argument("--folds", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--lambda1-grid", dest="lambda1_grid", type=_list_of(float))
    p.add_argument("--nu-grid", dest="nu_grid", type=_list_of(float))
    p.add_argument("--sigma-grid", dest="sigma_grid", type=_list_of(float))
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic cube and label map")
    p.add_argument("--cube")
    p.add_argument("--labels")
    p.add_argument("--C", dest="C", type=int)
    p.add_argument("--n-bands", dest="n_bands", type=int)
    p.add_argument("--pixels-per-class", dest="pixels_per_class", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "corrupt", "kernel", "sigma", "degree"}


def config_from_args(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    kernel = base.kernel.to_dict()
    for key, name in (("kind", "kernel"), ("sigma", "sigma"), ("degree", "degree")):
        if getattr(args, name, None) is not None:
            kernel[key] = getattr(args, name)
    overrides["kernel"] = kernel
    return RunConfig.from_dict({**base.to_dict(), **overrides})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command in ("train", "eval", "cv"):
            cfg = cfg.resolved()
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, corrupt=args.corrupt)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"numerical failure in {exc.stage} stage at iteration {exc.iteration}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KtddlError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
