"""End-to-end acceptance checks, one test per criterion.

Each test logs a PASS/FAIL line through the ``acceptance_log`` fixture; the
lines are repeated in the terminal summary.
"""

import hashlib
import json
import os
import time

import numpy as np
import pytest

from ktddl import cli, data_io
from ktddl.classify import evaluate
from ktddl.gradcheck import run_gradcheck
from ktddl.jsc import JscProblem, SolverOptions, active_set, check_optimality, solve
from ktddl.kernels import KernelSpec, gram
from ktddl.task_driven import assemble_delta, beta_system
from oracles import bcd_joint_sparse
from test_task_driven import run_reduction

KINDS = ("linear", "gaussian", "polynomial")

SYNTH = dict(C=3, n=20, noise_sigma=0.25, train=200, test=600, seeds=range(5))
# Fixed hyperparameters for the synthetic benchmark; values taken from the
# cross-validation grids, T = 5 passes over the training set.
SYNTH_PARAMS = dict(lambda1=0.1, nu=1e-6, rho=0.1, T=1000)


def criterion_1():
    report = run_gradcheck(trials=24, seed=0, tol=1e-4)
    return report, report.to_dict()["results"]


def test_criterion_1_gradient_fidelity(acceptance_log):
    report, _ = criterion_1()
    kinds = {r.kind for r in report.results}
    ok = report.passed and len(report.results) >= 20 and kinds == set(KINDS) and report.seconds < 60
    acceptance_log(1, ok, f"{len(report.results)} configs, worst rel. error {report.worst:.2e} "
                          f"(< 1e-4), {report.redraws} redraws, {report.seconds:.1f}s (< 60s)")
    assert ok


def _jsc_instance(rng):
    spec = KernelSpec(KINDS[rng.integers(3)], sigma=float(rng.uniform(0.5, 2.0)),
                      degree=int(rng.integers(2, 4)))
    n = int(rng.integers(3, 9))
    d = int(rng.integers(1, 9))
    S = int(rng.integers(1, 5))
    D = rng.normal(size=(n, d))
    D /= np.linalg.norm(D, axis=0)
    X = rng.normal(size=(n, S))
    X /= np.linalg.norm(X, axis=0)
    B = gram(spec, D, X)
    lam1 = float(rng.uniform(0.02, 0.8)) * np.linalg.norm(B, axis=1).max()
    # lambda2 = 0 only where the Gram block is well conditioned, so the minimizer is unique
    K = gram(spec, D, D)
    well_posed = np.linalg.eigvalsh(K)[0] > 1e-3
    lam2 = 0.0 if (well_posed and rng.random() < 0.3) else float(rng.uniform(1e-3, 0.1))
    return JscProblem.from_data(spec, D, X, lam1, lam2, K)


def criterion_2(n_instances=200):
    rng = np.random.default_rng(2)
    opts = SolverOptions()
    kkts, diffs, codes = [], [], []
    for _ in range(n_instances):
        p = _jsc_instance(rng)
        code = solve(p, opts)
        ref = bcd_joint_sparse(p.gram_DD, p.gram_DX, p.lambda1, p.lambda2)
        kkts.append(check_optimality(p, code.A))
        diffs.append(float(np.abs(code.A - ref).max()))
        codes.append(code.A)
    return np.array(kkts), np.array(diffs), codes


def test_criterion_2_sparse_coding_optimality(acceptance_log):
    start = time.perf_counter()
    kkts, diffs, _ = criterion_2()
    elapsed = time.perf_counter() - start
    ok = kkts.max() <= 1e-6 and diffs.max() < 1e-5 and elapsed < 120
    acceptance_log(2, ok, f"200 instances, max KKT {kkts.max():.2e} (<= 1e-6), "
                          f"max |dA| {diffs.max():.2e} (< 1e-5), {elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_3_reduction_bit_match(acceptance_log):
    ours, ref = run_reduction(T=100)
    first_diff = next((t for t, (a, b) in enumerate(zip(ours, ref), start=1)
                       if not (np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]))), None)
    ok = len(ours) == len(ref) == 100 and first_diff is None
    acceptance_log(3, ok, "100 SGD iterations bit-identical to the direct linear trainer"
                   if ok else f"first mismatch at iteration {first_diff}")
    assert ok


def criterion_4(n=100, lambda2=1e-3):
    rng = np.random.default_rng(4)
    eigs = []
    while len(eigs) < n:
        p = _jsc_instance(rng)
        p = JscProblem(p.gram_DD, p.gram_DX, p.kxx, p.lambda1, lambda2)
        code = solve(p)
        support = active_set(code.A)
        if support.size == 0:
            continue
        M = beta_system(p.gram_DD[np.ix_(support, support)], assemble_delta(code.A[support]),
                        p.lambda1, lambda2, p.n_pixels)
        eigs.append(float(np.linalg.eigvalsh(M)[0]))
    return np.array(eigs)


def test_criterion_4_positive_definite(acceptance_log):
    eigs = criterion_4()
    ok = eigs.size == 100 and eigs.min() > 0
    acceptance_log(4, ok, f"100 systems with lambda2 = 1e-3, min eigenvalue {eigs.min():.3e} (> 0)")
    assert ok


def _synthetic_run(method, seed):
    cube, labels = data_io.synth_benchmark(SYNTH["C"], SYNTH["n"], 300, SYNTH["noise_sigma"], seed=seed)
    train, test = data_io.split(labels, seed=seed, train_size=SYNTH["train"], test_size=SYNTH["test"])
    cfg = cli.RunConfig(method=method, seed=seed, **SYNTH_PARAMS).resolved()
    y = labels.values.ravel() - 1

    def hoods(ids):
        return np.transpose(data_io.extract_neighborhoods(cube, ids, cfg.S), (0, 2, 1))

    est = cli.build_estimator(cfg, seed).fit(hoods(train), y[train])
    X_test = hoods(test)
    pred_init = est.predict(X_test, use_init=True)
    pred = est.predict(X_test)
    digest = hashlib.sha256()
    for arr in (est.init_model_.dictionary.atoms, est.init_model_.weights, est.dictionary_,
                est.coef_, pred_init, pred):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return (evaluate(pred_init, y[test], 3).overall_accuracy,
            evaluate(pred, y[test], 3).overall_accuracy, digest.hexdigest())


def criterion_5():
    return {m: [_synthetic_run(m, s) for s in SYNTH["seeds"]] for m in ("SDL-l12-k", "SDL-l1-l")}


@pytest.fixture(scope="module")
def synthetic_results():
    start = time.perf_counter()
    runs = criterion_5()
    return runs, time.perf_counter() - start


def test_criterion_5a_method_ordering(synthetic_results, acceptance_log):
    runs, elapsed = synthetic_results
    joint = np.mean([r[1] for r in runs["SDL-l12-k"]])
    single = np.mean([r[1] for r in runs["SDL-l1-l"]])
    ok = joint >= single and elapsed < 600
    acceptance_log("5a", ok, f"mean OA SDL-l12-k {joint:.4f} >= SDL-l1-l {single:.4f}; "
                             f"both methods, 5 seeds in {elapsed:.0f}s (< 600s)")
    assert ok


def test_criterion_5b_training_improves_on_initialization(synthetic_results, acceptance_log):
    runs, _ = synthetic_results
    parts, ok = [], True
    for method, res in runs.items():
        pairs = " ".join(f"{init:.3f}->{trained:.3f}" for init, trained, _ in res)
        better = [trained > init for init, trained, _ in res]
        ok &= all(better)
        parts.append(f"{method} init->trained OA {pairs} ({sum(better)}/5 strict)")
    acceptance_log("5b", ok, "; ".join(parts))
    assert ok


def _data_paths(prefix):
    cube, labels = os.environ.get(f"{prefix}_CUBE"), os.environ.get(f"{prefix}_LABELS")
    return (cube, labels) if cube and labels else None


@pytest.mark.parametrize("name, prefix, target, drop, fraction", [
    ("Indian Pines", "KTDDL_INDIAN_PINES", 87.56, data_io.INDIAN_PINES_WATER_BANDS, 0.1064),
    ("Pavia University", "KTDDL_PAVIA", 86.07, None, 0.1064),
])
def test_criterion_6_reference_numbers(name, prefix, target, drop, fraction, acceptance_log, tmp_path):
    """Non-binding: only runs when converted datasets are supplied through the environment."""
    paths = _data_paths(prefix)
    if paths is None:
        acceptance_log(6, "SKIP", f"{name}: set {prefix}_CUBE and {prefix}_LABELS to run (non-binding)")
        pytest.skip("user-supplied dataset not available")
    if drop is None:
        drop = [int(b) for b in os.environ.get(f"{prefix}_BAND_DROP", "").split(",") if b.strip()]
    args = ["eval", "--cube", paths[0], "--labels", paths[1], "--method", "SDL-l12-k",
            "--train-fraction", str(fraction), "--out", str(tmp_path)]
    if drop:
        args += ["--band-drop", ",".join(map(str, drop))]
    assert cli.main(args) == 0
    oa = 100 * json.loads((tmp_path / "report.json").read_text())["overall_accuracy"]
    within = abs(oa - target) <= 3.0
    acceptance_log(6, "PASS" if within else "OUTSIDE SOFT TARGET",
                   f"{name}: OA {oa:.2f} vs reference {target:.2f} (delta {oa - target:+.2f}; non-binding)")


def test_criterion_7_determinism(synthetic_results, acceptance_log):
    runs, _ = synthetic_results
    r1a, r1b = criterion_1()[1], criterion_1()[1]
    k2a, d2a, c2a = criterion_2()
    k2b, d2b, c2b = criterion_2()
    o3a, f3a = run_reduction(T=100)
    o3b, f3b = run_reduction(T=100)
    same = {
        1: r1a == r1b,
        2: np.array_equal(k2a, k2b) and np.array_equal(d2a, d2b)
           and all(np.array_equal(a, b) for a, b in zip(c2a, c2b)),
        3: all(np.array_equal(x, y) for pa, pb in zip(o3a + f3a, o3b + f3b) for x, y in zip(pa, pb)),
        4: np.array_equal(criterion_4(), criterion_4()),
        5: criterion_5() == runs,
    }
    ok = all(same.values())
    acceptance_log(7, ok, "second run bit-identical for criteria "
                   + ", ".join(f"{k}:{'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok
