"""Quick built-in verification suites, runnable without pytest.

Each check re-derives expected behavior from an independent route
(central differences, exhaustive pair counting, closed forms) and
compares it against the library. ``run_all`` prints one PASS/FAIL line
per check and returns the number of failures.
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np

from . import losses, metrics, models
from . import tensor as T
from .data import gen_blob_images, load_dataset, save_dataset
from .trainer import ema_update, lambda_rampup

Check = tuple[str, bool, str]


def check_loss_gradients(instances: int = 25) -> Check:
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(instances):
        b = int(rng.integers(2, 7))
        k = int(rng.integers(2, 6))
        d = int(rng.integers(2, 9))
        labels = rng.integers(0, k, size=b)
        weights = rng.uniform(0.5, 2.0, size=k)
        teacher_p = rng.dirichlet(np.ones(k), size=b)
        teacher_f = rng.normal(size=(b, d))

        cases = [
            lambda x: losses.weighted_cross_entropy(x, labels, weights),
            lambda x: losses.consistency_mse(T.softmax(x), teacher_p),
            lambda x: losses.src_loss(x, teacher_f),
            lambda x: losses.feature_consistency_loss(x, teacher_f),
        ]
        shapes = [(b, k), (b, k), (b, d), (b, d)]
        for f, shape in zip(cases, shapes):
            err = T.finite_difference_check(f, rng.normal(size=shape))
            worst = max(worst, err)
    ok = worst <= 1e-4
    return ("loss gradients vs central differences", ok, f"max rel err {worst:.2e}")


def check_relation_algebra(batches: int = 200) -> Check:
    rng = np.random.default_rng(7)
    worst_sym = worst_norm = worst_scale = worst_perm = 0.0
    for _ in range(batches):
        b = int(rng.integers(2, 10))
        d = int(rng.integers(1, 16))
        a = rng.normal(size=(b, d))
        g = losses.gram_matrix(T.constant(a)).data
        worst_sym = max(worst_sym, np.abs(g - g.T).max())
        r = losses.relation_matrix(T.constant(a)).data
        worst_norm = max(worst_norm, np.abs(np.linalg.norm(r, axis=1) - 1).max())
        for c in (0.5, 3.7, 100.0):
            rc = losses.relation_matrix(T.constant(c * a)).data
            worst_scale = max(worst_scale, np.abs(rc - r).max())
        p = rng.permutation(b)
        rp = losses.relation_matrix(T.constant(a[p])).data
        worst_perm = max(worst_perm, np.abs(rp - r[np.ix_(p, p)]).max())
    ok = (worst_sym <= 1e-12 and worst_norm <= 1e-9
          and worst_scale <= 1e-9 and worst_perm <= 1e-12)
    return ("relation matrix algebra", ok,
            f"sym {worst_sym:.1e} norm {worst_norm:.1e} "
            f"scale {worst_scale:.1e} perm {worst_perm:.1e}")


def check_relation_loss_bruteforce(instances: int = 100) -> Check:
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(instances):
        b = int(rng.integers(2, 17))
        d = int(rng.integers(1, 33))
        a1 = rng.normal(size=(b, d))
        a2 = rng.normal(size=(b, d))
        fast = losses.src_loss(T.constant(a1), a2).item()

        def rel(a):
            g = [[sum(a[i][x] * a[j][x] for x in range(d)) for j in range(b)]
                 for i in range(b)]
            out = []
            for i in range(b):
                norm = max(math.sqrt(sum(v * v for v in g[i])), 1e-8)
                out.append([v / norm for v in g[i]])
            return out

        r1, r2 = rel(a1), rel(a2)
        slow = sum((r1[i][j] - r2[i][j]) ** 2 for i in range(b) for j in range(b)) / b
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1e-300))
    ok = worst <= 1e-10
    return ("relation loss vs pairwise double loop", ok, f"max rel err {worst:.2e}")


def check_ema_closed_form() -> Check:
    rng = np.random.default_rng(5)
    worst = 0.0
    for alpha in (0.9, 0.99):
        student = {"w": rng.normal(size=(3, 2))}
        gap = rng.normal(size=(3, 2))
        teacher = {"w": student["w"] + gap}
        for t in range(1, 1001):
            teacher = ema_update(teacher, student, alpha)
            expected = alpha ** t * gap
            worst = max(worst, np.abs(teacher["w"] - student["w"] - expected).max())
    ok = worst <= 1e-12
    return ("EMA gap closed form over 1000 steps", ok, f"max abs err {worst:.2e}")


def check_rampup() -> Check:
    t_grid = np.linspace(0, 2.0, 1000)
    values = [lambda_rampup(t * 30, 30) for t in t_grid]
    ok = (abs(lambda_rampup(0, 30) - math.exp(-5)) <= 1e-12
          and lambda_rampup(30, 30) == 1.0
          and lambda_rampup(31, 30) == 1.0
          and all(b >= a for a, b in zip(values, values[1:])))
    return ("ramp-up endpoints and monotonicity", ok, "")


def check_auc_oracle(sets: int = 50) -> Check:
    rng = np.random.default_rng(99)
    for _ in range(sets):
        n = int(rng.integers(4, 51))
        scores = rng.integers(0, 6, size=n).astype(float)  # coarse grid forces ties
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0], labels[-1] = 0, 1
        wins = ties = 0
        for i in range(n):
            for j in range(n):
                if labels[i] == 1 and labels[j] == 0:
                    wins += scores[i] > scores[j]
                    ties += scores[i] == scores[j]
        p, q = int(labels.sum()), int(n - labels.sum())
        expected = (wins + 0.5 * ties) / (p * q)
        got = metrics.roc_auc(scores, labels)
        if got != expected:
            return ("AUC vs exhaustive pair counting", False,
                    f"{got!r} != {expected!r}")
        if metrics.roc_auc(scores, labels) + metrics.roc_auc(-scores, labels) != 1.0:
            return ("AUC vs exhaustive pair counting", False, "complement identity broken")
    return ("AUC vs exhaustive pair counting", True, "")


def check_serialization() -> Check:
    rng = np.random.default_rng(3)
    spec = models.ArchSpec(input_shape=(5,), num_classes=3, hidden=(8,))
    params = models.init_params(spec, rng)
    ds = gen_blob_images(24, 2, 8, 1.0, rng)
    with tempfile.TemporaryDirectory() as tmp:
        p1 = Path(tmp) / "params.bin"
        models.save_params(params, p1)
        back = models.load_params(p1)
        ok1 = all(np.array_equal(params[k], back[k]) for k in params)
        p2 = Path(tmp) / "data.bin"
        save_dataset(ds, p2)
        ds2 = load_dataset(p2)
        ok2 = np.array_equal(ds.inputs, ds2.inputs) and np.array_equal(ds.labels, ds2.labels)
    return ("binary round trips", ok1 and ok2, "")


ALL_CHECKS = (
    check_loss_gradients,
    check_relation_algebra,
    check_relation_loss_bruteforce,
    check_ema_closed_form,
    check_rampup,
    check_auc_oracle,
    check_serialization,
)


def run_all(verbose: bool = True) -> int:
    failures = 0
    for check in ALL_CHECKS:
        name, ok, detail = check()
        failures += 0 if ok else 1
        if verbose:
            status = "PASS" if ok else "FAIL"
            suffix = f"  ({detail})" if detail else ""
            print(f"[{status}] {name}{suffix}")
    return failures
