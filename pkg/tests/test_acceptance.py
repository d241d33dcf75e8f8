"""Acceptance criteria, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL: ...`` line (also repeated
in the terminal summary) and asserts at the stated tolerance.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, group_aware_violations, random_instance
from fairflip.core import demographic_parity, equalized_odds, estimate_priors
from fairflip.metrics import composite, empirical_group_functions, evaluate
from fairflip.oracle import LpInstance, brute_force, instance_from_scores, solve_dual, solve_primal
from fairflip.scores import bias_scores, corrupt
from fairflip.search import Bookkeeper, fit_directions, fit_line_pairs, fit_threshold, threshold_sweep
from fairflip.synth import default_spec, fit_joint_model, predict_probs, sample, true_posteriors
from test_synth import relative_gradient_error


def record(k: int, ok: bool, detail: str) -> None:
    line = f"[criterion {k}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def test_criterion_01_update_identities():
    worst_acc = worst_disp = 0.0
    for i in range(100):
        r = np.random.default_rng(1000 + i)
        data, crit, _, sc = random_instance(r, 200, "dp" if i % 2 == 0 else "eo")
        flips = r.uniform(size=200) < r.uniform(0.05, 0.6)
        pred = np.where(flips, 1 - sc.yhat, sc.yhat)
        base, after = composite(sc.yhat, data, crit), composite(pred, data, crit)
        agree = (sc.yhat == data.labels).astype(float)
        acc_pred = base.accuracy + np.sum(flips * (1 - 2 * agree)) / 200
        F = empirical_group_functions(sc.yhat, data, crit)
        disp_pred = np.array(base.disparities) - flips.astype(float) @ F / 200
        worst_acc = max(worst_acc, abs(after.accuracy - acc_pred))
        worst_disp = max(worst_disp, float(np.max(np.abs(np.array(after.disparities) - disp_pred))))
    ok = worst_acc <= 1e-12 and worst_disp <= 1e-12
    record(1, ok, f"max accuracy identity error {worst_acc:.2e}, max disparity identity error {worst_disp:.2e} (tol 1e-12)")


def test_criterion_02_sweep_equivalence():
    mismatches = checked = 0
    for i in range(50):
        r = np.random.default_rng(2000 + i)
        data, crit, _, sc = random_instance(r, 200, "dp" if i % 2 == 0 else "eo")
        book = Bookkeeper(sc.yhat, data, crit)
        w = r.standard_normal(sc.K)
        u = sc.s @ w
        if i % 5 == 0:
            u = np.round(u, 1)  # exercise tied scores
        for direction in (1.0, -1.0):
            sw = threshold_sweep(direction * u, book)
            for j in range(len(sw.cuts)):
                mask = direction * u > sw.thresholds[j]
                correct, pa, pb = book.naive(mask)
                checked += 1
                same = (
                    mask.sum() == sw.cuts[j]
                    and correct == sw.correct[j]
                    and np.array_equal(pa, sw.pos_a[j])
                    and np.array_equal(pb, sw.pos_b[j])
                )
                mismatches += not same
    record(2, mismatches == 0 and checked > 0, f"{checked} threshold candidates checked, {mismatches} count mismatches")


def test_criterion_03_oracle_equivalence():
    violations, gaps, integral_eq, solved = [], [], 0, 0
    for i in range(200):
        r = np.random.default_rng(3000 + i)
        n, K = int(r.integers(2, 13)), int(r.integers(1, 3))
        eta = r.uniform(0.01, 1.0, n)
        F = r.normal(0, 1.5, (n, K))
        c_star = F[r.uniform(size=n) < 0.5].sum(axis=0) / n
        inst = LpInstance(eta, F, c_star, r.uniform(0, 1) * np.abs(c_star).max())
        sol, bf = solve_primal(inst), brute_force(inst)
        if sol.status != "optimal":
            if bf.status == "optimal":
                violations.append(i)
            continue
        solved += 1
        _, dual_value = solve_dual(inst)
        gaps.append(abs(dual_value - sol.objective))
        if bf.status == "optimal" and bf.objective < sol.objective - 1e-12:
            violations.append(i)
        if sol.fractional.size == 0:
            if bf.status != "optimal" or abs(bf.objective - sol.objective) > 1e-12:
                violations.append(i)
            else:
                integral_eq += 1
    ok = not violations and max(gaps) <= 1e-7
    record(
        3,
        ok,
        f"{solved} feasible of 200, {integral_eq} integral with equality, bound violations {len(violations)}, "
        f"max duality gap {max(gaps):.2e} (tol 1e-7)",
    )


@pytest.fixture(scope="module")
def mixture_instance():
    """One seeded 1200-point draw; the 4-class model, priors, scores and search all use it."""
    data = sample(default_spec(), 0)
    crit = estimate_priors(data, equalized_odds())
    model = fit_joint_model(data)
    sc = bias_scores(predict_probs(model, data.features, crit), crit)
    return data, crit, sc


def lp_flips(sc, data, crit, delta):
    inst = instance_from_scores(sc, delta, data, crit)
    sol = solve_primal(inst)
    assert sol.status == "optimal"
    return inst, sol


def test_criterion_04_search_vs_oracle(mixture_instance):
    data, crit, sc = mixture_instance
    base_acc = composite(sc.yhat, data, crit).accuracy
    parts, ok = [], True
    for delta in (0.15, 0.01):
        _, sol = lp_flips(sc, data, crit, delta)
        implied = base_acc - sol.objective
        pairs = fit_line_pairs(sc, data, crit, delta, M=data.n, seed=0)
        dirs = fit_directions(sc, data, crit, delta, n_dirs=256)
        for name, rule in (("pairs", pairs), ("directions", dirs)):
            acc = evaluate(rule, sc, data, crit).accuracy
            gap = abs(acc - implied)
            ok &= bool(rule.provenance["feasible"]) and gap <= 0.01
            parts.append(f"d={delta} {name} {acc:.4f} vs LP {implied:.4f} ({100 * gap:.2f}pp)")
    record(4, ok, "; ".join(parts) + " (tol 1pp)")


def test_criterion_05_unflip(mixture_instance):
    data, crit, sc = mixture_instance
    _, loose = lp_flips(sc, data, crit, 0.15)
    _, tight = lp_flips(sc, data, crit, 0.01)
    a, b = loose.deterministic, tight.deterministic
    unflipped = int(np.sum(a & ~b))
    base_cc = composite(sc.yhat, data, crit).cc
    record(
        5,
        unflipped >= 1,
        f"flipped at 0.15: {int(a.sum())}, at 0.01: {int(b.sum())}, flipped at 0.15 but not at 0.01: {unflipped} "
        f"(base EO on this draw {base_cc:.4f})",
    )


def test_criterion_06_group_aware_reduction():
    total = 0
    for i in range(20):
        r = np.random.default_rng(6000 + i)
        total += group_aware_violations(r, float(r.choice([0.01, 0.02, 0.05, 0.1])))
    record(6, total == 0, f"{total} threshold-structure violations over 20 instances")


def mean_excess(spec, crit_fn, fit, delta, N, seeds=20):
    out = []
    for s in range(seeds):
        val = sample(spec.with_total(N), 1000 + s)
        test = sample(spec.with_total(100_000), 5000 + s)
        crit = estimate_priors(val, crit_fn())
        sv = bias_scores(true_posteriors(spec, val.features, crit), crit)
        st = bias_scores(true_posteriors(spec, test.features, crit), crit)
        rule = fit(sv, val, crit, delta)
        out.append(max(0.0, evaluate(rule, st, test, crit).cc - delta))
    return float(np.mean(out))


def test_criterion_07_constraint_adherence_scaling():
    spec = default_spec()
    sizes = (500, 2000, 8000)
    dp = [mean_excess(spec, demographic_parity, fit_threshold, 0.05, N) for N in sizes]
    eo = [mean_excess(spec, equalized_odds, fit_directions, 0.01, N) for N in sizes]
    mono = lambda v: all(a > b for a, b in zip(v, v[1:]))  # noqa: E731
    record(
        7,
        mono(dp) and mono(eo),
        "mean excess DP(d=0.05) " + ", ".join(f"N={N}: {v:.4f}" for N, v in zip(sizes, dp))
        + "; EO(d=0.01) " + ", ".join(f"N={N}: {v:.4f}" for N, v in zip(sizes, eo)),
    )


def test_criterion_08_corruption_robustness():
    spec = default_spec()
    train = sample(spec.with_total(12_000), 10)
    val = sample(spec.with_total(5_000), 11)
    test = sample(spec.with_total(100_000), 12)
    crit = estimate_priors(train, demographic_parity())
    model = fit_joint_model(train)
    pv, pt = predict_probs(model, val.features, crit), predict_probs(model, test.features, crit)
    accs, dps = [], []
    for alpha in (0.0, 0.02, 0.04, 0.06, 0.08, 0.1):
        sv = bias_scores(corrupt(pv, alpha, 100), crit)
        st = bias_scores(corrupt(pt, alpha, 200), crit)
        rep = evaluate(fit_threshold(sv, val, crit, 0.05), st, test, crit)
        accs.append(rep.accuracy)
        dps.append(rep.cc)
    drop = accs[0] - accs[-1]
    ok = drop <= 0.02 and max(dps) <= 0.05 + 0.03
    record(
        8,
        ok,
        f"test accuracy {accs[0]:.4f} -> {accs[-1]:.4f} (drop {100 * drop:.2f}pp, tol 2pp); "
        f"test DP max {max(dps):.4f} (tol 0.08); DP by alpha " + ", ".join(f"{d:.3f}" for d in dps),
    )


def test_criterion_09_gradient_check():
    r = np.random.default_rng(9000)
    worst = max(relative_gradient_error(r) for _ in range(50))
    record(9, worst <= 1e-5, f"max relative gradient error {worst:.2e} over 50 problems (tol 1e-5)")


ADULT_DIR = os.environ.get("FAIRFLIP_ADULT_DIR")


@pytest.mark.skipif(not ADULT_DIR, reason="set FAIRFLIP_ADULT_DIR to a folder with train.csv, val.csv, test.csv")
def test_criterion_10_adult_frontier(tmp_path):
    from fairflip.cli import main

    d = Path(ADULT_DIR)
    args = ["train-aux", "--train", d / "train.csv", "--predict", d / "val.csv", d / "test.csv"]
    args += ["--out", tmp_path / "pv.csv", tmp_path / "pt.csv", "--seed", "0"]
    assert main([str(a) for a in args]) == 0
    for split in ("v", "t"):
        args = ["score", "--criterion", "dp", "--probs", tmp_path / f"p{split}.csv"]
        args += ["--priors-from", d / "train.csv", "--out", tmp_path / f"s{split}.csv"]
        assert main([str(a) for a in args]) == 0
    args = ["frontier", "--criterion", "dp", "--scores", tmp_path / "sv.csv", "--data", d / "val.csv"]
    args += ["--test-scores", tmp_path / "st.csv", "--test-data", d / "test.csv"]
    args += ["--deltas", "0.10", "0.05", "0.01", "--out", tmp_path / "fr.csv", "--plot", tmp_path / "fr.svg"]
    assert main([str(a) for a in args]) == 0
    rows = [r.split(",") for r in (tmp_path / "fr.csv").read_text().splitlines()[1:]]
    checks = [(float(r[0]), float(r[6])) for r in rows]
    ok = all(dp <= delta + 0.02 for delta, dp in checks)
    record(10, ok, "test DP " + ", ".join(f"d={delta}: {dp:.4f}" for delta, dp in checks) + " (tol d + 0.02)")
