from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from fairflip.core import ModificationRule
from fairflip.metrics import apply_rule, composite, evaluate
from fairflip.oracle import (
    FEAS_TOL,
    GAP_TOL,
    LpInstance,
    brute_force,
    complementary_slackness,
    dual_objective,
    instance_from_scores,
    rule_from_dual,
    solve_dual,
    solve_primal,
)
from fairflip.search import fit_directions, fit_threshold
from fairflip.simplex import LPInfeasible, solve_bounded

from conftest import random_instance


def random_lp(r: np.random.Generator, n: int, K: int) -> LpInstance:
    eta = r.uniform(0.01, 1.0, n)
    F = r.normal(0, 1.5, (n, K))
    c_star = F[r.uniform(size=n) < 0.5].sum(axis=0) / n
    delta = r.uniform(0, 1) * np.abs(c_star).max()
    return LpInstance(eta, F, c_star, delta)


def hand_lp(c_star):
    return LpInstance(np.array([0.1, 0.9]), np.array([[1.0], [1.0]]), np.array([c_star]), 0.0)


def test_hand_instance_primal_dual_and_brute_force():
    inst = hand_lp(0.5)
    sol = solve_primal(inst)
    assert sol.status == "optimal"
    assert np.allclose(sol.kappa, [1.0, 0.0], atol=1e-12)
    assert sol.objective == pytest.approx(0.05, abs=1e-15)
    z, value = solve_dual(inst)
    assert value == pytest.approx(0.05, abs=1e-9)
    bf = brute_force(inst)
    assert bf.kappa.tolist() == [True, False] and bf.objective == pytest.approx(0.05)
    s = inst.F / inst.eta[:, None]
    # every w in [0.1, 0.9] is dual optimal; the solver's vertex may sit on a
    # tie, so the flip set must agree with kappa on the untied coordinates
    w = sol.weights
    untied = np.abs(inst.F @ w - inst.eta) > 1e-12
    flips = rule_from_dual(sol.z).decide(s)
    assert np.array_equal(flips[untied], sol.deterministic[untied])
    for mid in (0.1, 0.5, 0.9):
        assert -dual_objective(inst, np.array([mid])) == pytest.approx(0.05, abs=1e-15)
    interior = rule_from_dual(np.array([0.0, 0.5]))
    assert np.flatnonzero(interior.decide(s)).tolist() == [0]
    full = solve_primal(hand_lp(1.0))
    assert np.allclose(full.kappa, [1.0, 1.0]) and full.objective == pytest.approx(0.5)


def test_slack_delta_flips_nothing():
    r = np.random.default_rng(0)
    inst = random_lp(r, 30, 2)
    inst = LpInstance(inst.eta, inst.F, inst.c_star, float(np.abs(inst.c_star).max()))
    sol = solve_primal(inst)
    assert np.all(sol.kappa == 0) and sol.objective == 0
    z, value = solve_dual(inst)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert not rule_from_dual(np.zeros(4)).decide(np.ones((3, 2))).any()
    assert brute_force(LpInstance(inst.eta[:10], inst.F[:10], np.zeros(2), 0.1)).objective == 0


def test_infeasible_instance():
    inst = LpInstance(np.array([0.5, 0.5]), np.array([[0.1], [0.1]]), np.array([1.0]), 0.0)
    assert solve_primal(inst).status == "infeasible"
    assert brute_force(inst).status == "infeasible"
    with pytest.raises(ValueError):
        brute_force(LpInstance(np.ones(21), np.ones(21), np.zeros(1), 0.0))


def test_instance_validation():
    with pytest.raises(ValueError):
        LpInstance(np.array([0.0]), np.array([1.0]), np.array([0.0]), 0.1)
    with pytest.raises(ValueError):
        LpInstance(np.array([1.0]), np.array([[1.0, 1.0]]), np.array([0.0]), 0.1)
    with pytest.raises(ValueError):
        LpInstance(np.array([1.0]), np.array([1.0]), np.array([0.0]), -0.1)


@pytest.mark.parametrize("seed", range(40))
def test_primal_matches_reference_solver(seed):
    r = np.random.default_rng(seed)
    inst = random_lp(r, int(r.integers(5, 80)), int(r.integers(1, 3)))
    G, b = inst.constraint_matrix()
    ref = linprog(inst.eta / inst.n, A_ub=G, b_ub=b, bounds=(0, 1), method="highs")
    sol = solve_primal(inst)
    if ref.status == 2:
        assert sol.status == "infeasible"
        return
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(ref.fun, abs=1e-9)
    assert inst.is_feasible(sol.kappa, FEAS_TOL)
    assert sol.fractional.size <= 2 * inst.K
    assert complementary_slackness(inst, sol) <= GAP_TOL
    assert -dual_objective(inst, sol.weights) == pytest.approx(sol.objective, abs=GAP_TOL)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_dual_matches_primal(seed):
    r = np.random.default_rng(seed)
    inst = random_lp(r, int(r.integers(2, 40)), int(r.integers(1, 3)))
    sol = solve_primal(inst)
    if sol.status != "optimal":
        return
    z, value = solve_dual(inst)
    assert np.all(z >= 0)
    assert abs(value - sol.objective) <= GAP_TOL


def test_dual_on_larger_instance_is_close():
    r = np.random.default_rng(11)
    data, crit, _, sc = random_instance(r, 600, "eo")
    inst = instance_from_scores(sc, 0.02, data, crit)
    sol = solve_primal(inst)
    z, value = solve_dual(inst)
    assert abs(value - sol.objective) <= GAP_TOL


def test_rule_from_dual_matches_rounded_primal():
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        inst = random_lp(r, 50, 2)
        sol = solve_primal(inst)
        if sol.status != "optimal":
            continue
        margin = inst.F @ sol.weights - inst.eta
        untied = np.abs(margin) > 1e-9
        rule = rule_from_dual(sol.z)
        flips = rule.decide(inst.F / inst.eta[:, None])
        assert np.array_equal(flips[untied], sol.kappa[untied] > 0.5)


def test_empirical_lp_matches_metrics_and_bounds_search():
    r = np.random.default_rng(5)
    for kind in ("dp", "eo"):
        data, crit, _, sc = random_instance(r, 200, kind)
        for delta in (0.02, 0.1):
            inst = instance_from_scores(sc, delta, data, crit)
            sol = solve_primal(inst)
            flips = sol.deterministic
            pred = np.where(flips, 1 - sc.yhat, sc.yhat)
            rep = composite(pred, data, crit)
            assert np.allclose(rep.disparities, inst.disparities_after(flips), atol=1e-12)
            # accuracy identity: base accuracy minus the LP objective for any 0/1 flip vector
            base = composite(sc.yhat, data, crit).accuracy
            signed_loss = np.where(sc.yhat == data.labels, 1.0, -1.0)
            assert rep.accuracy == pytest.approx(base - signed_loss @ flips / data.n, abs=1e-12)
            fit = fit_threshold if kind == "dp" else fit_directions
            rule = fit(sc, data, crit, delta)
            if rule.provenance["feasible"]:
                _, rflips = apply_rule(rule, sc)
                assert inst.objective(rflips) >= sol.objective - 1e-12


def test_brute_force_never_beats_relaxation():
    r = np.random.default_rng(8)
    for _ in range(30):
        inst = random_lp(r, int(r.integers(2, 11)), int(r.integers(1, 3)))
        sol, bf = solve_primal(inst), brute_force(inst)
        if bf.status == "optimal":
            assert sol.status == "optimal" and bf.objective >= sol.objective - 1e-12
            if sol.fractional.size == 0:
                assert bf.objective == pytest.approx(sol.objective, abs=1e-12)


def test_simplex_against_reference_with_negative_rhs():
    r = np.random.default_rng(4)
    for _ in range(20):
        n, m = 30, 3
        A = r.normal(size=(m, n))
        x0 = r.uniform(size=n)
        b = A @ x0 + r.uniform(-0.1, 0.5, m)  # some rows may need phase 1
        c = r.normal(size=n)
        ref = linprog(c, A_ub=A, b_ub=b, bounds=(0, 1), method="highs")
        try:
            res = solve_bounded(c, A, b, 1.0)
        except LPInfeasible:
            assert ref.status == 2
            continue
        assert res.objective == pytest.approx(ref.fun, abs=1e-9)
        assert np.all(A @ res.x <= b + 1e-9)
        assert np.all(res.duals <= 1e-12)


def test_model_instance_rule_consistency():
    r = np.random.default_rng(21)
    data, crit, _, sc = random_instance(r, 300, "eo")
    inst = instance_from_scores(sc, 0.05)
    sol = solve_primal(inst)
    rule = rule_from_dual(sol.z, delta=0.05)
    _, flips = apply_rule(rule, sc)
    margin = sc.f @ sol.weights - sc.eta
    untied = np.abs(margin) > 1e-9
    assert np.array_equal(flips[untied], sol.kappa[untied] > 0.5)
    assert rule.provenance["algorithm"] == "lp-dual"
    assert isinstance(rule, ModificationRule)
    rep = evaluate(rule, sc, data, crit)
    assert 0 <= rep.accuracy <= 1
