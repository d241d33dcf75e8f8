from __future__ import annotations

import numpy as np
import pytest

from fairflip.core import LabeledDataset, ProbTable, estimate_priors, make_criterion
from fairflip.scores import bias_scores

ACCEPTANCE_LINES: dict[int, str] = {}


def random_instance(rng: np.random.Generator, n: int, kind: str):
    """Random labeled sample with model probabilities, scored under ``kind``.

    Every criterion group is guaranteed at least two members.
    """
    crit = make_criterion(kind)
    while True:
        labels = rng.integers(0, 2, n)
        attr = rng.integers(0, 2, n)
        data = LabeledDataset(labels, {"A": attr})
        in_a, in_b = crit.membership(data)
        if in_a.sum(axis=0).min() >= 2 and in_b.sum(axis=0).min() >= 2:
            break
    crit = estimate_priors(data, crit)
    p_y = rng.uniform(0, 1, n)
    p_a = rng.uniform(0, 1, (n, crit.K))
    p_b = rng.uniform(0, 1, (n, crit.K))
    probs = ProbTable(p_y, p_a, p_b, crit.names)
    return data, crit, probs, bias_scores(probs, crit)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def group_aware_violations(rng: np.random.Generator, delta: float, n: int = 300) -> int:
    """Fit the equal-opportunity threshold rule on probabilities whose group part is
    deterministic, ``p(A=a, Y=1 | X) = p(Y=1 | X) 1{A = a}``, and count instances
    breaking a per-group threshold structure on ``p(Y=1 | X)``.

    Within each group, sorted by ``p(Y=1 | X)``, final predictions must be
    non-decreasing; each descent is one violation.
    """
    from fairflip.search import fit_threshold
    from fairflip.metrics import apply_rule

    crit = make_criterion("eop")
    while True:
        attr = (rng.uniform(size=n) < rng.uniform(0.2, 0.8)).astype(int)
        p_y = rng.beta(rng.uniform(0.5, 3), rng.uniform(0.5, 3), n)
        shift = rng.uniform(-0.15, 0.15)
        labels = (rng.uniform(size=n) < np.clip(p_y + shift * (2 * attr - 1), 0, 1)).astype(int)
        data = LabeledDataset(labels, {"A": attr})
        in_a, in_b = crit.membership(data)
        if in_a.sum() >= 5 and in_b.sum() >= 5:
            break
    crit = estimate_priors(data, crit)
    p_a = p_y * (attr == 0)
    p_b = p_y * (attr == 1)
    sc = bias_scores(ProbTable(p_y, p_a, p_b, crit.names), crit)
    rule = fit_threshold(sc, data, crit, delta)
    pred, _ = apply_rule(rule, sc)
    violations = 0
    for g in (0, 1):
        idx = np.flatnonzero(attr == g)
        ordered = pred[idx[np.argsort(p_y[idx], kind="stable")]]
        violations += int(np.sum(np.diff(ordered) < 0))
    return violations
