"""Empirical accuracy, signed disparities and the composite criterion."""

from __future__ import annotations

import numpy as np

from .core import Component, CriterionSpec, EmptyGroupError, EvalReport, LabeledDataset, ModificationRule
from .scores import BiasScores


def apply_rule(rule: ModificationRule, scores: BiasScores) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(predictions, flip_mask)``: base predictions flipped where the rule fires."""
    if rule.K != scores.K:
        raise ValueError(f"rule dimension {rule.K} does not match {scores.K} score columns")
    flips = rule.decide(scores.s)
    return np.where(flips, 1 - scores.yhat, scores.yhat), flips


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty sample is undefined")
    return float(np.mean(predictions == labels))


def signed_disparity(predictions, data: LabeledDataset, component: Component) -> float:
    """``Pr(pred = 1 | group a) - Pr(pred = 1 | group b)`` as conditional frequencies."""
    in_a, in_b = component.membership(data)
    return _disparity(np.asarray(predictions), in_a, in_b, component.name)


def _disparity(pred, in_a, in_b, name) -> float:
    n_a, n_b = in_a.sum(), in_b.sum()
    if n_a == 0 or n_b == 0:
        raise EmptyGroupError(f"component {name!r}: group {'a' if n_a == 0 else 'b'} is empty")
    return float(pred[in_a].sum() / n_a - pred[in_b].sum() / n_b)


def composite(predictions, data: LabeledDataset, criterion: CriterionSpec, flips=None) -> EvalReport:
    predictions = np.asarray(predictions)
    in_a, in_b = criterion.membership(data)
    disp = tuple(_disparity(predictions, in_a[:, k], in_b[:, k], c.name) for k, c in enumerate(criterion.components))
    return EvalReport(
        accuracy=accuracy(predictions, data.labels),
        disparities=disp,
        cc=max(abs(d) for d in disp),
        flip_count=0 if flips is None else int(np.sum(flips)),
    )


def evaluate(rule: ModificationRule, scores: BiasScores, data: LabeledDataset, criterion: CriterionSpec) -> EvalReport:
    pred, flips = apply_rule(rule, scores)
    return composite(pred, data, criterion, flips)


def empirical_group_functions(yhat, data: LabeledDataset, criterion: CriterionSpec) -> np.ndarray:
    """Indicator-based group functions with empirical priors, shape ``(n, K)``.

    Flipping instance ``i`` changes component ``k``'s signed disparity by
    exactly ``-f[i, k] / n``.
    """
    in_a, in_b = criterion.membership(data)
    n_a, n_b = in_a.sum(axis=0), in_b.sum(axis=0)
    if np.any(n_a == 0) or np.any(n_b == 0):
        raise EmptyGroupError("every group must be non-empty")
    n = data.n
    sign = (2.0 * np.asarray(yhat, dtype=np.float64) - 1.0)[:, None]
    return sign * (in_a / (n_a / n) - in_b / (n_b / n))
