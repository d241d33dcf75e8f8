"""Fit linear flipping rules on a labeled validation set.

Every searched family is restricted to rules ``1{w . s > t}`` with ``t > 0``,
i.e. half-spaces of the score space that exclude the origin. Those are exactly
the rules ``1{z . s > 1}`` with ``z = w / t``; an instance whose scores are all
zero is never flipped.

A family is enumerated once into a :class:`CandidatePool` holding, for every
candidate, its weights/threshold and the integer bookkeeping needed to score
it (correct predictions, positive predictions per group, flips). Selecting the
best rule for a given ``delta`` is then a cheap reduction, so a frontier over
several deltas reuses one enumeration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import CriterionSpec, EvalReport, LabeledDataset, ModificationRule, project
from .metrics import evaluate
from .scores import BiasScores

log = logging.getLogger(__name__)

DEFAULT_N_DIRS = 64
DEFAULT_M = 1000
# elements of the (n, candidates) flip matrix materialized at once
_CHUNK = 4_000_000


class Bookkeeper:
    """Integer effect of flipping each instance on accuracy and group counts."""

    def __init__(self, yhat, data: LabeledDataset, criterion: CriterionSpec):
        yhat = np.asarray(yhat, dtype=np.int64)
        in_a, in_b = criterion.membership(data)
        self.n = data.n
        self.K = criterion.K
        self.n_a = in_a.sum(axis=0)
        self.n_b = in_b.sum(axis=0)
        if np.any(self.n_a == 0) or np.any(self.n_b == 0):
            from .core import EmptyGroupError

            raise EmptyGroupError("every criterion group needs validation members")
        agree = (yhat == data.labels).astype(np.int64)
        self.d_correct = 1 - 2 * agree
        d_pos = 1 - 2 * yhat
        self.d_a = in_a * d_pos[:, None]
        self.d_b = in_b * d_pos[:, None]
        self.base_correct = int(agree.sum())
        self.base_a = (in_a * yhat[:, None]).sum(axis=0)
        self.base_b = (in_b * yhat[:, None]).sum(axis=0)
        # one row per instance: [correct, pos_a (K), pos_b (K)] deltas
        self.table = np.concatenate([self.d_correct[:, None], self.d_a, self.d_b], axis=1).astype(np.float64)

    def disparities(self, pos_a, pos_b) -> np.ndarray:
        return pos_a / self.n_a - pos_b / self.n_b

    def tally(self, flips: np.ndarray):
        """Counts for a ``(n, L)`` boolean flip matrix; returns (correct, pos_a, pos_b)."""
        sums = np.rint(self.table.T @ flips.astype(np.float64)).astype(np.int64)
        K = self.K
        return (
            self.base_correct + sums[0],
            self.base_a[:, None] + sums[1 : 1 + K],
            self.base_b[:, None] + sums[1 + K :],
        )

    def naive(self, flip_mask) -> tuple[int, np.ndarray, np.ndarray]:
        """From-scratch counts for a single flip mask."""
        idx = np.flatnonzero(flip_mask)
        return (
            self.base_correct + int(self.d_correct[idx].sum()),
            self.base_a + self.d_a[idx].sum(axis=0),
            self.base_b + self.d_b[idx].sum(axis=0),
        )


@dataclass
class CandidatePool:
    weights: np.ndarray  # (L, K)
    scales: np.ndarray  # (L,)
    correct: np.ndarray  # (L,)
    disparities: np.ndarray  # (L, K)
    flips: np.ndarray  # (L,)
    n: int
    meta: dict = field(default_factory=dict)

    @property
    def cc(self) -> np.ndarray:
        return np.abs(self.disparities).max(axis=1)

    def __len__(self):
        return int(self.scales.shape[0])

    def select(self, delta: float) -> tuple[int, bool]:
        """Index of the best candidate and whether it meets ``cc <= delta``.

        Feasible candidates are ranked by accuracy, then smaller criterion,
        then fewer flips, then enumeration order. With none feasible, the
        smallest criterion wins, ties broken by accuracy, flips and order.
        """
        cc = self.cc
        order = np.arange(len(self))
        feasible = cc <= delta
        if feasible.any():
            sel = np.flatnonzero(feasible)
            keys = (order[sel], self.flips[sel], cc[sel], -self.correct[sel])
            return int(sel[np.lexsort(keys)[0]]), True
        keys = (order, self.flips, -self.correct, cc)
        return int(np.lexsort(keys)[0]), False

    def rule(self, i: int, **provenance) -> ModificationRule:
        return ModificationRule(self.weights[i].copy(), float(self.scales[i]), provenance)

    @staticmethod
    def concat(pools: list[CandidatePool]) -> CandidatePool:
        return CandidatePool(
            np.concatenate([p.weights for p in pools]),
            np.concatenate([p.scales for p in pools]),
            np.concatenate([p.correct for p in pools]),
            np.concatenate([p.disparities for p in pools]),
            np.concatenate([p.flips for p in pools]),
            pools[0].n,
            dict(pools[0].meta),
        )


def _identity_pool(book: Bookkeeper) -> CandidatePool:
    return CandidatePool(
        weights=np.zeros((1, book.K)),
        scales=np.ones(1),
        correct=np.array([book.base_correct]),
        disparities=book.disparities(book.base_a, book.base_b)[None, :],
        flips=np.zeros(1, dtype=np.int64),
        n=book.n,
    )


@dataclass
class Sweep:
    """Incremental threshold sweep along one direction.

    Instances with positive projection are visited in descending order; each
    cut ``j`` flips the first ``j`` of them. Only cuts between distinct
    projection values are kept, since a threshold cannot split ties.
    """

    order: np.ndarray
    cuts: np.ndarray
    thresholds: np.ndarray
    correct: np.ndarray
    pos_a: np.ndarray
    pos_b: np.ndarray


def threshold_sweep(u: np.ndarray, book: Bookkeeper) -> Sweep:
    pos = np.flatnonzero(u > 0)
    order = pos[np.argsort(-u[pos], kind="stable")]
    us = u[order]
    # running sums are the per-step accuracy and group-count updates
    correct = book.base_correct + np.cumsum(book.d_correct[order])
    pos_a = book.base_a + np.cumsum(book.d_a[order], axis=0)
    pos_b = book.base_b + np.cumsum(book.d_b[order], axis=0)
    P = us.shape[0]
    nxt = np.append(us[1:], 0.0)
    ok = us > nxt
    thr = nxt + (us - nxt) / 2
    # adjacent floats: the midpoint may round onto the upper value
    thr = np.where(thr >= us, nxt, thr)
    ok &= thr > 0
    cuts = np.flatnonzero(ok)
    return Sweep(order, cuts + 1, thr[cuts], correct[cuts], pos_a[cuts].reshape(-1, book.K), pos_b[cuts].reshape(-1, book.K))


def _direction_pool(s: np.ndarray, directions: np.ndarray, book: Bookkeeper) -> CandidatePool:
    pools = [_identity_pool(book)]
    for w in directions:
        sw = threshold_sweep(project(s, w), book)
        L = sw.cuts.shape[0]
        if L == 0:
            continue
        pools.append(
            CandidatePool(
                weights=np.repeat(w[None, :], L, axis=0),
                scales=sw.thresholds,
                correct=sw.correct,
                disparities=book.disparities(sw.pos_a, sw.pos_b),
                flips=sw.cuts.astype(np.int64),
                n=book.n,
            )
        )
    return CandidatePool.concat(pools)


def equiangular_directions(n_dirs: int) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def sphere_directions(n_dirs: int, K: int, seed: int) -> np.ndarray:
    g = np.random.default_rng(seed).standard_normal((n_dirs, K))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def threshold_pool(scores: BiasScores, val: LabeledDataset, criterion: CriterionSpec) -> CandidatePool:
    if scores.K != 1:
        raise ValueError(f"threshold search needs a single score, got K={scores.K}")
    book = _book(scores, val, criterion)
    pool = _direction_pool(scores.s, np.array([[1.0], [-1.0]]), book)
    pool.meta = {"algorithm": "threshold"}
    return pool


def directions_pool(
    scores: BiasScores, val: LabeledDataset, criterion: CriterionSpec, n_dirs: int = DEFAULT_N_DIRS, seed: int = 0
) -> CandidatePool:
    if n_dirs < 2:
        raise ValueError("n_dirs must be at least 2")
    K = scores.K
    meta = {"algorithm": "directions", "n_dirs": n_dirs}
    if K == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif K == 2:
        dirs = equiangular_directions(n_dirs)
    else:
        dirs = sphere_directions(n_dirs, K, seed)
        meta.update(seed=seed, note="random unit directions for K > 2 (extension beyond the two-score case)")
    pool = _direction_pool(scores.s, dirs, _book(scores, val, criterion))
    pool.meta = meta
    return pool


def subsample(n: int, M: int, seed: int) -> np.ndarray:
    if M < 2:
        raise ValueError("M must be at least 2")
    if M >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=M, replace=False))


def line_candidates(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Origin-excluding half-planes bounded by the line through each point pair.

    Pairs ``(k, l)``, ``k < l``, in lexicographic order. Returns ``(weights,
    scales)``; lines through the origin or through coincident points are
    dropped since no rule ``z . s > 1`` has them as boundary.
    """
    k, l = np.triu_indices(points.shape[0], 1)
    d = points[l] - points[k]
    normal = np.stack([-d[:, 1], d[:, 0]], axis=1)
    c = normal[:, 0] * points[k, 0] + normal[:, 1] * points[k, 1]
    keep = (c != 0) & np.any(d != 0, axis=1)
    sign = np.where(c > 0, 1.0, -1.0)
    W, T = (normal * sign[:, None])[keep], (c * sign)[keep]
    # the defining points lie on the boundary; make sure rounding in the
    # rule's own projection never puts them strictly beyond it
    on_k = points[k[keep], 0] * W[:, 0] + points[k[keep], 1] * W[:, 1]
    on_l = points[l[keep], 0] * W[:, 0] + points[l[keep], 1] * W[:, 1]
    return W, np.maximum(T, np.maximum(on_k, on_l))


def pairs_pool(
    scores: BiasScores, val: LabeledDataset, criterion: CriterionSpec, M: int = DEFAULT_M, seed: int = 0
) -> CandidatePool:
    if scores.K != 2:
        raise ValueError(f"pair-line search needs two scores, got K={scores.K}")
    book = _book(scores, val, criterion)
    idx = subsample(scores.n, M, seed)
    W, T = line_candidates(scores.s[idx])
    pools = [_identity_pool(book)]
    step = max(1, _CHUNK // max(scores.n, 1))
    for lo in range(0, T.shape[0], step):
        w, t = W[lo : lo + step], T[lo : lo + step]
        flips = project(scores.s, w.T) > t[None, :]
        correct, pos_a, pos_b = book.tally(flips)
        pools.append(
            CandidatePool(w, t, correct, book.disparities(pos_a.T, pos_b.T), flips.sum(axis=0), book.n)
        )
    pool = CandidatePool.concat(pools)
    pool.meta = {"algorithm": "pairs", "M": int(idx.shape[0]), "seed": seed}
    return pool


def _book(scores: BiasScores, val: LabeledDataset, criterion: CriterionSpec) -> Bookkeeper:
    if scores.n != val.n:
        raise ValueError(f"{scores.n} score rows but {val.n} validation rows")
    if scores.K != criterion.K:
        raise ValueError(f"scores have {scores.K} columns, criterion has {criterion.K} components")
    return Bookkeeper(scores.yhat, val, criterion)


def rule_from_pool(
    pool: CandidatePool, delta: float, scores: BiasScores, val: LabeledDataset, criterion: CriterionSpec
) -> ModificationRule:
    if not delta >= 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    i, feasible = pool.select(delta)
    rule = pool.rule(i)
    report = evaluate(rule, scores, val, criterion)
    if report.flip_count != pool.flips[i] or abs(report.cc - pool.cc[i]) > 1e-12:
        raise RuntimeError("replayed rule disagrees with its search bookkeeping")
    if not feasible:
        log.warning("no searched rule reaches criterion <= %g; returning the least-violating one (%.4g)", delta, report.cc)
    prov = dict(pool.meta)
    prov.update(
        delta=float(delta),
        feasible=feasible,
        val_accuracy=report.accuracy,
        val_cc=report.cc,
        val_flips=report.flip_count,
        candidates=len(pool),
    )
    return ModificationRule(rule.weights, rule.scale, prov)


def fit_threshold(scores, val, criterion, delta) -> ModificationRule:
    return rule_from_pool(threshold_pool(scores, val, criterion), delta, scores, val, criterion)


def fit_line_pairs(scores, val, criterion, delta, M: int = DEFAULT_M, seed: int = 0) -> ModificationRule:
    return rule_from_pool(pairs_pool(scores, val, criterion, M, seed), delta, scores, val, criterion)


def fit_directions(scores, val, criterion, delta, n_dirs: int = DEFAULT_N_DIRS, seed: int = 0) -> ModificationRule:
    return rule_from_pool(directions_pool(scores, val, criterion, n_dirs, seed), delta, scores, val, criterion)


METHODS = ("threshold", "pairs", "directions")


def build_pool(method: str, scores, val, criterion, M=DEFAULT_M, n_dirs=DEFAULT_N_DIRS, seed=0) -> CandidatePool:
    if method == "threshold":
        return threshold_pool(scores, val, criterion)
    if method == "pairs":
        return pairs_pool(scores, val, criterion, M, seed)
    if method == "directions":
        return directions_pool(scores, val, criterion, n_dirs, seed)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


@dataclass
class FrontierPoint:
    delta: float
    rule: ModificationRule
    val_report: EvalReport
    test_report: EvalReport | None = None

    @property
    def feasible(self) -> bool:
        return bool(self.rule.provenance.get("feasible", True))


def frontier(
    scores: BiasScores,
    val: LabeledDataset,
    criterion: CriterionSpec,
    deltas,
    method: str = "threshold",
    test: tuple[BiasScores, LabeledDataset] | None = None,
    **params,
) -> list[FrontierPoint]:
    deltas = list(deltas)
    if not deltas:
        raise ValueError("at least one delta is required")
    pool = build_pool(method, scores, val, criterion, **params)
    points = []
    for delta in deltas:
        rule = rule_from_pool(pool, delta, scores, val, criterion)
        val_report = evaluate(rule, scores, val, criterion)
        test_report = None if test is None else evaluate(rule, test[0], test[1], criterion)
        points.append(FrontierPoint(float(delta), rule, val_report, test_report))
    return points
