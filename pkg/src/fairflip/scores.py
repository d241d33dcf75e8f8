"""Confidence, group functions and bias scores, plus probability corruption."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import CriterionSpec, ProbTable, write_columns

DEFAULT_ETA_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class BiasScores:
    """Per-instance base prediction, confidence, bias scores ``s`` and group functions ``f``."""

    yhat: np.ndarray
    eta: np.ndarray
    s: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        yhat = np.asarray(self.yhat, dtype=np.int64)
        eta = np.asarray(self.eta, dtype=np.float64)
        s = np.asarray(self.s, dtype=np.float64)
        f = np.asarray(self.f, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if f.ndim == 1:
            f = f[:, None]
        n = yhat.shape[0]
        if eta.shape != (n,) or s.shape[0] != n or s.shape != f.shape:
            raise ValueError(f"inconsistent shapes yhat={yhat.shape} eta={eta.shape} s={s.shape} f={f.shape}")
        if n and not np.all(eta > 0):
            raise ValueError("confidences must be strictly positive")
        for name, v in (("yhat", yhat), ("eta", eta), ("s", s), ("f", f)):
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return int(self.yhat.shape[0])

    @property
    def K(self) -> int:
        return int(self.s.shape[1])

    def subset(self, idx) -> BiasScores:
        return BiasScores(self.yhat[idx], self.eta[idx], self.s[idx], self.f[idx])


def base_prediction(p_y):
    """Unconstrained decision ``1{p_y > 0.5}``."""
    return (np.asarray(p_y) > 0.5).astype(np.int64)


def confidence(p_y, eta_floor: float = DEFAULT_ETA_FLOOR):
    """Margin ``2 p(Y = yhat | X) - 1 = |2 p_y - 1|``, floored at ``eta_floor``."""
    if eta_floor <= 0:
        raise ValueError("eta_floor must be positive")
    return np.maximum(np.abs(2.0 * np.asarray(p_y, dtype=np.float64) - 1.0), eta_floor)


def group_function(yhat, p_a, p_b, prior_a, prior_b):
    """Signed change in a component's disparity per unit of flipped mass.

    ``(2 yhat - 1) * (p_a / prior_a - p_b / prior_b)``
    """
    sign = 2.0 * np.asarray(yhat, dtype=np.float64) - 1.0
    if np.ndim(sign) == 1 and np.ndim(p_a) == 2:
        sign = sign[:, None]
    return sign * (np.asarray(p_a) / prior_a - np.asarray(p_b) / prior_b)


def bias_scores(probs: ProbTable, criterion: CriterionSpec, eta_floor: float = DEFAULT_ETA_FLOOR) -> BiasScores:
    if probs.K != criterion.K:
        raise ValueError(f"probability table has {probs.K} components, criterion has {criterion.K}")
    prior_a, prior_b = criterion.priors()
    yhat = base_prediction(probs.p_y)
    eta = confidence(probs.p_y, eta_floor)
    f = group_function(yhat, probs.p_a, probs.p_b, prior_a[None, :], prior_b[None, :])
    return BiasScores(yhat, eta, f / eta[:, None], f)


def corrupt(probs: ProbTable, alpha: float, seed: int) -> ProbTable:
    """Add independent ``Unif(-alpha, 2 alpha)`` noise to every probability, then clip to [0, 1]."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 0:
        return replace(probs)
    rng = np.random.default_rng(seed)

    def noisy(x):
        return np.clip(x + rng.uniform(-alpha, 2.0 * alpha, size=x.shape), 0.0, 1.0)

    return ProbTable(noisy(probs.p_y), noisy(probs.p_a), noisy(probs.p_b), probs.names)


def score_columns(K: int) -> list[str]:
    return ["yhat", "eta"] + [f"s_{k + 1}" for k in range(K)] + [f"f_{k + 1}" for k in range(K)]


def write_scores(scores: BiasScores, path) -> None:
    cols = {"yhat": scores.yhat, "eta": scores.eta}
    for k in range(scores.K):
        cols[f"s_{k + 1}"] = scores.s[:, k]
    for k in range(scores.K):
        cols[f"f_{k + 1}"] = scores.f[:, k]
    write_columns(path, cols)


def load_scores(path) -> BiasScores:
    from .core import SchemaError, _column, _read_table

    header, rows = _read_table(path)
    K = sum(1 for h in header if h.startswith("s_"))
    if K == 0 or header[: 2 + 2 * K] != score_columns(K):
        raise SchemaError(f"{path}: expected columns {score_columns(max(K, 1))}")
    get = lambda name: _column(path, header, rows, name)  # noqa: E731
    s = np.stack([get(f"s_{k + 1}") for k in range(K)], axis=1)
    f = np.stack([get(f"f_{k + 1}") for k in range(K)], axis=1)
    return BiasScores(get("yhat").astype(np.int64), get("eta"), s, f)
