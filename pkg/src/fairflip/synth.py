"""Two-dimensional Gaussian-mixture ground truth and a softmax-regression auxiliary model.

Cells are indexed by ``(y, a)``; the joint class index used throughout is
``2 * y + a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import CriterionSpec, LabeledDataset, ProbTable, probs_from_joint

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))  # ordered by class index 2y + a


@dataclass(frozen=True)
class Cell:
    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]
    count: int


@dataclass(frozen=True)
class GaussianMixtureSpec:
    cells: Mapping[tuple[int, int], Cell]

    def __post_init__(self):
        for key, cell in self.cells.items():
            if key not in CELLS:
                raise ValueError(f"cell key {key} is not a (y, a) pair of bits")
            if cell.count < 0:
                raise ValueError(f"cell {key} has negative count")
            cov = np.asarray(cell.cov, dtype=np.float64)
            if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
                raise ValueError(f"cell {key} covariance must be a symmetric 2x2 matrix")
            if np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ValueError(f"cell {key} covariance is not positive definite")

    @property
    def total(self) -> int:
        return sum(c.count for c in self.cells.values())

    def weights(self) -> np.ndarray:
        """Cell priors in class-index order, proportional to the counts."""
        counts = np.array([self.cells[k].count if k in self.cells else 0 for k in CELLS], dtype=np.float64)
        return counts / counts.sum()

    def with_total(self, n: int) -> GaussianMixtureSpec:
        """Same cells with counts rescaled to sum to ``n`` (largest-remainder rounding)."""
        keys = list(self.cells)
        raw = np.array([self.cells[k].count for k in keys], dtype=np.float64)
        raw = raw / raw.sum() * n
        counts = np.floor(raw).astype(int)
        short = n - counts.sum()
        for i in np.argsort(-(raw - counts), kind="stable")[:short]:
            counts[i] += 1
        return replace(self, cells={k: replace(self.cells[k], count=int(c)) for k, c in zip(keys, counts)})


def default_spec() -> GaussianMixtureSpec:
    """Correlated label/attribute mixture: 500, 100, 100, 500 points in cells
    (y, a) = (1, 0), (1, 1), (0, 0), (0, 1)."""
    cov = ((5.0, 1.0), (1.0, 5.0))
    return GaussianMixtureSpec(
        {
            (1, 0): Cell((2.0, 0.0), cov, 500),
            (1, 1): Cell((2.0, 3.0), cov, 100),
            (0, 0): Cell((-1.0, -3.0), cov, 100),
            (0, 1): Cell((-1.0, 0.0), cov, 500),
        }
    )


def sample(spec: GaussianMixtureSpec, seed: int) -> LabeledDataset:
    """Exactly ``count`` draws per cell, in the mixture's cell order."""
    rng = np.random.default_rng(seed)
    xs, ys, as_ = [], [], []
    for (y, a), cell in spec.cells.items():
        if cell.count == 0:
            continue
        L = np.linalg.cholesky(np.asarray(cell.cov, dtype=np.float64))
        z = rng.standard_normal((cell.count, 2))
        xs.append(np.asarray(cell.mean) + z @ L.T)
        ys.append(np.full(cell.count, y))
        as_.append(np.full(cell.count, a))
    if not xs:
        return LabeledDataset(np.zeros(0, int), {"A": np.zeros(0, int)}, np.zeros((0, 2)), ("x0", "x1"))
    return LabeledDataset(np.concatenate(ys), {"A": np.concatenate(as_)}, np.vstack(xs), ("x0", "x1"))


def cell_posteriors(spec: GaussianMixtureSpec, X) -> np.ndarray:
    """Exact ``p(Y, A | X)`` of the mixture, columns in class-index order."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    pri = spec.weights()
    logp = np.full((X.shape[0], 4), -np.inf)
    for j, key in enumerate(CELLS):
        if pri[j] == 0:
            continue
        cell = spec.cells[key]
        cov = np.asarray(cell.cov, dtype=np.float64)
        L = np.linalg.cholesky(cov)
        r = np.linalg.solve(L, (X - np.asarray(cell.mean)).T)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        logp[:, j] = np.log(pri[j]) - 0.5 * (r**2).sum(axis=0) - 0.5 * logdet - np.log(2 * np.pi)
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def true_posteriors(spec: GaussianMixtureSpec, X, criterion: CriterionSpec) -> ProbTable:
    joint = cell_posteriors(spec, X)
    return probs_from_joint(joint, criterion)


# ---------------------------------------------------------------------------
# softmax regression


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SoftmaxHyper:
    rate: float = 0.1
    iterations: int = 5000
    l2: float = 1e-4
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SoftmaxModel:
    """Multinomial logistic regression on standardized features.

    ``weights`` is ``(d + 1, C)``; its last row is the bias.
    """

    weights: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    hyper: SoftmaxHyper = field(default_factory=SoftmaxHyper)

    @property
    def n_classes(self) -> int:
        return int(self.weights.shape[1])

    def design(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _with_bias((X - self.mean) / self.std)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.design(X) @ self.weights)


def _with_bias(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(W, Xb, onehot, l2):
    """Mean cross-entropy plus ``l2 * ||W||^2`` and its gradient."""
    n = Xb.shape[0]
    logits = Xb @ W
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = -(onehot * (z - logsum[:, None])).sum() / n + l2 * (W**2).sum()
    P = np.exp(z - logsum[:, None])
    grad = Xb.T @ (P - onehot) / n + 2.0 * l2 * W
    return loss, grad


def fit_softmax(X, classes, C: int, hyper: SoftmaxHyper = SoftmaxHyper()) -> SoftmaxModel:
    """Full-batch gradient descent from a seeded small random start."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    classes = np.asarray(classes, dtype=np.int64)
    if X.shape[0] != classes.shape[0] or X.shape[0] == 0:
        raise ValueError("features and class labels must be non-empty and equally long")
    if classes.min() < 0 or classes.max() >= C:
        raise ValueError(f"class labels must lie in 0..{C - 1}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Xb = _with_bias((X - mean) / std)
    onehot = np.eye(C)[classes]
    W = 0.01 * np.random.default_rng(hyper.seed).standard_normal((Xb.shape[1], C))
    for _ in range(hyper.iterations):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = loss_and_grad(W, Xb, onehot, hyper.l2)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss}; try a smaller learning rate than {hyper.rate}")
        W = W - hyper.rate * grad
    return SoftmaxModel(W, mean, std, hyper)


def joint_classes(data: LabeledDataset, attr: str = "A") -> np.ndarray:
    return 2 * data.labels + data.column(attr)


def fit_joint_model(data: LabeledDataset, hyper: SoftmaxHyper = SoftmaxHyper(), attr: str = "A") -> SoftmaxModel:
    if data.features is None:
        raise ValueError("dataset has no features to train on")
    return fit_softmax(data.features, joint_classes(data, attr), 4, hyper)


def predict_probs(model: SoftmaxModel, X, criterion: CriterionSpec) -> ProbTable:
    if model.n_classes != 4:
        raise ValueError(f"expected a 4-class (Y, A) model, got {model.n_classes} classes")
    return probs_from_joint(model.predict_proba(X), criterion)
