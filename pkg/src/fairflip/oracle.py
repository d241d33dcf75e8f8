"""Exact optimal flipping on a finite sample.

The finite-sample problem is the linear program

    minimize    (1/n) sum_i eta_i kappa_i
    subject to  | c*_k - (1/n) sum_i kappa_i F_ik | <= delta,   k = 1..K
                0 <= kappa_i <= 1

whose objective is the accuracy lost by flipping and whose constraints bound
each signed disparity after flipping. Writing the multipliers of the upper and
lower constraint of component ``k`` as ``z_up[k], z_lo[k]`` and ``w = z_lo - z_up``,
the dual reduces to the unconstrained piecewise-linear problem

    min_w  h(w) = delta |w|_1 - c* . w + (1/n) sum_i (F_i . w - eta_i)_+

with primal optimum ``-min h``; a minimizer yields the rule ``1{w . s > 1}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import CriterionSpec, LabeledDataset, ModificationRule
from .metrics import composite, empirical_group_functions
from .scores import BiasScores
from .simplex import LPInfeasible, solve_bounded

FEAS_TOL = 1e-9
GAP_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class LpInstance:
    eta: np.ndarray
    F: np.ndarray
    c_star: np.ndarray
    delta: float

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64)
        F = np.asarray(self.F, dtype=np.float64)
        if F.ndim == 1:
            F = F[:, None]
        c_star = np.atleast_1d(np.asarray(self.c_star, dtype=np.float64))
        if eta.ndim != 1 or F.shape[0] != eta.shape[0] or c_star.shape != (F.shape[1],):
            raise ValueError(f"inconsistent shapes eta={eta.shape} F={F.shape} c_star={c_star.shape}")
        if not np.all(eta > 0):
            raise ValueError("eta must be strictly positive")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "c_star", c_star)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        return int(self.eta.shape[0])

    @property
    def K(self) -> int:
        return int(self.F.shape[1])

    def constraint_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows ``[F^T; -F^T] / n`` and bounds ``(c* + delta, -c* + delta)``."""
        G = np.vstack([self.F.T, -self.F.T]) / self.n
        b = np.concatenate([self.c_star + self.delta, -self.c_star + self.delta])
        return G, b

    def disparities_after(self, kappa) -> np.ndarray:
        return self.c_star - np.asarray(kappa, dtype=np.float64) @ self.F / self.n

    def objective(self, kappa) -> float:
        return float(self.eta @ np.asarray(kappa, dtype=np.float64) / self.n)

    def is_feasible(self, kappa, tol=FEAS_TOL) -> bool:
        return bool(np.all(np.abs(self.disparities_after(kappa)) <= self.delta + tol))


def instance_from_scores(
    scores: BiasScores,
    delta: float,
    val: LabeledDataset | None = None,
    criterion: CriterionSpec | None = None,
) -> LpInstance:
    """Build the flipping LP for a scored sample.

    With ``val`` and ``criterion`` the group functions are the indicator-based
    empirical ones and ``c*`` the base predictions' empirical disparities, so
    the LP constraints coincide with the validation criterion. Without them,
    the model group functions ``scores.f`` are used, with ``c*`` the
    model-implied disparity ``(1/n) sum_{yhat=1} f``.
    """
    if val is None:
        c_star = scores.f[scores.yhat == 1].sum(axis=0) / scores.n
        return LpInstance(scores.eta, scores.f, c_star, delta)
    if criterion is None:
        raise ValueError("criterion is required with a validation set")
    F = empirical_group_functions(scores.yhat, val, criterion)
    c_star = np.array(composite(scores.yhat, val, criterion).disparities)
    return LpInstance(scores.eta, F, c_star, delta)


@dataclass
class LpSolution:
    kappa: np.ndarray
    objective: float
    z: np.ndarray  # (z_up, z_lo), length 2K
    status: str
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def weights(self) -> np.ndarray:
        K = self.z.shape[0] // 2
        return self.z[K:] - self.z[:K]

    @property
    def fractional(self) -> np.ndarray:
        return np.flatnonzero((self.kappa > FEAS_TOL) & (self.kappa < 1 - FEAS_TOL))

    @property
    def deterministic(self) -> np.ndarray:
        """Flip mask with fractional coordinates rounded toward no flip."""
        return self.kappa >= 1 - FEAS_TOL

    @property
    def fractional_mass(self) -> float:
        return float(self.kappa[self.fractional].sum())


def solve_primal(inst: LpInstance) -> LpSolution:
    G, b = inst.constraint_matrix()
    n = inst.n
    # scaled by n so coefficients are O(1); multipliers are unchanged
    try:
        res = solve_bounded(inst.eta, G * n, b * n, 1.0)
    except LPInfeasible:
        return LpSolution(np.zeros(n), float("nan"), np.zeros(2 * inst.K), "infeasible")
    return LpSolution(
        kappa=res.x,
        objective=inst.objective(res.x),
        z=np.maximum(-res.duals, 0.0),
        status="optimal",
        reduced_costs=res.reduced_costs / n,
    )


def complementary_slackness(inst: LpInstance, sol: LpSolution) -> float:
    G, b = inst.constraint_matrix()
    slack = b - G @ sol.kappa
    rows = np.abs(sol.z * slack)
    rc = (inst.eta + (sol.z @ G) * inst.n) / inst.n
    k = sol.kappa
    cols = np.maximum(k * np.maximum(rc, 0.0), (1 - k) * np.maximum(-rc, 0.0))
    return float(max(rows.max(initial=0.0), cols.max(initial=0.0)))


def dual_objective(inst: LpInstance, w) -> float:
    """``h(w)``; the primal optimum equals ``-min_w h(w)``."""
    w = np.asarray(w, dtype=np.float64)
    hinge = np.maximum(inst.F @ w - inst.eta, 0.0).sum() / inst.n
    return float(inst.delta * np.abs(w).sum() - inst.c_star @ w + hinge)


def _subgradient(inst: LpInstance, w):
    active = (inst.F @ w - inst.eta) > 0
    return inst.delta * np.sign(w) - inst.c_star + inst.F[active].sum(axis=0) / inst.n


def _vertices(inst: LpInstance, planes: np.ndarray) -> np.ndarray:
    """Intersections of ``K`` hyperplanes among the kinks ``F_i . w = eta_i``
    (indices ``planes``) and the axes ``w_k = 0``."""
    K = inst.K
    normals = np.vstack([inst.F[planes], np.eye(K)])
    offsets = np.concatenate([inst.eta[planes], np.zeros(K)])
    out = []
    for combo in itertools.combinations(range(normals.shape[0]), K):
        Nm = normals[list(combo)]
        if abs(np.linalg.det(Nm)) < 1e-12 * max(1.0, np.abs(Nm).max() ** K):
            continue
        out.append(np.linalg.solve(Nm, offsets[list(combo)]))
    return np.array(out) if out else np.zeros((0, K))


def solve_dual(
    inst: LpInstance, *, restarts: int = 4, iters: int = 2000, seed: int = 0, exact_below: int = 60
) -> tuple[np.ndarray, float]:
    """Minimize ``h`` by projected-free subgradient descent with restarts, then
    polish by evaluating ``h`` at nearby vertices of its kink arrangement.

    Returns ``(z, value)`` with ``z = (z_up, z_lo) >= 0`` and ``value = -h``,
    which equals the primal optimum at a minimizer. For ``n <= exact_below``
    every vertex is checked, so the minimum is exact.
    """
    rng = np.random.default_rng(seed)
    K = inst.K
    fabs = np.abs(inst.F[np.any(inst.F != 0, axis=1)])
    scale = float(np.median(inst.eta) / np.median(fabs)) if fabs.size else 1.0

    best_w, best_h = np.zeros(K), dual_objective(inst, np.zeros(K))
    for r in range(restarts):
        w = np.zeros(K) if r == 0 else rng.standard_normal(K) * scale
        step0 = scale * 10.0 ** (r % 3 - 1)
        for t in range(1, iters + 1):
            g = _subgradient(inst, w)
            gn = np.linalg.norm(g)
            if gn == 0:
                break
            w = w - step0 / np.sqrt(t) * g / gn
            h = dual_objective(inst, w)
            if h < best_h:
                best_w, best_h = w.copy(), h

    if inst.n <= exact_below:
        verts = _vertices(inst, np.arange(inst.n))
        best_w, best_h = _best_of(inst, verts, best_w, best_h)
    else:
        for _ in range(50):
            dist = np.abs(inst.F @ best_w - inst.eta) / (np.linalg.norm(inst.F, axis=1) + 1e-300)
            near = np.argsort(dist, kind="stable")[: 8 + 4 * K]
            w_new, h_new = _best_of(inst, _vertices(inst, near), best_w, best_h)
            if h_new >= best_h:
                break
            best_w, best_h = w_new, h_new

    z = np.concatenate([np.maximum(-best_w, 0.0), np.maximum(best_w, 0.0)])
    return z, -best_h


def _best_of(inst, verts, best_w, best_h):
    if verts.shape[0] == 0:
        return best_w, best_h
    hinge = np.maximum(verts @ inst.F.T - inst.eta[None, :], 0.0).sum(axis=1) / inst.n
    h = inst.delta * np.abs(verts).sum(axis=1) - verts @ inst.c_star + hinge
    i = int(np.argmin(h))
    if h[i] < best_h:
        return verts[i], float(h[i])
    return best_w, best_h


def rule_from_dual(z, **provenance) -> ModificationRule:
    """Signed weights ``z_lo - z_up`` of the rule ``1{w . s > 1}``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] % 2:
        raise ValueError("dual vector must have even length 2K")
    K = z.shape[0] // 2
    prov = {"algorithm": "lp-dual"}
    prov.update(provenance)
    return ModificationRule(z[K:] - z[:K], 1.0, prov)


@dataclass
class BruteForceResult:
    kappa: np.ndarray | None
    objective: float
    status: str


def brute_force(inst: LpInstance, max_n: int = 20, tol: float = 1e-12) -> BruteForceResult:
    """Best deterministic flip vector by exhaustive enumeration of all ``2^n`` masks."""
    n = inst.n
    if n > max_n:
        raise ValueError(f"brute force limited to n <= {max_n}, got {n}")
    best = None
    chunk = 1 << min(n, 16)
    bits = 1 << np.arange(n)
    for lo in range(0, 1 << n, chunk):
        codes = np.arange(lo, min(lo + chunk, 1 << n))
        masks = ((codes[:, None] & bits[None, :]) != 0).astype(np.float64)
        obj = masks @ inst.eta / n
        disp = inst.c_star[None, :] - masks @ inst.F / n
        ok = np.all(np.abs(disp) <= inst.delta + tol, axis=1)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        i = cand[np.lexsort((masks[cand].sum(axis=1), obj[cand]))[0]]
        if best is None or obj[i] < best[1] or (obj[i] == best[1] and masks[i].sum() < best[0].sum()):
            best = (masks[i].astype(bool), float(obj[i]))
    if best is None:
        return BruteForceResult(None, float("inf"), "infeasible")
    return BruteForceResult(best[0], best[1], "optimal")
