"""Minimisers for weighted-classification objectives.

All policy-learning steps reduce to

    min_pi  -(1/n) sum_i pi(X_i) * s_i,

where ``s_i`` is the objective contribution of treating unit i. Two routes
are offered: an exact direct search over one-dimensional thresholds and a
weighted soft-margin linear SVM solved in the dual by pairwise coordinate
descent.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import FeatureKind, FeatureMap, LinearPolicy, ScoreTable, WeightTriple, rows_aligned
from .errors import ConfigError, ConvergenceError, ValidationError

log = logging.getLogger(__name__)

ZERO_WEIGHT = 1e-12
C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class WeightedClassificationProblem:
    features: np.ndarray
    pseudo_labels: np.ndarray
    weights: np.ndarray
    feature_map: FeatureMap = field(default_factory=FeatureMap.identity)
    n_inputs: Optional[int] = None

    def __post_init__(self):
        phi = np.asarray(self.features, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        y = np.asarray(self.pseudo_labels, dtype=float)
        g = np.asarray(self.weights, dtype=float)
        rows_aligned(phi, y, g)
        if not np.isin(y, (-1.0, 1.0)).all():
            raise ValidationError("pseudo labels must be +-1")
        if (g < 0).any():
            raise ValidationError("weights must be non-negative")
        for name, v in (("features", phi), ("pseudo_labels", y), ("weights", g)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def contributions(self) -> np.ndarray:
        return self.pseudo_labels * self.weights


def problem_from_contributions(x, s, feature_map: FeatureMap) -> WeightedClassificationProblem:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    s = np.asarray(s, dtype=float)
    rows_aligned(x, s)
    labels = np.where(s >= 0, 1.0, -1.0)
    gamma = np.abs(s)
    gamma = np.where(gamma < ZERO_WEIGHT, 0.0, gamma)
    return WeightedClassificationProblem(feature_map.transform(x), labels, gamma, feature_map, x.shape[1])


def build_problem(scores: ScoreTable, weights: WeightTriple, feature_map: FeatureMap, x) -> WeightedClassificationProblem:
    """Pseudo-labels and weights from scores and a weight triple."""
    rows_aligned(scores.gamma1, weights.c1, np.asarray(x))
    s = weights.contributions(scores.gamma1, scores.gamma0)
    return problem_from_contributions(x, s, feature_map)


def empirical_objective(decisions, s) -> float:
    decisions = np.asarray(decisions, dtype=float)
    s = np.asarray(s, dtype=float)
    return float(-(decisions * s).sum() / len(s))


# ------------------------------------------------------------------ exact 1-D


@dataclass(frozen=True)
class ThresholdCandidate:
    objective: float
    n_treated: int
    threshold: float
    orientation: int  # +1: treat x >= t, -1: treat x <= t


def threshold_candidates(v: np.ndarray, s: np.ndarray) -> list[ThresholdCandidate]:
    """Every distinct threshold policy on ``v`` (both orientations, +-inf included)."""
    n = len(v)
    order = np.argsort(v, kind="stable")
    vs, ss = v[order], s[order]
    prefix = np.concatenate([[0.0], np.cumsum(ss)])
    total = prefix[-1]
    cuts = [0] + [k for k in range(1, n) if vs[k - 1] < vs[k]] + [n]
    out = []
    for k in cuts:
        t = -np.inf if k == 0 else np.inf if k == n else 0.5 * (vs[k - 1] + vs[k])
        out.append(ThresholdCandidate(-(total - prefix[k]) / n, n - k, t, +1))
        out.append(ThresholdCandidate(-prefix[k] / n, k, t, -1))
    return out


def solve_exact_1d(problem: WeightedClassificationProblem, column: int = 0) -> LinearPolicy:
    """Global minimiser over threshold rules on one feature column.

    Ties in objective go to the rule treating fewer units, then to the
    smaller threshold.
    """
    v = problem.features[:, column]
    s = problem.contributions
    n = len(s)
    cands = threshold_candidates(v, s)
    objs = np.array([c.objective for c in cands])
    tol = 1e-12 * max(1.0, np.abs(s).sum()) / max(n, 1)
    best = objs.min()
    tied = [c for c, o in zip(cands, objs) if o <= best + tol]
    pick = min(tied, key=lambda c: (c.n_treated, c.threshold))

    if problem.feature_map.kind is FeatureKind.THRESHOLD_1D:
        fmap, n_inputs = problem.feature_map, problem.n_inputs
    else:
        # the rule is then expressed over the problem's feature columns
        fmap, n_inputs = FeatureMap.threshold_1d(column), None
    if pick.n_treated == 0:
        return LinearPolicy(-1.0, [0.0], fmap, n_inputs)
    if pick.n_treated == n:
        return LinearPolicy(0.0, [0.0], fmap, n_inputs)
    t = pick.threshold
    if pick.orientation > 0:
        return LinearPolicy(-t, [1.0], fmap, n_inputs)
    return LinearPolicy(t, [-1.0], fmap, n_inputs)


def enumerate_threshold_policies(v) -> np.ndarray:
    """Decision matrix (one row per distinct threshold policy) for a 1-D covariate."""
    v = np.asarray(v, dtype=float)
    rows = set()
    uniq = np.unique(v)
    cuts = np.concatenate([[-np.inf], 0.5 * (uniq[1:] + uniq[:-1]), [np.inf]])
    for t in cuts:
        rows.add(tuple((v >= t).astype(np.int8)))
        rows.add(tuple((v <= t).astype(np.int8)))
    return np.array(sorted(rows), dtype=np.int8)


# ---------------------------------------------------------------------- SVM


@dataclass(frozen=True)
class SvmSolution:
    beta0: float
    beta: np.ndarray
    alpha: np.ndarray
    C_reg: float
    kkt_residual: float
    iterations: int = 0
    dual_gap: float = 0.0
    dual_objective: float = 0.0
    beta0_unrestricted: Optional[float] = None
    trace: tuple = ()

    def policy(self, feature_map: FeatureMap, n_inputs: Optional[int] = None) -> LinearPolicy:
        return LinearPolicy(self.beta0, self.beta, feature_map, n_inputs)

    def diagnostics(self) -> dict:
        return {
            "C_reg": self.C_reg,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "dual_gap": self.dual_gap,
            "dual_objective": self.dual_objective,
            "beta0_unrestricted": self.beta0_unrestricted,
            "trace": list(self.trace),
        }


def solve_svm(
    problem: WeightedClassificationProblem,
    C_reg: float = 1.0,
    tolerance: float = 1e-6,
    max_iter: int = 500_000,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
    trace_every: int = 1000,
) -> SvmSolution:
    """Weighted soft-margin linear SVM via pairwise updates of the dual.

    Dual: minimise ``0.5 a'Qa - sum(a)`` subject to ``sum(y a) = 0`` and
    ``0 <= a_i <= C_reg * w_i``, with ``Q_ij = y_i y_j phi_i . phi_j``.
    Each step moves the most violating pair (second-order working-set
    choice) along the direction that keeps the equality constraint.
    """
    if not C_reg > 0:
        raise ValidationError("C_reg must be positive")
    phi = problem.features
    y = problem.pseudo_labels
    ub = problem.weights * C_reg
    n, q = phi.shape
    active = ub > 0
    sqnorm = np.einsum("ij,ij->i", phi, phi)

    alpha = np.zeros(n)
    beta = np.zeros(q)
    grad = -np.ones(n)  # Q alpha - 1
    trace = []
    gap = 0.0
    it = 0
    while True:
        ygrad = -y * grad
        at_ub = alpha >= ub
        at_lb = alpha <= 0
        up = active & (((y > 0) & ~at_ub) | ((y < 0) & ~at_lb))
        low = active & (((y > 0) & ~at_lb) | ((y < 0) & ~at_ub))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(ygrad[up])])
        m_up = ygrad[i]
        M_low = ygrad[low].min()
        gap = m_up - M_low
        if trace_every and it % trace_every == 0:
            trace.append((it, float(gap)))
        if gap <= tolerance:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SVM did not converge in {max_iter} iterations (KKT gap {gap:.3g})",
                residual=float(gap),
                trace=trace,
            )
        # second-order choice of the partner
        cand = low & (ygrad < m_up)
        idx = np.flatnonzero(cand)
        b = m_up - ygrad[idx]
        a = sqnorm[i] + sqnorm[idx] - 2.0 * (phi[idx] @ phi[i])
        a = np.where(a > 1e-12, a, 1e-12)
        j = int(idx[np.argmin(-(b * b) / a)])

        quad = sqnorm[i] + sqnorm[j] - 2.0 * float(phi[i] @ phi[j])
        lim_i = ub[i] - alpha[i] if y[i] > 0 else alpha[i]
        lim_j = alpha[j] if y[j] > 0 else ub[j] - alpha[j]
        step = min(lim_i, lim_j)
        if quad > 1e-12:
            step = min(step, (m_up - ygrad[j]) / quad)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # snap to the box to keep feasibility exact
        for t in (i, j):
            if alpha[t] < 1e-14 * max(1.0, ub[t]):
                alpha[t] = 0.0
            elif alpha[t] > ub[t] - 1e-14 * max(1.0, ub[t]):
                alpha[t] = ub[t]
        dbeta = step * (phi[i] - phi[j])
        beta += dbeta
        grad += y * (phi @ dbeta)
        it += 1
        if callback is not None:
            callback(it, alpha)

    beta = phi.T @ (y * alpha)
    beta0, unrestricted = _intercept(phi, y, alpha, ub, beta, active)
    f = beta0 + phi @ beta
    kkt = _kkt_residual(y * f, alpha, ub, active)
    dual = 0.5 * float(beta @ beta) - float(alpha.sum())
    trace.append((it, float(gap)))
    return SvmSolution(beta0, beta, alpha, C_reg, kkt, it, float(gap), dual, unrestricted, tuple(trace))


def _intercept(phi, y, alpha, ub, beta, active):
    v = y - phi @ beta
    eps = 1e-10 * np.maximum(1.0, ub)
    free = active & (alpha > eps) & (alpha < ub - eps)
    below = active & (alpha < ub - eps)
    unrestricted = float(v[below].mean()) if below.any() else None
    if free.any():
        return float(v[free].mean()), unrestricted
    at0 = active & ~free & (alpha <= eps)
    atC = active & ~free & ~at0
    lower = np.concatenate([v[at0 & (y > 0)], v[atC & (y < 0)]])
    upper = np.concatenate([v[at0 & (y < 0)], v[atC & (y > 0)]])
    lo = lower.max() if lower.size else None
    hi = upper.min() if upper.size else None
    if lo is not None and hi is not None:
        return float(0.5 * (lo + hi)), unrestricted
    if lo is not None:
        return float(lo), unrestricted
    if hi is not None:
        return float(hi), unrestricted
    return 0.0, unrestricted


def _kkt_residual(margin, alpha, ub, active) -> float:
    if not active.any():
        return 0.0
    eps = 1e-10 * np.maximum(1.0, ub)
    at0 = alpha <= eps
    atC = alpha >= ub - eps
    viol = np.where(at0, np.maximum(0.0, 1.0 - margin), np.where(atC, np.maximum(0.0, margin - 1.0), np.abs(margin - 1.0)))
    return float(viol[active].max())


def hinge_risk(problem: WeightedClassificationProblem, beta0: float, beta: np.ndarray) -> float:
    f = beta0 + problem.features @ beta
    return float((problem.weights * np.maximum(0.0, 1.0 - problem.pseudo_labels * f)).sum())


def select_C(
    problem: WeightedClassificationProblem,
    grid: Sequence[float] = C_GRID,
    n_folds: int = 5,
    seed: int = 0,
    tolerance: float = 1e-6,
    max_iter: int = 500_000,
) -> float:
    """Pick C_reg by held-out weighted hinge loss."""
    n = problem.n
    folds = np.random.default_rng(seed).permutation(n) % n_folds
    losses = []
    for C in grid:
        total = 0.0
        for k in range(n_folds):
            tr, te = folds != k, folds == k
            sub = WeightedClassificationProblem(problem.features[tr], problem.pseudo_labels[tr], problem.weights[tr])
            held = WeightedClassificationProblem(problem.features[te], problem.pseudo_labels[te], problem.weights[te])
            sol = solve_svm(sub, C, tolerance, max_iter, trace_every=0)
            total += hinge_risk(held, sol.beta0, sol.beta)
        losses.append(total)
    return float(grid[int(np.argmin(losses))])


# ---------------------------------------------------------- common front end


class SolverKind(str, enum.Enum):
    EXACT = "exact"
    SVM = "svm"


@dataclass(frozen=True)
class SolverConfig:
    kind: SolverKind = SolverKind.EXACT
    C_reg: Optional[float] = 1.0  # None selects C by cross-validation
    tolerance: float = 1e-6
    max_iter: int = 500_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SolverKind(self.kind))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "C_reg": self.C_reg, "tolerance": self.tolerance, "max_iter": self.max_iter, "seed": self.seed}


@dataclass(frozen=True)
class FitResult:
    policy: LinearPolicy
    objective: float
    decisions: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def fit_policy(x, s, feature_map: FeatureMap, solver: SolverConfig = SolverConfig()) -> FitResult:
    """Minimise ``-(1/n) sum pi(x_i) s_i`` over the class defined by ``feature_map``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    problem = problem_from_contributions(x, s, feature_map)
    diagnostics: dict = {"solver": solver.kind.value}
    if solver.kind is SolverKind.EXACT:
        if feature_map.kind is not FeatureKind.THRESHOLD_1D:
            raise ConfigError(f"exact search supports threshold_1d classes only, not {feature_map.kind.value}")
        policy = solve_exact_1d(problem)
    else:
        C = solver.C_reg
        if C is None:
            C = select_C(problem, seed=solver.seed, tolerance=solver.tolerance, max_iter=solver.max_iter)
            diagnostics["C_selected"] = C
        sol = solve_svm(problem, C, solver.tolerance, solver.max_iter)
        diagnostics.update(sol.diagnostics())
        policy = sol.policy(feature_map, x.shape[1])
    decisions = policy.decide(x)
    return FitResult(policy, empirical_objective(decisions, s), decisions, diagnostics)
