"""Policy evaluation: value, true and worst-case regret, the finite-sample
excess-regret bound check, and utility-sweep frontiers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .core import STRATA, Comparator, FeatureMap, GroundTruth, ScoreTable, UtilitySpec, WeightTriple, as_decisions, rows_aligned
from .errors import CapabilityError, ValidationError
from .minimax import PolicyClasses, algorithm1, algorithm2, margin_bounds, population_constant_policies
from .partial_id import fit_delta_plus, fit_delta_tau, worst_case_error_rates
from .pool import parallel_map
from .solvers import SolverConfig

log = logging.getLogger(__name__)


def _need_scores(truth: Optional[GroundTruth]) -> np.ndarray:
    if truth is None or truth.principal_scores is None:
        raise CapabilityError("this metric needs ground-truth principal scores")
    return truth.principal_scores


def value(pi, truth: GroundTruth, utility: UtilitySpec, x=None) -> float:
    """Mean expected utility with baseline ``u(0; y1, y0) = y0``."""
    e = _need_scores(truth)
    pi = as_decisions(pi, x).astype(float)
    rows_aligned(pi, e)
    y0_of = np.array([0.0, 0.0, 1.0, 1.0])  # Y(0) in each stratum, STRATA order
    gain = utility.stratum_gain()
    treat_gain = np.array([gain[s] for s in STRATA])
    per_unit = e @ y0_of + pi * (e @ treat_gain)
    return float(per_unit.mean())


def true_regret(pi, varpi, truth: GroundTruth, utility: UtilitySpec, x=None, e01=None) -> float:
    """``mean((varpi - pi)(u_g tau + (u_g - u_l) e01 - c))``.

    ``e01`` overrides the truth's harmed-stratum score, which lets callers
    evaluate regret under any point of the identified set.
    """
    pi = as_decisions(pi, x).astype(float)
    varpi = as_decisions(varpi, x).astype(float)
    if e01 is None:
        _need_scores(truth)
        e01 = truth.e01
    tau = truth.tau
    rows_aligned(pi, varpi, tau, e01)
    b = utility.u_g * tau + (utility.u_g - utility.u_l) * np.asarray(e01, float) - utility.cost
    return float(np.mean((varpi - pi) * b))


@dataclass(frozen=True)
class RegretEstimate:
    value: float
    mode: str  # "estimation" (scores) or "population" (true means)


def worst_case_regret(pi, weights: WeightTriple, scores: Optional[ScoreTable] = None, m1=None, m0=None, x=None) -> RegretEstimate:
    """Policy-dependent part ``-(1/n) sum pi (c1 G1 + c0 G0 + c)``.

    Pass a score table for the empirical objective or (m1, m0) for the
    population version at the sample points; the comparator constant is
    not included.
    """
    if (scores is None) == (m1 is None or m0 is None):
        raise ValidationError("supply exactly one of: scores, or both m1 and m0")
    if scores is not None:
        g1, g0, mode = scores.gamma1, scores.gamma0, "estimation"
    else:
        g1, g0, mode = np.asarray(m1, float), np.asarray(m0, float), "population"
    pi = as_decisions(pi, x).astype(float)
    rows_aligned(pi, g1, weights.c1)
    return RegretEstimate(float(-np.mean(pi * weights.contributions(g1, g0))), mode)


def worst_case_constant(comparator, m1, m0, utility: UtilitySpec, pi_star_never=None, pi_star_always=None) -> float:
    """The comparator-specific constant C of the worst-case regret at the sample points."""
    comparator = Comparator(comparator)
    _, ub = margin_bounds(m1, m0, utility)
    if comparator is Comparator.NEVER:
        return 0.0
    if comparator is Comparator.ALWAYS:
        return float(ub.mean())
    if pi_star_never is None or pi_star_always is None:
        pi_star_never, pi_star_always = population_constant_policies(m1, m0, utility)
    row1 = np.asarray(pi_star_always) == 0
    return float(np.where(row1, 0.0, ub).mean())


# --------------------------------------------------- excess-regret bound check


@dataclass(frozen=True)
class ExcessRegretReport:
    excess: float
    sup_term: float
    cost_term: float
    weight_term: float
    xi: float
    bound_stated: float
    bound_proof: float
    misclass_bound: Optional[float] = None
    misclassification: Optional[float] = None

    @property
    def slack(self) -> float:
        return self.bound_stated - self.excess

    @property
    def holds(self) -> bool:
        return self.excess <= self.bound_stated + 1e-12

    @property
    def holds_proof_form(self) -> bool:
        return self.excess <= self.bound_proof + 1e-12

    @property
    def misclass_form_holds(self) -> Optional[bool]:
        if self.misclass_bound is None:
            return None
        return self.excess <= self.misclass_bound + 1e-12

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out.update(slack=self.slack, holds=self.holds, holds_proof_form=self.holds_proof_form, misclass_form_holds=self.misclass_form_holds)
        return out


def check_prop1(
    pi_hat,
    pi_star,
    scores: ScoreTable,
    m1,
    m0,
    true_weights: WeightTriple,
    est_weights: WeightTriple,
    class_decisions: np.ndarray,
    delta_plus_hat=None,
    delta_plus=None,
    utility: Optional[UtilitySpec] = None,
) -> ExcessRegretReport:
    """Evaluate both sides of the excess worst-case-regret bound.

    Regrets are the policy-dependent parts: the population value uses the
    true means at the sample points and true weights; the intermediate one
    uses scores with true weights. ``class_decisions`` is a (K, n) matrix
    enumerating the policy class, over which the sup is taken. The bound is
    reported both as stated and with the factor 2 its proof delivers.
    When the misclassification inputs are given the specialised form
    ``3 xi (u_l - u_g) * rate`` is also returned.
    """
    m1, m0 = np.asarray(m1, float), np.asarray(m0, float)
    pop = lambda p: worst_case_regret(p, true_weights, m1=m1, m0=m0).value
    K = np.asarray(class_decisions, float)
    s_pop = true_weights.contributions(m1, m0)
    s_tilde = true_weights.contributions(scores.gamma1, scores.gamma0)
    sup_term = float(np.max(np.abs(K @ (s_tilde - s_pop))) / len(m1))
    excess = pop(pi_hat) - pop(pi_star)
    cost_term = float(np.mean(np.abs(est_weights.c - true_weights.c)))
    weight_term = float(np.abs(est_weights.c1 - true_weights.c1).mean() + np.abs(est_weights.c0 - true_weights.c0).mean())
    xi = scores.xi
    stated = sup_term + cost_term + xi * weight_term
    proof = 2 * stated
    cor = rate = None
    if delta_plus_hat is not None and delta_plus is not None and utility is not None:
        rate = float(np.mean(as_decisions(delta_plus_hat) != as_decisions(delta_plus)))
        cor = sup_term + 3 * xi * abs(utility.u_l - utility.u_g) * rate
    return ExcessRegretReport(excess, sup_term, cost_term, weight_term, xi, stated, proof, cor, rate)


# ------------------------------------------------------------------ frontier


@dataclass(frozen=True)
class FrontierTable:
    rows: pd.DataFrame  # one row per swept u_l
    endpoints: pd.DataFrame  # never-treat and always-treat reference rows
    envelope: pd.DataFrame
    failures: list = field(default_factory=list)

    def all_points(self) -> pd.DataFrame:
        return pd.concat([self.rows, self.endpoints], ignore_index=True)


def lower_convex_envelope(fp, fn) -> np.ndarray:
    """Vertices of the lower convex hull of the (fp, fn) cloud, sorted by fp."""
    pts = sorted(set(zip(np.round(fp, 15), np.round(fn, 15))))
    hull: list = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return np.array(hull, dtype=float).reshape(-1, 2)


FRONTIER_COLUMNS = ["point", "u_l", "u_g", "symmetric", "worst_case_fp", "worst_case_fn", "treated_fraction", "expected_outcome", "objective"]


def _frontier_row(label, u_l, pi, scores: ScoreTable, delta_plus, utility_base: UtilitySpec, objective=np.nan) -> dict:
    pi = np.asarray(pi, float)
    fp, fn = worst_case_error_rates(pi, scores.gamma1, scores.gamma0, delta_plus)
    return {
        "point": label,
        "u_l": u_l,
        "u_g": utility_base.u_g,
        "symmetric": bool(np.isclose(u_l, utility_base.u_g)) if np.isfinite(u_l) else False,
        "worst_case_fp": fp,
        "worst_case_fn": fn,
        "treated_fraction": float(pi.mean()),
        "expected_outcome": float(np.mean(pi * scores.gamma1 + (1 - pi) * scores.gamma0)),
        "objective": objective,
    }


@dataclass(frozen=True)
class _SweepPoint:
    u_l: float
    scores: ScoreTable
    x: np.ndarray
    utility_base: UtilitySpec
    classes: PolicyClasses
    solver: SolverConfig
    mode: str
    delta_plus: object
    delta_tau: object


def _run_point(pt: _SweepPoint):
    u = UtilitySpec(pt.utility_base.u_g, pt.u_l, pt.utility_base.cost)
    cl = pt.classes.resolved()
    if pt.mode == "oracle":
        res = algorithm2(pt.scores, pt.x, u, cl, pt.solver, pt.delta_plus, pt.delta_tau)
    else:
        res = algorithm1(pt.scores, pt.x, u, cl.pi, cl.delta_plus, pt.solver, pt.delta_plus)
    return res.pi_hat.decisions, res.pi_hat.objective


def frontier_sweep(
    scores: ScoreTable,
    x,
    u_l_grid: Sequence[float],
    utility_base: UtilitySpec,
    classes: PolicyClasses,
    solver: SolverConfig = SolverConfig(),
    mode: str = "constant",
    workers: int = 1,
    include_endpoints: bool = True,
) -> FrontierTable:
    """Fit the minimax policy at each u_l and tabulate worst-case error rates.

    ``mode`` is "constant" (algorithm1) or "oracle" (algorithm2). The
    nuisance classifiers do not depend on u_l and are fitted once. Rates
    are plug-in bounds using the scores; ``expected_outcome`` is the
    uncentred mean of the score of the assigned arm, i.e. the estimated
    P(Y = 1) under the policy (mortality if Y codes death).
    """
    if mode not in ("constant", "oracle"):
        raise ValidationError("mode must be 'constant' or 'oracle'")
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    cl = classes.resolved()
    dp = fit_delta_plus(scores, x, cl.delta_plus, solver)
    dt = fit_delta_tau(scores, x, cl.delta_tau, solver) if mode == "oracle" else None
    points = [_SweepPoint(float(u), scores, x, utility_base, cl, solver, mode, dp, dt) for u in u_l_grid]
    results = parallel_map(_run_point, points, workers, return_exceptions=True)

    rows, failures = [], []
    for u, res in zip(u_l_grid, results):
        if isinstance(res, Exception):
            log.warning("frontier point u_l=%s failed: %s", u, res)
            failures.append({"u_l": float(u), "error": f"{type(res).__name__}: {res}"})
            continue
        decisions, obj = res
        rows.append(_frontier_row("swept", float(u), decisions, scores, dp.decisions, utility_base, obj))
    ends = []
    if include_endpoints:
        n = scores.n
        ends.append(_frontier_row("never_treat", np.nan, np.zeros(n), scores, dp.decisions, utility_base))
        ends.append(_frontier_row("always_treat", np.nan, np.ones(n), scores, dp.decisions, utility_base))
    table = pd.DataFrame(rows, columns=FRONTIER_COLUMNS)
    endpoints = pd.DataFrame(ends, columns=FRONTIER_COLUMNS)
    cloud = pd.concat([table, endpoints], ignore_index=True)
    hull = lower_convex_envelope(cloud["worst_case_fp"].to_numpy(), cloud["worst_case_fn"].to_numpy()) if len(cloud) else np.empty((0, 2))
    envelope = pd.DataFrame(hull, columns=["worst_case_fp", "worst_case_fn"])
    return FrontierTable(table, endpoints, envelope, failures)
