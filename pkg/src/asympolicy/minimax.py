"""Worst-case-regret weights, closed-form population policies, and the two
empirical minimax algorithms (constant comparator, oracle comparator)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Comparator, FeatureMap, ScoreTable, UtilitySpec, WeightTriple, as_decisions
from .errors import ConfigError, StageError, ValidationError
from .partial_id import (
    bounds_from_means,
    delta_plus_closed_form,
    delta_tau_closed_form,
    fit_delta_plus,
    fit_delta_tau,
)
from .solvers import FitResult, SolverConfig, fit_policy


@dataclass(frozen=True)
class ComparatorContext:
    comparator: Comparator
    utility: UtilitySpec
    delta_tau: Optional[np.ndarray] = None
    delta_plus: Optional[np.ndarray] = None
    pi_star_never: Optional[np.ndarray] = None
    pi_star_always: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "comparator", Comparator(self.comparator))
        for name in ("delta_tau", "delta_plus", "pi_star_never", "pi_star_always"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, as_decisions(v).astype(float))
        gaps = [name for name in self.required() if getattr(self, name) is None]
        if gaps:
            raise ConfigError(f"{self.comparator.value} comparator needs {', '.join(gaps)}")
        lengths = {len(getattr(self, name)) for name in self.required()}
        if len(lengths) > 1:
            raise ValidationError("classifier vectors differ in length")

    def required(self) -> tuple[str, ...]:
        ug_ge = self.utility.u_g >= self.utility.u_l
        if self.comparator is Comparator.NEVER:
            return ("delta_tau",) if ug_ge else ("delta_plus",)
        if self.comparator is Comparator.ALWAYS:
            return ("delta_plus",) if ug_ge else ("delta_tau",)
        return ("delta_tau", "delta_plus", "pi_star_never", "pi_star_always")


def _tau_form(dt, u: UtilitySpec):
    c1 = u.u_l + (u.u_g - u.u_l) * dt
    return c1, -c1, np.full_like(c1, -u.cost)


def _plus_form(dp, u: UtilitySpec):
    c1 = u.u_g + dp * (u.u_l - u.u_g)
    c0 = -u.u_l - dp * (u.u_g - u.u_l)
    return c1, c0, dp * (u.u_g - u.u_l) - u.cost


def _disagreement_form(dt, dp, u: UtilitySpec):
    c1 = u.u_l + u.u_g + (u.u_g - u.u_l) * (dt - dp)
    c0 = -2 * u.u_l - (u.u_g - u.u_l) * (dt + dp)
    return c1, c0, (u.u_g - u.u_l) * dp - 2 * u.cost


def build_weights(ctx: ComparatorContext) -> WeightTriple:
    """Per-unit (c1, c0, c) so that the worst-case regret is
    ``C - E[pi(X) (c1 m1 + c0 m0 + c)]``.

    For the oracle comparator the rows are checked in display order: units
    where the always-treat minimax rule declines, then units where the
    never-treat minimax rule treats, then the remaining (disagreement) units.
    """
    u = ctx.utility
    ug_ge = u.u_g >= u.u_l
    if ctx.comparator is Comparator.NEVER:
        c1, c0, c = _tau_form(ctx.delta_tau, u) if ug_ge else _plus_form(ctx.delta_plus, u)
    elif ctx.comparator is Comparator.ALWAYS:
        c1, c0, c = _plus_form(ctx.delta_plus, u) if ug_ge else _tau_form(ctx.delta_tau, u)
    else:
        dt, dp = ctx.delta_tau, ctx.delta_plus
        tau_w = _tau_form(dt, u)
        plus_w = _plus_form(dp, u)
        dis_w = _disagreement_form(dt, dp, u)
        first, second = (tau_w, plus_w) if ug_ge else (plus_w, tau_w)
        row1 = ctx.pi_star_always == 0
        row2 = ~row1 & (ctx.pi_star_never == 1)
        c1, c0, c = (np.where(row1, a, np.where(row2, b, d)) for a, b, d in zip(first, second, dis_w))
    return WeightTriple(c1, c0, c, ctx.comparator)


def constant_comparator(utility: UtilitySpec) -> Comparator:
    """Comparator targeted by the constant-comparator algorithm; ties go to never-treat."""
    return Comparator.ALWAYS if utility.u_g > utility.u_l else Comparator.NEVER


def algorithm1_weights(delta_plus, utility: UtilitySpec, comparator: Optional[Comparator] = None) -> WeightTriple:
    dp = as_decisions(delta_plus).astype(float)
    c1, c0, c = _plus_form(dp, utility)
    return WeightTriple(c1, c0, c, comparator or constant_comparator(utility))


# ----------------------------------------------------------- population rules


def symmetric_oracle(m1, m0, utility: UtilitySpec) -> np.ndarray:
    tau = np.asarray(m1, float) - np.asarray(m0, float)
    return (utility.u_g * tau >= utility.cost).astype(np.int8)


def asymmetric_oracle(m1, m0, e01, utility: UtilitySpec) -> np.ndarray:
    """Treat iff ``tau >= ((u_l - u_g)/u_g) e01 + c/u_g``; needs the true e01."""
    m1, m0, e01 = (np.asarray(v, float) for v in (m1, m0, e01))
    b = bounds_from_means(m1, m0)
    if not b.contains(e01, atol=1e-9).all():
        raise ValidationError("e01 lies outside its identification bounds")
    thresh = (utility.u_l - utility.u_g) / utility.u_g * e01 + utility.cost / utility.u_g
    return (m1 - m0 >= thresh).astype(np.int8)


def regret_margin(m1, m0, e01, utility: UtilitySpec) -> np.ndarray:
    """Per-unit gain of treating over not treating: ``u_g tau + (u_g - u_l) e01 - c``."""
    return utility.u_g * (np.asarray(m1) - np.asarray(m0)) + (utility.u_g - utility.u_l) * np.asarray(e01) - utility.cost


def margin_bounds(m1, m0, utility: UtilitySpec) -> tuple[np.ndarray, np.ndarray]:
    """Min and max of the treatment margin as e01 ranges over [L, U]."""
    b = bounds_from_means(m1, m0)
    at_l = regret_margin(m1, m0, b.lower, utility)
    at_u = regret_margin(m1, m0, b.upper, utility)
    return np.minimum(at_l, at_u), np.maximum(at_l, at_u)


def corollary_policy(
    comparator: Comparator,
    utility: UtilitySpec,
    m1,
    m0,
    delta_plus=None,
    delta_tau=None,
) -> np.ndarray:
    """Unconstrained population minimax rule relative to ``comparator``.

    The classifiers default to their closed forms evaluated at (m1, m0).
    The oracle comparator is supported only for zero cost.
    """
    comparator = Comparator(comparator)
    m1, m0 = np.asarray(m1, float), np.asarray(m0, float)
    dp = delta_plus_closed_form(m1, m0) if delta_plus is None else as_decisions(delta_plus)
    dt = delta_tau_closed_form(m1, m0) if delta_tau is None else as_decisions(delta_tau)
    ug, ul, c = utility.u_g, utility.u_l, utility.cost
    symm = (m1 - m0 >= c / ug).astype(np.int8)
    cautious = np.where(
        dp == 0,
        m1 >= (ul / ug) * m0 + c / ug,
        m1 >= (ug / ul) * m0 + (ul - ug + c) / ul,
    ).astype(np.int8)

    if comparator is Comparator.NEVER:
        return symm if ug >= ul else cautious
    if comparator is Comparator.ALWAYS:
        return cautious if ug >= ul else symm

    if c != 0:
        raise ValidationError("closed-form oracle-comparator rule needs zero cost; use algorithm2 instead")
    if ug >= ul:
        pi_always = cautious
        mid = np.where(
            dp == 0,
            m1 >= 2 * ul / (ug + ul) * m0,
            m1 >= (ug + ul) / (2 * ul) * m0 + (ul - ug) / (2 * ul),
        )
        out = np.where(dt == 1, 1, np.where(pi_always == 0, 0, mid))
    else:
        pi_never = cautious
        mid = np.where(
            dp == 0,
            m1 >= (ug + ul) / (2 * ug) * m0,
            m1 >= 2 * ug / (ug + ul) * m0 + (ul - ug) / (ug + ul),
        )
        out = np.where(pi_never == 1, 1, np.where(dt == 0, 0, mid))
    return out.astype(np.int8)


def population_constant_policies(m1, m0, utility: UtilitySpec) -> tuple[np.ndarray, np.ndarray]:
    """(never-treat minimax, always-treat minimax) from the margin bounds directly."""
    lb, ub = margin_bounds(m1, m0, utility)
    return (lb >= 0).astype(np.int8), (ub >= 0).astype(np.int8)


def population_context(comparator, utility: UtilitySpec, m1, m0) -> ComparatorContext:
    """Comparator context populated with the true classifiers."""
    never, always = population_constant_policies(m1, m0, utility)
    return ComparatorContext(
        comparator,
        utility,
        delta_tau=delta_tau_closed_form(m1, m0),
        delta_plus=delta_plus_closed_form(m1, m0),
        pi_star_never=never,
        pi_star_always=always,
    )


# ------------------------------------------------------------ the algorithms


@dataclass(frozen=True)
class PolicyClasses:
    """Feature maps for the target class and each nuisance classifier.

    Unset nuisance classes default to one notch richer than the target
    class; the intermediate constant-comparator policy defaults to it.
    """

    pi: FeatureMap
    pi_prime: Optional[FeatureMap] = None
    delta_plus: Optional[FeatureMap] = None
    delta_tau: Optional[FeatureMap] = None

    def resolved(self) -> "PolicyClasses":
        return PolicyClasses(
            self.pi,
            self.pi_prime or self.pi,
            self.delta_plus or self.pi.richer(),
            self.delta_tau or self.pi.richer(),
        )

    def to_dict(self) -> dict:
        r = self.resolved()
        return {k: getattr(r, k).to_dict() for k in ("pi", "pi_prime", "delta_plus", "delta_tau")}


@dataclass(frozen=True)
class Algorithm1Result:
    pi_hat: FitResult
    delta_plus: FitResult
    weights: WeightTriple
    comparator: Comparator
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Algorithm2Result:
    pi_hat: FitResult
    delta_plus: FitResult
    delta_tau: FitResult
    pi_always: np.ndarray
    pi_never: np.ndarray
    weights: WeightTriple
    nuisance_policies: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _stage(label, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - relabelled, then re-raised
        raise StageError(label, exc) from exc


def symmetric_ewm(scores: ScoreTable, x, utility: UtilitySpec, feature_map: FeatureMap, solver: SolverConfig = SolverConfig()) -> FitResult:
    """Empirical welfare maximisation for the symmetric utility."""
    s = utility.u_g * (scores.gamma1 - scores.gamma0) - utility.cost
    return fit_policy(x, s, feature_map, solver)


def algorithm1(
    scores: ScoreTable,
    x,
    utility: UtilitySpec,
    pi_class: FeatureMap,
    delta_plus_class: Optional[FeatureMap] = None,
    solver: SolverConfig = SolverConfig(),
    delta_plus_fit: Optional[FitResult] = None,
) -> Algorithm1Result:
    """Empirical minimax policy relative to the constant comparator matching
    the direction of asymmetry (always-treat if u_g > u_l, else never-treat)."""
    comparator = constant_comparator(utility)
    if delta_plus_fit is None:
        delta_plus_fit = _stage("delta_plus", fit_delta_plus, scores, x, delta_plus_class or pi_class.richer(), solver)
    weights = algorithm1_weights(delta_plus_fit.decisions, utility, comparator)
    s = weights.contributions(scores.gamma1, scores.gamma0)
    pi_hat = _stage("policy", fit_policy, x, s, pi_class, solver)
    return Algorithm1Result(
        pi_hat,
        delta_plus_fit,
        weights,
        comparator,
        {"comparator": comparator.value, "objective": pi_hat.objective, "delta_plus_objective": delta_plus_fit.objective},
    )


def algorithm2(
    scores: ScoreTable,
    x,
    utility: UtilitySpec,
    classes: PolicyClasses,
    solver: SolverConfig = SolverConfig(),
    delta_plus_fit: Optional[FitResult] = None,
    delta_tau_fit: Optional[FitResult] = None,
) -> Algorithm2Result:
    """Empirical minimax policy relative to the oracle.

    Stages: delta_plus; the asymmetric constant-comparator policy via
    algorithm1; the symmetric-side policy (only when cost > 0, otherwise
    delta_tau stands in); delta_tau; oracle weights; final policy.
    Pre-fitted delta_plus / delta_tau may be passed to share them across a
    utility sweep.
    """
    cl = classes.resolved()
    ug_ge = utility.u_g >= utility.u_l
    if delta_plus_fit is None:
        delta_plus_fit = _stage("delta_plus", fit_delta_plus, scores, x, cl.delta_plus, solver)
    asym = _stage("constant_comparator_policy", algorithm1, scores, x, utility, cl.pi_prime, cl.delta_plus, solver, delta_plus_fit)
    if delta_tau_fit is None:
        delta_tau_fit = _stage("delta_tau", fit_delta_tau, scores, x, cl.delta_tau, solver)

    nuisance = {"delta_plus": delta_plus_fit.policy, "delta_tau": delta_tau_fit.policy}
    if utility.cost != 0:
        sym = _stage("symmetric_policy", symmetric_ewm, scores, x, utility, cl.pi_prime, solver)
        sym_decisions = sym.decisions
        nuisance["symmetric_policy"] = sym.policy
    else:
        sym_decisions = delta_tau_fit.decisions
    if ug_ge:
        pi_always, pi_never = asym.pi_hat.decisions, sym_decisions
        nuisance["pi_always"] = asym.pi_hat.policy
    else:
        pi_always, pi_never = sym_decisions, asym.pi_hat.decisions
        nuisance["pi_never"] = asym.pi_hat.policy

    ctx = ComparatorContext(
        Comparator.ORACLE,
        utility,
        delta_tau=delta_tau_fit.decisions,
        delta_plus=delta_plus_fit.decisions,
        pi_star_never=pi_never,
        pi_star_always=pi_always,
    )
    weights = _stage("weights", build_weights, ctx)
    s = weights.contributions(scores.gamma1, scores.gamma0)
    pi_hat = _stage("policy", fit_policy, x, s, cl.pi, solver)
    return Algorithm2Result(
        pi_hat,
        delta_plus_fit,
        delta_tau_fit,
        np.asarray(pi_always),
        np.asarray(pi_never),
        weights,
        nuisance,
        {
            "objective": pi_hat.objective,
            "delta_plus_objective": delta_plus_fit.objective,
            "delta_tau_objective": delta_tau_fit.objective,
            "constant_comparator_objective": asym.pi_hat.objective,
            "extra_symmetric_stage": utility.cost != 0,
        },
    )
