"""Bounds on the harmed-stratum principal score and the classifiers built on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureMap, ScoreTable, as_decisions, rows_aligned
from .errors import ValidationError
from .solvers import FitResult, SolverConfig, fit_policy

_SLACK = 1e-12


def _unit_interval(name, v) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if ((v < -_SLACK) | (v > 1 + _SLACK)).any() or not np.isfinite(v).all():
        raise ValidationError(f"{name} must lie in [0, 1]")
    return np.clip(v, 0.0, 1.0)


@dataclass(frozen=True)
class BoundPair:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape:
            raise ValidationError("bounds differ in length")
        if (lo < 0).any() or (hi > 1).any() or (lo > hi + _SLACK).any():
            raise ValidationError("bounds must satisfy 0 <= L <= U <= 1")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, e01, atol: float = 0.0) -> np.ndarray:
        e01 = np.asarray(e01, float)
        return (e01 >= self.lower - atol) & (e01 <= self.upper + atol)


def bounds_from_means(m1, m0) -> BoundPair:
    """Sharp bounds ``L = max(0, m0 - m1)``, ``U = min(m0, 1 - m1)``."""
    m1, m0 = _unit_interval("m1", m1), _unit_interval("m0", m0)
    rows_aligned(m1, m0)
    lower = np.maximum(0.0, m0 - m1)
    upper = np.minimum(m0, 1.0 - m1)
    upper = np.where(np.abs(upper) <= _SLACK, 0.0, upper)
    lower = np.where(lower > upper, upper, lower)  # only rounding can produce this
    return BoundPair(lower, upper)


def implied_strata(m1, m0, e01) -> np.ndarray:
    """Columns (e00, e10, e01, e11) implied by the means and a harmed-stratum score."""
    m1, m0, e01 = (np.asarray(v, float) for v in (m1, m0, e01))
    e11 = m0 - e01
    e10 = m1 - e11
    e00 = 1.0 - e10 - e01 - e11
    return np.stack([e00, e10, e01, e11], axis=-1)


def is_valid_distribution(strata, atol: float = 0.0) -> np.ndarray:
    strata = np.asarray(strata, float)
    return ((strata >= -atol) & (strata <= 1 + atol)).all(axis=-1) & (np.abs(strata.sum(axis=-1) - 1) <= 1e-9)


def delta_plus_closed_form(m1, m0) -> np.ndarray:
    m1, m0 = _unit_interval("m1", m1), _unit_interval("m0", m0)
    return (m0 + m1 - 1.0 >= 0).astype(np.int8)


def delta_tau_closed_form(m1, m0) -> np.ndarray:
    m1, m0 = _unit_interval("m1", m1), _unit_interval("m0", m0)
    return (m1 - m0 >= 0).astype(np.int8)


def delta_plus_contributions(scores: ScoreTable) -> np.ndarray:
    return scores.gamma1 + scores.gamma0 - 1.0


def delta_tau_contributions(scores: ScoreTable) -> np.ndarray:
    return scores.gamma1 - scores.gamma0


def fit_delta_plus(scores: ScoreTable, x, feature_map: FeatureMap, solver: SolverConfig = SolverConfig()) -> FitResult:
    """Learn the classifier for ``m0 + m1 >= 1`` by minimising its empirical regret."""
    return fit_policy(x, delta_plus_contributions(scores), feature_map, solver)


def fit_delta_tau(scores: ScoreTable, x, feature_map: FeatureMap, solver: SolverConfig = SolverConfig()) -> FitResult:
    """Learn the positive-CATE classifier."""
    return fit_policy(x, delta_tau_contributions(scores), feature_map, solver)


def plugin_delta_plus(m1_hat, m0_hat) -> np.ndarray:
    """Plug-in alternative ``1{m0_hat + m1_hat >= 1}``."""
    return delta_plus_closed_form(m1_hat, m0_hat)


def worst_case_error_rates(pi, m1, m0, delta_plus, x=None) -> tuple[float, float]:
    """Upper bounds on P(policy harms) and P(policy withholds a useful treatment).

    ``m1``/``m0`` may be true conditional means or, for plug-in estimates,
    the per-unit scores Gamma_1 / Gamma_0 (in which case they need not lie
    in [0, 1]).
    """
    pi = as_decisions(pi, x).astype(float)
    dp = as_decisions(delta_plus, x).astype(float)
    m1, m0 = np.asarray(m1, float), np.asarray(m0, float)
    rows_aligned(pi, m1, m0, dp)
    slack = dp * (1.0 - m1 - m0)
    fp = float(np.mean(pi * (m0 + slack)))
    fn = float(np.mean((1.0 - pi) * (m1 + slack)))
    return fp, fn
