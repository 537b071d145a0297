import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asympolicy.core import Dataset, GroundTruth, ScoreMethod
from asympolicy.errors import DataError, OverlapError, ValidationError
from asympolicy.nuisance import (
    CrossFitPlan,
    OutcomeModel,
    ScoringConfig,
    estimate_scores,
    fit_outcome,
    fit_propensity,
    score_dr,
    score_ipw,
)
from asympolicy.simulate import DgpSpec, generate


@pytest.fixture(scope="module")
def data():
    return generate(DgpSpec(n=300, seed=2))


@given(st.lists(st.integers(0, 1), min_size=6, max_size=80), st.integers(2, 5), st.integers(0, 10**6))
def test_stratified_folds_balanced(d, k, seed):
    d = np.array(d)
    plan = CrossFitPlan.stratified(d, k, seed)
    for arm in (0, 1):
        counts = np.bincount(plan.fold_assignment[d == arm], minlength=k)
        assert counts.max() - counts.min() <= 1


def test_plan_needs_two_folds():
    with pytest.raises(ValidationError):
        CrossFitPlan(1, 0, np.zeros(3))


def test_propensity_excludes_own_fold(data):
    plan = CrossFitPlan.stratified(data.d, 3, 0)
    fit = fit_propensity(data, plan)
    for k, held in plan.folds():
        assert np.intersect1d(fit.train_index[k], held).size == 0
        assert (fit.scored_by[held] == k).all()
    assert fit.values.min() >= 0.01 and fit.values.max() <= 0.99


def test_known_propensity_passthrough(data):
    fit = fit_propensity(data, None, known=0.5)
    assert fit.known and np.all(fit.values == 0.5)
    with pytest.raises(OverlapError):
        fit_propensity(data, None, known=1.0)


def test_propensity_needs_both_arms():
    d = Dataset(np.zeros((4, 1)), [1, 1, 1, 1], [0, 1, 0, 1])
    with pytest.raises(OverlapError):
        fit_propensity(d, CrossFitPlan.stratified(d.d, 2, 0))


def test_outcome_cross_fitting(data):
    plan = CrossFitPlan.stratified(data.d, 3, 0)
    fit = fit_outcome(data, 1, plan)
    treated = np.flatnonzero(data.d == 1)
    for k in range(3):
        assert set(fit.train_index[k]) <= set(treated)
        own = treated[plan.fold_assignment[treated] == k]
        assert np.intersect1d(fit.train_index[k], own).size == 0
    ctrl = data.d == 0
    np.testing.assert_allclose(fit.values[ctrl], np.clip(np.median(fit.fold_predictions[:, ctrl], axis=0), 0, 1))
    assert (fit.scored_by[ctrl] == -1).all()


def test_outcome_empty_arm():
    d = Dataset(np.zeros((4, 1)), [0, 0, 0, 0], [0, 1, 0, 1])
    with pytest.raises(DataError):
        fit_outcome(d, 1, CrossFitPlan(2, 0, [0, 1, 0, 1]))


def test_ipw_formula():
    d = Dataset(np.zeros((4, 1)), [1, 1, 0, 0], [1, 0, 1, 0])
    s = score_ipw(d, [0.25, 0.5, 0.5, 0.8])
    np.testing.assert_allclose(s.gamma1, [4.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(s.gamma0, [0.0, 0.0, 2.0, 0.0])


def test_dr_with_exact_outcome_model_is_exact():
    d = Dataset(np.zeros((3, 1)), [1, 0, 1], [1, 0, 0])
    s = score_dr(d, [0.3, 0.6, 0.9], m0=[0.2, 0.0, 0.5], m1=[1.0, 0.4, 0.0])
    np.testing.assert_allclose(s.gamma1, [1.0, 0.4, 0.0])
    np.testing.assert_allclose(s.gamma0[1], 0.0)


def test_dr_rejects_bad_regressions():
    d = Dataset(np.zeros((2, 1)), [1, 0], [1, 0])
    with pytest.raises(ValidationError):
        score_dr(d, [0.5, 0.5], [0.0, 1.2], [0.5, 0.5])


def test_oracle_scores_need_truth():
    d = Dataset(np.zeros((2, 1)), [1, 0], [1, 0])
    with pytest.raises(ValidationError):
        estimate_scores(d, ScoringConfig(ScoreMethod.ORACLE))


def test_oracle_scores_are_true_means(data):
    s = estimate_scores(data, ScoringConfig(ScoreMethod.ORACLE)).scores
    m1, m0 = data.truth.means()
    np.testing.assert_array_equal(s.gamma1, m1)
    np.testing.assert_array_equal(s.gamma0, m0)


@pytest.mark.parametrize("method", [ScoreMethod.IPW, ScoreMethod.DR])
def test_scoring_is_deterministic(data, method):
    a = estimate_scores(data, ScoringConfig(method, seed=4)).scores
    b = estimate_scores(data, ScoringConfig(method, seed=4)).scores
    np.testing.assert_array_equal(a.gamma1, b.gamma1)
    np.testing.assert_array_equal(a.gamma0, b.gamma0)


def test_logistic_learner(data):
    res = estimate_scores(data, ScoringConfig(ScoreMethod.DR, learner=OutcomeModel("logistic")))
    assert res.scores.method is ScoreMethod.DR
    assert np.isfinite(res.scores.gamma1).all()


@settings(max_examples=20)
@given(st.integers(0, 10**6))
def test_dr_mean_tracks_truth(seed):
    data = generate(DgpSpec(n=400, seed=seed))
    s = estimate_scores(data, ScoringConfig(ScoreMethod.DR, known_propensity=0.5, seed=seed)).scores
    assert abs(s.gamma1.mean() - data.truth.y1.mean()) < 0.25


@pytest.mark.parametrize("bad", [0.0, 1.0])
def test_inverse_weight_guard(bad):
    d = Dataset(np.zeros((2, 1)), [1, 0], [1, 0])
    with pytest.raises(ValidationError, match="inverse weights"):
        score_ipw(d, [bad, 0.5])
    with pytest.raises(ValidationError):
        score_dr(d, [0.5, bad], [0.5, 0.5], [0.5, 0.5])
