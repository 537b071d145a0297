import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asympolicy.core import FeatureMap, GroundTruth, ScoreMethod, ScoreTable, UtilitySpec
from asympolicy.errors import CapabilityError, ValidationError
from asympolicy.evaluate import (
    FRONTIER_COLUMNS,
    frontier_sweep,
    lower_convex_envelope,
    true_regret,
    value,
    worst_case_constant,
    worst_case_regret,
)
from asympolicy.minimax import PolicyClasses, asymmetric_oracle, build_weights, population_context
from asympolicy.nuisance import ScoringConfig, estimate_scores
from asympolicy.simulate import DgpSpec, generate
from oracles import all_binary_vectors, brute_worst_case_regret

TH = FeatureMap.threshold_1d(0)
utilities = st.builds(UtilitySpec, st.floats(0.1, 3), st.floats(0.1, 3), st.sampled_from([0.0, 0.1]))
simplex = st.integers(1, 7).flatmap(lambda n: arrays(float, (n, 4), elements=st.floats(0.01, 1)))


def _truth(raw):
    e = raw / raw.sum(axis=1, keepdims=True)
    e[:, 0] = 1 - e[:, 1:].sum(axis=1)
    n = len(e)
    return GroundTruth(np.ones(n, int), np.zeros(n, int), e)


def test_value_of_never_treat_is_baseline():
    t = _truth(np.array([[1.0, 2.0, 3.0, 4.0]]))
    assert value([0], t, UtilitySpec(1, 1)) == pytest.approx(0.7)
    assert value([1], t, UtilitySpec(2, 0.5, 0.1)) == pytest.approx(0.7 + 2 * 0.2 - 0.5 * 0.3 - 0.1)


def test_metrics_need_truth():
    t = GroundTruth([1], [0])
    with pytest.raises(CapabilityError):
        value([1], t, UtilitySpec(1, 1))


@given(simplex, utilities)
def test_asymmetric_oracle_maximises_value(raw, u):
    t = _truth(raw)
    m1, m0 = t.means()
    best = asymmetric_oracle(m1, m0, t.e01, u)
    top = value(best, t, u)
    for pi in all_binary_vectors(len(m1)):
        assert value(pi, t, u) <= top + 1e-12


@settings(max_examples=30)
@given(simplex, utilities, st.sampled_from(["never", "always", "oracle"]), st.data())
def test_worst_case_dominates_true_regret(raw, u, comp, data):
    t = _truth(raw)
    m1, m0 = t.means()
    n = len(m1)
    pi = np.array(data.draw(arrays(np.int8, n, elements=st.integers(0, 1))))
    w = build_weights(population_context(comp, u, m1, m0))
    wc = worst_case_constant(comp, m1, m0, u) + worst_case_regret(pi, w, m1=m1, m0=m0).value
    assert wc == pytest.approx(brute_worst_case_regret(pi, comp, m1, m0, u.u_g, u.u_l, u.cost), abs=1e-10)
    varpi = {"never": np.zeros(n), "always": np.ones(n), "oracle": asymmetric_oracle(m1, m0, t.e01, u)}[comp]
    assert true_regret(pi, varpi, t, u) <= wc + 1e-12


def test_worst_case_regret_argument_check():
    w = build_weights(population_context("never", UtilitySpec(1, 1), [0.5], [0.5]))
    with pytest.raises(ValidationError):
        worst_case_regret([1], w)
    s = ScoreTable([0.5], [0.5], ScoreMethod.ORACLE)
    assert worst_case_regret([1], w, scores=s).mode == "estimation"


def test_envelope_is_convex_and_below_cloud():
    rng = np.random.default_rng(0)
    fp, fn = rng.uniform(size=40), rng.uniform(size=40)
    hull = lower_convex_envelope(fp, fn)
    assert np.all(np.diff(hull[:, 0]) > 0)
    slopes = np.diff(hull[:, 1]) / np.diff(hull[:, 0])
    assert np.all(np.diff(slopes) >= -1e-12)
    for a, b in zip(fp, fn):
        y = np.interp(a, hull[:, 0], hull[:, 1])
        assert b >= y - 1e-12


@pytest.fixture(scope="module")
def sweep_inputs():
    data = generate(DgpSpec(n=600, beta=(1.0, 0.5, -0.5, 0.0), seed=3))
    scores = estimate_scores(data, ScoringConfig(ScoreMethod.IPW, known_propensity=0.5)).scores
    return data, scores


def test_frontier_table_shape(sweep_inputs):
    data, scores = sweep_inputs
    ft = frontier_sweep(scores, data.x, [0.7, 1.0, 1.3], UtilitySpec(1.0, 1.0), PolicyClasses(TH))
    assert list(ft.rows.columns) == FRONTIER_COLUMNS
    assert len(ft.rows) == 3 and len(ft.endpoints) == 2
    assert ft.rows.symmetric.tolist() == [False, True, False]
    never = ft.endpoints.set_index("point").loc["never_treat"]
    assert never.worst_case_fp == 0 and never.treated_fraction == 0


def test_frontier_parallel_matches_serial(sweep_inputs):
    data, scores = sweep_inputs
    args = (scores, data.x, [0.8, 1.2], UtilitySpec(1.0, 1.0), PolicyClasses(TH))
    a = frontier_sweep(*args, mode="oracle", workers=1)
    b = frontier_sweep(*args, mode="oracle", workers=2)
    pd.testing.assert_frame_equal(a.rows, b.rows)


def test_frontier_records_failures(sweep_inputs):
    data, scores = sweep_inputs
    ft = frontier_sweep(scores, data.x, [1.0, -1.0], UtilitySpec(1.0, 1.0), PolicyClasses(TH))
    assert len(ft.rows) == 1 and ft.failures[0]["u_l"] == -1.0


def test_frontier_mode_check(sweep_inputs):
    data, scores = sweep_inputs
    with pytest.raises(ValidationError):
        frontier_sweep(scores, data.x, [1.0], UtilitySpec(1, 1), PolicyClasses(TH), mode="bogus")
