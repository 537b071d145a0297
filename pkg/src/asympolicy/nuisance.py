"""Cross-fitted nuisance models and the IPW / doubly-robust outcome scores."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor
from sklearn.linear_model import LogisticRegression

from .core import Dataset, ScoreMethod, ScoreTable
from .errors import DataError, OverlapError, ValidationError

DEFAULT_CLIP = 0.01


class LearnerKind(str, enum.Enum):
    LOGISTIC = "logistic"
    BOOSTED_STUMPS = "boosted_stumps"


@dataclass(frozen=True)
class OutcomeModel:
    """Learner specification for d(x) and m(w, x).

    Boosted stumps are squared-error gradient boosting with depth-1 trees on
    the 0/1 response; predictions are clamped to [0, 1].
    """

    learner: LearnerKind = LearnerKind.BOOSTED_STUMPS
    n_rounds: int = 200
    shrinkage: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "learner", LearnerKind(self.learner))

    def fit(self, x: np.ndarray, y: np.ndarray) -> "_Fitted":
        y = np.asarray(y, dtype=float)
        if len(y) == 0:
            raise DataError("cannot fit a nuisance model on zero rows")
        if np.all(y == y[0]):
            return _Fitted(constant=float(y[0]))
        if self.learner is LearnerKind.LOGISTIC:
            est = LogisticRegression(C=1e4, max_iter=2000)
            est.fit(x, y.astype(int))
        else:
            est = GradientBoostingRegressor(
                loss="squared_error",
                n_estimators=self.n_rounds,
                learning_rate=self.shrinkage,
                max_depth=1,
                random_state=self.seed,
            )
            est.fit(x, y)
        return _Fitted(estimator=est)

    def to_dict(self) -> dict:
        return {"learner": self.learner.value, "n_rounds": self.n_rounds, "shrinkage": self.shrinkage, "seed": self.seed}


@dataclass(frozen=True)
class _Fitted:
    estimator: object = None
    constant: Optional[float] = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.constant is not None:
            return np.full(len(x), self.constant)
        if isinstance(self.estimator, LogisticRegression):
            return self.estimator.predict_proba(x)[:, 1]
        return np.clip(self.estimator.predict(x), 0.0, 1.0)


@dataclass(frozen=True)
class CrossFitPlan:
    n_folds: int
    seed: int
    fold_assignment: np.ndarray

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValidationError("cross-fitting needs at least two folds")
        f = np.array(self.fold_assignment, dtype=int)
        if f.min(initial=0) < 0 or f.max(initial=0) >= self.n_folds:
            raise ValidationError("fold index out of range")
        f.setflags(write=False)
        object.__setattr__(self, "fold_assignment", f)

    @classmethod
    def stratified(cls, d, n_folds: int = 3, seed: int = 0) -> "CrossFitPlan":
        """Random folds, balanced within each treatment arm."""
        d = np.asarray(d)
        rng = np.random.default_rng(seed)
        folds = np.empty(len(d), dtype=int)
        offset = 0
        for arm in (0, 1):
            idx = np.flatnonzero(d == arm)
            perm = rng.permutation(idx)
            # rotate the start so arm sizes do not both overload fold 0
            folds[perm] = (np.arange(len(perm)) + offset) % n_folds
            offset = (offset + len(perm)) % n_folds
        return cls(n_folds, seed, folds)

    def folds(self):
        for k in range(self.n_folds):
            yield k, np.flatnonzero(self.fold_assignment == k)

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed}


@dataclass(frozen=True)
class NuisanceFit:
    """Per-unit predictions plus the bookkeeping needed to audit cross-fitting.

    ``scored_by[i]`` is the fold whose held-out model produced unit i's
    prediction, or -1 when the prediction is a median across fold models.
    ``train_index[k]`` lists the rows the k-th model was trained on.
    """

    values: np.ndarray
    scored_by: np.ndarray
    train_index: tuple = ()
    fold_predictions: Optional[np.ndarray] = None
    clip: Optional[float] = None
    known: bool = False
    meta: dict = field(default_factory=dict)


def fit_propensity(
    data: Dataset,
    plan: Optional[CrossFitPlan],
    learner: OutcomeModel = OutcomeModel(),
    known=None,
    clip: float = DEFAULT_CLIP,
) -> NuisanceFit:
    """Cross-fitted propensity scores clipped to ``[clip, 1 - clip]``.

    With ``known`` (a scalar or per-unit vector) the design propensity is
    passed through without fitting.
    """
    n_treated = int(data.d.sum())
    if known is not None:
        vals = np.broadcast_to(np.asarray(known, dtype=float), (data.n,)).copy()
        if ((vals <= 0) | (vals >= 1)).any():
            raise OverlapError("known propensity must lie strictly inside (0, 1)")
        return NuisanceFit(vals, np.full(data.n, -1), known=True)
    if n_treated == 0 or n_treated == data.n:
        raise OverlapError("both treatment arms must be non-empty to estimate a propensity score")
    if plan is None:
        raise ValidationError("a cross-fit plan is required unless the propensity is known")

    out = np.empty(data.n)
    scored_by = np.empty(data.n, dtype=int)
    train = []
    for k, held in plan.folds():
        tr = np.flatnonzero(plan.fold_assignment != k)
        model = learner.fit(data.x[tr], data.d[tr])
        out[held] = model.predict(data.x[held])
        scored_by[held] = k
        train.append(tr)
    return NuisanceFit(np.clip(out, clip, 1 - clip), scored_by, tuple(train), clip=clip)


def fit_outcome(
    data: Dataset,
    arm: int,
    plan: CrossFitPlan,
    learner: OutcomeModel = OutcomeModel(),
) -> NuisanceFit:
    """Cross-fitted m(arm, x).

    Units in ``arm`` get the prediction of the model that excluded their
    fold. Every other unit gets the median over all fold models.
    """
    if arm not in (0, 1):
        raise ValidationError("arm must be 0 or 1")
    in_arm = data.d == arm
    if not in_arm.any():
        raise DataError(f"treatment arm {arm} is empty")

    preds = np.empty((plan.n_folds, data.n))
    train = []
    for k in range(plan.n_folds):
        tr = np.flatnonzero(in_arm & (plan.fold_assignment != k))
        if tr.size == 0:
            raise DataError(f"arm {arm} has no training rows outside fold {k}")
        model = learner.fit(data.x[tr], data.y[tr])
        preds[k] = model.predict(data.x)
        train.append(tr)

    out = np.median(preds, axis=0)
    scored_by = np.full(data.n, -1)
    own = np.flatnonzero(in_arm)
    out[own] = preds[plan.fold_assignment[own], own]
    scored_by[own] = plan.fold_assignment[own]
    return NuisanceFit(np.clip(out, 0.0, 1.0), scored_by, tuple(train), fold_predictions=preds)


def _inverse_weights(d: np.ndarray, dhat: np.ndarray):
    dhat = np.asarray(dhat, dtype=float)
    if dhat.shape != d.shape:
        raise ValidationError("propensity vector length differs from data")
    if ((dhat <= 0) | (dhat >= 1)).any():
        raise ValidationError("propensity scores must lie strictly inside (0, 1) to form inverse weights")
    return d / dhat, (1 - d) / (1 - dhat)


def score_ipw(data: Dataset, dhat) -> ScoreTable:
    w1, w0 = _inverse_weights(data.d.astype(float), dhat)
    y = data.y.astype(float)
    return ScoreTable(y * w0, y * w1, ScoreMethod.IPW)


def score_dr(data: Dataset, dhat, m0, m1) -> ScoreTable:
    w1, w0 = _inverse_weights(data.d.astype(float), dhat)
    m0, m1 = np.asarray(m0, dtype=float), np.asarray(m1, dtype=float)
    if ((m0 < 0) | (m0 > 1) | (m1 < 0) | (m1 > 1)).any():
        raise ValidationError("outcome regressions must lie in [0, 1]")
    y = data.y.astype(float)
    return ScoreTable(m0 + (y - m0) * w0, m1 + (y - m1) * w1, ScoreMethod.DR)


@dataclass
class ScoringConfig:
    method: ScoreMethod = ScoreMethod.DR
    n_folds: int = 3
    seed: int = 0
    learner: OutcomeModel = OutcomeModel()
    known_propensity: Optional[float] = None
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        self.method = ScoreMethod(self.method)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "n_folds": self.n_folds,
            "seed": self.seed,
            "learner": self.learner.to_dict(),
            "known_propensity": self.known_propensity,
            "clip": self.clip,
        }


@dataclass(frozen=True)
class ScoringResult:
    scores: ScoreTable
    propensity: NuisanceFit
    m1: Optional[NuisanceFit] = None
    m0: Optional[NuisanceFit] = None
    plan: Optional[CrossFitPlan] = None


def estimate_scores(data: Dataset, config: ScoringConfig = ScoringConfig()) -> ScoringResult:
    if config.method is ScoreMethod.ORACLE:
        if data.truth is None:
            raise ValidationError("oracle scores need ground truth")
        m1, m0 = data.truth.means()
        return ScoringResult(ScoreTable(m0, m1, ScoreMethod.ORACLE), NuisanceFit(np.full(data.n, np.nan), np.full(data.n, -1)))
    plan = CrossFitPlan.stratified(data.d, config.n_folds, config.seed)
    prop = fit_propensity(data, plan, config.learner, config.known_propensity, config.clip)
    if config.method is ScoreMethod.IPW:
        return ScoringResult(score_ipw(data, prop.values), prop, plan=plan)
    m1 = fit_outcome(data, 1, plan, config.learner)
    m0 = fit_outcome(data, 0, plan, config.learner)
    return ScoringResult(score_dr(data, prop.values, m0.values, m1.values), prop, m1, m0, plan)
