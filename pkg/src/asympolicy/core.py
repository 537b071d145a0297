"""Domain types shared across the package.

Everything here is immutable after construction: arrays are copied and
flagged read-only so instances can be shared between worker processes
and threads without defensive copying.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

STRATA = ("e00", "e10", "e01", "e11")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _binary(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        bad = int(np.flatnonzero(~np.isin(arr, (0, 1)))[0])
        raise ValidationError(f"{name} must be binary; row {bad} has value {arr[bad]!r}")
    return _frozen(arr, dtype=np.int8)


class Comparator(str, enum.Enum):
    NEVER = "never"
    ALWAYS = "always"
    ORACLE = "oracle"


@dataclass(frozen=True)
class UtilitySpec:
    u_g: float
    u_l: float
    cost: float = 0.0

    def __post_init__(self):
        if not (self.u_g > 0 and self.u_l > 0):
            raise ValidationError(f"u_g and u_l must be positive, got {self.u_g}, {self.u_l}")
        if not self.cost >= 0:
            raise ValidationError(f"cost must be non-negative, got {self.cost}")

    @property
    def symmetric(self) -> bool:
        return self.u_g == self.u_l

    def stratum_gain(self) -> dict[str, float]:
        """Utility of treating relative to not treating, per principal stratum."""
        return {
            "e11": -self.cost,
            "e10": self.u_g - self.cost,
            "e01": -self.u_l - self.cost,
            "e00": -self.cost,
        }

    def to_dict(self) -> dict:
        return {"u_g": self.u_g, "u_l": self.u_l, "cost": self.cost}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "UtilitySpec":
        return cls(float(d["u_g"]), float(d["u_l"]), float(d.get("cost", 0.0)))


@dataclass(frozen=True)
class ConstraintSpec:
    delta: float
    budget: float = 1.0

    def __post_init__(self):
        for name in ("delta", "budget"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class GroundTruth:
    y1: np.ndarray
    y0: np.ndarray
    principal_scores: Optional[np.ndarray] = None  # columns ordered as STRATA
    m1: Optional[np.ndarray] = None
    m0: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "y1", _binary(self.y1, "y1"))
        object.__setattr__(self, "y0", _binary(self.y0, "y0"))
        n = len(self.y1)
        if len(self.y0) != n:
            raise ValidationError("y1 and y0 differ in length")
        if self.principal_scores is not None:
            e = _frozen(self.principal_scores)
            if e.shape != (n, 4):
                raise ValidationError(f"principal_scores must be ({n}, 4), got {e.shape}")
            if (e < 0).any() or np.abs(e.sum(axis=1) - 1.0).max(initial=0.0) > 1e-12:
                raise ValidationError("principal score rows must be non-negative and sum to 1")
            object.__setattr__(self, "principal_scores", e)
        for name in ("m1", "m0"):
            v = getattr(self, name)
            if v is not None:
                v = _frozen(v)
                if v.shape != (n,):
                    raise ValidationError(f"{name} must have length {n}")
                object.__setattr__(self, name, v)
        if self.principal_scores is not None:
            e = self.principal_scores
            if self.m1 is not None and np.abs(self.m1 - (e[:, 3] + e[:, 1])).max(initial=0) > 1e-12:
                raise ValidationError("m1 must equal e11 + e10")
            if self.m0 is not None and np.abs(self.m0 - (e[:, 3] + e[:, 2])).max(initial=0) > 1e-12:
                raise ValidationError("m0 must equal e11 + e01")

    @property
    def e01(self) -> np.ndarray:
        return self._scores()[:, 2]

    @property
    def tau(self) -> np.ndarray:
        if self.m1 is not None and self.m0 is not None:
            return self.m1 - self.m0
        e = self._scores()
        return e[:, 1] - e[:, 2]

    def means(self) -> tuple[np.ndarray, np.ndarray]:
        if self.m1 is not None and self.m0 is not None:
            return self.m1, self.m0
        e = self._scores()
        return e[:, 3] + e[:, 1], e[:, 3] + e[:, 2]

    def _scores(self) -> np.ndarray:
        if self.principal_scores is None:
            raise ValidationError("ground truth carries no principal scores")
        return self.principal_scores

    def subset(self, idx) -> "GroundTruth":
        pick = lambda a: None if a is None else a[idx]
        return GroundTruth(self.y1[idx], self.y0[idx], pick(self.principal_scores), pick(self.m1), pick(self.m0))

    def to_dict(self) -> dict:
        out = {"y1": self.y1.tolist(), "y0": self.y0.tolist()}
        for name in ("principal_scores", "m1", "m0"):
            v = getattr(self, name)
            out[name] = None if v is None else v.tolist()
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundTruth":
        return cls(d["y1"], d["y0"], d.get("principal_scores"), d.get("m1"), d.get("m0"))


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    d: np.ndarray
    y: np.ndarray
    truth: Optional[GroundTruth] = None
    covariate_names: tuple = ()
    rescaling: tuple = ()  # (min, max) per column as applied at ingestion

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValidationError(f"x must be a matrix, got shape {x.shape}")
        if not np.isfinite(x).all():
            r, c = np.argwhere(~np.isfinite(x))[0]
            raise ValidationError(f"non-finite covariate at row {r}, column {c}")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "d", _binary(self.d, "d"))
        object.__setattr__(self, "y", _binary(self.y, "y"))
        n = x.shape[0]
        if n < 1 or len(self.d) != n or len(self.y) != n:
            raise ValidationError(f"x, d, y must share length n >= 1 (got {n}, {len(self.d)}, {len(self.y)})")
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names", tuple(f"x{j}" for j in range(x.shape[1])))
        elif len(self.covariate_names) != x.shape[1]:
            raise ValidationError("covariate_names length must match number of columns")
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "rescaling", tuple(tuple(map(float, r)) for r in self.rescaling))
        t = self.truth
        if t is not None:
            if len(t.y1) != n:
                raise ValidationError("ground truth length differs from data")
            expect = np.where(self.d == 1, t.y1, t.y0)
            if not np.array_equal(expect, self.y):
                raise ValidationError("observed y inconsistent with potential outcomes")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        truth = None if self.truth is None else self.truth.subset(idx)
        return Dataset(self.x[idx], self.d[idx], self.y[idx], truth, self.covariate_names, self.rescaling)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "d": self.d.tolist(),
            "y": self.y.tolist(),
            "truth": None if self.truth is None else self.truth.to_dict(),
            "covariate_names": list(self.covariate_names),
            "rescaling": [list(r) for r in self.rescaling],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Dataset":
        truth = d.get("truth")
        return cls(
            np.asarray(d["x"], dtype=float).reshape(len(d["d"]), -1),
            d["d"],
            d["y"],
            None if truth is None else GroundTruth.from_dict(truth),
            tuple(d.get("covariate_names", ())),
            tuple(tuple(r) for r in d.get("rescaling", ())),
        )


def dataset_from_csv(path, schema: Mapping[str, Any]) -> Dataset:
    """Load a CSV file into a validated :class:`Dataset`.

    ``schema`` maps roles to column names::

        {"treatment": "rhc", "outcome": "survived",
         "covariates": ["age", "dnr"],          # optional; default = all others
         "truth": {"y1": "Y1", "y0": "Y0"}}     # optional

    Covariates are min-max rescaled to [0, 1] column by column; a constant
    column maps to 0. The applied (min, max) pairs are kept on the result.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"could not parse {path}: {exc}") from exc

    for role in ("treatment", "outcome"):
        if role not in schema:
            raise SchemaError(f"schema must name the {role} column")
    truth_cols = dict(schema.get("truth") or {})
    reserved = {schema["treatment"], schema["outcome"], *truth_cols.values()}
    covariates = list(schema.get("covariates") or [c for c in frame.columns if c not in reserved])
    missing = [c for c in [schema["treatment"], schema["outcome"], *covariates, *truth_cols.values()] if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing column(s) {missing} in {path.name}")
    if not covariates:
        raise SchemaError("schema resolves to zero covariate columns")

    d = _binary_column(frame, schema["treatment"])
    y = _binary_column(frame, schema["outcome"])

    cov = frame[covariates]
    for c in covariates:
        col = cov[c]
        if col.dtype == bool:
            continue
        if not pd.api.types.is_numeric_dtype(col):
            raise ValidationError(f"covariate column {c!r} is not numeric")
    raw = cov.astype(float).to_numpy()
    bad = np.argwhere(~np.isfinite(raw))
    if bad.size:
        r, j = bad[0]
        raise ValidationError(f"non-finite covariate at row {r}, column {covariates[j]!r}")
    x, scaling = minmax_rescale(raw)

    truth = None
    if truth_cols:
        if not {"y1", "y0"} <= truth_cols.keys():
            raise SchemaError("truth mapping needs at least y1 and y0")
        scores = None
        if all(s in truth_cols for s in STRATA):
            scores = frame[[truth_cols[s] for s in STRATA]].to_numpy(float)
        truth = GroundTruth(
            _binary_column(frame, truth_cols["y1"]),
            _binary_column(frame, truth_cols["y0"]),
            scores,
            frame[truth_cols["m1"]].to_numpy(float) if "m1" in truth_cols else None,
            frame[truth_cols["m0"]].to_numpy(float) if "m0" in truth_cols else None,
        )
    return Dataset(x, d, y, truth, tuple(covariates), tuple(scaling))


def minmax_rescale(raw: np.ndarray) -> tuple[np.ndarray, list[tuple[float, float]]]:
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    x = np.where(span > 0, (raw - lo) / safe, 0.0)
    return x, list(zip(lo.tolist(), hi.tolist()))


def _binary_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    col = frame[name]
    if col.isna().any():
        raise ValidationError(f"column {name!r} has missing values (row {int(np.flatnonzero(col.isna())[0])})")
    vals = col.to_numpy()
    try:
        as_int = vals.astype(int)
    except (TypeError, ValueError):
        raise ValidationError(f"column {name!r} must be binary 0/1") from None
    if not (np.isin(as_int, (0, 1)).all() and np.array_equal(as_int, vals.astype(float))):
        raise ValidationError(f"column {name!r} must be binary 0/1")
    return as_int


# ---------------------------------------------------------------- policies


class FeatureKind(str, enum.Enum):
    IDENTITY = "identity"
    QUADRATIC = "quadratic"
    QUADRATIC_PER_GROUP = "quadratic_per_group"
    THRESHOLD_1D = "threshold_1d"


@dataclass(frozen=True)
class FeatureMap:
    """Covariate transformation phi used by linear decision rules.

    ``column`` is the group indicator for ``quadratic_per_group`` and the
    thresholded covariate for ``threshold_1d``; unused otherwise.
    """

    kind: FeatureKind = FeatureKind.IDENTITY
    column: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        if self.kind in (FeatureKind.QUADRATIC_PER_GROUP, FeatureKind.THRESHOLD_1D) and self.column is None:
            raise ValidationError(f"feature map {self.kind.value} needs a column index")

    @classmethod
    def identity(cls):
        return cls(FeatureKind.IDENTITY)

    @classmethod
    def quadratic(cls):
        return cls(FeatureKind.QUADRATIC)

    @classmethod
    def quadratic_per_group(cls, group_column: int):
        return cls(FeatureKind.QUADRATIC_PER_GROUP, int(group_column))

    @classmethod
    def threshold_1d(cls, column: int = 0):
        return cls(FeatureKind.THRESHOLD_1D, int(column))

    def output_dim(self, p: int) -> int:
        if self.kind is FeatureKind.IDENTITY:
            return p
        if self.kind is FeatureKind.QUADRATIC:
            return 2 * p + p * (p - 1) // 2
        if self.kind is FeatureKind.QUADRATIC_PER_GROUP:
            return 4 * (p - 1) + 1
        return 1

    def richer(self) -> "FeatureMap":
        """The default nuisance-classifier class one notch above this one."""
        if self.kind is FeatureKind.IDENTITY:
            return FeatureMap.quadratic()
        return self

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        p = x.shape[1]
        if self.column is not None and not 0 <= self.column < p:
            raise ValidationError(f"feature column {self.column} out of range for {p} covariates")
        if self.kind is FeatureKind.IDENTITY:
            return x
        if self.kind is FeatureKind.THRESHOLD_1D:
            return x[:, [self.column]]
        if self.kind is FeatureKind.QUADRATIC:
            iu, ju = np.triu_indices(p, k=1)
            return np.hstack([x, x**2, x[:, iu] * x[:, ju]])
        g = x[:, [self.column]]
        rest = np.delete(x, self.column, axis=1)
        base = np.hstack([rest, rest**2])
        return np.hstack([base, g, g * base])

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "column": self.column}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureMap":
        return cls(FeatureKind(d["kind"]), d.get("column"))


@dataclass(frozen=True)
class LinearPolicy:
    """Deterministic rule ``1{beta0 + beta . phi(x) >= 0}``; a zero score treats."""

    beta0: float
    beta: np.ndarray
    feature_map: FeatureMap = field(default_factory=FeatureMap.identity)
    n_inputs: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "beta0", float(self.beta0))
        object.__setattr__(self, "beta", _frozen(np.atleast_1d(self.beta)))
        if not np.isfinite(self.beta0) or not np.isfinite(self.beta).all():
            raise ValidationError("policy coefficients must be finite")
        if self.n_inputs is not None and self.feature_map.output_dim(self.n_inputs) != len(self.beta):
            raise ValidationError(
                f"beta has length {len(self.beta)} but feature map yields {self.feature_map.output_dim(self.n_inputs)}"
            )

    @classmethod
    def constant(cls, treat: bool, feature_map: FeatureMap, n_inputs: int) -> "LinearPolicy":
        dim = feature_map.output_dim(n_inputs)
        return cls(0.0 if treat else -1.0, np.zeros(dim), feature_map, n_inputs)

    def score(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if self.n_inputs is not None and x.shape[1] != self.n_inputs:
            raise ValidationError(f"policy expects {self.n_inputs} covariates, got {x.shape[1]}")
        phi = self.feature_map.transform(x)
        if phi.shape[1] != len(self.beta):
            raise ValidationError(f"feature dimension {phi.shape[1]} != coefficient length {len(self.beta)}")
        return self.beta0 + phi @ self.beta

    def decide(self, x) -> np.ndarray:
        return (self.score(x) >= 0).astype(np.int8)

    __call__ = decide

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "beta": self.beta.tolist(),
            "feature_map": self.feature_map.to_dict(),
            "n_inputs": self.n_inputs,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LinearPolicy":
        return cls(d["beta0"], np.asarray(d["beta"], dtype=float), FeatureMap.from_dict(d["feature_map"]), d.get("n_inputs"))


def policy_decide(pi: LinearPolicy, x) -> int:
    """Decision for a single covariate row."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("policy_decide takes one covariate row")
    return int(pi.decide(x)[0])


# ------------------------------------------------------------ scores, weights


class ScoreMethod(str, enum.Enum):
    IPW = "ipw"
    DR = "dr"
    ORACLE = "oracle"  # true conditional means used directly as scores


@dataclass(frozen=True)
class ScoreTable:
    gamma0: np.ndarray
    gamma1: np.ndarray
    method: ScoreMethod = ScoreMethod.DR

    def __post_init__(self):
        g0, g1 = _frozen(self.gamma0), _frozen(self.gamma1)
        if g0.shape != g1.shape or g0.ndim != 1:
            raise ValidationError("gamma0 and gamma1 must be vectors of equal length")
        if not (np.isfinite(g0).all() and np.isfinite(g1).all()):
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "gamma0", g0)
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "method", ScoreMethod(self.method))

    @property
    def n(self) -> int:
        return len(self.gamma0)

    @property
    def xi(self) -> float:
        if self.n == 0:
            return 0.0
        return float(max(np.abs(self.gamma0).max(), np.abs(self.gamma1).max()))

    def subset(self, idx) -> "ScoreTable":
        return ScoreTable(self.gamma0[idx], self.gamma1[idx], self.method)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "unit": np.arange(self.n),
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "method": self.method.value,
        })

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path) -> "ScoreTable":
        f = pd.read_csv(path, float_precision="round_trip").sort_values("unit")
        return cls(f["gamma0"].to_numpy(float), f["gamma1"].to_numpy(float), ScoreMethod(f["method"].iloc[0]))


@dataclass(frozen=True)
class WeightTriple:
    """Per-unit weights so that the treated units' objective contribution is
    ``c1 * m1 + c0 * m0 + c`` (or the score analogue)."""

    c1: np.ndarray
    c0: np.ndarray
    c: np.ndarray
    comparator: Comparator

    def __post_init__(self):
        c1, c0, c = (np.atleast_1d(_frozen(v)) for v in (self.c1, self.c0, self.c))
        if not (c1.shape == c0.shape == c.shape) or c1.ndim != 1:
            raise ValidationError("weight vectors must share one length")
        if not (np.isfinite(c1).all() and np.isfinite(c0).all() and np.isfinite(c).all()):
            raise ValidationError("weights must be finite")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "comparator", Comparator(self.comparator))

    @property
    def n(self) -> int:
        return len(self.c1)

    def contributions(self, g1, g0) -> np.ndarray:
        """Objective contribution of treating each unit, given outcome scores."""
        return self.c1 * np.asarray(g1) + self.c0 * np.asarray(g0) + self.c

    def negated(self) -> "WeightTriple":
        return WeightTriple(-self.c1, -self.c0, -self.c, self.comparator)


def dumps(obj: Any) -> str:
    """Stable JSON text for serialisable domain objects and plain containers."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def as_decisions(policy_or_vector, x=None) -> np.ndarray:
    """Accept either a fitted policy (needs ``x``) or a 0/1 decision vector."""
    if isinstance(policy_or_vector, LinearPolicy):
        if x is None:
            raise ValidationError("covariates required to evaluate a LinearPolicy")
        return policy_or_vector.decide(x)
    arr = np.asarray(policy_or_vector)
    return _binary(arr.astype(int) if arr.dtype == bool else arr, "decisions")


def rows_aligned(*vectors: Sequence) -> int:
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise ValidationError(f"inputs not aligned: lengths {sorted(lengths)}")
    return lengths.pop()
