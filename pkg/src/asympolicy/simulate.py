"""Log-linear principal-score simulation and the Monte Carlo replication harness."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import softmax
from scipy.stats import norm

from .core import Dataset, FeatureMap, GroundTruth, ScoreMethod, UtilitySpec
from .errors import ConfigError
from .minimax import PolicyClasses, algorithm1, algorithm2, asymmetric_oracle, corollary_policy
from .nuisance import ScoringConfig, estimate_scores
from .partial_id import delta_plus_closed_form, delta_tau_closed_form, fit_delta_plus, fit_delta_tau
from .pool import parallel_map
from .solvers import SolverConfig

log = logging.getLogger(__name__)

DEFAULT_ALPHA = (0.2, 0.15, 0.0, 0.0)


@dataclass(frozen=True)
class DgpSpec:
    """One-covariate RCT with softmax principal scores.

    Strata are ordered (00, 10, 01, 11). ``beta`` left as None is drawn
    with ``draw_beta`` from the spec's seed.
    """

    n: int = 1000
    alpha: tuple = DEFAULT_ALPHA
    beta: Optional[tuple] = None
    beta_sd: float = math.sqrt(40.0)
    x_sd: float = math.sqrt(2.0)
    p_treat: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if not 0 < self.p_treat < 1:
            raise ConfigError("p_treat must lie strictly inside (0, 1)")
        if len(self.alpha) != 4 or (self.beta is not None and len(self.beta) != 4):
            raise ConfigError("alpha and beta must have four entries")
        if self.beta_sd < 0 or self.x_sd <= 0:
            raise ConfigError("beta_sd must be >= 0 and x_sd > 0")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alpha": list(self.alpha),
            "beta": None if self.beta is None else list(self.beta),
            "beta_sd": self.beta_sd,
            "x_sd": self.x_sd,
            "p_treat": self.p_treat,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "DgpSpec":
        d = dict(d)
        if d.get("beta") is not None:
            d["beta"] = tuple(d["beta"])
        if "alpha" in d:
            d["alpha"] = tuple(d["alpha"])
        return cls(**d)


def draw_beta(rng: np.random.Generator, beta_sd: float) -> tuple:
    """Slopes for strata 00, 10, 01 drawn Normal(0, beta_sd); the 11 slope is 0."""
    b = rng.normal(0.0, beta_sd, size=3)
    return (float(b[0]), float(b[1]), float(b[2]), 0.0)


def principal_scores_at(x, alpha, beta) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    logits = np.asarray(alpha)[None, :] + x[:, None] * np.asarray(beta)[None, :]
    e = softmax(logits, axis=1)
    # renormalise so rows sum to one at machine precision
    return e / e.sum(axis=1, keepdims=True)


def truth_at(x, alpha, beta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(principal scores, m1, m0) at covariate values ``x``."""
    e = principal_scores_at(x, alpha, beta)
    return e, e[:, 3] + e[:, 1], e[:, 3] + e[:, 2]


def resolve_beta(spec: DgpSpec, rng: np.random.Generator) -> tuple:
    return spec.beta if spec.beta is not None else draw_beta(rng, spec.beta_sd)


def generate(spec: DgpSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    beta = resolve_beta(spec, rng)
    x = rng.normal(0.0, spec.x_sd, size=spec.n)
    e, m1, m0 = truth_at(x, spec.alpha, beta)
    u = rng.random(spec.n)
    stratum = (u[:, None] > np.cumsum(e, axis=1)[:, :3]).sum(axis=1)
    y1 = np.isin(stratum, (1, 3)).astype(np.int8)
    y0 = np.isin(stratum, (2, 3)).astype(np.int8)
    d = (rng.random(spec.n) < spec.p_treat).astype(np.int8)
    y = np.where(d == 1, y1, y0)
    truth = GroundTruth(y1, y0, e, m1, m0)
    return Dataset(x[:, None], d, y, truth, ("x",))


def evaluation_grid(size: int, x_sd: float) -> np.ndarray:
    """Equal-probability quantile points of the covariate law; uniform
    weighting over the grid integrates against the covariate density."""
    q = (np.arange(size) + 0.5) / size
    return norm.ppf(q) * x_sd


# -------------------------------------------------------------- replication

SCALES = {
    "desk": {"n_reps": 100, "n_grid": (100, 500, 1000, 5000)},
    "full": {"n_reps": 1000, "n_grid": (100, 500, 1000, 5000, 10000)},
}


def _default_u_l_grid() -> tuple:
    return tuple(round(0.6 + 0.1 * k, 10) for k in range(9))


@dataclass(frozen=True)
class ReplicationConfig:
    dgp: DgpSpec = DgpSpec()
    n_grid: tuple = SCALES["desk"]["n_grid"]
    u_l_grid: tuple = field(default_factory=_default_u_l_grid)
    n_reps: int = SCALES["desk"]["n_reps"]
    u_g: float = 1.0
    cost: float = 0.0
    misclass_u_l: float = 0.833
    scoring: ScoringConfig = field(default_factory=lambda: ScoringConfig(ScoreMethod.IPW, known_propensity=0.5))
    solver: SolverConfig = SolverConfig()
    classes: PolicyClasses = PolicyClasses(FeatureMap.threshold_1d(0))
    eval_grid_size: int = 10_001
    seed: int = 0

    def __post_init__(self):
        if not self.n_grid or not self.u_l_grid:
            raise ConfigError("n_grid and u_l_grid must be non-empty")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be at least 1")
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "u_l_grid", tuple(float(u) for u in self.u_l_grid))

    @classmethod
    def at_scale(cls, scale: str, **overrides) -> "ReplicationConfig":
        if scale not in SCALES:
            raise ConfigError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
        return cls(**{**SCALES[scale], **overrides})

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "n_grid": list(self.n_grid),
            "u_l_grid": list(self.u_l_grid),
            "n_reps": self.n_reps,
            "u_g": self.u_g,
            "cost": self.cost,
            "misclass_u_l": self.misclass_u_l,
            "scoring": self.scoring.to_dict(),
            "solver": self.solver.to_dict(),
            "classes": self.classes.to_dict(),
            "eval_grid_size": self.eval_grid_size,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class _Job:
    n: int
    rep: int
    config: ReplicationConfig


def job_seeds(seed: int, rep: int, n: int) -> tuple[int, int]:
    """(beta seed shared across n within a replication, data seed)."""
    beta_seed = int(np.random.SeedSequence(seed, spawn_key=(rep,)).generate_state(1)[0])
    data_seed = int(np.random.SeedSequence(seed, spawn_key=(rep, n)).generate_state(1)[0])
    return beta_seed, data_seed


def run_replication(job: _Job) -> list[tuple]:
    """All metric rows for one (n, replication) cell."""
    cfg = job.config
    beta_seed, data_seed = job_seeds(cfg.seed, job.rep, job.n)
    beta = resolve_beta(cfg.dgp, np.random.default_rng(beta_seed))
    spec = replace(cfg.dgp, n=job.n, beta=beta, seed=data_seed)
    data = generate(spec)
    scores = estimate_scores(data, replace(cfg.scoring, seed=data_seed)).scores
    cl = cfg.classes.resolved()
    x = data.x

    grid = evaluation_grid(cfg.eval_grid_size, spec.x_sd)
    e_g, m1_g, m0_g = truth_at(grid, spec.alpha, beta)
    m1_s, m0_s = data.truth.means()
    xg = grid[:, None]

    dp = fit_delta_plus(scores, x, cl.delta_plus, cfg.solver)
    dt = fit_delta_tau(scores, x, cl.delta_tau, cfg.solver)
    rows = []
    nan = float("nan")

    def add(u_l, metric, v):
        rows.append((job.n, job.rep, u_l, metric, float(v)))

    add(nan, "misclass_delta_plus_grid", np.mean(dp.policy.decide(xg) != delta_plus_closed_form(m1_g, m0_g)))
    add(nan, "misclass_delta_plus_sample", np.mean(dp.decisions != delta_plus_closed_form(m1_s, m0_s)))
    add(nan, "misclass_delta_tau_grid", np.mean(dt.policy.decide(xg) != delta_tau_closed_form(m1_g, m0_g)))
    add(nan, "misclass_delta_tau_sample", np.mean(dt.decisions != delta_tau_closed_form(m1_s, m0_s)))

    u_mis = UtilitySpec(cfg.u_g, cfg.misclass_u_l, cfg.cost)
    a1 = algorithm1(scores, x, u_mis, cl.pi, cl.delta_plus, cfg.solver, dp)
    comparator = a1.comparator
    target_g = corollary_policy(comparator, u_mis, m1_g, m0_g)
    target_s = corollary_policy(comparator, u_mis, m1_s, m0_s)
    add(cfg.misclass_u_l, "misclass_pi_grid", np.mean(a1.pi_hat.policy.decide(xg) != target_g))
    add(cfg.misclass_u_l, "misclass_pi_sample", np.mean(a1.pi_hat.decisions != target_s))

    for u_l in cfg.u_l_grid:
        u = UtilitySpec(cfg.u_g, u_l, cfg.cost)
        res = algorithm2(scores, x, u, cl, cfg.solver, dp, dt)
        for where, pi, e, m1, m0 in (
            ("sample", res.pi_hat.decisions, data.truth.principal_scores, m1_s, m0_s),
            ("grid", res.pi_hat.policy.decide(xg), e_g, m1_g, m0_g),
        ):
            oracle = asymmetric_oracle(m1, m0, e[:, 2], u)
            margin = u.u_g * (m1 - m0) + (u.u_g - u.u_l) * e[:, 2] - u.cost
            add(u_l, f"regret_{where}", np.mean((oracle - pi) * margin))
    return rows


@dataclass(frozen=True)
class ReplicationReport:
    frame: pd.DataFrame  # columns n, rep, u_l, metric, value
    summary: list
    failures: list
    config: dict

    def plot_misclassification(self) -> pd.DataFrame:
        s = pd.DataFrame(self.summary)
        return s[s.metric.str.startswith("misclass_")].reset_index(drop=True)

    def plot_regret(self) -> pd.DataFrame:
        s = pd.DataFrame(self.summary)
        return s[s.metric.str.startswith("regret_")].reset_index(drop=True)


def summarise(frame: pd.DataFrame) -> list:
    """Mean and standard error per (n, u_l, metric), deterministic row order."""
    f = frame.copy()
    f["u_l"] = f["u_l"].fillna(-1.0)
    g = f.groupby(["metric", "u_l", "n"], sort=True)["value"]
    agg = g.agg(["mean", "std", "count"]).reset_index()
    agg["se"] = agg["std"].fillna(0.0) / np.sqrt(agg["count"])
    agg["u_l"] = agg["u_l"].where(agg["u_l"] >= 0, np.nan)
    out = []
    for r in agg.itertuples(index=False):
        out.append({
            "metric": r.metric,
            "u_l": None if pd.isna(r.u_l) else float(r.u_l),
            "n": int(r.n),
            "mean": float(r.mean),
            "se": float(r.se),
            "count": int(r.count),
        })
    return out


def replicate(config: ReplicationConfig, workers: int = 1, progress=None) -> ReplicationReport:
    """Run every (n, replication) cell; failed cells are logged and excluded."""
    jobs = [_Job(n, rep, config) for rep in range(config.n_reps) for n in config.n_grid]
    results = parallel_map(run_replication, jobs, workers, return_exceptions=True)
    rows, failures = [], []
    for job, res in zip(jobs, results):
        if isinstance(res, Exception):
            log.warning("replication n=%d rep=%d failed: %s", job.n, job.rep, res)
            failures.append({"n": job.n, "rep": job.rep, "error": f"{type(res).__name__}: {res}"})
            continue
        rows.extend(res)
        if progress is not None:
            progress(job)
    frame = pd.DataFrame(rows, columns=["n", "rep", "u_l", "metric", "value"])
    frame = frame.sort_values(["n", "rep", "metric", "u_l"], kind="stable", na_position="first").reset_index(drop=True)
    return ReplicationReport(frame, summarise(frame) if len(frame) else [], failures, config.to_dict())


def strata_frequencies(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Empirical joint (Y(1), Y(0)) frequencies and the mean true principal scores."""
    t = data.truth
    code = (t.y1.astype(int) * 1 + t.y0.astype(int) * 2)  # 00->0, 10->1, 01->2, 11->3
    freq = np.bincount(code, minlength=4) / data.n
    return freq, t.principal_scores.mean(axis=0)
