"""JSON run configuration shared by every CLI subcommand.

One schema, one parser. Every section is optional; each subcommand reads
what it needs and rejects unknown keys with the offending line number.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .core import FeatureMap, UtilitySpec
from .errors import ConfigError, ValidationError
from .minimax import PolicyClasses
from .nuisance import OutcomeModel, ScoringConfig
from .simulate import SCALES, DgpSpec, ReplicationConfig
from .solvers import SolverConfig

SECTIONS = {
    "seed": None,
    "utility": {"u_g", "u_l", "cost"},
    "mode": None,
    "classes": {"pi", "pi_prime", "delta_plus", "delta_tau"},
    "solver": {"kind", "C_reg", "tolerance", "max_iter", "seed"},
    "scoring": {"method", "n_folds", "seed", "learner", "known_propensity", "clip"},
    "data": {"csv", "schema", "simulate"},
    "simulation": {"dgp", "n_grid", "u_l_grid", "n_reps", "u_g", "cost", "misclass_u_l", "eval_grid_size"},
    "frontier": {"u_l_grid", "mode", "include_endpoints"},
    "evaluate": {"metrics", "comparators"},
}
MODES = ("constant", "oracle")


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


@dataclass
class RunConfig:
    raw: dict
    text: str = ""
    source: str = "<defaults>"
    base_dir: Path = field(default_factory=Path.cwd)

    # -- error helpers
    def fail(self, key: str, msg: str) -> ConfigError:
        line = _line_of(self.text, key) if self.text else None
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: {key}: {msg}")

    def _section(self, name: str) -> dict:
        v = self.raw.get(name, {})
        if not isinstance(v, dict):
            raise self.fail(name, "must be an object")
        return v

    # -- typed accessors
    @property
    def seed(self) -> int:
        s = self.raw.get("seed", 0)
        if not isinstance(s, int) or isinstance(s, bool):
            raise self.fail("seed", "must be an integer")
        return s

    def utility(self) -> UtilitySpec:
        sec = self._section("utility")
        try:
            return UtilitySpec(float(sec.get("u_g", 1.0)), float(sec.get("u_l", 1.0)), float(sec.get("cost", 0.0)))
        except (TypeError, ValueError, ValidationError) as exc:
            raise self.fail("utility", str(exc)) from exc

    @property
    def mode(self) -> str:
        m = self.raw.get("mode", "oracle")
        if m not in MODES:
            raise self.fail("mode", f"must be one of {MODES}")
        return m

    def _feature_map(self, key, spec) -> Optional[FeatureMap]:
        if spec is None:
            return None
        try:
            if isinstance(spec, str):
                spec = {"kind": spec}
            return FeatureMap.from_dict({"column": None, **spec})
        except Exception as exc:  # noqa: BLE001
            raise self.fail(key, f"invalid feature map ({exc})") from exc

    def classes(self, default: Optional[FeatureMap] = None) -> PolicyClasses:
        sec = self._section("classes")
        pi = self._feature_map("pi", sec.get("pi")) or default or FeatureMap.identity()
        return PolicyClasses(
            pi,
            self._feature_map("pi_prime", sec.get("pi_prime")),
            self._feature_map("delta_plus", sec.get("delta_plus")),
            self._feature_map("delta_tau", sec.get("delta_tau")),
        )

    def solver(self, seed: Optional[int] = None) -> SolverConfig:
        sec = dict(self._section("solver"))
        if seed is not None:
            sec.setdefault("seed", seed)
        try:
            return SolverConfig(**sec)
        except (TypeError, ValueError) as exc:
            raise self.fail("solver", str(exc)) from exc

    def scoring(self, seed: Optional[int] = None) -> ScoringConfig:
        sec = dict(self._section("scoring"))
        if seed is not None:
            sec.setdefault("seed", seed)
        learner = sec.pop("learner", None)
        try:
            if learner is not None:
                sec["learner"] = OutcomeModel(**learner)
            return ScoringConfig(**sec)
        except (TypeError, ValueError) as exc:
            raise self.fail("scoring", str(exc)) from exc

    def data(self) -> dict:
        return self._section("data")

    def dgp(self, section: dict, key: str) -> DgpSpec:
        try:
            return DgpSpec.from_dict(section)
        except (TypeError, ValueError, ConfigError) as exc:
            raise self.fail(key, str(exc)) from exc

    def replication(self, scale: str, seed: int) -> ReplicationConfig:
        sec = dict(self._section("simulation"))
        if scale not in SCALES:
            raise ConfigError(f"unknown scale {scale!r}")
        kw: dict[str, Any] = dict(SCALES[scale])
        for k in ("n_grid", "u_l_grid"):
            if k in sec:
                kw[k] = tuple(sec.pop(k))
        dgp = self.dgp(sec.pop("dgp", {}), "dgp")
        kw.update(sec)
        pi = FeatureMap.threshold_1d(0)
        try:
            return ReplicationConfig(
                dgp=dgp,
                scoring=self.scoring(seed) if "scoring" in self.raw else ReplicationConfig().scoring,
                solver=self.solver(seed),
                classes=self.classes(pi),
                seed=seed,
                **kw,
            )
        except TypeError as exc:
            raise self.fail("simulation", str(exc)) from exc

    def frontier(self) -> dict:
        sec = self._section("frontier")
        grid = sec.get("u_l_grid")
        if not grid:
            raise self.fail("frontier", "u_l_grid must be a non-empty list")
        mode = sec.get("mode", self.raw.get("mode", "constant"))
        if mode not in MODES:
            raise self.fail("mode", f"must be one of {MODES}")
        return {"u_l_grid": [float(u) for u in grid], "mode": mode, "include_endpoints": bool(sec.get("include_endpoints", True))}

    def evaluate(self) -> dict:
        return self._section("evaluate")

    def resolved(self) -> dict:
        """The config as given, with keys sorted (used for hashing)."""
        return json.loads(json.dumps(self.raw, sort_keys=True))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()


def _validate_keys(cfg: RunConfig) -> None:
    for key, value in cfg.raw.items():
        if key not in SECTIONS:
            raise cfg.fail(key, f"unknown key; expected one of {sorted(SECTIONS)}")
        allowed = SECTIONS[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise cfg.fail(key, "must be an object")
            for sub in value:
                if sub not in allowed:
                    raise cfg.fail(sub, f"unknown key in '{key}'; expected one of {sorted(allowed)}")


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig({})
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be an object")
    cfg = RunConfig(raw, text, str(path), p.resolve().parent)
    _validate_keys(cfg)
    return cfg
