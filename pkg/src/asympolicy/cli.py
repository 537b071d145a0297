"""Command-line driver: ``asympolicy {simulate,learn,evaluate,frontier}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, load_config
from .core import Comparator, Dataset, LinearPolicy, UtilitySpec, dataset_from_csv, dumps
from .errors import AsymPolicyError, CapabilityError, ConfigError, DataError
from .evaluate import frontier_sweep, true_regret, value, worst_case_constant, worst_case_regret
from .minimax import (
    ComparatorContext,
    algorithm1,
    algorithm1_weights,
    algorithm2,
    asymmetric_oracle,
    build_weights,
    constant_comparator,
    population_context,
)
from .nuisance import DEFAULT_CLIP, OutcomeModel, ScoringConfig, estimate_scores
from .partial_id import delta_plus_closed_form, worst_case_error_rates
from .pool import WORKERS_ENV, default_workers
from .simulate import _Job, generate, replicate, run_replication

log = logging.getLogger("asympolicy")

POLICY_FORMAT = "asympolicy.policy/1"
TRUTH_METRICS = {"value", "true_regret", "population_worst_case", "true_error_rates"}
RUNTIME_WARN_SECONDS = 1800.0


def defaults_record() -> dict:
    """Defaults that are our own choices rather than fixed by the method."""
    return {
        "propensity_clip": DEFAULT_CLIP,
        "boosting": OutcomeModel().to_dict(),
        "cross_fit_folds": ScoringConfig().n_folds,
        "tie_rule": "score exactly 0 treats",
        "svm_C_reg": 1.0,
        "svm_tolerance": 1e-6,
        "intercept_rule": "average over 0 < alpha < C*gamma",
    }


# ---------------------------------------------------------------- helpers


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_csv(path: Path, frame: pd.DataFrame) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")


def _manifest(out: Path, command: str, cfg: RunConfig, seed: int, outputs: list, extra: Optional[dict] = None) -> None:
    doc = {
        "command": command,
        "package_version": __version__,
        "config_source": cfg.source,
        "config_sha256": cfg.digest(),
        "config": cfg.resolved(),
        "seed": seed,
        "defaults": defaults_record(),
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    _write(out / "manifest.json", dumps(doc) + "\n")


def _load_data(cfg: RunConfig, data_arg: Optional[str], seed: int) -> tuple[Dataset, dict]:
    sec = cfg.data()
    schema = sec.get("schema") or {"treatment": "d", "outcome": "y"}
    if data_arg is not None:
        return dataset_from_csv(data_arg, schema), {"csv": str(data_arg), "schema": schema}
    if "csv" in sec:
        path = Path(sec["csv"])
        if not path.is_absolute():
            path = cfg.base_dir / path
        return dataset_from_csv(path, schema), {"csv": str(sec["csv"]), "schema": schema}
    if "simulate" in sec:
        spec_d = dict(sec["simulate"])
        spec_d.setdefault("seed", seed)
        spec = cfg.dgp(spec_d, "simulate")
        return generate(spec), {"simulate": spec.to_dict()}
    raise ConfigError("no data source: pass --data or set data.csv / data.simulate in the config")


def _decisions_of(policy: LinearPolicy, x) -> np.ndarray:
    return policy.decide(x).astype(np.int8)


# ---------------------------------------------------------------- simulate


def estimate_runtime(config, workers: int) -> float:
    """Seconds for the whole study, extrapolated from one replication per n."""
    per_rep = 0.0
    for n in config.n_grid:
        t0 = time.perf_counter()
        run_replication(_Job(n, 0, config))
        per_rep += time.perf_counter() - t0
    return per_rep * config.n_reps / max(1, workers)


def cmd_simulate(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    rc = cfg.replication(args.scale, seed)
    out = Path(args.out)
    workers = args.workers
    est = estimate_runtime(rc, workers)
    if args.scale == "full" or est > RUNTIME_WARN_SECONDS:
        print(
            f"warning: {args.scale} scale with {rc.n_reps} replications x {len(rc.n_grid)} sample sizes; "
            f"estimated runtime {est / 60:.1f} min on {workers} worker(s)",
            file=sys.stderr,
        )
    report = replicate(rc, workers)
    _write_csv(out / "replications.csv", report.frame)
    summary = {"config": report.config, "summary": report.summary, "failures": report.failures, "n_failed": len(report.failures)}
    _write(out / "summary.json", dumps(summary) + "\n")
    _write_csv(out / "plot_misclassification.csv", report.plot_misclassification())
    _write_csv(out / "plot_regret.csv", report.plot_regret())
    outputs = ["replications.csv", "summary.json", "plot_misclassification.csv", "plot_regret.csv"]
    _manifest(out, "simulate", cfg, seed, outputs, {"scale": args.scale, "replication": report.config})
    print(f"wrote {len(report.frame)} metric rows to {out} ({len(report.failures)} failed cells)")
    return 0


# ------------------------------------------------------------------ learn


def _weight_inputs(mode: str, utility: UtilitySpec) -> dict:
    if mode == "constant":
        return {"delta_plus": "delta_plus"}
    sym = "symmetric_policy" if utility.cost != 0 else "delta_tau"
    if utility.u_g >= utility.u_l:
        return {"delta_plus": "delta_plus", "delta_tau": "delta_tau", "pi_always": "pi_always", "pi_never": sym}
    return {"delta_plus": "delta_plus", "delta_tau": "delta_tau", "pi_always": sym, "pi_never": "pi_never"}


def cmd_learn(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    utility = cfg.utility()
    mode = cfg.mode
    classes = cfg.classes()
    solver = cfg.solver(seed)
    scoring = cfg.scoring(seed)
    data, source = _load_data(cfg, args.data, seed)
    scored = estimate_scores(data, scoring)
    scores = scored.scores
    out = Path(args.out)

    if mode == "constant":
        res = algorithm1(scores, data.x, utility, classes.resolved().pi, classes.resolved().delta_plus, solver)
        nuisance = {"delta_plus": res.delta_plus.policy}
        comparator = res.comparator
    else:
        res = algorithm2(scores, data.x, utility, classes, solver)
        nuisance = dict(res.nuisance_policies)
        comparator = Comparator.ORACLE
    doc = {
        "format": POLICY_FORMAT,
        "mode": mode,
        "comparator": comparator.value,
        "utility": utility.to_dict(),
        "classes": classes.to_dict(),
        "scoring": scoring.to_dict(),
        "solver": solver.to_dict(),
        "policy": res.pi_hat.policy.to_dict(),
        "nuisance": {k: v.to_dict() for k, v in sorted(nuisance.items())},
        "weight_inputs": _weight_inputs(mode, utility),
        "in_sample_objective": res.pi_hat.objective,
        "diagnostics": res.diagnostics,
        "treated_fraction": float(np.mean(res.pi_hat.decisions)),
        "data_source": source,
    }
    _write(out / "policy.json", dumps(doc) + "\n")
    cols = {"unit": np.arange(data.n), "pi": res.pi_hat.decisions}
    for name, pol in sorted(nuisance.items()):
        cols[name] = _decisions_of(pol, data.x)
    _write_csv(out / "decisions.csv", pd.DataFrame(cols))
    _write_csv(out / "scores.csv", scores.to_frame())
    _manifest(out, "learn", cfg, seed, ["policy.json", "decisions.csv", "scores.csv"], {"data_source": source, "n": data.n})
    print(f"learned {mode} policy on n={data.n}: objective {res.pi_hat.objective:.6g}, treated {doc['treated_fraction']:.3f}")
    return 0


# --------------------------------------------------------------- evaluate


def load_policy_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"policy file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}:{exc.lineno}: policy file is not valid JSON: {exc.msg}") from exc
    if doc.get("format") != POLICY_FORMAT:
        raise DataError(f"{p}: not a policy file (format {doc.get('format')!r})")
    return doc


def weights_from_policy_doc(doc: dict, x, utility: Optional[UtilitySpec] = None):
    """Rebuild the objective weights from the stored nuisance classifiers."""
    utility = utility or UtilitySpec.from_dict(doc["utility"])
    pols = {k: LinearPolicy.from_dict(v) for k, v in doc["nuisance"].items()}
    dec = {role: _decisions_of(pols[name], x) for role, name in doc["weight_inputs"].items()}
    if doc["mode"] == "constant":
        return algorithm1_weights(dec["delta_plus"], utility, constant_comparator(utility)), dec
    ctx = ComparatorContext(
        Comparator.ORACLE,
        utility,
        delta_tau=dec["delta_tau"],
        delta_plus=dec["delta_plus"],
        pi_star_never=dec["pi_never"],
        pi_star_always=dec["pi_always"],
    )
    return build_weights(ctx), dec


def evaluate_policy(doc: dict, data: Dataset, scoring: ScoringConfig, metrics: Optional[list] = None) -> dict:
    utility = UtilitySpec.from_dict(doc["utility"])
    policy = LinearPolicy.from_dict(doc["policy"])
    has_truth = data.truth is not None and data.truth.principal_scores is not None
    wanted = set(metrics) if metrics else None
    if wanted and (wanted & TRUTH_METRICS) and not has_truth:
        raise CapabilityError(f"metrics {sorted(wanted & TRUTH_METRICS)} need ground truth, which this data lacks")

    pi = _decisions_of(policy, data.x)
    scores = estimate_scores(data, scoring).scores
    weights, dec = weights_from_policy_doc(doc, data.x, utility)
    fp, fn = worst_case_error_rates(pi, scores.gamma1, scores.gamma0, dec["delta_plus"])
    report = {
        "n": data.n,
        "mode": doc["mode"],
        "comparator": doc["comparator"],
        "utility": utility.to_dict(),
        "treated_fraction": float(pi.mean()),
        "worst_case_regret": {"estimation": worst_case_regret(pi, weights, scores=scores).value, "includes_constant": False},
        "plugin_error_rates": {"worst_case_fp": fp, "worst_case_fn": fn},
        "expected_outcome": {
            "value": float(np.mean(pi * scores.gamma1 + (1 - pi) * scores.gamma0)),
            "label": "estimated P(Y=1) under the policy; read as mortality if Y codes death",
        },
        "has_truth": has_truth,
    }
    if has_truth:
        t = data.truth
        m1, m0 = t.means()
        oracle = asymmetric_oracle(m1, m0, t.e01, utility)
        never, always = np.zeros(data.n, np.int8), np.ones(data.n, np.int8)
        ctx = population_context(doc["comparator"], utility, m1, m0)
        pop_w = build_weights(ctx)
        tfp, tfn = worst_case_error_rates(pi, m1, m0, delta_plus_closed_form(m1, m0))
        report["truth"] = {
            "value": value(pi, t, utility),
            "true_regret": {
                "vs_oracle": true_regret(pi, oracle, t, utility),
                "vs_never_treat": true_regret(pi, never, t, utility),
                "vs_always_treat": true_regret(pi, always, t, utility),
            },
            "population_worst_case": {
                "policy_part": worst_case_regret(pi, pop_w, m1=m1, m0=m0).value,
                "constant": worst_case_constant(doc["comparator"], m1, m0, utility),
            },
            "true_error_rates": {"worst_case_fp": tfp, "worst_case_fn": tfn},
        }
    return report


def cmd_evaluate(args, cfg: RunConfig) -> int:
    doc = load_policy_file(args.policy)
    seed = cfg.seed if args.seed is None else args.seed
    data, source = _load_data(cfg, args.data, seed)
    scoring = cfg.scoring(seed) if "scoring" in cfg.raw else _scoring_from_doc(doc)
    metrics = cfg.evaluate().get("metrics")
    report = evaluate_policy(doc, data, scoring, metrics)
    report["policy_file"] = str(args.policy)
    report["manifest_objective"] = doc.get("in_sample_objective")
    out = Path(args.out)
    _write(out / "evaluation.json", dumps(report) + "\n")
    _manifest(out, "evaluate", cfg, seed, ["evaluation.json"], {"data_source": source, "policy_file": str(args.policy)})
    print(f"worst-case regret (estimation, policy part) {report['worst_case_regret']['estimation']:.6g}")
    return 0


def _scoring_from_doc(doc: dict) -> ScoringConfig:
    s = dict(doc["scoring"])
    s["learner"] = OutcomeModel(**s["learner"])
    return ScoringConfig(**s)


# --------------------------------------------------------------- frontier


def cmd_frontier(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    fr = cfg.frontier()
    utility = cfg.utility()
    data, source = _load_data(cfg, args.data, seed)
    scores = estimate_scores(data, cfg.scoring(seed)).scores
    table = frontier_sweep(
        scores, data.x, fr["u_l_grid"], utility, cfg.classes(), cfg.solver(seed), fr["mode"], args.workers, fr["include_endpoints"]
    )
    out = Path(args.out)
    _write_csv(out / "frontier.csv", table.rows)
    _write_csv(out / "frontier_endpoints.csv", table.endpoints)
    _write_csv(out / "envelope.csv", table.envelope)
    pts = table.all_points()
    _write_csv(out / "plot_fp_fn.csv", pts[["point", "u_l", "symmetric", "worst_case_fp", "worst_case_fn"]])
    _write_csv(out / "plot_outcome_bound.csv", pts[["point", "u_l", "symmetric", "expected_outcome", "worst_case_fp", "worst_case_fn", "treated_fraction"]])
    outputs = ["frontier.csv", "frontier_endpoints.csv", "envelope.csv", "plot_fp_fn.csv", "plot_outcome_bound.csv"]
    _manifest(out, "frontier", cfg, seed, outputs, {"data_source": source, "failures": table.failures})
    print(f"frontier: {len(table.rows)} swept points, {len(table.failures)} failed, envelope of {len(table.envelope)} vertices")
    return 0


# ------------------------------------------------------------------- main


def _workers(value: Optional[int]) -> int:
    if value is not None:
        if value < 1:
            raise ConfigError("--workers must be at least 1")
        return value
    try:
        return default_workers()
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--workers", type=int, default=None, help=f"worker processes (default: ${WORKERS_ENV} or all cores)")
    common.add_argument("--scale", choices=("desk", "full"), default="desk", help="replication size preset")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="asympolicy", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Monte Carlo study on the simulated design")
    learn = sub.add_parser("learn", parents=[common], help="learn a minimax policy from data")
    learn.add_argument("--data", help="CSV file (schema from config data.schema)")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a learned policy")
    ev.add_argument("--policy", required=True, help="policy.json written by learn")
    ev.add_argument("--data", help="CSV file (schema from config data.schema)")
    fr = sub.add_parser("frontier", parents=[common], help="sweep u_l and tabulate worst-case error rates")
    fr.add_argument("--data", help="CSV file (schema from config data.schema)")
    return p


COMMANDS = {"simulate": cmd_simulate, "learn": cmd_learn, "evaluate": cmd_evaluate, "frontier": cmd_frontier}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.workers = _workers(args.workers)
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except AsymPolicyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
