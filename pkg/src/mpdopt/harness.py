"""Experiment orchestration: configs, multi-seed runs, CSV persistence.

An experiment is (one objective) x (several policies) x (R repeats from
shared quasi-random start points).  Each run writes one trace CSV; per
policy a progressive-best CSV (mean and standard error of the running best
at every evaluation index) supports learning-curve plots, and a summary CSV
collects terminal values.  Reruns of the same config are bit-identical
except for the manifest timestamp.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .acquisition import AcqOptConfig
from .errors import ConfigError
from .gp import Fixed, Hyperpriors, Normal, Uniform
from .objectives import Objective, analytic_suite, make_rff_objective, sobol_starts
from .policies import PolicyConfig, RunTrace, run_policy

__all__ = [
    "ExperimentConfig",
    "SummaryRow",
    "load_config",
    "config_from_dict",
    "run_experiment",
    "summarize",
    "progressive_table",
]

log = logging.getLogger("mpdopt")

TRACE_COLUMNS = ["eval_index", "phase", "x_json", "y", "best_y", "max_descent_prob", "acq_value", "inner_steps"]

_OBJECTIVE_KEYS = {
    "rff": {"kind", "dim", "seed", "noise_std", "maximize", "lower", "upper",
            "lengthscale", "outputscale", "features"},
    "quadratic": {"kind", "dim", "seed", "noise_std", "maximize", "center"},
    "linear": {"kind", "dim", "seed", "noise_std", "maximize", "slope"},
    "ridge": {"kind", "dim", "seed", "noise_std", "maximize", "center", "weights"},
    "external": {"kind", "dim", "seed", "noise_std", "maximize", "lower", "upper",
                 "command", "timeout", "handshake_timeout", "max_failures"},
}

_POLICY_KEYS = {
    "name", "kind", "learn", "move", "queries_per_iter", "step", "p_star",
    "max_inner_steps", "eta", "window", "refit_every", "fit_restarts",
    "fit_max_iters", "init_lengthscale", "init_outputscale", "init_noise_var",
    "acq_batch", "acq_restarts", "acq_max_iters", "acq_local_radius",
    "ars_directions", "ars_top", "ars_noise", "ars_step", "priors",
}

_PRIOR_PARAMS = {"lengthscales", "outputscale", "noise_var"}

_TOP_KEYS = {"budget", "repeats", "start_seed", "parallel", "objective", "policies"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with all defaults applied."""

    objective: dict
    policies: list[dict]
    budget: int
    repeats: int
    start_seed: int
    parallel: int

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "repeats": self.repeats,
            "start_seed": self.start_seed,
            "parallel": self.parallel,
            "objective": json.loads(json.dumps(self.objective)),
            "policies": json.loads(json.dumps(self.policies)),
        }

    def hash(self) -> str:
        """Digest of every result-affecting field (parallelism excluded)."""
        semantic = self.to_dict()
        semantic.pop("parallel")
        return hashlib.sha256(json.dumps(semantic, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    objective: str
    mean_terminal: float
    stderr: float
    terminals: tuple[float, ...]


def _reject_unknown(table: dict, allowed: set, where: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _validated_prior(spec: dict, where: str) -> dict:
    _require(isinstance(spec, dict) and "kind" in spec, f"{where} must be a table with a 'kind'")
    kind = spec["kind"]
    if kind == "normal":
        _reject_unknown(spec, {"kind", "mean", "sd"}, where)
        _require("mean" in spec and "sd" in spec, f"{where}: normal prior needs mean and sd")
        _require(spec["sd"] > 0, f"{where}: sd must be positive")
        return {"kind": "normal", "mean": float(spec["mean"]), "sd": float(spec["sd"])}
    if kind == "uniform":
        _reject_unknown(spec, {"kind", "lo", "hi"}, where)
        _require("lo" in spec and "hi" in spec, f"{where}: uniform prior needs lo and hi")
        _require(spec["lo"] < spec["hi"], f"{where}: uniform prior needs lo < hi")
        return {"kind": "uniform", "lo": float(spec["lo"]), "hi": float(spec["hi"])}
    if kind == "fixed":
        _reject_unknown(spec, {"kind", "value"}, where)
        _require("value" in spec, f"{where}: fixed prior needs a value")
        return {"kind": "fixed", "value": float(spec["value"])}
    raise ConfigError(f"{where}: unknown prior kind {kind!r}")


def _validated_objective(spec: dict) -> dict:
    _require(isinstance(spec, dict), "objective must be a table")
    kind = spec.get("kind")
    _require(kind in _OBJECTIVE_KEYS, f"objective.kind must be one of {sorted(_OBJECTIVE_KEYS)}, got {kind!r}")
    _reject_unknown(spec, _OBJECTIVE_KEYS[kind], "objective")
    _require("dim" in spec, "objective.dim is required")
    dim = spec["dim"]
    _require(isinstance(dim, int) and dim >= 1, "objective.dim must be a positive integer")
    out = {
        "kind": kind,
        "dim": dim,
        "seed": int(spec.get("seed", 0)),
        "noise_std": float(spec.get("noise_std", 0.0)),
        "maximize": bool(spec.get("maximize", False)),
    }
    _require(out["noise_std"] >= 0, "objective.noise_std must be non-negative")
    if kind == "rff":
        ls = spec.get("lengthscale")
        out["lengthscale"] = float(ls) if ls is not None else round(0.1 * dim**0.5, 12)
        out["outputscale"] = float(spec.get("outputscale", 1.0))
        out["features"] = int(spec.get("features", 1024))
        _require(out["lengthscale"] > 0 and out["outputscale"] > 0, "objective scales must be positive")
        _require(out["features"] >= 1, "objective.features must be positive")
    if kind in ("rff", "external"):
        out["lower"] = [float(v) for v in spec.get("lower", [0.0] * dim)]
        out["upper"] = [float(v) for v in spec.get("upper", [1.0] * dim)]
        _require(len(out["lower"]) == dim and len(out["upper"]) == dim, "objective bounds must match dim")
        _require(all(a < b for a, b in zip(out["lower"], out["upper"])),
                 "objective bounds require lower < upper per dimension")
    if kind in ("quadratic", "ridge") and "center" in spec:
        out["center"] = [float(v) for v in spec["center"]]
    if kind == "ridge" and "weights" in spec:
        out["weights"] = [float(v) for v in spec["weights"]]
    if kind == "linear" and "slope" in spec:
        out["slope"] = [float(v) for v in spec["slope"]]
    if kind == "external":
        _require("command" in spec and isinstance(spec["command"], list) and spec["command"],
                 "objective.command must be a non-empty list of strings")
        out["command"] = [str(c) for c in spec["command"]]
        out["timeout"] = float(spec.get("timeout", 60.0))
        out["handshake_timeout"] = float(spec.get("handshake_timeout", 10.0))
        out["max_failures"] = int(spec.get("max_failures", 3))
    return out


def _validated_policy(spec: dict, index: int) -> dict:
    where = f"policies[{index}]"
    _require(isinstance(spec, dict), f"{where} must be a table")
    _reject_unknown(spec, _POLICY_KEYS, where)
    kind = spec.get("kind")
    _require(kind in ("mpd", "gibo", "ars", "custom"), f"{where}.kind must be mpd|gibo|ars|custom, got {kind!r}")
    out = {
        "name": str(spec.get("name", kind)),
        "kind": kind,
        "queries_per_iter": int(spec.get("queries_per_iter", 1)),
        "step": float(spec.get("step", 1e-3)),
        "p_star": float(spec.get("p_star", 0.65)),
        "max_inner_steps": int(spec.get("max_inner_steps", 1000)),
        "window": int(spec.get("window", 512)),
        "refit_every": int(spec.get("refit_every", 1)),
        "fit_restarts": int(spec.get("fit_restarts", 4)),
        "fit_max_iters": int(spec.get("fit_max_iters", 100)),
        "init_lengthscale": float(spec.get("init_lengthscale", 0.2)),
        "init_outputscale": float(spec.get("init_outputscale", 1.0)),
        "init_noise_var": float(spec.get("init_noise_var", 1e-4)),
        "acq_batch": int(spec.get("acq_batch", 1)),
        "acq_restarts": int(spec.get("acq_restarts", 8)),
        "acq_max_iters": int(spec.get("acq_max_iters", 50)),
        "acq_local_radius": float(spec.get("acq_local_radius", 1.0)),
        "ars_directions": int(spec.get("ars_directions", 4)),
        "ars_noise": float(spec.get("ars_noise", 0.02)),
        "ars_step": float(spec.get("ars_step", 0.02)),
    }
    _require(out["step"] > 0, f"{where}.step must be positive")
    _require(0.5 <= out["p_star"] < 1.0, f"{where}.p_star must lie in [0.5, 1), got {out['p_star']}")
    if "eta" in spec and spec["eta"] is not None:
        out["eta"] = float(spec["eta"])
        _require(out["eta"] > 0, f"{where}.eta must be positive")
    if "ars_top" in spec and spec["ars_top"] is not None:
        out["ars_top"] = int(spec["ars_top"])
    if kind == "custom":
        out["learn"] = str(spec.get("learn", ""))
        out["move"] = str(spec.get("move", ""))
    elif "learn" in spec or "move" in spec:
        raise ConfigError(f"{where}: learn/move may only be set for kind='custom'")
    if "priors" in spec:
        _reject_unknown(spec["priors"], _PRIOR_PARAMS, f"{where}.priors")
        out["priors"] = {
            param: _validated_prior(sub, f"{where}.priors.{param}")
            for param, sub in spec["priors"].items()
        }
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed config; unknown keys are rejected, defaults filled."""
    _require(isinstance(raw, dict), "config root must be a table")
    _reject_unknown(raw, _TOP_KEYS, "config")
    _require("objective" in raw, "config requires an [objective] table")
    _require("policies" in raw and isinstance(raw["policies"], list) and raw["policies"],
             "config requires a non-empty [[policies]] list")
    budget = raw.get("budget", 100)
    _require(isinstance(budget, int) and budget >= 1, "budget must be a positive integer")
    repeats = raw.get("repeats", 1)
    _require(isinstance(repeats, int) and repeats >= 1, "repeats must be a positive integer")
    policies = [_validated_policy(p, i) for i, p in enumerate(raw["policies"])]
    names = [p["name"] for p in policies]
    _require(len(set(names)) == len(names), f"policy names must be unique, got {names}")
    return ExperimentConfig(
        objective=_validated_objective(raw["objective"]),
        policies=policies,
        budget=budget,
        repeats=repeats,
        start_seed=int(raw.get("start_seed", 0)),
        parallel=int(raw.get("parallel", 0)),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a TOML (or JSON) experiment config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"JSON parse error in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    else:
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse error in {path}: {exc}") from exc
    return config_from_dict(raw)


def _priors_from_spec(spec: dict | None) -> Hyperpriors:
    if not spec:
        return Hyperpriors()

    def build(p):
        if p is None:
            return None
        if p["kind"] == "normal":
            return Normal(p["mean"], p["sd"])
        if p["kind"] == "uniform":
            return Uniform(p["lo"], p["hi"])
        return Fixed(p["value"])

    return Hyperpriors(
        lengthscales=build(spec.get("lengthscales")),
        outputscale=build(spec.get("outputscale")),
        noise_var=build(spec.get("noise_var")),
    )


def build_objective(spec: dict) -> Objective:
    """Instantiate the objective described by a validated config table."""
    kind = spec["kind"]
    if kind == "rff":
        return make_rff_objective(
            dim=spec["dim"],
            lengthscale=spec["lengthscale"],
            outputscale=spec["outputscale"],
            features=spec["features"],
            seed=spec["seed"],
            noise_std=spec["noise_std"],
            maximize=spec["maximize"],
            lower=np.array(spec["lower"]),
            upper=np.array(spec["upper"]),
        )
    if kind in ("quadratic", "linear", "ridge"):
        kwargs = {}
        for key in ("center", "weights", "slope"):
            if key in spec:
                kwargs[key] = np.array(spec[key], dtype=float)
        obj = analytic_suite(kind, spec["dim"], noise_std=spec["noise_std"], **kwargs)
        if spec["maximize"]:
            inner = obj.fn
            obj.fn = lambda x: -inner(x)
            obj.negated = True
        return obj
    if kind == "external":
        from .external import ProtocolConfig, external_objective

        return external_objective(
            command=spec["command"],
            dim=spec["dim"],
            lower=np.array(spec["lower"]),
            upper=np.array(spec["upper"]),
            maximize=spec["maximize"],
            noise_std=spec["noise_std"],
            cfg=ProtocolConfig(
                timeout=spec["timeout"],
                handshake_timeout=spec["handshake_timeout"],
                max_consecutive_failures=spec["max_failures"],
            ),
        )
    raise ConfigError(f"unknown objective kind {kind!r}")


def build_policy_config(spec: dict, budget: int, seed: int) -> PolicyConfig:
    return PolicyConfig(
        kind=spec["kind"],
        name=spec["name"],
        seed=seed,
        budget=budget,
        learn=spec.get("learn", ""),
        move=spec.get("move", ""),
        queries_per_iter=spec["queries_per_iter"],
        step=spec["step"],
        p_star=spec["p_star"],
        max_inner_steps=spec["max_inner_steps"],
        eta=spec.get("eta"),
        window=spec["window"],
        priors=_priors_from_spec(spec.get("priors")),
        init_lengthscale=spec["init_lengthscale"],
        init_outputscale=spec["init_outputscale"],
        init_noise_var=spec["init_noise_var"],
        refit_every=spec["refit_every"],
        fit_restarts=spec["fit_restarts"],
        fit_max_iters=spec["fit_max_iters"],
        acq=AcqOptConfig(
            q=spec["acq_batch"],
            restarts=spec["acq_restarts"],
            max_iters=spec["acq_max_iters"],
            local_radius=spec["acq_local_radius"],
        ),
        ars_directions=spec["ars_directions"],
        ars_top=spec.get("ars_top"),
        ars_noise=spec["ars_noise"],
        ars_step=spec["ars_step"],
    )


def run_seed(start_seed: int, policy_index: int, run_index: int) -> int:
    """Stable per-run seed, independent of execution order."""
    return int(np.random.SeedSequence([start_seed, policy_index, run_index]).generate_state(1)[0])


@dataclass
class _Job:
    objective_spec: dict
    policy_spec: dict
    budget: int
    seed: int
    start: list[float]
    policy_index: int
    run_index: int


def _execute_job(job: _Job):
    objective = build_objective(job.objective_spec)
    try:
        cfg = build_policy_config(job.policy_spec, job.budget, job.seed)
        trace = run_policy(objective, np.array(job.start), cfg)
    finally:
        objective.close()
    return job.policy_index, job.run_index, trace, objective.negated


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_trace_csv(path: Path, trace: RunTrace, negated: bool, objective_name: str, run_index: int):
    """One CSV per run; a JSON comment header carries run identity."""
    header = {
        "policy": trace.policy,
        "run": run_index,
        "seed": trace.seed,
        "start": [float(v) for v in trace.start],
        "objective": objective_name,
        "negated": negated,
        "aborted": trace.aborted,
    }
    sign = -1.0 if negated else 1.0
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for rec in trace.records:
        writer.writerow([
            rec.eval_index,
            rec.phase,
            json.dumps([float(v) for v in rec.x]),
            repr(sign * rec.y),
            repr(sign * rec.best_y),
            _fmt(rec.max_descent_prob),
            _fmt(rec.acq_value),
            "" if rec.inner_steps is None else str(rec.inner_steps),
        ])
    for event in trace.events:
        buf.write(f"# event: {event}\n")
    if trace.aborted:
        buf.write(f"# aborted: {trace.abort_reason}\n")
    path.write_text(buf.getvalue())


def read_trace_csv(path: Path):
    """Returns (header dict, list of row dicts with floats where applicable)."""
    header = {}
    rows = []
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("# "):
            header = json.loads(first[2:])
        else:
            fh.seek(0)
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            rows.append({
                "eval_index": int(row["eval_index"]),
                "phase": row["phase"],
                "x": np.array(json.loads(row["x_json"])),
                "y": float(row["y"]),
                "best_y": float(row["best_y"]),
                "max_descent_prob": float(row["max_descent_prob"]) if row["max_descent_prob"] else None,
                "acq_value": float(row["acq_value"]) if row["acq_value"] else None,
                "inner_steps": int(row["inner_steps"]) if row["inner_steps"] else None,
            })
    return header, rows


def _trace_path(out_dir: Path, policy: str, run_index: int) -> Path:
    return out_dir / "traces" / f"{policy}__run{run_index:03d}.csv"


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Execute every (policy, start) run and persist traces and summaries.

    Start points are drawn once from a scrambled Sobol sequence and shared
    across policies.  Failed runs are recorded in the manifest and do not
    stop the remaining runs.
    """
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    (out_dir / "progressive").mkdir(exist_ok=True)

    spec = cfg.objective
    dim = spec["dim"]
    lower = np.array(spec.get("lower", [0.0] * dim))
    upper = np.array(spec.get("upper", [1.0] * dim))
    starts = sobol_starts(dim, cfg.repeats, lower, upper, cfg.start_seed)

    jobs = [
        _Job(
            objective_spec=spec,
            policy_spec=pol,
            budget=cfg.budget,
            seed=run_seed(cfg.start_seed, i, j),
            start=[float(v) for v in starts[j]],
            policy_index=i,
            run_index=j,
        )
        for i, pol in enumerate(cfg.policies)
        for j in range(cfg.repeats)
    ]

    workers = cfg.parallel if cfg.parallel > 0 else (os.cpu_count() or 1)
    results: dict[tuple[int, int], tuple[RunTrace, bool]] = {}
    failures: list[dict] = []
    if workers == 1 or len(jobs) == 1:
        outcomes = []
        for job in jobs:
            try:
                outcomes.append(_execute_job(job))
            except Exception as exc:  # a failed run must not sink the others
                failures.append({"policy": job.policy_spec["name"], "run": job.run_index, "error": str(exc)})
                log.warning("run failed: %s run %d: %s", job.policy_spec["name"], job.run_index, exc)
    else:
        outcomes = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_execute_job, job): job for job in jobs}
            for future, job in futures.items():
                try:
                    outcomes.append(future.result())
                except Exception as exc:
                    failures.append({"policy": job.policy_spec["name"], "run": job.run_index, "error": str(exc)})
                    log.warning("run failed: %s run %d: %s", job.policy_spec["name"], job.run_index, exc)
    for policy_index, run_index, trace, negated in outcomes:
        results[(policy_index, run_index)] = (trace, negated)
        if trace.aborted:
            failures.append({
                "policy": cfg.policies[policy_index]["name"],
                "run": run_index,
                "error": f"aborted: {trace.abort_reason}",
            })

    objective_name = _objective_display_name(spec)
    for (policy_index, run_index), (trace, negated) in sorted(results.items()):
        policy = cfg.policies[policy_index]["name"]
        write_trace_csv(_trace_path(out_dir, policy, run_index), trace, negated, objective_name, run_index)

    for i, pol in enumerate(cfg.policies):
        done = [(results[(i, j)]) for j in range(cfg.repeats) if (i, j) in results]
        if done:
            _write_progressive(out_dir / "progressive" / f"{pol['name']}.csv",
                               [trace for trace, _ in done], done[0][1])

    rows = summarize(out_dir)
    _write_summary_csv(out_dir / "summary.csv", rows)

    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "objective_name": objective_name,
        "starts": [[float(v) for v in row] for row in starts],
        "run_seeds": {
            pol["name"]: [run_seed(cfg.start_seed, i, j) for j in range(cfg.repeats)]
            for i, pol in enumerate(cfg.policies)
        },
        "budget_semantics": "every objective evaluation counts against the budget",
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "mpdopt": _package_version(),
        },
        "created": datetime.now(timezone.utc).isoformat(),
        "failures": failures,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("mpdopt")
    except Exception:
        return "unknown"


def _objective_display_name(spec: dict) -> str:
    return f"{spec['kind']}-d{spec['dim']}"


def _write_progressive(path: Path, traces: list[RunTrace], negated: bool):
    sign = -1.0 if negated else 1.0
    n_rows = min(len(t.records) for t in traces)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["eval_index", "mean_best", "stderr"])
    series = np.array([[sign * t.records[i].best_y for i in range(n_rows)] for t in traces])
    for i in range(n_rows):
        col = series[:, i]
        err = col.std(ddof=1) / np.sqrt(len(col)) if len(col) > 1 else 0.0
        writer.writerow([i, repr(float(col.mean())), repr(float(err))])
    path.write_text(buf.getvalue())


def summarize(results_dir: str | Path) -> list[SummaryRow]:
    """Recompute per-policy terminal statistics directly from trace files."""
    results_dir = Path(results_dir)
    trace_dir = results_dir / "traces"
    if not trace_dir.is_dir():
        raise ConfigError(f"no traces directory under {results_dir}")
    by_policy: dict[str, list[tuple[int, float]]] = {}
    objective_names: dict[str, str] = {}
    for path in sorted(trace_dir.glob("*.csv")):
        try:
            header, rows = read_trace_csv(path)
            if not rows:
                raise ValueError("empty trace")
            policy = header.get("policy", path.stem.split("__")[0])
            run = int(header.get("run", 0))
            terminal = rows[-1]["best_y"]
        except Exception as exc:
            log.warning("skipping corrupt trace %s: %s", path.name, exc)
            continue
        by_policy.setdefault(policy, []).append((run, terminal))
        objective_names[policy] = header.get("objective", "unknown")
    rows_out = []
    for policy in sorted(by_policy):
        entries = sorted(by_policy[policy])
        terminals = tuple(v for _, v in entries)
        arr = np.array(terminals)
        err = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        rows_out.append(SummaryRow(policy, objective_names[policy], float(arr.mean()), err, terminals))
    return rows_out


def corrupt_traces(results_dir: str | Path) -> list[str]:
    """Names of trace files that could not be parsed (for reporting)."""
    results_dir = Path(results_dir)
    bad = []
    for path in sorted((results_dir / "traces").glob("*.csv")):
        try:
            _, rows = read_trace_csv(path)
            if not rows:
                raise ValueError("empty trace")
        except Exception:
            bad.append(path.name)
    return bad


def _write_summary_csv(path: Path, rows: list[SummaryRow]):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["policy", "objective", "mean_terminal", "stderr", "terminals_json"])
    for row in rows:
        writer.writerow([
            row.policy,
            row.objective,
            repr(row.mean_terminal),
            repr(row.stderr),
            json.dumps(list(row.terminals)),
        ])
    path.write_text(buf.getvalue())


def summary_text(rows: list[SummaryRow], corrupt: list[str] | None = None) -> str:
    lines = []
    width = max([len(r.policy) for r in rows] + [6])
    lines.append(f"{'policy':<{width}}  {'objective':<14}  {'mean terminal':>14}  {'stderr':>10}  runs")
    for row in rows:
        lines.append(
            f"{row.policy:<{width}}  {row.objective:<14}  {row.mean_terminal:>14.4f}  "
            f"{row.stderr:>10.4f}  {len(row.terminals)}"
        )
    for name in corrupt or []:
        lines.append(f"warning: excluded corrupt trace {name}")
    return "\n".join(lines) + "\n"


def progressive_table(results_dir: str | Path) -> list[tuple[str, int, float, float]]:
    """(policy, eval_index, mean_best, stderr) rows recomputed from traces."""
    results_dir = Path(results_dir)
    by_policy: dict[str, list[list[float]]] = {}
    for path in sorted((results_dir / "traces").glob("*.csv")):
        try:
            header, rows = read_trace_csv(path)
            if not rows:
                continue
        except Exception:
            continue
        policy = header.get("policy", path.stem.split("__")[0])
        by_policy.setdefault(policy, []).append([r["best_y"] for r in rows])
    out = []
    for policy in sorted(by_policy):
        series = by_policy[policy]
        n_rows = min(len(s) for s in series)
        arr = np.array([s[:n_rows] for s in series])
        for i in range(n_rows):
            col = arr[:, i]
            err = float(col.std(ddof=1) / np.sqrt(len(col))) if len(col) > 1 else 0.0
            out.append((policy, i, float(col.mean()), err))
    return out
