"""Experiment plans: TOML loading, strict validation and orchestration.

A plan is a TOML file with two tables and a few top-level keys::

    seeds = [0, 1, 2]            # optional, default [0]
    out_dir = "out"              # optional, overridden by --out
    capture_packets = false      # optional; fedlion-only wire capture

    [problem]
    kind = "mlp-classification"  # default "synthetic-quadratic"
    ...                          # kind-specific keys, see PROBLEM_SCHEMAS

    [federated]
    algorithm = "fedlion"        # or algorithms = [...]
    rounds = 300                 # required
    local_steps = 5              # int or list; sweep dimension
    ...

Unknown keys anywhere are hard errors.  The run grid is the product
algorithms x local_steps x seeds; each run is named
``{algorithm}_E{E}_seed{seed}``.
"""

from __future__ import annotations

import json
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .algorithms import ALGORITHMS, SCHEDULES, FederatedConfig, run_federation
from .data import load_csv_dataset
from .errors import ConfigError
from .metrics import emit_metrics, fit_rate
from .problems import (
    make_classification_federation,
    make_csv_federation,
    make_quadratic_federation,
)

# key -> (type, default); REQUIRED marks keys without a default
REQUIRED = object()

PROBLEM_SCHEMAS = {
    "synthetic-quadratic": {
        "dim": (int, 16),
        "num_clients": (int, 8),
        "heterogeneity": (float, 0.0),
        "noise_scale": (float, 1.0),
        "init_spread": (float, 1.0),
    },
    "mlp-classification": {
        "num_clients": (int, 20),
        "num_classes": (int, 10),
        "input_dim": (int, 20),
        "hidden_dim": (int, 16),
        "examples_per_client": (int, 100),
        "partition_alpha": (float, 1.0),
        "class_sep": (float, 2.0),
    },
    "synthetic-logistic": {
        "num_clients": (int, 20),
        "num_classes": (int, 10),
        "input_dim": (int, 20),
        "examples_per_client": (int, 100),
        "partition_alpha": (float, 1.0),
        "class_sep": (float, 2.0),
    },
    "external-csv": {
        "path": (str, REQUIRED),
        "model": (str, "logistic"),
        "hidden_dim": (int, 16),
        "num_clients": (int, 8),
        "partition_alpha": (float, 1.0),
    },
}

FEDERATED_SCHEMA = {
    "rounds": (int, REQUIRED),
    "local_steps": (list, [5]),
    "learning_rate": (float, 0.001),
    "beta1": (float, 0.9),
    "beta2": (float, 0.99),
    "batch_size": (int, 32),
    "participants": (int, None),
    "schedule": (str, "fixed"),
}

TOP_LEVEL_KEYS = ("seeds", "out_dir", "capture_packets", "problem", "federated")


@dataclass(frozen=True)
class RunSpec:
    name: str
    config: FederatedConfig


@dataclass(frozen=True)
class ExperimentPlan:
    problem: dict
    runs: list[RunSpec]
    seeds: list[int]
    out_dir: str | None
    capture_packets: bool


def _coerce(section: str, key: str, expected, value):
    if expected is list:
        return value if isinstance(value, list) else [value]
    if isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected {expected.__name__}, got {value!r}")
    if expected is float and isinstance(value, int):
        return float(value)
    if not isinstance(value, expected):
        raise ConfigError(f"{section}.{key}: expected {expected.__name__}, got {value!r}")
    return value


def _validate_table(section: str, table: dict, schema: dict) -> dict:
    for key in table:
        if key not in schema:
            raise ConfigError(f"{section}.{key}: unknown key")
    out = {}
    for key, (expected, default) in schema.items():
        if key in table:
            out[key] = _coerce(section, key, expected, table[key])
        elif default is REQUIRED:
            raise ConfigError(f"{section}.{key}: required key missing")
        else:
            out[key] = default
    return out


def load_plan(path: str | Path) -> ExperimentPlan:
    """Load and fully validate a plan; every grid entry validates on its own."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: not valid TOML: {err}") from err

    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"{key}: unknown top-level key")

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        raise ConfigError(f"seeds: expected a nonempty list of nonnegative ints, got {seeds!r}")
    out_dir = raw.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError(f"out_dir: expected string, got {out_dir!r}")
    capture = raw.get("capture_packets", False)
    if not isinstance(capture, bool):
        raise ConfigError(f"capture_packets: expected bool, got {capture!r}")

    problem_raw = raw.get("problem", {})
    if not isinstance(problem_raw, dict):
        raise ConfigError("problem: expected a table")
    kind = problem_raw.get("kind", "synthetic-quadratic")
    if kind not in PROBLEM_SCHEMAS:
        raise ConfigError(f"problem.kind: unknown value {kind!r}")
    body = {k: v for k, v in problem_raw.items() if k != "kind"}
    problem = _validate_table("problem", body, PROBLEM_SCHEMAS[kind])
    problem["kind"] = kind
    for key in ("num_clients", "num_classes", "input_dim", "hidden_dim", "examples_per_client", "dim"):
        if key in problem and problem[key] < 1:
            raise ConfigError(f"problem.{key}: must be >= 1, got {problem[key]}")
    for key in ("heterogeneity", "noise_scale", "partition_alpha", "class_sep", "init_spread"):
        if key in problem and problem[key] < 0:
            raise ConfigError(f"problem.{key}: must be >= 0, got {problem[key]}")

    fed_raw = raw.get("federated")
    if not isinstance(fed_raw, dict):
        raise ConfigError("federated: table is required")
    fed_raw = dict(fed_raw)
    if "algorithm" in fed_raw and "algorithms" in fed_raw:
        raise ConfigError("federated.algorithm: give either algorithm or algorithms, not both")
    algorithms = fed_raw.pop("algorithms", None)
    single = fed_raw.pop("algorithm", None)
    if algorithms is None:
        if single is None:
            raise ConfigError("federated.algorithm: required key missing")
        algorithms = [single]
    if not isinstance(algorithms, list) or not algorithms:
        raise ConfigError(f"federated.algorithms: expected a nonempty list, got {algorithms!r}")
    for algo in algorithms:
        if algo not in ALGORITHMS:
            raise ConfigError(f"federated.algorithm: unknown value {algo!r}")
    fed = _validate_table("federated", fed_raw, FEDERATED_SCHEMA)
    local_steps = fed["local_steps"]
    if not all(isinstance(e, int) and not isinstance(e, bool) for e in local_steps):
        raise ConfigError(f"federated.local_steps: expected ints, got {local_steps!r}")
    if fed["schedule"] not in SCHEDULES:
        raise ConfigError(f"federated.schedule: unknown value {fed['schedule']!r}")

    N = problem["num_clients"]
    n = fed["participants"] if fed["participants"] is not None else N
    if not 1 <= n <= N:
        raise ConfigError(f"federated.participants: need 1 <= n <= num_clients, got n={n} N={N}")
    if capture and any(a != "fedlion" for a in algorithms):
        raise ConfigError("capture_packets: only supported when every algorithm is fedlion")

    runs = []
    for algo in algorithms:
        for E in local_steps:
            for seed in seeds:
                config = FederatedConfig(
                    algorithm=algo,
                    T=fed["rounds"],
                    E=E,
                    gamma=fed["learning_rate"],
                    beta1=fed["beta1"],
                    beta2=fed["beta2"],
                    B=fed["batch_size"],
                    n=n,
                    seed=seed,
                    schedule=fed["schedule"],
                )
                runs.append(RunSpec(name=f"{algo}_E{E}_seed{seed}", config=config))
    return ExperimentPlan(
        problem=problem, runs=runs, seeds=list(seeds), out_dir=out_dir, capture_packets=capture
    )


def build_problem(problem: dict, seed: int):
    """Construct the problem and shards a run trains on, keyed by its seed."""
    kind = problem["kind"]
    if kind == "synthetic-quadratic":
        return make_quadratic_federation(
            d=problem["dim"],
            N=problem["num_clients"],
            heterogeneity=problem["heterogeneity"],
            seed=seed,
            noise_scale=problem["noise_scale"],
            init_spread=problem["init_spread"],
        )
    if kind in ("mlp-classification", "synthetic-logistic"):
        kwargs = dict(
            N=problem["num_clients"],
            seed=seed,
            num_classes=problem["num_classes"],
            input_dim=problem["input_dim"],
            examples_per_client=problem["examples_per_client"],
            partition_alpha=problem["partition_alpha"],
            class_sep=problem["class_sep"],
        )
        if kind == "mlp-classification":
            return make_classification_federation(
                model="mlp", hidden_dim=problem["hidden_dim"], **kwargs
            )
        return make_classification_federation(model="logistic", **kwargs)
    features, labels = load_csv_dataset(problem["path"])
    return make_csv_federation(
        features,
        labels,
        N=problem["num_clients"],
        seed=seed,
        model=problem["model"],
        hidden_dim=problem["hidden_dim"],
        partition_alpha=problem["partition_alpha"],
    )


def run_plan(plan: ExperimentPlan, out_dir: str | None = None, threads: int = 1) -> int:
    """Execute every run in the plan; returns 0 iff all runs completed.

    Per run: a metrics CSV, an update-value histogram JSON and a final model
    checkpoint, all named ``{algorithm}_E{E}_seed{seed}``.  A failed run
    leaves a ``.failed`` marker and never disturbs other runs' outputs.
    A ``manifest.json`` summarises the whole plan.
    """
    out = Path(out_dir if out_dir is not None else (plan.out_dir or "out"))
    out.mkdir(parents=True, exist_ok=True)
    manifest_runs = []
    failures = 0
    for spec in plan.runs:
        try:
            problem, shards = build_problem(plan.problem, spec.config.seed)
            capture = out / f"{spec.name}.packets" if plan.capture_packets else None
            result = run_federation(
                problem,
                shards,
                spec.config,
                threads=threads,
                capture_path=capture,
                checkpoint_path=out / f"{spec.name}.ckpt",
            )
            emit_metrics(result.records, out / f"{spec.name}.csv")
            _write_histogram(result, spec.config, out / f"{spec.name}_hist.json")
            slope = None
            if len(result.records) >= 10:
                slope = fit_rate(result.records, "grad_l1").slope
            manifest_runs.append(
                {
                    "name": spec.name,
                    "algorithm": spec.config.algorithm,
                    "E": spec.config.E,
                    "seed": spec.config.seed,
                    "final_loss": result.records[-1].train_loss,
                    "total_uplink_bits": sum(r.uplink_bits for r in result.records),
                    "rate_slope": slope,
                }
            )
        except Exception:
            failures += 1
            (out / f"{spec.name}.failed").write_text(traceback.format_exc())
    algo_summary = []
    for algo in sorted({r["algorithm"] for r in manifest_runs}):
        losses = [r["final_loss"] for r in manifest_runs if r["algorithm"] == algo]
        algo_summary.append({"algorithm": algo, "mean_final_loss": sum(losses) / len(losses)})
    algo_summary.sort(key=lambda entry: entry["mean_final_loss"])
    manifest = {"runs": manifest_runs, "algorithms": algo_summary}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return 0 if failures == 0 else 1


def _write_histogram(result, config: FederatedConfig, path: Path) -> None:
    if result.histogram is not None:
        payload = result.histogram.to_json_dict()
    else:
        # No integer updates exist for this algorithm; keep the schema.
        payload = {"E": config.E, "counts": [0] * (2 * config.E + 1), "entropy_bits": 0.0}
    path.write_text(json.dumps(payload) + "\n")
