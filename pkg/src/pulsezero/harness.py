"""Experiment front-end: config parsing and validation, deterministic seed
derivation, task/optimizer wiring, result persistence, and sweeps.

Configs are INI files (key = value under [section] headers); the full schema
is documented in docs/config-schema.md and validated strictly with
field-path error messages. Every output artifact embeds the config content
hash, the derived child seed and the toolkit version.

Reproducibility contract: with a fixed config hash and master seed, a
single-worker rerun reproduces records.csv (minus the trailing wall_time_s
column, which tracks physical time) and summary.json byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, alphazero, analysis, baselines, environments, network, quantum
from .errors import ConfigError
from .records import Budget, OptimizationRecord

SCHEMA_VERSION = 1

TASKS = ("sfq", "filtered", "pwc", "digital_toy")
OPTIMIZERS = ("alphazero", "ga", "qlearning", "sd", "grape", "hybrid")
SYSTEM_KINDS = ("cross_resonance", "resonant_qubit")

#: optimizers that need a continuous-amplitude task
_CONTINUOUS_ONLY = ("grape", "hybrid")
#: optimizers that need a raw bit-string objective
_BITSTRING_ONLY = ("ga",)


@dataclass(frozen=True)
class SystemConfig:
    kind: str = "cross_resonance"
    detuning_hz: float = 0.35e9
    coupling_hz: float = 5e6
    max_drive_hz: float = 1.0e9
    levels_per_transmon: int = 2

    def build(self) -> quantum.ControlSystem:
        if self.kind == "resonant_qubit":
            return quantum.resonant_qubit_system(quantum.TWO_PI * self.max_drive_hz)
        params = quantum.SystemParameters(
            detuning=quantum.TWO_PI * self.detuning_hz,
            coupling=quantum.TWO_PI * self.coupling_hz,
            max_drive=quantum.TWO_PI * self.max_drive_hz,
            levels_per_transmon=self.levels_per_transmon,
        )
        return quantum.cross_resonance_system(params)


@dataclass(frozen=True)
class HybridConfig:
    split: float = 0.5
    order: str = "best"
    top_k: int | None = None


@dataclass(frozen=True)
class QLearningConfig:
    alpha: float = 0.001
    init_scale: float = 0.0


@dataclass(frozen=True)
class NetworkConfig:
    hidden_width: int = 400
    torso_layers: int = 4
    l2_coefficient: float = 0.001
    learning_rate: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "pwc"
    optimizers: tuple[str, ...] = ("alphazero",)
    durations: tuple[float, ...] = (60e-9,)
    budget_episodes: int | None = None
    budget_seconds: float | None = None
    master_seed: int = 0
    out_dir: str = "runs"
    workers: int = 1
    system: SystemConfig = SystemConfig()
    sfq: environments.SfqConfig = environments.SfqConfig()
    filtered: environments.FilteredConfig = environments.FilteredConfig()
    pwc: environments.PwcConfig = environments.PwcConfig()
    search: alphazero.SearchConfig = alphazero.SearchConfig()
    training: network.TrainingConfig = network.TrainingConfig()
    net: NetworkConfig = NetworkConfig()
    ga: baselines.GaConfig = baselines.GaConfig()
    qlearning: QLearningConfig = QLearningConfig()
    grape: baselines.GrapeConfig = baselines.GrapeConfig()
    hybrid: HybridConfig = HybridConfig()

    def budget(self) -> Budget:
        return Budget(units=self.budget_episodes, seconds=self.budget_seconds)


def config_hash(config: ExperimentConfig) -> str:
    """Content hash of the experiment identity. The master seed, output
    directory and worker count are execution knobs, not identity, and are
    excluded so that 'same hash + same seed' names a reproducible run."""
    payload = asdict(config)
    for volatile in ("master_seed", "out_dir", "workers"):
        payload.pop(volatile)
    canonical = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(canonical.encode()).hexdigest()


def seed_derivation(master_seed: int, identifier: str) -> int:
    """Deterministic, collision-resistant child seed: hash(master ∥ id)."""
    digest = hashlib.sha256(f"{master_seed}\x1f{identifier}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1  # non-negative 63-bit


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

_SECTION_TYPES = {
    "system": SystemConfig,
    "sfq": environments.SfqConfig,
    "filtered": environments.FilteredConfig,
    "pwc": environments.PwcConfig,
    "search": alphazero.SearchConfig,
    "training": network.TrainingConfig,
    "network": NetworkConfig,
    "ga": baselines.GaConfig,
    "qlearning": QLearningConfig,
    "grape": baselines.GrapeConfig,
    "hybrid": HybridConfig,
}

_SECTION_FIELD = {
    "system": "system",
    "sfq": "sfq",
    "filtered": "filtered",
    "pwc": "pwc",
    "search": "search",
    "training": "training",
    "network": "net",
    "ga": "ga",
    "qlearning": "qlearning",
    "grape": "grape",
    "hybrid": "hybrid",
}


def _convert(raw: str, target_type, path: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as err:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {target_type.__name__}") from err


def _dataclass_from_section(cls, section, section_name):
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}
    kwargs = {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"[{section_name}] {key}: unknown option")
        ftype = fields[key].type
        path = f"[{section_name}] {key}"
        if raw.strip().lower() == "none":
            kwargs[key] = None
        elif "int" in str(ftype) and "| None" in str(ftype):
            kwargs[key] = _convert(raw, int, path)
        elif "float | None" in str(ftype):
            kwargs[key] = _convert(raw, float, path)
        elif "int" in str(ftype):
            kwargs[key] = _convert(raw, int, path)
        elif "float" in str(ftype):
            kwargs[key] = _convert(raw, float, path)
        elif "bool" in str(ftype):
            kwargs[key] = _convert(raw, bool, path)
        else:
            kwargs[key] = raw.strip()
    try:
        return cls(**kwargs)
    except Exception as err:
        raise ConfigError(f"[{section_name}]: {err}") from err


def load_config(path) -> ExperimentConfig:
    """Parse and strictly validate an experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if "experiment" not in parser:
        raise ConfigError("[experiment]: section missing")

    exp = dict(parser["experiment"])
    kwargs = {}
    known = {
        "task", "optimizer", "optimizers", "durations", "budget_episodes",
        "budget_seconds", "master_seed", "out_dir", "workers",
    }
    for key in exp:
        if key not in known:
            raise ConfigError(f"[experiment] {key}: unknown option")
    if "task" in exp:
        kwargs["task"] = exp["task"].strip()
    raw_opt = exp.get("optimizers", exp.get("optimizer", "alphazero"))
    kwargs["optimizers"] = tuple(o.strip() for o in raw_opt.split(",") if o.strip())
    if "durations" in exp:
        kwargs["durations"] = tuple(
            _convert(d, float, "[experiment] durations")
            for d in exp["durations"].split(",")
            if d.strip()
        )
    if "budget_episodes" in exp:
        kwargs["budget_episodes"] = _convert(exp["budget_episodes"], int, "[experiment] budget_episodes")
    if "budget_seconds" in exp:
        kwargs["budget_seconds"] = _convert(exp["budget_seconds"], float, "[experiment] budget_seconds")
    if "master_seed" in exp:
        kwargs["master_seed"] = _convert(exp["master_seed"], int, "[experiment] master_seed")
    if "out_dir" in exp:
        kwargs["out_dir"] = exp["out_dir"].strip()
    if "workers" in exp:
        kwargs["workers"] = _convert(exp["workers"], int, "[experiment] workers")

    for section_name in parser.sections():
        if section_name == "experiment":
            continue
        if section_name not in _SECTION_TYPES:
            raise ConfigError(f"[{section_name}]: unknown section")
        cls = _SECTION_TYPES[section_name]
        try:
            value = _dataclass_from_section(cls, parser[section_name], section_name)
        except ConfigError:
            raise
        kwargs[_SECTION_FIELD[section_name]] = value

    config = ExperimentConfig(**kwargs)
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    if config.task not in TASKS:
        raise ConfigError(f"[experiment] task: {config.task!r} not in {TASKS}")
    for opt in config.optimizers:
        if opt not in OPTIMIZERS:
            raise ConfigError(f"[experiment] optimizers: {opt!r} not in {OPTIMIZERS}")
    if not config.durations:
        raise ConfigError("[experiment] durations: need at least one")
    if any(d <= 0 for d in config.durations):
        raise ConfigError("[experiment] durations: must be positive")
    if (config.budget_episodes is None) == (config.budget_seconds is None):
        raise ConfigError(
            "[experiment]: set exactly one of budget_episodes / budget_seconds"
        )
    if config.budget_episodes is not None and config.budget_episodes <= 0:
        raise ConfigError("[experiment] budget_episodes: must be positive")
    if config.budget_seconds is not None and config.budget_seconds <= 0:
        raise ConfigError("[experiment] budget_seconds: must be positive")
    if config.workers < 1:
        raise ConfigError("[experiment] workers: must be at least 1")
    if config.system.kind not in SYSTEM_KINDS:
        raise ConfigError(f"[system] kind: {config.system.kind!r} not in {SYSTEM_KINDS}")
    for opt in config.optimizers:
        if opt in _CONTINUOUS_ONLY and config.task in ("sfq", "digital_toy"):
            raise ConfigError(
                f"[experiment]: optimizer {opt!r} needs a continuous-amplitude "
                f"task, not {config.task!r}"
            )
        if opt in _BITSTRING_ONLY and config.task in ("filtered", "pwc"):
            raise ConfigError(
                f"[experiment]: optimizer {opt!r} works on bit strings; use the "
                f"sfq or digital_toy task"
            )


# ---------------------------------------------------------------------------
# Task wiring
# ---------------------------------------------------------------------------


@dataclass
class TaskBundle:
    env: object | None
    system: quantum.ControlSystem | None
    step_duration: float | None
    bit_objective: object | None = None
    n_bits: int | None = None


def build_task(config: ExperimentConfig, duration: float, child_seed: int) -> TaskBundle:
    if config.task == "digital_toy":
        horizon = int(round(duration))
        env = environments.toy_digital_environment(horizon)
        objective, n_bits = environments.toy_digital_objective(horizon)
        return TaskBundle(env, None, None, objective, n_bits)

    system = config.system.build()
    if config.task == "pwc":
        env = environments.make_pwc_environment(config.pwc, system, duration)
        return TaskBundle(env, system, config.pwc.step_duration)
    if config.task == "filtered":
        env = environments.make_filtered_environment(config.filtered, system, duration)
        return TaskBundle(env, system, config.filtered.step_duration)
    if config.task == "sfq":
        env_seed = seed_derivation(child_seed, "sfq-macro-actions")
        env = environments.make_sfq_environment(config.sfq, system, duration, env_seed)
        u0, u1 = environments.sfq_base_unitaries(config.sfq, system)
        n_bits = int(round(duration / config.sfq.pulse_spacing))

        def objective(bits):
            u = np.eye(system.dim, dtype=np.complex128)
            for bit in bits:
                u = (u1 if bit else u0) @ u
            return quantum.fidelity(u, system.target)

        return TaskBundle(env, system, None, objective, n_bits)
    raise ConfigError(f"unknown task {config.task!r}")


def _grape_config_for_task(config: ExperimentConfig) -> baselines.GrapeConfig:
    if config.task == "filtered" and config.grape.sigma is None:
        # the filtered task implies filtering in GRAPE; default resolution 200
        return baselines.GrapeConfig(
            resolution=config.grape.resolution if config.grape.resolution > 1 else 200,
            sigma=config.filtered.sigma,
            max_iterations=config.grape.max_iterations,
            gradient_tolerance=config.grape.gradient_tolerance,
            fidelity_change_tolerance=config.grape.fidelity_change_tolerance,
            memory=config.grape.memory,
        )
    return config.grape


def run_cell(
    config: ExperimentConfig, optimizer: str, duration: float
) -> tuple[list[OptimizationRecord], dict]:
    """Execute one (optimizer, duration) cell and return (records, summary)."""
    chash = config_hash(config)
    identifier = f"{config.task}:{optimizer}:{duration!r}"
    child_seed = seed_derivation(config.master_seed, identifier)
    bundle = build_task(config, duration, child_seed)
    budget = config.budget()
    rng = np.random.default_rng(child_seed)
    extra_summary = {}

    if optimizer == "alphazero" or optimizer == "hybrid":
        net = network.PolicyValueNetwork(
            input_dim=network.encoding_dim(bundle.env.dim),
            action_count=bundle.env.action_count,
            hidden_width=config.net.hidden_width,
            torso_layers=config.net.torso_layers,
            l2_coefficient=config.net.l2_coefficient,
            learning_rate=config.net.learning_rate,
            rng=np.random.default_rng(seed_derivation(child_seed, "network-init")),
        )
        if optimizer == "alphazero":
            run = alphazero.training_driver(
                bundle.env, net, budget, rng,
                config=config.search, training=config.training,
                seed=child_seed, config_hash=chash,
            )
            extra_summary["exhausted"] = run.exhausted
            records = run.records
        else:
            az_budget, grape_budget = budget.split(config.hybrid.split)
            az_run = alphazero.training_driver(
                bundle.env, net, az_budget, rng,
                config=config.search, training=config.training,
                seed=child_seed, config_hash=chash,
            )
            refined = baselines.hybrid_pipeline(
                az_run.records, bundle.system, bundle.step_duration,
                _grape_config_for_task(config), grape_budget,
                seed=child_seed, config_hash=chash,
                order=config.hybrid.order, top_k=config.hybrid.top_k,
            )
            extra_summary["exhausted"] = az_run.exhausted
            extra_summary["alphazero_episodes"] = len(az_run.records)
            records = az_run.records + refined
    elif optimizer == "ga":
        records = baselines.ga_optimize(
            bundle.bit_objective, bundle.n_bits, config.ga, budget, rng,
            seed=child_seed, config_hash=chash,
        )
    elif optimizer == "qlearning":
        records = baselines.q_learning_optimize(
            bundle.env, budget, rng,
            alpha=config.qlearning.alpha, init_scale=config.qlearning.init_scale,
            seed=child_seed, config_hash=chash,
        ).records
    elif optimizer == "sd":
        records = baselines.stochastic_descent(
            bundle.env, budget, rng, seed=child_seed, config_hash=chash
        )
    elif optimizer == "grape":
        n_steps = bundle.env.horizon
        records = baselines.random_seed_grape(
            bundle.system, bundle.step_duration, n_steps,
            _grape_config_for_task(config), budget, rng,
            seed=child_seed, config_hash=chash,
        )
    else:
        raise ConfigError(f"unknown optimizer {optimizer!r}")

    best = min(records, key=lambda r: r.infidelity) if records else None
    summary = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "config_hash": chash,
        "master_seed": config.master_seed,
        "child_seed": child_seed,
        "cell": identifier,
        "task": config.task,
        "optimizer": optimizer,
        "duration": duration,
        "budget": {"episodes": config.budget_episodes, "seconds": config.budget_seconds},
        "record_count": len(records),
        "best_infidelity": best.infidelity if best else None,
        "best_index": best.index if best else None,
        "best_sequence": list(best.sequence) if best and best.sequence else None,
        "best_pulse": [float(x) for x in best.pulse] if best is not None and best.pulse is not None else None,
        "system_kind": config.system.kind,
        "max_drive_rad_s": quantum.TWO_PI * config.system.max_drive_hz,
        "step_duration_s": bundle.step_duration,
    }
    summary.update(extra_summary)
    return records, summary


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

RECORD_COLUMNS = [
    "index", "infidelity", "optimizer", "seed", "config_hash",
    "sequence", "pulse", "extra", "wall_time_s",
]


def write_records(path, records) -> None:
    """CSV stream of optimization records. wall_time_s is the one
    run-to-run-volatile column and is kept last by contract."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.index,
                    f"{r.infidelity:.17g}",
                    r.optimizer,
                    r.seed,
                    r.config_hash,
                    ";".join(str(int(a)) for a in r.sequence) if r.sequence else "",
                    ";".join(f"{x:.17g}" for x in r.pulse) if r.pulse is not None else "",
                    json.dumps(r.extra, sort_keys=True) if r.extra else "",
                    f"{r.wall_time_s:.6f}",
                ]
            )


def read_records(path) -> list[OptimizationRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                OptimizationRecord(
                    index=int(row["index"]),
                    infidelity=float(row["infidelity"]),
                    wall_time_s=float(row["wall_time_s"]),
                    optimizer=row["optimizer"],
                    seed=int(row["seed"]),
                    config_hash=row["config_hash"],
                    sequence=tuple(int(a) for a in row["sequence"].split(";")) if row["sequence"] else None,
                    pulse=np.array([float(x) for x in row["pulse"].split(";")]) if row["pulse"] else None,
                    extra=json.loads(row["extra"]) if row["extra"] else {},
                )
            )
    return records


def _cell_dirname(optimizer: str, duration: float) -> str:
    return f"cell_{optimizer}_{duration:.6g}"


def _check_resume(out_dir: Path, chash: str) -> None:
    existing = out_dir / "summary.json"
    if existing.exists():
        previous = json.loads(existing.read_text())
        if previous.get("config_hash") != chash:
            raise ConfigError(
                f"output directory {out_dir} holds results for config hash "
                f"{previous.get('config_hash')!r}, refusing to mix with {chash!r}"
            )


def run(config: ExperimentConfig, out_dir=None) -> dict:
    """Execute a single-cell experiment (one optimizer, one duration) and
    persist records.csv + summary.json."""
    if len(config.optimizers) != 1 or len(config.durations) != 1:
        raise ConfigError(
            "run expects exactly one optimizer and one duration; use sweep"
        )
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _check_resume(out, config_hash(config))
    records, summary = run_cell(config, config.optimizers[0], config.durations[0])
    write_records(out / "records.csv", records)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _sweep_cell(args):
    config, optimizer, duration, cell_dir = args
    records, summary = run_cell(config, optimizer, duration)
    cell_dir.mkdir(parents=True, exist_ok=True)
    write_records(cell_dir / "records.csv", records)
    (cell_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary


def sweep(config: ExperimentConfig, out_dir=None) -> list[dict]:
    """Run every (optimizer x duration) cell under the same per-cell budget
    and write an aggregated sweep.csv next to the per-cell directories."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _check_resume(out, config_hash(config))
    jobs = [
        (config, optimizer, duration, out / _cell_dirname(optimizer, duration))
        for optimizer in config.optimizers
        for duration in sorted(config.durations)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            summaries = list(pool.map(_sweep_cell, jobs))
    else:
        summaries = [_sweep_cell(job) for job in jobs]

    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["optimizer", "duration", "best_infidelity", "success_fraction",
             "record_count", "cell_dir"]
        )
        for (cfg, optimizer, duration, cell_dir), summary in zip(jobs, summaries):
            cell_records = read_records(cell_dir / "records.csv")
            infidelities = [r.infidelity for r in cell_records]
            fraction = analysis.success_fraction(infidelities) if infidelities else float("nan")
            writer.writerow(
                [
                    optimizer,
                    f"{duration:.17g}",
                    f"{summary['best_infidelity']:.17g}" if summary["best_infidelity"] is not None else "",
                    f"{fraction:.17g}",
                    summary["record_count"],
                    cell_dir.name,
                ]
            )
    (out / "summary.json").write_text(
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "toolkit_version": __version__,
                "config_hash": config_hash(config),
                "master_seed": config.master_seed,
                "cells": [s["cell"] for s in summaries],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return summaries


# ---------------------------------------------------------------------------
# Post-processing entry points (backing the analyze/export CLI verbs)
# ---------------------------------------------------------------------------


def analyze_run(run_dir, out_dir=None) -> dict:
    """Derive learning-curve and symmetry CSVs from a finished run."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    records = read_records(run_dir / "records.csv")
    curve = analysis.learning_curve(records)
    with open(out / "learning_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wall_time_s", "infidelity", "best_so_far"])
        for t, i, e in zip(curve.wall_time, curve.infidelity, curve.envelope):
            writer.writerow([f"{t:.6f}", f"{i:.17g}", f"{e:.17g}"])
    produced = {"learning_curve": str(out / "learning_curve.csv")}
    with_pulses = [r for r in records if r.pulse is not None]
    if with_pulses:
        triples = analysis.symmetry_trajectory(with_pulses)
        with open(out / "symmetry.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "infidelity", "asymmetry"])
            for iteration, infidelity, asym in triples:
                writer.writerow(
                    [int(iteration), f"{infidelity:.17g}", f"{asym:.17g}"]
                )
        produced["symmetry"] = str(out / "symmetry.csv")
    return produced


def export_run(run_dir, out_path) -> str:
    """Export a run's final pulse vectors as a normalized solutions CSV."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    records = [r for r in read_records(run_dir / "records.csv") if r.pulse is not None]
    solutions = analysis.solution_set_from_records(
        records,
        step_duration=summary["step_duration_s"],
        max_drive=summary["max_drive_rad_s"],
    )
    analysis.export_solutions(solutions, out_path)
    return str(out_path)
