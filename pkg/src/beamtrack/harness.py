"""Experiment configuration, seeded sweeps, CSV results and plot-data emission.

Config files are line-oriented ``key = value`` text grouped in ``[section]``
blocks. Every key has a default, so an empty file is a complete experiment.
Environment variables named ``BEAMTRACK_<SECTION>_<KEY>`` override file values.
"""
from __future__ import annotations

import concurrent.futures
import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from . import rl
from .channel import LosChannel, MultipathChannel, TraceChannel
from .link import DelayLedger, UndefinedMetricError, average_delay_ms
from .scenario import ScenarioConfig, stationary_config
from .trackers import TrackerParams, run_tracked_episode

SCHEMA_VERSION = 1
ENV_PREFIX = "BEAMTRACK_"

MODES = ("ekf", "pf", "ddpg-train", "ddpg-eval")
SCENARIOS = ("nonstationary", "stationary")
AXES = ("none", "interval", "antennas", "gamma", "lr")


class ConfigError(ValueError):
    """Bad configuration input; the message names the key and its origin."""


# --- schema ----------------------------------------------------------------

def _pos_int(v):
    return v > 0


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit_open(v):
    return 0.0 <= v < 1.0


def _unit(v):
    return 0.0 <= v <= 1.0


@dataclass(frozen=True)
class Key:
    kind: str                      # int, float, str, choice, ints, strs, optfloat
    default: Any
    check: Callable[[Any], bool] | None = None
    choices: tuple[str, ...] = ()
    note: str = ""


SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "mode": Key("choice", "ekf", choices=MODES),
        "scenario": Key("choice", "nonstationary", choices=SCENARIOS),
        "channel": Key("str", "los", note="los | multipath | trace:<path>"),
        "seeds": Key("ints", (1,), lambda v: len(v) > 0),
        "sweep": Key("choice", "none", choices=AXES),
        "values": Key("strs", (), note="axis values; lr entries are actor[:critic]"),
        "episodes": Key("int", 300, _pos_int, note="DDPG training episodes"),
        "eval_episodes": Key("int", 3, _pos_int),
        "tail_episodes": Key("int", 20, _pos_int, note="window for the converged training delay"),
        "checkpoint": Key("str", ""),
    },
    "scenario": {
        "h_c": Key("float", 200.0, _pos),
        "h_r": Key("float", 200.0, _nonneg),
        "slot_duration": Key("float", 0.005, _pos),
        "total_time": Key("float", 10.0, _pos),
        "initial_velocity": Key("float", 16.0, _nonneg),
        "stationary_velocity": Key("float", 8.0, _nonneg),
    },
    "link": {
        "n_t": Key("int", 16, _pos_int),
        "n_r": Key("int", 16, _pos_int),
        "snr_db": Key("float", 20.0),
        "threshold_db": Key("float", 5.0),
    },
    "tracker": {
        "tracking_interval": Key("float", 0.1, _pos),
        "rho": Key("float", 0.995, _unit),
        "sigma_u": Key("float", 0.05, _nonneg, note="acceleration noise std, m/s^2"),
        "phi_th": Key("optfloat", None, _pos, note="auto = 2/M"),
        "n_particles": Key("int", 1000, _pos_int),
    },
    "agent": {
        "gamma": Key("float", 0.9, _unit_open),
        "lr_actor": Key("float", 1e-4, _nonneg),
        "lr_critic": Key("float", 1e-4, _nonneg),
        "tau_mix": Key("float", 0.01, _unit),
        "batch_size": Key("int", 16, _pos_int),
        "memory_capacity": Key("int", 5000, _pos_int),
        "hidden": Key("int", 200, lambda v: v >= 20),
        "noise_sigma": Key("float", 0.3, _nonneg),
        "noise_decay": Key("float", 0.9995, _unit),
        "warmup_factor": Key("int", 10, _pos_int),
        "slots_per_step": Key("int", 20, lambda v: v >= 2),
        "actor_output": Key("choice", "sigmoid", choices=("sigmoid", "relu")),
    },
}


def _coerce(key: Key, raw: str, where: str):
    text = raw.strip()
    try:
        if key.kind == "int":
            value = int(text)
        elif key.kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
        elif key.kind == "optfloat":
            value = None if text.lower() in ("auto", "") else float(text)
        elif key.kind == "ints":
            value = tuple(int(t) for t in text.replace(",", " ").split())
        elif key.kind == "strs":
            value = tuple(text.replace(",", " ").split())
        elif key.kind == "choice":
            value = text.lower()
            if value not in key.choices:
                raise ConfigError(f"{where}: expected one of {', '.join(key.choices)}, got {text!r}")
        else:
            value = text
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {key.kind}") from None
    if key.check is not None and value is not None and not key.check(value):
        raise ConfigError(f"{where}: value {text!r} is out of range")
    return value


def _format(key: Key, value) -> str:
    if key.kind in ("ints", "strs"):
        return ", ".join(str(v) for v in value)
    if key.kind == "optfloat":
        return "auto" if value is None else repr(float(value))
    if key.kind == "float":
        return repr(float(value))
    return str(value)


# --- spec ------------------------------------------------------------------

def _defaults() -> dict[str, dict[str, Any]]:
    return {sec: {k: key.default for k, key in keys.items()} for sec, keys in SCHEMA.items()}


@dataclass
class ExperimentSpec:
    """Fully resolved experiment: one value for every schema key."""

    values: dict[str, dict[str, Any]] = field(default_factory=_defaults)

    def __post_init__(self):
        self.validate()

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def with_values(self, **dotted) -> "ExperimentSpec":
        """Copy with ``section__key=value`` overrides."""
        vals = {sec: dict(kv) for sec, kv in self.values.items()}
        for name, value in dotted.items():
            sec, key = name.split("__", 1)
            if sec not in SCHEMA or key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            vals[sec][key] = value
        return ExperimentSpec(vals)

    def validate(self) -> None:
        exp = self.values["experiment"]
        if not exp["seeds"]:
            raise ConfigError("experiment.seeds: seed list must not be empty")
        channel = exp["channel"]
        if channel not in ("los", "multipath") and not channel.startswith("trace:"):
            raise ConfigError(f"experiment.channel: unknown channel source {channel!r}")
        if exp["sweep"] != "none" and not exp["values"]:
            raise ConfigError("experiment.values: a sweep axis needs at least one value")
        for v in exp["values"]:
            for part in _axis_parts(exp["sweep"], v):
                if not part > 0:
                    raise ConfigError(f"experiment.values: sweep values must be positive, got {v!r}")
        if exp["mode"] == "ddpg-eval" and not exp["checkpoint"]:
            raise ConfigError("experiment.checkpoint: ddpg-eval needs a checkpoint path")

    # builders -------------------------------------------------------------

    def scenario_config(self) -> ScenarioConfig:
        sc = self.values["scenario"]
        common = dict(h_c=sc["h_c"], h_r=sc["h_r"], slot_duration=sc["slot_duration"])
        if self["experiment.scenario"] == "stationary":
            return stationary_config(sc["stationary_velocity"], total_time=sc["total_time"], **common)
        base = ScenarioConfig()
        scale = sc["total_time"] / base.total_time
        phases = tuple((d * scale, a) for d, a in base.mobility_phases)
        return ScenarioConfig(total_time=sc["total_time"], mobility_phases=phases,
                              initial_velocity=sc["initial_velocity"], **common)

    def channel(self, scenario: ScenarioConfig | None = None):
        scenario = scenario or self.scenario_config()
        src = self["experiment.channel"]
        rho = self["tracker.rho"]
        if src == "los":
            return LosChannel(scenario, rho)
        if src == "multipath":
            return MultipathChannel(scenario, rho)
        return TraceChannel.from_file(src[len("trace:"):])

    def tracker_params(self) -> TrackerParams:
        lk, tr = self.values["link"], self.values["tracker"]
        return TrackerParams(n_r=lk["n_r"], n_t=lk["n_t"], rho=tr["rho"], sigma_u=tr["sigma_u"],
                             snr_db=lk["snr_db"], threshold_db=lk["threshold_db"],
                             phi_th=tr["phi_th"], n_particles=tr["n_particles"])

    def env_params(self) -> rl.EnvParams:
        lk = self.values["link"]
        return rl.EnvParams(n_r=lk["n_r"], n_t=lk["n_t"], snr_db=lk["snr_db"],
                            threshold_db=lk["threshold_db"],
                            slots_per_step=self["agent.slots_per_step"])

    def agent_config(self) -> rl.AgentConfig:
        ag = self.values["agent"]
        return rl.AgentConfig(
            gamma=ag["gamma"], lr_actor=ag["lr_actor"], lr_critic=ag["lr_critic"],
            tau_mix=ag["tau_mix"], batch_size=ag["batch_size"],
            memory_capacity=ag["memory_capacity"], hidden=ag["hidden"],
            noise_sigma=ag["noise_sigma"], noise_decay=ag["noise_decay"],
            warmup_factor=ag["warmup_factor"], episodes=self["experiment.episodes"],
            actor_output=ag["actor_output"])


def parse_config_text(text: str, source: str = "<config>",
                      environ: dict[str, str] | None = None) -> ExperimentSpec:
    values = _defaults()
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"{source}:{lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip().lower()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        name, raw = (p.strip() for p in stripped.split("=", 1))
        if section is None:
            raise ConfigError(f"{where}: key {name!r} appears before any section")
        if name not in SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {section}.{name}")
        values[section][name] = _coerce(SCHEMA[section][name], raw,
                                        f"{where}: {section}.{name}")
    _apply_env(values, os.environ if environ is None else environ)
    try:
        return ExperimentSpec(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _apply_env(values, environ) -> None:
    for var in sorted(environ):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        for sec in SCHEMA:
            if rest.startswith(sec + "_"):
                name = rest[len(sec) + 1:]
                if name not in SCHEMA[sec]:
                    raise ConfigError(f"environment {var}: unknown key {sec}.{name}")
                values[sec][name] = _coerce(SCHEMA[sec][name], environ[var],
                                            f"environment {var}: {sec}.{name}")
                break


def parse_config(path, environ: dict[str, str] | None = None) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    return parse_config_text(text, str(path), environ)


def emit_defaults(spec: ExperimentSpec | None = None) -> str:
    """Config text that parses back to ``spec`` (defaults if omitted)."""
    spec = spec or ExperimentSpec()
    out = ["# beamtrack experiment configuration",
           f"# any key may be overridden by {ENV_PREFIX}<SECTION>_<KEY>"]
    for sec, keys in SCHEMA.items():
        out.append("")
        out.append(f"[{sec}]")
        for name, key in keys.items():
            line = f"{name} = {_format(key, spec.values[sec][name])}"
            if key.note:
                line += f"  # {key.note}"
            out.append(line)
    return "\n".join(out) + "\n"


# --- sweeps ----------------------------------------------------------------

def _axis_parts(axis: str, value: str) -> list[float]:
    try:
        if axis == "lr":
            return [float(p) for p in value.split(":")]
        if axis == "antennas":
            return [int(value)]
        return [float(value)]
    except ValueError:
        raise ConfigError(f"experiment.values: bad value {value!r} for axis {axis}") from None


def apply_axis(spec: ExperimentSpec, axis: str, value: str) -> ExperimentSpec:
    parts = _axis_parts(axis, value)
    if axis == "interval":
        return spec.with_values(tracker__tracking_interval=parts[0])
    if axis == "antennas":
        return spec.with_values(link__n_r=parts[0], link__n_t=parts[0])
    if axis == "gamma":
        if not parts[0] < 1.0:
            raise ConfigError(f"experiment.values: gamma must lie in [0, 1), got {value}")
        return spec.with_values(agent__gamma=parts[0])
    if axis == "lr":
        la = parts[0]
        lc = parts[1] if len(parts) > 1 else parts[0]
        return spec.with_values(agent__lr_actor=la, agent__lr_critic=lc)
    return spec


CSV_COLUMNS = [
    "schema_version", "mode", "scenario", "channel", "axis", "x", "seed",
    "n_r", "n_t", "snr_db", "tracking_interval", "gamma", "lr_actor", "lr_critic",
    "episodes", "avg_delay_ms", "successful_packets", "tracking_slots", "failed_slots",
    "total_slots", "train_tail_ms", "status", "error",
]


@dataclass(frozen=True)
class Job:
    index: int
    axis: str
    x: str
    seed: int
    master_seed: int
    spec: ExperimentSpec


def expand_jobs(spec: ExperimentSpec, master_seed: int = 0) -> list[Job]:
    """Cartesian product of axis values and seeds, axis-major."""
    axis = spec["experiment.sweep"]
    xs = spec["experiment.values"] if axis != "none" else ("",)
    jobs = []
    for x in xs:
        point = apply_axis(spec, axis, x) if axis != "none" else spec
        for seed in spec["experiment.seeds"]:
            jobs.append(Job(len(jobs), axis, x, seed, master_seed, point))
    return jobs


def job_rng(master_seed: int, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(seed)])


def _base_row(job: Job) -> dict[str, Any]:
    s = job.spec
    return {
        "schema_version": SCHEMA_VERSION, "mode": s["experiment.mode"],
        "scenario": s["experiment.scenario"], "channel": s["experiment.channel"],
        "axis": job.axis, "x": job.x, "seed": job.seed,
        "n_r": s["link.n_r"], "n_t": s["link.n_t"], "snr_db": s["link.snr_db"],
        "tracking_interval": s["tracker.tracking_interval"], "gamma": s["agent.gamma"],
        "lr_actor": s["agent.lr_actor"], "lr_critic": s["agent.lr_critic"],
        "episodes": "", "avg_delay_ms": "", "successful_packets": "", "tracking_slots": "",
        "failed_slots": "", "total_slots": "", "train_tail_ms": "", "status": "ok", "error": "",
    }


def _ledger_fields(row, ledger, slot_duration) -> None:
    if not ledger.is_conserved():
        raise RuntimeError("slot accounting is not conserved")
    row["avg_delay_ms"] = average_delay_ms(ledger, slot_duration)
    row["successful_packets"] = ledger.successful_packets
    row["tracking_slots"] = ledger.tracking_slots
    row["failed_slots"] = ledger.failed_slots
    row["total_slots"] = ledger.total_delay_slots


def execute_job(job: Job) -> dict[str, Any]:
    """Run one sweep point; failures come back as error rows."""
    row = _base_row(job)
    try:
        spec = job.spec
        rng = job_rng(job.master_seed, job.seed)
        scenario = spec.scenario_config()
        channel = spec.channel(scenario)
        mode = spec["experiment.mode"]
        if mode in ("ekf", "pf"):
            ledger = run_tracked_episode(mode, scenario, channel,
                                         spec["tracker.tracking_interval"],
                                         spec.tracker_params(), rng)
            _ledger_fields(row, ledger, scenario.slot_duration)
        else:
            env_params = spec.env_params()
            train_rng, eval_rng = rl._streams(rng, 2)
            if mode == "ddpg-train":
                agent, log = rl.train(spec.agent_config(), scenario, channel, train_rng, env_params)
                tail = [r["avg_delay_ms"] for r in log[-spec["experiment.tail_episodes"]:]]
                row["episodes"] = len(log)
                row["train_tail_ms"] = float(np.mean(tail))
            else:
                agent = rl.load_agent(spec["experiment.checkpoint"], spec.agent_config())
            ledger = _evaluate_ledger(agent, scenario, channel, spec["experiment.eval_episodes"],
                                      eval_rng, env_params)
            _ledger_fields(row, ledger, scenario.slot_duration)
    except (UndefinedMetricError, ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _evaluate_ledger(agent, scenario, channel, n_episodes, rng, env_params):
    env = rl.BeamEnv(scenario, channel, env_params)
    total = DelayLedger()
    for _ in range(n_episodes):
        total = total + rl.run_policy_episode(env, agent.act, rng)
    return total


def run_sweep(spec: ExperimentSpec, master_seed: int = 0, jobs: int = 1,
              on_row: Callable[[dict], None] | None = None) -> list[dict[str, Any]]:
    """Execute every (axis value, seed) point; rows come back in job order.

    With ``jobs > 1`` points run in a process pool. Results are still
    delivered in job order so the output is independent of scheduling.
    """
    todo = expand_jobs(spec, master_seed)
    rows = []
    if jobs <= 1 or len(todo) <= 1:
        results: Iterable = map(execute_job, todo)
        for row in results:
            rows.append(row)
            if on_row is not None:
                on_row(row)
        return rows
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        for row in pool.map(execute_job, todo):
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


# --- output ----------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvSink:
    """Streams result rows with a fixed, versioned header."""

    def __init__(self, fh, columns: Sequence[str] = CSV_COLUMNS):
        self.columns = list(columns)
        self.writer = csv.writer(fh, lineterminator="\n")
        self.fh = fh
        self.writer.writerow(self.columns)

    def write(self, row: dict[str, Any]) -> None:
        self.writer.writerow([format_value(row.get(c, "")) for c in self.columns])
        self.fh.flush()


def rows_to_csv(rows: Iterable[dict[str, Any]], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    sink = CsvSink(buf, columns)
    for row in rows:
        sink.write(row)
    return buf.getvalue()


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def aggregate(rows: Iterable[dict[str, Any]], value: str = "avg_delay_ms",
              series: str = "mode") -> dict[str, list[tuple[str, float, float, int]]]:
    """Per series, (x, mean, stderr, n) over seeds for successful rows."""
    groups: dict[str, dict[str, list[float]]] = {}
    order: dict[str, list[str]] = {}
    for row in rows:
        if row.get("status", "ok") != "ok" or row.get(value, "") == "":
            continue
        name = str(row.get(series, ""))
        x = str(row.get("x", ""))
        g = groups.setdefault(name, {})
        if x not in g:
            order.setdefault(name, []).append(x)
        g.setdefault(x, []).append(float(row[value]))
    out = {}
    for name, g in groups.items():
        series_rows = []
        for x in order[name]:
            vals = np.asarray(g[x], dtype=float)
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            series_rows.append((x, float(vals.mean()), se, len(vals)))
        out[name] = series_rows
    return out


def emit_plot_data(rows: Sequence[dict[str, Any]], figure_id: str, out_dir,
                   value: str = "avg_delay_ms", series: str = "mode") -> list[Path]:
    """Write ``<figure_id>[-<series>].tsv`` files with columns x, mean, stderr."""
    if not rows:
        raise ValueError("no rows to plot")
    agg = aggregate(rows, value, series)
    if not agg:
        raise ValueError("no successful rows to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, points in agg.items():
        suffix = f"-{name}" if len(agg) > 1 else ""
        path = out_dir / f"{figure_id}{suffix}.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x\tmean\tstderr\n")
            for x, mean, se, _ in points:
                fh.write(f"{x if x != '' else 0}\t{mean!r}\t{se!r}\n")
        paths.append(path)
    return paths


def iter_episode_rows(log: Iterable[dict], seed: int) -> Iterator[dict]:
    for row in log:
        yield {"schema_version": SCHEMA_VERSION, "seed": seed, **row}


TRAIN_COLUMNS = ["schema_version", "seed"] + list(rl.LOG_COLUMNS)
