"""Experiment drivers shared by the command line and the acceptance tests."""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from dial import __version__
from dial.agent import AgentConfig, AgentPool, IntervalRecord, Mode
from dial.config import Configuration, Op, Scenario
from dial.gbdt import GbdtModel, Hyperparams, TrainingSample, confusion, load_model, train
from dial.metrics import SCHEMA_VERSION
from dial.sim import Simulator
from dial.workload import BASE_PATTERNS, StreamDriver, WorkloadSpec, parse_spec

log = logging.getLogger("dial")

DESK_DURATION = 60.0
DESK_REPEATS = 5
FULL_DURATION = 300.0
FULL_REPEATS = 30


def provenance(scenario: Scenario, seeds: Iterable[int], **extra) -> dict:
    d = {
        "tool": "dial",
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "seeds": sorted(set(int(s) for s in seeds)),
        "scenario_hash": scenario.digest(),
    }
    d.update(extra)
    return d


class RunMode(str, Enum):
    DEFAULT = "default"
    TUNED = "tuned"
    FIXED = "fixed"


@dataclass
class RunTrace:
    """Cumulative application bytes at every probe boundary.

    ``client_bytes[k][c]`` and ``osc_bytes[k][(c, j)]`` are [read, write]
    totals at ``times[k]``; ``times[0]`` is the start of the run.
    """

    times: list[float]
    client_bytes: list[dict[int, tuple[int, int]]]
    osc_bytes: list[dict[tuple[int, int], tuple[int, int]]]
    phase_bounds: list[float]
    phase_names: dict[int, list[str]]
    records: list[IntervalRecord] = field(default_factory=list)
    trace_digest: Optional[str] = None

    def _index(self, t: float) -> int:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"{t} is not a probe boundary")
        return k

    def client_throughput(self, client: int, start: float, end: float) -> float:
        a, b = self._index(start), self._index(end)
        return (sum(self.client_bytes[b][client]) - sum(self.client_bytes[a][client])) / (end - start)

    def osc_throughput(self, osc: tuple[int, int], start: float, end: float) -> tuple[float, float]:
        a, b = self._index(start), self._index(end)
        return tuple((self.osc_bytes[b][osc][i] - self.osc_bytes[a][osc][i]) / (end - start)
                     for i in (0, 1))

    def aggregate_throughput(self, start: float, end: float) -> float:
        return sum(self.client_throughput(c, start, end) for c in self.client_bytes[0])

    def interval_series(self, client: int) -> list[float]:
        """Per-interval throughput of one client."""
        out = []
        for k in range(1, len(self.times)):
            dt = self.times[k] - self.times[k - 1]
            out.append((sum(self.client_bytes[k][client])
                        - sum(self.client_bytes[k - 1][client])) / dt)
        return out


def simulate(phases: dict[int, Sequence[WorkloadSpec]], switch_interval: float,
             scenario: Optional[Scenario] = None, seed: int = 0,
             mode: RunMode = RunMode.DEFAULT, theta: Optional[Configuration] = None,
             models: Optional[dict[Op, GbdtModel]] = None,
             agent_config: Optional[AgentConfig] = None, trace: bool = False) -> RunTrace:
    """Run every client's phase list back to back on one shared simulator.

    ``mode`` picks how OSCs are configured: the scenario default, a fixed
    ``theta`` on every OSC, or tuned by one agent per OSC.
    """
    scenario = scenario or Scenario()
    sim = Simulator(scenario, trace=trace)
    counts = {len(v) for v in phases.values()}
    if len(counts) != 1 or not counts.pop():
        raise ValueError("every client needs the same, nonzero number of phases")
    if set(phases) - set(range(scenario.n_clients)):
        raise ValueError("phase map names a client outside the scenario")
    if mode is RunMode.FIXED:
        if theta is None:
            raise ValueError("fixed mode needs a configuration")
        sim.space.validate(theta)
        for osc in sim.all_oscs():
            osc.config = theta
    agent_config = agent_config or AgentConfig()
    probe = agent_config.probe_interval
    pool = None
    if mode is RunMode.TUNED:
        if not models:
            raise ValueError("tuned mode needs models")
        cfg = AgentConfig(probe, agent_config.warmup_intervals, agent_config.tuner, Mode.TUNE)
        pool = AgentPool(sim, cfg, models, seed=seed, clients=sorted(phases))

    drivers = {}
    next_file = 0
    for client in sorted(phases):
        rng = random.Random(f"workload/{seed}/{client}")
        drivers[client] = StreamDriver(sim, client, phases[client][0], rng, first_file=next_file)
        next_file += phases[client][0].streams
    for client in sorted(drivers):
        drivers[client].start()

    oscs = [o for o in sim.all_oscs() if o.client_id in drivers]

    def snap() -> None:
        times.append(sim.clock)
        client_bytes.append({c: tuple(sim.clients[c].bytes_done) for c in drivers})
        osc_bytes.append({o.osc_id: tuple(o.llite_bytes) for o in oscs})

    times: list[float] = []
    client_bytes: list = []
    osc_bytes: list = []
    snap()
    n_phases = len(next(iter(phases.values())))
    steps = max(1, round(switch_interval / probe))
    bounds = [0.0]
    for k in range(n_phases):
        if k:
            for c, d in drivers.items():
                d.switch(phases[c][k])
        for s in range(1, steps + 1):
            t = k * switch_interval + s * (switch_interval / steps)
            sim.advance(t)
            if pool is not None:
                for agent in pool.agents:
                    agent.run_interval(t)
            snap()
        bounds.append(sim.clock)
    for d in drivers.values():
        d.stop()
    return RunTrace(times, client_bytes, osc_bytes, bounds,
                    {c: [s.name for s in v] for c, v in phases.items()},
                    pool.records if pool else [],
                    sim.trace_digest() if trace else None)


def shipped_models() -> dict[Op, GbdtModel]:
    """The read and write models bundled with the package."""
    from importlib import resources
    base = resources.files("dial") / "models"
    out = {}
    for op in Op:
        with resources.as_file(base / f"{op.value}.json") as path:
            out[op] = load_model(path)
    return out


# -- standalone measurements ---------------------------------------------------

@dataclass
class Measurement:
    workload: str
    mode: str
    theta: Optional[Configuration]
    seed: int
    throughput: float


def measure(spec: WorkloadSpec, duration: float, warmup: float, scenario: Optional[Scenario] = None,
            seed: int = 0, mode: RunMode = RunMode.DEFAULT, theta: Optional[Configuration] = None,
            models: Optional[dict[Op, GbdtModel]] = None,
            agent_config: Optional[AgentConfig] = None) -> tuple[float, RunTrace]:
    """Single-client throughput over [warmup, duration]."""
    if not 0 <= warmup < duration:
        raise ValueError("need 0 <= warmup < duration")
    run = simulate({0: [spec]}, duration, scenario, seed, mode, theta, models, agent_config)
    return run.client_throughput(0, warmup, duration), run


@dataclass
class SweepResult:
    workload: str
    grid: list[tuple[Configuration, float]]

    @property
    def best(self) -> tuple[Configuration, float]:
        # ties go to the larger window, then the larger in-flight cap
        return max(self.grid, key=lambda r: (r[1], r[0].rpc_window_pages, r[0].rpcs_in_flight))

    def throughput(self, theta: Configuration) -> float:
        return dict(self.grid)[theta]

    def to_csv(self, prov: Optional[dict] = None) -> str:
        buf = io.StringIO()
        if prov is not None:
            buf.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["workload", "window", "inflight", "throughput", "is_best"])
        best = self.best[0]
        for theta, thr in self.grid:
            w.writerow([self.workload, theta.rpc_window_pages, theta.rpcs_in_flight, repr(thr),
                        int(theta == best)])
        return buf.getvalue()


def sweep(spec: WorkloadSpec, duration: float, warmup: float, scenario: Optional[Scenario] = None,
          seed: int = 0) -> SweepResult:
    scenario = scenario or Scenario()
    grid = []
    for theta in scenario.space:
        thr, _ = measure(spec, duration, warmup, scenario, seed, RunMode.FIXED, theta)
        log.debug("sweep %s %s %.1f MB/s", spec.name, theta, thr / 1e6)
        grid.append((theta, thr))
    return SweepResult(spec.name, grid)


# -- training pipeline ---------------------------------------------------------

@dataclass
class CollectResult:
    samples: dict[Op, list[TrainingSample]]
    discarded: int
    runs: list[dict]


def collect(patterns: Sequence[str] = BASE_PATTERNS, duration: float = DESK_DURATION,
            repeats: int = DESK_REPEATS, seed: int = 0, scenario: Optional[Scenario] = None,
            probe_interval: float = 0.5) -> CollectResult:
    """Random-action data collection, one single-client run per (pattern, repeat)."""
    scenario = scenario or Scenario()
    out: dict[Op, list[TrainingSample]] = {Op.READ: [], Op.WRITE: []}
    discarded = 0
    runs = []
    for name in patterns:
        spec = parse_spec(name, duration=duration)
        for r in range(repeats):
            run_seed = seed * 1000 + r
            sim = Simulator(scenario)
            pool = AgentPool(sim, AgentConfig(probe_interval, mode=Mode.COLLECT), seed=run_seed,
                             clients=[0])
            driver = StreamDriver(sim, 0, spec, random.Random(f"workload/{run_seed}/0"))
            driver.start()
            steps = max(1, round(duration / probe_interval))
            for s in range(1, steps + 1):
                t = s * duration / steps
                sim.advance(t)
                for agent in pool.agents:
                    agent.run_interval(t)
            driver.stop()
            got = pool.samples
            for smp in got:
                out[smp.op].append(smp)
            discarded += pool.discarded
            runs.append({"pattern": name, "repeat": r, "seed": run_seed, "samples": len(got),
                         "positive": sum(s.label for s in got), "discarded": pool.discarded})
            log.info("collect %s repeat %d: %d samples, %d discarded", name, r, len(got),
                     pool.discarded)
    return CollectResult(out, discarded, runs)


@dataclass
class TrainReport:
    op: Op
    n_train: int
    n_test: int
    class_counts: dict[int, int]
    held_out: dict

    def text(self) -> str:
        c = self.held_out
        return (f"{self.op.value}: schema v{SCHEMA_VERSION}, {self.n_train} train / {self.n_test} "
                f"held out, class counts {{0: {self.class_counts[0]}, 1: {self.class_counts[1]}}}\n"
                f"  held-out error {c['error']:.4f}\n"
                f"  confusion  pred0  pred1\n"
                f"  actual0   {c['tn']:6d} {c['fp']:6d}\n"
                f"  actual1   {c['fn']:6d} {c['tp']:6d}")


def train_with_holdout(samples: Sequence[TrainingSample], hp: Hyperparams = Hyperparams(),
                       split_seed: int = 0, holdout: float = 0.2) -> tuple[GbdtModel, TrainReport]:
    """Fit on an 80:20 split, report held-out quality, then refit on everything."""
    samples = list(samples)
    idx = np.random.default_rng(split_seed).permutation(len(samples))
    cut = int(round((1 - holdout) * len(samples)))
    tr = [samples[i] for i in idx[:cut]]
    te = [samples[i] for i in idx[cut:]]
    model = train(tr, hp)
    if te:
        X = np.array([s.features for s in te])
        y = np.array([s.label for s in te])
        held = confusion(model, X, y)
    else:
        held = {"tp": 0, "tn": 0, "fp": 0, "fn": 0, "error": float("nan")}
    counts = {0: sum(1 for s in samples if s.label == 0), 1: sum(1 for s in samples if s.label == 1)}
    report = TrainReport(samples[0].op, len(tr), len(te), counts, held)
    return train(samples, hp), report


# -- results files -------------------------------------------------------------

RESULT_FIELDS = ["workload", "mode", "client", "osc", "phase", "repeat", "seed",
                 "read_throughput", "write_throughput"]


def result_rows(run: RunTrace, mode: str, repeat: int, seed: int) -> list[dict]:
    """One row per (client, osc, phase); osc ``-1`` is the client total."""
    rows = []
    for k in range(len(run.phase_bounds) - 1):
        a, b = run.phase_bounds[k], run.phase_bounds[k + 1]
        ia, ib = run._index(a), run._index(b)
        for c in sorted(run.client_bytes[0]):
            name = run.phase_names[c][k]
            tot = [(run.client_bytes[ib][c][i] - run.client_bytes[ia][c][i]) / (b - a)
                   for i in (0, 1)]
            rows.append(dict(workload=name, mode=mode, client=c, osc=-1, phase=k, repeat=repeat,
                             seed=seed, read_throughput=tot[0], write_throughput=tot[1]))
            for osc in sorted(o for o in run.osc_bytes[0] if o[0] == c):
                r, w = run.osc_throughput(osc, a, b)
                rows.append(dict(workload=name, mode=mode, client=c, osc=osc[1], phase=k,
                                 repeat=repeat, seed=seed, read_throughput=r, write_throughput=w))
    return rows


def write_results(path: str | Path, rows: Iterable[dict], prov: dict) -> None:
    rows = sorted(rows, key=lambda r: (r["workload"], r["mode"], r["client"], r["osc"],
                                       r["phase"], r["repeat"]))
    with open(path, "w", newline="") as fh:
        fh.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
        w = csv.DictWriter(fh, RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for r in csv.DictReader(lines):
        rows.append(dict(workload=r["workload"], mode=r["mode"], client=int(r["client"]),
                         osc=int(r["osc"]), phase=int(r["phase"]), repeat=int(r["repeat"]),
                         seed=int(r["seed"]), read_throughput=float(r["read_throughput"]),
                         write_throughput=float(r["write_throughput"])))
    return rows


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean total throughput per (workload, client, phase, mode), relative to default.

    Cells whose default run is missing get ``normalized = None`` rather
    than a made-up value.
    """
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r["osc"] != -1:
            continue
        key = (r["workload"], r["client"], r["phase"], r["mode"])
        groups.setdefault(key, []).append(r["read_throughput"] + r["write_throughput"])
    out = []
    for (wl, c, ph, mode), vals in sorted(groups.items()):
        mean = float(np.mean(vals))
        base = groups.get((wl, c, ph, RunMode.DEFAULT.value))
        norm = mean / float(np.mean(base)) if base and np.mean(base) > 0 else None
        out.append(dict(workload=wl, client=c, phase=ph, mode=mode, n=len(vals), mean=mean,
                        std=float(np.std(vals)), normalized=norm))
    return out
