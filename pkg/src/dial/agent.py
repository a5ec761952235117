"""The per-OSC control loop: probe, derive, tune, apply.

One :class:`Agent` owns exactly one OSC handle and never looks at any other
OSC.  In collect mode it applies random configurations and emits labeled
samples instead of tuning.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from dial.config import Configuration, Op
from dial.gbdt import GbdtModel, TrainingSample, load_model
from dial.metrics import MetricSnapshot, RawCounters, derive, feature_vector, probe
from dial.tuner import (Idle, TunerParams, candidate_probabilities, select_op_type,
                        tune_from_probabilities)


class Mode(str, Enum):
    TUNE = "tune"
    COLLECT = "collect"
    PASSIVE = "passive"


@dataclass
class AgentConfig:
    probe_interval: float = 0.5
    warmup_intervals: int = 2
    tuner: TunerParams = field(default_factory=TunerParams)
    mode: Mode = Mode.TUNE
    model_paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        if isinstance(self.tuner, dict):
            self.tuner = TunerParams(**self.tuner)
        if self.probe_interval <= 0:
            raise ValueError("probe_interval must be positive")
        if self.warmup_intervals < 1:
            raise ValueError("warmup_intervals must be >= 1")
        unknown = set(self.model_paths) - {o.value for o in Op}
        if unknown:
            raise ValueError(f"model_paths keys must be 'read'/'write', got {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def load(cls, path: str | Path) -> "AgentConfig":
        return cls(**json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def load_models(self) -> dict[Op, GbdtModel]:
        return {Op(k): load_model(v) for k, v in self.model_paths.items()}


class LabelDiscarded(Exception):
    pass


def label(prev_perf: float, next_perf: float, epsilon: float = 0.15) -> int:
    """1 when ``next_perf`` beats ``prev_perf`` by more than ``epsilon``.

    Raises :class:`LabelDiscarded` when ``prev_perf`` is zero.
    """
    if prev_perf < 0 or next_perf < 0:
        raise ValueError("throughput cannot be negative")
    if prev_perf == 0:
        raise LabelDiscarded("previous throughput is zero")
    return int(next_perf / prev_perf > 1 + epsilon)


@dataclass
class IntervalRecord:
    time: float
    osc_id: tuple[int, int]
    snapshot: Optional[MetricSnapshot]
    config_before: Configuration
    chosen: Configuration
    applied: bool
    idle: bool
    op: Optional[Op]
    probability: Optional[float]
    throughput_before: tuple[float, float]
    throughput_after: tuple[float, float]
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "osc": list(self.osc_id),
            "config_before": list(self.config_before.as_tuple()),
            "chosen": list(self.chosen.as_tuple()),
            "applied": self.applied,
            "idle": self.idle,
            "op": None if self.op is None else self.op.value,
            "probability": self.probability,
            "throughput_before": list(self.throughput_before),
            "throughput_after": list(self.throughput_after),
            "elapsed": self.elapsed,
            "snapshot": None if self.snapshot is None else self.snapshot.to_dict(),
        }


class Agent:
    def __init__(self, osc, config: AgentConfig, models: Optional[dict[Op, GbdtModel]] = None,
                 rng: Optional[random.Random] = None, space=None,
                 explore_seed: Optional[str] = None):
        self._osc = osc
        self.config = config
        self.models = models or {}
        self.rng = rng or random.Random(0)
        # with a seed, the exploration draw is a pure function of (seed, interval)
        self.explore_seed = explore_seed
        self.space = list(space if space is not None else osc.sim.space)
        if config.mode is Mode.TUNE and set(self.models) != {Op.READ, Op.WRITE}:
            raise ValueError("tune mode needs a read model and a write model")
        # rolling state: the last two raw probes and the snapshot between them
        self._probes: list[RawCounters] = []
        self._snapshot: Optional[MetricSnapshot] = None
        self._perf: Optional[tuple[float, float]] = None
        self._pending: Optional[tuple] = None
        self.intervals = 0
        self.records: list[IntervalRecord] = []
        self.samples: list[TrainingSample] = []
        self.discarded = 0

    @property
    def osc_id(self) -> tuple[int, int]:
        return self._osc.osc_id

    def start(self, now: float) -> None:
        self._probes = [probe(self._osc, now)]

    def run_interval(self, now: float) -> IntervalRecord:
        t0 = time.perf_counter()
        osc = self._osc
        curr = probe(osc, now)
        if not self._probes:
            self._probes = [curr]
            return self._record(now, None, osc.config, osc.config, False, True, None, None,
                                (0.0, 0.0), (0.0, 0.0), t0)
        prev = self._probes[-1]
        self._probes = [prev, curr]
        config = osc.config
        interval = max(curr.time - prev.time, 1e-12)
        snap = derive(curr, prev, config, self.config.probe_interval, self._snapshot)
        self._snapshot = snap
        perf = tuple((curr.llite_bytes[i] - prev.llite_bytes[i]) / interval for i in (0, 1))
        before, self._perf = self._perf or (0.0, 0.0), perf
        self.intervals += 1

        if self.config.mode is Mode.COLLECT:
            self._emit_sample(perf)

        ready = self.intervals >= self.config.warmup_intervals and snap.deltas is not None
        try:
            op = select_op_type(snap)
        except Idle:
            op = None
        if not ready or op is None or self.config.mode is Mode.PASSIVE:
            return self._record(now, snap, config, config, False, op is None, op, None,
                                before, perf, t0)

        if self.config.mode is Mode.COLLECT:
            choice = self.space[self._draw(len(self.space))]
            self._pending = (feature_vector(snap, choice, op), op, perf[op is Op.WRITE])
            osc.set_config(choice)
            return self._record(now, snap, config, choice, choice != config, False, op, None,
                                before, perf, t0)

        probs = candidate_probabilities(self.models[op], snap, self.space, op)
        choice = tune_from_probabilities(probs, op, config, self.config.tuner)
        p = dict(probs)[choice]
        applied = choice != config
        if applied:
            osc.set_config(choice)
        return self._record(now, snap, config, choice, applied, False, op, p, before, perf, t0)

    def _draw(self, n: int) -> int:
        if self.explore_seed is None:
            return self.rng.randrange(n)
        return random.Random(f"{self.explore_seed}/{self.intervals}").randrange(n)

    def _emit_sample(self, perf: tuple[float, float]) -> None:
        pending, self._pending = self._pending, None
        if pending is None:
            return
        features, op, prev_perf = pending
        try:
            y = label(prev_perf, perf[op is Op.WRITE], self.config.tuner.epsilon)
        except LabelDiscarded:
            self.discarded += 1
            return
        self.samples.append(TrainingSample([float(x) for x in features], y, op))

    def _record(self, now, snap, before_cfg, chosen, applied, idle, op, p, before, after,
                t0) -> IntervalRecord:
        rec = IntervalRecord(now, self.osc_id, snap, before_cfg, chosen, applied, idle, op, p,
                             before, after, time.perf_counter() - t0)
        self.records.append(rec)
        return rec


def run_interval(agent: Agent, osc, now: float) -> IntervalRecord:
    if osc is not agent._osc:
        raise ValueError("an agent may only act on its own OSC")
    return agent.run_interval(now)


def collect_training(agent: Agent, osc, now: float) -> Optional[TrainingSample]:
    """One collect-mode interval; returns the sample it emitted, if any."""
    if agent.config.mode is not Mode.COLLECT:
        raise ValueError("agent is not in collect mode")
    n = len(agent.samples)
    run_interval(agent, osc, now)
    return agent.samples[-1] if len(agent.samples) > n else None


class AgentPool:
    """One agent per OSC, driven in (client, OST) order at probe boundaries.

    With ``shared_exploration`` the collect-mode draws of a client's agents
    come from a common seed, so its OSCs move together.
    """

    def __init__(self, sim, config: AgentConfig, models: Optional[dict[Op, GbdtModel]] = None,
                 seed: int = 0, clients: Optional[list[int]] = None,
                 shared_exploration: bool = True):
        self.agents: list[Agent] = []
        for osc in sim.all_oscs():
            c, j = osc.osc_id
            if clients is not None and c not in clients:
                continue
            rng = random.Random(f"{seed}/{c}/{j}")
            explore = f"{seed}/{c}" if shared_exploration else None
            agent = Agent(osc, config, models, rng, explore_seed=explore)
            agent.start(sim.clock)
            self.agents.append(agent)

    def hook(self) -> Callable:
        def on_probe(sim, t: float) -> None:
            for agent in self.agents:
                agent.run_interval(t)
        return on_probe

    @property
    def records(self) -> list[IntervalRecord]:
        return [r for a in self.agents for r in a.records]

    @property
    def samples(self) -> list[TrainingSample]:
        return [s for a in self.agents for s in a.samples]

    @property
    def discarded(self) -> int:
        return sum(a.discarded for a in self.agents)
