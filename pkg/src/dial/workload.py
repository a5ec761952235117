"""Filebench-style I/O patterns and the drivers that feed them to the simulator."""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from dial.config import GiB, KiB, MiB, PAGE_SIZE, Op
from dial.sim import IoRequest, Simulator

SIZES = {"8k": 8 * KiB, "1m": 1 * MiB, "16m": 16 * MiB}
STREAMS = {"s": 1, "f": 5}
OPS = {"rd": Op.READ, "wr": Op.WRITE}

IN_PLACE_OVERWRITE = 0.8
RECENT_OFFSETS = 16


class Access(str, Enum):
    SEQUENTIAL = "sq"
    RANDOM = "rn"


class WorkloadSpecError(ValueError):
    def __init__(self, name: str, position: int, reason: str):
        super().__init__(f"bad workload name {name!r}: token {position} {reason}")
        self.position = position


@dataclass(frozen=True)
class WorkloadSpec:
    op: Op
    access: Access
    request_size: int
    streams: int = 1
    file_size: int = 4 * GiB
    think_time: float = 0.0
    duration: float = 300.0
    overwrite_fraction: float = 0.0
    stripe_count: Optional[int] = None  # None: stripe over every OST

    def __post_init__(self) -> None:
        if self.request_size <= 0 or self.request_size > self.file_size:
            raise ValueError("request_size must be in (0, file_size]")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.streams < 1:
            raise ValueError("need at least one stream")
        if self.think_time < 0:
            raise ValueError("think_time must be >= 0")
        if not 0.0 <= self.overwrite_fraction <= 1.0:
            raise ValueError("overwrite_fraction must be in [0, 1]")

    @property
    def name(self) -> str:
        size = {v: k for k, v in SIZES.items()}.get(self.request_size, f"{self.request_size}b")
        stream = "s" if self.streams == 1 else "f" if self.streams == 5 else f"{self.streams}x"
        op = "rd" if self.op is Op.READ else "wr"
        base = f"{stream}_{op}_{self.access.value}_{size}"
        return base + "_ip" if self.overwrite_fraction == IN_PLACE_OVERWRITE else base


_TOKENS = [("s|f", STREAMS), ("rd|wr", OPS), ("sq|rn", {a.value: a for a in Access}),
           ("8k|1m|16m", SIZES)]


def parse_spec(name: str, **overrides) -> WorkloadSpec:
    """Decode ``[s|f]_[rd|wr]_[sq|rn]_[8k|1m|16m]`` with an optional ``_ip`` suffix.

    The ``_ip`` suffix selects the in-place update variant (80% of writes
    rewrite one of the stream's recent offsets).
    """
    parts = name.strip().split("_")
    values = []
    for pos, (expect, table) in enumerate(_TOKENS, start=1):
        if pos > len(parts):
            raise WorkloadSpecError(name, pos, f"missing, expected {expect}")
        tok = parts[pos - 1]
        if tok not in table:
            raise WorkloadSpecError(name, pos, f"is {tok!r}, expected {expect}")
        values.append(table[tok])
    overwrite = 0.0
    if len(parts) == 5 and parts[4] == "ip":
        overwrite = IN_PLACE_OVERWRITE
    elif len(parts) > 4:
        raise WorkloadSpecError(name, 5, f"is {parts[4]!r}, expected end or 'ip'")
    streams, op, access, size = values
    kw = dict(op=op, access=access, request_size=size, streams=streams,
              overwrite_fraction=overwrite)
    kw.update(overrides)
    return WorkloadSpec(**kw)


BASE_PATTERNS = [f"s_{op}_{acc}_{size}" for op in ("rd", "wr") for acc in ("sq", "rn")
                 for size in ("8k", "1m", "16m")]


@dataclass
class WorkloadSequence:
    phases: list[WorkloadSpec]
    switch_interval: float = 300.0

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("a sequence needs at least one phase")
        if self.switch_interval <= 0:
            raise ValueError("switch_interval must be positive")

    @classmethod
    def load(cls, path: str | Path) -> "WorkloadSequence":
        d = json.loads(Path(path).read_text())
        return cls([parse_spec(n) for n in d["phases"]], float(d.get("switch_interval", 300.0)))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(
            {"phases": [p.name for p in self.phases], "switch_interval": self.switch_interval}))


class _Stream:
    __slots__ = ("file_id", "cursor", "recent", "issued")

    def __init__(self, file_id: int):
        self.file_id = file_id
        self.cursor = 0
        self.recent: deque[int] = deque(maxlen=RECENT_OFFSETS)
        self.issued = 0


class WorkloadGenerator:
    """Offset generator for one client's streams.

    Sequential streams walk their file in request-size steps (wrapping at
    the end); random streams draw page-aligned offsets uniformly.  With
    ``overwrite_fraction`` > 0 a write may instead reuse one of the stream's
    recent offsets.
    """

    def __init__(self, spec: WorkloadSpec, rng: random.Random, file_ids: list[int]):
        if len(file_ids) != spec.streams:
            raise ValueError("one file per stream")
        self.spec = spec
        self.rng = rng
        self.streams = [_Stream(f) for f in file_ids]

    def switch(self, spec: WorkloadSpec) -> None:
        if spec.streams != len(self.streams):
            raise ValueError("phase switches must keep the stream count")
        self.spec = spec

    def next_request(self, stream: int, now: float) -> IoRequest:
        spec = self.spec
        st = self.streams[stream]
        size = spec.request_size
        rng = self.rng
        st.issued += 1
        if spec.overwrite_fraction and st.recent and rng.random() < spec.overwrite_fraction:
            offset = st.recent[rng.randrange(len(st.recent))]
            return IoRequest(spec.op, st.file_id, offset, size, now)
        if spec.access is Access.SEQUENTIAL:
            if st.cursor + size > spec.file_size:
                st.cursor = 0
            offset = st.cursor
            st.cursor += size
        else:
            last_page = (spec.file_size - size) // PAGE_SIZE
            offset = int(rng.random() * (last_page + 1)) * PAGE_SIZE
        st.recent.append(offset)
        return IoRequest(spec.op, st.file_id, offset, size, now)

    def next_requests(self, now: float) -> list[IoRequest]:
        """One request per stream, in stream order."""
        return [self.next_request(i, now) for i in range(len(self.streams))]


def next_requests(gen: WorkloadGenerator, now: float) -> list[IoRequest]:
    if now >= gen.spec.duration:
        return []
    return gen.next_requests(now)


class StreamDriver:
    """Attaches a generator to one simulated client.

    With ``think_time`` 0 each stream keeps ``queue_depth`` requests
    outstanding and reissues on completion.  Otherwise each stream issues
    one request every ``think_time`` seconds regardless of completions.
    """

    def __init__(self, sim: Simulator, client: int, spec: WorkloadSpec, rng: random.Random,
                 first_file: int = 0):
        self.sim = sim
        self.client = client
        n_osts = sim.scenario.n_osts
        file_ids = []
        for i in range(spec.streams):
            fid = first_file + i
            count = spec.stripe_count or n_osts
            start = (client * spec.streams + i) % n_osts
            osts = tuple((start + k) % n_osts for k in range(count))
            sim.register_file(client, fid, spec.file_size, osts)
            file_ids.append(fid)
        self.gen = WorkloadGenerator(spec, rng, file_ids)
        self._callbacks = [lambda r, t, s=i: self._on_done(s) for i in range(spec.streams)]
        self.stopped = False
        self._epoch = 0
        self.bytes_issued = 0

    @property
    def spec(self) -> WorkloadSpec:
        return self.gen.spec

    def start(self) -> None:
        now = self.sim.clock
        spec = self.spec
        for i in range(spec.streams):
            if spec.think_time > 0:
                self._issue(i, now)
                self.sim.schedule(now + spec.think_time, self._tick, (self._epoch, i))
            else:
                for _ in range(self.sim.scenario.queue_depth):
                    self._issue(i, now)

    def switch(self, spec: WorkloadSpec) -> None:
        """Change pattern in place; outstanding requests drain naturally."""
        old = self.spec
        self.gen.switch(spec)
        if (old.think_time > 0) != (spec.think_time > 0) or old.think_time != spec.think_time:
            self._epoch += 1
            if spec.think_time > 0:
                for i in range(spec.streams):
                    self.sim.schedule(self.sim.clock, self._tick, (self._epoch, i))

    def stop(self) -> None:
        self.stopped = True

    def _issue(self, stream: int, now: float) -> None:
        gen = self.gen
        req = gen.next_request(stream, now)
        self.bytes_issued += req.length
        if gen.spec.think_time == 0:
            self.sim.submit_io(self.client, req, self._callbacks[stream])
        else:
            self.sim.submit_io(self.client, req)

    def _on_done(self, stream: int) -> None:
        if not self.stopped and self.spec.think_time == 0:
            self._issue(stream, self.sim.clock)

    def _tick(self, arg) -> None:
        epoch, stream = arg
        if self.stopped or epoch != self._epoch:
            return
        now = self.sim.clock
        self._issue(stream, now)
        self.sim.schedule(now + self.spec.think_time, self._tick, arg)


@dataclass
class PhaseResult:
    phase: int
    spec: str
    client: int
    start: float
    end: float
    read_bytes: int
    write_bytes: int

    @property
    def throughput(self) -> float:
        return (self.read_bytes + self.write_bytes) / (self.end - self.start)


ProbeHook = Callable[[Simulator, float], None]


def run_phases(sim: Simulator, phases: dict[int, list[WorkloadSpec]], switch_interval: float,
               rng_seed: int = 0, probe_interval: float = 0.5,
               hook: Optional[ProbeHook] = None) -> list[PhaseResult]:
    """Run each client's phase list back to back without resetting state.

    ``hook`` is called at every probe boundary after the simulator has been
    advanced to it.  Throughput is counted from completed application
    requests, per client and phase.
    """
    n_phases = {len(v) for v in phases.values()}
    if len(n_phases) != 1:
        raise ValueError("all clients need the same number of phases")
    drivers = {}
    for client, specs in sorted(phases.items()):
        rng = random.Random(rng_seed * 1_000_003 + client)
        drivers[client] = StreamDriver(sim, client, specs[0], rng, first_file=0)
    for d in drivers.values():
        d.start()
    results = []
    t0 = sim.clock
    steps = max(1, round(switch_interval / probe_interval))
    for k in range(n_phases.pop()):
        if k:
            for client, d in drivers.items():
                d.switch(phases[client][k])
        start = sim.clock
        before = {c: list(sim.clients[c].bytes_done) for c in drivers}
        for s in range(1, steps + 1):
            t = t0 + k * switch_interval + s * (switch_interval / steps)
            sim.advance(t)
            if hook is not None:
                hook(sim, t)
        for c, d in drivers.items():
            after = sim.clients[c].bytes_done
            results.append(PhaseResult(k, d.spec.name, c, start, sim.clock,
                                       after[0] - before[c][0], after[1] - before[c][1]))
    for d in drivers.values():
        d.stop()
    return results


def sequence_driver(seq: WorkloadSequence, sim: Simulator, agent_hook: Optional[ProbeHook] = None,
                    client: int = 0, seed: int = 0, probe_interval: float = 0.5) -> list[PhaseResult]:
    return run_phases(sim, {client: list(seq.phases)}, seq.switch_interval, seed,
                      probe_interval, agent_hook)
