"""Per-OSC counter probing and snapshot derivation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from dial.config import Configuration, Op

SCHEMA_VERSION = 1

OP_METRICS = (
    "rpc_page_utilization",
    "rpc_channel_utilization",
    "unit_page_rpc_latency",
    "data_transfer_volume",
)
SHARED_METRICS = ("dirty_cache_utilization", "estimated_cache_update")
# every metric that carries a delta, in delta-block order
METRIC_NAMES = (
    tuple(f"read_{m}" for m in OP_METRICS)
    + tuple(f"write_{m}" for m in OP_METRICS)
    + SHARED_METRICS
)

FEATURE_NAMES = (
    tuple(f"op_{m}" for m in OP_METRICS)
    + SHARED_METRICS
    + tuple(f"delta_{m}" for m in METRIC_NAMES)
    + ("current_window", "current_inflight", "candidate_window", "candidate_inflight")
)
FEATURE_LENGTH = len(FEATURE_NAMES)

_IDX = {Op.READ: 0, Op.WRITE: 1}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RawCounters:
    """Point-in-time copy of one OSC's counters.

    Pairs are indexed ``[read, write]``.  The in-flight "samples" are
    time-weighted: ``inflight_sample_sum`` is the integral of the in-flight
    count and ``inflight_sample_count`` the elapsed seconds, so their ratio
    over an interval is the mean occupancy.
    """

    time: float
    rpc_count: tuple[int, int]
    page_count: tuple[int, int]
    rpc_latency_sum: tuple[float, float]
    inflight_sample_sum: tuple[float, float]
    inflight_sample_count: float
    bytes_transferred: tuple[int, int]
    dirty_pages_current: int
    dirty_pages_max: int
    cache_absorbed_bytes: int
    llite_bytes: tuple[int, int]

    @property
    def llite_bytes_written_total(self) -> int:
        return self.llite_bytes[1]


def probe(osc, now: float) -> RawCounters:
    """Copy the counters of ``osc`` as of ``now`` without touching its state."""
    return RawCounters(
        time=now,
        rpc_count=(osc.rpc_count[0], osc.rpc_count[1]),
        page_count=(osc.page_count[0], osc.page_count[1]),
        rpc_latency_sum=(osc.rpc_latency_sum[0], osc.rpc_latency_sum[1]),
        inflight_sample_sum=osc.inflight_integral_at(now),
        inflight_sample_count=now,
        bytes_transferred=(osc.bytes_transferred[0], osc.bytes_transferred[1]),
        dirty_pages_current=osc.occupancy,
        dirty_pages_max=osc.max_dirty_pages,
        cache_absorbed_bytes=osc.cache_absorbed_bytes,
        llite_bytes=(osc.llite_bytes[0], osc.llite_bytes[1]),
    )


@dataclass(frozen=True)
class OpMetrics:
    rpc_page_utilization: float = 0.0
    rpc_channel_utilization: float = 0.0
    unit_page_rpc_latency: float = 0.0
    data_transfer_volume: float = 0.0

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in OP_METRICS)


@dataclass(frozen=True)
class MetricSnapshot:
    read: OpMetrics
    write: OpMetrics
    dirty_cache_utilization: float
    estimated_cache_update: float
    interval: float
    config_at_sample: Configuration
    time: float = 0.0
    deltas: Optional[tuple[float, ...]] = None

    def op(self, op: Op) -> OpMetrics:
        return self.read if op is Op.READ else self.write

    def metric_values(self) -> tuple[float, ...]:
        """Values in ``METRIC_NAMES`` order."""
        return (self.read.values() + self.write.values()
                + (self.dirty_cache_utilization, self.estimated_cache_update))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "time": self.time,
            "interval": self.interval,
            "config": list(self.config_at_sample.as_tuple()),
            "metrics": dict(zip(METRIC_NAMES, self.metric_values())),
            "deltas": None if self.deltas is None else list(self.deltas),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSnapshot":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise MetricsError(f"unsupported snapshot schema {d.get('schema_version')!r}")
        m = d["metrics"]
        if set(m) != set(METRIC_NAMES):
            raise MetricsError("snapshot metrics do not match the schema")
        deltas = d.get("deltas")
        if deltas is not None and len(deltas) != len(METRIC_NAMES):
            raise MetricsError("delta block has the wrong length")
        return cls(
            read=OpMetrics(*(float(m[f"read_{k}"]) for k in OP_METRICS)),
            write=OpMetrics(*(float(m[f"write_{k}"]) for k in OP_METRICS)),
            dirty_cache_utilization=float(m["dirty_cache_utilization"]),
            estimated_cache_update=float(m["estimated_cache_update"]),
            interval=float(d["interval"]),
            config_at_sample=Configuration(*d["config"]),
            time=float(d["time"]),
            deltas=None if deltas is None else tuple(float(x) for x in deltas),
        )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _op_metrics(curr: RawCounters, prev: RawCounters, i: int, config: Configuration,
                elapsed: float) -> OpMetrics:
    rpcs = curr.rpc_count[i] - prev.rpc_count[i]
    pages = curr.page_count[i] - prev.page_count[i]
    latency = curr.rpc_latency_sum[i] - prev.rpc_latency_sum[i]
    occupancy = curr.inflight_sample_sum[i] - prev.inflight_sample_sum[i]
    volume = curr.bytes_transferred[i] - prev.bytes_transferred[i]

    pages_per_rpc = _ratio(pages, rpcs)
    mean_inflight = _ratio(occupancy, elapsed)
    mean_latency = _ratio(latency, rpcs)
    return OpMetrics(
        rpc_page_utilization=min(1.0, pages_per_rpc / config.rpc_window_pages),
        rpc_channel_utilization=min(1.0, max(0.0, mean_inflight / config.rpcs_in_flight)),
        unit_page_rpc_latency=_ratio(mean_latency, pages_per_rpc * (mean_inflight + 1)),
        data_transfer_volume=float(volume),
    )


def derive(curr: RawCounters, prev: RawCounters, config: Configuration, interval: float,
           previous: Optional[MetricSnapshot] = None) -> MetricSnapshot:
    """Turn two probes into a snapshot.

    ``previous`` is the snapshot derived one interval earlier; when given,
    the delta block is filled in as (this − previous).
    """
    if interval <= 0:
        raise MetricsError("interval must be positive")
    if prev.time > curr.time:
        raise MetricsError(f"previous probe ({prev.time}) is newer than current ({curr.time})")
    elapsed = curr.inflight_sample_count - prev.inflight_sample_count
    snap = MetricSnapshot(
        read=_op_metrics(curr, prev, 0, config, elapsed),
        write=_op_metrics(curr, prev, 1, config, elapsed),
        dirty_cache_utilization=_ratio(curr.dirty_pages_current, curr.dirty_pages_max),
        estimated_cache_update=float(curr.cache_absorbed_bytes - prev.cache_absorbed_bytes),
        interval=interval,
        config_at_sample=config,
        time=curr.time,
    )
    if previous is None:
        return snap
    deltas = tuple(a - b for a, b in zip(snap.metric_values(), previous.metric_values()))
    return MetricSnapshot(snap.read, snap.write, snap.dirty_cache_utilization,
                          snap.estimated_cache_update, interval, config, curr.time, deltas)


def feature_prefix(snap: MetricSnapshot, op: Op) -> np.ndarray:
    """Every slot except the candidate pair (shared by all candidates)."""
    if snap.deltas is None:
        raise MetricsError("snapshot has no delta block; it needs two earlier probes")
    cur = snap.config_at_sample
    return np.array(
        snap.op(op).values()
        + (snap.dirty_cache_utilization, snap.estimated_cache_update)
        + snap.deltas
        + (cur.rpc_window_pages, cur.rpcs_in_flight),
        dtype=np.float64,
    )


def feature_vector(snap: MetricSnapshot, candidate: Configuration, op: Op) -> np.ndarray:
    prefix = feature_prefix(snap, op)
    return np.concatenate([prefix, [candidate.rpc_window_pages, candidate.rpcs_in_flight]])


def feature_matrix(snap: MetricSnapshot, candidates: Iterable[Configuration], op: Op) -> np.ndarray:
    """One row per candidate; identical to stacking ``feature_vector`` calls."""
    prefix = feature_prefix(snap, op)
    cands = np.array([c.as_tuple() for c in candidates], dtype=np.float64).reshape(-1, 2)
    out = np.empty((len(cands), FEATURE_LENGTH))
    out[:, :-2] = prefix
    out[:, -2:] = cands
    return out


def write_snapshots(path: str | Path, snaps: Iterable[MetricSnapshot]) -> None:
    with open(path, "w") as fh:
        for s in snaps:
            fh.write(json.dumps(s.to_dict()) + "\n")


def read_snapshots(path: str | Path) -> Iterator[MetricSnapshot]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield MetricSnapshot.from_dict(json.loads(line))
