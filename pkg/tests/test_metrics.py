from __future__ import annotations

import json
import random
import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import one_ost_sim, write
from dial.config import MiB, Configuration, Scenario
from dial.gbdt import TrainingSample
from dial.metrics import (FEATURE_LENGTH, FEATURE_NAMES, METRIC_NAMES, MetricsError,
                          MetricSnapshot, RawCounters, derive, feature_matrix, feature_vector,
                          probe, read_snapshots, write_snapshots)
from dial.config import Op
from dial.sim import Simulator
from dial.workload import StreamDriver, parse_spec

CFG = Configuration(256, 8)


def counters(t=0.0, rpc=(0, 0), pages=(0, 0), lat=(0.0, 0.0), occ=(0.0, 0.0), nbytes=(0, 0),
             dirty=0, absorbed=0, llite=(0, 0)) -> RawCounters:
    return RawCounters(t, rpc, pages, lat, occ, t, nbytes, dirty, 8192, absorbed, llite)


# -- probe ----------------------------------------------------------------------

def test_probe_twice_without_events_is_identical():
    s = one_ost_sim()
    write(s, 0, 3 * MiB)
    s.advance(0.1)
    osc = s.osc(0, 0)
    assert probe(osc, 0.1) == probe(osc, 0.1)


def test_probe_does_not_touch_simulator_state():
    s = one_ost_sim()
    write(s, 0, 3 * MiB)
    before = s.trace_digest()
    osc = s.osc(0, 0)
    state = (list(osc.inflight_integral), osc._tick_time, s.clock)
    probe(osc, 0.0)
    probe(osc, 5.0)
    assert s.trace_digest() == before
    assert (list(osc.inflight_integral), osc._tick_time, s.clock) == state


def test_probe_counts_one_completed_rpc():
    s = one_ost_sim()
    osc = s.osc(0, 0)
    a = probe(osc, 0.0)
    write(s, 0, 256 * 4096)
    s.advance(0.5)
    b = probe(osc, 0.5)
    assert b.rpc_count[1] - a.rpc_count[1] == 1
    assert b.page_count[1] - a.page_count[1] == 256
    assert b.bytes_transferred[1] == MiB
    assert b.llite_bytes_written_total == MiB


# -- derive ---------------------------------------------------------------------

def test_idle_interval_gives_all_zero_snapshot():
    z = counters(t=1.0)
    first = derive(z, counters(t=0.5), CFG, 0.5)
    snap = derive(counters(t=1.5), z, CFG, 0.5, previous=first)
    assert snap.metric_values() == (0.0,) * len(METRIC_NAMES)
    assert snap.deltas == (0.0,) * len(METRIC_NAMES)
    assert not any(np.isnan(snap.metric_values()))


def test_page_utilization_ratio():
    curr = counters(t=1.0, rpc=(0, 10), pages=(0, 10 * 128))
    snap = derive(curr, counters(), CFG, 1.0)
    assert snap.write.rpc_page_utilization == 0.5
    assert snap.read.rpc_page_utilization == 0.0


def test_unit_page_latency_formula():
    # independent oracle: mean latency / (pages per rpc * (mean inflight + 1))
    mean_latency, pages_per_rpc, mean_inflight = 4e-3, 100, 3
    expected = mean_latency / (pages_per_rpc * (mean_inflight + 1))
    assert expected == pytest.approx(10e-6, rel=1e-12)
    n, elapsed = 10, 2.0
    curr = counters(t=elapsed, rpc=(n, 0), pages=(n * pages_per_rpc, 0),
                    lat=(n * mean_latency, 0.0), occ=(mean_inflight * elapsed, 0.0))
    snap = derive(curr, counters(), Configuration(256, 4), elapsed)
    assert snap.read.unit_page_rpc_latency == pytest.approx(expected, rel=1e-12)
    assert snap.read.rpc_channel_utilization == pytest.approx(0.75)


def test_channel_utilization_is_clamped():
    curr = counters(t=1.0, rpc=(0, 1), pages=(0, 1), occ=(0.0, 12.0))
    assert derive(curr, counters(), Configuration(256, 4), 1.0).write.rpc_channel_utilization == 1.0


def test_derive_rejects_out_of_order_probes_and_bad_interval():
    with pytest.raises(MetricsError):
        derive(counters(t=1.0), counters(t=2.0), CFG, 0.5)
    with pytest.raises(MetricsError):
        derive(counters(t=1.0), counters(t=0.5), CFG, 0.0)


def test_deltas_are_exact_differences():
    a = derive(counters(t=1.0, rpc=(2, 3), pages=(20, 90), nbytes=(5, 7)), counters(), CFG, 1.0)
    b = derive(counters(t=2.0, rpc=(5, 4), pages=(50, 100), nbytes=(9, 10), absorbed=4096),
               counters(t=1.0, rpc=(2, 3), pages=(20, 90), nbytes=(5, 7)), CFG, 1.0, previous=a)
    assert b.deltas == tuple(x - y for x, y in zip(b.metric_values(), a.metric_values()))
    assert b.estimated_cache_update == 4096.0


_nonneg = st.integers(0, 10**9)


@settings(max_examples=200, deadline=None)
@given(rpc=st.tuples(_nonneg, _nonneg), extra=st.tuples(_nonneg, _nonneg),
       lat=st.floats(0, 100), occ=st.floats(0, 1e3), dirty=st.integers(0, 8192),
       window=st.sampled_from([16, 256, 1024]), cap=st.sampled_from([1, 8, 32]),
       dt=st.floats(0.01, 10))
def test_metrics_stay_in_range(rpc, extra, lat, occ, dirty, window, cap, dt):
    pages = (rpc[0] * min(window, 1 + extra[0] % window), rpc[1] * min(window, 1 + extra[1] % window))
    curr = counters(t=dt, rpc=rpc, pages=pages, lat=(lat, lat), occ=(occ, occ),
                    nbytes=(pages[0] * 4096, pages[1] * 4096), dirty=dirty)
    cfg = Configuration(window, cap)
    snap = derive(curr, counters(), cfg, dt)
    assert snap == derive(curr, counters(), cfg, dt)
    for m in (snap.read, snap.write):
        assert 0.0 <= m.rpc_page_utilization <= 1.0
        assert 0.0 <= m.rpc_channel_utilization <= 1.0
        assert m.unit_page_rpc_latency >= 0.0
        assert m.data_transfer_volume >= 0.0
    assert 0.0 <= snap.dirty_cache_utilization <= 1.0


def test_volumes_sum_to_completed_bytes():
    sim = Simulator(Scenario())
    StreamDriver(sim, 0, parse_spec("s_wr_rn_1m"), random.Random(2)).start()
    osc = sim.osc(0, 1)
    prev = probe(osc, 0.0)
    total = 0.0
    for k in range(1, 9):
        sim.advance(k * 0.25)
        curr = probe(osc, sim.clock)
        total += derive(curr, prev, osc.config, 0.25).write.data_transfer_volume
        prev = curr
    assert total == osc.bytes_transferred[1] > 0


# -- feature vectors ------------------------------------------------------------

def _snap(seed: int = 0) -> MetricSnapshot:
    rng = random.Random(seed)
    a = derive(counters(t=1.0, rpc=(3, 9), pages=(300, 900), lat=(0.01, 0.03),
                        occ=(1.0, 2.0), nbytes=(300 * 4096, 900 * 4096), dirty=rng.randrange(8192)),
               counters(), CFG, 1.0)
    return derive(counters(t=2.0, rpc=(5, 19), pages=(420, 1900), lat=(0.02, 0.05),
                           occ=(1.5, 5.0), nbytes=(420 * 4096, 1900 * 4096), dirty=rng.randrange(8192),
                           absorbed=rng.randrange(10**6)),
                  counters(t=1.0, rpc=(3, 9), pages=(300, 900), lat=(0.01, 0.03),
                           occ=(1.0, 2.0), nbytes=(300 * 4096, 900 * 4096)),
                  CFG, 1.0, previous=a)


def test_candidates_differ_only_in_candidate_slot():
    snap = _snap()
    a = feature_vector(snap, Configuration(64, 4), Op.WRITE)
    b = feature_vector(snap, Configuration(512, 4), Op.WRITE)
    diff = np.flatnonzero(a != b)
    assert diff.tolist() == [FEATURE_NAMES.index("candidate_window")]


def test_feature_layout_is_fixed():
    snap = _snap()
    v = feature_vector(snap, Configuration(16, 32), Op.READ)
    assert len(v) == FEATURE_LENGTH == 20
    assert v[:4].tolist() == list(snap.read.values())
    assert v[-4:].tolist() == [256, 8, 16, 32]
    w = feature_vector(snap, Configuration(16, 32), Op.WRITE)
    assert w[:4].tolist() == list(snap.write.values())
    assert (v[4:] == w[4:]).all()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), op=st.sampled_from(list(Op)))
def test_feature_matrix_matches_stacked_vectors(seed, op):
    snap = _snap(seed)
    cands = list(Scenario().space)
    M = feature_matrix(snap, cands, op)
    assert M.shape == (42, FEATURE_LENGTH)
    for row, c in zip(M, cands):
        assert (row == feature_vector(snap, c, op)).all()


def test_features_need_deltas():
    snap = derive(counters(t=1.0), counters(), CFG, 1.0)
    with pytest.raises(MetricsError):
        feature_vector(snap, CFG, Op.WRITE)


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                       min_size=FEATURE_LENGTH, max_size=FEATURE_LENGTH))
def test_sample_jsonl_round_trip_is_bit_exact(values):
    s = TrainingSample(values, 1, Op.READ)
    back = TrainingSample.from_json(s.to_json())
    assert np.array(back.features).tobytes() == np.array(values).tobytes()


def test_snapshot_log_round_trip(tmp_path):
    snaps = [_snap(k) for k in range(5)]
    path = tmp_path / "snaps.jsonl"
    write_snapshots(path, snaps)
    assert list(read_snapshots(path)) == snaps
    assert all(json.loads(x)["schema_version"] == 1 for x in path.read_text().splitlines())


def test_snapshot_log_rejects_other_schema():
    d = _snap().to_dict()
    d["schema_version"] = 99
    with pytest.raises(MetricsError):
        MetricSnapshot.from_dict(d)


def test_schema_document_matches_feature_order():
    doc = Path(__file__).resolve().parents[1] / "docs" / "feature-schema.md"
    rows = re.findall(r"^\|\s*(\d+)\s*\|\s*`(\w+)`", doc.read_text(), flags=re.M)
    assert [int(i) for i, _ in rows] == list(range(FEATURE_LENGTH))
    assert tuple(name for _, name in rows) == FEATURE_NAMES
