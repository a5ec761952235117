from __future__ import annotations

import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import ConstantModel, TableModel
from dial.config import ConfigSpace, Configuration, Op
from dial.metrics import MetricSnapshot, OpMetrics
from dial.tuner import (Idle, ScoredCandidate, TunerParams, candidate_set, explain,
                        minmax_normalize, read_score, select_op_type, tune,
                        tune_from_probabilities, write_score)
from oracle import brute_force_choice

SPACE = list(ConfigSpace())
CURRENT = Configuration(256, 8)


def snap(read_volume: float = 0.0, write_volume: float = 0.0) -> MetricSnapshot:
    return MetricSnapshot(OpMetrics(data_transfer_volume=read_volume),
                          OpMetrics(data_transfer_volume=write_volume), 0.1, 0.0, 0.5,
                          CURRENT, 1.0, deltas=(0.0,) * 10)


def sc(theta: Configuration, p: float = 0.9, norm=None) -> ScoredCandidate:
    return ScoredCandidate(theta, p, norm)


# -- op selection ---------------------------------------------------------------

def test_op_selection_by_volume():
    assert select_op_type(snap(0, 10e6)) is Op.WRITE
    assert select_op_type(snap(5e6, 1e6)) is Op.READ
    assert select_op_type(snap(3e6, 3e6)) is Op.WRITE


def test_idle_interval_signals():
    with pytest.raises(Idle):
        select_op_type(snap(0, 0))


# -- candidate set --------------------------------------------------------------

def test_constant_high_model_keeps_everything():
    S = candidate_set(ConstantModel(0.9), snap(0, 1), SPACE, 0.8)
    assert [c.theta for c in S] == SPACE and len(S) == 42


def test_constant_low_model_keeps_nothing():
    assert candidate_set(ConstantModel(0.5), snap(0, 1), SPACE, 0.8) == []


def test_window_gated_model_keeps_large_windows():
    model = TableModel({t: 0.9 if t.rpc_window_pages >= 256 else 0.1 for t in SPACE})
    S = {c.theta for c in candidate_set(model, snap(0, 1), SPACE, 0.8)}
    oracle = {Configuration(w, r) for w in (16, 32, 64, 128, 256, 512, 1024)
              for r in (1, 2, 4, 8, 16, 32) if w in (256, 512, 1024)}
    assert S == oracle and len(S) == 18


def test_threshold_is_strict():
    model = TableModel({t: 0.8 for t in SPACE})
    assert candidate_set(model, snap(0, 1), SPACE, 0.8) == []


# -- normalization --------------------------------------------------------------

def test_normalize_endpoints():
    out = minmax_normalize([sc(Configuration(16, 1)), sc(Configuration(1024, 32))])
    assert [c.theta_norm for c in out] == [(0.0, 0.0), (1.0, 1.0)]


def test_normalize_degenerate_dimension():
    out = minmax_normalize([sc(Configuration(256, r)) for r in (1, 4, 32)])
    assert [c.theta_norm[0] for c in out] == [0.0, 0.0, 0.0]
    assert [c.theta_norm[1] for c in out] == [0.0, 3 / 31, 1.0]


def test_normalize_window_arithmetic():
    out = minmax_normalize([sc(Configuration(w, 8)) for w in (16, 256, 1024)])
    middle = (256 - 16) / (1024 - 16)
    assert middle == pytest.approx(0.238095238, abs=1e-9)
    assert [c.theta_norm[0] for c in out] == [0.0, middle, 1.0]


def test_normalize_rejects_empty_set():
    with pytest.raises(ValueError):
        minmax_normalize([])


# -- scores ---------------------------------------------------------------------

def test_write_score_values():
    assert write_score(sc(CURRENT, 0.9, (0.0, 0.0)), 0.5) == 0.9
    assert write_score(sc(CURRENT, 0.9, (1.0, 1.0)), 0.5) == pytest.approx(1.8)


def test_read_score_values():
    assert read_score(sc(CURRENT, 0.9, (0.0, 0.0)), 0.5) == 0.9
    assert read_score(sc(CURRENT, 0.9, (1.0, 1.0)), 0.5) == pytest.approx(2.35)


@settings(max_examples=200)
@given(p=st.floats(0.8, 1.0, exclude_min=True), n1=st.floats(0, 1),
       a=st.integers(0, 31), b=st.integers(0, 31))
def test_read_score_increases_with_inflight_norm(p, n1, a, b):
    # attainable norms over the in-flight values are multiples of 1/31
    assume(a < b)
    lo = read_score(sc(CURRENT, p, (n1, a / 31)), 0.5)
    assert lo < read_score(sc(CURRENT, p, (n1, b / 31)), 0.5)


def test_equal_probabilities_write_prefers_largest_norm_sum():
    rng = random.Random(3)
    for _ in range(50):
        members = rng.sample(SPACE, rng.randint(2, 12))
        probs = [(t, 0.9 if t in members else 0.1) for t in SPACE]
        got = tune_from_probabilities(probs, Op.WRITE, CURRENT, TunerParams())
        normed = minmax_normalize([sc(t) for t in members])
        best = max(sum(c.theta_norm) for c in normed)
        top = [c.theta for c in normed if sum(c.theta_norm) == best]
        assert got == max(top, key=lambda t: t.as_tuple())


# -- tune -----------------------------------------------------------------------

def test_empty_set_keeps_current():
    assert tune(ConstantModel(0.3), snap(0, 1), SPACE, CURRENT) == CURRENT


def test_single_candidate_is_chosen():
    only = Configuration(64, 2)
    model = TableModel({t: 0.95 if t == only else 0.2 for t in SPACE})
    assert tune(model, snap(0, 1), SPACE, CURRENT) == only


def test_all_equal_write_picks_largest_config():
    assert tune(ConstantModel(0.9), snap(0, 1), SPACE, CURRENT) == Configuration(1024, 32)


def test_tie_prefers_larger_window_then_larger_inflight():
    # both candidates score p * (1 + 0.5 * 1)
    a, b = Configuration(1024, 1), Configuration(16, 32)
    probs = [(t, 0.9 if t in (a, b) else 0.0) for t in SPACE]
    assert tune_from_probabilities(probs, Op.WRITE, CURRENT, TunerParams()) == a


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), op=st.sampled_from([Op.READ, Op.WRITE]))
def test_tune_matches_brute_force(seed, op):
    rng = random.Random(seed)
    table = {t: rng.choice([rng.random(), 0.8 + 0.2 * rng.random(), 0.9]) for t in SPACE}
    model = TableModel(table)
    got = tune(model, snap(1, 0) if op is Op.READ else snap(0, 1), SPACE, CURRENT)
    want = brute_force_choice({t.as_tuple(): p for t, p in table.items()}, op.value,
                              CURRENT.as_tuple(), 0.8, 0.5, 0.5)
    assert got.as_tuple() == want


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), op=st.sampled_from([Op.READ, Op.WRITE]))
def test_changed_choice_always_clears_tau(seed, op):
    rng = random.Random(seed)
    table = {t: rng.random() for t in SPACE}
    got = tune_from_probabilities(list(table.items()), op, CURRENT, TunerParams())
    assert got == CURRENT or table[got] > 0.8


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.85, 1.0))
def test_write_choice_invariant_to_common_scaling(seed, scale):
    rng = random.Random(seed)
    table = {t: (0.95 + 0.05 * rng.random()) if rng.random() < 0.4 else 0.5 * rng.random()
             for t in SPACE}
    scaled = {t: p * scale for t, p in table.items()}
    # membership is unchanged: survivors stay above 0.8, the rest stay below
    assert {t for t, p in table.items() if p > 0.8} == {t for t, p in scaled.items() if p > 0.8}
    a = tune_from_probabilities(list(table.items()), Op.WRITE, CURRENT, TunerParams())
    b = tune_from_probabilities(list(scaled.items()), Op.WRITE, CURRENT, TunerParams())
    assert a == b


def test_tune_is_deterministic():
    rng = random.Random(1)
    table = {t: rng.random() for t in SPACE}
    runs = {tune(TableModel(table), snap(2, 1), SPACE, CURRENT) for _ in range(5)}
    assert len(runs) == 1


def test_params_validation():
    for bad in (dict(tau=0.0), dict(tau=1.0), dict(epsilon=0.0), dict(alpha=-1.0),
                dict(beta=-0.1)):
        with pytest.raises(ValueError):
            TunerParams(**bad)


def test_explain_lists_every_candidate():
    model = TableModel({t: 0.9 if t.rpcs_in_flight == 4 else 0.3 for t in SPACE})
    text = explain(model, snap(0, 1), SPACE, CURRENT)
    lines = text.strip().splitlines()
    assert lines[0].startswith("op,window,inflight,p,in_set")
    assert len(lines) == 43
    rows = [line.split(",") for line in lines[1:]]
    assert sum(int(r[4]) for r in rows) == 7
    chosen = [r for r in rows if r[-1] == "1"]
    assert len(chosen) == 1 and chosen[0][1:3] == ["1024", "4"]
