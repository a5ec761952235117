"""Conditional score greedy selection over the configuration space."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from dial.config import ConfigSpace, Configuration, Op
from dial.metrics import MetricSnapshot, feature_matrix


class ProbabilityModel(Protocol):
    def predict_proba(self, X): ...


@dataclass(frozen=True)
class TunerParams:
    tau: float = 0.8
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = 0.15

    def __post_init__(self) -> None:
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")


@dataclass(frozen=True)
class ScoredCandidate:
    theta: Configuration
    p: float
    theta_norm: Optional[tuple[float, float]] = None
    score: Optional[float] = None


class Idle(Exception):
    """Raised when an interval moved no data in either direction."""


def select_op_type(snap: MetricSnapshot) -> Op:
    r = snap.read.data_transfer_volume
    w = snap.write.data_transfer_volume
    if r == 0 and w == 0:
        raise Idle("no data moved this interval")
    return Op.READ if r > w else Op.WRITE


def candidate_probabilities(model: ProbabilityModel, snap: MetricSnapshot,
                            space: Sequence[Configuration] | ConfigSpace, op: Op
                            ) -> list[tuple[Configuration, float]]:
    thetas = list(space)
    probs = np.asarray(model.predict_proba(feature_matrix(snap, thetas, op)), dtype=np.float64)
    return [(t, float(p)) for t, p in zip(thetas, probs)]


def threshold(probs: Sequence[tuple[Configuration, float]], tau: float) -> list[ScoredCandidate]:
    return [ScoredCandidate(t, p) for t, p in probs if p > tau]


def candidate_set(model: ProbabilityModel, snap: MetricSnapshot,
                  space: Sequence[Configuration] | ConfigSpace, tau: float,
                  op: Optional[Op] = None) -> list[ScoredCandidate]:
    op = select_op_type(snap) if op is None else op
    return threshold(candidate_probabilities(model, snap, space, op), tau)


def minmax_normalize(S: list[ScoredCandidate]) -> list[ScoredCandidate]:
    if not S:
        raise ValueError("cannot normalize an empty candidate set")
    w = [c.theta.rpc_window_pages for c in S]
    r = [c.theta.rpcs_in_flight for c in S]

    def norm(v: float, lo: float, hi: float) -> float:
        return 0.0 if hi == lo else (v - lo) / (hi - lo)

    wl, wh, rl, rh = min(w), max(w), min(r), max(r)
    return [replace(c, theta_norm=(norm(c.theta.rpc_window_pages, wl, wh),
                                   norm(c.theta.rpcs_in_flight, rl, rh))) for c in S]


def write_score(c: ScoredCandidate, beta: float) -> float:
    n1, n2 = c.theta_norm
    return c.p * (1 + beta * (n1 + n2))


def read_score(c: ScoredCandidate, alpha: float) -> float:
    n1, n2 = c.theta_norm
    return c.p * (1 + alpha * n1) + n2


def score_all(S: list[ScoredCandidate], op: Op, params: TunerParams) -> list[ScoredCandidate]:
    S = minmax_normalize(S)
    if op is Op.WRITE:
        return [replace(c, score=write_score(c, params.beta)) for c in S]
    return [replace(c, score=read_score(c, params.alpha)) for c in S]


def pick(scored: list[ScoredCandidate]) -> ScoredCandidate:
    # ties prefer the larger window, then the larger in-flight cap
    return max(scored, key=lambda c: (c.score, c.theta.rpc_window_pages, c.theta.rpcs_in_flight))


def tune_from_probabilities(probs: Sequence[tuple[Configuration, float]], op: Op,
                            current: Configuration, params: TunerParams) -> Configuration:
    S = threshold(probs, params.tau)
    if not S:
        return current
    return pick(score_all(S, op, params)).theta


def tune(model: ProbabilityModel, snap: MetricSnapshot,
         space: Sequence[Configuration] | ConfigSpace, current: Configuration,
         params: TunerParams = TunerParams(), op: Optional[Op] = None) -> Configuration:
    """Pick the next configuration; returns ``current`` when no candidate clears tau."""
    op = select_op_type(snap) if op is None else op
    return tune_from_probabilities(candidate_probabilities(model, snap, space, op), op,
                                   current, params)


def explain(model: ProbabilityModel, snap: MetricSnapshot,
            space: Sequence[Configuration] | ConfigSpace, current: Configuration,
            params: TunerParams = TunerParams(), op: Optional[Op] = None) -> str:
    """CSV of every candidate: probability, membership in S, norms, score, choice."""
    op = select_op_type(snap) if op is None else op
    probs = candidate_probabilities(model, snap, space, op)
    S = threshold(probs, params.tau)
    scored = {c.theta: c for c in (score_all(S, op, params) if S else [])}
    chosen = pick(list(scored.values())).theta if scored else current
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["op", "window", "inflight", "p", "in_set", "window_norm", "inflight_norm",
                  "score", "chosen"])
    for theta, p in probs:
        c = scored.get(theta)
        out.writerow([op.value, theta.rpc_window_pages, theta.rpcs_in_flight, repr(p),
                      int(c is not None),
                      "" if c is None else repr(c.theta_norm[0]),
                      "" if c is None else repr(c.theta_norm[1]),
                      "" if c is None else repr(c.score),
                      int(theta == chosen)])
    return buf.getvalue()
