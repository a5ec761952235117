"""Deterministic discrete-event model of the client-side PFS data path.

Requests enter at the client (LLITE), are split across per-OST OSC
interfaces by the file's striping map, aggregated into RPCs inside each OSC
and sent through a per-client network link to FIFO OST servers.

Write pages sit in the OSC dirty cache until their extent is triggered (full,
aged past ``age_timeout``, or cache pressure).  RPCs are formed lazily when an
in-flight slot frees up, so a triggered extent keeps absorbing rewrites and
new pages until the moment it is sent.  Pages held by in-flight write RPCs
still count against ``max_dirty_pages``.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import marshal
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from dial.config import PAGE_SIZE, Configuration, Op, Scenario

_READ, _WRITE = 0, 1
_OPS = (Op.READ, Op.WRITE)


class SimError(ValueError):
    """Rejected simulator input."""


@dataclass
class IoRequest:
    op: Op
    file_id: int
    offset: int
    length: int
    submit_time: float = 0.0

    def validate(self) -> None:
        if self.length <= 0:
            raise SimError("zero-length request")
        if self.offset < 0:
            raise SimError("negative offset")


@dataclass
class Rpc:
    rpc_id: int
    osc_id: tuple[int, int]
    op: Op
    page_count: int
    window: int
    created_time: float
    file_id: int = -1
    pages: list[int] = field(default_factory=list, repr=False)
    readahead_pages: int = 0
    dispatched_time: Optional[float] = None
    completed_time: Optional[float] = None

    @property
    def nbytes(self) -> int:
        return self.page_count * PAGE_SIZE


class _Extent:
    __slots__ = ("pages", "first", "ra")

    def __init__(self, first: float):
        self.pages: set[int] = set()
        self.first = first
        self.ra = 0


class _Io:
    __slots__ = ("rid", "client", "req", "remaining", "ready_at", "callback")

    def __init__(self, rid, client, req, remaining, ready_at, callback):
        self.rid = rid
        self.client = client
        self.req = req
        self.remaining = remaining
        self.ready_at = ready_at
        self.callback = callback


@dataclass
class FileLayout:
    size: int
    osts: tuple[int, ...]
    stripe_pages: int

    @property
    def object_pages(self) -> int:
        # pages per object, rounded up to whole stripes
        stripes = math.ceil(self.size / (self.stripe_pages * PAGE_SIZE))
        return math.ceil(stripes / len(self.osts)) * self.stripe_pages

    def chunks(self, first_page: int, end_page: int):
        """Yield (ost, object_start, object_end) runs covering file pages."""
        sp = self.stripe_pages
        k = len(self.osts)
        p = first_page
        while p < end_page:
            s = p // sp
            q = min(end_page, (s + 1) * sp)
            obj = (s // k) * sp + p % sp
            yield self.osts[s % k], obj, obj + (q - p)
            p = q


class Ost:
    """FIFO server; the only point where clients contend."""

    def __init__(self, ost_id: int, disk_bandwidth: float, per_rpc_overhead: float):
        self.ost_id = ost_id
        self.disk_bandwidth = disk_bandwidth
        self.per_rpc_overhead = per_rpc_overhead
        self.busy_until = 0.0
        self.served = 0

    def serve(self, arrival: float, nbytes: int) -> float:
        start = max(self.busy_until, arrival)
        self.busy_until = start + self.per_rpc_overhead + nbytes / self.disk_bandwidth
        self.served += 1
        return self.busy_until


class Link:
    """Per-client NIC shared equally among concurrent transfers."""

    def __init__(self, bandwidth: float, base_latency: float):
        self.bandwidth = bandwidth
        self.base_latency = base_latency
        self._active: list[float] = []

    def transfer(self, now: float, nbytes: int) -> float:
        active = self._active
        while active and active[0] <= now:
            heapq.heappop(active)
        share = self.bandwidth / (len(active) + 1)
        end = now + nbytes / share + self.base_latency
        heapq.heappush(active, end)
        return end


class Osc:
    """Client-side interface to one OST: dirty cache, readahead, RPC channels."""

    def __init__(self, sim: "Simulator", client_id: int, ost_id: int, config: Configuration):
        sc = sim.scenario
        self.sim = sim
        self.client_id = client_id
        self.ost_id = ost_id
        self.osc_id = (client_id, ost_id)
        self.config = config
        self.max_dirty_pages = sc.max_dirty_pages
        self.high_watermark = sc.high_watermark_pages
        self.age_timeout = sc.age_timeout
        self.readahead_pages = sc.readahead_pages

        self.open_ext: OrderedDict[tuple[int, int], _Extent] = OrderedDict()
        self.ready_ext: OrderedDict[tuple[int, int], _Extent] = OrderedDict()
        self.dirty_pages = 0  # pages in open or ready extents
        self.built_write_pages = 0
        self.inflight_write_pages = 0
        self.blocked: deque = deque()

        self.read_demand: OrderedDict[tuple[int, int], _Extent] = OrderedDict()
        self.read_ahead: OrderedDict[tuple[int, int], _Extent] = OrderedDict()
        self.read_wait: dict[tuple[int, int], list] = {}
        self.ra_buffer: OrderedDict[tuple[int, int], None] = OrderedDict()
        self.ra_inflight_pages = 0
        self.ra_state: dict[int, list[int]] = {}

        self.built: deque[Rpc] = deque()
        self.inflight: dict[int, Rpc] = {}
        self._age_timer: Optional[float] = None

        # raw counters, indexed [read, write]
        self.rpc_count = [0, 0]
        self.page_count = [0, 0]
        self.rpc_latency_sum = [0.0, 0.0]
        self.bytes_transferred = [0, 0]
        self.inflight_now = [0, 0]
        self.inflight_integral = [0.0, 0.0]
        self._tick_time = 0.0
        self.cache_absorbed_bytes = 0
        self.llite_bytes = [0, 0]
        self.completions: deque = deque()
        self.max_inflight_seen = 0

    # -- bookkeeping -------------------------------------------------------
    @property
    def occupancy(self) -> int:
        return self.dirty_pages + self.built_write_pages + self.inflight_write_pages

    def _tick(self, now: float) -> None:
        dt = now - self._tick_time
        if dt > 0:
            self.inflight_integral[0] += self.inflight_now[0] * dt
            self.inflight_integral[1] += self.inflight_now[1] * dt
            self._tick_time = now

    def inflight_integral_at(self, now: float) -> tuple[float, float]:
        dt = max(0.0, now - self._tick_time)
        return (
            self.inflight_integral[0] + self.inflight_now[0] * dt,
            self.inflight_integral[1] + self.inflight_now[1] * dt,
        )

    # -- write path --------------------------------------------------------
    def write(self, io: _Io, f: int, a: int, b: int, now: float) -> None:
        if self.blocked:
            self.blocked.append([io, f, a, b])
        else:
            stop = self._write_chunk(io, f, a, b, now)
            if stop < b:
                self.blocked.append([io, f, stop, b])
        if len(self.inflight) < self.config.rpcs_in_flight:
            self.dispatch(now)
        if self._age_timer is None:
            self._arm_age_timer()

    def _write_chunk(self, io: _Io, f: int, a: int, b: int, now: float) -> int:
        """Accept pages [a, b) of object ``f``; return the first page not accepted."""
        W = self.config.rpc_window_pages
        cap = self.max_dirty_pages
        accepted = absorbed = 0
        p = a
        stop = b
        while p < b:
            e = p // W
            q = min(b, (e + 1) * W)
            key = (f, e)
            ext = self.open_ext.get(key)
            is_open = ext is not None
            if ext is None:
                ext = self.ready_ext.get(key)
            free = cap - self.dirty_pages - self.built_write_pages - self.inflight_write_pages
            if ext is None:
                n = min(q - p, max(free, 0))
                if n:
                    ext = _Extent(now)
                    ext.pages.update(range(p, p + n))
                    self.open_ext[key] = ext
                    is_open = True
                    self.dirty_pages += n
                    accepted += n
                if p + n < q:
                    stop = p + n
            else:
                pages = ext.pages
                span = range(p, q)
                fresh = [page for page in span if page not in pages]
                if len(fresh) <= free:
                    pages.update(fresh)
                    self.dirty_pages += len(fresh)
                    accepted += len(fresh)
                    absorbed += (q - p) - len(fresh)
                else:
                    # cache fills part way through this run
                    stop = fresh[max(free, 0)]
                    take = fresh[:max(free, 0)]
                    pages.update(take)
                    self.dirty_pages += len(take)
                    accepted += len(take)
                    absorbed += (stop - p) - len(take)
            if is_open and len(ext.pages) >= W:
                del self.open_ext[key]
                self.ready_ext[key] = ext
            if stop < b:
                break
            p = q
        total = accepted + absorbed
        if total:
            self.llite_bytes[_WRITE] += total * PAGE_SIZE
            self.cache_absorbed_bytes += absorbed * PAGE_SIZE
            self.sim._pages_done(io, total)
        return stop

    def _resume_blocked(self, now: float) -> None:
        while self.blocked and self.occupancy < self.max_dirty_pages:
            item = self.blocked[0]
            io, f, a, b = item
            stop = self._write_chunk(io, f, a, b, now)
            if stop < b:
                item[2] = stop
                break
            self.blocked.popleft()

    def _arm_age_timer(self) -> None:
        if self._age_timer is None and self.open_ext:
            oldest = next(iter(self.open_ext.values()))
            t = max(self.sim.clock, oldest.first + self.age_timeout)
            self._age_timer = t
            self.sim.schedule(t, self._on_age_timer, None)

    def _on_age_timer(self, _arg) -> None:
        self._age_timer = None
        self._promote_aged(self.sim.clock)
        self.dispatch(self.sim.clock)
        self._arm_age_timer()

    def _promote_aged(self, now: float) -> None:
        timeout = self.age_timeout
        open_ext = self.open_ext
        while open_ext:
            key = next(iter(open_ext))
            # same expression as the timer so rounding cannot stall it
            if open_ext[key].first + timeout > now:
                break
            self.ready_ext[key] = open_ext.pop(key)

    # -- read path ---------------------------------------------------------
    def read(self, io: _Io, f: int, a: int, b: int, now: float) -> None:
        W = self.config.rpc_window_pages
        delivered = 0
        buf = self.ra_buffer
        wait = self.read_wait
        for p in range(a, b):
            key = (f, p)
            if key in buf:
                del buf[key]
                delivered += 1
                continue
            waiters = wait.get(key)
            if waiters is not None:
                waiters.append(io)
                ekey = (f, p // W)
                ext = self.read_ahead.pop(ekey, None)
                if ext is not None:
                    _merge_into(self.read_demand, ekey, ext)
                continue
            wait[key] = [io]
            ekey = (f, p // W)
            ext = self.read_demand.get(ekey)
            if ext is None:
                ext = _Extent(now)
                self.read_demand[ekey] = ext
            ext.pages.add(p)
        self._readahead(f, a, b, now)
        if delivered:
            self.llite_bytes[_READ] += delivered * PAGE_SIZE
            self.sim._pages_done(io, delivered)
        self.dispatch(now)

    def _readahead(self, f: int, a: int, b: int, now: float) -> None:
        W = self.config.rpc_window_pages
        e_first, e_last = a // W, (b - 1) // W
        # bound stale prefetched pages left behind by pattern changes
        buf = self.ra_buffer
        while len(buf) > 4 * self.readahead_pages:
            buf.popitem(last=False)
        st = self.ra_state.get(f)
        if st is None or e_first not in (st[0], st[0] + 1):
            # random access: reset the detector, no prefetch
            self.ra_state[f] = [e_last, e_last + 1]
            return
        st[0] = e_last
        st[1] = max(st[1], e_last + 1)
        limit = self.sim.files_object_pages(self.client_id, f)
        while (st[1] * W - b) + W <= self.readahead_pages:
            start = st[1] * W
            if start >= limit:
                break
            ext = _Extent(now)
            for p in range(start, min(start + W, limit)):
                key = (f, p)
                if key in self.ra_buffer or key in self.read_wait:
                    continue
                self.read_wait[key] = []
                ext.pages.add(p)
            if ext.pages:
                ext.ra = len(ext.pages)
                self.ra_inflight_pages += ext.ra
                key = (f, st[1])
                _merge_into(self.read_demand if key in self.read_demand else self.read_ahead,
                            key, ext)
            st[1] += 1

    # -- RPC formation and dispatch ----------------------------------------
    def build_rpcs(self, now: float, limit: Optional[int] = None) -> list[Rpc]:
        """Form RPCs from triggered extents, oldest first.

        Reads (demand, then readahead) precede writes.  Write extents are
        eligible when full, older than the age timeout, or when the dirty
        cache is at or above the high watermark.  With ``limit`` set, at
        most that many RPCs are formed (one per free channel).
        """
        out: list[Rpc] = []

        def room() -> bool:
            return limit is None or len(out) < limit

        for pool in (self.read_demand, self.read_ahead):
            while pool and room():
                out.append(self._make_rpc(Op.READ, *pool.popitem(last=False), now))
        self._promote_aged(now)
        ready = self.ready_ext
        while ready and room():
            out.append(self._make_rpc(Op.WRITE, *ready.popitem(last=False), now))
        open_ext = self.open_ext
        hw = self.high_watermark
        if limit is None:
            while open_ext and self.dirty_pages >= hw:
                out.append(self._make_rpc(Op.WRITE, *open_ext.popitem(last=False), now))
        else:
            while open_ext and room() and self.occupancy >= hw:
                out.append(self._make_rpc(Op.WRITE, *open_ext.popitem(last=False), now))
        self.built.extend(out)
        return out

    def _make_rpc(self, op: Op, key: tuple[int, int], ext: _Extent, now: float) -> Rpc:
        pages = sorted(ext.pages)
        n = len(pages)
        if op is Op.WRITE:
            self.dirty_pages -= n
            self.built_write_pages += n
        sim = self.sim
        sim._rpc_seq += 1
        rpc = Rpc(
            rpc_id=sim._rpc_seq,
            osc_id=self.osc_id,
            op=op,
            page_count=n,
            window=self.config.rpc_window_pages,
            created_time=now,
            file_id=key[0],
            pages=pages,
            readahead_pages=ext.ra,
        )
        if sim._trace is not None:
            sim._emit("build", self.osc_id, op=op.value, pages=n, window=rpc.window)
        return rpc

    def dispatch(self, now: float) -> list[Rpc]:
        cap = self.config.rpcs_in_flight
        free = cap - len(self.inflight)
        if free <= 0:
            return []
        if len(self.built) < free:
            self.build_rpcs(now, limit=free - len(self.built))
        sent = []
        self._tick(now)
        while self.built and len(self.inflight) < cap:
            rpc = self.built.popleft()
            rpc.dispatched_time = now
            self.inflight[rpc.rpc_id] = rpc
            if rpc.op is Op.WRITE:
                self.inflight_now[_WRITE] += 1
                self.built_write_pages -= rpc.page_count
                self.inflight_write_pages += rpc.page_count
            else:
                self.inflight_now[_READ] += 1
            self.sim._send(self, rpc, now)
            sent.append(rpc)
        if len(self.inflight) > self.max_inflight_seen:
            self.max_inflight_seen = len(self.inflight)
        return sent

    def _complete(self, rpc: Rpc) -> None:
        now = self.sim.clock
        self._tick(now)
        del self.inflight[rpc.rpc_id]
        rpc.completed_time = now
        i = _WRITE if rpc.op is Op.WRITE else _READ
        self.inflight_now[i] -= 1
        self.rpc_count[i] += 1
        self.page_count[i] += rpc.page_count
        self.rpc_latency_sum[i] += now - rpc.dispatched_time
        self.bytes_transferred[i] += rpc.nbytes
        self.completions.append((now, i, rpc.nbytes))
        horizon = now - 30.0
        while self.completions and self.completions[0][0] < horizon:
            self.completions.popleft()
        if i == _WRITE:
            self.inflight_write_pages -= rpc.page_count
            self._resume_blocked(now)
        else:
            self._deliver(rpc)
        self.dispatch(now)
        self._arm_age_timer()

    def _deliver(self, rpc: Rpc) -> None:
        f = rpc.file_id
        self.ra_inflight_pages -= rpc.readahead_pages
        wait = self.read_wait
        buf = self.ra_buffer
        per_io: dict[int, list] = {}
        for p in rpc.pages:
            waiters = wait.pop((f, p), None)
            if waiters:
                for io in waiters:
                    slot = per_io.get(io.rid)
                    if slot is None:
                        per_io[io.rid] = [io, 1]
                    else:
                        slot[1] += 1
            else:
                buf[(f, p)] = None
        for io, n in per_io.values():
            self.llite_bytes[_READ] += n * PAGE_SIZE
            self.sim._pages_done(io, n)

    # -- tuning ------------------------------------------------------------
    def set_config(self, theta: Configuration) -> Configuration:
        self.sim.space.validate(theta)
        prev = self.config
        if theta == prev:
            return prev
        now = self.sim.clock
        if theta.rpc_window_pages != prev.rpc_window_pages:
            self._rewindow(prev.rpc_window_pages, theta.rpc_window_pages)
        self.config = theta
        if self.sim._trace is not None:
            self.sim._emit("config", self.osc_id, window=theta.rpc_window_pages,
                           inflight=theta.rpcs_in_flight)
        self.dispatch(now)
        self._arm_age_timer()
        return prev

    def _rewindow(self, old: int, W: int) -> None:
        readied = _rekey(self.ready_ext, W)
        opened: dict[tuple[int, int], _Extent] = {}
        for key, ext in self.open_ext.items():
            pieces = _rekey({key: ext}, W)
            # extents that no longer fit one RPC are flushed at once
            target = readied if len(ext.pages) > W else opened
            for k, piece in pieces.items():
                if k in target:
                    target[k].pages |= piece.pages
                    target[k].first = min(target[k].first, piece.first)
                else:
                    target[k] = piece
        for key in list(opened):
            if key in readied:
                readied[key].pages |= opened.pop(key).pages
            elif len(opened[key].pages) >= W:
                readied[key] = opened.pop(key)
        self.open_ext = OrderedDict(sorted(opened.items(), key=lambda kv: kv[1].first))
        self.ready_ext = readied
        self.read_demand = _rekey(self.read_demand, W)
        self.read_ahead = _rekey(self.read_ahead, W)
        for st in self.ra_state.values():
            st[0] = st[0] * old // W
            st[1] = -(-st[1] * old // W)

    def audit(self) -> None:
        """Raise AssertionError if internal bookkeeping is inconsistent."""
        dirty = sum(len(e.pages) for e in self.open_ext.values())
        dirty += sum(len(e.pages) for e in self.ready_ext.values())
        assert dirty == self.dirty_pages, (dirty, self.dirty_pages)
        built_w = sum(r.page_count for r in self.built if r.op is Op.WRITE)
        assert built_w == self.built_write_pages, (built_w, self.built_write_pages)
        flying_w = sum(r.page_count for r in self.inflight.values() if r.op is Op.WRITE)
        assert flying_w == self.inflight_write_pages, (flying_w, self.inflight_write_pages)
        assert self.occupancy <= self.max_dirty_pages
        pending = set()
        for pool in (self.read_demand, self.read_ahead):
            for (f, _), ext in pool.items():
                pending.update((f, p) for p in ext.pages)
        for rpc in list(self.built) + list(self.inflight.values()):
            if rpc.op is Op.READ:
                pending.update((rpc.file_id, p) for p in rpc.pages)
        missing = set(self.read_wait) - pending
        assert not missing, f"waiting pages with no fetch pending: {sorted(missing)[:5]}"
        assert len(self.inflight) == sum(self.inflight_now)

    def measure_throughput(self, window: float, now: Optional[float] = None) -> dict[Op, float]:
        """Completed-RPC bytes per second, per op type, over the trailing window."""
        if window <= 0:
            raise SimError("window must be positive")
        now = self.sim.clock if now is None else now
        lo = now - window
        total = [0, 0]
        for t, i, nbytes in reversed(self.completions):
            if t <= lo:
                break
            if t <= now:
                total[i] += nbytes
        return {Op.READ: total[_READ] / window, Op.WRITE: total[_WRITE] / window}


def _merge_into(pool: dict, key: tuple[int, int], ext: _Extent) -> None:
    old = pool.get(key)
    if old is None:
        pool[key] = ext
    else:
        old.pages |= ext.pages
        old.ra += ext.ra
        old.first = min(old.first, ext.first)


def _rekey(extents: dict, W: int) -> dict:
    """Re-bucket extents under a new window size, keeping age order."""
    items = sorted(extents.items(), key=lambda kv: kv[1].first)
    out: OrderedDict[tuple[int, int], _Extent] = OrderedDict()
    for (f, _), ext in items:
        ra_left = ext.ra
        for p in sorted(ext.pages):
            key = (f, p // W)
            tgt = out.get(key)
            if tgt is None:
                tgt = out[key] = _Extent(ext.first)
            tgt.pages.add(p)
            if ra_left:
                tgt.ra += 1
                ra_left -= 1
    return out


class Client:
    def __init__(self, sim: "Simulator", client_id: int):
        sc = sim.scenario
        self.client_id = client_id
        self.link = Link(sc.link_bandwidth, sc.base_latency)
        self.oscs = [Osc(sim, client_id, j, sc.default) for j in range(sc.n_osts)]
        self.files: dict[int, FileLayout] = {}
        self.bytes_done = [0, 0]


class Simulator:
    """Event-driven simulator; identical inputs produce identical traces."""

    def __init__(self, scenario: Optional[Scenario] = None, trace: bool = False):
        self.scenario = scenario or Scenario()
        sc = self.scenario
        self.space = sc.space
        self.clock = 0.0
        self._heap: list = []
        self._seq = 0
        self._rpc_seq = 0
        self._io_seq = 0
        self._trace: Optional[list] = [] if trace else None
        self._completed: list = []
        self.osts = [Ost(j, sc.disk_bandwidth, sc.per_rpc_overhead) for j in range(sc.n_osts)]
        self.clients = [Client(self, i) for i in range(sc.n_clients)]
        self.bytes_submitted = [0, 0]
        self._llite_overhead = sc.llite_request_overhead
        self._copy_bandwidth = sc.llite_copy_bandwidth

    # -- event machinery ---------------------------------------------------
    def schedule(self, t: float, fn: Callable, arg) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, arg))

    def advance(self, until: float) -> list:
        """Process events up to ``until``; return the completions seen."""
        if until < self.clock:
            raise SimError(f"cannot advance backwards ({until} < {self.clock})")
        heap = self._heap
        self._completed = done = []
        while heap and heap[0][0] <= until:
            t, _, fn, arg = heapq.heappop(heap)
            self.clock = t
            fn(arg)
        self.clock = until
        return done

    def _emit(self, kind: str, osc, **fields) -> None:
        # keyword order is fixed per call site, so no sort is needed for determinism
        self._trace.append((self.clock, kind, osc, tuple(fields.items())))

    @property
    def trace(self) -> list:
        return list(self._trace or [])

    def trace_digest(self) -> str:
        # marshal format 2 has no back-references, so equal traces give equal bytes
        return hashlib.sha256(marshal.dumps(self._trace or [], 2)).hexdigest()

    def export_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for t, kind, osc, fields in self._trace or ():
                rec = {"time": t, "kind": kind, "osc": list(osc) if osc else None}
                rec.update(dict(fields))
                fh.write(json.dumps(rec) + "\n")

    # -- topology ----------------------------------------------------------
    def osc(self, client: int, ost: int) -> Osc:
        return self.clients[client].oscs[ost]

    def all_oscs(self) -> list[Osc]:
        return [o for c in self.clients for o in c.oscs]

    def register_file(self, client: int, file_id: int, size: int,
                      osts: Optional[tuple[int, ...]] = None) -> FileLayout:
        if not 0 <= client < len(self.clients):
            raise SimError(f"unknown client {client}")
        if size <= 0:
            raise SimError("file size must be positive")
        sc = self.scenario
        osts = tuple(range(sc.n_osts)) if osts is None else tuple(osts)
        if not osts or any(not 0 <= j < sc.n_osts for j in osts):
            raise SimError(f"bad OST list {osts}")
        layout = FileLayout(size, osts, sc.stripe_size // PAGE_SIZE)
        self.clients[client].files[file_id] = layout
        return layout

    def files_object_pages(self, client: int, file_id: int) -> int:
        return self.clients[client].files[file_id].object_pages

    def set_config(self, client: int, ost: int, theta: Configuration) -> Configuration:
        return self.osc(client, ost).set_config(theta)

    # -- request ingestion -------------------------------------------------
    def submit_io(self, client: int, req: IoRequest,
                  callback: Optional[Callable[[IoRequest, float], None]] = None) -> int:
        """Route a request down to the OSCs; ``callback`` fires on completion."""
        offset, length = req.offset, req.length
        if length <= 0 or offset < 0:
            req.validate()
        if not 0 <= client < len(self.clients):
            raise SimError(f"unknown client {client}")
        cl = self.clients[client]
        layout = cl.files.get(req.file_id)
        if layout is None:
            raise SimError(f"unknown file {req.file_id} on client {client}")
        now = self.clock
        first = offset // PAGE_SIZE
        end = -(-(offset + length) // PAGE_SIZE)
        cost = self._llite_overhead + length / self._copy_bandwidth
        self._io_seq += 1
        io = _Io(self._io_seq, client, req, end - first, now + cost, callback)
        i = _WRITE if req.op is Op.WRITE else _READ
        self.bytes_submitted[i] += length
        if self._trace is not None:
            # per-request events skip the keyword packing in _emit
            self._trace.append((now, "submit", (client, -1),
                                (("op", req.op.value), ("file", req.file_id),
                                 ("offset", offset), ("length", length))))
        sp = layout.stripe_pages
        s = first // sp
        if end <= (s + 1) * sp:
            # common case: the request stays inside one stripe unit
            k = len(layout.osts)
            obj = (s // k) * sp + first % sp
            runs = ((layout.osts[s % k], obj, obj + end - first),)
        else:
            runs = layout.chunks(first, end)
        for ost, a, b in runs:
            osc = cl.oscs[ost]
            if i == _WRITE:
                osc.write(io, req.file_id, a, b, now)
            else:
                osc.read(io, req.file_id, a, b, now)
        return io.rid

    def _pages_done(self, io: _Io, n: int) -> None:
        io.remaining -= n
        if io.remaining == 0:
            self.schedule(max(self.clock, io.ready_at), self._finish_io, io)

    def _finish_io(self, io: _Io) -> None:
        req = io.req
        i = _WRITE if req.op is Op.WRITE else _READ
        self.clients[io.client].bytes_done[i] += req.length
        self._completed.append((self.clock, "io", io.rid))
        if self._trace is not None:
            self._trace.append((self.clock, "io_done", (io.client, -1), (("rid", io.rid),)))
        if io.callback is not None:
            io.callback(req, self.clock)

    # -- network and server ------------------------------------------------
    def _send(self, osc: Osc, rpc: Rpc, now: float) -> None:
        link = self.clients[osc.client_id].link
        if self._trace is not None:
            self._emit("dispatch", osc.osc_id, rpc=rpc.rpc_id, op=rpc.op.value,
                       pages=rpc.page_count, inflight=len(osc.inflight))
        if rpc.op is Op.WRITE:
            arrival = link.transfer(now, rpc.nbytes)
        else:
            arrival = now + link.base_latency
        self.schedule(arrival, self._arrive_ost, (osc, rpc))

    def _arrive_ost(self, arg) -> None:
        osc, rpc = arg
        ost = self.osts[osc.ost_id]
        done = ost.serve(self.clock, rpc.nbytes)
        self.schedule(done, self._ost_done, arg)

    def _ost_done(self, arg) -> None:
        osc, rpc = arg
        if rpc.op is Op.WRITE:
            back = self.clock + self.clients[osc.client_id].link.base_latency
        else:
            back = self.clients[osc.client_id].link.transfer(self.clock, rpc.nbytes)
        self.schedule(back, self._rpc_done, arg)

    def _rpc_done(self, arg) -> None:
        osc, rpc = arg
        if self._trace is not None:
            self._emit("complete", osc.osc_id, rpc=rpc.rpc_id, op=rpc.op.value,
                       pages=rpc.page_count)
        self._completed.append((self.clock, "rpc", rpc.rpc_id))
        osc._complete(rpc)
