"""Discrete-event core: clock, event queue, links, topology and metrics.

Nodes do their work at packet arrival time and emit replies after a
single-server FIFO processing delay. Because a node's processing is FIFO,
its emission times are nondecreasing, which keeps every outbound channel
FIFO without an extra completion event per packet.
"""
from __future__ import annotations

import csv
import hashlib
import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Optional

import numpy as np

from .crypto import LinkKey

DEFAULT_LINK_DELAY = 0.010
DEFAULT_QUEUE_CAPACITY = 1000


class Event(NamedTuple):
    time: float
    sequence: int
    target: Any
    action: Callable
    args: tuple


class SimulationError(RuntimeError):
    pass


class Simulator:
    def __init__(self):
        self.now = 0.0
        self._queue: list[Event] = []
        self._seq = 0
        self.dispatched = 0

    def schedule(self, time: float, target, action: Callable, *args) -> None:
        if time < self.now:
            raise SimulationError(f"cannot schedule at {time} before now={self.now}")
        self._seq += 1
        heapq.heappush(self._queue, Event(time, self._seq, target, action, args))

    def run(self, until: float = math.inf) -> None:
        q = self._queue
        pop = heapq.heappop
        n = 0
        while q and q[0].time <= until:
            ev = pop(q)
            self.now = ev.time
            ev.action(*ev.args)
            n += 1
        self.dispatched += n
        if until != math.inf:
            self.now = max(self.now, until)

    def pending(self) -> int:
        return len(self._queue)


class Channel:
    """One direction of a link: FIFO with optional per-packet service rate.

    ``rate`` is in packets per second (``None`` means no serialization
    delay). At most ``capacity`` packets may wait; further ones are dropped.
    """

    __slots__ = ("delay", "rate", "capacity", "busy_until", "_starts",
                 "sent", "dropped", "_last_send")

    def __init__(self, delay: float, rate: Optional[float], capacity: int):
        self.delay = delay
        self.rate = rate
        self.capacity = capacity
        self.busy_until = 0.0
        self._starts: deque[float] = deque()
        self.sent = 0
        self.dropped = 0
        self._last_send = 0.0

    def queue_length(self, at: float) -> int:
        starts = self._starts
        while starts and starts[0] <= at:
            starts.popleft()
        return len(starts)

    def admit(self, at: float) -> Optional[float]:
        """Return the arrival time at the far end, or None if tail-dropped."""
        if at < self._last_send:
            raise SimulationError("channel sends must be time-ordered")
        self._last_send = at
        self.sent += 1
        if self.rate is None:
            return at + self.delay
        if self.queue_length(at) >= self.capacity:
            self.dropped += 1
            return None
        start = at if at > self.busy_until else self.busy_until
        if start > at:
            self._starts.append(start)
        self.busy_until = start + 1.0 / self.rate
        return self.busy_until + self.delay

    @property
    def delivered(self) -> int:
        return self.sent - self.dropped


@dataclass
class Link:
    a: str
    b: str
    delay: float = DEFAULT_LINK_DELAY
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    rate: Optional[float] = None
    key: Optional[LinkKey] = None
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = {
            (self.a, self.b): Channel(self.delay, self.rate, self.queue_capacity),
            (self.b, self.a): Channel(self.delay, self.rate, self.queue_capacity),
        }

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)


@dataclass
class Face:
    face_id: int
    link: Link
    channel: Channel
    peer: "Node"
    peer_face: int

    @property
    def peer_kind(self) -> str:
        return self.peer.kind


class Node:
    kind = "node"

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.faces: dict[int, Face] = {}
        self.sim: Optional[Simulator] = None
        self.metrics: Optional["Metrics"] = None

    def __repr__(self):
        return f"{type(self).__name__}({self.node_id!r})"

    def bind(self, sim: Simulator, metrics: "Metrics") -> None:
        self.sim = sim
        self.metrics = metrics

    def add_face(self, link: Link, peer: "Node", peer_face: int) -> Face:
        face_id = len(self.faces)
        face = Face(face_id, link, link.channels[(self.node_id, peer.node_id)], peer, peer_face)
        self.faces[face_id] = face
        return face

    def count(self, metric: str, amount: float = 1) -> None:
        self.metrics.inc(self.node_id, metric, self.sim.now, amount)

    def sample(self, metric: str, value: float, at: Optional[float] = None) -> None:
        self.metrics.sample(self.node_id, metric, self.sim.now if at is None else at, value)

    def send(self, face_id: int, packet, at: Optional[float] = None) -> bool:
        """Put ``packet`` on a face at time ``at`` (default: now)."""
        face = self.faces[face_id]
        when = self.sim.now if at is None else at
        arrival = face.channel.admit(when)
        if arrival is None:
            self.count("link_queue_drops")
            return False
        self.sim.schedule(arrival, face.peer, face.peer.receive, packet, face.peer_face)
        return True

    def receive(self, packet, face_id: int) -> None:
        raise NotImplementedError


class FifoServer:
    """Single-server FIFO queue with an optional waiting-room bound."""

    __slots__ = ("free_at", "capacity", "_done", "busy_time")

    def __init__(self, capacity: Optional[int] = None):
        self.free_at = 0.0
        self.capacity = capacity
        self._done: deque[float] = deque()
        self.busy_time = 0.0

    def in_system(self, at: float) -> int:
        done = self._done
        while done and done[0] <= at:
            done.popleft()
        return len(done)

    def serve(self, at: float, cost: float) -> Optional[float]:
        """Completion time of a job arriving at ``at``; None if refused."""
        if self.capacity is not None and self.in_system(at) >= self.capacity:
            return None
        start = at if at > self.free_at else self.free_at
        self.free_at = start + cost
        self.busy_time += cost
        if self.capacity is not None:
            self._done.append(self.free_at)
        return self.free_at


class Metrics:
    """Time-bucketed counters and sample sums, keyed by node and metric."""

    def __init__(self, bucket: float = 1.0):
        if bucket <= 0:
            raise ValueError("bucket width must be positive")
        self.bucket = bucket
        self._data: dict[tuple[int, str, str], float] = {}

    def inc(self, node: str, metric: str, t: float, amount: float = 1) -> None:
        key = (int(t // self.bucket), node, metric)
        d = self._data
        d[key] = d.get(key, 0) + amount

    def sample(self, node: str, metric: str, t: float, value: float) -> None:
        b = int(t // self.bucket)
        d = self._data
        k1 = (b, node, metric + "_sum")
        k2 = (b, node, metric + "_count")
        d[k1] = d.get(k1, 0.0) + value
        d[k2] = d.get(k2, 0) + 1

    def report(self, extra_rows: Iterable[tuple[int, str, str, float]] = ()) -> "MetricsReport":
        rows = [(b, n, m, v) for (b, n, m), v in self._data.items()]
        rows.extend(extra_rows)
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        return MetricsReport(self.bucket, rows)


CSV_HEADER = ("time", "node", "metric", "value")


def _fmt(v: float) -> str:
    if isinstance(v, int) or (isinstance(v, float) and v.is_integer() and abs(v) < 2**53):
        return str(int(v))
    return repr(float(v))


@dataclass
class MetricsReport:
    """Long-format metrics: one row per (bucket, node, metric).

    CSV columns are ``time,node,metric,value`` where ``time`` is the bucket
    start in simulated seconds. Delay-like quantities appear as
    ``<metric>_sum`` and ``<metric>_count`` pairs.
    """

    bucket: float
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for b, node, metric, value in self.rows:
            w.writerow((_fmt(b * self.bucket), node, metric, _fmt(value)))
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def _select(self, node, metric, t0, t1):
        for b, n, m, v in self.rows:
            t = b * self.bucket
            if m != metric or t < t0 or t >= t1:
                continue
            if node is not None and n != node and not (callable(node) and node(n)):
                continue
            yield v

    def total(self, metric: str, node=None, t0: float = -math.inf, t1: float = math.inf) -> float:
        """Sum of a counter; ``node`` may be an id, a predicate, or None for all."""
        return sum(self._select(node, metric, t0, t1))

    def mean(self, metric: str, node=None, t0: float = -math.inf, t1: float = math.inf) -> float:
        s = self.total(metric + "_sum", node, t0, t1)
        c = self.total(metric + "_count", node, t0, t1)
        return s / c if c else math.nan

    def series(self, metric: str, node=None) -> list[tuple[float, float]]:
        acc: dict[float, float] = {}
        for b, n, m, v in self.rows:
            if m == metric and (node is None or n == node or (callable(node) and node(n))):
                t = b * self.bucket
                acc[t] = acc.get(t, 0) + v
        return sorted(acc.items())


def node_rng(seed: int, node_id: str) -> np.random.Generator:
    """Independent per-node stream: adding nodes never perturbs others."""
    tag = int.from_bytes(hashlib.sha256(node_id.encode()).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), tag]))


@dataclass
class Topology:
    nodes: dict[str, Node] = field(default_factory=dict)
    links: list[Link] = field(default_factory=list)
    # router id -> list of (prefix text, [peer node ids in preference order])
    fibs: dict[str, list[tuple[str, list[str]]]] = field(default_factory=dict)

    def add(self, node: Node) -> Node:
        if node.node_id in self.nodes:
            raise ValueError(f"duplicate node {node.node_id}")
        self.nodes[node.node_id] = node
        return node

    def connect(self, a: str, b: str, delay: float = DEFAULT_LINK_DELAY,
                queue_capacity: int = DEFAULT_QUEUE_CAPACITY, rate: Optional[float] = None,
                key: Optional[LinkKey] = None) -> Link:
        link = Link(a, b, delay, queue_capacity, rate, key)
        na, nb = self.nodes[a], self.nodes[b]
        fa = len(na.faces)
        fb = len(nb.faces)
        na.add_face(link, nb, fb)
        nb.add_face(link, na, fa)
        self.links.append(link)
        return link

    def face_towards(self, node_id: str, peer_id: str) -> int:
        for fid, face in self.nodes[node_id].faces.items():
            if face.peer.node_id == peer_id:
                return fid
        raise KeyError(f"{node_id} has no face towards {peer_id}")

    def of_kind(self, kind: str) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind == kind]


@dataclass
class LinkSpec:
    delay: float = DEFAULT_LINK_DELAY
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    rate: Optional[float] = None


def build_star(n_consumers: int, router_count: int = 1, producer_count: int = 1,
               link_delay: float = DEFAULT_LINK_DELAY, *, make_consumer, make_router,
               make_producer, edge: Optional[LinkSpec] = None,
               core: Optional[LinkSpec] = None, prefix: str = "/p") -> Topology:
    """Consumers -> router chain -> producer(s).

    Consumers hang off the first router; routers form a chain; the last
    router reaches every producer, and each router's FIB maps ``prefix`` to
    its upstream face(s) in declaration order. With ``producer_count > 1``
    the last router is multi-homed to replicas of the same prefix.
    """
    if n_consumers < 0:
        raise ValueError("n_consumers must be nonnegative")
    if router_count < 1 or producer_count < 1:
        raise ValueError("need at least one router and one producer")
    edge = edge or LinkSpec(delay=link_delay)
    core = core or LinkSpec(delay=link_delay)
    topo = Topology()
    routers = [topo.add(make_router(f"r{i}")) for i in range(router_count)]
    producers = [topo.add(make_producer(f"p{i}")) for i in range(producer_count)]
    for i in range(n_consumers):
        c = topo.add(make_consumer(f"c{i}"))
        topo.connect(c.node_id, routers[0].node_id, edge.delay, edge.queue_capacity, edge.rate)
    for up, down in zip(routers[1:], routers[:-1]):
        topo.connect(down.node_id, up.node_id, core.delay, core.queue_capacity, core.rate)
        topo.fibs.setdefault(down.node_id, []).append((prefix, [up.node_id]))
    last = routers[-1]
    for p in producers:
        topo.connect(last.node_id, p.node_id, core.delay, core.queue_capacity, core.rate)
    topo.fibs.setdefault(last.node_id, []).append((prefix, [p.node_id for p in producers]))
    return topo


def build_multipath(n_consumers: int, n_paths: int, link_delay: float = DEFAULT_LINK_DELAY, *,
                    make_consumer, make_router, make_producer, prefix: str = "/p",
                    routed_paths: Optional[Iterable[int]] = None) -> Topology:
    """Edge router ``r0`` with ``n_paths`` upstream routers ``u0..``, all reaching ``p0``.

    Upstream routers listed in ``routed_paths`` (default: all) carry a FIB
    entry for ``prefix``; the others answer with NO_ROUTE fNACKs.
    """
    topo = Topology()
    edge = topo.add(make_router("r0"))
    ups = [topo.add(make_router(f"u{i}")) for i in range(n_paths)]
    prod = topo.add(make_producer("p0"))
    for i in range(n_consumers):
        c = topo.add(make_consumer(f"c{i}"))
        topo.connect(c.node_id, edge.node_id, link_delay)
    routed = set(range(n_paths) if routed_paths is None else routed_paths)
    for i, u in enumerate(ups):
        topo.connect(edge.node_id, u.node_id, link_delay)
        topo.connect(u.node_id, prod.node_id, link_delay)
        if i in routed:
            topo.fibs.setdefault(u.node_id, []).append((prefix, [prod.node_id]))
    topo.fibs[edge.node_id] = [(prefix, [u.node_id for u in ups])]
    return topo


@dataclass(frozen=True)
class AdminEvent:
    time: float
    action: str
    kind: str


def schedule_population_growth(add_kind: str, per_second: float, stop_at: float,
                               start_at: float = 0.0) -> list[AdminEvent]:
    """Admin events attaching ``per_second`` consumers of ``add_kind`` each second.

    Additions happen at ``start_at + j / per_second`` for j = 1, 2, ... up to
    and including ``stop_at``, i.e. ``per_second * (stop_at - start_at)``
    consumers in total.
    """
    if per_second <= 0:
        raise ValueError("per_second must be positive")
    total = int(round(per_second * (stop_at - start_at)))
    return [AdminEvent(start_at + (j + 1) / per_second, "add_consumer", add_kind)
            for j in range(max(total, 0))]
