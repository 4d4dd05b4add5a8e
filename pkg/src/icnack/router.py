"""Forwarding engine: CS, PIT and FIB processing with NACK handling."""
from __future__ import annotations

import enum
import heapq
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Optional

from .bloom import BloomFilter
from .crypto import (
    DEFAULT_CNACK_WINDOW,
    DEFAULT_FNACK_WINDOW,
    ScnResult,
    TimeWindow,
    accept_content,
    check_cnack_times,
    mac_fnack,
    verify_fnack,
    verify_scn,
)
from .engine import FifoServer, Node
from .packets import (
    ContentObject,
    ContentType,
    FNack,
    Interest,
    NackReason,
    Name,
    NameTrie,
    digest,
    parse_name,
)


class Strategy(enum.Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


class FaceState(enum.Enum):
    UNSENT = "unsent"
    AWAITING = "awaiting"
    TIMED_OUT = "timed_out"
    FNACKED = "fnacked"


class UpstreamEvent(enum.Enum):
    FNACK = "fnack"
    TIMEOUT = "timeout"


class Action(enum.Enum):
    TRY_NEXT = "try_next"
    FORWARD_FNACK_DOWN = "forward_fnack_down"
    FLUSH_SILENT = "flush_silent"
    WAIT = "wait"


@dataclass
class FibEntry:
    prefix: Name
    upstream_faces: list[int]

    def __post_init__(self):
        if not self.upstream_faces:
            raise ValueError("FIB entry needs at least one upstream face")


@dataclass
class PitEntry:
    name: Name
    interest: Interest
    downstream_faces: dict[int, None]  # insertion-ordered set
    strategy: Strategy
    upstream_order: list[int]
    upstream_state: dict[int, FaceState]
    per_face_deadline: dict[int, float] = field(default_factory=dict)
    entry_expiry: float = math.inf
    created: float = 0.0
    token: int = 0
    last_reason: NackReason = NackReason.NO_ROUTE
    flushed: bool = False

    def awaiting(self) -> list[int]:
        return [f for f, s in self.upstream_state.items() if s is FaceState.AWAITING]


def fnack_decide(entry: PitEntry, face: int, event: UpstreamEvent) -> tuple[Action, Optional[int]]:
    """Advance the per-face state machine of a pending interest.

    Marks ``face`` FNACKED or TIMED_OUT and returns what the router should do
    next, plus the face to try for TRY_NEXT. A downstream fNACK is warranted
    only when every upstream face has fNACKed: a timeout does not prove the
    producer unreachable.
    """
    state = entry.upstream_state
    if state.get(face) is not FaceState.AWAITING:
        return Action.WAIT, None
    state[face] = FaceState.FNACKED if event is UpstreamEvent.FNACK else FaceState.TIMED_OUT
    if entry.strategy is Strategy.SEQUENTIAL:
        for f in entry.upstream_order:
            if state[f] is FaceState.UNSENT:
                return Action.TRY_NEXT, f
    if any(s is FaceState.UNSENT or s is FaceState.AWAITING for s in state.values()):
        return Action.WAIT, None
    if all(s is FaceState.FNACKED for s in state.values()):
        return Action.FORWARD_FNACK_DOWN, None
    return Action.FLUSH_SILENT, None


@dataclass
class CsEntry:
    object: ContentObject
    inserted_at: float
    stale_at: float
    is_blm: bool = False


@dataclass
class RouterConfig:
    strategy: Strategy = Strategy.PARALLEL
    face_timeout: float = 1.0
    cs_capacity: int = 10000
    congestion_threshold: int = 100
    verify_signatures: bool = True
    check_cnack_window: bool = True
    cnack_window: float = DEFAULT_CNACK_WINDOW
    fnack_window: float = DEFAULT_FNACK_WINDOW
    bloom_screening: bool = True
    proc_cost: float = 0.0
    hmac_cost: float = 0.0
    verify_cost: float = 0.0
    tick: float = 0.001


class Router(Node):
    kind = "router"

    def __init__(self, node_id: str, config: Optional[RouterConfig] = None, keys=None):
        super().__init__(node_id)
        self.config = config or RouterConfig()
        self.keys = keys  # KeyRegistry, for link secrets
        self.fib = NameTrie()
        self.pit: dict[Name, PitEntry] = {}
        self.cs: OrderedDict[Name, CsEntry] = OrderedDict()
        self._cs_index = NameTrie()
        self.filters: dict[Name, tuple[BloomFilter, float]] = {}
        self.cpu = FifoServer()
        self._face_deadlines: deque = deque()
        self._expiry_heap: list = []
        self._cs_heap: list = []
        self._sweep_at = math.inf
        self._token = 0
        self.verifications = 0
        self.cnack_window = TimeWindow(self.config.cnack_window)
        self.fnack_window = TimeWindow(self.config.fnack_window)

    # ------------------------------------------------------------------ setup
    def add_route(self, prefix, faces: list[int]) -> None:
        if isinstance(prefix, str):
            prefix = parse_name(prefix)
        self.fib[prefix] = FibEntry(prefix, list(faces))

    def link_key(self, face_id: int):
        face = self.faces[face_id]
        if face.link.key is not None:
            return face.link.key
        return self.keys.link_key(*face.link.endpoints)

    # --------------------------------------------------------------- plumbing
    def receive(self, packet, face_id: int) -> None:
        now = self.sim.now
        if isinstance(packet, Interest):
            self.on_interest(packet, face_id, now)
        elif isinstance(packet, ContentObject):
            self.on_content(packet, face_id, now)
        elif isinstance(packet, FNack):
            self.on_fnack(packet, face_id, now)
        else:
            self.count("malformed_drops")

    def _process(self, now: float, cost: float) -> float:
        if cost <= 0 and self.cpu.free_at <= now:
            return now
        return self.cpu.serve(now, cost)

    def _emit(self, out: list, at: float) -> None:
        for face_id, packet in out:
            self.send(face_id, packet, at)

    def _arm(self, t: float) -> None:
        if t < self._sweep_at:
            self._sweep_at = t
            self.sim.schedule(t, self, self._sweep, t)

    def _sweep(self, t: float) -> None:
        if t != self._sweep_at:
            return
        self._sweep_at = math.inf
        now = self.sim.now
        self.expire_tables(now)
        nxt = self._next_deadline()
        if nxt is not None:
            self._arm(max(nxt, now + self.config.tick))

    def _next_deadline(self) -> Optional[float]:
        cands = []
        if self._face_deadlines:
            cands.append(self._face_deadlines[0][0])
        if self._expiry_heap:
            cands.append(self._expiry_heap[0][0])
        return min(cands) if cands else None

    # --------------------------------------------------------------- interest
    def on_interest(self, interest: Interest, in_face: int, now: float) -> None:
        cfg = self.config
        self.count("interests_in")
        name = interest.name
        out: list = []
        cost = cfg.proc_cost

        hit = self._cs_lookup(interest, now)
        if hit is not None:
            self.count("cs_hits")
            if hit.content_type == ContentType.CNACK:
                self.count("cnacks_served")
            self._emit([(in_face, hit)], self._process(now, cost))
            return

        entry = self.pit.get(name)
        if entry is not None:
            entry.downstream_faces[in_face] = None
            self.count("collapses")
            self._process(now, cost)
            return

        fib_hit = self.fib.longest_prefix(name)
        if cfg.bloom_screening and self.filters and self._screened_out(name, now):
            self.count("screening_drops")
            self._process(now, cost)
            return

        if fib_hit is None:
            fn = self._make_fnack(name, NackReason.NO_ROUTE, in_face, now)
            cost += cfg.hmac_cost
            self.count("fnacks_generated")
            self._emit([(in_face, fn)], self._process(now, cost))
            return

        faces = fib_hit[1].upstream_faces
        congested = [f for f in faces if self._congested(f, now)]
        if len(congested) == len(faces):
            fn = self._make_fnack(name, NackReason.CONGESTION, in_face, now)
            cost += cfg.hmac_cost
            self.count("fnacks_generated")
            self.count("fnacks_congestion")
            self._emit([(in_face, fn)], self._process(now, cost))
            return

        self._token += 1
        state = {f: FaceState.UNSENT for f in faces}
        for f in congested:
            state[f] = FaceState.FNACKED  # local congestion counts as an fNACK
        entry = PitEntry(
            name=name,
            interest=interest,
            downstream_faces={in_face: None},
            strategy=cfg.strategy,
            upstream_order=list(faces),
            upstream_state=state,
            entry_expiry=now + interest.lifetime / 1000.0,
            created=now,
            token=self._token,
            last_reason=NackReason.CONGESTION if congested else NackReason.NO_ROUTE,
        )
        self.pit[name] = entry
        targets = [f for f in faces if state[f] is FaceState.UNSENT]
        if cfg.strategy is Strategy.SEQUENTIAL:
            targets = targets[:1]
        done = self._process(now, cost)
        for f in targets:
            self._dispatch(entry, f, done)
        self.sample("forwarding_delay", done - now, at=now)
        heapq.heappush(self._expiry_heap, (entry.entry_expiry, entry.token, name))
        self._arm(entry.entry_expiry)

    def _dispatch(self, entry: PitEntry, face: int, at: float) -> None:
        entry.upstream_state[face] = FaceState.AWAITING
        deadline = at + self.config.face_timeout
        entry.per_face_deadline[face] = deadline
        self._face_deadlines.append((deadline, entry.token, entry.name, face))
        self.count("interests_out")
        self.send(face, entry.interest, at)
        self._arm(deadline)

    def _congested(self, face_id: int, now: float) -> bool:
        ch = self.faces[face_id].channel
        return ch.rate is not None and ch.queue_length(now) >= self.config.congestion_threshold

    def _cs_lookup(self, interest: Interest, now: float) -> Optional[ContentObject]:
        entry = self.cs.get(interest.name)
        if entry is None and self._cs_index:
            found = self._cs_index.first_under(interest.name)
            entry = None if found is None else found[1]
        if entry is None:
            return None
        if entry.stale_at <= now:
            self._cs_evict(entry.object.name)
            return None
        if entry.is_blm:
            return None
        obj = entry.object
        if interest.scn_hash is not None:
            if verify_scn(interest, obj) is not ScnResult.SCN_MATCH and not (
                obj.content_type == ContentType.CNACK
                and interest.key_digest == digest(obj.producer_key)
            ):
                return None
        elif interest.key_digest is not None and digest(obj.producer_key) != interest.key_digest:
            return None
        self.cs.move_to_end(obj.name)
        return obj

    def _screened_out(self, name: Name, now: float) -> bool:
        for depth in range(len(name.components), 0, -1):
            held = self.filters.get(Name(name.components[:depth]))
            if held is None:
                continue
            flt, stale_at = held
            if stale_at <= now:
                del self.filters[flt.scope]
                return False
            return not flt.query(name)
        return False

    # ---------------------------------------------------------------- content
    def _matching_entries(self, name: Name) -> list[PitEntry]:
        comps = name.components
        found = []
        exact = self.pit.get(name.without_digest())
        if exact is not None:
            found.append(exact)
        for depth in range(len(comps) - 1, 0, -1):
            e = self.pit.get(Name(comps[:depth]))
            if e is not None:
                found.append(e)
        return found

    def on_content(self, obj: ContentObject, in_face: int, now: float) -> None:
        cfg = self.config
        entries = self._matching_entries(obj.name) if self.pit else []
        if not entries:
            self.count("unsolicited_drops")
            self._process(now, cfg.proc_cost)
            return
        cost = cfg.proc_cost
        accepted = []
        checked = False
        for entry in entries:
            if not cfg.verify_signatures:
                accepted.append(entry)
                continue
            ok, sig = accept_content(entry.interest, obj)
            if sig and not checked:
                checked = True
                self.verifications += 1
                self.count("signature_verifications")
                cost += cfg.verify_cost
            if ok and obj.content_type == ContentType.CNACK and cfg.check_cnack_window:
                ok = check_cnack_times(obj, now, self.cnack_window)
                if not ok:
                    self.count("cnack_replays_rejected")
            if ok:
                accepted.append(entry)
        done = self._process(now, cost)
        if not accepted:
            self.count("poisoned_drops")
            return

        is_blm = obj.content_type == ContentType.BLM_FLTR
        out = []
        for entry in accepted:
            for f in entry.downstream_faces:
                if is_blm and self.faces[f].peer_kind == "consumer":
                    self.count("blm_withheld")
                    continue
                out.append((f, obj))
            self._flush(entry)
        self.count("content_forwarded", len(out))
        if obj.content_type == ContentType.CNACK:
            self.count("cnacks_forwarded", len(out))
        self._emit(out, done)
        self._cs_insert(obj, now)
        if is_blm:
            self._install_filter(obj, now)

    def _flush(self, entry: PitEntry) -> None:
        if entry.flushed:
            raise AssertionError(f"PIT entry {entry.name} flushed twice")
        entry.flushed = True
        del self.pit[entry.name]
        self.count("pit_flushes")

    def _cs_insert(self, obj: ContentObject, now: float) -> None:
        if self.config.cs_capacity <= 0:
            return
        stale_at = now + obj.freshness
        if obj.expiration is not None:
            stale_at = min(stale_at, obj.expiration)
        if stale_at <= now:
            return
        is_blm = obj.content_type == ContentType.BLM_FLTR
        name = obj.name
        if name in self.cs:
            self.cs.move_to_end(name)
        elif len(self.cs) >= self.config.cs_capacity:
            old, _ = self.cs.popitem(last=False)
            self._cs_index.pop(old)
        self.cs[name] = CsEntry(obj, now, stale_at, is_blm)
        self._cs_index[name] = self.cs[name]
        self._token += 1
        heapq.heappush(self._cs_heap, (stale_at, self._token, name))
        if obj.content_type == ContentType.CNACK:
            self.count("cnacks_cached")

    def _cs_evict(self, name: Name) -> None:
        if self.cs.pop(name, None) is not None:
            self._cs_index.pop(name)
            self.count("cs_evictions")

    def _install_filter(self, obj: ContentObject, now: float) -> None:
        try:
            flt = BloomFilter.from_payload(obj.payload)
        except Exception:
            self.count("malformed_drops")
            return
        self.filters[flt.scope] = (flt, now + obj.freshness)
        self.count("filters_installed")

    # ------------------------------------------------------------------ fNACK
    def _make_fnack(self, name: Name, reason: NackReason, face: int, now: float) -> FNack:
        return mac_fnack(FNack(name, reason, now), self.link_key(face))

    def on_fnack(self, fnack: FNack, in_face: int, now: float) -> None:
        cfg = self.config
        cost = cfg.proc_cost + cfg.hmac_cost
        if not verify_fnack(fnack, self.link_key(in_face), now, self.fnack_window):
            self.count("fnacks_rejected")
            self._process(now, cost)
            return
        entry = self.pit.get(fnack.name)
        if entry is None:
            self.count("fnacks_unmatched")
            self._process(now, cost)
            return
        entry.last_reason = fnack.reason
        self._apply(entry, in_face, UpstreamEvent.FNACK, now, cost)

    def _apply(self, entry: PitEntry, face: int, event: UpstreamEvent, now: float,
               cost: float) -> Action:
        action, nxt = fnack_decide(entry, face, event)
        if action is Action.TRY_NEXT:
            done = self._process(now, cost + self.config.proc_cost)
            self.count("sequential_retries")
            self._dispatch(entry, nxt, done)
        elif action is Action.FORWARD_FNACK_DOWN:
            downs = list(entry.downstream_faces)
            cost += self.config.hmac_cost * len(downs)
            done = self._process(now, cost)
            out = [(f, self._make_fnack(entry.name, entry.last_reason, f, done)) for f in downs]
            self._flush(entry)
            self.count("fnacks_forwarded", len(out))
            self._emit(out, done)
        elif action is Action.FLUSH_SILENT:
            self._process(now, cost)
            self._flush(entry)
            self.count("silent_flushes")
        else:
            self._process(now, cost)
        return action

    # ----------------------------------------------------------------- timers
    def expire_tables(self, now: float) -> int:
        """Evict stale CS entries, time out upstream faces, expire PIT entries."""
        evicted = 0
        heap = self._cs_heap
        while heap and heap[0][0] <= now:
            stale_at, _, name = heapq.heappop(heap)
            entry = self.cs.get(name)
            if entry is not None and entry.stale_at <= now:
                self._cs_evict(name)
                evicted += 1
        for scope in [s for s, (_, st) in self.filters.items() if st <= now]:
            del self.filters[scope]

        dq = self._face_deadlines
        while dq and dq[0][0] <= now:
            deadline, token, name, face = dq.popleft()
            entry = self.pit.get(name)
            if entry is None or entry.token != token:
                continue
            if entry.upstream_state.get(face) is FaceState.AWAITING:
                self.count("face_timeouts")
                self._apply(entry, face, UpstreamEvent.TIMEOUT, now, 0.0)
                evicted += 1

        eh = self._expiry_heap
        while eh and eh[0][0] <= now:
            _, token, name = heapq.heappop(eh)
            entry = self.pit.get(name)
            if entry is None or entry.token != token:
                continue
            self._flush(entry)
            self.count("pit_expirations")
            evicted += 1
        return evicted
