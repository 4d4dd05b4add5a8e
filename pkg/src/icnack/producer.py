"""Producer node: catalog, DATA service, secure cNACKs, Bloom filters, gateway."""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .bloom import BloomFilter, build_filter, fp_exact, freshness_for, optimal_k
from .crypto import KeyPair, TimeWindow, DEFAULT_CNACK_WINDOW, sign_content
from .engine import FifoServer, Node
from .packets import (
    DEFAULT_MAX_SEGMENT_SIZE,
    ContentObject,
    ContentType,
    Interest,
    Name,
    NameTrie,
    encode,
    is_prefix_of,
    parse_name,
)


class ConfigurationError(ValueError):
    pass


class Catalog:
    """Published names under one registered prefix."""

    def __init__(self, prefix: Name):
        self.prefix = prefix
        self.published = NameTrie()
        self.publish_log: list[float] = []
        self._alphabet: set[str] = set()
        self._depth = 0

    @classmethod
    def from_pattern(cls, prefix: str, count: int, pattern: str = "a/{i}") -> "Catalog":
        cat = cls(parse_name(prefix))
        for i in range(1, count + 1):
            cat.publish(cat.prefix.append(*pattern.format(i=i).split("/")), at=None)
        return cat

    def publish(self, name: Name, at: Optional[float] = 0.0, payload: bytes = b"") -> None:
        if not is_prefix_of(self.prefix, name):
            raise ValueError(f"{name} is outside the catalog prefix {self.prefix}")
        self.published[name] = payload or str(name).encode()
        self._alphabet.update(name.components[-1].decode("utf-8", "replace"))
        self._depth = max(self._depth, len(name))
        if at is not None:
            self.publish_log.append(at)

    def __contains__(self, name: Name) -> bool:
        return name in self.published

    def __len__(self) -> int:
        return len(self.published)

    def names(self) -> list[Name]:
        return sorted((n for n, _ in self.published.items()), key=lambda n: n.components)

    @property
    def depth(self) -> int:
        return self._depth

    @property
    def alphabet(self) -> set[str]:
        return self._alphabet


def default_plausibility(name: Name, catalog: Catalog) -> bool:
    """Plausible = not deeper than the published tree + 1, and the last
    component drawn from the characters the catalog already uses."""
    if len(name) > catalog.depth + 1 or not is_prefix_of(catalog.prefix, name):
        return False
    last = name.components[-1].decode("utf-8", "replace")
    return bool(last) and set(last) <= catalog.alphabet


PLAUSIBILITY = {
    "default": default_plausibility,
    "all": lambda name, catalog: True,
    "none": lambda name, catalog: False,
}


@dataclass
class CnackPolicy:
    interval: float = 1.0
    expiration_horizon: float = 10.0
    window: TimeWindow = field(default_factory=lambda: TimeWindow(DEFAULT_CNACK_WINDOW))
    plausibility: Callable[[Name, Catalog], bool] = default_plausibility
    freshness: float = 10.0

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("cNACK interval must be positive")
        if self.expiration_horizon < self.interval:
            raise ValueError("expiration horizon must be at least one interval")


@dataclass
class ServiceModel:
    sign_cost: float = 0.002
    lookup_cost: float = 0.00005
    queue_capacity: Optional[int] = None

    def __post_init__(self):
        if self.sign_cost < 0 or self.lookup_cost < 0:
            raise ValueError("service costs must be nonnegative")
        self.server = FifoServer(self.queue_capacity)


@dataclass
class BloomConfig:
    trigger: str = "off"  # off | load | periodic | publish
    load_threshold: float = 50.0  # signatures per second
    load_window: float = 1.0
    period: float = 60.0
    min_interval: float = 1.0
    tau: float = 60.0
    m: int = 0  # 0: largest filter fitting one segment
    shard_depth: Optional[int] = 0  # None: smallest depth meeting target_fp
    target_fp: Optional[float] = None
    rotate: float = 0.0  # reseed period, 0 = never
    max_segment_size: int = DEFAULT_MAX_SEGMENT_SIZE


class Verdict(enum.Enum):
    DATA = "data"
    CNACK = "cnack"
    BLM = "blm"
    SILENCE = "silence"


class Queue(enum.Enum):
    REPO_QUEUE = "repo"
    NACK_QUEUE = "nack"


def gateway_dispatch(interest: Interest, snapshot) -> Queue:
    return Queue.REPO_QUEUE if interest.name in snapshot else Queue.NACK_QUEUE


def filter_bits_for_segment(name: Name, scope: Name, key: KeyPair,
                            max_segment_size: int = DEFAULT_MAX_SEGMENT_SIZE) -> int:
    """Largest m whose BLM-FLTR object for ``name`` fits one segment."""
    probe = sign_content(
        ContentObject(name, b"", ContentType.BLM_FLTR, freshness=0.0, timestamp=0.0), key
    )
    room = max_segment_size - len(encode(probe)) - BloomFilter.payload_overhead(scope)
    if room <= 0:
        raise ConfigurationError("no room for a Bloom filter in one segment")
    return room * 8


def choose_shard_depth(names: list[Name], prefix: Name, m: int, target_fp: float,
                       max_depth: int = 8) -> int:
    """Smallest extra depth j such that every shard's filter meets target_fp."""
    for j in range(max_depth + 1):
        shards: dict = {}
        for n in names:
            key = n.components[: len(prefix) + j]
            shards[key] = shards.get(key, 0) + 1
        worst = max(shards.values(), default=0)
        if worst == 0 or fp_exact(m, worst, optimal_k(m, worst)) <= target_fp:
            return j
    raise ConfigurationError(
        f"catalog of {len(names)} names cannot reach FP {target_fp} with {m}-bit filters"
    )


class Producer(Node):
    kind = "producer"

    def __init__(self, node_id: str, catalog: Catalog, key: KeyPair,
                 policy: Optional[CnackPolicy] = None, service: Optional[ServiceModel] = None,
                 bloom: Optional[BloomConfig] = None, data_freshness: float = 10.0,
                 presign: bool = True, gateway: bool = False,
                 nack_service: Optional[ServiceModel] = None):
        super().__init__(node_id)
        self.catalog = catalog
        self.key = key
        self.policy = policy or CnackPolicy()
        self.service = service or ServiceModel()
        self.bloom = bloom or BloomConfig()
        self.data_freshness = data_freshness
        self.presign = presign
        self.gateway = gateway
        self.nack_service = nack_service or ServiceModel(
            self.service.sign_cost, self.service.lookup_cost, self.service.queue_capacity)
        self.snapshot: Optional[set] = None
        if gateway:
            self.take_snapshot()
        self._signed_data: dict[Name, ContentObject] = {}
        self._cnack_memo: dict[Name, ContentObject] = {}
        self._memo_interval = -math.inf
        self._signatures: deque[float] = deque()
        self._bloom_pending = False
        self._last_bloom = -math.inf
        self._filter_cache: dict = {}
        self._shard_depth: Optional[int] = self.bloom.shard_depth
        self.signature_count = 0
        self.emitted: list[ContentObject] = []  # kept only when record_emissions
        self.record_emissions = False

    # ---------------------------------------------------------------- catalog
    def take_snapshot(self) -> None:
        self.snapshot = {n for n, _ in self.catalog.published.items()}

    def publish(self, name: Name, now: float) -> None:
        self.catalog.publish(name, at=now)
        self._filter_cache.clear()
        if self.bloom.trigger == "publish":
            self._bloom_pending = True

    # -------------------------------------------------------------- signing
    def _sign(self, obj: ContentObject, now: float) -> ContentObject:
        self.signature_count += 1
        self._signatures.append(now)
        self.count("signatures")
        return sign_content(obj, self.key)

    def _data_object(self, name: Name, now: float) -> tuple[ContentObject, bool]:
        obj = self._signed_data.get(name) if self.presign else None
        if obj is not None:
            return obj, False
        unsigned = ContentObject(name, self.catalog.published[name], ContentType.DATA,
                                 freshness=self.data_freshness, timestamp=now)
        if self.presign:
            # published objects are signed ahead of time: no cost at request time
            obj = sign_content(unsigned, self.key)
            self._signed_data[name] = obj
            return obj, False
        return self._sign(unsigned, now), True

    def make_cnack(self, name: Name, now: float) -> tuple[ContentObject, bool]:
        """Signed cNACK for ``name``, one signature per name per interval.

        Returns the object and whether a new signature was produced.
        """
        pol = self.policy
        start = math.floor(now / pol.interval) * pol.interval
        if start != self._memo_interval:
            self._cnack_memo.clear()
            self._memo_interval = start
        memo = self._cnack_memo.get(name)
        if memo is not None:
            return memo, False
        obj = ContentObject(name, b"", ContentType.CNACK, freshness=pol.freshness,
                            timestamp=start, expiration=start + pol.expiration_horizon)
        obj = self._sign(obj, now)
        self._cnack_memo[name] = obj
        self.count("cnacks_signed")
        return obj, True

    def signing_load(self, now: float) -> float:
        win = self.bloom.load_window
        sigs = self._signatures
        while sigs and sigs[0] < now - win:
            sigs.popleft()
        return len(sigs) / win

    # ----------------------------------------------------------------- bloom
    def _bloom_due(self, now: float) -> bool:
        b = self.bloom
        if b.trigger == "off":
            return False
        if now - self._last_bloom < b.min_interval:
            return False
        if b.trigger == "load":
            return self.signing_load(now) >= b.load_threshold
        if b.trigger == "periodic":
            return self._bloom_pending or now - self._last_bloom >= b.period
        return self._bloom_pending

    def _resolve_depth(self, name: Name) -> int:
        if self._shard_depth is None:
            b = self.bloom
            names = self.catalog.names()
            # size with the longest scope so any chosen shard still fits
            m = b.m or filter_bits_for_segment(name, name, self.key, b.max_segment_size)
            self._shard_depth = choose_shard_depth(names, self.catalog.prefix, m,
                                                   b.target_fp or 1.0)
        return self._shard_depth

    def current_filter(self, name: Name, now: float) -> BloomFilter:
        b = self.bloom
        scope = name.prefix(len(self.catalog.prefix) + self._resolve_depth(name))
        m = b.m or filter_bits_for_segment(name, scope, self.key, b.max_segment_size)
        seed = int(now // b.rotate) if b.rotate > 0 else 0
        key = (scope, m, seed)
        flt = self._filter_cache.get(key)
        if flt is None:
            members = [n for n in self.catalog.names() if is_prefix_of(scope, n)]
            flt = build_filter(members, m, seed=seed, scope=scope)
            self._filter_cache[key] = flt
        return flt

    def publish_bloom(self, name: Name, now: float) -> ContentObject:
        flt = self.current_filter(name, now)
        freshness = freshness_for(self.catalog.publish_log, self.bloom.tau, now)
        obj = ContentObject(name, flt.to_payload(), ContentType.BLM_FLTR,
                            freshness=freshness, timestamp=now)
        obj = self._sign(obj, now)
        encode(obj, self.bloom.max_segment_size)  # enforce the single-segment bound
        self._last_bloom = now
        self._bloom_pending = False
        self.count("bloom_publications")
        return obj

    # ------------------------------------------------------------- interests
    def on_interest_at_producer(self, interest: Interest, now: float,
                                service: Optional[ServiceModel] = None
                                ) -> tuple[Verdict, Optional[ContentObject], float]:
        """Decide the reply to ``interest`` and its service cost in seconds."""
        svc = service or self.service
        name = interest.name
        if not is_prefix_of(self.catalog.prefix, name):
            self.count("foreign_interests")
            return Verdict.SILENCE, None, 0.0
        cost = svc.lookup_cost
        if name in self.catalog:
            obj, signed = self._data_object(name, now)
            return Verdict.DATA, obj, cost + (svc.sign_cost if signed else 0.0)
        self.count("unpublished_requests")
        if not self.policy.plausibility(name, self.catalog):
            self.count("implausible_dropped")
            return Verdict.SILENCE, None, cost
        if self._bloom_due(now):
            return Verdict.BLM, self.publish_bloom(name, now), cost + svc.sign_cost
        obj, signed = self.make_cnack(name, now)
        return Verdict.CNACK, obj, cost + (svc.sign_cost if signed else 0.0)

    def receive(self, packet, face_id: int) -> None:
        if not isinstance(packet, Interest):
            self.count("non_interest_drops")
            return
        now = self.sim.now
        self.count("interests_in")
        queue = None
        svc = self.service
        if self.gateway:
            queue = gateway_dispatch(packet, self.snapshot)
            if queue is Queue.NACK_QUEUE:
                svc = self.nack_service
        server = svc.server
        # admission is decided before any work is charged
        if server.capacity is not None and server.in_system(now) >= server.capacity:
            self.count("queue_drops")
            return
        if queue is Queue.NACK_QUEUE and packet.name in self.catalog:
            # stale snapshot: the NACK server has no repository access
            self.count("gateway_misroutes")
            obj, signed = self.make_cnack(packet.name, now)
            verdict = Verdict.CNACK
            cost = svc.lookup_cost + (svc.sign_cost if signed else 0.0)
        else:
            verdict, obj, cost = self.on_interest_at_producer(packet, now, svc)
        done = server.serve(now, cost)
        delay = done - now
        self.sample("service_delay", delay)
        if verdict is Verdict.DATA:
            self.count("data_served")
            self.sample("data_service_delay", delay)
        elif verdict is Verdict.CNACK:
            self.count("cnacks_sent")
        if queue is not None:
            self.sample(f"{queue.value}_delay", delay)
        if obj is None:
            return
        if self.record_emissions:
            self.emitted.append(obj)
        if done <= now:
            self.send(face_id, obj)
        else:
            self.sim.schedule(done, self, self.send, face_id, obj)
