"""Workload generators: benign basic, benign Zipf and malicious consumers."""
from __future__ import annotations

import bisect
import enum
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .crypto import TimeWindow, DEFAULT_FNACK_WINDOW, verify_fnack
from .engine import Node
from .packets import ContentObject, ContentType, FNack, Interest, Name, parse_name


class ConsumerKind(enum.Enum):
    BENIGN_BASIC = "basic"
    BENIGN_ZIPF = "zipf"
    MALICIOUS = "malicious"


class Response(enum.Enum):
    DATA = "data"
    CNACK = "cnack"
    FNACK = "fnack"
    TIMEOUT = "timeout"


@dataclass
class ConsumerProfile:
    kind: ConsumerKind
    rate: float = 10.0
    zipf_alpha: float = 1.0
    catalog_size: int = 1000
    suffix_len: int = 1
    retx_limit: int = 3
    lifetime: float = 4000.0  # ms
    namespace: str = "/p/a"  # where benign names live / attack names are rooted
    plausible: bool = True
    retx_on_fnack: bool = False
    start_offset: Optional[int] = None  # BASIC: first sequence number (None = random)

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("consumer rate must be positive")
        if self.kind is ConsumerKind.BENIGN_ZIPF and self.zipf_alpha <= 0:
            raise ValueError("zipf_alpha must be positive")
        if self.catalog_size < 1:
            raise ValueError("catalog_size must be at least 1")


@lru_cache(maxsize=32)
def zipf_cdf(n: int, alpha: float) -> tuple[float, ...]:
    weights = np.arange(1, n + 1, dtype=float) ** -alpha
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return tuple(cdf.tolist())


_JUNK = "$&F(?%!*"


class Workload:
    """Name sequence of one consumer.

    BASIC walks ``namespace/1, /2, ...`` from a per-consumer start point,
    wrapping at ``catalog_size``. ZIPF draws rank r with probability
    proportional to r^-alpha. MALICIOUS appends ``suffix_len`` random
    components under ``namespace``: long digit strings when ``plausible``
    (never a published name, whose numbers are at most ``catalog_size``),
    high-entropy symbols otherwise.
    """

    def __init__(self, profile: ConsumerProfile, rng: np.random.Generator,
                 key_digest: Optional[bytes] = None):
        self.profile = profile
        self.rng = rng
        self.key_digest = key_digest
        self.base = parse_name(profile.namespace)
        if profile.kind is ConsumerKind.BENIGN_BASIC:
            off = profile.start_offset
            self.seq = int(rng.integers(profile.catalog_size)) if off is None else off - 1
        else:
            self.seq = 0
        self._buf: list[float] = []
        if profile.kind is ConsumerKind.BENIGN_ZIPF:
            self._cdf = zipf_cdf(profile.catalog_size, float(profile.zipf_alpha))

    def _uniform(self) -> float:
        if not self._buf:
            self._buf = self.rng.random(256).tolist()
            self._buf.reverse()
        return self._buf.pop()

    def draw_rank(self) -> int:
        return min(bisect.bisect_left(self._cdf, self._uniform()), len(self._cdf) - 1) + 1

    def next_name(self) -> Name:
        p = self.profile
        if p.kind is ConsumerKind.BENIGN_BASIC:
            n = self.seq % p.catalog_size + 1
            self.seq += 1
            return self.base.append(str(n))
        if p.kind is ConsumerKind.BENIGN_ZIPF:
            return self.base.append(str(self.draw_rank()))
        if p.plausible:
            # 16 digits with a leading 9: numerically far above any catalog index
            draws = self.rng.integers(10**15, size=p.suffix_len)
            return self.base.append(*(f"9{d:015d}" for d in draws.tolist()))
        idx = self.rng.integers(len(_JUNK), size=(p.suffix_len, 6)).tolist()
        return self.base.append(*("".join(_JUNK[i] for i in row) for row in idx))

    def next_interest(self) -> Interest:
        return Interest(self.next_name(), key_digest=self.key_digest,
                        lifetime=self.profile.lifetime)


def next_interest(profile: ConsumerProfile, rng: np.random.Generator,
                  key_digest: Optional[bytes] = None, state: Optional[Workload] = None
                  ) -> Interest:
    """One interest from ``profile``; pass ``state`` to continue a sequence."""
    wl = state or Workload(profile, rng, key_digest)
    return wl.next_interest()


class Consumer(Node):
    kind = "consumer"

    def __init__(self, node_id: str, profile: ConsumerProfile, rng: np.random.Generator,
                 key_digest: Optional[bytes] = None, keys=None,
                 fnack_window: float = DEFAULT_FNACK_WINDOW):
        super().__init__(node_id)
        self.profile = profile
        self.workload = Workload(profile, rng, key_digest)
        self.keys = keys
        self.fnack_window = TimeWindow(fnack_window)
        self.malicious = profile.kind is ConsumerKind.MALICIOUS
        self.outstanding: dict[Name, list] = {}  # name -> [first_sent, last_sent, retx]
        self._timeouts: deque = deque()
        self._sweep_at = float("inf")
        self.not_found: set[Name] = set()
        self.rtts: list[float] = []
        self.retransmissions: dict[Name, int] = {}
        self._t0 = 0.0
        self._k = 0
        self.stop_at = float("inf")

    def start(self, at: float, phase: Optional[float] = None) -> None:
        """Begin sending at ``at`` + phase; spacing is exactly 1/rate."""
        if phase is None:
            phase = float(self.workload.rng.random()) / self.profile.rate
        self._t0 = at + phase
        self._k = 0
        self.sim.schedule(self._t0, self, self._tick)

    def _tick(self) -> None:
        now = self.sim.now
        if now >= self.stop_at:
            return
        self.emit(self.workload.next_interest())
        self._k += 1
        self.sim.schedule(self._t0 + self._k / self.profile.rate, self, self._tick)

    def emit(self, interest: Interest) -> None:
        now = self.sim.now
        self.count("interests_sent")
        self.count("malicious_sent" if self.malicious else "benign_sent")
        if not self.malicious:
            rec = self.outstanding.get(interest.name)
            if rec is None:
                self.outstanding[interest.name] = [now, now, 0, interest]
            else:
                rec[1] = now
            deadline = now + interest.lifetime / 1000.0
            self._timeouts.append((deadline, interest.name, now))
            if deadline < self._sweep_at:
                self._sweep_at = deadline
                self.sim.schedule(deadline, self, self._sweep, deadline)
        self.send(0, interest)

    def _sweep(self, t: float) -> None:
        if t != self._sweep_at:
            return
        self._sweep_at = float("inf")
        now = self.sim.now
        dq = self._timeouts
        while dq and dq[0][0] <= now:
            _, name, sent = dq.popleft()
            rec = self.outstanding.get(name)
            if rec is not None and rec[1] == sent:
                self.on_response(Response.TIMEOUT, name)
        if dq:
            nxt = max(dq[0][0], now + 0.001)
            self._sweep_at = nxt
            self.sim.schedule(nxt, self, self._sweep, nxt)

    def receive(self, packet, face_id: int) -> None:
        if isinstance(packet, ContentObject):
            if packet.content_type == ContentType.CNACK:
                self.on_response(Response.CNACK, packet.name)
            elif packet.content_type == ContentType.BLM_FLTR:
                self.count("blm_received")  # must never happen
            else:
                self.on_response(Response.DATA, packet.name)
        elif isinstance(packet, FNack):
            key = self.faces[face_id].link.key or self.keys.link_key(
                *self.faces[face_id].link.endpoints)
            if not verify_fnack(packet, key, self.sim.now, self.fnack_window):
                self.count("fnacks_rejected")
                return
            self.on_response(Response.FNACK, packet.name)
        else:
            self.count("unexpected_packets")

    def on_response(self, kind: Response, name: Name) -> None:
        """Bookkeeping for a DATA / CNACK / FNACK / TIMEOUT on ``name``."""
        if self.malicious:
            self.count(f"malicious_{kind.value}")
            return
        rec = self.outstanding.get(name)
        if rec is None:
            self.count("unknown_responses")
            return
        now = self.sim.now
        if kind is Response.DATA:
            del self.outstanding[name]
            rtt = now - rec[1]
            self.rtts.append(rtt)
            self.sample("rtt", rtt)
            self.count("data_received")
        elif kind is Response.CNACK:
            del self.outstanding[name]
            self.not_found.add(name)
            self.count("not_found")
        elif kind is Response.FNACK:
            self.count("unreachable")
            if self.profile.retx_on_fnack and rec[2] < self.profile.retx_limit:
                self._retransmit(name, rec)
            else:
                del self.outstanding[name]
        else:
            self.count("timeouts")
            if rec[2] < self.profile.retx_limit and name not in self.not_found:
                self._retransmit(name, rec)
            else:
                del self.outstanding[name]
                self.count("abandoned")

    def _retransmit(self, name: Name, rec: list) -> None:
        rec[2] += 1
        self.retransmissions[name] = self.retransmissions.get(name, 0) + 1
        self.count("retransmissions")
        self.emit(rec[3])
