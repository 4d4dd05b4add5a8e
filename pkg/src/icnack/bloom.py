"""Bloom filters over published names and the false-positive formulas.

BLM-FLTR payload layout (big-endian)::

    m:u32  k:u8  seed:u64  count:u32  scope_len:u16  scope:<encoded name>  bits

``bits`` holds ceil(m/8) bytes; bit ``i`` is ``bits[i >> 3] >> (i & 7) & 1``.
``scope`` is the namespace the filter covers (the producer prefix, or a
shard of it).
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from .packets import Name, encode_name, decode_name

K_MAX = 16
FRESHNESS_CAP = 3600.0
OPTIMAL_BASE = 0.6185

_HEADER = struct.Struct(">IBQIH")
_WORDS = struct.Struct(">16I")


@dataclass(frozen=True)
class BloomParams:
    m: int
    n: int
    k: int
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("filter needs at least one bit")
        if self.n < 0:
            raise ValueError("negative element count")
        if not 1 <= self.k <= K_MAX:
            raise ValueError(f"k must lie in [1, {K_MAX}]")


class BloomFilter:
    def __init__(self, params: BloomParams, scope: Name = Name(())):
        self.params = params
        self.scope = scope
        self.bits = bytearray((params.m + 7) // 8)
        self.count = 0
        self._key = params.seed.to_bytes(8, "big")

    def _positions(self, name: Name) -> list[int]:
        # k <= 16 independent 32-bit words from one 64-byte digest; double hashing
        # (h1 + i*h2) mod m collapses onto short cycles when gcd(h2, m) is large
        h = hashlib.blake2b(encode_name(name.without_digest()), key=self._key).digest()
        m = self.params.m
        return [w % m for w in _WORDS.unpack(h)[:self.params.k]]

    def insert(self, name: Name) -> None:
        bits = self.bits
        for p in self._positions(name):
            bits[p >> 3] |= 1 << (p & 7)
        self.count += 1

    def query(self, name: Name) -> bool:
        bits = self.bits
        for p in self._positions(name):
            if not bits[p >> 3] >> (p & 7) & 1:
                return False
        return True

    __contains__ = query

    def fill_ratio(self) -> float:
        ones = sum(bin(b).count("1") for b in self.bits)
        return ones / self.params.m

    def to_payload(self) -> bytes:
        scope = encode_name(self.scope)
        p = self.params
        return _HEADER.pack(p.m, p.k, p.seed, self.count, len(scope)) + scope + bytes(self.bits)

    @classmethod
    def from_payload(cls, payload: bytes) -> "BloomFilter":
        m, k, seed, count, scope_len = _HEADER.unpack_from(payload, 0)
        pos = _HEADER.size
        scope = decode_name(payload[pos:pos + scope_len])
        pos += scope_len
        bits = payload[pos:]
        if len(bits) != (m + 7) // 8:
            raise ValueError("bit array length does not match m")
        f = cls(BloomParams(m, count, k, seed), scope)
        f.bits[:] = bits
        f.count = count
        return f

    @staticmethod
    def payload_overhead(scope: Name) -> int:
        return _HEADER.size + len(encode_name(scope))


def build_filter(names: Iterable[Name], m: int, k: int | None = None, seed: int = 0,
                 scope: Name = Name(())) -> BloomFilter:
    names = list(names)
    if k is None:
        k = optimal_k(m, max(len(names), 1))
    f = BloomFilter(BloomParams(m, len(names), k, seed), scope)
    for name in names:
        f.insert(name)
    return f


def shard_names(names: Iterable[Name], depth: int) -> dict[Name, list[Name]]:
    """Group names by their first ``depth`` components (0 = one group)."""
    shards: dict[Name, list[Name]] = {}
    for name in names:
        shards.setdefault(name.prefix(depth), []).append(name)
    return shards


def fp_exact(m: int, n: int, k: int) -> float:
    if n == 0:
        return 0.0
    # 1 - (1 - 1/m)^(kn) computed without cancellation for large m
    inner = -math.expm1(k * n * math.log1p(-1.0 / m)) if m > 1 else 1.0
    return inner ** k


def fp_approx(m: int, n: int, k: int) -> float:
    return (-math.expm1(-k * n / m)) ** k


def fp_optimal(m: float, n: float) -> float:
    return OPTIMAL_BASE ** (m / n)


def optimal_k(m: int, n: int, k_max: int = K_MAX) -> int:
    k = round(m / n * math.log(2))
    return max(1, min(k_max, k))


def freshness_for(publish_events: Sequence[float], tau: float, now: float,
                  cap: float = FRESHNESS_CAP) -> float:
    """Caching time matched to the recent publishing frequency.

    The frequency is the number of publications in ``[now - tau, now]``
    divided by ``tau``; with nothing published the result is ``cap``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    lo = now - tau
    count = sum(1 for t in publish_events if lo <= t <= now)
    if count == 0:
        return cap
    return min(cap, tau / count)
