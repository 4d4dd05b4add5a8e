"""Names, packet records and the canonical byte encoding.

Wire layout (all integers big-endian)::

    packet  := kind:u8 body_len:u32 field*
    field   := tag:u8 len:u32 value
    name    := count:u16 (len:u16 component)* has_digest:u8 [digest:32]

Fields appear in a fixed order per packet kind and optional fields are
omitted when absent. Floats are IEEE-754 doubles. The signing (and HMAC)
input of a packet is its encoding with the signature / auth tag set to the
empty string.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Union

DIGEST_SIZE = 32
DEFAULT_MAX_SEGMENT_SIZE = 8192


class ParseError(ValueError):
    pass


class EncodingError(ValueError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True, slots=True)
class Name:
    components: tuple[bytes, ...]
    implicit_digest: Optional[bytes] = None

    def __post_init__(self):
        if self.implicit_digest is not None and len(self.implicit_digest) != DIGEST_SIZE:
            raise ValueError("implicit digest must be 32 bytes")

    def __len__(self) -> int:
        return len(self.components)

    def __str__(self) -> str:
        text = "/" + "/".join(c.decode("utf-8", "backslashreplace") for c in self.components)
        if self.implicit_digest is not None:
            text += "/sha256digest=" + self.implicit_digest.hex()
        return text

    def append(self, *components: Union[str, bytes]) -> "Name":
        extra = tuple(c.encode() if isinstance(c, str) else c for c in components)
        return Name(self.components + extra)

    def prefix(self, length: int) -> "Name":
        return Name(self.components[:length])

    def without_digest(self) -> "Name":
        if self.implicit_digest is None:
            return self
        return Name(self.components)


def parse_name(text: str) -> Name:
    """Parse ``/a/b/c`` into a :class:`Name`.

    A single trailing slash is tolerated (``/ndn/argo.mp4/ch13/``); empty
    internal components are not.
    """
    if not text.startswith("/"):
        raise ParseError(f"name must start with '/': {text!r}")
    body = text[1:]
    if body.endswith("/"):
        body = body[:-1]
    if not body:
        raise ParseError("name has no components")
    parts = body.split("/")
    if any(p == "" for p in parts):
        raise ParseError(f"empty component in {text!r}")
    return Name(tuple(p.encode() for p in parts))


def is_prefix_of(prefix: Name, name: Name) -> bool:
    n = len(prefix.components)
    return n <= len(name.components) and name.components[:n] == prefix.components


class ContentType(enum.IntEnum):
    DATA = 0
    KEY = 1
    CNACK = 2
    BLM_FLTR = 3


class NackReason(enum.IntEnum):
    NO_ROUTE = 0
    CONGESTION = 1


@dataclass(frozen=True, slots=True)
class Interest:
    name: Name
    key_digest: Optional[bytes] = None
    scn_hash: Optional[bytes] = None
    lifetime: float = 4000.0  # milliseconds
    origin_face: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ValueError("interest lifetime must be positive")
        if self.scn_hash is not None and self.key_digest is None:
            raise ValueError("an SCN interest must also carry the producer key digest")


@dataclass(frozen=True, slots=True)
class ContentObject:
    name: Name
    payload: bytes = b""
    content_type: ContentType = ContentType.DATA
    freshness: float = 0.0
    timestamp: float = 0.0
    expiration: Optional[float] = None
    producer_key: bytes = b""
    signature: bytes = b""

    def __post_init__(self):
        if self.content_type == ContentType.CNACK:
            if self.payload:
                raise ValueError("a cNACK carries no payload")
            if self.expiration is None:
                raise ValueError("a cNACK must carry an expiration")


@dataclass(frozen=True, slots=True)
class FNack:
    name: Name
    reason: NackReason
    timestamp: float
    auth_tag: bytes = b""


Packet = Union[Interest, ContentObject, FNack]

_KIND_INTEREST, _KIND_CONTENT, _KIND_FNACK = 1, 2, 3
_TAG_NAME, _TAG_KEY_DIGEST, _TAG_SCN, _TAG_LIFETIME = 1, 2, 3, 4
_TAG_PAYLOAD, _TAG_TYPE, _TAG_FRESHNESS, _TAG_TIMESTAMP = 5, 6, 7, 8
_TAG_EXPIRATION, _TAG_PRODUCER_KEY, _TAG_SIGNATURE = 9, 10, 11
_TAG_REASON, _TAG_AUTH = 12, 13

_F64 = struct.Struct(">d")
_U32 = struct.Struct(">I")
_HDR = struct.Struct(">BI")
_FIELD = struct.Struct(">BI")


@lru_cache(maxsize=1 << 16)
def encode_name(name: Name) -> bytes:
    out = [struct.pack(">H", len(name.components))]
    for comp in name.components:
        out.append(struct.pack(">H", len(comp)))
        out.append(comp)
    if name.implicit_digest is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01" + name.implicit_digest)
    return b"".join(out)


def decode_name(buf: bytes) -> Name:
    (count,) = struct.unpack_from(">H", buf, 0)
    pos = 2
    comps = []
    for _ in range(count):
        (ln,) = struct.unpack_from(">H", buf, pos)
        pos += 2
        comps.append(bytes(buf[pos:pos + ln]))
        pos += ln
    flag = buf[pos]
    pos += 1
    dig = bytes(buf[pos:pos + DIGEST_SIZE]) if flag else None
    if flag:
        pos += DIGEST_SIZE
    if pos != len(buf):
        raise EncodingError("trailing bytes in name field")
    return Name(tuple(comps), dig)


def _fields(packet: Packet, blank: bool = False) -> tuple[int, list[tuple[int, bytes]]]:
    # blank=True empties the signature / auth tag: the signing input
    if isinstance(packet, Interest):
        fs = [(_TAG_NAME, encode_name(packet.name))]
        if packet.key_digest is not None:
            fs.append((_TAG_KEY_DIGEST, packet.key_digest))
        if packet.scn_hash is not None:
            fs.append((_TAG_SCN, packet.scn_hash))
        fs.append((_TAG_LIFETIME, _F64.pack(packet.lifetime)))
        return _KIND_INTEREST, fs
    if isinstance(packet, ContentObject):
        fs = [
            (_TAG_NAME, encode_name(packet.name)),
            (_TAG_PAYLOAD, packet.payload),
            (_TAG_TYPE, bytes([int(packet.content_type)])),
            (_TAG_FRESHNESS, _F64.pack(packet.freshness)),
            (_TAG_TIMESTAMP, _F64.pack(packet.timestamp)),
        ]
        if packet.expiration is not None:
            fs.append((_TAG_EXPIRATION, _F64.pack(packet.expiration)))
        fs.append((_TAG_PRODUCER_KEY, packet.producer_key))
        fs.append((_TAG_SIGNATURE, b"" if blank else packet.signature))
        return _KIND_CONTENT, fs
    if isinstance(packet, FNack):
        return _KIND_FNACK, [
            (_TAG_NAME, encode_name(packet.name)),
            (_TAG_REASON, bytes([int(packet.reason)])),
            (_TAG_TIMESTAMP, _F64.pack(packet.timestamp)),
            (_TAG_AUTH, b"" if blank else packet.auth_tag),
        ]
    raise TypeError(f"cannot encode {type(packet).__name__}")


def _wire(kind: int, fs: list[tuple[int, bytes]]) -> bytes:
    body = b"".join(_FIELD.pack(tag, len(v)) + v for tag, v in fs)
    return _HDR.pack(kind, len(body)) + body


def encode(packet: Packet, max_segment_size: int = DEFAULT_MAX_SEGMENT_SIZE) -> bytes:
    wire = _wire(*_fields(packet))
    if (
        isinstance(packet, ContentObject)
        and packet.content_type == ContentType.BLM_FLTR
        and len(wire) > max_segment_size
    ):
        raise EncodingError(
            f"BLM-FLTR object is {len(wire)} bytes, segment limit is {max_segment_size}"
        )
    return wire


def signing_input(packet: Packet) -> bytes:
    """Canonical encoding with the signature / auth tag field emptied."""
    return _wire(*_fields(packet, blank=True))


def content_hash(obj: ContentObject) -> bytes:
    """Implicit digest: hash of the full canonical encoding, signature included."""
    return digest(encode(obj, max_segment_size=1 << 62))


def with_implicit_digest(obj: ContentObject) -> Name:
    return Name(obj.name.components, content_hash(obj))


def decode(wire: bytes) -> Packet:
    if len(wire) < _HDR.size:
        raise EncodingError("truncated packet header")
    kind, body_len = _HDR.unpack_from(wire, 0)
    if len(wire) != _HDR.size + body_len:
        raise EncodingError("packet length mismatch")
    pos = _HDR.size
    vals: dict[int, bytes] = {}
    order = []
    while pos < len(wire):
        tag, ln = _FIELD.unpack_from(wire, pos)
        pos += _FIELD.size
        vals[tag] = bytes(wire[pos:pos + ln])
        order.append(tag)
        pos += ln
    if pos != len(wire):
        raise EncodingError("field overruns packet")
    if kind == _KIND_INTEREST:
        return Interest(
            name=decode_name(vals[_TAG_NAME]),
            key_digest=vals.get(_TAG_KEY_DIGEST),
            scn_hash=vals.get(_TAG_SCN),
            lifetime=_F64.unpack(vals[_TAG_LIFETIME])[0],
        )
    if kind == _KIND_CONTENT:
        exp = vals.get(_TAG_EXPIRATION)
        return ContentObject(
            name=decode_name(vals[_TAG_NAME]),
            payload=vals[_TAG_PAYLOAD],
            content_type=ContentType(vals[_TAG_TYPE][0]),
            freshness=_F64.unpack(vals[_TAG_FRESHNESS])[0],
            timestamp=_F64.unpack(vals[_TAG_TIMESTAMP])[0],
            expiration=None if exp is None else _F64.unpack(exp)[0],
            producer_key=vals[_TAG_PRODUCER_KEY],
            signature=vals[_TAG_SIGNATURE],
        )
    if kind == _KIND_FNACK:
        return FNack(
            name=decode_name(vals[_TAG_NAME]),
            reason=NackReason(vals[_TAG_REASON][0]),
            timestamp=_F64.unpack(vals[_TAG_TIMESTAMP])[0],
            auth_tag=vals[_TAG_AUTH],
        )
    raise EncodingError(f"unknown packet kind {kind}")


class NameTrie:
    """Component-wise trie mapping names to values.

    Used for FIB longest-prefix match and for finding cached objects that an
    interest name is a prefix of.
    """

    __slots__ = ("_root", "_size")
    _VALUE = object()

    def __init__(self, items: Iterable[tuple[Name, object]] = ()):
        self._root: dict = {}
        self._size = 0
        for name, value in items:
            self[name] = value

    def __len__(self) -> int:
        return self._size

    def __setitem__(self, name: Name, value) -> None:
        node = self._root
        for comp in name.components:
            node = node.setdefault(comp, {})
        if self._VALUE not in node:
            self._size += 1
        node[self._VALUE] = value

    def _node(self, components) -> Optional[dict]:
        node = self._root
        for comp in components:
            node = node.get(comp)
            if node is None:
                return None
        return node

    def get(self, name: Name, default=None):
        node = self._node(name.components)
        if node is None:
            return default
        return node.get(self._VALUE, default)

    def __contains__(self, name: Name) -> bool:
        node = self._node(name.components)
        return node is not None and self._VALUE in node

    def __getitem__(self, name: Name):
        node = self._node(name.components)
        if node is None or self._VALUE not in node:
            raise KeyError(name)
        return node[self._VALUE]

    def pop(self, name: Name, default=None):
        path = [self._root]
        for comp in name.components:
            nxt = path[-1].get(comp)
            if nxt is None:
                return default
            path.append(nxt)
        if self._VALUE not in path[-1]:
            return default
        value = path[-1].pop(self._VALUE)
        self._size -= 1
        # prune empty branches
        for depth in range(len(name.components), 0, -1):
            if path[depth]:
                break
            del path[depth - 1][name.components[depth - 1]]
        return value

    def longest_prefix(self, name: Name) -> Optional[tuple[Name, object]]:
        node = self._root
        best = (0, node[self._VALUE]) if self._VALUE in node else None
        for i, comp in enumerate(name.components, 1):
            node = node.get(comp)
            if node is None:
                break
            if self._VALUE in node:
                best = (i, node[self._VALUE])
        if best is None:
            return None
        return Name(name.components[:best[0]]), best[1]

    def first_under(self, name: Name) -> Optional[tuple[Name, object]]:
        """Some entry whose name has ``name`` as prefix (exact match preferred)."""
        node = self._node(name.components)
        if node is None:
            return None
        stack = [(node, name.components)]
        while stack:
            node, comps = stack.pop()
            if self._VALUE in node:
                return Name(comps), node[self._VALUE]
            for comp, child in node.items():
                if comp is not self._VALUE:
                    stack.append((child, comps + (comp,)))
        return None

    def items(self):
        stack = [(self._root, ())]
        while stack:
            node, comps = stack.pop()
            for comp, child in node.items():
                if comp is self._VALUE:
                    yield Name(comps), child
                else:
                    stack.append((child, comps + (comp,)))

    def depth(self) -> int:
        return max((len(n) for n, _ in self.items()), default=0)
