"""Keys, content signatures, IKB/SCN checks and hop-by-hop fNACK MACs.

Two signature schemes share one interface. ``sim`` is a keyed hash whose
verification is answered by a process-wide table standing in for the public
key math (fast enough to sign per packet in long simulations); ``ed25519``
uses real asymmetric signatures from ``cryptography``. The scheme is encoded
in the first byte of the public key.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .packets import (
    ContentObject,
    ContentType,
    FNack,
    Interest,
    Name,
    NameTrie,
    content_hash,
    digest,
    signing_input,
)

DEFAULT_CNACK_WINDOW = 60.0
DEFAULT_FNACK_WINDOW = 5.0

_SIM, _ED25519 = b"S", b"E"

# public key -> secret, the stand-in for public-key verification math
_sim_secrets: dict[bytes, bytes] = {}


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    digest: bytes = b""

    def __post_init__(self):
        if not self.digest:
            object.__setattr__(self, "digest", digest(self.public_key))
        elif self.digest != digest(self.public_key):
            raise ValueError("key digest does not match public key")

    @classmethod
    def generate(cls, seed: Union[bytes, str, int], scheme: str = "sim") -> "KeyPair":
        seed_bytes = seed if isinstance(seed, bytes) else str(seed).encode()
        material = hashlib.sha256(b"icnack-key:" + seed_bytes).digest()
        if scheme == "sim":
            public = _SIM + hashlib.sha256(b"pk" + material).digest()
            _sim_secrets[public] = material
            return cls(public, material)
        if scheme == "ed25519":
            sk = Ed25519PrivateKey.from_private_bytes(material)
            raw = sk.public_key().public_bytes_raw()
            return cls(_ED25519 + raw, material)
        raise ValueError(f"unknown signature scheme {scheme!r}")


@dataclass(frozen=True)
class LinkKey:
    link_id: tuple[str, str]
    secret: bytes = field(repr=False)

    @classmethod
    def derive(cls, link_id: tuple[str, str], seed: Union[int, str]) -> "LinkKey":
        a, b = sorted(link_id)
        secret = hashlib.sha256(f"icnack-link:{seed}:{a}|{b}".encode()).digest()
        return cls((a, b), secret)


@dataclass(frozen=True)
class TimeWindow:
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("time window width must be positive")


def _sign_bytes(data: bytes, key: KeyPair) -> bytes:
    scheme = key.public_key[:1]
    if scheme == _SIM:
        return hmac.new(key.private_key, data, hashlib.sha256).digest()
    sk = Ed25519PrivateKey.from_private_bytes(key.private_key)
    return sk.sign(data)


def _verify_bytes(data: bytes, signature: bytes, public_key: bytes) -> bool:
    scheme = public_key[:1]
    if scheme == _SIM:
        secret = _sim_secrets.get(public_key)
        if secret is None:
            return False
        expected = hmac.new(secret, data, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)
    if scheme == _ED25519:
        try:
            Ed25519PublicKey.from_public_bytes(public_key[1:]).verify(signature, data)
        except (InvalidSignature, ValueError):
            return False
        return True
    return False


def sign_content(obj: ContentObject, key: KeyPair) -> ContentObject:
    unsigned = replace(obj, producer_key=key.public_key, signature=b"")
    signed = replace(unsigned, signature=_sign_bytes(signing_input(unsigned), key))
    _remember(signed, True)
    return signed


def verify_content(obj: ContentObject) -> bool:
    """Check the signature against the key embedded in the object."""
    if not obj.signature or not obj.producer_key:
        return False
    hit = _verified.get(obj)
    if hit is None:
        hit = _verify_bytes(signing_input(obj), obj.signature, obj.producer_key)
        _remember(obj, hit)
    return hit


# verification results keyed on the whole object (every field takes part in
# equality), so any mutated copy misses and is checked afresh
_verified: dict[ContentObject, bool] = {}
_VERIFIED_MAX = 1 << 14


def _remember(obj: ContentObject, ok: bool) -> None:
    if len(_verified) >= _VERIFIED_MAX:
        _verified.clear()
    _verified[obj] = ok


def verify_ikb(interest: Interest, obj: ContentObject) -> bool:
    if interest.key_digest is None:
        return False
    if digest(obj.producer_key) != interest.key_digest:
        return False
    return verify_content(obj)


class ScnResult(enum.Enum):
    SCN_MATCH = "match"
    SCN_MISS = "miss"
    NOT_APPLICABLE = "n/a"


def verify_scn(interest: Interest, obj: ContentObject) -> ScnResult:
    if interest.scn_hash is None:
        return ScnResult.NOT_APPLICABLE
    if content_hash(obj) == interest.scn_hash:
        return ScnResult.SCN_MATCH
    return ScnResult.SCN_MISS


def accept_content(interest: Interest, obj: ContentObject) -> tuple[bool, bool]:
    """Router acceptance rule for content answering ``interest``.

    Returns ``(accepted, signature_checked)``. SCN interests accept on hash
    match; a mismatching cNACK falls back to IKB. Interests without a key
    binding give the router nothing to check against, so content is passed.
    """
    scn = verify_scn(interest, obj)
    if scn is ScnResult.SCN_MATCH:
        return True, False
    if scn is ScnResult.SCN_MISS:
        if obj.content_type == ContentType.CNACK:
            return verify_ikb(interest, obj), True
        return False, False
    if interest.key_digest is None:
        return True, False
    if digest(obj.producer_key) != interest.key_digest:
        return False, False
    return verify_content(obj), True


def mac_fnack(fnack: FNack, key: LinkKey) -> FNack:
    unsigned = replace(fnack, auth_tag=b"")
    tag = hmac.new(key.secret, signing_input(unsigned), hashlib.sha256).digest()
    return replace(unsigned, auth_tag=tag)


def verify_fnack(fnack: FNack, key: LinkKey, now: float, window: TimeWindow) -> bool:
    expected = hmac.new(key.secret, signing_input(fnack), hashlib.sha256).digest()
    if not hmac.compare_digest(expected, fnack.auth_tag):
        return False
    return abs(fnack.timestamp - now) <= window.width


def check_cnack_times(
    obj: ContentObject, now: float, window: TimeWindow, clock_skew: float = 0.0
) -> bool:
    if not (now - window.width <= obj.timestamp <= now + clock_skew):
        return False
    return obj.expiration is None or now < obj.expiration


class KeyRegistry:
    """Static name-prefix -> key pair mapping plus per-link shared secrets."""

    def __init__(self, seed: Union[int, str] = 0, scheme: str = "sim"):
        self.seed = seed
        self.scheme = scheme
        self._producers = NameTrie()
        self._links: dict[tuple[str, str], LinkKey] = {}

    def register_producer(self, prefix: Name, key_id: str) -> KeyPair:
        key = KeyPair.generate(f"{self.seed}:{key_id}", self.scheme)
        self._producers[prefix] = key
        return key

    def producer_key(self, name: Name) -> Optional[KeyPair]:
        hit = self._producers.longest_prefix(name)
        return None if hit is None else hit[1]

    def link_key(self, a: str, b: str) -> LinkKey:
        ident = tuple(sorted((a, b)))
        key = self._links.get(ident)
        if key is None:
            key = self._links[ident] = LinkKey.derive(ident, self.seed)
        return key
