"""In-process stand-in for RPKI.

Maps AS numbers to owned prefixes, verification keys and FC-BGP deployment
status. Built once, then shared read-only by every simulated AS.

Trust file grammar (one record per line, ``#`` starts a comment)::

    asn|prefix[,prefix...]|deployed|pubkey

``deployed`` is ``0`` or ``1``; ``pubkey`` is the hex of a raw 32-byte
Ed25519 public key, ``auto`` to derive a deterministic key pair from the
load seed, or ``-`` for a legacy AS without a key. The prefix field may be
empty.
"""

from __future__ import annotations

import hashlib
import ipaddress
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

Prefix = ipaddress.IPv4Network | ipaddress.IPv6Network

NULL_AS = 0
MAX_ASN = 0xFFFFFFFF


class TrustError(Exception):
    """Base error for trust base construction and lookups."""


class UnknownASError(TrustError):
    pass


class TrustFileError(TrustError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def parse_prefix(text: str) -> Prefix:
    """Parse a prefix in canonical form; host bits must be zero."""
    return ipaddress.ip_network(text.strip(), strict=True)


def check_asn(asn: int, *, allow_null: bool = False) -> int:
    if not isinstance(asn, int) or isinstance(asn, bool):
        raise TypeError(f"AS number must be int, got {type(asn).__name__}")
    if not 0 <= asn <= MAX_ASN:
        raise ValueError(f"AS number out of 32-bit range: {asn}")
    if asn == NULL_AS and not allow_null:
        raise ValueError("AS 0 is reserved for the Null previous hop")
    return asn


class SignatureScheme(Protocol):
    """Pluggable sign/verify backend. Signatures are opaque bytes elsewhere."""

    name: str

    def keypair_from_seed(self, seed: bytes) -> tuple[object, bytes]: ...

    def sign(self, private_key: object, message: bytes) -> bytes: ...

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool: ...


class Ed25519Scheme:
    """Deterministic Ed25519 signatures (RFC 8032)."""

    name = "ed25519"

    def __init__(self):
        self._loaded: dict[bytes, Ed25519PublicKey] = {}

    def keypair_from_seed(self, seed: bytes) -> tuple[Ed25519PrivateKey, bytes]:
        private = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
        public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return private, public

    def sign(self, private_key: Ed25519PrivateKey, message: bytes) -> bytes:
        return private_key.sign(message)

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool:
        key = self._loaded.get(public_key)
        if key is None:
            try:
                key = Ed25519PublicKey.from_public_bytes(public_key)
            except ValueError:
                return False
            self._loaded[public_key] = key
        try:
            key.verify(signature, message)
        except InvalidSignature:
            return False
        return True


DEFAULT_SCHEME = Ed25519Scheme()


@dataclass(frozen=True)
class SigningKey:
    """Private half held by the AS itself; never stored in the trust base."""

    asn: int
    private: object = field(repr=False)
    scheme: SignatureScheme = field(default=DEFAULT_SCHEME, repr=False, compare=False)

    def sign(self, message: bytes) -> bytes:
        return self.scheme.sign(self.private, message)


@dataclass(frozen=True)
class TrustRecord:
    asn: int
    prefixes: frozenset[Prefix]
    public_key: bytes | None
    deployed: bool


def derive_key(asn: int, seed: int | bytes = 0,
               scheme: SignatureScheme = DEFAULT_SCHEME) -> tuple[SigningKey, bytes]:
    """Deterministic key pair for ``asn`` under ``seed``."""
    if isinstance(seed, int):
        seed = seed.to_bytes(8, "big", signed=True)
    private, public = scheme.keypair_from_seed(b"fcbgp-key|" + seed + asn.to_bytes(4, "big"))
    return SigningKey(asn, private, scheme), public


class TrustBase:
    """Authoritative AS -> (prefixes, key, deployment) map.

    Mutation is only allowed until :meth:`freeze`; simulations freeze the
    base before handing it to speakers.
    """

    def __init__(self, scheme: SignatureScheme = DEFAULT_SCHEME):
        self.scheme = scheme
        self._records: dict[int, TrustRecord] = {}
        self._owner: dict[Prefix, int] = {}
        self._frozen = False

    def register(self, asn: int, prefixes: Iterable[Prefix | str] = (), *,
                 deployed: bool, public_key: bytes | None = None) -> TrustRecord:
        if self._frozen:
            raise TrustError("trust base is frozen")
        check_asn(asn)
        if asn in self._records:
            raise TrustError(f"AS{asn} already registered")
        if deployed and public_key is None:
            raise TrustError(f"deployed AS{asn} needs a public key")
        pfx = frozenset(parse_prefix(p) if isinstance(p, str) else p for p in prefixes)
        for p in pfx:
            if p in self._owner:
                raise TrustError(f"{p} already owned by AS{self._owner[p]}")
        for p in pfx:
            self._owner[p] = asn
        rec = TrustRecord(asn, pfx, public_key, bool(deployed))
        self._records[asn] = rec
        return rec

    def register_generated(self, asn: int, prefixes: Iterable[Prefix | str] = (), *,
                           deployed: bool, seed: int | bytes = 0) -> SigningKey:
        """Register ``asn`` with a derived key pair and return the private half."""
        key, public = derive_key(asn, seed, self.scheme)
        self.register(asn, prefixes, deployed=deployed, public_key=public)
        return key

    def freeze(self) -> "TrustBase":
        self._frozen = True
        return self

    def __contains__(self, asn: int) -> bool:
        return asn in self._records

    def __iter__(self):
        return iter(sorted(self._records))

    def __len__(self) -> int:
        return len(self._records)

    def record(self, asn: int) -> TrustRecord:
        try:
            return self._records[asn]
        except KeyError:
            raise UnknownASError(f"AS{asn} not registered") from None

    def lookup_owner(self, prefix: Prefix) -> int | None:
        return self._owner.get(prefix)

    def is_deployed(self, asn: int) -> bool:
        rec = self._records.get(asn)
        return rec is not None and rec.deployed

    def deployed_ases(self) -> list[int]:
        return sorted(a for a, r in self._records.items() if r.deployed)

    def verify_key(self, asn: int, signature: bytes, digest: bytes) -> bool:
        rec = self.record(asn)
        if rec.public_key is None:
            return False
        return self.scheme.verify(rec.public_key, signature, digest)


def load_trust_file(path: str | Path, *, seed: int = 0,
                    scheme: SignatureScheme = DEFAULT_SCHEME
                    ) -> tuple[TrustBase, dict[int, SigningKey]]:
    """Load a trust file. Returns the frozen base plus any auto-generated keys."""
    return parse_trust_lines(Path(path).read_text().splitlines(), seed=seed, scheme=scheme)


def parse_trust_lines(lines: Iterable[str], *, seed: int = 0,
                      scheme: SignatureScheme = DEFAULT_SCHEME
                      ) -> tuple[TrustBase, dict[int, SigningKey]]:
    trust = TrustBase(scheme)
    keys: dict[int, SigningKey] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("|")
        if len(parts) != 4:
            raise TrustFileError(lineno, f"expected 4 '|' separated fields, got {len(parts)}")
        asn_s, pfx_s, dep_s, key_s = (p.strip() for p in parts)
        try:
            asn = check_asn(int(asn_s))
            prefixes = [parse_prefix(p) for p in pfx_s.split(",") if p.strip()]
        except ValueError as exc:
            raise TrustFileError(lineno, str(exc)) from None
        if dep_s not in ("0", "1"):
            raise TrustFileError(lineno, f"deployed flag must be 0 or 1, got {dep_s!r}")
        try:
            if key_s == "auto":
                keys[asn] = trust.register_generated(asn, prefixes, deployed=dep_s == "1",
                                                     seed=seed)
            else:
                public = None if key_s in ("-", "") else bytes.fromhex(key_s)
                trust.register(asn, prefixes, deployed=dep_s == "1", public_key=public)
        except (TrustError, ValueError) as exc:
            raise TrustFileError(lineno, str(exc)) from None
    return trust.freeze(), keys


def dump_trust_lines(trust: TrustBase) -> list[str]:
    out = []
    for asn in trust:
        rec = trust.record(asn)
        pfx = ",".join(str(p) for p in sorted(rec.prefixes, key=_prefix_sort_key))
        key = rec.public_key.hex() if rec.public_key else "-"
        out.append(f"{asn}|{pfx}|{int(rec.deployed)}|{key}")
    return out


def _prefix_sort_key(p: Prefix):
    return (p.version, int(p.network_address), p.prefixlen)
