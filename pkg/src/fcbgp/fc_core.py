"""Forwarding Commitments: per-pathlet signed routing intent.

An FC carries (previous, current, next) and a signature by ``current`` over
the SHA-256 digest of the canonical pathlet encoding::

    previous(4) || current(4) || next(4) || prefix-address(4|16) || masklen(1)

AS numbers are big-endian. ``previous == 0`` marks the origin pathlet. The
prefix is never carried inside an FC; it comes from the enclosing update.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from fcbgp.trust_base import NULL_AS, Prefix, SigningKey, TrustBase, UnknownASError, check_asn

DIGEST_NAME = "sha256"


class SignerMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Pathlet:
    previous: int
    current: int
    next: int
    prefix: Prefix

    def __post_init__(self):
        check_asn(self.previous, allow_null=True)
        check_asn(self.current)
        check_asn(self.next)
        if self.current == self.next:
            raise ValueError("pathlet current and next AS must differ")
        if self.previous == self.current:
            raise ValueError("pathlet previous and current AS must differ")

    @property
    def hops(self) -> tuple[int, int, int]:
        return (self.previous, self.current, self.next)


def canonical_bytes(previous: int, current: int, next_: int, prefix: Prefix) -> bytes:
    return (struct.pack(">III", previous, current, next_)
            + prefix.network_address.packed + bytes([prefix.prefixlen]))


def canonical_digest(pathlet: Pathlet) -> bytes:
    return hashlib.sha256(canonical_bytes(*pathlet.hops, pathlet.prefix)).digest()


@dataclass(frozen=True)
class ForwardingCommitment:
    previous: int
    current: int
    next: int
    signature: bytes = field(repr=False)

    @property
    def hops(self) -> tuple[int, int, int]:
        return (self.previous, self.current, self.next)

    def pathlet(self, prefix: Prefix) -> Pathlet:
        return Pathlet(self.previous, self.current, self.next, prefix)

    def to_text(self) -> str:
        return f"{self.previous}:{self.current}:{self.next}:{self.signature.hex()}"

    @classmethod
    def from_text(cls, text: str) -> "ForwardingCommitment":
        try:
            prev, cur, nxt, sig = text.strip().split(":")
            return cls(int(prev), int(cur), int(nxt), bytes.fromhex(sig))
        except ValueError:
            raise ValueError(f"bad FC text form: {text!r}") from None

    def __str__(self) -> str:
        prev = "Null" if self.previous == NULL_AS else str(self.previous)
        return f"F{{{prev},{self.current},{self.next}}}"


def sign_fc(signer: int, pathlet: Pathlet, key: SigningKey) -> ForwardingCommitment:
    if signer != pathlet.current:
        raise SignerMismatchError(
            f"AS{signer} cannot sign a pathlet whose current AS is {pathlet.current}")
    sig = key.sign(canonical_digest(pathlet))
    return ForwardingCommitment(pathlet.previous, pathlet.current, pathlet.next, sig)


def verify_fc(fc: ForwardingCommitment, prefix: Prefix, trust: TrustBase) -> bool:
    try:
        pathlet = fc.pathlet(prefix)
    except ValueError:
        return False
    try:
        return trust.verify_key(fc.current, fc.signature, canonical_digest(pathlet))
    except UnknownASError:
        return False


class FcCache:
    """Reuses FCs for an unchanged (prev, self, next, prefix) routing decision."""

    def __init__(self, asn: int, key: SigningKey):
        self.asn = asn
        self.key = key
        self._fcs: dict[tuple[int, int, Prefix], ForwardingCommitment] = {}
        self.signed = 0
        self.hits = 0

    def get(self, previous: int, next_: int, prefix: Prefix) -> ForwardingCommitment:
        k = (previous, next_, prefix)
        fc = self._fcs.get(k)
        if fc is None:
            fc = sign_fc(self.asn, Pathlet(previous, self.asn, next_, prefix), self.key)
            self._fcs[k] = fc
            self.signed += 1
        else:
            self.hits += 1
        return fc


class FcVerifier:
    """Memoizes verification results; validity is a pure function of its inputs."""

    def __init__(self, trust: TrustBase):
        self.trust = trust
        self._memo: dict[tuple, bool] = {}
        self.verified = 0

    def __call__(self, fc: ForwardingCommitment, prefix: Prefix) -> bool:
        k = (fc.hops, fc.signature, prefix)
        ok = self._memo.get(k)
        if ok is None:
            ok = verify_fc(fc, prefix, self.trust)
            self._memo[k] = ok
            self.verified += 1
        return ok
