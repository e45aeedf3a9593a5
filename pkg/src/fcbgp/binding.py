"""Forward-binding messages and the data-plane filter table they drive.

A binding ties traffic (src-prefix, dst-prefix) to an FC-certified
forwarding path (on-path form) or, with an empty FC list, tells an AS it
should never carry that traffic (off-path form).

Version fields:

``ver``
    master version of the binding for the pair. ``-1`` withdraws, ``0``
    marks a startup binding whose FC list is not verified, ``>= 1`` normal.
``ver_sub``
    bumped by an on-path AS that re-signs after a partial path change.
``seq``
    the issuer's own monotone message counter. Binding version views track
    this number. A source sets ``ver = seq`` on everything it issues, so the
    master version of a pair is monotone too.

Wire form (after the common container header, message type 2)::

    src-prefix | dst-prefix | ver(i32) | ver-sub(u32) | seq(u32) | issuer(u32)
    | fc-count(2) | FC record* | sig-len(2) | signature

The signature covers every octet before ``sig-len``.
"""

from __future__ import annotations

import enum
import hashlib
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

from fcbgp.fc_core import ForwardingCommitment, verify_fc
from fcbgp.trust_base import NULL_AS, Prefix, SigningKey, TrustBase, UnknownASError
from fcbgp.wire_codec import (
    MsgType,
    Reader,
    encode_fc_records,
    encode_header,
    encode_prefix,
    read_fc_records,
    read_header,
    read_prefix,
)

VER_WITHDRAW = -1
VER_STARTUP = 0


class OwnershipError(ValueError):
    pass


@dataclass(frozen=True)
class BindingMessage:
    src_prefix: Prefix
    dst_prefix: Prefix
    fc_list: tuple[ForwardingCommitment, ...]
    ver: int
    ver_sub: int
    issuer: int
    seq: int
    signature: bytes = field(default=b"", repr=False)

    @property
    def off_path(self) -> bool:
        return not self.fc_list

    @property
    def withdrawal(self) -> bool:
        return self.ver == VER_WITHDRAW

    @property
    def startup(self) -> bool:
        return self.ver == VER_STARTUP

    @property
    def pair(self) -> tuple[Prefix, Prefix]:
        return (self.src_prefix, self.dst_prefix)

    @property
    def version(self) -> tuple[int, int]:
        return (self.ver, self.ver_sub)

    def signed_bytes(self) -> bytes:
        return (encode_header(MsgType.BINDING)
                + encode_prefix(self.src_prefix) + encode_prefix(self.dst_prefix)
                + struct.pack(">iIII", self.ver, self.ver_sub, self.seq, self.issuer)
                + struct.pack(">H", len(self.fc_list))
                + encode_fc_records(self.fc_list))

    def digest(self) -> bytes:
        return hashlib.sha256(self.signed_bytes()).digest()

    def signed(self, key: SigningKey) -> "BindingMessage":
        return replace(self, signature=key.sign(self.digest()))


def encode_binding(msg: BindingMessage) -> bytes:
    return msg.signed_bytes() + struct.pack(">H", len(msg.signature)) + msg.signature


def read_binding(r: Reader) -> BindingMessage:
    src = read_prefix(r)
    dst = read_prefix(r)
    ver = r.i32("ver")
    ver_sub = r.u32("ver-sub")
    seq = r.u32("seq")
    issuer = r.u32("issuer")
    n = r.u16("FC count")
    fcs = []
    for _ in range(n):
        start = r.pos
        fixed = r.take(14, "FC record")
        siglen = struct.unpack(">H", fixed[12:])[0]
        r.pos = start
        fcs.extend(read_fc_records(r, start + 14 + siglen))
    siglen = r.u16("signature length")
    sig = r.take(siglen, "signature")
    return BindingMessage(src, dst, tuple(fcs), ver, ver_sub, issuer, seq, sig)


def decode_binding(data: bytes) -> BindingMessage:
    r = Reader(bytes(data))
    read_header(r, MsgType.BINDING)
    msg = read_binding(r)
    r.expect_end()
    return msg


# -- construction -------------------------------------------------------------


def _check_owner(trust: TrustBase | None, asn: int, prefix: Prefix):
    if trust is not None and trust.lookup_owner(prefix) != asn:
        raise OwnershipError(f"AS{asn} does not own {prefix}")


def make_onpath_binding(self_asn: int, src_prefix: Prefix, dst_prefix: Prefix,
                        fcs: Sequence[ForwardingCommitment], ver: int, ver_sub: int,
                        key: SigningKey, *, seq: int | None = None,
                        trust: TrustBase | None = None) -> BindingMessage:
    """Sign an on-path binding. ``fcs`` runs from the hop nearest the source
    toward the destination origin."""
    _check_owner(trust, self_asn, src_prefix)
    if seq is None:
        seq = max(ver, 0)
    msg = BindingMessage(src_prefix, dst_prefix, tuple(fcs), ver, ver_sub, self_asn, seq)
    return msg.signed(key)


def make_offpath_binding(self_asn: int, src_prefix: Prefix, dst_prefix: Prefix,
                         ver: int, ver_sub: int, key: SigningKey, *, seq: int | None = None,
                         trust: TrustBase | None = None) -> BindingMessage:
    return make_onpath_binding(self_asn, src_prefix, dst_prefix, (), ver, ver_sub, key,
                               seq=seq, trust=trust)


def binding_fc_list(route_fcs: Sequence[ForwardingCommitment]) -> tuple[ForwardingCommitment, ...]:
    """Route FCs are stored origin-first; bindings list them source-first."""
    return tuple(reversed(route_fcs))


def startup_fc_list(as_path: Sequence[int], source: int) -> tuple[ForwardingCommitment, ...]:
    """Unsigned placeholder FCs for the reversed AS path of a pre-existing route."""
    hops = []
    for i, cur in enumerate(as_path):
        prev = as_path[i - 1] if i else NULL_AS
        nxt = as_path[i + 1] if i + 1 < len(as_path) else source
        hops.append(ForwardingCommitment(prev, cur, nxt, b""))
    return tuple(reversed(hops))


def subversion_update(issuer: int, original: BindingMessage,
                      new_tail_fcs: Sequence[ForwardingCommitment], key: SigningKey,
                      *, seq: int) -> BindingMessage:
    """Re-sign ``original`` after the issuer's own hop changed.

    FCs for hops between the traffic source and the issuer are kept as
    they are; ``new_tail_fcs`` starts with the issuer's new FC and runs to
    the destination origin.
    """
    idx = next((i for i, fc in enumerate(original.fc_list) if fc.current == issuer), None)
    if idx is None:
        raise ValueError(f"AS{issuer} is not on the bound path")
    tail = tuple(new_tail_fcs)
    if not tail or tail[0].current != issuer:
        raise ValueError("new tail must start with the issuer's own FC")
    msg = BindingMessage(original.src_prefix, original.dst_prefix,
                         original.fc_list[:idx] + tail, original.ver, original.ver_sub + 1,
                         issuer, seq)
    return msg.signed(key)


# -- verification -----------------------------------------------------------


class Status(enum.Enum):
    ACCEPTED_ON_PATH = "accepted-on-path"
    ACCEPTED_OFF_PATH = "accepted-off-path"
    REJECTED = "rejected"


class Reason(enum.Enum):
    BAD_SIGNATURE = "bad-signature"
    NOT_OWNER = "not-owner"
    NO_SELF_FC = "no-self-fc"
    BAD_FC = "bad-fc"


class VerifyOutcome(NamedTuple):
    status: Status
    reason: Reason | None = None
    self_fc: ForwardingCommitment | None = None

    @property
    def accepted(self) -> bool:
        return self.status != Status.REJECTED


def authentic(msg: BindingMessage, trust: TrustBase) -> Reason | None:
    """Checks (i) signature and (ii) issuer authority. None when both hold."""
    try:
        if not trust.verify_key(msg.issuer, msg.signature, msg.digest()):
            return Reason.BAD_SIGNATURE
    except UnknownASError:
        return Reason.BAD_SIGNATURE
    if trust.lookup_owner(msg.src_prefix) == msg.issuer:
        return None
    # a subversion may come from an AS on the bound path
    if msg.ver_sub > 0 and any(fc.current == msg.issuer for fc in msg.fc_list):
        return None
    return Reason.NOT_OWNER


def _chain_ok(fcs: Sequence[ForwardingCommitment]) -> bool:
    """Adjacent FCs must agree on their shared link. Legacy hops leave gaps,
    so FCs that do not touch are not compared."""
    for near, far in zip(fcs, fcs[1:]):
        if near.previous == far.current and far.next != near.current:
            return False
        if far.next == near.current and near.previous != far.current:
            return False
    return True


def verify_binding(msg: BindingMessage, self_asn: int, trust: TrustBase,
                   verify: Callable[[ForwardingCommitment, Prefix], bool] | None = None,
                   *, auth: Callable[[BindingMessage], Reason | None] | None = None
                   ) -> VerifyOutcome:
    reason = auth(msg) if auth else authentic(msg, trust)
    if reason is not None:
        return VerifyOutcome(Status.REJECTED, reason)
    if msg.off_path:
        return VerifyOutcome(Status.ACCEPTED_OFF_PATH)
    mine = next((fc for fc in msg.fc_list if fc.current == self_asn), None)
    if mine is None:
        return VerifyOutcome(Status.REJECTED, Reason.NO_SELF_FC)
    if not _chain_ok(msg.fc_list):
        return VerifyOutcome(Status.REJECTED, Reason.BAD_FC)
    if not msg.startup:
        verify = verify or (lambda fc, p: verify_fc(fc, p, trust))
        if not all(verify(fc, msg.dst_prefix) for fc in msg.fc_list):
            return VerifyOutcome(Status.REJECTED, Reason.BAD_FC)
    return VerifyOutcome(Status.ACCEPTED_ON_PATH, self_fc=mine)


# -- filters ---------------------------------------------------------------


class Mode(enum.Enum):
    ON_PATH = "on-path"
    OFF_PATH = "off-path"


@dataclass(frozen=True)
class FilterRule:
    src_prefix: Prefix
    dst_prefix: Prefix
    mode: Mode
    expected_inbound: int | None
    ver: int
    ver_sub: int
    issuer: int

    @property
    def order(self) -> tuple[int, int, bool]:
        # on-path wins a tie so the two forms of one binding commute
        return (self.ver, self.ver_sub, self.mode == Mode.ON_PATH)

    def to_line(self) -> str:
        inbound = "-" if self.expected_inbound is None else str(self.expected_inbound)
        return (f"{self.src_prefix} {self.dst_prefix} {self.mode.value} {inbound} "
                f"{self.ver}.{self.ver_sub} AS{self.issuer}")


class Install(NamedTuple):
    action: str  # installed | removed | stale | conflict | unchanged
    rule: FilterRule | None


def rule_for(msg: BindingMessage, outcome: VerifyOutcome) -> FilterRule:
    if outcome.status == Status.ACCEPTED_ON_PATH:
        # traffic flows origin-ward, so it reaches us from our FC's next AS
        return FilterRule(msg.src_prefix, msg.dst_prefix, Mode.ON_PATH,
                          outcome.self_fc.next, msg.ver, msg.ver_sub, msg.issuer)
    return FilterRule(msg.src_prefix, msg.dst_prefix, Mode.OFF_PATH, None,
                      msg.ver, msg.ver_sub, msg.issuer)


class RuleTable:
    """Exact-match (src, dst) filter table.

    One writer at a time; readers see either the old or the new rule.
    """

    def __init__(self):
        self._rules: dict[tuple[Prefix, Prefix], FilterRule] = {}
        self._withdrawn: dict[tuple[Prefix, Prefix], int] = {}
        self._lock = threading.Lock()

    def get(self, src: Prefix, dst: Prefix) -> FilterRule | None:
        return self._rules.get((src, dst))

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self):
        return iter(sorted(self._rules.values(), key=lambda r: (str(r.src_prefix),
                                                                 str(r.dst_prefix))))

    def install(self, msg: BindingMessage, outcome: VerifyOutcome) -> Install:
        if not outcome.accepted:
            raise ValueError(f"cannot install a rejected binding ({outcome.reason})")
        pair = msg.pair
        with self._lock:
            cur = self._rules.get(pair)
            if msg.withdrawal:
                # seq of a source-issued message is comparable with master versions
                if msg.seq <= self._withdrawn.get(pair, VER_WITHDRAW):
                    return Install("stale", cur)
                self._withdrawn[pair] = msg.seq
                if cur is not None and cur.ver < msg.seq:
                    del self._rules[pair]
                    return Install("removed", None)
                return Install("stale", cur)
            if msg.ver < self._withdrawn.get(pair, VER_WITHDRAW):
                return Install("stale", cur)
            new = rule_for(msg, outcome)
            if cur is not None:
                if new.order < cur.order:
                    return Install("stale", cur)
                if new.order == cur.order:
                    if new == cur:
                        return Install("unchanged", cur)
                    return Install("conflict", cur)
            self._rules[pair] = new
            return Install("installed", new)

    def install_local(self, src: Prefix, dst: Prefix, self_asn: int, ver: int) -> FilterRule:
        """Source-side rule: the traffic may only originate locally."""
        rule = FilterRule(src, dst, Mode.ON_PATH, self_asn, ver, 0, self_asn)
        with self._lock:
            cur = self._rules.get((src, dst))
            if cur is None or rule.order >= cur.order:
                self._rules[(src, dst)] = rule
        return self._rules[(src, dst)]

    def dump(self) -> str:
        return "".join(r.to_line() + "\n" for r in self)


def install_filter(table: RuleTable, msg: BindingMessage, outcome: VerifyOutcome) -> Install:
    return table.install(msg, outcome)


class Packet(NamedTuple):
    src_prefix: Prefix
    dst_prefix: Prefix
    inbound: int  # neighbor it arrived from; the local AS number when self-originated


class Verdict(NamedTuple):
    forward: bool
    reason: str | None = None


FORWARD = Verdict(True)


def check_packet(pkt: Packet, rules: RuleTable) -> Verdict:
    rule = rules.get(pkt.src_prefix, pkt.dst_prefix)
    if rule is None:
        return FORWARD
    if rule.mode == Mode.OFF_PATH:
        return Verdict(False, "off-path")
    if pkt.inbound == rule.expected_inbound:
        return FORWARD
    return Verdict(False, "wrong-inbound")


class BindingEngine:
    """Per-AS binding state: issue counter, verifier and filter table."""

    def __init__(self, asn: int, trust: TrustBase, key: SigningKey | None = None, *,
                 auth_cache: dict | None = None):
        self.asn = asn
        self.trust = trust
        self.key = key
        self.rules = RuleTable()
        self.seq = 0
        self._fc_memo: dict[tuple, bool] = {}
        # authenticity is independent of the receiver, so simulations share this
        self._auth_cache = auth_cache if auth_cache is not None else {}

    def _authentic(self, msg: BindingMessage) -> Reason | None:
        k = (msg.digest(), msg.signature)
        if k not in self._auth_cache:
            self._auth_cache[k] = authentic(msg, self.trust)
        return self._auth_cache[k]

    def _verify_fc(self, fc: ForwardingCommitment, prefix: Prefix) -> bool:
        k = (fc.hops, fc.signature, prefix)
        if k not in self._fc_memo:
            self._fc_memo[k] = verify_fc(fc, prefix, self.trust)
        return self._fc_memo[k]

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def issue(self, src: Prefix, dst: Prefix, fcs: Sequence[ForwardingCommitment] = ()
              ) -> tuple[BindingMessage, BindingMessage]:
        """On-path and off-path forms of one binding, sharing a master version.

        Each form is its own message with its own ``seq``.
        """
        ver = self.next_seq()
        on = make_onpath_binding(self.asn, src, dst, fcs, ver, 0, self.key, seq=ver,
                                 trust=self.trust)
        off = make_offpath_binding(self.asn, src, dst, ver, 0, self.key, seq=self.next_seq(),
                                   trust=self.trust)
        self.rules.install_local(src, dst, self.asn, ver)
        return on, off

    def issue_startup(self, src: Prefix, dst: Prefix, as_path: Sequence[int]) -> BindingMessage:
        seq = self.next_seq()
        msg = make_onpath_binding(self.asn, src, dst, startup_fc_list(as_path, self.asn),
                                  VER_STARTUP, 0, self.key, seq=seq, trust=self.trust)
        self.rules.install_local(src, dst, self.asn, VER_STARTUP)
        return msg

    def issue_withdrawal(self, src: Prefix, dst: Prefix) -> BindingMessage:
        seq = self.next_seq()
        msg = make_offpath_binding(self.asn, src, dst, VER_WITHDRAW, 0, self.key, seq=seq,
                                   trust=self.trust)
        self.receive(msg)
        return msg

    def issue_subversion(self, original: BindingMessage,
                         new_tail: Sequence[ForwardingCommitment]) -> BindingMessage:
        return subversion_update(self.asn, original, new_tail, self.key, seq=self.next_seq())

    def verify(self, msg: BindingMessage) -> VerifyOutcome:
        return verify_binding(msg, self.asn, self.trust, self._verify_fc, auth=self._authentic)

    def receive(self, msg: BindingMessage) -> tuple[VerifyOutcome, Install | None]:
        outcome = self.verify(msg)
        if not outcome.accepted:
            return outcome, None
        return outcome, self.rules.install(msg, outcome)

    def check(self, pkt: Packet) -> Verdict:
        return check_packet(pkt, self.rules)
