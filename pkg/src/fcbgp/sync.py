"""Binding version views and the periodic consistency check.

Every AS keeps, per issuing AS, the highest binding ``seq`` it holds
together with all lower ones (a contiguous watermark). Once per period a
round leader reliably broadcasts its view inside its region; members then
fetch what they miss from the leader, or tell the leader about newer
versions it lacks. After its round the leader forwards the post-check view
to every other member, which carries versions across regions.

Consistency-check payloads are views only: a list of (asn, ver) pairs.
Binding bodies travel in SUPPLY records, which belong to repair, and in
the direct binding broadcast.

Sync record wire form, after the common container header (type 3)::

    tag(1) | round(4) | leader(4) | sender(4) | payload-length(4) | payload
"""

from __future__ import annotations

import enum
import ipaddress
import random
import struct
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

from fcbgp.binding import (
    BindingEngine,
    BindingMessage,
    encode_binding,
    decode_binding,
    make_offpath_binding,
)
from fcbgp.events import EventLoop, SimEvent
from fcbgp.trust_base import Prefix, SigningKey, TrustBase
from fcbgp.wire_codec import MalformedMessageError, MsgType, Reader, encode_header, read_header

class PeriodWarning(UserWarning):
    """The check period is not longer than the observed check latency."""


# -- views -------------------------------------------------------------------


class BindingVersionView:
    """AS number -> latest contiguous binding version held."""

    def __init__(self, entries: dict[int, int] | None = None):
        self.entries: dict[int, int] = dict(entries or {})

    def get(self, asn: int) -> int:
        return self.entries.get(asn, 0)

    def raise_to(self, asn: int, ver: int):
        if ver > self.get(asn):
            self.entries[asn] = ver

    def copy(self) -> "BindingVersionView":
        return BindingVersionView(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BindingVersionView):
            return NotImplemented
        return ({a: v for a, v in self.entries.items() if v}
                == {a: v for a, v in other.entries.items() if v})

    def __repr__(self) -> str:
        return f"BVV({dict(sorted(self.entries.items()))})"

    def encode(self) -> bytes:
        items = sorted(self.entries.items())
        return struct.pack(">I", len(items)) + b"".join(struct.pack(">Ii", a, v) for a, v in items)

    @classmethod
    def decode(cls, data: bytes) -> "BindingVersionView":
        r = Reader(data)
        n = r.u32("view size")
        entries = {}
        for _ in range(n):
            pos = r.pos
            asn = r.u32("view AS")
            ver = r.i32("view version")
            if asn in entries:
                raise MalformedMessageError(pos, f"duplicate view entry for AS{asn}")
            entries[asn] = ver
        r.expect_end()
        return cls(entries)


def leader_for_round(v: int, members: Sequence[int]) -> int:
    if not members:
        raise ValueError("empty member list")
    return members[v % len(members)]


class SyncAction(NamedTuple):
    kind: str  # request-missing | send-newer
    asn: int
    lo: int
    hi: int
    to: int


def reconcile(local: BindingVersionView, delivered: BindingVersionView, self_asn: int,
              leader: int) -> list[SyncAction]:
    acts = []
    for asn in sorted(set(local.entries) | set(delivered.entries)):
        mine, theirs = local.get(asn), delivered.get(asn)
        if theirs > mine:
            acts.append(SyncAction("request-missing", asn, mine + 1, theirs, leader))
        elif theirs < mine:
            acts.append(SyncAction("send-newer", asn, mine, mine, leader))
    return acts


# -- wire records ---------------------------------------------------------


class Tag(enum.IntEnum):
    SEND = 1
    ECHO = 2
    READY = 3
    REQUEST = 4
    SUPPLY = 5
    NEWER = 6
    FORWARD = 7


VIEW_TAGS = frozenset({Tag.SEND, Tag.ECHO, Tag.READY, Tag.NEWER, Tag.FORWARD})


@dataclass(frozen=True)
class SyncRecord:
    tag: Tag
    round: int
    leader: int
    sender: int
    payload: bytes = b""


def encode_sync_record(rec: SyncRecord) -> bytes:
    return (encode_header(MsgType.SYNC)
            + struct.pack(">BIIII", rec.tag, rec.round, rec.leader, rec.sender, len(rec.payload))
            + rec.payload)


def read_sync_record(r: Reader) -> SyncRecord:
    pos = r.pos
    try:
        tag = Tag(r.u8("sync tag"))
    except ValueError:
        raise MalformedMessageError(pos, "unknown sync tag") from None
    rnd = r.u32("round")
    leader = r.u32("leader")
    sender = r.u32("sender")
    n = r.u32("payload length")
    return SyncRecord(tag, rnd, leader, sender, r.take(n, "sync payload"))


def decode_sync_record(data: bytes) -> SyncRecord:
    r = Reader(bytes(data))
    read_header(r, MsgType.SYNC)
    rec = read_sync_record(r)
    r.expect_end()
    return rec


def encode_ranges(ranges: Iterable[tuple[int, int, int]]) -> bytes:
    items = list(ranges)
    return struct.pack(">I", len(items)) + b"".join(struct.pack(">III", *x) for x in items)


def decode_ranges(data: bytes) -> list[tuple[int, int, int]]:
    r = Reader(data)
    out = [(r.u32("AS"), r.u32("low"), r.u32("high")) for _ in range(r.u32("range count"))]
    r.expect_end()
    return out


def encode_supply(msgs: Iterable[BindingMessage]) -> bytes:
    blobs = [encode_binding(m) for m in msgs]
    return struct.pack(">I", len(blobs)) + b"".join(struct.pack(">I", len(b)) + b for b in blobs)


def decode_supply(data: bytes) -> list[BindingMessage]:
    r = Reader(data)
    out = []
    for _ in range(r.u32("supply count")):
        out.append(decode_binding(r.take(r.u32("binding length"), "binding")))
    r.expect_end()
    return out


# -- reliable broadcast -------------------------------------------------------


def max_faults(n: int) -> int:
    return (n - 1) // 3


class RbcInstance:
    """One member's state for the broadcast of (round, leader).

    Echo on the first SEND, ready after ceil((n+f+1)/2) matching echoes or
    f+1 matching readys, deliver after 2f+1 matching readys. Only the first
    ECHO and first READY of each sender count.
    """

    def __init__(self, round_: int, leader: int, members: Sequence[int]):
        self.round = round_
        self.leader = leader
        self.members = frozenset(members)
        self.n = len(self.members)
        self.f = max_faults(self.n)
        self.echo_quorum = (self.n + self.f + 2) // 2
        self.sent_echo = False
        self.sent_ready = False
        self.delivered: bytes | None = None
        self._echoes: dict[bytes, set[int]] = defaultdict(set)
        self._readys: dict[bytes, set[int]] = defaultdict(set)
        self._echoed_by: set[int] = set()
        self._readied_by: set[int] = set()

    def on_message(self, tag: Tag, sender: int, payload: bytes
                   ) -> tuple[list[tuple[Tag, bytes]], bytes | None]:
        """Returns (records to send to every member, newly delivered payload)."""
        if sender not in self.members:
            return [], None
        out: list[tuple[Tag, bytes]] = []
        if tag == Tag.SEND:
            if sender == self.leader and not self.sent_echo:
                self.sent_echo = True
                out.append((Tag.ECHO, payload))
        elif tag == Tag.ECHO:
            if sender not in self._echoed_by:
                self._echoed_by.add(sender)
                self._echoes[payload].add(sender)
        elif tag == Tag.READY:
            if sender not in self._readied_by:
                self._readied_by.add(sender)
                self._readys[payload].add(sender)
        if not self.sent_ready and (len(self._echoes.get(payload, ())) >= self.echo_quorum
                                    or len(self._readys.get(payload, ())) >= self.f + 1):
            self.sent_ready = True
            out.append((Tag.READY, payload))
        if self.delivered is None and len(self._readys.get(payload, ())) >= 2 * self.f + 1:
            self.delivered = payload
            return out, payload
        return out, None


def rbc_broadcast(leader: int, payload: bytes, members: Sequence[int], *,
                  byzantine: dict[int, str] | None = None,
                  alt_payload: bytes | None = None,
                  alt_receivers: Iterable[int] = (),
                  seed: int = 0) -> dict[int, bytes | None]:
    """Run one broadcast under a random delivery order.

    ``byzantine`` maps members to ``silent`` or ``equivocate``. An
    equivocating leader sends ``alt_payload`` to ``alt_receivers`` and
    ``payload`` to the rest; an equivocating member echoes and readies
    every payload it sees. Returns the payload each correct member
    delivered, or None.
    """
    if leader not in members:
        raise ValueError("leader must be a member")
    byzantine = dict(byzantine or {})
    rng = random.Random(seed)
    alt_to = set(alt_receivers)
    inst = {m: RbcInstance(0, leader, members) for m in members if m not in byzantine}
    pool: list[tuple[int, int, Tag, bytes]] = []  # (dst, src, tag, payload)
    pushed: set[tuple[int, Tag, bytes]] = set()

    def bcast(src, tag, p):
        for dst in members:
            pool.append((dst, src, tag, p))

    mode = byzantine.get(leader)
    if mode is None:
        bcast(leader, Tag.SEND, payload)
    elif mode == "equivocate":
        for dst in members:
            p = alt_payload if dst in alt_to and alt_payload is not None else payload
            pool.append((dst, leader, Tag.SEND, p))
    delivered: dict[int, bytes | None] = {m: None for m in inst}
    while pool:
        dst, src, tag, p = pool.pop(rng.randrange(len(pool)))
        if dst in inst:
            out, got = inst[dst].on_message(tag, src, p)
            for t, q in out:
                bcast(dst, t, q)
            if got is not None:
                delivered[dst] = got
        elif byzantine.get(dst) == "equivocate" and tag in (Tag.SEND, Tag.ECHO):
            for t in (Tag.ECHO, Tag.READY):
                if (dst, t, p) not in pushed:
                    pushed.add((dst, t, p))
                    bcast(dst, t, p)
    return delivered


# -- nodes and network ---------------------------------------------------------


class SyncNode:
    """Binding store, view and per-round broadcast state of one AS."""

    def __init__(self, asn: int, region: Sequence[int], engine: BindingEngine,
                 behavior: str = "honest"):
        self.asn = asn
        self.region = list(region)
        self.engine = engine
        self.behavior = behavior
        self.store: dict[int, dict[int, BindingMessage]] = defaultdict(dict)
        self.view = BindingVersionView()
        self.rbc: dict[tuple[int, int], RbcInstance] = {}
        self.pushed: set[tuple[int, int, bytes]] = set()

    @property
    def honest(self) -> bool:
        return self.behavior == "honest"

    def holds(self, issuer: int, seq: int) -> bool:
        return seq in self.store.get(issuer, {})

    def accept(self, msg: BindingMessage) -> tuple[bool, str | None]:
        """Store an authentic binding and install its filter right away."""
        if self.holds(msg.issuer, msg.seq):
            return False, None
        if self.engine._authentic(msg) is not None:
            return False, None
        self.store[msg.issuer][msg.seq] = msg
        wm = self.view.get(msg.issuer)
        while wm + 1 in self.store[msg.issuer]:
            wm += 1
        self.view.raise_to(msg.issuer, wm)
        action = None
        if msg.issuer != self.asn:
            outcome, inst = self.engine.receive(msg)
            action = inst.action if inst else outcome.reason.value
        return True, action

    def messages(self, issuer: int, lo: int, hi: int) -> list[BindingMessage]:
        held = self.store.get(issuer, {})
        return [held[s] for s in range(lo, hi + 1) if s in held]

    def instance(self, round_: int, leader: int) -> RbcInstance:
        k = (round_, leader)
        if k not in self.rbc:
            self.rbc[k] = RbcInstance(round_, leader, self.region)
        return self.rbc[k]

    def store_digest(self) -> tuple:
        return tuple(sorted((i, s, m.signature) for i, d in self.store.items()
                            for s, m in d.items()))


@dataclass
class SyncConfig:
    period: int = 40
    max_delay: int = 5
    loss_rate: float = 0.0
    check_window: int | None = None
    seed: int = 0


@dataclass
class SyncResult:
    converged: bool
    rounds_after_issue: int | None
    avg_check_latency: float
    warnings: list[str] = field(default_factory=list)


class SyncNetwork:
    """Event-driven harness for bindings plus the consistency check."""

    def __init__(self, regions: Sequence[Sequence[int]], trust: TrustBase,
                 keys: dict[int, SigningKey], prefixes: dict[int, Prefix],
                 config: SyncConfig | None = None, *,
                 byzantine: dict[int, str] | None = None,
                 unreachable: Iterable[tuple[int, int]] = (),
                 on_send: Callable[[int, int, SyncRecord], None] | None = None,
                 loop: EventLoop | None = None, trace: list[dict] | None = None,
                 engines: dict[int, BindingEngine] | None = None,
                 max_rounds: int | None = None):
        self.config = config or SyncConfig()
        self.regions = [sorted(r) for r in regions]
        self.members = sorted(a for r in self.regions for a in r)
        if len(set(self.members)) != len(self.members):
            raise ValueError("regions must be disjoint")
        self.trust = trust
        self.keys = keys
        self.prefixes = prefixes
        self.byzantine = dict(byzantine or {})
        self.cut = {frozenset(p) for p in unreachable}
        self.on_send = on_send
        self.rng = random.Random(self.config.seed)
        self.loop = loop if loop is not None else EventLoop()
        self.max_rounds = max_rounds
        auth_cache: dict = {}
        self.nodes: dict[int, SyncNode] = {}
        for region in self.regions:
            for a in region:
                eng = (engines or {}).get(a) or BindingEngine(a, trust, keys.get(a),
                                                             auth_cache=auth_cache)
                self.nodes[a] = SyncNode(a, region, eng, self.byzantine.get(a, "honest"))
        self.trace: list[dict] = trace if trace is not None else []
        self.round = -1
        self._round_start: dict[int, int] = {}
        self.latencies: list[int] = []
        self.last_issue_at = 0
        self.next_round_at = 0
        self.check_window = self.config.check_window or max(1, self.config.period // 2)

    # -- transport ----------------------------------------------------------

    def _reachable(self, a: int, b: int) -> bool:
        return a == b or frozenset((a, b)) not in self.cut

    def _delay(self, a: int, b: int) -> int:
        return 0 if a == b else self.rng.randint(1, self.config.max_delay)

    def send(self, src: int, dst: int, rec: SyncRecord):
        if self.on_send:
            self.on_send(src, dst, rec)
        if self._reachable(src, dst):
            self.loop.schedule(self._delay(src, dst), dst, "deliver-sync",
                               encode_sync_record(rec))

    def multicast(self, src: int, dsts: Iterable[int], rec: SyncRecord):
        for d in dsts:
            self.send(src, d, rec)

    # -- bindings --------------------------------------------------------

    def issue(self, asn: int, dst_asn: int) -> BindingMessage:
        node = self.nodes[asn]
        seq = node.engine.next_seq()
        msg = make_offpath_binding(asn, self.prefixes[asn], self.prefixes[dst_asn], seq, 0,
                                   self.keys[asn], seq=seq)
        node.accept(msg)
        blob = encode_binding(msg)
        for d in self.members:
            if d == asn or not self._reachable(asn, d):
                continue
            if self.rng.random() < self.config.loss_rate:
                continue
            self.loop.schedule(self._delay(asn, d), d, "deliver-binding", blob)
        self.last_issue_at = max(self.last_issue_at, self.loop.now)
        return msg

    def schedule_issues(self, count: int, window: int, issuers: Iterable[int] | None = None):
        issuers = sorted(issuers if issuers is not None
                         else [a for a in self.members if self.nodes[a].honest])
        for a in issuers:
            others = [b for b in self.members if b != a]
            for _ in range(count):
                self.loop.schedule(self.rng.randrange(max(1, window)), a, "issue",
                                   meta=self.rng.choice(others))

    # -- rounds ---------------------------------------------------------

    def _start_round(self):
        self.round += 1
        v = self.round
        self._round_start[v] = self.loop.now
        self.trace.append({"time": self.loop.now, "event": "round", "round": v})
        for region in self.regions:
            leader = leader_for_round(v, region)
            node = self.nodes[leader]
            if node.behavior == "silent":
                continue
            payload = node.view.encode()
            if node.behavior == "equivocate":
                alt = BindingVersionView({a: v + 1 for a, v in node.view.entries.items()})
                half = region[len(region) // 2:]
                for d in region:
                    p = alt.encode() if d in half else payload
                    self.send(leader, d, SyncRecord(Tag.SEND, v, leader, leader, p))
                continue
            self.multicast(leader, region, SyncRecord(Tag.SEND, v, leader, leader, payload))

    def handle(self, ev: SimEvent):
        if ev.kind == "round":
            self._start_round()
            self.next_round_at = self.loop.now + self.config.period
            if self.max_rounds is None or self.round + 1 < self.max_rounds:
                self.loop.schedule(self.config.period, 0, "round")
            return
        node = self.nodes[ev.target]
        if ev.kind == "issue":
            if node.honest:
                self.issue(ev.target, ev.meta)
            return
        if node.behavior == "silent":
            return
        if ev.kind == "deliver-binding":
            self._accept(node, decode_binding(ev.payload), "broadcast")
        elif ev.kind == "deliver-sync":
            self._on_record(node, decode_sync_record(ev.payload))
        elif ev.kind == "postcheck":
            rec = SyncRecord(Tag.FORWARD, ev.meta, node.asn, node.asn, node.view.encode())
            self.multicast(node.asn, [m for m in self.members if m != node.asn], rec)

    def _accept(self, node: SyncNode, msg: BindingMessage, via: str):
        new, action = node.accept(msg)
        if new:
            self.trace.append({"time": self.loop.now, "event": "install", "as": node.asn,
                               "issuer": msg.issuer, "seq": msg.seq, "via": via,
                               "result": action})

    def _request(self, node: SyncNode, to: int, acts: list[SyncAction], rnd: int):
        wants = [(a.asn, a.lo, a.hi) for a in acts if a.kind == "request-missing"]
        if wants:
            self.send(node.asn, to, SyncRecord(Tag.REQUEST, rnd, to, node.asn,
                                               encode_ranges(wants)))
        newer = {a.asn: a.hi for a in acts if a.kind == "send-newer"}
        if newer:
            self.send(node.asn, to, SyncRecord(Tag.NEWER, rnd, to, node.asn,
                                               BindingVersionView(newer).encode()))

    def _on_record(self, node: SyncNode, rec: SyncRecord):
        if node.behavior == "equivocate":
            k = (rec.round, rec.leader, rec.payload)
            if rec.tag in (Tag.SEND, Tag.ECHO) and rec.leader in node.region \
                    and k not in node.pushed:
                node.pushed.add(k)
                for t in (Tag.ECHO, Tag.READY):
                    self.multicast(node.asn, node.region,
                                   SyncRecord(t, rec.round, rec.leader, node.asn, rec.payload))
            return
        if rec.tag in (Tag.SEND, Tag.ECHO, Tag.READY):
            if rec.leader not in node.region:
                return
            inst = node.instance(rec.round, rec.leader)
            out, got = inst.on_message(rec.tag, rec.sender, rec.payload)
            for t, p in out:
                self.multicast(node.asn, node.region,
                               SyncRecord(t, rec.round, rec.leader, node.asn, p))
            if got is not None:
                self._on_deliver(node, rec.round, rec.leader, got)
        elif rec.tag == Tag.REQUEST:
            msgs = [m for a, lo, hi in decode_ranges(rec.payload)
                    for m in node.messages(a, lo, hi)]
            if msgs:
                self.send(node.asn, rec.sender, SyncRecord(Tag.SUPPLY, rec.round, rec.leader,
                                                           node.asn, encode_supply(msgs)))
        elif rec.tag == Tag.SUPPLY:
            for m in decode_supply(rec.payload):
                self._accept(node, m, "repair")
        elif rec.tag == Tag.NEWER:
            theirs = BindingVersionView.decode(rec.payload)
            acts = [a for a in reconcile(node.view, theirs, node.asn, rec.sender)
                    if a.kind == "request-missing"]
            self._request(node, rec.sender, acts, rec.round)
        elif rec.tag == Tag.FORWARD:
            theirs = BindingVersionView.decode(rec.payload)
            self._request(node, rec.sender,
                          reconcile(node.view, theirs, node.asn, rec.sender), rec.round)

    def _on_deliver(self, node: SyncNode, rnd: int, leader: int, payload: bytes):
        start = self._round_start.get(rnd, self.loop.now)
        self.latencies.append(self.loop.now - start)
        self.trace.append({"time": self.loop.now, "event": "rbc-deliver", "as": node.asn,
                           "round": rnd, "leader": leader})
        if leader == node.asn:
            self.loop.schedule(self.check_window, node.asn, "postcheck", meta=rnd)
            return
        view = BindingVersionView.decode(payload)
        self._request(node, leader, reconcile(node.view, view, node.asn, leader), rnd)

    # -- driving ---------------------------------------------------------

    def honest_nodes(self) -> list[SyncNode]:
        return [self.nodes[a] for a in self.members if self.nodes[a].honest]

    def consistent(self) -> bool:
        nodes = self.honest_nodes()
        first = nodes[0]
        return all(n.view == first.view and n.store_digest() == first.store_digest()
                   for n in nodes[1:])

    def run_until(self, t: int):
        self.loop.run(self.handle, until=t)

    def start(self, first_at: int | None = None):
        """Arm the round timer; rounds then repeat every period."""
        self.next_round_at = first_at if first_at is not None else self.config.period
        self.loop.schedule(max(0, self.next_round_at - self.loop.now), 0, "round")

    def run_rounds(self, rounds: int) -> int | None:
        """Run up to ``rounds`` whole rounds; returns how many it took for the
        honest stores and views to agree, or None."""
        for k in range(1, rounds + 1):
            self.run_until(self.next_round_at + self.config.period - 1)
            if self.consistent():
                return k
        return None

    def avg_check_latency(self) -> float:
        return sum(self.latencies) / len(self.latencies) if self.latencies else 0.0


def region_sync(regions: Sequence[Sequence[int]], *, issues_per_node: int = 10,
                issue_window: int | None = None, max_rounds: int = 20,
                config: SyncConfig | None = None, byzantine: dict[int, str] | None = None,
                unreachable: Iterable[tuple[int, int]] = (),
                on_send: Callable[[int, int, SyncRecord], None] | None = None,
                network: SyncNetwork | None = None) -> tuple[SyncNetwork, SyncResult]:
    """Issue bindings from every honest node, then run check rounds until the
    honest stores agree. Rounds are counted from the first round boundary
    after the last issue."""
    config = config or SyncConfig()
    net = network or build_network(regions, config, byzantine=byzantine,
                                   unreachable=unreachable, on_send=on_send)
    window = issue_window if issue_window is not None else config.period
    net.schedule_issues(issues_per_node, window)
    net.start()
    net.run_until(min(window, net.next_round_at) - 1)
    rounds = net.run_rounds(max_rounds)
    notes = []
    lat = net.avg_check_latency()
    if lat >= config.period:
        msg = f"check period {config.period} does not exceed average check latency {lat:.1f}"
        warnings.warn(msg, PeriodWarning, stacklevel=2)
        notes.append(msg)
    return net, SyncResult(rounds is not None, rounds, lat, notes)


def build_network(regions: Sequence[Sequence[int]], config: SyncConfig | None = None, *,
                  byzantine: dict[int, str] | None = None,
                  unreachable: Iterable[tuple[int, int]] = (),
                  on_send: Callable[[int, int, SyncRecord], None] | None = None,
                  key_seed: int = 0) -> SyncNetwork:
    """Register every member with a derived key and a /24 of its own."""
    trust = TrustBase()
    keys, prefixes = {}, {}
    for a in sorted(x for r in regions for x in r):
        p = ipaddress.ip_network(f"10.{(a >> 8) & 0xFF}.{a & 0xFF}.0/24")
        prefixes[a] = p
        keys[a] = trust.register_generated(a, [p], deployed=True, seed=key_seed)
    trust.freeze()
    return SyncNetwork(regions, trust, keys, prefixes, config, byzantine=byzantine,
                       unreachable=unreachable, on_send=on_send)
