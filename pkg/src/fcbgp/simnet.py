"""Deterministic discrete-event simulation of FC-BGP speakers, bindings and
the data plane, plus the scripted attacks used by the experiments."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import yaml

from fcbgp.binding import BindingEngine, Packet, binding_fc_list, encode_binding, decode_binding
from fcbgp.control_plane import (
    BgpSpeaker,
    PathClass,
    Rel,
    classify_path,
    expected_pathlets,
)
from fcbgp.events import EventLoop, SimEvent
from fcbgp.fc_core import FcVerifier, ForwardingCommitment, Pathlet, sign_fc
from fcbgp.sync import SyncConfig, SyncNetwork
from fcbgp.trust_base import NULL_AS, Prefix, SigningKey, TrustBase, check_asn, parse_prefix
from fcbgp.wire_codec import BgpUpdate, UpdateKind, decode_update, encode_update

log = logging.getLogger(__name__)


_REL_NAMES = {"peer": Rel.PEER, "p2c": Rel.CUSTOMER, "c2p": Rel.PROVIDER}
_INVERSE = {Rel.PEER: Rel.PEER, Rel.CUSTOMER: Rel.PROVIDER, Rel.PROVIDER: Rel.CUSTOMER}


class ScenarioError(ValueError):
    pass


# -- topology ------------------------------------------------------------------


@dataclass
class AsSpec:
    asn: int
    prefixes: tuple[Prefix, ...] = ()
    deployed: bool = False
    # data-plane filtering on/off; None follows ``deployed``
    enforce: bool | None = None
    name: str | None = None

    @property
    def filters(self) -> bool:
        return self.deployed if self.enforce is None else self.enforce


@dataclass
class Topology:
    ases: dict[int, AsSpec] = field(default_factory=dict)
    links: dict[int, dict[int, Rel]] = field(default_factory=dict)
    latency: dict[frozenset, int] = field(default_factory=dict)

    def add_as(self, asn: int, prefixes: Iterable[Prefix | str] = (), *, deployed: bool = False,
               enforce: bool | None = None, name: str | None = None) -> AsSpec:
        check_asn(asn)
        if asn in self.ases:
            raise ScenarioError(f"AS{asn} declared twice")
        pfx = tuple(parse_prefix(p) if isinstance(p, str) else p for p in prefixes)
        spec = AsSpec(asn, pfx, deployed, enforce, name)
        self.ases[asn] = spec
        self.links.setdefault(asn, {})
        return spec

    def add_link(self, a: int, b: int, rel: Rel = Rel.PEER, latency: int = 1):
        """``rel`` is what ``b`` is to ``a``."""
        for x in (a, b):
            if x not in self.ases:
                raise ScenarioError(f"link endpoint AS{x} not declared")
        if a == b:
            raise ScenarioError(f"self-link on AS{a}")
        if latency < 1:
            raise ScenarioError("link latency must be at least 1 tick")
        self.links[a][b] = rel
        self.links[b][a] = _INVERSE[rel]
        self.latency[frozenset((a, b))] = latency

    def neighbors(self, asn: int) -> list[int]:
        return sorted(self.links.get(asn, {}))

    def degree(self, asn: int) -> int:
        return len(self.links.get(asn, {}))

    def owner(self, prefix: Prefix) -> int | None:
        for a, spec in self.ases.items():
            if prefix in spec.prefixes:
                return a
        return None

    def name(self, asn: int) -> str:
        n = self.ases[asn].name
        return f"{n}(AS{asn})" if n else f"AS{asn}"


def line_topology(asns: Sequence[int], deployed: Iterable[int] = ()) -> Topology:
    deployed = set(deployed)
    topo = Topology()
    for i, a in enumerate(asns):
        topo.add_as(a, [f"10.{(i >> 8) & 0xFF}.{i & 0xFF}.0/24"], deployed=a in deployed)
    for a, b in zip(asns, asns[1:]):
        topo.add_link(a, b)
    return topo


# -- adversaries ---------------------------------------------------------------


@dataclass(frozen=True)
class FakePath:
    """Announce ``claimed_path`` (origin first, actor not included) for ``prefix``."""

    prefix: Prefix
    claimed_path: tuple[int, ...]
    to: tuple[int, ...] | None = None
    at: int | None = None


@dataclass(frozen=True)
class SpoofSource:
    src_prefix: Prefix
    dst_prefix: Prefix
    via: int
    at: int | None = None


@dataclass(frozen=True)
class DivertForwarding:
    """Traffic from the pair's source takes ``detour`` before rejoining routing."""

    src_prefix: Prefix
    dst_prefix: Prefix
    detour: tuple[int, ...]
    at: int | None = None


@dataclass
class AdversaryScript:
    actor: int
    behaviors: list = field(default_factory=list)


class ObservedFcPool:
    """FCs an adversary has seen on its own links. Never shared between actors."""

    def __init__(self, actor: int):
        self.actor = actor
        self._fcs: dict[tuple[Prefix, tuple[int, int, int]], ForwardingCommitment] = {}

    def __len__(self) -> int:
        return len(self._fcs)

    def observe(self, update: BgpUpdate):
        if update.kind == UpdateKind.ANNOUNCE:
            for fc in update.fcs:
                self._fcs.setdefault((update.prefix, fc.hops), fc)

    def get(self, prefix: Prefix, hops: tuple[int, int, int]) -> ForwardingCommitment | None:
        return self._fcs.get((prefix, hops))

    def for_prefix(self, prefix: Prefix) -> list[ForwardingCommitment]:
        return [fc for (p, _), fc in sorted(self._fcs.items(), key=lambda kv: kv[0][1])
                if p == prefix]

    @classmethod
    def snapshot(cls, speaker: BgpSpeaker) -> "ObservedFcPool":
        """FCs in the routes currently held in the actor's Adj-RIB-In."""
        pool = cls(speaker.asn)
        for prefix, routes in speaker.adj_rib_in.items():
            for entry in routes.values():
                for fc in entry.fcs:
                    pool._fcs.setdefault((prefix, fc.hops), fc)
        return pool


# -- trace ---------------------------------------------------------------------


class SimTrace:
    def __init__(self, records: list[dict]):
        self.records = records

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def where(self, **match) -> list[dict]:
        return [r for r in self.records if all(r.get(k) == v for k, v in match.items())]

    def write(self, path: str | Path):
        Path(path).write_text(self.to_jsonl())


class PacketResult(NamedTuple):
    label: str
    hops: tuple[int, ...]
    delivered: bool
    stopped_at: int
    reason: str


# -- simulation ---------------------------------------------------------------


class Simulation:
    """Hosts one speaker and one binding engine per AS on a shared event loop."""

    def __init__(self, topo: Topology, *, key_seed: int = 0, valley_free: bool = False,
                 export_suspicious: bool = True):
        self.topo = topo
        self.trust = TrustBase()
        self.keys: dict[int, SigningKey] = {}
        for a in sorted(topo.ases):
            spec = topo.ases[a]
            self.keys[a] = self.trust.register_generated(a, spec.prefixes, deployed=spec.deployed,
                                                         seed=key_seed)
        self.trust.freeze()
        self.loop = EventLoop()
        self.records: list[dict] = []
        auth_cache: dict = {}
        self.speakers: dict[int, BgpSpeaker] = {}
        self.engines: dict[int, BindingEngine] = {}
        for a in sorted(topo.ases):
            spec = topo.ases[a]
            self.speakers[a] = BgpSpeaker(
                a, self.trust, self.keys[a] if spec.deployed else None,
                neighbors=dict(topo.links[a]), valley_free=valley_free,
                export_suspicious=export_suspicious, event_log=self.records)
            self.engines[a] = BindingEngine(a, self.trust, self.keys[a], auth_cache=auth_cache)
        self.scripts: dict[int, AdversaryScript] = {}
        self.pools: dict[int, ObservedFcPool] = {}
        self.sent_paths: set[tuple[Prefix, tuple[int, ...], int]] = set()
        self._fake_active: set[tuple[int, Prefix, int]] = set()
        self.packets: list[PacketResult] = []
        self.sync: SyncNetwork | None = None

    # -- setup -----------------------------------------------------------

    def add_adversary(self, script: AdversaryScript):
        if script.actor not in self.topo.ases:
            raise ScenarioError(f"adversary AS{script.actor} not in topology")
        self.scripts[script.actor] = script
        self.pools[script.actor] = ObservedFcPool(script.actor)
        for b in script.behaviors:
            if b.at is not None:
                self.loop.schedule(max(0, b.at - self.loop.now), script.actor, "timer",
                                   meta=("behavior", b))

    def enable_sync(self, regions: Sequence[Sequence[int]], config: SyncConfig | None = None,
                    *, rounds: int | None = None, first_at: int | None = None):
        self.sync = SyncNetwork(regions, self.trust, self.keys,
                                {a: s.prefixes[0] for a, s in self.topo.ases.items() if s.prefixes},
                                config, loop=self.loop, trace=self.records,
                                engines=self.engines, max_rounds=rounds)
        self.sync.start(first_at)

    def originate(self, asn: int, prefix: Prefix, at: int = 0):
        if self.topo.owner(prefix) != asn:
            raise ScenarioError(f"AS{asn} does not own {prefix}")
        self.loop.schedule(max(0, at - self.loop.now), asn, "timer", meta=("originate", prefix))

    # -- transport -------------------------------------------------------

    def _latency(self, a: int, b: int) -> int:
        return self.topo.latency.get(frozenset((a, b)), 1)

    def _send_update(self, src: int, dst: int, update: BgpUpdate, *, genuine: bool = True):
        if genuine and (src, update.prefix, dst) in self._fake_active:
            return
        if genuine and update.kind == UpdateKind.ANNOUNCE:
            self.sent_paths.add((update.prefix, update.as_path, dst))
        self.loop.schedule(self._latency(src, dst), dst, "deliver-bgp", encode_update(update),
                           meta=src)

    def _emit(self, src: int, exports):
        for ex in exports:
            self._send_update(src, ex.neighbor, ex.update)

    def _log(self, **rec):
        rec["time"] = self.loop.now
        self.records.append(rec)

    # -- event handling ------------------------------------------------------

    def handle(self, ev: SimEvent):
        if ev.kind in ("deliver-sync", "round", "postcheck", "issue"):
            self.sync.handle(ev)
            return
        sp = self.speakers[ev.target]
        sp.clock = self.loop.now
        if ev.kind == "deliver-bgp":
            update = decode_update(ev.payload)
            if ev.target in self.pools:
                self.pools[ev.target].observe(update)
            self._emit(ev.target, sp.receive(update, ev.meta))
        elif ev.kind == "deliver-binding":
            self._deliver_binding(ev.target, decode_binding(ev.payload))
        elif ev.kind == "inject-packet":
            self.packets.append(self._walk(*ev.meta))
        elif ev.kind == "timer":
            what, arg = ev.meta
            if what == "originate":
                self._emit(ev.target, sp.originate(arg))
            elif what == "behavior":
                self._run_behavior(ev.target, arg)
            elif what == "binding":
                self.issue_binding(ev.target, arg)
        else:
            raise ValueError(f"unknown event kind {ev.kind}")

    def run_until_quiescent(self, budget: int = 1_000_000) -> SimTrace:
        self.loop.run(self.handle, budget=budget)
        return SimTrace(self.records)

    @property
    def trace(self) -> SimTrace:
        return SimTrace(self.records)

    # -- adversary actions ---------------------------------------------------

    def _run_behavior(self, actor: int, b):
        if isinstance(b, FakePath):
            self.announce_fake(actor, b.prefix, b.claimed_path, b.to)
        elif isinstance(b, SpoofSource):
            self.inject_packet(b.src_prefix, b.dst_prefix, b.via, inbound=actor,
                               label=f"spoof-by-AS{actor}", delay=0)
        elif isinstance(b, DivertForwarding):
            src = self.topo.owner(b.src_prefix)
            self.inject_packet(b.src_prefix, b.dst_prefix, src, path=b.detour,
                               label=f"divert-by-AS{actor}", delay=0)

    def fake_update(self, actor: int, prefix: Prefix, claimed_path: Sequence[int], to: int,
                    pool: ObservedFcPool | None = None) -> BgpUpdate:
        """Best-effort fake: pooled FCs for matching pathlets plus the actor's own."""
        pool = pool if pool is not None else self.pools.get(actor, ObservedFcPool(actor))
        claimed = tuple(claimed_path)
        fcs = []
        for i, hops in enumerate(expected_pathlets(claimed, actor)):
            fc = pool.get(prefix, hops)
            if fc is not None:
                fcs.append(fc)
        if self.trust.is_deployed(actor):
            prev = claimed[-1] if claimed else NULL_AS
            fcs.append(sign_fc(actor, Pathlet(prev, actor, to, prefix), self.keys[actor]))
        return BgpUpdate.announce(prefix, claimed + (actor,), fcs)

    def announce_fake(self, actor: int, prefix: Prefix, claimed_path: Sequence[int],
                      to: Iterable[int] | None = None):
        targets = sorted(to) if to else self.topo.neighbors(actor)
        for n in targets:
            upd = self.fake_update(actor, prefix, claimed_path, n)
            self._fake_active.add((actor, prefix, n))
            self._log(event="fake-announce", actor=actor, to=n, prefix=str(prefix),
                      path=list(upd.as_path), fcs=len(upd.fcs))
            self._send_update(actor, n, upd, genuine=False)

    # -- bindings and data plane ---------------------------------------------

    def issue_binding(self, source: int, dst_prefix: Prefix, src_prefix: Prefix | None = None):
        """Bind (own prefix -> dst_prefix) to the source's current best path."""
        spec = self.topo.ases[source]
        if not spec.prefixes:
            raise ScenarioError(f"AS{source} owns no prefix to bind")
        src_prefix = src_prefix or spec.prefixes[0]
        best = self.speakers[source].best(dst_prefix)
        if best is None:
            raise ScenarioError(f"AS{source} has no route to {dst_prefix}")
        on, off = self.engines[source].issue(src_prefix, dst_prefix, binding_fc_list(best.fcs))
        self._log(event="binding-issue", **{"as": source}, src=str(src_prefix),
                  dst=str(dst_prefix), ver=on.ver, path=list(best.as_path))
        on_path = set(best.as_path)
        for a in sorted(self.topo.ases):
            if a == source:
                continue
            msg = on if a in on_path else off
            self.loop.schedule(1, a, "deliver-binding", encode_binding(msg))
            if self.sync is not None:
                # the other form still has to reach every store for the views to close
                other = off if msg is on else on
                self.loop.schedule(1, a, "deliver-binding", encode_binding(other))
        if self.sync is not None and source in self.sync.nodes:
            self.sync.nodes[source].accept(on)
            self.sync.nodes[source].accept(off)
        return on, off

    def _deliver_binding(self, asn: int, msg):
        if not self.trust.is_deployed(asn):
            return
        if self.sync is not None and asn in self.sync.nodes:
            self.sync._accept(self.sync.nodes[asn], msg, "broadcast")
            return
        outcome, inst = self.engines[asn].receive(msg)
        self._log(event="binding", **{"as": asn}, issuer=msg.issuer, ver=msg.ver,
                  ver_sub=msg.ver_sub, status=outcome.status.value,
                  reason=outcome.reason.value if outcome.reason else None,
                  result=inst.action if inst else None)

    def inject_packet(self, src_prefix: Prefix, dst_prefix: Prefix, start: int, *,
                      inbound: int | None = None, path: Sequence[int] = (), label: str = "",
                      delay: int = 0):
        self.loop.schedule(delay, start, "inject-packet",
                           meta=(src_prefix, dst_prefix, start, inbound, tuple(path), label))

    def walk_packet(self, src_prefix: Prefix, dst_prefix: Prefix, start: int, *,
                    inbound: int | None = None, path: Sequence[int] = (),
                    label: str = "") -> PacketResult:
        res = self._walk(src_prefix, dst_prefix, start, inbound, tuple(path), label)
        self.packets.append(res)
        return res

    def _walk(self, src_prefix, dst_prefix, start, inbound, forced, label) -> PacketResult:
        cur, prev = start, (start if inbound is None else inbound)
        forced = list(forced)
        hops = [cur]
        for _ in range(4 * len(self.topo.ases) + 4):
            # scripted adversaries do not enforce their own filters
            if self.topo.ases[cur].filters and cur not in self.scripts:
                verdict = self.engines[cur].check(Packet(src_prefix, dst_prefix, prev))
                if not verdict.forward:
                    return self._packet_done(label, hops, False, cur, verdict.reason,
                                             src_prefix, dst_prefix)
            if dst_prefix in self.topo.ases[cur].prefixes:
                return self._packet_done(label, hops, True, cur, "delivered",
                                         src_prefix, dst_prefix)
            if forced:
                nxt = forced.pop(0)
            else:
                best = self.speakers[cur].best(dst_prefix)
                if best is None or not best.as_path:
                    return self._packet_done(label, hops, False, cur, "no-route",
                                             src_prefix, dst_prefix)
                nxt = best.as_path[-1]
            if nxt not in self.topo.links[cur]:
                return self._packet_done(label, hops, False, cur, "no-link",
                                         src_prefix, dst_prefix)
            prev, cur = cur, nxt
            hops.append(cur)
        return self._packet_done(label, hops, False, cur, "loop", src_prefix, dst_prefix)

    def _packet_done(self, label, hops, delivered, at, reason, src, dst) -> PacketResult:
        self._log(event="packet", label=label, src=str(src), dst=str(dst), hops=list(hops),
                  verdict="forward" if delivered else "discard", at=at, reason=reason)
        return PacketResult(label, tuple(hops), delivered, at, reason)

    # -- queries ---------------------------------------------------------

    def best_class(self, asn: int, prefix: Prefix) -> PathClass | None:
        best = self.speakers[asn].best(prefix)
        return best.classification if best else None

    def summary(self) -> list[dict]:
        out = []
        for a in sorted(self.topo.ases):
            sp = self.speakers[a]
            for prefix in sorted(sp.loc_rib, key=lambda p: (p.version, int(p.network_address),
                                                            p.prefixlen)):
                e = sp.loc_rib[prefix]
                out.append({"as": a, "name": self.topo.ases[a].name, "prefix": str(prefix),
                            "path": list(e.as_path), "class": e.classification.label,
                            "via": e.received_from})
        return out


# -- experiments --------------------------------------------------------------


class AcceptedFake(NamedTuple):
    claimed_path: tuple[int, ...]
    victim: int
    genuine: bool


def splice_attack_search(sim: Simulation, adversary: int, pool: ObservedFcPool,
                         target_prefix: Prefix, max_len: int = 6,
                         genuine: set[tuple[int, ...]] | None = None) -> list[AcceptedFake]:
    """Try every AS sequence of at most ``max_len`` ASes ending at the adversary.

    A sequence is accepted when a victim neighbor would classify it Trusted
    given only pooled FCs and FCs the adversary signs itself. ``genuine``
    holds claimed paths the adversary really received (default: every path
    announced to it during the run); each result says whether it is one.
    """
    if genuine is None:
        genuine = {p for (pfx, p, rcv) in sim.sent_paths if pfx == target_prefix and rcv == adversary}
    verify = FcVerifier(sim.trust)
    others = [a for a in sorted(sim.topo.ases) if a != adversary]
    key = sim.keys[adversary] if sim.trust.is_deployed(adversary) else None
    out = []
    for victim in sim.topo.neighbors(adversary):
        pool_ases = [a for a in others if a != victim]
        for n in range(0, max_len):
            for seq in itertools.permutations(pool_ases, n):
                path = seq + (adversary,)
                fcs = []
                for hops in expected_pathlets(path, victim)[:-1]:
                    fc = pool.get(target_prefix, hops)
                    if fc is not None:
                        fcs.append(fc)
                if key is not None:
                    prev = seq[-1] if seq else NULL_AS
                    fcs.append(sign_fc(adversary, Pathlet(prev, adversary, victim, target_prefix),
                                       key))
                cls = classify_path(path, fcs, target_prefix, victim, sim.trust, verify)
                if cls == PathClass.TRUSTED:
                    ok = (not seq and sim.topo.owner(target_prefix) == adversary) or seq in genuine
                    out.append(AcceptedFake(seq, victim, ok))
    return out


def hijack_line(n: int, k: int, l: int, *, key_seed: int = 0) -> tuple[Simulation, dict]:
    """Line A_1..A_N (ASNs 1..N) with A_1..A_{K-1} and A_N deployed; a legacy
    attacker sits L hops from A_N on a chain of legacy ASes."""
    if not (n >= 2 and 1 <= k <= n and l >= 1):
        raise ValueError("need N >= 2, 1 <= K <= N, L >= 1")
    line = list(range(1, n + 1))
    topo = line_topology(line, deployed=[a for a in line if a < k or a == n])
    attacker = 1000
    chain = [1000 + i for i in range(l)]  # chain[0] is the attacker
    for a in chain:
        topo.add_as(a)
    for a, b in zip(chain, chain[1:]):
        topo.add_link(a, b)
    topo.add_link(chain[-1], n)
    sim = Simulation(topo, key_seed=key_seed)
    sim.add_adversary(AdversaryScript(attacker))
    return sim, {"victim": n, "attacker": attacker, "origin": 1,
                 "prefix": topo.ases[1].prefixes[0]}


def attachment_options(sim: Simulation, attacker: int, victim: int, prefix: Prefix,
                       exhaustive: bool = False) -> list[tuple[int, ...]]:
    """Claimed paths the attacker can try: origin-anchored FC chains from its pool.

    The default is the single longest chain avoiding the victim and the
    attacker; ``exhaustive`` also yields every shorter prefix of it.
    """
    pool = sim.pools[attacker]
    origin = sim.topo.owner(prefix)
    chain = [origin]
    prev = NULL_AS
    while True:
        nxt = [fc for fc in pool.for_prefix(prefix)
               if fc.previous == prev and fc.current == chain[-1]]
        if len(nxt) != 1:
            break
        step = nxt[0].next
        if step in (victim, attacker) or step in chain:
            break
        prev = chain[-1]
        chain.append(step)
    if exhaustive:
        return [tuple(chain[:i]) for i in range(len(chain), 0, -1)]
    return [tuple(chain)]


def hijack_attempt(n: int, k: int, l: int, *, exhaustive: bool = False) -> bool:
    sim, roles = hijack_line(n, k, l)
    prefix, attacker, victim = roles["prefix"], roles["attacker"], roles["victim"]
    sim.originate(roles["origin"], prefix)
    sim.run_until_quiescent()
    for claimed in attachment_options(sim, attacker, victim, prefix, exhaustive):
        sim.announce_fake(attacker, prefix, claimed)
        sim.run_until_quiescent()
        if attacker in sim.speakers[victim].best(prefix).as_path:
            return True
    return False


def hijack_predicate(n: int, k: int, l: int) -> bool:
    return n - 1 > k + l


class UnwantedResult(NamedTuple):
    units: list[PacketResult]
    total: int
    filtered: int

    @property
    def rate(self) -> float:
        return self.filtered / self.total if self.total else 0.0


def linear_instance(degrees: Sequence[int], deployed: Sequence[bool], *,
                    key_seed: int = 0) -> tuple[Simulation, list[int]]:
    """Path A_0..A_n (ASNs 1..n+1) where A_k gets D_k - (on-path neighbors)
    extra stub neighbors. A_0 originates the prefix; A_n binds its traffic.

    A_n always signs its binding; its deployment flag only switches its own
    filtering. Other ASes are deployed (signing and filtering) or legacy.
    """
    n = len(degrees) - 1
    if n < 1 or len(deployed) != len(degrees):
        raise ValueError("need at least two path ASes and one flag per AS")
    path = list(range(1, n + 2))
    topo = Topology()
    for k, a in enumerate(path):
        on_path_nbrs = 1 if k in (0, n) else 2
        if degrees[k] < on_path_nbrs:
            raise ValueError(f"D_{k}={degrees[k]} below its on-path neighbor count")
        if k == n:
            topo.add_as(a, [f"10.1.{k}.0/24"], deployed=True, enforce=bool(deployed[k]))
        else:
            topo.add_as(a, [f"10.1.{k}.0/24"], deployed=bool(deployed[k]))
    for a, b in zip(path, path[1:]):
        topo.add_link(a, b)
    stub = 100
    for k, a in enumerate(path):
        for _ in range(degrees[k] - (1 if k in (0, n) else 2)):
            topo.add_as(stub)
            topo.add_link(a, stub)
            stub += 1
    sim = Simulation(topo, key_seed=key_seed)
    sim.originate(path[0], topo.ases[path[0]].prefixes[0])
    sim.run_until_quiescent()
    sim.issue_binding(path[-1], topo.ases[path[0]].prefixes[0])
    sim.run_until_quiescent()
    return sim, path


def inject_unwanted_traffic(sim: Simulation, path: Sequence[int]) -> UnwantedResult:
    """One unit of unwanted traffic per bridge into the authorized path.

    ``path`` is the BGP path A_0..A_n (origin first); traffic runs from A_n
    to A_0 and carries the bound pair (prefix of A_n, prefix of A_0).
    Each unit enters A_k through one bridge:

    * a neighbor off the path: off-path sources and detours re-entering the
      path look the same here, labelled ``I/II``;
    * A_{k+1} for k < n: an on-path AS spoofing the source, ``III``;
    * A_n itself, ``III``.
    """
    src = sim.topo.ases[path[-1]].prefixes[0]
    dst = sim.topo.ases[path[0]].prefixes[0]
    on_path = set(path)
    units = []
    for k, a in enumerate(path):
        for x in sim.topo.neighbors(a):
            if x not in on_path:
                units.append(sim.walk_packet(src, dst, a, inbound=x, label=f"I/II@{k}<-{x}"))
        if k + 1 < len(path):
            units.append(sim.walk_packet(src, dst, a, inbound=path[k + 1],
                                         label=f"III@{k}<-{path[k + 1]}"))
        else:
            units.append(sim.walk_packet(src, dst, a, inbound=a, label=f"III@{k}<-self"))
    filtered = sum(not u.delivered for u in units)
    return UnwantedResult(units, len(units), filtered)


# -- scenarios ---------------------------------------------------------------

BUNDLED = Path(__file__).parent / "scenarios"


@dataclass
class Scenario:
    name: str
    topo: Topology
    seed: int = 0
    originate: list[tuple[int, Prefix, int]] = field(default_factory=list)
    adversaries: list[AdversaryScript] = field(default_factory=list)
    bindings: list[tuple[int, Prefix, int]] = field(default_factory=list)
    packets: list[dict] = field(default_factory=list)
    sync: dict | None = None
    expect: list[dict] = field(default_factory=list)
    budget: int = 1_000_000


def _req(d: dict, k: str, where: str):
    if k not in d:
        raise ScenarioError(f"{where}: missing '{k}'")
    return d[k]


def _prefix(text, where: str) -> Prefix:
    try:
        return parse_prefix(str(text))
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    topo = Topology()
    names: dict[str, int] = {}
    for i, a in enumerate(_req(doc, "ases", "scenario")):
        where = f"ases[{i}]"
        asn = int(_req(a, "asn", where))
        pfx = [_prefix(p, where) for p in a.get("prefixes", [])]
        try:
            topo.add_as(asn, pfx, deployed=bool(a.get("deployed", False)),
                        enforce=a.get("enforce"), name=a.get("name"))
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        if a.get("name"):
            names[str(a["name"])] = asn

    def as_ref(v, where):
        if isinstance(v, str) and v in names:
            return names[v]
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ScenarioError(f"{where}: unknown AS {v!r}") from None

    for i, ln in enumerate(doc.get("links", [])):
        where = f"links[{i}]"
        if isinstance(ln, (list, tuple)):
            a, b, rel, lat = as_ref(ln[0], where), as_ref(ln[1], where), "peer", 1
        else:
            a, b = as_ref(_req(ln, "a", where), where), as_ref(_req(ln, "b", where), where)
            rel, lat = ln.get("rel", "peer"), int(ln.get("latency", 1))
        if rel not in _REL_NAMES:
            raise ScenarioError(f"{where}: rel must be one of {sorted(_REL_NAMES)}")
        topo.add_link(a, b, _REL_NAMES[rel], lat)
    sc = Scenario(doc.get("name", name), topo, int(doc.get("seed", 0)),
                  budget=int(doc.get("budget", 1_000_000)))
    for i, o in enumerate(doc.get("originate", [])):
        where = f"originate[{i}]"
        sc.originate.append((as_ref(_req(o, "asn", where), where),
                             _prefix(_req(o, "prefix", where), where), int(o.get("at", 0))))
    for i, adv in enumerate(doc.get("adversaries", [])):
        where = f"adversaries[{i}]"
        actor = as_ref(_req(adv, "actor", where), where)
        script = AdversaryScript(actor)
        for f in adv.get("announce_fake_path", []):
            to = tuple(as_ref(x, where) for x in f["to"]) if f.get("to") else None
            script.behaviors.append(FakePath(
                _prefix(_req(f, "prefix", where), where),
                tuple(as_ref(x, where) for x in _req(f, "claimed_path", where)), to,
                int(_req(f, "at", where))))
        for f in adv.get("spoof_source", []):
            script.behaviors.append(SpoofSource(
                _prefix(_req(f, "src_prefix", where), where),
                _prefix(_req(f, "dst_prefix", where), where),
                as_ref(_req(f, "via", where), where), int(_req(f, "at", where))))
        for f in adv.get("divert_forwarding", []):
            script.behaviors.append(DivertForwarding(
                _prefix(_req(f, "src_prefix", where), where),
                _prefix(_req(f, "dst_prefix", where), where),
                tuple(as_ref(x, where) for x in _req(f, "detour", where)),
                int(_req(f, "at", where))))
        sc.adversaries.append(script)
    for i, b in enumerate(doc.get("bindings", [])):
        where = f"bindings[{i}]"
        sc.bindings.append((as_ref(_req(b, "source", where), where),
                            _prefix(_req(b, "dst_prefix", where), where), int(_req(b, "at", where))))
    for i, p in enumerate(doc.get("packets", [])):
        where = f"packets[{i}]"
        sc.packets.append({
            "src_prefix": _prefix(_req(p, "src_prefix", where), where),
            "dst_prefix": _prefix(_req(p, "dst_prefix", where), where),
            "start": as_ref(_req(p, "start", where), where),
            "path": tuple(as_ref(x, where) for x in p.get("path", [])),
            "at": int(_req(p, "at", where)), "label": str(p.get("label", f"packet{i}"))})
    if doc.get("sync"):
        s = doc["sync"]
        sc.sync = {"regions": [[as_ref(x, "sync") for x in r] for r in _req(s, "regions", "sync")],
                   "period": int(s.get("period", 40)), "rounds": int(s.get("rounds", 5)),
                   "first_at": s.get("first_at")}
    for i, e in enumerate(doc.get("expect", [])):
        where = f"expect[{i}]"
        if "packet" in e:
            exp = {"packet": str(e["packet"]), "delivered": bool(_req(e, "delivered", where))}
            if "at" in e:
                exp["at"] = as_ref(e["at"], where)
            sc.expect.append(exp)
            continue
        exp = {"as": as_ref(_req(e, "as", where), where),
               "prefix": _prefix(_req(e, "prefix", where), where)}
        if "class" in e:
            labels = {c.label: c for c in PathClass}
            if e["class"] not in labels:
                raise ScenarioError(f"{where}: unknown class {e['class']!r}")
            exp["class"] = labels[e["class"]]
        if "path" in e:
            exp["path"] = tuple(as_ref(x, where) for x in e["path"])
        sc.expect.append(exp)
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return parse_scenario(doc, path.stem)


def bundled_scenario(name: str) -> Path:
    p = BUNDLED / f"{name}.yaml"
    if not p.exists():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return p


def build_simulation(sc: Scenario) -> Simulation:
    sim = Simulation(sc.topo, key_seed=sc.seed)
    for asn, prefix, at in sc.originate:
        sim.originate(asn, prefix, at)
    for script in sc.adversaries:
        sim.add_adversary(script)
    for source, dst, at in sc.bindings:
        sim.loop.schedule(at, source, "timer", meta=("binding", dst))
    for p in sc.packets:
        sim.inject_packet(p["src_prefix"], p["dst_prefix"], p["start"], path=p["path"],
                          label=p["label"], delay=p["at"])
    if sc.sync:
        sim.enable_sync(sc.sync["regions"], SyncConfig(period=sc.sync["period"], seed=sc.seed),
                        rounds=sc.sync["rounds"], first_at=sc.sync["first_at"])
    return sim


def check_expectations(sim: Simulation, sc: Scenario) -> list[str]:
    problems = []
    results = {p.label: p for p in sim.packets}
    for e in sc.expect:
        if "packet" in e:
            got = results.get(e["packet"])
            if got is None:
                problems.append(f"packet {e['packet']} was never injected")
            elif got.delivered != e["delivered"] or e.get("at", got.stopped_at) != got.stopped_at:
                problems.append(f"packet {e['packet']}: delivered={got.delivered} at "
                                f"AS{got.stopped_at}, expected delivered={e['delivered']}"
                                + (f" at AS{e['at']}" if "at" in e else ""))
            continue
        best = sim.speakers[e["as"]].best(e["prefix"])
        if best is None:
            problems.append(f"AS{e['as']} has no route to {e['prefix']}")
            continue
        if "class" in e and best.classification != e["class"]:
            problems.append(f"AS{e['as']} {e['prefix']}: class {best.classification.label}, "
                            f"expected {e['class'].label}")
        if "path" in e and best.as_path != e["path"]:
            problems.append(f"AS{e['as']} {e['prefix']}: path {list(best.as_path)}, "
                            f"expected {list(e['path'])}")
    return problems
