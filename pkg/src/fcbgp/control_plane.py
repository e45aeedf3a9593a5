"""Per-AS BGP speaker with FC generation and AS-path validation."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

from fcbgp.fc_core import FcCache, FcVerifier, ForwardingCommitment, verify_fc
from fcbgp.trust_base import NULL_AS, Prefix, SigningKey, TrustBase
from fcbgp.wire_codec import BgpUpdate, UpdateKind, legacy_passthrough

log = logging.getLogger(__name__)


class PathClass(enum.IntEnum):
    SUSPICIOUS = 0
    LEGACY = 1
    PARTIALLY_TRUSTED = 2
    TRUSTED = 3

    @property
    def label(self) -> str:
        return {0: "Suspicious", 1: "Legacy", 2: "PartiallyTrusted", 3: "Trusted"}[self.value]


class Rel(enum.Enum):
    """Relationship of a neighbor as seen from the local AS."""

    CUSTOMER = "customer"
    PEER = "peer"
    PROVIDER = "provider"


def expected_pathlets(as_path: Sequence[int], receiver: int) -> list[tuple[int, int, int]]:
    """(previous, current, next) for every hop of ``as_path`` (origin first)."""
    out = []
    for i, cur in enumerate(as_path):
        prev = as_path[i - 1] if i else NULL_AS
        nxt = as_path[i + 1] if i + 1 < len(as_path) else receiver
        out.append((prev, cur, nxt))
    return out


def classify_path(as_path: Sequence[int], fcs: Sequence[ForwardingCommitment],
                  prefix: Prefix, self_asn: int, trust: TrustBase,
                  verify: Callable[[ForwardingCommitment, Prefix], bool] | None = None
                  ) -> PathClass:
    """Place a received path into one of the four preference classes.

    Every carried FC must verify and certify one pathlet of this path.
    A pathlet may stay uncovered only when its signer is a legacy AS. When
    the prefix has a registered owner, the origin must be that owner.
    """
    if not as_path:
        raise ValueError("empty AS path")
    verify = verify or (lambda fc, p: verify_fc(fc, p, trust))
    owner = trust.lookup_owner(prefix)
    if owner is not None and owner != as_path[0]:
        return PathClass.SUSPICIOUS
    wanted = expected_pathlets(as_path, self_asn)
    index = {h: i for i, h in enumerate(wanted)}
    covered = [False] * len(wanted)
    for fc in fcs:
        i = index.get(fc.hops)
        if i is None or covered[i] or not verify(fc, prefix):
            return PathClass.SUSPICIOUS
        covered[i] = True
    for (_, signer, _), ok in zip(wanted, covered):
        if not ok and trust.is_deployed(signer):
            return PathClass.SUSPICIOUS
    if all(covered):
        return PathClass.TRUSTED
    if not fcs:
        return PathClass.LEGACY
    return PathClass.PARTIALLY_TRUSTED


@dataclass(frozen=True)
class RibEntry:
    prefix: Prefix
    as_path: tuple[int, ...]
    fcs: tuple[ForwardingCommitment, ...]
    received_from: int
    classification: PathClass
    installed_at: int = 0
    update: BgpUpdate | None = field(default=None, compare=False, repr=False)

    def rank(self) -> tuple:
        return (self.classification, -len(self.as_path), -self.received_from)


def select_route(candidates: Iterable[RibEntry]) -> RibEntry:
    """Class first, then shorter AS path, then lowest neighbor ASN."""
    cands = list(candidates)
    if not cands:
        raise ValueError("no candidate routes")
    return max(cands, key=RibEntry.rank)


class Export(NamedTuple):
    neighbor: int
    update: BgpUpdate


class BgpSpeaker:
    """Single-threaded speaker: Adj-RIB-In, Loc-RIB and Adj-RIB-Out for one AS.

    Legacy speakers (not deployed in the trust base) neither validate nor
    sign; they pick routes by length and forward the FC attribute untouched.
    """

    def __init__(self, asn: int, trust: TrustBase, key: SigningKey | None = None, *,
                 neighbors: dict[int, Rel] | None = None,
                 valley_free: bool = False,
                 export_suspicious: bool = True,
                 event_log: list[dict] | None = None):
        self.asn = asn
        self.trust = trust
        self.deployed = trust.is_deployed(asn)
        if self.deployed and key is None:
            raise ValueError(f"deployed AS{asn} needs a signing key")
        self.key = key
        self.neighbors: dict[int, Rel] = dict(neighbors or {})
        self.valley_free = valley_free
        self.export_suspicious = export_suspicious
        self.adj_rib_in: dict[Prefix, dict[int, RibEntry]] = {}
        self.loc_rib: dict[Prefix, RibEntry] = {}
        self.adj_rib_out: dict[Prefix, dict[int, BgpUpdate]] = {}
        self.fc_cache = FcCache(asn, key) if self.deployed else None
        self.verifier = FcVerifier(trust)
        self.clock = 0
        self.events = event_log if event_log is not None else []

    # -- logging -----------------------------------------------------------

    def _log(self, prefix, action: str, cls: PathClass | None = None, **extra):
        rec = {"time": self.clock, "as": self.asn, "prefix": str(prefix), "action": action,
               "class": cls.label if cls is not None else None}
        rec.update(extra)
        self.events.append(rec)

    # -- route origination / export ------------------------------------------

    def originate(self, prefix: Prefix) -> list[Export]:
        entry = RibEntry(prefix, (), (), self.asn, PathClass.TRUSTED, self.clock)
        self.adj_rib_in.setdefault(prefix, {})[self.asn] = entry
        self._log(prefix, "originate", PathClass.TRUSTED)
        return self._reselect(prefix)

    def export_route(self, entry: RibEntry, neighbor: int) -> BgpUpdate:
        path = entry.as_path + (self.asn,)
        if not self.deployed:
            if entry.update is None:
                return BgpUpdate.announce(entry.prefix, path)
            return legacy_passthrough(entry.update, self.asn)
        prev = entry.as_path[-1] if entry.as_path else NULL_AS
        fc = self.fc_cache.get(prev, neighbor, entry.prefix)
        other = entry.update.other_attributes if entry.update else ()
        return BgpUpdate.announce(entry.prefix, path, entry.fcs + (fc,), other)

    def _may_export(self, entry: RibEntry, neighbor: int) -> bool:
        if neighbor == entry.received_from or neighbor in entry.as_path:
            return False
        if entry.classification == PathClass.SUSPICIOUS and not self.export_suspicious:
            return False
        if self.valley_free and entry.received_from != self.asn:
            learned = self.neighbors.get(entry.received_from)
            if learned != Rel.CUSTOMER and self.neighbors.get(neighbor) != Rel.CUSTOMER:
                return False
        return True

    def _advertise(self, prefix: Prefix, neighbors: Iterable[int]) -> list[Export]:
        out = []
        best = self.loc_rib.get(prefix)
        sent = self.adj_rib_out.setdefault(prefix, {})
        for n in sorted(neighbors):
            want = self.export_route(best, n) if best and self._may_export(best, n) else None
            have = sent.get(n)
            if want is None:
                if have is not None:
                    del sent[n]
                    out.append(Export(n, BgpUpdate.withdraw(prefix)))
                    self._log(prefix, "send-withdraw", to=n)
            elif want != have:
                sent[n] = want
                out.append(Export(n, want))
                self._log(prefix, "export", best.classification, to=n,
                          path=list(want.as_path))
        if not sent:
            self.adj_rib_out.pop(prefix, None)
        return out

    def _reselect(self, prefix: Prefix) -> list[Export]:
        cands = self.adj_rib_in.get(prefix, {})
        old = self.loc_rib.get(prefix)
        new = select_route(cands.values()) if cands else None
        if new is None:
            self.loc_rib.pop(prefix, None)
            self.adj_rib_in.pop(prefix, None)
        else:
            self.loc_rib[prefix] = new
        if new is old:
            return []
        if new is not None:
            self._log(prefix, "best", new.classification, path=list(new.as_path),
                      via=new.received_from)
        else:
            self._log(prefix, "unreachable")
        return self._advertise(prefix, self.neighbors)

    # -- inbound ---------------------------------------------------------

    def classify(self, update: BgpUpdate) -> PathClass:
        if not self.deployed:
            return PathClass.LEGACY
        return classify_path(update.as_path, update.fcs, update.prefix, self.asn,
                             self.trust, self.verifier)

    def receive(self, update: BgpUpdate, from_asn: int) -> list[Export]:
        if update.kind == UpdateKind.WITHDRAW:
            return self.process_withdraw(update.prefix, from_asn)
        return self.process_update(update, from_asn)[1]

    def process_update(self, update: BgpUpdate, from_asn: int
                       ) -> tuple[RibEntry | None, list[Export]]:
        if update.kind != UpdateKind.ANNOUNCE:
            return None, self.process_withdraw(update.prefix, from_asn)
        if self.asn in update.as_path:
            self._log(update.prefix, "drop", reason="loop", path=list(update.as_path))
            return None, []
        if update.as_path[-1] != from_asn:
            self._log(update.prefix, "drop", reason="first-hop-mismatch",
                      path=list(update.as_path), frm=from_asn)
            return None, []
        cls = self.classify(update)
        entry = RibEntry(update.prefix, update.as_path, update.fcs, from_asn, cls,
                         self.clock, update)
        self.adj_rib_in.setdefault(update.prefix, {})[from_asn] = entry
        self._log(update.prefix, "classify", cls, path=list(update.as_path), frm=from_asn)
        return entry, self._reselect(update.prefix)

    def process_withdraw(self, prefix: Prefix, from_asn: int) -> list[Export]:
        routes = self.adj_rib_in.get(prefix)
        if not routes or from_asn not in routes:
            return []
        del routes[from_asn]
        self._log(prefix, "withdrawn", frm=from_asn)
        return self._reselect(prefix)

    # -- sessions ---------------------------------------------------------

    def add_neighbor(self, asn: int, rel: Rel = Rel.PEER) -> list[Export]:
        """New peer: re-announce the full table with stored FC lists."""
        self.neighbors[asn] = rel
        out = []
        for prefix in sorted(self.loc_rib, key=_pfx_key):
            out.extend(self._advertise(prefix, [asn]))
        return out

    def remove_neighbor(self, asn: int) -> list[Export]:
        self.neighbors.pop(asn, None)
        out = []
        for prefix in sorted(list(self.adj_rib_out), key=_pfx_key):
            self.adj_rib_out[prefix].pop(asn, None)
        for prefix in sorted(list(self.adj_rib_in), key=_pfx_key):
            if asn in self.adj_rib_in[prefix]:
                out.extend(self.process_withdraw(prefix, asn))
        return out

    def best(self, prefix: Prefix) -> RibEntry | None:
        return self.loc_rib.get(prefix)

    def dump_events(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


def _pfx_key(p: Prefix):
    return (p.version, int(p.network_address), p.prefixlen)
