"""Topology ingestion and the closed-form security metrics.

Input formats:

as-rel
    ``as1|as2|rel[|source]`` with rel ``-1`` (as1 is a provider of as2) or
    ``0`` (peers). ``#`` lines are comments.
prefix2as
    ``address<TAB>length<TAB>asn``; a multi-origin field such as ``7_8`` or
    ``7,8`` is attributed to the first ASN.
path records
    ``src_as|prefix|asn asn ...`` with the AS path written origin first.
"""

from __future__ import annotations

import csv
import ipaddress
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import networkx as nx

from fcbgp.control_plane import Rel
from fcbgp.trust_base import Prefix


class TopologyParseError(ValueError):
    def __init__(self, source: str, lineno: int, msg: str):
        super().__init__(f"{source}:{lineno}: {msg}")
        self.lineno = lineno


class TopologyConflictError(ValueError):
    pass


class DegenerateError(ValueError):
    pass


@dataclass
class AsTopology:
    adjacency: dict[int, dict[int, Rel]] = field(default_factory=dict)
    prefixes: dict[Prefix, int] = field(default_factory=dict)
    monitored_paths: list[tuple[int, ...]] = field(default_factory=list)
    _graph: nx.Graph | None = field(default=None, repr=False, compare=False)

    def add_relation(self, a: int, b: int, rel_of_b: Rel):
        """Record that ``b`` is ``rel_of_b`` of ``a`` (and the inverse)."""
        inverse = {Rel.PEER: Rel.PEER, Rel.CUSTOMER: Rel.PROVIDER,
                   Rel.PROVIDER: Rel.CUSTOMER}[rel_of_b]
        have = self.adjacency.get(a, {}).get(b)
        if have is not None and have != rel_of_b:
            raise TopologyConflictError(
                f"AS{a}-AS{b} listed as {have.value} and as {rel_of_b.value}")
        self.adjacency.setdefault(a, {})[b] = rel_of_b
        self.adjacency.setdefault(b, {})[a] = inverse
        self._graph = None

    @property
    def ases(self) -> list[int]:
        return sorted(self.adjacency)

    def degree(self, asn: int) -> int:
        return len(self.adjacency.get(asn, {}))

    def graph(self) -> nx.Graph:
        if self._graph is None:
            g = nx.Graph()
            g.add_nodes_from(self.adjacency)
            g.add_edges_from((a, b) for a, nb in self.adjacency.items() for b in nb)
            self._graph = g
        return self._graph


def _lines(source) -> tuple[str, Iterable[str]]:
    if isinstance(source, (str, Path)):
        return str(source), Path(source).read_text().splitlines()
    return "<input>", source


def parse_as_rel(source, topo: AsTopology | None = None) -> AsTopology:
    name, lines = _lines(source)
    topo = topo or AsTopology()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) not in (3, 4):
            raise TopologyParseError(name, lineno, f"expected as1|as2|rel, got {line!r}")
        try:
            a, b, rel = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise TopologyParseError(name, lineno, f"non-integer field in {line!r}") from None
        if a == b or a <= 0 or b <= 0:
            raise TopologyParseError(name, lineno, f"bad AS pair {a}|{b}")
        if rel not in (-1, 0):
            raise TopologyParseError(name, lineno, f"relationship must be -1 or 0, got {rel}")
        try:
            topo.add_relation(a, b, Rel.CUSTOMER if rel == -1 else Rel.PEER)
        except TopologyConflictError as exc:
            raise TopologyConflictError(f"{name}:{lineno}: {exc}") from None
    return topo


def parse_prefix2as(source, topo: AsTopology | None = None) -> AsTopology:
    name, lines = _lines(source)
    topo = topo or AsTopology()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise TopologyParseError(name, lineno, "expected address<TAB>length<TAB>asn")
        addr, length, origins = parts
        try:
            prefix = ipaddress.ip_network(f"{addr}/{int(length)}", strict=True)
            asn = int(origins.replace(",", "_").split("_")[0])
        except ValueError as exc:
            raise TopologyParseError(name, lineno, str(exc)) from None
        topo.prefixes.setdefault(prefix, asn)
    return topo


def load_topology(as_rel, prefix2as=None) -> AsTopology:
    topo = parse_as_rel(as_rel)
    if prefix2as is not None:
        parse_prefix2as(prefix2as, topo)
    return topo


# -- deployment -----------------------------------------------------------


@dataclass(frozen=True)
class DeploymentPlan:
    rate: float
    deployed: frozenset[int]


def ranking(topo: AsTopology) -> list[int]:
    return sorted(topo.adjacency, key=lambda a: (-topo.degree(a), a))


def plan_for_rate(topo: AsTopology, rate: float, order: list[int] | None = None) -> DeploymentPlan:
    if not 0 <= rate <= 1:
        raise ValueError(f"deployment rate {rate} outside [0, 1]")
    order = order if order is not None else ranking(topo)
    # round first so that e.g. 0.07 * 100 does not become 8
    count = math.ceil(round(rate * len(order), 9))
    return DeploymentPlan(rate, frozenset(order[:count]))


# -- hijacking -----------------------------------------------------------


def deployed_run(path: Sequence[int], deployed: frozenset[int]) -> int:
    """Number of leading (origin-side) deployed ASes."""
    n = 0
    for a in path:
        if a not in deployed:
            break
        n += 1
    return n


def path_hijackable(path: Sequence[int], deployed: frozenset[int], l: int, mode: str) -> bool:
    """``path`` is origin first, A_1..A_N; the attacker is L hops from A_N."""
    n = len(path)
    if mode == "fcbgp":
        k = deployed_run(path, deployed) + 1
        return n - 1 > k + l
    if mode == "bgpsec":
        if all(a in deployed for a in path):
            return False
        return n - 1 > 1 + l
    raise ValueError(f"unknown mode {mode!r}")


def _attackers_at(topo: AsTopology, victim: int, l: int, cache: dict) -> bool:
    if victim not in cache:
        cache[victim] = nx.single_source_shortest_path_length(topo.graph(), victim, cutoff=4)
    return any(d == l for d in cache[victim].values())


def hijacking_rate(topo: AsTopology, plan: DeploymentPlan, l: int, mode: str = "fcbgp",
                   distance: str = "path") -> float:
    """Share of monitored paths an attacker L hops from the receiving AS can capture.

    ``distance="path"`` assumes such an attacker exists; ``"graph"`` only
    counts paths whose receiver has some AS at graph distance exactly L.
    """
    if not topo.monitored_paths:
        raise ValueError("no monitored paths")
    if l not in (1, 2, 3, 4):
        raise ValueError("L must be 1, 2, 3 or 4")
    if distance not in ("path", "graph"):
        raise ValueError(f"unknown distance mode {distance!r}")
    cache: dict = {}
    hits = 0
    for path in topo.monitored_paths:
        if not path_hijackable(path, plan.deployed, l, mode):
            continue
        if distance == "graph" and not _attackers_at(topo, path[-1], l, cache):
            continue
        hits += 1
    return hits / len(topo.monitored_paths)


# -- filtering -----------------------------------------------------------------


def filtering_counts(degrees: Sequence[int], deployed: Sequence[bool]) -> tuple[int, int]:
    """(filtered units N, injectable units M) for path A_0..A_n.

    A_k filters only when it deploys (t_k = 1).
    """
    n = len(degrees) - 1
    if n < 1:
        raise DegenerateError("need a path with at least one hop")
    if len(deployed) != len(degrees):
        raise ValueError("one deployment flag per path AS")
    if degrees[0] < 1 or degrees[n] < 1:
        raise DegenerateError("path end with no neighbors")
    for k in range(1, n):
        if degrees[k] < 2:
            raise DegenerateError(f"interior AS A_{k} has degree {degrees[k]} < 2")
    t = [1 if x else 0 for x in deployed]
    m = 2 + sum(d - 1 for d in degrees)
    y = (degrees[0] - 1) * t[0] + sum((degrees[k] - 2) * t[k] for k in range(1, n)) \
        + (degrees[n] - 1) * t[n]
    return y, m


def filtering_rate(degrees: Sequence[int], deployed: Sequence[bool]) -> Fraction:
    y, m = filtering_counts(degrees, deployed)
    return Fraction(y, m)


def average_filtering_curve(topo: AsTopology, rates: Sequence[float]
                            ) -> list[tuple[float, float]]:
    """Mean filtering rate over the monitored paths for each deployment rate."""
    paths = [p for p in topo.monitored_paths if len(p) >= 2]
    if not paths:
        raise ValueError("no monitored paths with at least one hop")
    order = ranking(topo)
    degs = [[topo.degree(a) for a in p] for p in paths]
    out = []
    for rate in rates:
        plan = plan_for_rate(topo, rate, order)
        total = sum(filtering_rate(d, [a in plan.deployed for a in p]) for d, p in zip(degs, paths))
        out.append((rate, float(total / len(paths))))
    return out


def hijack_table(topo: AsTopology, rates: Sequence[float], ls: Sequence[int] = (1, 2, 3, 4),
                 modes: Sequence[str] = ("fcbgp", "bgpsec"), distance: str = "path"
                 ) -> list[tuple[float, int, str, float]]:
    order = ranking(topo)
    rows = []
    for rate in rates:
        plan = plan_for_rate(topo, rate, order)
        for l in ls:
            for mode in modes:
                rows.append((rate, l, mode, hijacking_rate(topo, plan, l, mode, distance)))
    return rows


def write_hijack_csv(rows, path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate", "L", "mode", "hijack_rate"])
        for rate, l, mode, v in rows:
            w.writerow([f"{rate:g}", l, mode, f"{v:.6f}"])


def write_filter_csv(curve, path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate", "mean_F"])
        for rate, f in curve:
            w.writerow([f"{rate:g}", f"{f:.6f}"])


# -- synthetic topologies ------------------------------------------------------


def synthetic_topology(n: int = 500, m: int = 2, *, seed: int = 0, paths: int = 2000
                       ) -> AsTopology:
    """Scale-free (Barabasi-Albert) AS graph with degree-derived relationships
    and valley-free monitored paths between random AS pairs.

    The higher-degree end of each link is the provider; equal degrees peer.
    """
    g = nx.barabasi_albert_graph(n, m, seed=seed)
    topo = AsTopology()
    for u, v in sorted(g.edges()):
        a, b = u + 1, v + 1
        du, dv = g.degree(u), g.degree(v)
        if du == dv:
            topo.add_relation(a, b, Rel.PEER)
        elif du > dv:
            topo.add_relation(a, b, Rel.CUSTOMER)
        else:
            topo.add_relation(a, b, Rel.PROVIDER)
    for a in topo.ases:
        topo.prefixes[ipaddress.ip_network(f"10.{a >> 8 & 0xFF}.{a & 0xFF}.0/24")] = a
    topo.monitored_paths = monitored_paths(topo, paths, seed=seed)
    return topo


def valley_free_paths_from(topo: AsTopology, origin: int) -> dict[int, tuple[int, ...]]:
    """Shortest valley-free announcement path from ``origin`` to every AS.

    An announcement climbs customer-to-provider links, crosses at most one
    peer link, then only descends. Ties go to the lowest-ASN predecessor.
    """
    # phase 0: still climbing; 1: peered or descending
    best: dict[tuple[int, int], tuple[int, ...]] = {(origin, 0): (origin,)}
    queue = deque([(origin, 0)])
    while queue:
        node, phase = queue.popleft()
        path = best[(node, phase)]
        for nb in sorted(topo.adjacency[node]):
            rel = topo.adjacency[node][nb]  # what nb is to node
            if nb in path:
                continue
            if rel == Rel.PROVIDER and phase == 0:
                nxt = (nb, 0)
            elif rel == Rel.PEER and phase == 0:
                nxt = (nb, 1)
            elif rel == Rel.CUSTOMER:
                nxt = (nb, 1)
            else:
                continue
            if nxt not in best:
                best[nxt] = path + (nb,)
                queue.append(nxt)
    out: dict[int, tuple[int, ...]] = {}
    for (node, _), path in sorted(best.items(), key=lambda kv: (len(kv[1]), kv[1])):
        out.setdefault(node, path)
    return out


def monitored_paths(topo: AsTopology, count: int, *, seed: int = 0) -> list[tuple[int, ...]]:
    rng = random.Random(seed)
    ases = topo.ases
    if len(ases) < 2:
        return []
    cache: dict[int, dict[int, tuple[int, ...]]] = {}
    out = []
    attempts = 0
    while len(out) < count and attempts < count * 20:
        attempts += 1
        origin, receiver = rng.sample(ases, 2)
        if origin not in cache:
            cache[origin] = valley_free_paths_from(topo, origin)
        path = cache[origin].get(receiver)
        if path is not None:
            out.append(path)
    return out


# -- churn ---------------------------------------------------------------------


class PathRecord(NamedTuple):
    src_as: int
    prefix: str
    as_path: tuple[int, ...]


def pathlets(as_path: Sequence[int]) -> set[tuple[int, int, int]]:
    """Pathlets an FC would cover for ``as_path`` (origin first), 0 as Null."""
    return {(as_path[i - 1] if i else 0, as_path[i], as_path[i + 1])
            for i in range(len(as_path) - 1)}


@dataclass
class ChurnStats:
    total: int = 0
    new_path: int = 0
    path_change: int = 0
    repeats: int = 0
    fcs_in_changes: int = 0
    unchanged_fcs: int = 0
    histogram: Counter = field(default_factory=Counter)

    @property
    def new_path_fraction(self) -> float:
        return self.new_path / self.total if self.total else 0.0

    @property
    def path_change_fraction(self) -> float:
        return self.path_change / self.total if self.total else 0.0

    @property
    def unchanged_fc_fraction(self) -> float:
        return self.unchanged_fcs / self.fcs_in_changes if self.fcs_in_changes else 0.0

    def at_most(self, k: int) -> float:
        """Share of path-change updates with at most ``k`` changed FCs."""
        if not self.path_change:
            return 0.0
        return sum(v for c, v in self.histogram.items() if c <= k) / self.path_change


def update_churn_stats(stream: Iterable[PathRecord | tuple]) -> ChurnStats:
    """New-path vs path-change accounting over a stream of (src-AS, prefix, path).

    A path change counts the pathlets of the new path that the previous path
    for the same (src-AS, prefix) did not have; those are the FCs to verify.
    """
    last: dict[tuple[int, str], tuple[int, ...]] = {}
    st = ChurnStats()
    for rec in stream:
        src, prefix, path = rec[0], str(rec[1]), tuple(rec[2])
        st.total += 1
        key = (src, prefix)
        old = last.get(key)
        last[key] = path
        if old is None:
            st.new_path += 1
        elif old == path:
            st.repeats += 1
        else:
            st.path_change += 1
            new_p, old_p = pathlets(path), pathlets(old)
            changed = len(new_p - old_p)
            st.histogram[changed] += 1
            st.fcs_in_changes += len(new_p)
            st.unchanged_fcs += len(new_p & old_p)
    return st


def read_path_records(source) -> list[PathRecord]:
    name, lines = _lines(source)
    out = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise TopologyParseError(name, lineno, "expected src_as|prefix|as path")
        try:
            out.append(PathRecord(int(parts[0]), parts[1].strip(),
                                  tuple(int(x) for x in parts[2].split())))
        except ValueError as exc:
            raise TopologyParseError(name, lineno, str(exc)) from None
    return out
