"""Command line entry point: ``fcbgp simulate|metrics|inspect|churn``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 invariant violated.
``FCBGP_OUTPUT_DIR`` overrides the output directory. Values from a
``--config`` YAML file override the matching flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from fcbgp import analysis, simnet
from fcbgp.binding import read_binding
from fcbgp.events import BudgetExhausted
from fcbgp.sync import VIEW_TAGS, BindingVersionView, PeriodWarning, Tag, decode_ranges, \
    decode_supply, read_sync_record
from fcbgp.trust_base import TrustFileError
from fcbgp.wire_codec import (
    FC_ATTR_TYPE,
    FLAG_EXTENDED,
    FLAG_OPTIONAL,
    FLAG_PARTIAL,
    FLAG_TRANSITIVE,
    MalformedMessageError,
    MsgType,
    Reader,
    decode_fc_value,
    decode_update,
    read_header,
)

log = logging.getLogger("fcbgp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
DEFAULT_RATES = (0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    scenario: str | None = None
    as_rel: str | None = None
    prefix2as: str | None = None
    synthetic: int | None = None
    paths: int = 2000
    rates: list[float] = field(default_factory=lambda: list(DEFAULT_RATES))
    ls: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    distance: str = "path"
    period: int | None = None
    budget: int = 1_000_000
    output_dir: str = "."

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise UsageError(f"seed must be an integer, got {self.seed!r}")
        try:
            self.rates = [float(r) for r in self.rates]
            self.ls = [int(x) for x in self.ls]
        except (TypeError, ValueError):
            raise UsageError("rates must be numbers and L values integers") from None
        for r in self.rates:
            if not 0 <= r <= 1:
                raise UsageError(f"deployment rate {r} outside [0, 1]")
        for x in self.ls:
            if x not in (1, 2, 3, 4):
                raise UsageError(f"L must be in 1..4, got {x}")
        if self.period is not None and self.period < 1:
            raise UsageError("period must be a positive number of ticks")
        if self.distance not in ("path", "graph"):
            raise UsageError("distance must be 'path' or 'graph'")

    @classmethod
    def build(cls, args: argparse.Namespace) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in vars(args).items() if k in known and v is not None}
        if getattr(args, "config", None):
            try:
                doc = yaml.safe_load(Path(args.config).read_text()) or {}
            except OSError as exc:
                raise DataError(f"cannot read config: {exc}") from None
            except yaml.YAMLError as exc:
                raise DataError(f"bad config file: {exc}") from None
            if not isinstance(doc, dict):
                raise UsageError("config file must be a mapping")
            unknown = set(doc) - known
            if unknown:
                raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
            values.update(doc)
        if "seed" not in values:
            raise UsageError("--seed is required")
        env_out = os.environ.get("FCBGP_OUTPUT_DIR")
        if env_out:
            values["output_dir"] = env_out
        return cls(**values)

    def out(self, name: str) -> Path:
        d = Path(self.output_dir)
        d.mkdir(parents=True, exist_ok=True)
        return d / name


# -- simulate -------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig) -> int:
    if not cfg.scenario:
        raise UsageError("simulate needs --scenario (a file or a bundled name)")
    path = Path(cfg.scenario)
    if not path.exists():
        path = simnet.bundled_scenario(cfg.scenario)
    sc = simnet.load_scenario(path)
    sc.seed = cfg.seed
    if cfg.period is not None and sc.sync:
        sc.sync["period"] = cfg.period
    sim = simnet.build_simulation(sc)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PeriodWarning)
        trace = sim.run_until_quiescent(budget=min(cfg.budget, sc.budget))
        if sim.sync is not None:
            lat = sim.sync.avg_check_latency()
            if lat >= sim.sync.config.period:
                warnings.warn(f"check period {sim.sync.config.period} does not exceed "
                              f"average check latency {lat:.1f}", PeriodWarning)
    trace.write(cfg.out("trace.jsonl"))
    problems = simnet.check_expectations(sim, sc)
    summary = {
        "scenario": sc.name, "seed": cfg.seed, "trace_sha256": trace.digest(),
        "events": sim.loop.processed, "routes": sim.summary(),
        "packets": [p._asdict() for p in sim.packets],
        "warnings": [str(w.message) for w in caught],
        "violations": problems,
    }
    cfg.out("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"scenario {sc.name}: {sim.loop.processed} events, trace sha256 {trace.digest()[:16]}")
    for r in summary["routes"]:
        who = sc.topo.name(r["as"])
        print(f"  {who:<10} {r['prefix']:<18} {r['class']:<17} path {r['path']}")
    for p in sim.packets:
        verdict = "delivered" if p.delivered else f"discarded at AS{p.stopped_at} ({p.reason})"
        print(f"  packet {p.label}: {verdict}")
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    for v in problems:
        print(f"invariant violated: {v}", file=sys.stderr)
    return EXIT_INVARIANT if problems else EXIT_OK


# -- metrics -----------------------------------------------------------------


def _metrics_topology(cfg: ExperimentConfig) -> analysis.AsTopology:
    if cfg.as_rel:
        topo = analysis.load_topology(cfg.as_rel, cfg.prefix2as)
        topo.monitored_paths = analysis.monitored_paths(topo, cfg.paths, seed=cfg.seed)
        return topo
    return analysis.synthetic_topology(cfg.synthetic or 500, seed=cfg.seed, paths=cfg.paths)


def cmd_metrics(cfg: ExperimentConfig) -> int:
    topo = _metrics_topology(cfg)
    if not topo.monitored_paths:
        raise DataError("topology yields no monitored paths")
    rows = analysis.hijack_table(topo, cfg.rates, cfg.ls, distance=cfg.distance)
    analysis.write_hijack_csv(rows, cfg.out("hijack_rate.csv"))
    with open(cfg.out("hijack_breakdown.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate"] + [f"L{x}" for x in cfg.ls])
        for rate in cfg.rates:
            w.writerow([f"{rate:g}"] + [f"{v:.6f}" for r, l, m, v in rows
                                          if r == rate and m == "fcbgp"])
    curve = analysis.average_filtering_curve(topo, cfg.rates)
    analysis.write_filter_csv(curve, cfg.out("filter_rate.csv"))
    print(f"{len(topo.ases)} ASes, {len(topo.monitored_paths)} monitored paths")
    bad = []
    for rate, l, mode, v in rows:
        if mode == "fcbgp":
            other = next(x for r, ll, m, x in rows if r == rate and ll == l and m == "bgpsec")
            print(f"  rate {rate:<6g} L={l} fcbgp {v:.4f} bgpsec {other:.4f}")
            if v > other:
                bad.append(f"fcbgp above bgpsec at rate {rate}, L={l}")
    for rate, f in curve:
        print(f"  rate {rate:<6g} mean F {f:.4f}")
    for v in bad:
        print(f"invariant violated: {v}", file=sys.stderr)
    return EXIT_INVARIANT if bad else EXIT_OK


# -- inspect -------------------------------------------------------------------


def _flags(f: int) -> str:
    bits = [(FLAG_OPTIONAL, "O"), (FLAG_TRANSITIVE, "T"), (FLAG_PARTIAL, "P"), (FLAG_EXTENDED, "E")]
    return " ".join(f"{name}={int(bool(f & bit))}" for bit, name in bits)


def hexdump(data: bytes, width: int = 16) -> list[str]:
    return [f"{i:08x}  {data[i:i + width].hex(' '):<{width * 3}} " for i in range(0, len(data), width)]


def describe(data: bytes) -> list[str]:
    r = Reader(data)
    mt = read_header(r)
    out = [f"message: {mt.name} ({len(data)} octets)"]
    if mt == MsgType.UPDATE:
        upd = decode_update(data)
        out.append(f"kind: {upd.kind.name}")
        out.append(f"prefix: {upd.prefix}")
        out.append(f"as-path: {' '.join(map(str, upd.as_path)) or '(empty)'}")
        for a in upd.attributes:
            out.append(f"attribute type-code={a.type_code} flags=0x{a.flags:02x} ({_flags(a.flags)}) "
                       f"length={len(a.value)}")
            if a.type_code == FC_ATTR_TYPE:
                for fc in decode_fc_value(a.value):
                    out.append(f"  fc {fc} sig={fc.signature.hex()}")
    elif mt == MsgType.BINDING:
        msg = read_binding(r)
        r.expect_end()
        out += [f"src-prefix: {msg.src_prefix}", f"dst-prefix: {msg.dst_prefix}",
                f"ver: {msg.ver}", f"ver-sub: {msg.ver_sub}", f"seq: {msg.seq}",
                f"issuer: {msg.issuer}",
                "form: " + ("off-path" if msg.off_path else "on-path")]
        if msg.fc_list:
            out.append("fc-list:")
            out += [f"  {fc} sig={fc.signature.hex() or '(none)'}" for fc in msg.fc_list]
        else:
            out.append("fc-list: (empty)")
        out.append(f"signature: {msg.signature.hex()}")
    else:
        rec = read_sync_record(r)
        r.expect_end()
        out += [f"tag: {rec.tag.name}", f"round: {rec.round}", f"leader: {rec.leader}",
                f"sender: {rec.sender}"]
        if rec.tag in VIEW_TAGS:
            view = BindingVersionView.decode(rec.payload)
            out.append("view: " + (", ".join(f"AS{a}={v}" for a, v in sorted(view.entries.items()))
                                   or "(empty)"))
        elif rec.tag == Tag.REQUEST:
            out += [f"request AS{a} {lo}..{hi}" for a, lo, hi in decode_ranges(rec.payload)]
        elif rec.tag == Tag.SUPPLY:
            out += [f"supply AS{m.issuer} seq {m.seq} ver {m.ver}.{m.ver_sub}"
                    for m in decode_supply(rec.payload)]
    return out


def cmd_inspect(path: str) -> int:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read fixture: {exc}") from None
    for line in describe(data):
        print(line)
    print("hex:")
    for line in hexdump(data):
        print(line)
    return EXIT_OK


# -- churn ---------------------------------------------------------------------


def cmd_churn(path: str, cfg: ExperimentConfig) -> int:
    st = analysis.update_churn_stats(analysis.read_path_records(path))
    with open(cfg.out("churn.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["changed_fcs", "updates"])
        for k in sorted(st.histogram):
            w.writerow([k, st.histogram[k]])
    print(f"updates: {st.total}")
    print(f"new-path fraction: {st.new_path_fraction:.4f}")
    print(f"path-change fraction: {st.path_change_fraction:.4f}")
    print(f"unchanged FC fraction in path changes: {st.unchanged_fc_fraction:.4f}")
    print(f"path changes with at most 2 changed FCs: {st.at_most(2):.4f}")
    return EXIT_OK


# -- entry -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fcbgp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML file whose keys override flags")
        sp.add_argument("--output-dir", dest="output_dir")
        if seed:
            sp.add_argument("--seed", type=int, help="RNG seed (required)")

    s = sub.add_parser("simulate", help="run a scenario and write trace + summary")
    s.add_argument("--scenario", help="scenario YAML path or bundled name (e.g. partial_deployment)")
    s.add_argument("--period", type=int, help="consistency-check period in ticks")
    s.add_argument("--budget", type=int, help="tick budget")
    common(s)

    m = sub.add_parser("metrics", help="hijacking and filtering sweeps as CSV")
    m.add_argument("--as-rel", dest="as_rel")
    m.add_argument("--prefix2as")
    m.add_argument("--synthetic", type=int, help="size of the synthetic topology (default 500)")
    m.add_argument("--paths", type=int, help="monitored paths to sample")
    m.add_argument("--rates", type=_rates, help="comma-separated deployment rates")
    m.add_argument("--L", dest="ls", type=_ints, help="comma-separated attacker distances")
    m.add_argument("--distance", choices=["path", "graph"])
    common(m)

    i = sub.add_parser("inspect", help="decode a binary fixture")
    i.add_argument("fixture")

    c = sub.add_parser("churn", help="update churn statistics over a path-records file")
    c.add_argument("records")
    common(c, seed=False)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect":
            return cmd_inspect(args.fixture)
        if args.command == "churn":
            args.seed = 0  # churn takes no randomness
            return cmd_churn(args.records, ExperimentConfig.build(args))
        cfg = ExperimentConfig.build(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_metrics(cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fcbgp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, simnet.ScenarioError, analysis.TopologyParseError,
            analysis.TopologyConflictError, MalformedMessageError, TrustFileError,
            FileNotFoundError) as exc:
        print(f"fcbgp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BudgetExhausted as exc:
        print(f"fcbgp: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
