"""natctl: run the NAT over pcap files, generate traffic, benchmark lookups.

Exit codes: 0 success, 1 configuration or usage error, 2 I/O error. Every
failure prints one line starting with ``natctl: error[<kind>]:`` on stderr.
"""

from __future__ import annotations

import argparse
import heapq
import json
import sys

from . import bench
from .conntrack import ConnTable
from .config import parse_config
from .datapath import Direction, NatContext, run_pipeline
from .errors import ConfigError, PcapError
from .packet import LinkMode
from .pcap import LINKTYPE_ETHERNET, LINKTYPE_IPV4, LINKTYPE_RAW, PcapWriter, read_pcap
from .pool import NatPool
from .rules import RuleBook
from .traffic import TrafficSpec, generate

EXIT_CONFIG = 1
EXIT_IO = 2

_LINK_MODES = {LINKTYPE_ETHERNET: LinkMode.ETHERNET, LINKTYPE_RAW: LinkMode.IPV4,
               LINKTYPE_IPV4: LinkMode.IPV4}


class CliError(Exception):
    def __init__(self, kind, message, code):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _fail(kind: str, message: str) -> None:
    print(f"natctl: error[{kind}]: {message}", file=sys.stderr)


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _open_input(path):
    try:
        reader = read_pcap(path)
    except FileNotFoundError:
        raise CliError("io", f"{path}: no such file", EXIT_IO)
    except (OSError, PcapError) as exc:
        raise CliError("io", str(exc), EXIT_IO)
    if reader.linktype not in _LINK_MODES:
        reader.close()
        raise CliError("io", f"{path}: unsupported link type {reader.linktype}", EXIT_IO)
    return reader


def _merged_source(readers):
    """Interleave ``(direction, reader)`` inputs by capture timestamp."""
    def tagged(order, direction, reader):
        for i, rec in enumerate(reader):
            yield (rec.ts_ns, order, i), direction, rec

    streams = [tagged(k, d, r) for k, (d, r) in enumerate(readers)]
    for _, direction, rec in heapq.merge(*streams, key=lambda item: item[0]):
        yield direction, rec


def cmd_run(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise CliError("config", f"{args.config}: {exc.strerror or exc}", EXIT_CONFIG)
    try:
        doc = parse_config(text)
    except ConfigError as exc:
        for line, msg in exc.errors:
            _fail("config", f"{args.config}:{line}: {msg}")
        return EXIT_CONFIG

    inputs = [(Direction.OUTBOUND, p) for p in args.in_private or []]
    inputs += [(Direction.INBOUND, p) for p in args.in_public or []]
    if not inputs:
        raise CliError("usage", "at least one of --in-private/--in-public is required", EXIT_CONFIG)

    readers = []
    try:
        for direction, path in inputs:
            readers.append((direction, _open_input(path)))
        linktypes = {r.linktype for _, r in readers}
        if len({_LINK_MODES[lt] for lt in linktypes}) != 1:
            raise CliError("io", "inputs mix Ethernet and raw-IPv4 link types", EXIT_IO)
        linktype = readers[0][1].linktype
        mode = _LINK_MODES[linktype]

        pool_cfg = doc.effective_pool()
        pool = NatPool(pool_cfg, seed=args.pool_seed) if pool_cfg else None
        ct = ConnTable(tcp_idle=doc.tcp_idle, udp_idle=doc.udp_idle,
                       on_release=pool.release if pool else None)
        ctx = NatContext(RuleBook(doc.rules), ct, pool, miss_verdict=doc.miss_verdict,
                         other_verdict=doc.fragment_verdict)
        workers = args.workers or doc.workers

        sink = None
        try:
            if args.out:
                sink = PcapWriter(args.out, linktype=linktype)
            stats = run_pipeline(_merged_source(readers), sink, workers, ctx, mode)
        except PcapError as exc:
            raise CliError("io", str(exc), EXIT_IO)
        except OSError as exc:
            raise CliError("io", f"{exc.filename or ''}: {exc.strerror or exc}", EXIT_IO)
        finally:
            if sink is not None:
                sink.close()
    finally:
        for _, r in readers:
            r.close()

    report = {"pipeline": stats.total.as_dict(),
              "workers": [w.as_dict() for w in stats.workers],
              "conntrack": vars(ct.stats()),
              "pool": pool.stats() if pool else None}
    for key, value in report["pipeline"].items():
        print(f"{key:16} {value}")
    cs = report["conntrack"]
    print(f"{'ct_live_pairs':16} {cs['live_pairs']}")
    print(f"{'ct_races_lost':16} {cs['races_lost']}")
    print(f"{'ct_evictions':16} {cs['evictions']}")
    if pool:
        for proto, occ in report["pool"].items():
            print(f"{'pool_' + proto:16} {occ['live']}/{occ['total']}")
    if args.stats_json:
        try:
            with open(args.stats_json, "w", encoding="utf-8") as f:
                json.dump(report, f, indent=2)
        except OSError as exc:
            raise CliError("io", f"{args.stats_json}: {exc.strerror or exc}", EXIT_IO)
    return 0


def cmd_bench(args) -> int:
    algos = [bench.Algorithm(a) for a in args.algorithms.split(",") if a]
    n_queries = 100 if args.short else args.queries

    def progress(res):
        print(f"# {res.algorithm.value:6} rules={res.rule_count:<6} mean={res.mean_ns:9.1f} ns"
              f"  (timer baseline {res.baseline_ns:.1f} ns)", file=sys.stderr)

    results = bench.sweep(args.rules, algos, args.seed, n_queries, args.warmup, progress)
    report = bench.emit_report(results, "json" if args.json else "csv")
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write(report)
        except OSError as exc:
            raise CliError("io", f"{args.out}: {exc.strerror or exc}", EXIT_IO)
    else:
        sys.stdout.write(report)
    return 0


def cmd_gen(args) -> int:
    spec = TrafficSpec(args.flows, args.packets_per_flow, args.private, args.remote,
                       args.tcp_fraction, args.size, args.seed)
    try:
        with PcapWriter(args.out, linktype=LINKTYPE_RAW) as w:
            n = 0
            for rec in generate(spec):
                w.write(rec)
                n += 1
    except OSError as exc:
        raise CliError("io", f"{args.out}: {exc.strerror or exc}", EXIT_IO)
    print(f"wrote {n} packets ({spec.n_flows} flows) to {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("usage", message)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="natctl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="translate pcap traffic")
    r.add_argument("--config", required=True)
    r.add_argument("--in-private", action="append", metavar="PCAP",
                   help="packets arriving on the private side (SNAT)")
    r.add_argument("--in-public", action="append", metavar="PCAP",
                   help="packets arriving on the public side (DNAT)")
    r.add_argument("--out", metavar="PCAP")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--pool-seed", type=int, default=None,
                   help="hash-seeded pool allocation, independent of worker scheduling")
    r.add_argument("--stats-json", metavar="PATH")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="QNS vs linear rule lookup latency")
    b.add_argument("--rules", type=_csv_ints, default=list(bench.SWEEP_RULE_COUNTS))
    b.add_argument("--algorithms", default="qns,linear")
    b.add_argument("--seed", type=int, default=7)
    b.add_argument("--queries", type=int, default=bench.DEFAULT_QUERIES)
    b.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP)
    b.add_argument("--short", action="store_true",
                   help="time only 100 lookups per configuration")
    b.add_argument("--json", action="store_true")
    b.add_argument("--out", metavar="PATH")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen", help="write deterministic synthetic traffic to a pcap")
    g.add_argument("--flows", type=int, default=100)
    g.add_argument("--packets-per-flow", type=int, default=10)
    g.add_argument("--private", default="192.168.0.0/16")
    g.add_argument("--remote", default="198.51.100.0/24")
    g.add_argument("--tcp-fraction", type=float, default=0.5)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _fail(exc.kind, str(exc))
        return exc.code
    except ValueError as exc:
        _fail("usage", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
