"""Rule-lookup latency and pipeline throughput benchmarks.

The lookup benchmark compares QNS against a linear scan over the same rules,
timing every lookup individually with ``time.perf_counter_ns``. Answers from
the timed algorithm are checked against a vectorized brute-force matcher, so
a fast-but-wrong lookup cannot produce a result.
"""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .conntrack import ConnTable
from .datapath import Direction, NatContext, NullSink, RunStats, run_pipeline
from .packet import ip_to_int
from .pool import NatPool, PoolConfig
from .rules import (FROM_POOL, WILDCARD, NatRule, NatType, RuleBook, RuleTableSet,
                    linear_lookup, precedence_order)
from .traffic import TrafficSpec, generate

SWEEP_RULE_COUNTS = (100, 1000, 3000, 5000, 10000)
DEFAULT_QUERIES = 100_000
DEFAULT_WARMUP = 10_000
BENCH_PREFIXES = (16, 24, 32)
REPORT_COLUMNS = ("algorithm", "rule_count", "lookups", "mean_ns", "p50_ns", "p99_ns", "seed")


class Algorithm(enum.Enum):
    QNS = "qns"
    LINEAR = "linear"


@dataclass
class BenchResult:
    algorithm: Algorithm
    rule_count: int
    lookups: int
    mean_ns: float
    p50_ns: float
    p99_ns: float
    seed: int
    baseline_ns: float = 0.0
    samples: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"algorithm": self.algorithm.value, "rule_count": self.rule_count,
                "lookups": self.lookups, "mean_ns": round(self.mean_ns, 1),
                "p50_ns": round(self.p50_ns, 1), "p99_ns": round(self.p99_ns, 1),
                "seed": self.seed}


def random_rules(rule_count: int, seed: int, prefixes=BENCH_PREFIXES,
                 wildcard_fraction: float = 0.5) -> list[NatRule]:
    """*rule_count* distinct SNAT rules with seeded prefixes and ports."""
    rng = np.random.default_rng(seed)
    rules, seen = [], set()
    while len(rules) < rule_count:
        prefix = int(rng.choice(prefixes))
        ip = int(rng.integers(0, 2**32))
        port = WILDCARD if rng.random() < wildcard_fraction else int(rng.integers(1, 65536))
        rule = NatRule(NatType.SNAT, ip, prefix, port, ip_to_int("203.0.113.1"), FROM_POOL)
        if rule.key in seen:
            continue
        seen.add(rule.key)
        rules.append(rule)
    return rules


def random_queries(rules: list[NatRule], n_queries: int, seed: int) -> list[tuple[int, int]]:
    """Keys each guaranteed to match at least the rule it was drawn from."""
    rng = np.random.default_rng([seed, 2])
    picks = rng.integers(0, len(rules), n_queries)
    host = rng.integers(0, 2**32, n_queries)
    ports = rng.integers(1, 65536, n_queries)
    out = []
    for i, h, p in zip(picks.tolist(), host.tolist(), ports.tolist()):
        r = rules[i]
        ip = r.match_ip | (h & ~r.mask & 0xFFFFFFFF)
        out.append((ip, p if r.match_port is WILDCARD else r.match_port))
    return out


def brute_force_answers(rules: list[NatRule], queries) -> list[int]:
    """Index into *rules* of the most specific match per query, or -1."""
    if not queries:
        return []
    r_ip = np.array([r.match_ip for r in rules], dtype=np.uint32)
    r_mask = np.array([r.mask for r in rules], dtype=np.uint32)
    r_port = np.array([r.port_key for r in rules], dtype=np.int32)
    # more specific = longer prefix, then exact port over wildcard
    score = np.array([r.prefix_len * 2 + (r.match_port is not WILDCARD) for r in rules],
                     dtype=np.int32)
    q = np.asarray(queries, dtype=np.int64)
    q_ip = q[:, 0].astype(np.uint32)
    q_port = q[:, 1].astype(np.int32)
    out = np.empty(len(q), dtype=np.int64)
    chunk = max(1, 4_000_000 // max(1, len(rules)))
    for s in range(0, len(q), chunk):
        ip = q_ip[s:s + chunk, None]
        port = q_port[s:s + chunk, None]
        hit = ((ip & r_mask) == r_ip) & ((r_port == 0) | (r_port == port))
        scored = np.where(hit, score, -1)
        best = scored.argmax(axis=1)
        out[s:s + chunk] = np.where(scored[np.arange(len(best)), best] >= 0, best, -1)
    return out.tolist()


def _summary(samples: np.ndarray) -> tuple[float, float, float]:
    return (float(samples.mean()), float(np.percentile(samples, 50)),
            float(np.percentile(samples, 99)))


def timer_baseline(n: int = DEFAULT_QUERIES) -> float:
    """Mean cost of the timing loop around an empty call, in ns."""
    clock = time.perf_counter_ns
    noop = _noop
    samples = np.empty(n, dtype=np.int64)
    for i in range(n):
        t0 = clock()
        noop(0, 0)
        samples[i] = clock() - t0
    return float(samples.mean())


def _noop(ip, port):
    return None


def run_lookup_bench(rule_count: int, n_queries: int = DEFAULT_QUERIES,
                     algorithm: Algorithm = Algorithm.QNS, seed: int = 0,
                     warmup: int = DEFAULT_WARMUP, check: bool = True) -> BenchResult:
    """Time *n_queries* matching lookups over *rule_count* random SNAT rules."""
    if rule_count < 1:
        raise ValueError("rule_count must be >= 1")
    if n_queries < 100:
        raise ValueError("n_queries must be >= 100")
    algorithm = Algorithm(algorithm)
    rules = random_rules(rule_count, seed)
    queries = random_queries(rules, n_queries, seed)
    snat = NatType.SNAT

    if algorithm is Algorithm.QNS:
        tables = RuleTableSet()
        for r in rules:
            tables.insert(r)
        tables.freeze()
        lookup = tables.lookup

        def find(ip, port):
            return lookup(snat, ip, port)
    else:
        ordered = precedence_order(rules)

        def find(ip, port):
            return linear_lookup(ordered, snat, ip, port)

    for k in range(warmup):
        find(*queries[k % n_queries])

    clock = time.perf_counter_ns
    samples = np.empty(n_queries, dtype=np.int64)
    answers = [None] * n_queries
    for i, (ip, port) in enumerate(queries):
        t0 = clock()
        rule = find(ip, port)
        samples[i] = clock() - t0
        answers[i] = rule

    if check:
        expected = brute_force_answers(rules, queries)
        index = {id(r): k for k, r in enumerate(rules)}
        for i, (got, want) in enumerate(zip(answers, expected)):
            if (-1 if got is None else index[id(got)]) != want:
                raise AssertionError(f"{algorithm.value} answered query {i} "
                                     f"{queries[i]} with {got}, expected {rules[want]}")

    mean, p50, p99 = _summary(samples)
    return BenchResult(algorithm, rule_count, n_queries, mean, p50, p99, seed,
                       baseline_ns=timer_baseline(min(n_queries, 20_000)), samples=samples)


@dataclass
class ThroughputResult:
    packets: int
    seconds: float
    pps: float
    n_workers: int
    stats: RunStats


def run_throughput_bench(spec: TrafficSpec, n_workers: int, packets=None) -> ThroughputResult:
    """Push *spec*'s traffic (or pre-generated *packets*) through the pipeline."""
    if packets is None:
        packets = list(generate(spec))
    net = ipaddress.IPv4Network(spec.private_subnet, strict=False)
    public = ip_to_int("203.0.113.1")
    book = RuleBook([NatRule(NatType.SNAT, int(net.network_address), net.prefixlen, WILDCARD,
                             public, FROM_POOL)])
    pool = NatPool(PoolConfig((public,)), seed=spec.seed)
    ctx = NatContext(book, ConnTable(), pool)
    source = ((Direction.OUTBOUND, rec) for rec in packets)
    t0 = time.perf_counter()
    stats = run_pipeline(source, NullSink(), n_workers, ctx)
    dt = time.perf_counter() - t0
    n = stats.total.packets_in
    return ThroughputResult(n, dt, n / dt if n and dt > 0 else 0.0, n_workers, stats)


def emit_report(results, fmt: str = "csv") -> str:
    """Render results as CSV or JSON, sorted deterministically."""
    if not results:
        raise ValueError("emit_report needs at least one result")
    ordered = sorted(results, key=lambda r: (r.algorithm.value, r.rule_count, r.seed))
    if fmt == "json":
        return json.dumps([dict(r.row(), baseline_ns=round(r.baseline_ns, 1)) for r in ordered],
                          indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in ordered:
        w.writerow(r.row())
    return buf.getvalue()


def sweep(rule_counts=SWEEP_RULE_COUNTS, algorithms=(Algorithm.QNS, Algorithm.LINEAR),
            seed: int = 7, n_queries: int = DEFAULT_QUERIES, warmup: int = DEFAULT_WARMUP,
            progress=None) -> list[BenchResult]:
    results = []
    for algo in algorithms:
        for n in rule_counts:
            res = run_lookup_bench(n, n_queries, Algorithm(algo), seed, warmup)
            if progress:
                progress(res)
            results.append(res)
    return results

