"""Per-worker NAT pipeline and software receive-side scaling.

``process_packet`` chains the connection table, the rule tables, the pool and
the in-place rewriter. ``run_pipeline`` fans packets out to long-lived worker
threads with a symmetric Toeplitz hash, the way a NIC spreads flows over
per-core queues, and emits results in input order.
"""

from __future__ import annotations

import enum
import queue
import threading
from dataclasses import dataclass, field, fields

from .conntrack import ConnTable
from .errors import KeyConflict, MalformedPacket, PoolExhausted, TableFull
from .packet import (KEEP, FiveTuple, LinkMode, PacketView, Side, five_tuple, parse,
                     rewrite)
from .pcap import PcapRecord
from .pool import NatPool
from .rules import FROM_POOL, NatType, RuleBook, RuleTableSet

# 0x6d5a repeated makes the Toeplitz hash invariant under swapping the
# source and destination endpoints.
SYMMETRIC_RSS_KEY = bytes.fromhex("6d5a" * 20)

_BATCH = 256


class Direction(enum.Enum):
    OUTBOUND = "outbound"  # private side, SNAT rules apply
    INBOUND = "inbound"    # public side, DNAT rules apply


class Verdict(enum.Enum):
    FORWARD = "forward"
    DROP = "drop"
    PASS_THROUGH = "pass_through"


def _toeplitz_tables(key: bytes, nbytes: int) -> list[list[int]]:
    """Per input byte, the 32-bit hash contribution of each of its 256 values."""
    kint = int.from_bytes(key, "big")
    klen = len(key) * 8
    tables = []
    for b in range(nbytes):
        bit_vals = []
        for bit in range(8):
            i = b * 8 + bit  # input bit index, MSB first
            bit_vals.append((kint >> (klen - 32 - i)) & 0xFFFFFFFF)
        tbl = [0] * 256
        for v in range(256):
            h = 0
            for bit in range(8):
                if v & (0x80 >> bit):
                    h ^= bit_vals[bit]
            tbl[v] = h
        tables.append(tbl)
    return tables


class ToeplitzHash:
    """Toeplitz hash over the IPv4 4-tuple (src ip, dst ip, src port, dst port)."""

    def __init__(self, key: bytes = SYMMETRIC_RSS_KEY):
        if len(key) < 16:
            raise ValueError("RSS key must be at least 16 bytes for a 12-byte input")
        self.key = key
        self._t = _toeplitz_tables(key, 12)

    def __call__(self, t: FiveTuple) -> int:
        tb = self._t
        h = 0
        for i, v in enumerate((t.src_ip, t.dst_ip)):
            o = 4 * i
            h ^= (tb[o][v >> 24] ^ tb[o + 1][(v >> 16) & 0xFF]
                  ^ tb[o + 2][(v >> 8) & 0xFF] ^ tb[o + 3][v & 0xFF])
        sp, dp = t.src_port, t.dst_port
        return h ^ tb[8][sp >> 8] ^ tb[9][sp & 0xFF] ^ tb[10][dp >> 8] ^ tb[11][dp & 0xFF]


_default_hash = ToeplitzHash()


def dispatch(t: FiveTuple, n_workers: int) -> int:
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    return _default_hash(t) % n_workers


@dataclass
class PipelineStats:
    packets_in: int = 0
    packets_out: int = 0
    dropped: int = 0
    ct_hits: int = 0
    rule_lookups: int = 0
    rule_hits: int = 0
    rule_misses: int = 0
    malformed: int = 0
    pass_through: int = 0
    pool_exhausted: int = 0
    table_full: int = 0
    conflicts: int = 0

    def merge(self, other: "PipelineStats") -> "PipelineStats":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RunStats:
    """Totals plus the per-worker breakdown they were summed from."""

    total: PipelineStats
    workers: list = field(default_factory=list)
    dispatcher: PipelineStats = field(default_factory=PipelineStats)


class NatContext:
    """Shared state handed to every worker.

    *rules* may be a :class:`RuleBook` (its current snapshot is read per
    packet) or a fixed :class:`RuleTableSet`.
    """

    def __init__(self, rules, conntrack: ConnTable | None = None, pool: NatPool | None = None,
                 miss_verdict: Verdict = Verdict.PASS_THROUGH,
                 other_verdict: Verdict = Verdict.PASS_THROUGH):
        self.rules = rules
        self.conntrack = conntrack if conntrack is not None else ConnTable()
        self.pool = pool
        self.miss_verdict = miss_verdict
        self.other_verdict = other_verdict
        if pool is not None and self.conntrack.on_release is None:
            self.conntrack.on_release = pool.release

    @property
    def snapshot(self) -> RuleTableSet:
        r = self.rules
        return r.current if isinstance(r, RuleBook) else r

    def is_public(self, ip: int) -> bool:
        return self.pool is not None and ip in self.pool


def _apply(pkt: PacketView, t: FiveTuple, rec) -> None:
    (sip, sport), (dip, dport) = rec.translated_src, rec.translated_dst
    if sip != t.src_ip or sport != t.src_port:
        rewrite(pkt, Side.SRC, sip, sport)
    if dip != t.dst_ip or dport != t.dst_port:
        rewrite(pkt, Side.DST, dip, dport)


def _count(stats: PipelineStats, verdict: Verdict) -> Verdict:
    if verdict is Verdict.DROP:
        stats.dropped += 1
    else:
        stats.packets_out += 1
        if verdict is Verdict.PASS_THROUGH:
            stats.pass_through += 1
    return verdict


def process_packet(pkt: PacketView, direction: Direction, ctx: NatContext,
                   stats: PipelineStats) -> Verdict:
    """Translate one parsed packet in place and return what to do with it."""
    stats.packets_in += 1
    if not pkt.valid:
        return _count(stats, ctx.other_verdict)

    t = five_tuple(pkt)
    ct = ctx.conntrack
    rec = ct.lookup(t)
    if rec is not None:
        stats.ct_hits += 1
        _apply(pkt, t, rec)
        return _count(stats, Verdict.FORWARD)

    if direction is Direction.OUTBOUND:
        if ctx.is_public(t.dst_ip):
            return _count(stats, Verdict.PASS_THROUGH)  # hairpin: unsupported
        nat_type, ip, port = NatType.SNAT, t.src_ip, t.src_port
    else:
        nat_type, ip, port = NatType.DNAT, t.dst_ip, t.dst_port

    snap = ctx.snapshot
    stats.rule_lookups += 1
    rule = snap.lookup(nat_type, ip, port)
    if rule is None:
        stats.rule_misses += 1
        return _count(stats, ctx.miss_verdict)
    stats.rule_hits += 1

    lease = None
    new_port = rule.rewrite_port
    if new_port is FROM_POOL:
        try:
            lease = ctx.pool.allocate(t.proto, ip=rule.rewrite_ip, hint=t)
        except PoolExhausted:
            stats.pool_exhausted += 1
            return _count(stats, Verdict.DROP)
        new_port = lease.port
    elif new_port is KEEP:
        new_port = port

    if nat_type is NatType.SNAT:
        translated = t._replace(src_ip=rule.rewrite_ip, src_port=new_port)
    else:
        translated = t._replace(dst_ip=rule.rewrite_ip, dst_port=new_port)

    if translated == t:
        # identity rule: nothing to track, nothing to rewrite
        if lease is not None:
            ctx.pool.release(lease)
        return _count(stats, Verdict.FORWARD)

    try:
        rec, _won = ct.insert_pair(t, translated.reversed(), lease=lease,
                                   generation=snap.generation)
    except TableFull:
        stats.table_full += 1
        return _count(stats, Verdict.DROP)
    except KeyConflict:
        stats.conflicts += 1
        return _count(stats, Verdict.DROP)
    _apply(pkt, t, rec)
    return _count(stats, Verdict.FORWARD)


class NullSink:
    def write(self, record) -> None:
        pass


def _worker(inbox: queue.SimpleQueue, ctx: NatContext, stats: PipelineStats,
            keep: list | None, errors: list):
    try:
        while True:
            batch = inbox.get()
            if batch is None:
                return
            for seq, direction, pkt, ts in batch:
                verdict = process_packet(pkt, direction, ctx, stats)
                if keep is not None and verdict is not Verdict.DROP:
                    keep.append((seq, PcapRecord(pkt.buffer, ts)))
    except BaseException as exc:  # surfaced by run_pipeline
        errors.append(exc)


def run_pipeline(source, sink, n_workers: int, ctx: NatContext,
                 mode: LinkMode = LinkMode.IPV4) -> RunStats:
    """Process every ``(Direction, PcapRecord)`` item of *source*.

    Forwarded and passed-through packets are written to *sink* (anything with
    a ``write(record)`` method, or None to discard) in input order once the
    source is exhausted.
    """
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    keep_output = sink is not None and not isinstance(sink, NullSink)
    stats = [PipelineStats() for _ in range(n_workers)]
    outputs = [[] if keep_output else None for _ in range(n_workers)]
    inboxes = [queue.SimpleQueue() for _ in range(n_workers)]
    errors: list = []
    threads = [threading.Thread(target=_worker, name=f"nat-worker-{i}",
                                args=(inboxes[i], ctx, stats[i], outputs[i], errors),
                                daemon=True)
               for i in range(n_workers)]
    for th in threads:
        th.start()

    disp = PipelineStats()
    pending = [[] for _ in range(n_workers)]
    rss = _default_hash
    try:
        for seq, (direction, rec) in enumerate(source):
            try:
                pkt = parse(rec.data, mode)
            except MalformedPacket:
                disp.packets_in += 1
                disp.malformed += 1
                disp.dropped += 1
                continue
            w = rss(five_tuple(pkt)) % n_workers if pkt.valid else 0
            box = pending[w]
            box.append((seq, direction, pkt, rec.ts_ns))
            if len(box) >= _BATCH:
                inboxes[w].put(box)
                pending[w] = []
    finally:
        for w in range(n_workers):
            if pending[w]:
                inboxes[w].put(pending[w])
            inboxes[w].put(None)
        for th in threads:
            th.join()
    if errors:
        raise errors[0]

    if keep_output:
        merged = sorted((item for out in outputs for item in out), key=lambda it: it[0])
        for _, rec in merged:
            sink.write(rec)

    total = PipelineStats()
    for s in stats:
        total.merge(s)
    total.merge(disp)
    return RunStats(total=total, workers=stats, dispatcher=disp)
