"""Shared connection-record table.

Both directions of a translated flow are stored as a pair of records under
their own five-tuple keys. The table is a single dict mutated only through
operations that are atomic in CPython:

* ``dict.get``/``dict.copy`` for readers,
* ``dict.setdefault`` as compare-and-set-from-empty for inserters (it never
  overwrites, so the first writer of a key wins),
* conditional delete, serialized per lock stripe among deleters only.
  Readers and inserters never take these locks.

Publication order makes pairs appear and disappear atomically. An inserter
first claims the ORIGINAL key with a placeholder, then inserts the REPLY
record, then replaces the placeholder with the ORIGINAL record. Eviction
removes the ORIGINAL record first and the REPLY record second. A pair is
visible exactly while its ORIGINAL record is in the dict, and a REPLY record
whose ORIGINAL is absent is treated as missing. Any single ``dict.copy()`` is
therefore a consistent snapshot.
"""

from __future__ import annotations

import enum
import itertools
import threading
import time
from dataclasses import dataclass

from .errors import ContractViolation, KeyConflict, TableFull
from .packet import FiveTuple, Proto

DEFAULT_CAPACITY = 1 << 20
DEFAULT_TCP_IDLE = 300.0
DEFAULT_UDP_IDLE = 60.0
_STRIPES = 64


class RecordDirection(enum.Enum):
    ORIGINAL = "original"
    REPLY = "reply"


class _State(enum.Enum):
    PENDING = 0
    LIVE = 1
    DEAD = 2


class Tally:
    """Increment-only counter safe to bump from many threads."""

    def __init__(self):
        self._it = itertools.count()

    def incr(self):
        next(self._it)  # count.__next__ runs entirely in C under the GIL

    @property
    def value(self) -> int:
        return self._it.__reduce__()[1][0]


class _Pair:
    __slots__ = ("state", "last_seen", "lease", "original", "reply")

    def __init__(self, now, lease):
        self.state = _State.PENDING
        self.last_seen = now
        self.lease = lease


class ConnRecord:
    """One direction of a tracked connection.

    ``translated_src``/``translated_dst`` are the endpoints a packet matching
    ``key`` carries after rewriting.
    """

    __slots__ = ("key", "direction", "translated_src", "translated_dst",
                 "peer_key", "rule_generation", "pair")

    def __init__(self, key, direction, translated, peer_key, generation, pair):
        self.key = key
        self.direction = direction
        self.translated_src = (translated.src_ip, translated.src_port)
        self.translated_dst = (translated.dst_ip, translated.dst_port)
        self.peer_key = peer_key
        self.rule_generation = generation
        self.pair = pair

    @property
    def last_seen(self) -> float:
        return self.pair.last_seen

    @property
    def pool_lease(self):
        return self.pair.lease

    def apply(self, t: FiveTuple) -> FiveTuple:
        return FiveTuple(self.translated_src[0], self.translated_dst[0],
                         self.translated_src[1], self.translated_dst[1], t.proto)

    def __repr__(self):
        return f"ConnRecord({self.direction.name}, {self.key} => {self.apply(self.key)})"


@dataclass
class ConnStats:
    live_pairs: int
    entries: int
    inserted: int
    races_lost: int
    evictions: int
    conflicts: int
    capacity: int


class _Claim:
    """Placeholder holding an ORIGINAL key while its pair is being built."""

    __slots__ = ("record",)

    def __init__(self, record):
        self.record = record


class ConnTable:
    """Connection pairs shared by all workers.

    *on_release* is called with the pool lease of every pair that is evicted
    or that lost an insert race. *pause* is a test hook called as
    ``pause(point, key)`` at interleaving points inside :meth:`insert_pair`.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, tcp_idle: float = DEFAULT_TCP_IDLE,
                 udp_idle: float = DEFAULT_UDP_IDLE, clock=time.monotonic, on_release=None,
                 pause=None):
        if capacity < 2 or capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two >= 2")
        self.capacity = capacity
        self.tcp_idle = tcp_idle
        self.udp_idle = udp_idle
        self.clock = clock
        self.on_release = on_release
        self._pause = pause
        self._slots: dict = {}
        self._locks = [threading.Lock() for _ in range(_STRIPES)]
        self.inserted = Tally()
        self.races_lost = Tally()
        self.evictions = Tally()
        self.conflicts = Tally()

    def __len__(self):
        """Number of visible pairs."""
        return len(published_pairs(self._slots.copy()))

    def _idle_limit(self, proto) -> float:
        return self.tcp_idle if proto is Proto.TCP else self.udp_idle

    def lookup(self, key: FiveTuple, now: float | None = None) -> ConnRecord | None:
        slots = self._slots
        rec = slots.get(key)
        if rec is None or rec.__class__ is _Claim:
            return None
        pair = rec.pair
        if rec.direction is RecordDirection.REPLY and slots.get(rec.peer_key) is not pair.original:
            return None
        if now is None:
            now = self.clock()
        if now - pair.last_seen > self._idle_limit(key.proto):
            return None  # expired; the next sweep reclaims it
        if now > pair.last_seen:
            pair.last_seen = now
        return rec

    def insert_pair(self, original: FiveTuple, reply: FiveTuple, lease=None,
                    generation: int = 0, now: float | None = None) -> tuple[ConnRecord, bool]:
        """Install the two records of a new connection.

        Returns ``(record, True)`` with the ORIGINAL record when this call
        installed the pair, or ``(winner, False)`` when another caller already
        holds *original*; the loser's *lease* is released in that case.
        Raises :class:`KeyConflict` (after releasing *lease*) when *reply* is
        held by a different connection.
        """
        if original == reply:
            raise ContractViolation("original and reply keys must differ")
        if now is None:
            now = self.clock()
        slots = self._slots
        if len(slots) + 2 > self.capacity:
            self._release(lease)
            raise TableFull(f"connection table at capacity ({self.capacity} entries)")

        pair = _Pair(now, lease)
        # ORIGINAL rewrites into the reversed reply key and vice versa.
        pair.original = ConnRecord(original, RecordDirection.ORIGINAL, reply.reversed(),
                                   reply, generation, pair)
        pair.reply = ConnRecord(reply, RecordDirection.REPLY, original.reversed(),
                                original, generation, pair)
        claim = _Claim(pair.original)

        while True:
            cur = slots.setdefault(original, claim)
            if cur is claim:
                break
            if not self._reclaim(original, cur, now):
                self.races_lost.incr()
                self._release(lease)
                return (cur.record if cur.__class__ is _Claim else cur), False

        if self._pause:
            self._pause("claimed", original)

        while True:
            cur = slots.setdefault(reply, pair.reply)
            if cur is pair.reply:
                break
            if not self._reclaim(reply, cur, now):
                pair.state = _State.DEAD
                self._remove(original, claim)
                self.conflicts.incr()
                self._release(lease)
                raise KeyConflict(f"reply key {reply} already tracked")

        if self._pause:
            self._pause("before_publish", original)
        pair.state = _State.LIVE
        # Only deleters could have changed our claim, and they never touch a
        # PENDING pair, so this store replaces exactly our placeholder.
        slots[original] = pair.original
        self.inserted.incr()
        return pair.original, True

    def _lock_for(self, key) -> threading.Lock:
        return self._locks[hash(key) & (_STRIPES - 1)]

    def _remove(self, key, value) -> bool:
        # setdefault never replaces a value, so under the stripe lock the
        # entry for key can only change through another locked removal.
        with self._lock_for(key):
            if self._slots.get(key) is value:
                del self._slots[key]
                return True
        return False

    def _kill(self, pair) -> bool:
        """Unpublish *pair*; True for exactly one caller per pair."""
        original = pair.original
        with self._lock_for(original.key):
            if self._slots.get(original.key) is not original:
                return False
            pair.state = _State.DEAD
            del self._slots[original.key]
        self._remove(pair.reply.key, pair.reply)
        self.evictions.incr()
        self._release(pair.lease)
        return True

    def _reclaim(self, key, cur, now) -> bool:
        """Clear *cur* from *key* if it belongs to a dead or expired pair.

        Returns True when the caller should retry its setdefault.
        """
        if cur.__class__ is _Claim:
            return False
        pair = cur.pair
        if pair.state is _State.LIVE:
            if now - pair.last_seen <= self._idle_limit(cur.key.proto):
                return False
            self._kill(pair)
            return True
        if pair.state is _State.DEAD:
            self._remove(key, cur)
            return True
        return False  # a pending pair's REPLY record

    def _release(self, lease):
        if lease is not None and self.on_release is not None:
            self.on_release(lease)

    def expire(self, now: float | None = None, tcp_idle: float | None = None,
               udp_idle: float | None = None) -> int:
        """Evict idle pairs and return how many were removed."""
        if now is None:
            now = self.clock()
        limits = {Proto.TCP: self.tcp_idle if tcp_idle is None else tcp_idle,
                  Proto.UDP: self.udp_idle if udp_idle is None else udp_idle}
        evicted = 0
        for key, rec in self._slots.copy().items():
            if rec.__class__ is _Claim:
                continue
            pair = rec.pair
            if rec.direction is RecordDirection.ORIGINAL:
                if now - pair.last_seen > limits[key.proto] and self._kill(pair):
                    evicted += 1
            elif pair.state is _State.DEAD:
                self._remove(key, rec)  # left behind by an interrupted eviction
        return evicted

    def snapshot(self) -> dict:
        """Point-in-time copy of the raw key -> entry mapping."""
        return self._slots.copy()

    def live_records(self) -> list[ConnRecord]:
        out = []
        for rec in published_pairs(self._slots.copy()):
            out += (rec, rec.pair.reply)
        return out

    def stats(self) -> ConnStats:
        return ConnStats(live_pairs=len(self), entries=len(self._slots),
                         inserted=self.inserted.value, races_lost=self.races_lost.value,
                         evictions=self.evictions.value, conflicts=self.conflicts.value,
                         capacity=self.capacity)


def published_pairs(snapshot: dict) -> list[ConnRecord]:
    """ORIGINAL records visible in *snapshot*."""
    return [r for r in snapshot.values()
            if r.__class__ is ConnRecord and r.direction is RecordDirection.ORIGINAL]


def check_pair_atomicity(snapshot: dict) -> list[ConnRecord]:
    """Visible ORIGINAL records in *snapshot* whose REPLY record is missing."""
    return [r for r in published_pairs(snapshot)
            if snapshot.get(r.peer_key) is not r.pair.reply]
