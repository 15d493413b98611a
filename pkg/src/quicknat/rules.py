"""NAT rule storage and lookup.

Rules live in 32 SNAT and 32 DNAT hash sub-tables, one per prefix length.
A lookup walks the sub-tables from /32 down to /1, skipping the ones whose
presence flag is clear, and probes each with the exact port first and the
wildcard port (key 0) second. The first hit wins, so a longer prefix always
beats a shorter one and exact-port beats wildcard only within one prefix.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field

from .errors import ContractViolation, DuplicateRule, InvalidRule, RuleNotFound
from .packet import KEEP, int_to_ip

MAX_PREFIX = 32


class NatType(enum.Enum):
    SNAT = "snat"
    DNAT = "dnat"


class _Sentinel:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


#: ``match_port`` value matching any port; stored under key port 0.
WILDCARD = _Sentinel("WILDCARD")
#: ``rewrite_port`` value asking the NAT pool for a port (SNAT only).
FROM_POOL = _Sentinel("FROM_POOL")


def prefix_mask(prefix_len: int) -> int:
    return (0xFFFFFFFF << (32 - prefix_len)) & 0xFFFFFFFF


@dataclass(frozen=True)
class NatRule:
    nat_type: NatType
    match_ip: int
    prefix_len: int
    match_port: object  # int or WILDCARD
    rewrite_ip: int
    rewrite_port: object  # int, FROM_POOL or KEEP
    mask: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.prefix_len, int) or not 1 <= self.prefix_len <= MAX_PREFIX:
            raise InvalidRule(f"prefix length {self.prefix_len!r} outside 1..32")
        if self.match_port is not WILDCARD and not (
                isinstance(self.match_port, int) and 1 <= self.match_port <= 0xFFFF):
            raise InvalidRule(f"match port {self.match_port!r} must be 1..65535 or WILDCARD")
        if self.rewrite_port is FROM_POOL:
            if self.nat_type is not NatType.SNAT:
                raise InvalidRule("FROM_POOL rewrite is only valid for SNAT rules")
        elif self.rewrite_port is not KEEP and not (
                isinstance(self.rewrite_port, int) and 1 <= self.rewrite_port <= 0xFFFF):
            raise InvalidRule(f"rewrite port {self.rewrite_port!r} must be 1..65535, FROM_POOL or KEEP")
        mask = prefix_mask(self.prefix_len)
        object.__setattr__(self, "mask", mask)
        # Normalize host bits away so equal prefixes compare equal.
        object.__setattr__(self, "match_ip", self.match_ip & mask)

    @property
    def port_key(self) -> int:
        return 0 if self.match_port is WILDCARD else self.match_port

    @property
    def key(self):
        return (self.nat_type, self.match_ip, self.prefix_len, self.port_key)

    def matches(self, ip: int, port: int) -> bool:
        return (ip & self.mask) == self.match_ip and (
            self.match_port is WILDCARD or self.match_port == port)

    def __str__(self):
        mport = "*" if self.match_port is WILDCARD else self.match_port
        if self.rewrite_port is FROM_POOL:
            rport = "pool"
        elif self.rewrite_port is KEEP:
            rport = "*"
        else:
            rport = self.rewrite_port
        return (f"{self.nat_type.value} {int_to_ip(self.match_ip)}/{self.prefix_len} {mport}"
                f" -> {int_to_ip(self.rewrite_ip)} {rport}")


class RuleTableSet:
    """Prefix-partitioned rule tables for both NAT types.

    A set is mutable until :meth:`freeze`; published snapshots are frozen and
    shared read-only between workers.
    """

    def __init__(self):
        self._tables = {t: [{} for _ in range(MAX_PREFIX + 1)] for t in NatType}
        # bit (m - 1) set <=> sub-table m non-empty
        self._flags = {t: 0 for t in NatType}
        # flagged sub-tables in decreasing prefix order: (m, mask, table)
        self._active = {t: () for t in NatType}
        self.generation = 0
        self.frozen = False

    def __len__(self):
        return sum(len(tbl) for t in NatType for tbl in self._tables[t])

    def __iter__(self):
        for t in NatType:
            for m in range(MAX_PREFIX, 0, -1):
                yield from self._tables[t][m].values()

    def flag(self, nat_type: NatType, prefix_len: int) -> bool:
        return bool(self._flags[nat_type] >> (prefix_len - 1) & 1)

    def sub_table(self, nat_type: NatType, prefix_len: int) -> dict:
        return self._tables[nat_type][prefix_len]

    def _check_mutable(self):
        if self.frozen:
            raise ContractViolation("rule table snapshot is frozen; mutate a copy()")

    def _refresh(self, nat_type: NatType):
        tables = self._tables[nat_type]
        flags = 0
        active = []
        for m in range(MAX_PREFIX, 0, -1):
            if tables[m]:
                flags |= 1 << (m - 1)
                active.append((m, prefix_mask(m), tables[m]))
        self._flags[nat_type] = flags
        self._active[nat_type] = tuple(active)

    def insert(self, rule: NatRule) -> None:
        self._check_mutable()
        table = self._tables[rule.nat_type][rule.prefix_len]
        key = (rule.match_ip << 16) | rule.port_key
        if key in table:
            raise DuplicateRule(f"rule already present for key {str(rule).split(' ->')[0]}")
        was_empty = not table
        table[key] = rule
        if was_empty:
            self._refresh(rule.nat_type)

    def delete(self, nat_type: NatType, match_ip: int, prefix_len: int, match_port=WILDCARD) -> NatRule:
        self._check_mutable()
        if not 1 <= prefix_len <= MAX_PREFIX:
            raise RuleNotFound(f"no sub-table for prefix {prefix_len}")
        port_key = 0 if match_port is WILDCARD else match_port
        table = self._tables[nat_type][prefix_len]
        key = ((match_ip & prefix_mask(prefix_len)) << 16) | port_key
        try:
            rule = table.pop(key)
        except KeyError:
            raise RuleNotFound(f"{nat_type.value} {int_to_ip(match_ip)}/{prefix_len} port {match_port}") from None
        if not table:
            self._refresh(nat_type)
        return rule

    def lookup(self, nat_type: NatType, ip: int, port: int, trace: list | None = None):
        """QNS lookup; returns the matching :class:`NatRule` or None.

        When *trace* is a list, each probe appends ``(prefix_len, masked_ip,
        port_key, hit)`` to it.
        """
        for m, mask, table in self._active[nat_type]:
            base = (ip & mask) << 16
            if trace is None:
                rule = table.get(base | port)
                if rule is not None:
                    return rule
                rule = table.get(base)
                if rule is not None:
                    return rule
            else:
                # port 0 never names a real exact-port rule, so probing it twice is harmless
                for pk in (port, 0):
                    rule = table.get(base | pk)
                    trace.append((m, ip & mask, pk, rule is not None))
                    if rule is not None:
                        return rule
        return None

    def copy(self) -> "RuleTableSet":
        new = RuleTableSet()
        for t in NatType:
            new._tables[t] = [dict(tbl) for tbl in self._tables[t]]
            new._refresh(t)
        new.generation = self.generation
        return new

    def freeze(self) -> "RuleTableSet":
        self.frozen = True
        return self


def qns_lookup(tables: RuleTableSet, nat_type: NatType, ip: int, port: int, trace=None):
    return tables.lookup(nat_type, ip, port, trace)


def linear_lookup(rules, nat_type: NatType, ip: int, port: int):
    """First rule in list order matching ``(nat_type, ip, port)``."""
    for r in rules:
        if (r.nat_type is nat_type and (ip & r.mask) == r.match_ip
                and (r.match_port is WILDCARD or r.match_port == port)):
            return r
    return None


def precedence_order(rules) -> list:
    """Sort rules so that :func:`linear_lookup` agrees with :func:`qns_lookup`."""
    return sorted(rules, key=lambda r: (-r.prefix_len, r.match_port is WILDCARD))


class RuleBook:
    """Publishes immutable :class:`RuleTableSet` snapshots.

    Readers take ``book.current`` once per lookup and never see a half-built
    table: updates are applied to a private copy and swapped in with a single
    reference assignment.
    """

    def __init__(self, rules=()):
        self._write_lock = threading.Lock()
        initial = RuleTableSet()
        for r in rules:
            initial.insert(r)
        self.current = initial.freeze()

    @property
    def generation(self) -> int:
        return self.current.generation

    def update(self, insert=(), delete=()) -> RuleTableSet:
        """Apply deletions then insertions atomically; all-or-nothing."""
        with self._write_lock:
            draft = self.current.copy()
            for key in delete:
                draft.delete(*key)
            for r in insert:
                draft.insert(r)
            draft.generation += 1
            self.current = draft.freeze()
            return self.current
