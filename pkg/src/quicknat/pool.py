"""Public (IP, port, protocol) endpoint pool for NAPT.

Ownership of a triple is decided by ``dict.setdefault`` on the held-triples
map and released with ``dict.pop`` on the live-lease map, so concurrent
allocators never block one another.
"""

from __future__ import annotations

import hashlib
import itertools
import struct
from dataclasses import dataclass

from .errors import ContractViolation, DoubleRelease, PoolExhausted
from .packet import Proto, int_to_ip

DEFAULT_PORT_RANGE = (1024, 65535)


@dataclass(frozen=True)
class PoolConfig:
    public_ips: tuple
    port_range: tuple = DEFAULT_PORT_RANGE

    def __post_init__(self):
        object.__setattr__(self, "public_ips", tuple(self.public_ips))
        lo, hi = self.port_range
        if not self.public_ips:
            raise ValueError("pool needs at least one public IP")
        if len(set(self.public_ips)) != len(self.public_ips):
            raise ValueError("duplicate public IP in pool")
        if not 1 <= lo <= hi <= 0xFFFF:
            raise ValueError(f"bad port range {lo}-{hi}")

    @property
    def ports_per_ip(self) -> int:
        return self.port_range[1] - self.port_range[0] + 1

    @property
    def size(self) -> int:
        """Triples per protocol."""
        return len(self.public_ips) * self.ports_per_ip


@dataclass(frozen=True)
class Lease:
    ip: int
    port: int
    proto: Proto
    id: int

    def __str__(self):
        return f"{self.proto.name} {int_to_ip(self.ip)}:{self.port}"


class NatPool:
    """Allocator of unique public endpoints.

    Without a *seed* allocation is round-robin across IPs with a sequential
    port cursor. With a seed, the probe for a flow starts at a keyed hash of
    the flow's tuple, so the endpoint a flow receives does not depend on the
    order in which concurrent workers allocate (barring hash collisions).
    """

    def __init__(self, config: PoolConfig, seed: int | None = None):
        self.config = config
        self.seed = seed
        self._hash_key = None if seed is None else struct.pack("!Q", seed & (2**64 - 1))
        self._ip_index = {ip: i for i, ip in enumerate(config.public_ips)}
        self._held = {Proto.TCP: {}, Proto.UDP: {}}
        self._live: dict[int, Lease] = {}
        self._ids = itertools.count(1)
        self._cursor = {Proto.TCP: itertools.count(), Proto.UDP: itertools.count()}
        self._ip_cursor = {(p, ip): itertools.count() for p in (Proto.TCP, Proto.UDP)
                           for ip in config.public_ips}

    def __contains__(self, ip: int) -> bool:
        return ip in self._ip_index

    def _start(self, hint) -> int:
        digest = hashlib.blake2b(repr(tuple(hint)).encode(), digest_size=8,
                                 key=self._hash_key).digest()
        return int.from_bytes(digest, "big")

    def _triple(self, proto, ip, pos):
        cfg = self.config
        if ip is None:
            ips = cfg.public_ips
            return (ips[pos % len(ips)], cfg.port_range[0] + pos // len(ips), proto)
        return (ip, cfg.port_range[0] + pos, proto)

    def first_choice(self, proto: Proto, hint, ip: int | None = None) -> tuple:
        """The triple a seeded pool tries first for *hint*.

        Allocation is independent of worker scheduling exactly when the live
        flows' first choices are pairwise distinct.
        """
        if self.seed is None:
            raise ContractViolation("first_choice needs a seeded pool")
        span = self.config.size if ip is None else self.config.ports_per_ip
        return self._triple(proto, ip, self._start(hint) % span)

    def allocate(self, proto: Proto, ip: int | None = None, hint=None) -> Lease:
        """Lease a free triple for *proto*, optionally restricted to one *ip*."""
        if proto not in self._held:
            raise ContractViolation(f"cannot lease a {proto!r} endpoint")
        cfg = self.config
        held = self._held[proto]
        lease_id = next(self._ids)

        if ip is not None:
            if ip not in self._ip_index:
                raise ContractViolation(f"{int_to_ip(ip)} is not a pool address")
            span = cfg.ports_per_ip
        else:
            span = cfg.size

        if self.seed is not None and hint is not None:
            start = self._start(hint) % span
        else:
            cursor = self._cursor[proto] if ip is None else self._ip_cursor[proto, ip]
            start = next(cursor) % span

        for k in range(span):
            triple = self._triple(proto, ip, (start + k) % span)
            if triple in held:
                continue
            if held.setdefault(triple, lease_id) == lease_id:
                lease = Lease(triple[0], triple[1], proto, lease_id)
                self._live[lease_id] = lease
                return lease
        where = "" if ip is None else f" on {int_to_ip(ip)}"
        raise PoolExhausted(f"no free {proto.name} endpoint{where}")

    def release(self, lease: Lease) -> None:
        if self._live.pop(lease.id, None) is None:
            raise DoubleRelease(f"lease {lease.id} ({lease}) is not live")
        del self._held[lease.proto][(lease.ip, lease.port, lease.proto)]

    def is_held(self, ip: int, port: int, proto: Proto) -> bool:
        return (ip, port, proto) in self._held[proto]

    def live_leases(self) -> list[Lease]:
        return list(self._live.copy().values())

    def stats(self) -> dict:
        total = self.config.size
        out = {}
        for proto, held in self._held.items():
            used = len(held)
            out[proto.name.lower()] = {"total": total, "live": used, "free": total - used}
        return out
