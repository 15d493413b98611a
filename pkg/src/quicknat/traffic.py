"""Deterministic synthetic IPv4 traffic.

Stands in for a hardware traffic generator: content only, no pacing. Every
payload starts with ``(flow_id, seq)`` so reordering is detectable downstream.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass

import numpy as np

from .packet import (IPPROTO_TCP, IPPROTO_UDP, FiveTuple, LinkMode, Proto, fill_checksums,
                     parse)
from .pcap import PcapRecord

MARKER = struct.Struct("!II")
BASE_TS_NS = 1_500_000_000 * 1_000_000_000
MIN_PACKET_SIZE = 64
_REMOTE_PORTS = (53, 80, 123, 443, 8080)

TCP_FIN, TCP_SYN, TCP_RST, TCP_PSH, TCP_ACK = 0x01, 0x02, 0x04, 0x08, 0x10


def build_packet(t: FiveTuple, payload: bytes = b"", *, ip_id: int = 0, ttl: int = 64,
                 tcp_seq: int = 0, tcp_ack: int = 0, tcp_flags: int = TCP_PSH | TCP_ACK,
                 udp_checksum: bool = True) -> bytearray:
    """Raw IPv4 packet for *t* with valid checksums."""
    if t.proto is Proto.TCP:
        l4 = struct.pack("!HHIIBBHHH", t.src_port, t.dst_port, tcp_seq, tcp_ack,
                         5 << 4, tcp_flags, 65535, 0, 0)
        ip_proto = IPPROTO_TCP
    elif t.proto is Proto.UDP:
        l4 = struct.pack("!HHHH", t.src_port, t.dst_port, 8 + len(payload), 0)
        ip_proto = IPPROTO_UDP
    else:
        raise ValueError(f"cannot build a {t.proto!r} packet")
    total = 20 + len(l4) + len(payload)
    ip = struct.pack("!BBHHHBBHII", 0x45, 0, total, ip_id & 0xFFFF, 0x4000, ttl,
                     ip_proto, 0, t.src_ip, t.dst_ip)
    buf = bytearray(ip + l4 + payload)
    pkt = parse(buf)
    fill_checksums(pkt)
    if t.proto is Proto.UDP and not udp_checksum:
        buf[26:28] = b"\x00\x00"
    return buf


def payload_marker(data, mode: LinkMode = LinkMode.IPV4) -> tuple[int, int]:
    """``(flow_id, seq)`` stamped by :func:`generate`."""
    pkt = parse(data, mode)
    hlen = 20 if pkt.proto is Proto.TCP else 8
    return MARKER.unpack_from(pkt.buffer, pkt.l4_offset + hlen)


@dataclass(frozen=True)
class TrafficSpec:
    n_flows: int
    packets_per_flow: int
    private_subnet: str = "192.168.0.0/16"
    remote_subnet: str = "198.51.100.0/24"
    tcp_fraction: float = 0.5
    packet_size: int = MIN_PACKET_SIZE  # IPv4 total length in bytes
    seed: int = 0

    def __post_init__(self):
        if self.n_flows < 0 or self.packets_per_flow < 0:
            raise ValueError("flow and packet counts must be non-negative")
        if not 0.0 <= self.tcp_fraction <= 1.0:
            raise ValueError("tcp_fraction must lie in [0, 1]")
        if self.packet_size < MIN_PACKET_SIZE:
            raise ValueError(f"packet_size must be at least {MIN_PACKET_SIZE} bytes")
        if self.n_flows > self._capacity():
            raise ValueError("private subnet too small for the requested distinct flows")

    def _capacity(self) -> int:
        hosts = ipaddress.IPv4Network(self.private_subnet, strict=False).num_addresses
        return hosts * (65536 - 1024)

    @property
    def n_packets(self) -> int:
        return self.n_flows * self.packets_per_flow


def generate_flows(spec: TrafficSpec) -> list[FiveTuple]:
    """Distinct outbound flows described by *spec*, in flow-id order."""
    rng = np.random.default_rng(spec.seed)
    priv = ipaddress.IPv4Network(spec.private_subnet, strict=False)
    remote = ipaddress.IPv4Network(spec.remote_subnet, strict=False)
    flows, seen = [], set()
    while len(flows) < spec.n_flows:
        k = spec.n_flows - len(flows)
        src = int(priv.network_address) + rng.integers(0, priv.num_addresses, k)
        dst = int(remote.network_address) + rng.integers(0, remote.num_addresses, k)
        sport = rng.integers(1024, 65536, k)
        dport = rng.choice(_REMOTE_PORTS, k)
        tcp = rng.random(k) < spec.tcp_fraction
        for i in range(k):
            t = FiveTuple(int(src[i]), int(dst[i]), int(sport[i]), int(dport[i]),
                          Proto.TCP if tcp[i] else Proto.UDP)
            # distinct on the private endpoint so every flow needs its own translation
            if (t.src_ip, t.src_port, t.proto) not in seen:
                seen.add((t.src_ip, t.src_port, t.proto))
                flows.append(t)
    return flows


def generate(spec: TrafficSpec):
    """Yield :class:`PcapRecord` packets; a pure function of *spec*.

    Flows are interleaved in a seeded random order while each flow's packets
    keep increasing sequence numbers.
    """
    flows = generate_flows(spec)
    if not flows or spec.packets_per_flow == 0:
        return
    rng = np.random.default_rng([spec.seed, 1])
    order = np.repeat(np.arange(len(flows), dtype=np.int64), spec.packets_per_flow)
    rng.shuffle(order)
    next_seq = [0] * len(flows)
    pad = {Proto.TCP: bytes(spec.packet_size - 40 - MARKER.size),
           Proto.UDP: bytes(spec.packet_size - 28 - MARKER.size)}
    for i, fid in enumerate(order.tolist()):
        seq = next_seq[fid]
        next_seq[fid] = seq + 1
        t = flows[fid]
        payload = MARKER.pack(fid, seq) + pad[t.proto]
        data = build_packet(t, payload, ip_id=seq, tcp_seq=seq * len(payload))
        yield PcapRecord(bytes(data), BASE_TS_NS + i * 1000)
