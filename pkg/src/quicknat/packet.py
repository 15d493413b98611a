"""IPv4/TCP/UDP packet view with in-place address rewriting.

A :class:`PacketView` never copies the packet: it records header offsets into
the caller's ``bytearray`` and every rewrite goes through ``struct.pack_into``
on that same buffer. Checksums are patched incrementally (RFC 1624) rather than
recomputed, so the cost of a rewrite does not depend on the payload size.
"""

from __future__ import annotations

import enum
import socket
import struct
from typing import NamedTuple

from .errors import ContractViolation, MalformedPacket

ETH_HLEN = 14
ETH_P_IP = 0x0800
ETH_P_8021Q = 0x8100

IPPROTO_TCP = 6
IPPROTO_UDP = 17

_U16 = struct.Struct("!H")
_U32 = struct.Struct("!I")


class Proto(enum.IntEnum):
    OTHER = -1
    TCP = IPPROTO_TCP
    UDP = IPPROTO_UDP


class LinkMode(enum.Enum):
    IPV4 = "ipv4"
    ETHERNET = "ethernet"


class Side(enum.Enum):
    SRC = "src"
    DST = "dst"


class _Keep:
    __slots__ = ()

    def __repr__(self):
        return "KEEP"


#: Passed as ``new_port`` to :func:`rewrite` to leave the port untouched.
KEEP = _Keep()


def ip_to_int(addr: str) -> int:
    return _U32.unpack(socket.inet_aton(addr))[0]


def int_to_ip(value: int) -> str:
    return socket.inet_ntoa(_U32.pack(value))


class FiveTuple(NamedTuple):
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: Proto

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.proto)

    def __str__(self):
        return (f"{self.proto.name} {int_to_ip(self.src_ip)}:{self.src_port}"
                f" -> {int_to_ip(self.dst_ip)}:{self.dst_port}")


class PacketView:
    """Offsets into a mutable packet buffer.

    ``valid`` is False for anything the NAT path must not touch: non-IPv4
    frames, protocols other than TCP/UDP and non-first fragments. Such views
    carry ``proto == Proto.OTHER``.
    """

    __slots__ = ("buffer", "l3_offset", "l4_offset", "proto", "valid")

    def __init__(self, buffer, l3_offset, l4_offset, proto, valid):
        self.buffer = buffer
        self.l3_offset = l3_offset
        self.l4_offset = l4_offset
        self.proto = proto
        self.valid = valid

    def __repr__(self):
        return (f"PacketView(len={len(self.buffer)}, l3={self.l3_offset}, "
                f"l4={self.l4_offset}, proto={self.proto.name}, valid={self.valid})")

    @property
    def l4_csum_offset(self) -> int:
        return self.l4_offset + (16 if self.proto is Proto.TCP else 6)


def parse(data, mode: LinkMode = LinkMode.IPV4) -> PacketView:
    """Locate the IPv4 and L4 headers in *data*.

    ``bytes`` input is converted to a ``bytearray`` once, here; a
    ``bytearray`` is used as-is and later rewrites mutate it.
    """
    buf = data if isinstance(data, bytearray) else bytearray(data)
    n = len(buf)
    if n == 0:
        raise MalformedPacket("empty buffer")

    l3 = 0
    if mode is LinkMode.ETHERNET:
        if n < ETH_HLEN:
            raise MalformedPacket(f"{n}-byte frame shorter than Ethernet header")
        ethertype = _U16.unpack_from(buf, 12)[0]
        l3 = ETH_HLEN
        if ethertype == ETH_P_8021Q:
            if n < ETH_HLEN + 4:
                raise MalformedPacket("truncated 802.1Q tag")
            ethertype = _U16.unpack_from(buf, 16)[0]
            l3 += 4
        if ethertype != ETH_P_IP:
            return PacketView(buf, l3, l3, Proto.OTHER, False)

    if n < l3 + 20:
        raise MalformedPacket(f"{n - l3} bytes of L3, need at least 20")
    vihl = buf[l3]
    if vihl >> 4 != 4:
        return PacketView(buf, l3, l3, Proto.OTHER, False)
    ihl = (vihl & 0x0F) * 4
    if ihl < 20:
        raise MalformedPacket(f"IHL {ihl // 4} below minimum")
    if n < l3 + ihl:
        raise MalformedPacket(f"buffer ends inside {ihl}-byte IPv4 header")
    l4 = l3 + ihl

    frag_offset = _U16.unpack_from(buf, l3 + 6)[0] & 0x1FFF
    ip_proto = buf[l3 + 9]
    if frag_offset or ip_proto not in (IPPROTO_TCP, IPPROTO_UDP):
        return PacketView(buf, l3, l4, Proto.OTHER, False)

    need = 20 if ip_proto == IPPROTO_TCP else 8
    if n < l4 + need:
        raise MalformedPacket(f"buffer ends inside {Proto(ip_proto).name} header")
    return PacketView(buf, l3, l4, Proto(ip_proto), True)


def five_tuple(pkt: PacketView) -> FiveTuple:
    if not pkt.valid:
        raise ContractViolation("five_tuple on a view that is not TCP/UDP over IPv4")
    buf, l3, l4 = pkt.buffer, pkt.l3_offset, pkt.l4_offset
    src, dst = struct.unpack_from("!II", buf, l3 + 12)
    sport, dport = struct.unpack_from("!HH", buf, l4)
    return FiveTuple(src, dst, sport, dport, pkt.proto)


def internet_checksum(data, initial: int = 0) -> int:
    """Ones-complement checksum of *data* (odd lengths zero-padded).

    Uses the identity 2**16 == 1 (mod 0xFFFF): the folded ones-complement sum
    of big-endian words equals the whole buffer read as one integer mod 0xFFFF.
    """
    if len(data) % 2:
        data = bytes(data) + b"\x00"
    total = (int.from_bytes(data, "big") + initial) % 0xFFFF
    if total == 0 and (initial or any(data)):
        total = 0xFFFF
    return ~total & 0xFFFF


def incr_csum_update(csum: int, old_word: int, new_word: int) -> int:
    """HC' = ~(~HC + ~m + m') with end-around carry."""
    s = (~csum & 0xFFFF) + (~old_word & 0xFFFF) + new_word
    s = (s & 0xFFFF) + (s >> 16)
    s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def _ip_total_length(pkt: PacketView) -> int:
    total = _U16.unpack_from(pkt.buffer, pkt.l3_offset + 2)[0]
    return min(total, len(pkt.buffer) - pkt.l3_offset)


def l4_checksum(pkt: PacketView) -> int:
    """Full TCP/UDP checksum over pseudo-header and segment (field zeroed)."""
    buf, l3, l4 = pkt.buffer, pkt.l3_offset, pkt.l4_offset
    seg_len = l3 + _ip_total_length(pkt) - l4
    pseudo = bytes(buf[l3 + 12:l3 + 20]) + struct.pack("!BBH", 0, int(pkt.proto), seg_len)
    seg = bytearray(buf[l4:l4 + seg_len])
    off = pkt.l4_csum_offset - l4
    seg[off:off + 2] = b"\x00\x00"
    csum = internet_checksum(pseudo + seg)
    if pkt.proto is Proto.UDP and csum == 0:
        csum = 0xFFFF
    return csum


def ip_header_checksum(pkt: PacketView) -> int:
    l3 = pkt.l3_offset
    hdr = bytearray(pkt.buffer[l3:pkt.l4_offset])
    hdr[10:12] = b"\x00\x00"
    return internet_checksum(hdr)


def fill_checksums(pkt: PacketView) -> None:
    """Compute and store both checksums from scratch (packet construction only)."""
    _U16.pack_into(pkt.buffer, pkt.l3_offset + 10, ip_header_checksum(pkt))
    _U16.pack_into(pkt.buffer, pkt.l4_csum_offset, l4_checksum(pkt))


def verify_checksums(pkt: PacketView) -> tuple[bool, bool]:
    """Return ``(ip_ok, l4_ok)``; a disabled (zero) UDP checksum counts as ok."""
    buf = pkt.buffer
    ip_ok = _U16.unpack_from(buf, pkt.l3_offset + 10)[0] == ip_header_checksum(pkt)
    stored = _U16.unpack_from(buf, pkt.l4_csum_offset)[0]
    if pkt.proto is Proto.UDP and stored == 0:
        return ip_ok, True
    return ip_ok, stored == l4_checksum(pkt)


def rewrite(pkt: PacketView, which: Side, new_ip: int, new_port=KEEP) -> None:
    """Overwrite the source or destination endpoint of *pkt* in place."""
    if not pkt.valid:
        raise ContractViolation("rewrite on a view that is not TCP/UDP over IPv4")
    buf, l3, l4 = pkt.buffer, pkt.l3_offset, pkt.l4_offset
    ip_off = l3 + (12 if which is Side.SRC else 16)
    port_off = l4 + (0 if which is Side.SRC else 2)
    l4c_off = pkt.l4_csum_offset

    old_ip = _U32.unpack_from(buf, ip_off)[0]
    old_port = _U16.unpack_from(buf, port_off)[0]
    if new_port is KEEP:
        new_port = old_port
    if old_ip == new_ip and old_port == new_port:
        return

    l4_csum = _U16.unpack_from(buf, l4c_off)[0]
    # UDP checksum 0 means "not computed" and must stay that way.
    patch_l4 = not (pkt.proto is Proto.UDP and l4_csum == 0)

    if old_ip != new_ip:
        old_hi, old_lo = old_ip >> 16, old_ip & 0xFFFF
        new_hi, new_lo = new_ip >> 16, new_ip & 0xFFFF
        ip_csum = _U16.unpack_from(buf, l3 + 10)[0]
        ip_csum = incr_csum_update(ip_csum, old_hi, new_hi)
        ip_csum = incr_csum_update(ip_csum, old_lo, new_lo)
        _U16.pack_into(buf, l3 + 10, ip_csum)
        if patch_l4:
            l4_csum = incr_csum_update(l4_csum, old_hi, new_hi)
            l4_csum = incr_csum_update(l4_csum, old_lo, new_lo)
        _U32.pack_into(buf, ip_off, new_ip)

    if old_port != new_port:
        if patch_l4:
            l4_csum = incr_csum_update(l4_csum, old_port, new_port)
        _U16.pack_into(buf, port_off, new_port)

    if patch_l4:
        if pkt.proto is Proto.UDP and l4_csum == 0:
            l4_csum = 0xFFFF
        _U16.pack_into(buf, l4c_off, l4_csum)
