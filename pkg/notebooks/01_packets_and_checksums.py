"""
Parsing and rewriting packets in place
======================================

Build a TCP segment, look at its five-tuple, then move its source to a
public endpoint without re-summing the whole packet.
"""

# %%
from quicknat import FiveTuple, Proto, Side, five_tuple, int_to_ip, ip_to_int, parse, rewrite
from quicknat.packet import internet_checksum, verify_checksums
from quicknat.traffic import build_packet

t = FiveTuple(ip_to_int("192.168.88.32"), ip_to_int("198.51.100.9"), 5000, 80, Proto.TCP)
raw = build_packet(t, b"GET / HTTP/1.0\r\n\r\n")
pkt = parse(raw)
print(len(raw), "bytes, l4 at offset", pkt.l4_offset)
print(five_tuple(pkt))

# %%
# The checksum fields are patched from the old value and the changed words
# (RFC 1624), so the cost does not depend on the payload length.
rewrite(pkt, Side.SRC, ip_to_int("203.0.113.7"), 40001)
t2 = five_tuple(pkt)
print(int_to_ip(t2.src_ip), t2.src_port)
print("checksums ok:", verify_checksums(pkt))
print("same buffer:", pkt.buffer is raw)

# %%
# A UDP checksum of zero means "not computed" and stays zero.
udp = build_packet(t._replace(proto=Proto.UDP, dst_port=53), b"q", udp_checksum=False)
rewrite(parse(udp), Side.SRC, ip_to_int("203.0.113.7"), 40002)
print("udp checksum field:", udp[26:28].hex())

# %%
# Full checksum of the IPv4 header, for comparison: a valid header sums to 0.
print(hex(internet_checksum(bytes(raw[:20]))))
