"""Classic libpcap file reader and writer.

Reads both byte orders and the nanosecond variant (magic 0xA1B23C4D); always
writes little-endian microsecond files. pcapng is not supported.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator, NamedTuple

from .errors import BadMagic, TruncatedRecord

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16


class PcapRecord(NamedTuple):
    data: bytes
    ts_ns: int = 0
    orig_len: int | None = None


class PcapReader:
    """Iterate the records of a pcap file in file order.

    Header fields are available as attributes after construction. A final
    record cut short raises :class:`TruncatedRecord` after every complete
    record has been yielded.
    """

    def __init__(self, path):
        self.path = path
        self._f = open(path, "rb")
        try:
            self._read_header()
        except Exception:
            self._f.close()
            raise

    def _read_header(self):
        raw = self._f.read(GLOBAL_HEADER_LEN)
        if len(raw) < 4:
            raise BadMagic(f"{self.path}: file too short for a pcap magic number")
        for endian in "<>":
            magic = struct.unpack(endian + "I", raw[:4])[0]
            if magic in (MAGIC_USEC, MAGIC_NSEC):
                break
        else:
            raise BadMagic(f"{self.path}: unknown magic 0x{raw[:4].hex()}")
        if len(raw) < GLOBAL_HEADER_LEN:
            raise TruncatedRecord(f"{self.path}: truncated global header")
        self.endian = endian
        self.nanosecond = magic == MAGIC_NSEC
        (_, self.version_major, self.version_minor, self.thiszone, self.sigfigs,
         self.snaplen, self.linktype) = struct.unpack(endian + "IHHiIII", raw)
        self._rec = struct.Struct(endian + "IIII")

    def __iter__(self) -> Iterator[PcapRecord]:
        f, rec = self._f, self._rec
        scale = 1 if self.nanosecond else 1000
        index = 0
        while True:
            hdr = f.read(RECORD_HEADER_LEN)
            if not hdr:
                return
            if len(hdr) < RECORD_HEADER_LEN:
                raise TruncatedRecord(f"{self.path}: record {index} header cut short")
            sec, frac, incl_len, orig_len = rec.unpack(hdr)
            data = f.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecord(
                    f"{self.path}: record {index} has {len(data)} of {incl_len} bytes")
            yield PcapRecord(data, sec * 1_000_000_000 + frac * scale, orig_len)
            index += 1

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_pcap(path) -> PcapReader:
    return PcapReader(path)


class PcapWriter:
    def __init__(self, path, linktype: int = LINKTYPE_RAW, snaplen: int = 65535):
        self.linktype = linktype
        self._f = open(path, "wb")
        self._f.write(struct.pack("<IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen, linktype))

    def write(self, record) -> None:
        if not isinstance(record, PcapRecord):
            record = PcapRecord(bytes(record))
        data = record.data
        sec, usec = divmod(record.ts_ns // 1000, 1_000_000)
        orig = len(data) if record.orig_len is None else record.orig_len
        self._f.write(struct.pack("<IIII", sec, usec, len(data), orig))
        self._f.write(data)

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_pcap(path, packets: Iterable, linktype: int = LINKTYPE_RAW, snaplen: int = 65535) -> int:
    """Write *packets* (records or raw byte strings); returns the count written."""
    n = 0
    with PcapWriter(path, linktype, snaplen) as w:
        for p in packets:
            w.write(p)
            n += 1
    return n
