"""Classic PCAP container reading and writing.

Only Ethernet-framed IPv4 TCP/UDP packets are kept. Everything else is
skipped and counted by reason.
"""

import struct
import warnings
from collections import Counter
from dataclasses import dataclass, field

from ..errors import MalformedHeader, ShortHeader, TruncatedPacket

LINKTYPE_ETHERNET = 1

# magic -> (byte order, timestamp fraction is nanoseconds)
_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", False),
    b"\xa1\xb2\xc3\xd4": (">", False),
    b"\x4d\x3c\xb2\xa1": ("<", True),
    b"\xa1\xb2\x3c\x4d": (">", True),
}
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"

ETH_IPV4, ETH_ARP, ETH_VLAN, ETH_IPV6 = 0x0800, 0x0806, 0x8100, 0x86DD
PROTO_TCP, PROTO_UDP = 6, 17
DHCP_PORTS = (67, 68)


@dataclass(frozen=True, order=True)
class FlowKey:
    """Unidirectional 5-tuple; direction matters."""
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    protocol: int

    def pack(self):
        return self.src_ip + self.dst_ip + struct.pack(">HHB", self.src_port, self.dst_port, self.protocol)

    def __str__(self):
        ip = lambda b: ".".join(str(x) for x in b)
        return f"{ip(self.src_ip)}:{self.src_port}>{ip(self.dst_ip)}:{self.dst_port}/{self.protocol}"


@dataclass(frozen=True)
class PacketRecord:
    ts_sec: int
    ts_frac: int
    ip_bytes: bytes          # IP header onward, addresses already zeroed
    five_tuple: FlowKey
    index: int = 0           # arrival index in the capture
    link_type: int = LINKTYPE_ETHERNET
    nanosecond: bool = False

    @property
    def size(self):
        return len(self.ip_bytes)

    @property
    def ts_key(self):
        """Sort key that compares micro- and nanosecond captures consistently."""
        return (self.ts_sec, self.ts_frac if self.nanosecond else self.ts_frac * 1000, self.index)


@dataclass
class ParseResult:
    records: list
    total: int = 0
    skipped: Counter = field(default_factory=Counter)
    truncated: bool = False  # stopped early on a short record

    @property
    def n_skipped(self):
        return sum(self.skipped.values())

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def mask_ip(ip_bytes):
    """Zero the IPv4 source and destination address fields (bytes 12..20)."""
    if len(ip_bytes) < 20:
        raise ShortHeader(f"IPv4 header needs 20 bytes, got {len(ip_bytes)}")
    b = bytearray(ip_bytes)
    b[12:20] = bytes(8)
    return bytes(b)


def _classify_ip(ip, dhcp_filter):
    """Return (FlowKey, ip_bytes trimmed to total length) or (None, skip reason)."""
    if len(ip) < 20:
        return None, "malformed"
    if ip[0] >> 4 != 4:
        return None, "non_ipv4"
    ihl = (ip[0] & 0x0F) * 4
    total = struct.unpack_from(">H", ip, 2)[0]
    if ihl < 20 or len(ip) < ihl:
        return None, "malformed"
    # drop link-layer padding after the datagram, keep snaplen-truncated captures
    if ihl <= total < len(ip):
        ip = ip[:total]
    proto = ip[9]
    if proto not in (PROTO_TCP, PROTO_UDP):
        return None, "non_tcp_udp"
    frag = struct.unpack_from(">H", ip, 6)[0] & 0x1FFF
    if frag:
        return None, "fragment"
    if len(ip) < ihl + 4:
        return None, "malformed"
    sport, dport = struct.unpack_from(">HH", ip, ihl)
    if dhcp_filter and proto == PROTO_UDP and (sport in DHCP_PORTS or dport in DHCP_PORTS):
        return None, "dhcp"
    key = FlowKey(bytes(ip[12:16]), bytes(ip[16:20]), sport, dport, proto)
    return key, bytes(ip)


def parse_pcap(data, dhcp_filter=True, strict=False):
    """Parse a classic PCAP capture held in memory.

    Returns a :class:`ParseResult`. A record whose header claims more bytes
    than remain ends parsing: with ``strict`` it raises TruncatedPacket
    (``.partial`` holds the result so far), otherwise a warning is issued
    and ``truncated`` is set.
    """
    data = bytes(data)
    if data[:4] == PCAPNG_MAGIC:
        raise MalformedHeader("pcapng captures are not supported; convert with `editcap -F pcap`")
    if len(data) < 24:
        raise MalformedHeader(f"global header needs 24 bytes, got {len(data)}")
    if data[:4] not in _MAGICS:
        raise MalformedHeader(f"bad pcap magic {data[:4].hex()}")
    bo, nano = _MAGICS[data[:4]]
    linktype = struct.unpack_from(bo + "I", data, 20)[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise MalformedHeader(f"unsupported link type {linktype} (Ethernet only)")

    res = ParseResult(records=[])
    off, idx = 24, 0
    rec_hdr = struct.Struct(bo + "IIII")
    while off < len(data):
        if off + 16 > len(data):
            res.truncated = True
            break
        ts_sec, ts_frac, incl, _orig = rec_hdr.unpack_from(data, off)
        off += 16
        if off + incl > len(data):
            res.truncated = True
            break
        frame = data[off:off + incl]
        off += incl
        res.total += 1
        idx += 1

        if len(frame) < 14:
            res.skipped["malformed"] += 1
            continue
        etype = struct.unpack_from(">H", frame, 12)[0]
        hdr = 14
        if etype == ETH_VLAN:
            if len(frame) < 18:
                res.skipped["malformed"] += 1
                continue
            etype = struct.unpack_from(">H", frame, 16)[0]
            hdr = 18
        if etype != ETH_IPV4:
            res.skipped[{ETH_ARP: "arp", ETH_IPV6: "ipv6"}.get(etype, "non_ip")] += 1
            continue
        key, ip = _classify_ip(frame[hdr:], dhcp_filter)
        if key is None:
            res.skipped[ip] += 1
            continue
        res.records.append(PacketRecord(ts_sec, ts_frac, mask_ip(ip), key, idx - 1,
                                        LINKTYPE_ETHERNET, nano))

    if res.truncated:
        msg = f"capture truncated after {res.total} packets"
        if strict:
            err = TruncatedPacket(msg)
            err.partial = res
            raise err
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return res


def read_pcap(path, **kw):
    with open(path, "rb") as fh:
        return parse_pcap(fh.read(), **kw)


# -- writing (used by the synthetic generator and tests) ---------------------

def pcap_global_header(nanosecond=False, big_endian=False, snaplen=65535):
    bo = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    return struct.pack(bo + "IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)


def pcap_record(frame, ts_sec, ts_frac, big_endian=False, orig_len=None):
    bo = ">" if big_endian else "<"
    n = len(frame)
    return struct.pack(bo + "IIII", ts_sec, ts_frac, n, n if orig_len is None else orig_len) + frame


def ipv4_checksum(header):
    s = 0
    for i in range(0, len(header), 2):
        s += (header[i] << 8) + (header[i + 1] if i + 1 < len(header) else 0)
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return (~s) & 0xFFFF


def ipv4_packet(src, dst, proto, l4, ttl=64, ident=0):
    """IPv4 header (no options) with a valid checksum, followed by ``l4``."""
    hdr = bytearray(struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(l4), ident, 0x4000,
                                ttl, proto, 0, bytes(src), bytes(dst)))
    struct.pack_into(">H", hdr, 10, ipv4_checksum(hdr))
    return bytes(hdr) + bytes(l4)


def tcp_segment(sport, dport, payload, seq=0, ack=0, flags=0x18, window=65535):
    return struct.pack(">HHIIBBHHH", sport, dport, seq, ack, 5 << 4, flags, window, 0, 0) + bytes(payload)


def udp_datagram(sport, dport, payload):
    return struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + bytes(payload)


def ethernet_frame(payload, ethertype=ETH_IPV4, src_mac=b"\x02" * 6, dst_mac=b"\x04" * 6, vlan=None):
    if vlan is not None:
        return dst_mac + src_mac + struct.pack(">HHH", ETH_VLAN, vlan, ethertype) + payload
    return dst_mac + src_mac + struct.pack(">H", ethertype) + payload
