"""Deterministic synthetic captures with known per-class payload motifs."""

from dataclasses import dataclass, field

import numpy as np

from ..core.rng import STREAM_SYNTH, make_rng
from . import pcap as P
from .pcap import FlowKey

MAX_MOTIF = 64


@dataclass
class SynthSpec:
    num_classes: int = 4
    flows_per_class: int = 50
    packets_per_flow: int = 5
    seed: int = 11
    motif_len: int = 16
    motifs: list = None          # explicit byte strings, one per class
    offsets: list = None         # payload offset of each class motif
    offset_jitter: int = 0       # per-flow extra shift in {0, offset_jitter}
    extra_payload: int = 120     # max random filler after the motif region
    protocol: str = "tcp"        # tcp | udp | mixed
    noise_frames: int = 0        # ARP / IPv6 / ICMP frames mixed in
    nanosecond: bool = False
    big_endian: bool = False

    def resolved(self, rng):
        motifs = self.motifs
        if motifs is None:
            motifs = [rng.integers(0, 256, self.motif_len, dtype=np.uint8).tobytes()
                      for _ in range(self.num_classes)]
        motifs = [bytes(m) for m in motifs]
        if len(motifs) != self.num_classes or any(not 0 < len(m) <= MAX_MOTIF for m in motifs):
            raise ValueError(f"need {self.num_classes} motifs of 1..{MAX_MOTIF} bytes")
        offsets = self.offsets
        if offsets is None:
            step = max(len(m) for m in motifs) + 8
            offsets = [c * step for c in range(self.num_classes)]
        offsets = [int(o) for o in offsets]
        if len(set(offsets)) != len(offsets):
            raise ValueError("class motif offsets must be distinct")
        return motifs, offsets


@dataclass
class SynthResult:
    pcap: bytes
    manifest: dict                      # FlowKey -> label
    motifs: list = field(default_factory=list)
    offsets: list = field(default_factory=list)
    n_packets: int = 0


def _unique_keys(rng, n, protocols):
    keys, seen = [], set()
    while len(keys) < n:
        src = bytes([10]) + rng.integers(0, 256, 3, dtype=np.uint8).tobytes()
        dst = bytes([172, 16]) + rng.integers(0, 256, 2, dtype=np.uint8).tobytes()
        sport = int(rng.integers(1024, 65536))
        dport = int(rng.choice([443, 80, 8080, 8443, 1194, 5222, 9001]))
        k = FlowKey(src, dst, sport, dport, protocols[len(keys)])
        if k not in seen:
            seen.add(k)
            keys.append(k)
    return keys


def _noise_frame(rng, kind):
    if kind == 0:  # ARP request
        body = bytes.fromhex("0001080006040001") + rng.integers(0, 256, 20, dtype=np.uint8).tobytes()
        return P.ethernet_frame(body, P.ETH_ARP)
    if kind == 1:  # IPv6 / UDP
        body = bytes([0x60, 0, 0, 0, 0, 16, 17, 64]) + bytes(32) + bytes(16)
        return P.ethernet_frame(body, P.ETH_IPV6)
    icmp = bytes([8, 0, 0, 0]) + rng.integers(0, 256, 28, dtype=np.uint8).tobytes()
    ip = P.ipv4_packet(b"\x0a\x00\x00\x01", b"\x0a\x00\x00\x02", 1, icmp)
    return P.ethernet_frame(ip)


def synth_pcap(spec=None, **kw):
    """Generate a capture where every packet of a class-``c`` flow carries
    motif ``c`` at payload offset ``offsets[c]`` (plus the flow's jitter)
    inside uniform random filler. Returns a :class:`SynthResult`; the same
    spec always gives byte-identical output."""
    spec = spec or SynthSpec(**kw)
    rng = make_rng(spec.seed, STREAM_SYNTH)
    motifs, offsets = spec.resolved(rng)
    C, F, n = spec.num_classes, spec.flows_per_class, spec.packets_per_flow
    nflows = C * F
    if spec.protocol == "mixed":
        protos = [P.PROTO_TCP if p else P.PROTO_UDP for p in rng.integers(0, 2, nflows)]
    else:
        protos = [{"tcp": P.PROTO_TCP, "udp": P.PROTO_UDP}[spec.protocol]] * nflows
    keys = _unique_keys(rng, nflows, protos)
    labels = [f // F for f in range(nflows)]
    span = max(o + len(m) for o, m in zip(offsets, motifs)) + spec.offset_jitter

    events = []  # (time in ns, generation order, frame)
    for f, (key, lab) in enumerate(zip(keys, labels)):
        shift = spec.offset_jitter if (spec.offset_jitter and rng.integers(0, 2)) else 0
        t = int(rng.integers(0, 60_000_000)) * 1000
        seq = int(rng.integers(0, 2**32))
        for _ in range(n):
            size = span + int(rng.integers(0, spec.extra_payload + 1))
            payload = bytearray(rng.integers(0, 256, size, dtype=np.uint8).tobytes())
            o = offsets[lab] + shift
            payload[o:o + len(motifs[lab])] = motifs[lab]
            if key.protocol == P.PROTO_TCP:
                l4 = P.tcp_segment(key.src_port, key.dst_port, payload, seq=seq,
                                   ack=int(rng.integers(0, 2**32)))
                seq = (seq + size) % 2**32
            else:
                l4 = P.udp_datagram(key.src_port, key.dst_port, payload)
            ip = P.ipv4_packet(key.src_ip, key.dst_ip, key.protocol, l4,
                               ident=int(rng.integers(0, 65536)))
            events.append((t, len(events), P.ethernet_frame(ip)))
            t += int(rng.exponential(10_000)) * 1000 + 1000
    for _ in range(spec.noise_frames):
        kind = int(rng.integers(0, 3))
        events.append((int(rng.integers(0, 60_000_000)) * 1000, len(events), _noise_frame(rng, kind)))
    events.sort(key=lambda e: (e[0], e[1]))

    out = [P.pcap_global_header(spec.nanosecond, spec.big_endian)]
    for t, _, frame in events:
        sec, ns = divmod(t, 10**9)
        frac = ns if spec.nanosecond else ns // 1000
        out.append(P.pcap_record(frame, sec, frac, spec.big_endian))
    manifest = dict(zip(keys, labels))
    return SynthResult(b"".join(out), manifest, motifs, offsets, len(events))


# -- manifests ---------------------------------------------------------------

def _ip(b):
    return ".".join(str(x) for x in b)


def _ip_bytes(s):
    return bytes(int(x) for x in s.split("."))


def write_manifest(path, manifest):
    """TSV: src_ip dst_ip src_port dst_port protocol label."""
    with open(path, "w") as fh:
        for k, lab in manifest.items():
            fh.write(f"{_ip(k.src_ip)}\t{_ip(k.dst_ip)}\t{k.src_port}\t{k.dst_port}\t{k.protocol}\t{lab}\n")


def read_manifest(path):
    manifest = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            s, d, sp, dp, pr, lab = line.split("\t")
            manifest[FlowKey(_ip_bytes(s), _ip_bytes(d), int(sp), int(dp), int(pr))] = int(lab)
    return manifest
