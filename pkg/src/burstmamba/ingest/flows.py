"""Flow assembly, burst construction and flow-level splits."""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import BadRatios, EmptyFlow
from .pcap import mask_ip

N_PACKETS = 5
BYTES_PER_PACKET = 320
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class BurstSample:
    bytes: bytes
    label: int
    flow_id: int

    def array(self):
        return np.frombuffer(self.bytes, dtype=np.uint8)


def assemble_flows(packets):
    """Group packets by 5-tuple. Each flow is ordered by (ts_sec, ts_frac,
    arrival index); flows are keyed in order of their first packet. No idle
    timeout: one 5-tuple is one flow."""
    flows = {}
    for rec in sorted(packets, key=lambda r: r.ts_key):
        flows.setdefault(rec.five_tuple, []).append(rec)
    return flows


def flow_id(key, first):
    """Stable 64-bit id from the 5-tuple and the first packet's timestamp."""
    h = hashlib.blake2b(key.pack() + struct.pack("<QQ", first.ts_sec, first.ts_key[1]), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def build_burst(flow, n=N_PACKETS, m=BYTES_PER_PACKET, label=0):
    """First ``n`` packets, each masked and cut or zero-padded to ``m`` bytes;
    missing packets become ``m`` zero bytes."""
    if not flow:
        raise EmptyFlow("cannot build a burst from an empty flow")
    if n < 1 or m < 20:
        raise ValueError(f"need n >= 1 and m >= 20, got n={n}, m={m}")
    buf = bytearray(n * m)
    for i, rec in enumerate(flow[:n]):
        ip = mask_ip(rec.ip_bytes)[:m]
        buf[i * m:i * m + len(ip)] = ip
    return BurstSample(bytes(buf), int(label), flow_id(flow[0].five_tuple, flow[0]))


def _split_rank(fid, seed):
    h = hashlib.blake2b(struct.pack("<QQ", fid & (2**64 - 1), seed & (2**64 - 1)), digest_size=8)
    return h.digest()


def split_counts(n, ratios):
    """Largest-remainder apportionment of ``n`` items."""
    raw = [r * n for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(not r > 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three positive numbers summing to 1, got {ratios}")
    return ratios


def split_dataset(samples, ratios=DEFAULT_RATIOS, seed=0):
    """Partition samples into (train, val, test) by flow_id.

    Distinct flow ids are ranked by a keyed hash of (flow_id, seed) and cut
    at the apportioned counts, so every sample of one flow lands in the same
    split and the result depends only on the ids and the seed.
    """
    ratios = check_ratios(ratios)
    fids = sorted({s.flow_id for s in samples}, key=lambda f: (_split_rank(f, seed), f))
    n_tr, n_va, _ = split_counts(len(fids), ratios)
    part = {}
    for i, f in enumerate(fids):
        part[f] = 0 if i < n_tr else (1 if i < n_tr + n_va else 2)
    out = ([], [], [])
    for s in samples:
        out[part[s.flow_id]].append(s)
    return out
