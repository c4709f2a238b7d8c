"""BPC1 dataset files.

Layout (little-endian)::

    "BPC1" | u32 version | u32 num_classes | u32 seq_len | u64 num_samples
    num_samples x (u32 label | u64 flow_id | seq_len raw bytes)
"""

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import BadLabel, BadMagic, LengthMismatch, TruncatedFile
from .flows import BurstSample

MAGIC = b"BPC1"
VERSION = 1
HEADER = struct.Struct("<4sIIIQ")  # 24 bytes


def _record_dtype(seq_len):
    return np.dtype([("label", "<u4"), ("flow_id", "<u8"), ("bytes", "u1", (seq_len,))])


@dataclass
class BurstDataset:
    x: np.ndarray          # uint8 [N, seq_len]
    labels: np.ndarray     # int64 [N]
    flow_ids: np.ndarray   # uint64 [N]
    num_classes: int

    @property
    def seq_len(self):
        return self.x.shape[1]

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def from_samples(cls, samples, num_classes=None, seq_len=None):
        samples = list(samples)
        if seq_len is None:
            seq_len = len(samples[0].bytes) if samples else 0
        for s in samples:
            if len(s.bytes) != seq_len:
                raise LengthMismatch(f"sample of {len(s.bytes)} bytes in a seq_len {seq_len} set")
        x = np.zeros((len(samples), seq_len), dtype=np.uint8)
        for i, s in enumerate(samples):
            x[i] = np.frombuffer(s.bytes, dtype=np.uint8)
        labels = np.array([s.label for s in samples], dtype=np.int64)
        fids = np.array([s.flow_id for s in samples], dtype=np.uint64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if len(labels) else 0
        return cls(x, labels, fids, int(num_classes))

    def samples(self):
        return [BurstSample(self.x[i].tobytes(), int(self.labels[i]), int(self.flow_ids[i]))
                for i in range(len(self))]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return BurstDataset(self.x[idx], self.labels[idx], self.flow_ids[idx], self.num_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def write_dataset(data, path, num_classes=None, seq_len=None):
    """Write a BurstDataset or a list of BurstSample."""
    if not isinstance(data, BurstDataset):
        data = BurstDataset.from_samples(data, num_classes, seq_len)
    elif num_classes is not None:
        data = BurstDataset(data.x, data.labels, data.flow_ids, int(num_classes))
    n, L = data.x.shape
    if n and (data.labels.min() < 0 or data.labels.max() >= data.num_classes):
        raise BadLabel(f"labels must lie in [0, {data.num_classes})")
    rec = np.zeros(n, dtype=_record_dtype(L))
    rec["label"] = data.labels
    rec["flow_id"] = data.flow_ids
    rec["bytes"] = data.x
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, data.num_classes, L, n))
        fh.write(rec.tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < HEADER.size:
        raise TruncatedFile(f"{path}: {len(buf)} bytes, header needs {HEADER.size}")
    magic, version, num_classes, L, n = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} is not {MAGIC!r}")
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    expected = HEADER.size + n * (12 + L)
    if len(buf) < expected:
        raise TruncatedFile(f"{path}: {len(buf)} bytes, header implies {expected}")
    if len(buf) > expected:
        raise LengthMismatch(f"{path}: {len(buf) - expected} trailing bytes")
    rec = np.frombuffer(buf, dtype=_record_dtype(L), count=n, offset=HEADER.size)
    return BurstDataset(rec["bytes"].copy(), rec["label"].astype(np.int64),
                        rec["flow_id"].copy(), int(num_classes))
