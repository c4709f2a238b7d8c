"""PCAP files -> labelled burst dataset."""

import fnmatch
import os
from collections import Counter
from dataclasses import dataclass, field

from ..errors import BadLabel
from .dataset import BurstDataset
from .flows import BYTES_PER_PACKET, N_PACKETS, assemble_flows, build_burst
from .pcap import read_pcap


def read_label_map(path):
    """``glob-pattern<TAB>class-index`` per line; ``#`` starts a comment."""
    rules = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                pat, idx = line.split("\t")
                rules.append((pat, int(idx)))
            except ValueError:
                raise BadLabel(f"{path}:{lineno}: expected 'pattern<TAB>class-index'") from None
    return rules


def label_for_path(path, rules):
    """First rule whose pattern matches the full path or the file name."""
    name = os.path.basename(path)
    for pat, idx in rules:
        if fnmatch.fnmatch(path, pat) or fnmatch.fnmatch(name, pat):
            return idx
    raise BadLabel(f"no label rule matches {path}")


@dataclass
class IngestReport:
    files: int = 0
    packets: int = 0
    kept_packets: int = 0
    skipped: Counter = field(default_factory=Counter)
    flows: int = 0
    short_flows_dropped: int = 0
    unlabelled_flows: int = 0
    truncated_files: list = field(default_factory=list)

    def lines(self):
        out = [f"files\t{self.files}", f"packets\t{self.packets}", f"kept_packets\t{self.kept_packets}"]
        out += [f"skipped.{k}\t{v}" for k, v in sorted(self.skipped.items())]
        out += [f"flows\t{self.flows}", f"short_flows_dropped\t{self.short_flows_dropped}",
                f"unlabelled_flows\t{self.unlabelled_flows}",
                f"truncated_files\t{len(self.truncated_files)}"]
        return out


def build_dataset(paths, label_rules=None, manifest=None, n=N_PACKETS, m=BYTES_PER_PACKET,
                  min_packets=1, dhcp_filter=True, num_classes=None):
    """Parse each capture in order, assemble flows per file, and emit one burst
    per flow. Labels come from ``manifest`` (FlowKey -> class) when given,
    otherwise from ``label_rules`` matched against the file path."""
    if manifest is None and label_rules is None:
        raise BadLabel("need a label map or a flow manifest")
    rep = IngestReport()
    samples = []
    for path in paths:
        res = read_pcap(path, dhcp_filter=dhcp_filter)
        rep.files += 1
        rep.packets += res.total
        rep.kept_packets += len(res.records)
        rep.skipped.update(res.skipped)
        if res.truncated:
            rep.truncated_files.append(str(path))
        file_label = None if manifest is not None else label_for_path(str(path), label_rules)
        for key, flow in assemble_flows(res.records).items():
            rep.flows += 1
            if len(flow) < min_packets:
                rep.short_flows_dropped += 1
                continue
            label = file_label if manifest is None else manifest.get(key)
            if label is None:
                rep.unlabelled_flows += 1
                continue
            samples.append(build_burst(flow, n, m, label))
    if num_classes is None:
        labels = [s.label for s in samples]
        if manifest:
            labels += list(manifest.values())
        if label_rules:
            labels += [i for _, i in label_rules]
        num_classes = max(labels) + 1 if labels else 0
    return BurstDataset.from_samples(samples, num_classes, n * m), rep
