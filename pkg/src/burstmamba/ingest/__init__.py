"""Capture parsing, flow assembly and burst datasets."""

from .dataset import BurstDataset, read_dataset, write_dataset
from .flows import (BYTES_PER_PACKET, DEFAULT_RATIOS, N_PACKETS, BurstSample, assemble_flows,
                    build_burst, flow_id, split_dataset)
from .pcap import FlowKey, PacketRecord, ParseResult, mask_ip, parse_pcap, read_pcap
from .pipeline import IngestReport, build_dataset, label_for_path, read_label_map
from .synth import SynthResult, SynthSpec, read_manifest, synth_pcap, write_manifest

__all__ = [
    "BYTES_PER_PACKET", "BurstDataset", "BurstSample", "DEFAULT_RATIOS", "FlowKey",
    "IngestReport", "N_PACKETS", "PacketRecord", "ParseResult", "SynthResult", "SynthSpec",
    "assemble_flows", "build_burst", "build_dataset", "flow_id", "label_for_path", "mask_ip",
    "parse_pcap", "read_dataset", "read_label_map", "read_manifest", "read_pcap",
    "split_dataset", "synth_pcap", "write_dataset", "write_manifest",
]
