"""Selective state-space blocks and the SSD evaluation paths."""

from .blocks import (
    BlockDims,
    init_mamba1_block,
    init_mamba2_block,
    mamba1_block,
    mamba2_block,
    selective_scan,
)
from .ssd import DEFAULT_CHUNK, discretize, discretize_log, ssd_chunked, ssd_chunked_log, ssd_naive

__all__ = [
    "BlockDims",
    "DEFAULT_CHUNK",
    "discretize",
    "discretize_log",
    "init_mamba1_block",
    "init_mamba2_block",
    "mamba1_block",
    "mamba2_block",
    "selective_scan",
    "ssd_chunked",
    "ssd_chunked_log",
    "ssd_naive",
]
