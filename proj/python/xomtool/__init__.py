"""Execute-only memory toolchain.

ELF images are passed around as ``bytes`` and address ranges as
half-open ``(start, end)`` tuples.
"""

from ._core import (
    DYNAMIC_READ_THRESHOLD,
    MAX_READ_SIZE,
    STATIC_REF_THRESHOLD,
    EmbeddedDataBlock,
    Monitor,
    XomError,
    XomLists,
    analyze,
    format_ground_truth,
    gadget_scan,
    generate_corpus,
    generate_hello_world,
    generate_program,
    is_protected,
    metrics,
    parse_ground_truth,
    parse_trace,
    protect,
    read_intensity,
    read_lists,
    wrpkru_scan,
)

__version__ = "0.3.0"

__all__ = [
    "DYNAMIC_READ_THRESHOLD",
    "MAX_READ_SIZE",
    "STATIC_REF_THRESHOLD",
    "EmbeddedDataBlock",
    "Monitor",
    "XomError",
    "XomLists",
    "analyze",
    "format_ground_truth",
    "gadget_scan",
    "generate_corpus",
    "generate_hello_world",
    "generate_program",
    "is_protected",
    "metrics",
    "parse_ground_truth",
    "parse_trace",
    "protect",
    "read_intensity",
    "read_lists",
    "wrpkru_scan",
]
