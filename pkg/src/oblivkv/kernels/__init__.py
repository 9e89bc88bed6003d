"""Hot numeric kernels.

The numba backend is used when numba imports cleanly; set
``OBLIVKV_NO_NUMBA=1`` to force the pure-numpy path. Both backends are
importable directly (``numpy_impl`` always, ``numba_impl`` when available)
so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""
from __future__ import annotations

import os

from . import _numpy as numpy_impl

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - numba missing
    numba_impl = None

_disabled = os.environ.get("OBLIVKV_NO_NUMBA", "").lower() not in ("", "0", "false", "no")
impl = numpy_impl if (_disabled or numba_impl is None) else numba_impl
BACKEND = impl.BACKEND

bit_reverse = impl.bit_reverse
path_buckets = impl.path_buckets
select_path_slots = impl.select_path_slots
read_phase_slots = impl.read_phase_slots
common_depth = impl.common_depth
evict_assign = impl.evict_assign
bucket_fill = impl.bucket_fill
evict_counts = impl.evict_counts
slot_reuse_scan = impl.slot_reuse_scan

__all__ = [
    "BACKEND", "impl", "numpy_impl", "numba_impl",
    "bit_reverse", "path_buckets", "select_path_slots", "read_phase_slots",
    "common_depth", "evict_assign", "bucket_fill", "evict_counts", "slot_reuse_scan",
]
