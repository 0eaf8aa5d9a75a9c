"""Anatomy of a mask file: fixed header, packed bits, sparse scales.

A stored mask is tiny because structure is cheap: one bit per kernel, one
float32 only where a kernel was dropped. This script builds an artifact by
hand, walks the bytes, and shows the stats the CLI prints for it.
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from ksm.masks import MaskHyperparams
from ksm.model import TaskArtifact
from ksm.reporting import mask_layer_stats, overhead_summary, stats_table
from ksm.store import load_mask, mask_file_size, mask_to_bytes, save_mask

# -- 1. a two-layer mask, small enough to read by eye --------------------
bits = {
    0: np.array([[1, 0, 1, 1], [0, 0, 1, 1]], dtype=np.uint8),
    1: np.array([[1, 1], [1, 0]], dtype=np.uint8),
}
scales = {
    lid: np.where(b == 0, 0.25, 0.0).astype(np.float32) for lid, b in bits.items()
}
art = TaskArtifact(
    task_id=3, class_ids=(4, 9), strategy_name="ksm",
    hyper=MaskHyperparams(), bits=bits, scales=scales,
    kernel_sizes={0: (3, 3), 1: (3, 3)},
)

# -- 2. the raw bytes ------------------------------------------------------
raw = mask_to_bytes(art, include_companion=False)
magic, version, k, tau, temp, layers = struct.unpack_from("<4sHdddI", raw)
print(f"header: magic={magic} version={version} k={k} tau={tau} "
      f"T={temp} layers={layers}")
print(f"file is {len(raw)} bytes; the closed-form size agrees:",
      mask_file_size([(2, 4, 3), (2, 2, 1)]))  # (rows, cols, dropped) per layer
# per layer: 12 bytes of ids/dims, ceil(bits/8) packed bytes, 4 bytes per
# dropped kernel. layer 0: 12 + 1 + 3*4 = 25; layer 1: 12 + 1 + 1*4 = 17.
print("layer 0 bits, packed MSB-first:", f"{raw[34 + 12]:08b}",
      "(rows [1,0,1,1] and [0,0,1,1] back to back)")

# -- 3. roundtrip and stats ------------------------------------------------
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "task_03.mask"
    save_mask(art, path)
    back = load_mask(path)
    again = path.read_bytes()
    save_mask(back, path)
    print("save -> load -> save is byte-identical:", path.read_bytes() == again)

print()
print(stats_table(mask_layer_stats(art)))
summary = overhead_summary(art)
print(f"\nstored bits {summary['mask_bits']} vs element-wise "
      f"{summary['elementwise_mask_bits']} "
      f"(reduction {summary['bit_reduction']:.2f}x), "
      f"{summary['scale_values']} scale floats = {summary['scale_bytes']} bytes")
