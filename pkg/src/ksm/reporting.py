"""Mask statistics and run ledgers as stable CSV / JSON text.

All emitters format numbers explicitly so the same run produces the
same bytes; timing fields are the one intentionally nondeterministic
column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import TaskArtifact
from .store import mask_to_bytes
from .training import RunLedger

LEDGER_SCHEMA = "ksm-ledger/1"


@dataclass(frozen=True)
class LayerMaskStats:
    """Mask composition of one layer.

    ``scale_ratio`` is defined as the exact complement of ``ones_ratio``:
    every dropped entry carries a stored scaling value.
    """

    layer_id: int
    entries: int
    ones_ratio: float
    scale_ratio: float
    mean_scale: float


def mask_layer_stats(artifact: TaskArtifact) -> list[LayerMaskStats]:
    out = []
    for lid in sorted(artifact.bits):
        bits = artifact.bits[lid]
        n = int(bits.size)
        ones = int(np.count_nonzero(bits))
        ones_ratio = ones / n
        zeros = n - ones
        if zeros:
            mean_scale = float(artifact.scales[lid].reshape(-1)[bits.reshape(-1) == 0].mean())
        else:
            mean_scale = 0.0
        out.append(
            LayerMaskStats(
                layer_id=lid,
                entries=n,
                ones_ratio=ones_ratio,
                scale_ratio=1.0 - ones_ratio,
                mean_scale=mean_scale,
            )
        )
    return out


def overhead_summary(artifact: TaskArtifact) -> dict:
    """Mask size accounting: stored bits vs a hypothetical element-wise mask."""
    mask_bits = 0
    element_bits = 0
    scale_values = 0
    for lid in sorted(artifact.bits):
        bits = artifact.bits[lid]
        n = int(bits.size)
        mask_bits += n
        if bits.ndim == 2 and lid in artifact.kernel_sizes:
            kh, kw = artifact.kernel_sizes[lid]
            element_bits += n * kh * kw
        else:
            element_bits += n
        scale_values += n - int(np.count_nonzero(bits))
    file_bytes = len(mask_to_bytes(artifact, include_companion=False))
    return {
        "mask_bits": mask_bits,
        "elementwise_mask_bits": element_bits,
        "bit_reduction": element_bits / mask_bits if mask_bits else 1.0,
        "scale_values": scale_values,
        "scale_bytes": 4 * scale_values,
        "file_bytes": file_bytes,
    }


def stats_csv(stats: list[LayerMaskStats]) -> str:
    lines = ["layer,entries,ones_ratio,scale_ratio,mean_scale"]
    for s in stats:
        lines.append(
            f"{s.layer_id},{s.entries},{s.ones_ratio:.6f},{s.scale_ratio:.6f},{s.mean_scale:.6f}"
        )
    return "\n".join(lines) + "\n"


def stats_table(stats: list[LayerMaskStats]) -> str:
    head = f"{'layer':>5}  {'entries':>8}  {'ones':>8}  {'scaled':>8}  {'mean scale':>10}"
    rows = [head, "-" * len(head)]
    for s in stats:
        rows.append(
            f"{s.layer_id:>5}  {s.entries:>8}  {s.ones_ratio:>8.4f}  "
            f"{s.scale_ratio:>8.4f}  {s.mean_scale:>10.4f}"
        )
    return "\n".join(rows)


def ledger_csv(ledger: RunLedger) -> str:
    lines = ["task,acc,seconds"]
    for tid, acc, sec in zip(ledger.task_ids, ledger.accuracies, ledger.seconds):
        lines.append(f"{tid},{acc:.6f},{sec:.3f}")
    return "\n".join(lines) + "\n"


def ledger_json(ledger: RunLedger, config: dict | None = None) -> str:
    payload = {
        "schema": LEDGER_SCHEMA,
        "strategy": ledger.strategy,
        "seed": ledger.seed,
        "epochs": ledger.epochs,
        "task_ids": ledger.task_ids,
        "class_ids": [list(c) for c in ledger.class_ids],
        "accuracies": [round(a, 6) for a in ledger.accuracies],
        "seconds": [round(s, 3) for s in ledger.seconds],
        "matrix": [
            [None if v is None else round(v, 6) for v in row] for row in ledger.matrix
        ],
    }
    if config is not None:
        payload["config"] = config
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
