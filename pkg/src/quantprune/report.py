"""Bit-exact model-size accounting and deterministic table emission.

A layer's storage is param_count * bits / 8 bytes, kept as an exact
(possibly fractional) real; a megabyte is 2^20 bytes.  Activation places
cost nothing: they parameterize runtime rounding, not stored weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .model import ModelGraph, Place, WEIGHT_PLACES, validate_assignment

MB = float(2**20)


@dataclass(frozen=True)
class LayerSize:
    param_count: int
    bits: int
    bytes: float


@dataclass(frozen=True)
class SizeReport:
    per_layer: Mapping[str, LayerSize]
    total_bytes: float
    total_mb: float
    baseline_bytes: float
    reduction_percent: float
    embedding_share_percent: float


def model_size(
    model: ModelGraph,
    assignment: Mapping[Place, int],
    exclude_pruned: bool = False,
) -> SizeReport:
    """Storage accounting under a bit assignment.

    Weights and biases share their layer's bit width.  With
    ``exclude_pruned`` the conv kept-masks shrink the stored tap count;
    off by default because the reference size tables reflect quantization
    only.
    """
    validate_assignment(assignment)
    per_layer: dict[str, LayerSize] = {}
    total = 0.0
    baseline = 0.0
    for place in WEIGHT_PLACES:
        name = place.value
        arrays = model.weights[name]
        count = int(sum(a.size for a in arrays))
        if exclude_pruned and name in model.conv_masks:
            removed = int((~model.conv_masks[name]).sum())
            count -= removed
        bits = int(assignment[place])
        layer_bytes = count * bits / 8.0
        per_layer[name] = LayerSize(param_count=count, bits=bits, bytes=layer_bytes)
        total += layer_bytes
        baseline += count * 32 / 8.0
    embedding_bytes = per_layer["embedding_1"].bytes
    return SizeReport(
        per_layer=per_layer,
        total_bytes=total,
        total_mb=total / MB,
        baseline_bytes=baseline,
        reduction_percent=(1.0 - total / baseline) * 100.0,
        embedding_share_percent=embedding_bytes / total * 100.0,
    )


def size_report_dict(report: SizeReport) -> dict:
    return {
        "per_layer": {
            name: {"param_count": s.param_count, "bits": s.bits, "bytes": s.bytes}
            for name, s in report.per_layer.items()
        },
        "total_bytes": report.total_bytes,
        "total_mb": report.total_mb,
        "baseline_bytes": report.baseline_bytes,
        "reduction_percent": report.reduction_percent,
        "embedding_share_percent": report.embedding_share_percent,
    }


def format_cell(value) -> str:
    """Fixed six-decimal format for reals; everything else prints plainly."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def emit_table(
    rows: Sequence[Mapping],
    columns: Sequence[str],
    path: str | Path,
    format: str = "csv",
) -> None:
    """Write rows to CSV (RFC-4180 quoting, LF endings, header first) or
    JSON; byte-identical output for identical input."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for row in rows:
        missing = [c for c in columns if c not in row]
        if missing:
            raise ValueError(f"row missing columns {missing}")
    if format == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_cell(row[c]) for c in columns])
    elif format == "json":
        payload = [{c: row[c] for c in columns} for row in rows]
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    else:
        raise ValueError(f"unknown table format {format!r}")


def write_json(obj, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
