"""Magnitude pruning: removal statistics and at-rest model transforms.

Only convolution kernels are pruned; biases, dense layers, and the
embedding are never touched.  A weight survives when |w| >= threshold,
matching the in-loop rule of the pruned convolution, so pruning at rest
and pruning in the inner loop produce bitwise-identical forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .inference import InferenceConfig, FLOAT_CONFIG, count_macs, evaluate, parallel_map
from .model import ModelGraph


@dataclass(frozen=True)
class PruneReport:
    threshold: float
    per_layer_removed: Mapping[str, float]
    removed_fraction: float
    mac_ratio: float


def prune_ratio(weights: np.ndarray, threshold: float) -> float:
    """Fraction of entries with |w| strictly below the threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    weights = np.asarray(weights, dtype=np.float64)
    return float((np.abs(weights) < threshold).mean())


def prune_model(model: ModelGraph, threshold: float) -> ModelGraph:
    """Zero out conv taps below the threshold and record them in the
    kept-mask; composes with earlier pruning."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    out = model
    for spec in (model.conv1, model.conv2):
        kernel, bias = model.weights[spec.name]
        kept = model.kept_mask(spec.name) & (np.abs(kernel) >= threshold)
        out = out.with_weights(spec.name, (np.where(kept, kernel, 0.0), bias))
        out = out.with_mask(spec.name, kept)
    return out


def prune_report(model: ModelGraph, threshold: float, input_length: int | None = None) -> PruneReport:
    """Removal fractions per conv layer plus the resulting MAC ratio."""
    per_layer = {}
    removed = total = 0
    for spec in (model.conv1, model.conv2):
        kernel = model.weights[spec.name][0]
        gone = ~(model.kept_mask(spec.name) & (np.abs(kernel) >= threshold))
        per_layer[spec.name] = float(gone.mean())
        removed += int(gone.sum())
        total += kernel.size
    length = input_length if input_length is not None else model.max_length
    report = count_macs(model, length, threshold)
    return PruneReport(
        threshold=threshold,
        per_layer_removed=per_layer,
        removed_fraction=removed / total,
        mac_ratio=report.ratio,
    )


def default_threshold_grid(
    start: float = 0.0, step: float = 0.005, stop: float = 0.15
) -> list[float]:
    """Inclusive threshold grid; the defaults give 31 points."""
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def pruning_sweep(
    model: ModelGraph,
    dataset: Dataset,
    config: InferenceConfig = FLOAT_CONFIG,
    thresholds: Sequence[float] | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Accuracy and MAC ratio per threshold, in ascending threshold order."""
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = list(thresholds)
    if sorted(thresholds) != thresholds:
        raise ValueError("thresholds must be sorted ascending")

    def row(threshold: float) -> dict:
        accuracy = evaluate(model, dataset, config.with_threshold(threshold))
        ratio = count_macs(model, model.max_length, threshold).ratio
        return {"threshold": threshold, "accuracy": accuracy, "mac_ratio": ratio}

    return parallel_map(row, thresholds, jobs)
