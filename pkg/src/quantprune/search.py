"""The three compression experiments: uniform-precision sweep,
random-restart hill climbing for a minimal bit assignment, and the
quantization-by-pruning grid.

The hill climb starts every place at 32 bits, measures the reference
accuracy, shuffles the place order once per restart, then cycles over the
places until nothing changes.  Each visit tries precisions ascending from
1 bit and accepts the first one whose accuracy stays at or above
``reference * threshold_factor``; if none is acceptable the previous
precision is restored.  Precisions never increase and are bounded below
by 1 bit, so the cycle terminates.  Restart r uses seed ``seed + r``; the
best restart is the one with the smallest model size, ties broken by
higher accuracy, then lower restart index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .inference import evaluate, count_macs, parallel_map
from .model import (
    ALL_PLACES,
    FULL_PRECISION_BITS,
    ModelGraph,
    Place,
    uniform_assignment,
)
from .quantization import QuantSpec, Range, apply_assignment
from .report import model_size

DEFAULT_BITS = (32, 16, 8, 7, 6, 5, 4, 3, 2, 1)


@dataclass(frozen=True)
class TraceEntry:
    place: Place
    tried_bits: int
    accuracy: float
    accepted: bool


@dataclass(frozen=True)
class SearchOutcome:
    assignment: dict[Place, int]
    accuracy: float
    model_size_bytes: float
    restart_index: int
    trace: tuple[TraceEntry, ...]
    original_accuracy: float


def place_set_label(places: Sequence[Place]) -> str:
    """Stable label for a place subset: canonical order, '+'-joined;
    the full set prints as 'all'."""
    subset = [p for p in ALL_PLACES if p in places]
    if len(subset) == len(ALL_PLACES):
        return "all"
    if not subset:
        return "none"
    return "+".join(p.value for p in subset)


def default_place_sets() -> list[tuple[Place, ...]]:
    """The table layout: each place alone, then all places together."""
    return [(p,) for p in ALL_PLACES] + [tuple(ALL_PLACES)]


def all_place_subsets() -> list[tuple[Place, ...]]:
    """Every subset of the 8 places (the exhaustive 2^8 enumeration)."""
    subsets = []
    for mask in range(2 ** len(ALL_PLACES)):
        subsets.append(tuple(p for i, p in enumerate(ALL_PLACES) if mask >> i & 1))
    return subsets


def uniform_sweep(
    model: ModelGraph,
    dataset: Dataset,
    spec: QuantSpec,
    ranges: Mapping[Place, Range] | None,
    bits_list: Sequence[int] | None = None,
    place_sets: Sequence[Sequence[Place]] | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Accuracy per (place subset, bits): the subset runs at the given
    precision, every other place stays at 32 bits."""
    if bits_list is None:
        bits_list = DEFAULT_BITS
    if place_sets is None:
        place_sets = default_place_sets()

    cells = [(places, bits) for places in place_sets for bits in bits_list]

    def cell(args) -> dict:
        places, bits = args
        assignment = uniform_assignment(FULL_PRECISION_BITS)
        for place in places:
            assignment[place] = bits
        quantized, config = apply_assignment(model, assignment, spec, ranges)
        return {
            "places": place_set_label(list(places)),
            "bits": bits,
            "accuracy": evaluate(quantized, dataset, config),
        }

    return parallel_map(cell, cells, jobs)


def hill_climb(
    model: ModelGraph,
    val_dataset: Dataset,
    spec: QuantSpec,
    ranges: Mapping[Place, Range] | None,
    threshold_factor: float = 0.998,
    restarts: int = 50,
    seed: int = 0,
    jobs: int = 1,
) -> SearchOutcome:
    """Random-restart hill climb for the smallest acceptable assignment."""
    if not 0 < threshold_factor <= 1:
        raise ValueError("threshold_factor must be in (0, 1]")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    def test(assignment: Mapping[Place, int]) -> float:
        quantized, config = apply_assignment(model, assignment, spec, ranges)
        return evaluate(quantized, val_dataset, config)

    # The all-32 reference is identical for every restart; measure it once.
    original_accuracy = test(uniform_assignment(FULL_PRECISION_BITS))
    floor = original_accuracy * threshold_factor

    def run_restart(restart: int) -> SearchOutcome:
        rng = np.random.default_rng(seed + restart)
        order = [ALL_PLACES[i] for i in rng.permutation(len(ALL_PLACES))]
        precisions = uniform_assignment(FULL_PRECISION_BITS)
        trace: list[TraceEntry] = []
        changed = True
        while changed:
            changed = False
            for place in order:
                current = precisions[place]
                accepted = None
                for bits in range(1, current + 1):
                    precisions[place] = bits
                    accuracy = test(precisions)
                    ok = accuracy >= floor
                    trace.append(TraceEntry(place, bits, accuracy, ok))
                    if ok:
                        accepted = bits
                        break
                if accepted is None:
                    precisions[place] = current
                elif accepted < current:
                    changed = True
        return SearchOutcome(
            assignment=dict(precisions),
            accuracy=test(precisions),
            model_size_bytes=model_size(model, precisions).total_bytes,
            restart_index=restart,
            trace=tuple(trace),
            original_accuracy=original_accuracy,
        )

    outcomes = parallel_map(run_restart, range(restarts), jobs)
    return min(outcomes, key=lambda o: (o.model_size_bytes, -o.accuracy, o.restart_index))


def quant_prune_grid(
    model: ModelGraph,
    dataset: Dataset,
    spec: QuantSpec,
    ranges: Mapping[Place, Range] | None,
    bits_list: Sequence[int] | None = None,
    thresholds: Sequence[float] | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Accuracy and MAC ratio per (uniform bits, pruning threshold) cell.

    Quantization is applied first (all 8 places at the same width), then
    pruning runs in-loop at each threshold, so the MAC ratio reflects the
    quantized weight values.
    """
    from .pruning import default_threshold_grid

    if bits_list is None:
        bits_list = DEFAULT_BITS
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = list(thresholds)

    def rows_for_bits(bits: int) -> list[dict]:
        quantized, config = apply_assignment(model, uniform_assignment(bits), spec, ranges)
        rows = []
        for threshold in thresholds:
            accuracy = evaluate(quantized, dataset, config.with_threshold(threshold))
            ratio = count_macs(quantized, model.max_length, threshold).ratio
            rows.append(
                {"bits": bits, "threshold": threshold, "accuracy": accuracy, "mac_ratio": ratio}
            )
        return rows

    nested = parallel_map(rows_for_bits, bits_list, jobs)
    return [row for rows in nested for row in rows]


def outcome_dict(outcome: SearchOutcome) -> dict:
    """JSON-ready form of a search outcome, trace included."""
    return {
        "assignment": {p.value: int(b) for p, b in outcome.assignment.items()},
        "accuracy": outcome.accuracy,
        "original_accuracy": outcome.original_accuracy,
        "model_size_bytes": outcome.model_size_bytes,
        "restart_index": outcome.restart_index,
        "trace": [
            {
                "place": entry.place.value,
                "tried_bits": entry.tried_bits,
                "accuracy": entry.accuracy,
                "accepted": entry.accepted,
            }
            for entry in outcome.trace
        ],
    }
