"""Forward pass in float or simulated-quantized mode, with prune-aware
convolution, activation-range calibration, accuracy evaluation, and MAC
accounting.

All arithmetic runs in float64 with a fixed accumulation order, so results
are bit-reproducible: a convolution output accumulates its taps input-
channel-major, kernel-position-minor, starting from zero, with the bias
added last.  Skipping a pruned tap and adding its zeroed product are
bitwise equivalent (the accumulator never holds -0.0), which is what makes
at-rest pruning interchangeable with the in-loop threshold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset, PAD_INDEX
from .model import (
    ACTIVATION_PLACES,
    FULL_PRECISION_BITS,
    ModelGraph,
    Place,
)
from .quantization import QuantSpec, Range, quantize_activations

ActivationRanges = Mapping[Place, Range]


@dataclass(frozen=True)
class InferenceConfig:
    """Runtime knobs for forward(): activation precisions, their
    calibrated ranges, and the in-loop pruning threshold.

    Weight quantization is not applied here; it must already be
    materialized in the model (see quantization.apply_assignment).
    """

    bit_assignment: Mapping[Place, int] | None = None
    quant_scheme: QuantSpec = field(default_factory=QuantSpec)
    activation_ranges: ActivationRanges | None = None
    pruning_threshold: float = 0.0

    def __post_init__(self):
        if self.pruning_threshold < 0:
            raise ValueError("pruning_threshold must be >= 0")
        for place in ACTIVATION_PLACES:
            if self.activation_bits(place) < FULL_PRECISION_BITS:
                if self.activation_ranges is None or place not in self.activation_ranges:
                    raise ValueError(
                        f"activation place {place} quantized without a calibrated range"
                    )

    def activation_bits(self, place: Place) -> int:
        if self.bit_assignment is None:
            return FULL_PRECISION_BITS
        return int(self.bit_assignment.get(place, FULL_PRECISION_BITS))

    def with_threshold(self, threshold: float) -> "InferenceConfig":
        return replace(self, pruning_threshold=threshold)


FLOAT_CONFIG = InferenceConfig()


@dataclass(frozen=True)
class LayerMacs:
    total: int
    performed: int


@dataclass(frozen=True)
class MacReport:
    """Multiply-accumulate counts for the convolution layers."""

    total_macs: int
    performed_macs: int
    per_layer: Mapping[str, LayerMacs]

    @property
    def ratio(self) -> float:
        if self.total_macs == 0:
            return 1.0
        return self.performed_macs / self.total_macs


def conv1d_pruned(
    inputs: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    threshold: float = 0.0,
) -> np.ndarray:
    """1D cross-correlation that skips taps with |w| below the threshold.

    inputs [len, in_ch], weights [in_ch, out_ch, k], bias [out_ch] ->
    output [len - k + 1, out_ch].  A tap survives when
    ``abs(weight) >= threshold`` (boundary weights are kept); the bias is
    always added, after the taps.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if inputs.ndim != 2 or weights.ndim != 3 or bias.ndim != 1:
        raise ValueError("conv1d_pruned: bad tensor ranks")
    length, in_ch = inputs.shape
    w_in, out_ch, k = weights.shape
    if w_in != in_ch or bias.shape[0] != out_ch:
        raise ValueError(
            f"conv1d_pruned: shape mismatch (input channels {in_ch}, "
            f"kernel {weights.shape}, bias {bias.shape})"
        )
    if length < k:
        raise ValueError(f"conv1d_pruned: input length {length} < kernel size {k}")

    out_len = length - k + 1
    kept = np.abs(weights) >= threshold
    effective = np.where(kept, weights, 0.0)
    out = np.zeros((out_len, out_ch))
    # Vectorized over positions/output channels; the per-element add order
    # stays i-major, t-minor, which fixes the float64 result bitwise.
    for i in range(in_ch):
        for t in range(k):
            if not kept[i, :, t].any():
                continue
            out += inputs[t : t + out_len, i : i + 1] * effective[i, :, t][np.newaxis, :]
    out += bias[np.newaxis, :]
    return out


def pad_tokens(tokens: Sequence[int], max_length: int) -> np.ndarray:
    """Truncate to max_length and right-pad with the padding index."""
    arr = np.full(max_length, PAD_INDEX, dtype=np.int64)
    clipped = list(tokens)[:max_length]
    arr[: len(clipped)] = clipped
    return arr


def _maybe_quantize(
    values: np.ndarray,
    place: Place,
    config: InferenceConfig,
    record: dict[Place, list[float]] | None,
) -> np.ndarray:
    if record is not None:
        stats = record.setdefault(place, [np.inf, -np.inf])
        stats[0] = min(stats[0], float(values.min()))
        stats[1] = max(stats[1], float(values.max()))
    bits = config.activation_bits(place)
    if bits >= FULL_PRECISION_BITS:
        return values
    return quantize_activations(
        values, bits, config.activation_ranges[place], config.quant_scheme
    )


def forward(
    model: ModelGraph,
    tokens: Sequence[int],
    config: InferenceConfig = FLOAT_CONFIG,
    _record: dict[Place, list[float]] | None = None,
) -> np.ndarray:
    """Class scores for one document.

    Runs embedding lookup, both pruned conv branches with relu and
    (optionally) activation rounding before pooling, concat, dense_1 with
    relu and optional rounding, then dense_2 under sigmoid (binary; one
    score in (0,1)) or softmax (scores summing to 1).
    """
    emb = model.weights["embedding_1"][0]
    padded = pad_tokens(tokens, model.max_length)
    if (padded >= model.embedding.vocab_size).any():
        bad = int(padded[padded >= model.embedding.vocab_size][0])
        raise ValueError(f"token {bad} outside vocabulary of size {model.embedding.vocab_size}")
    x = emb[padded]

    pooled = []
    for name, act_place in (("conv1d_1", Place.CONV1_ACT), ("conv1d_2", Place.CONV2_ACT)):
        kernel, bias = model.weights[name]
        y = conv1d_pruned(x, kernel, bias, config.pruning_threshold)
        y = np.maximum(y, 0.0)
        y = _maybe_quantize(y, act_place, config, _record)
        pooled.append(y.max(axis=0) if model.pool == "max" else y.ravel())
    h = np.concatenate(pooled)

    w1, b1 = model.weights["dense_1"]
    z = h @ w1 + b1
    z = np.maximum(z, 0.0)
    z = _maybe_quantize(z, Place.DENSE1_ACT, config, _record)

    w2, b2 = model.weights["dense_2"]
    logits = z @ w2 + b2
    if model.dense2.activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-logits))
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def predict(
    model: ModelGraph, tokens: Sequence[int], config: InferenceConfig = FLOAT_CONFIG
) -> int:
    """Predicted class index; binary rule is sigmoid >= 0.5 -> class 1."""
    scores = forward(model, tokens, config)
    if model.dense2.activation == "sigmoid":
        return int(scores[0] >= 0.5)
    return int(np.argmax(scores))


def _chunked(items: Sequence, jobs: int) -> list[Sequence]:
    jobs = max(1, jobs)
    size = (len(items) + jobs - 1) // jobs
    return [items[i : i + size] for i in range(0, len(items), size)] or [items]


def evaluate(
    model: ModelGraph,
    dataset: Dataset,
    config: InferenceConfig = FLOAT_CONFIG,
    jobs: int = 1,
) -> float:
    """Fraction of documents classified correctly; deterministic and
    independent of the worker count (count-based reduction)."""
    if not dataset.documents:
        raise ValueError("evaluate: dataset is empty")

    def count(docs) -> int:
        return sum(1 for d in docs if predict(model, d.tokens, config) == d.label)

    if jobs <= 1:
        correct = count(dataset.documents)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            correct = sum(pool.map(count, _chunked(dataset.documents, jobs)))
    return correct / len(dataset.documents)


def calibrate_activations(
    model: ModelGraph, dataset: Dataset, pruning_threshold: float = 0.0
) -> dict[Place, Range]:
    """Exact per-place min/max of the activation outputs over a dataset,
    computed with float weights at the given pruning threshold."""
    if not dataset.documents:
        raise ValueError("calibrate_activations: dataset is empty")
    record: dict[Place, list[float]] = {}
    config = InferenceConfig(pruning_threshold=pruning_threshold)
    for doc in dataset.documents:
        forward(model, doc.tokens, config, _record=record)
    return {place: Range(stats[0], stats[1]) for place, stats in record.items()}


def count_macs(
    model: ModelGraph, input_length: int, pruning_threshold: float = 0.0
) -> MacReport:
    """Multiply-accumulate totals for the conv layers.

    Per layer the total is P*H*W*M*N with H = 1, P = input_length - k + 1,
    W = k, M = in_channels, N = out_channels; the performed count keeps
    only taps whose |weight| clears the threshold (and which were not
    removed at rest), times P.
    """
    per_layer: dict[str, LayerMacs] = {}
    total = performed = 0
    for spec in (model.conv1, model.conv2):
        if input_length < spec.kernel_size:
            raise ValueError("input_length shorter than kernel size")
        positions = input_length - spec.kernel_size + 1
        kernel = model.weights[spec.name][0]
        kept = model.kept_mask(spec.name) & (np.abs(kernel) >= pruning_threshold)
        layer_total = positions * spec.kernel_size * spec.in_channels * spec.out_channels
        layer_performed = int(kept.sum()) * positions
        per_layer[spec.name] = LayerMacs(layer_total, layer_performed)
        total += layer_total
        performed += layer_performed
    return MacReport(total_macs=total, performed_macs=performed, per_layer=per_layer)


def parallel_map(fn: Callable, items: Iterable, jobs: int = 1) -> list:
    """Order-preserving map, threaded when jobs > 1; results match the
    sequential path exactly."""
    items = list(items)
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
