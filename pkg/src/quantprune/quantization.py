"""Precision-reduction mappings.

Three schemes are supported:

* ``symmetric_integer`` — midpoint bucketing over [-M, M], M = max |x|;
* ``asymmetric_integer`` — midpoint bucketing over [min x, max x];
* ``dynamic_fixed_point`` — signed fixed point whose fractional length
  adapts to the data magnitude, with saturation at the format limits.

Bucketing divides the range into 2^bits equal buckets and represents each
by its midpoint.  32 bits is a pass-through: values are left untouched.
Inference consumes the dequantized (midpoint) values; the integer codes
themselves are only materialized for reporting and code emission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import (
    ACTIVATION_PLACES,
    FULL_PRECISION_BITS,
    ModelGraph,
    Place,
    WEIGHT_PLACES,
    validate_assignment,
)

SYMMETRIC = "symmetric_integer"
ASYMMETRIC = "asymmetric_integer"
DYNAMIC_FIXED_POINT = "dynamic_fixed_point"
SCHEMES = (SYMMETRIC, ASYMMETRIC, DYNAMIC_FIXED_POINT)


@dataclass(frozen=True)
class Range:
    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ValueError("range bounds must be finite")
        if self.min > self.max:
            raise ValueError(f"range min {self.min} > max {self.max}")

    @property
    def magnitude(self) -> float:
        return max(abs(self.min), abs(self.max))


@dataclass(frozen=True)
class QuantSpec:
    """Scheme selector; fixes how ranges are placed around the data."""

    scheme: str = SYMMETRIC

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed fixed-point layout: int_bits + frac_bits + 1 sign bit."""

    total_bits: int
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.total_bits < 2:
            raise ValueError("total_bits must be >= 2")
        if self.int_bits + self.frac_bits + 1 != self.total_bits:
            raise ValueError("int_bits + frac_bits + 1 must equal total_bits")

    @property
    def step(self) -> float:
        return 2.0 ** (-self.frac_bits)

    @property
    def lowest(self) -> float:
        return -(2 ** (self.total_bits - 1)) * self.step

    @property
    def highest(self) -> float:
        return (2 ** (self.total_bits - 1) - 1) * self.step


def _check_bits(bits: int) -> int:
    if not isinstance(bits, (int, np.integer)) or not 1 <= int(bits) <= 32:
        raise ValueError(f"bits must be an integer in [1, 32], got {bits!r}")
    return int(bits)


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest with halves away from zero, platform-independent."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def compute_range(values: np.ndarray, spec: QuantSpec) -> Range:
    """Calibration range for a value set: [min, max] under the asymmetric
    scheme, [-M, M] with M = max |x| otherwise."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("cannot compute a range over an empty value set")
    if spec.scheme == ASYMMETRIC:
        return Range(float(flat.min()), float(flat.max()))
    magnitude = float(np.abs(flat).max())
    return Range(-magnitude, magnitude)


def bucket_quantize(values: np.ndarray, bits: int, range_: Range) -> np.ndarray:
    """Clip to the range and snap every value to its bucket midpoint.

    The bucket width (max-min)/2^bits is exact in float64 (division by a
    power of two), and midpoints are evaluated as
    ``center + (2*index + 1 - 2^bits) * width/2`` so that symmetric ranges
    quantize antisymmetrically: q(-x) == -q(x) bit for bit.  The top edge
    x == max lands in the last bucket.
    """
    bits = _check_bits(bits)
    values = np.asarray(values, dtype=np.float64)
    if bits >= FULL_PRECISION_BITS:
        return np.array(values)
    if range_.min == range_.max:
        return np.full_like(values, range_.min)
    width = (range_.max - range_.min) / (2**bits)
    half = width / 2
    center = (range_.min + range_.max) / 2
    clipped = np.clip(values, range_.min, range_.max)
    index = np.floor((clipped - range_.min) / width)
    index = np.clip(index, 0, 2**bits - 1)
    codes = 2.0 * index + 1.0 - 2.0**bits
    return center + codes * half


def bucket_codes(values: np.ndarray, bits: int, range_: Range) -> tuple[np.ndarray, float, float]:
    """Integer codes plus (scale, zero_point) with
    ``value == zero_point + code * scale`` reproducing bucket_quantize
    bitwise.  Codes are the odd integers 2*index + 1 - 2^bits.
    """
    bits = _check_bits(bits)
    values = np.asarray(values, dtype=np.float64)
    if bits >= FULL_PRECISION_BITS:
        raise ValueError("32 bits is a pass-through; no codes exist")
    if range_.min == range_.max:
        return np.zeros(values.shape, dtype=np.int64), 0.0, range_.min
    width = (range_.max - range_.min) / (2**bits)
    center = (range_.min + range_.max) / 2
    clipped = np.clip(values, range_.min, range_.max)
    index = np.clip(np.floor((clipped - range_.min) / width), 0, 2**bits - 1)
    codes = (2 * index + 1 - 2**bits).astype(np.int64)
    return codes, width / 2, center


def int_bits_for(values: np.ndarray) -> int:
    """ceil(log2 max|x|); 0 for all-zero input.  Negative results are
    valid and mean the data sits entirely below one."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("cannot size an empty value set")
    magnitude = float(np.abs(flat).max())
    if magnitude == 0.0:
        return 0
    return math.ceil(math.log2(magnitude))


def fixed_point_format(values: np.ndarray, total_bits: int) -> FixedPointFormat:
    if total_bits < 2:
        raise ValueError("total_bits must be >= 2")
    int_bits = int_bits_for(values)
    return FixedPointFormat(total_bits, int_bits, total_bits - int_bits - 1)


def fixed_point_quantize(
    values: np.ndarray, total_bits: int, fmt: FixedPointFormat | None = None
) -> np.ndarray:
    """Round onto the fixed-point grid and saturate at the format limits.

    Rounding is half-away-from-zero; the format is sized from the data
    itself unless given explicitly (a shared format lets one layer's
    kernel and bias use the same grid).
    """
    values = np.asarray(values, dtype=np.float64)
    if fmt is None:
        fmt = fixed_point_format(values, total_bits)
    step = fmt.step
    q = round_half_away(values / step) * step
    return np.clip(q, fmt.lowest, fmt.highest)


def fixed_point_codes(values: np.ndarray, fmt: FixedPointFormat) -> tuple[np.ndarray, float]:
    """Integer codes with ``value == code * step``; saturates like
    fixed_point_quantize."""
    values = np.asarray(values, dtype=np.float64)
    codes = round_half_away(values / fmt.step)
    codes = np.clip(codes, -(2 ** (fmt.total_bits - 1)), 2 ** (fmt.total_bits - 1) - 1)
    return codes.astype(np.int64), fmt.step


def quantize_values(
    values: np.ndarray,
    bits: int,
    spec: QuantSpec,
    range_: Range | None = None,
    fmt: FixedPointFormat | None = None,
) -> np.ndarray:
    """Scheme dispatch used by both weight and activation paths."""
    bits = _check_bits(bits)
    values = np.asarray(values, dtype=np.float64)
    if bits >= FULL_PRECISION_BITS:
        return np.array(values)
    if spec.scheme == DYNAMIC_FIXED_POINT:
        return fixed_point_quantize(values, bits, fmt)
    if range_ is None:
        range_ = compute_range(values, spec)
    return bucket_quantize(values, bits, range_)


def quantize_activations(
    values: np.ndarray, bits: int, calibrated: Range, spec: QuantSpec
) -> np.ndarray:
    """Clip to the calibrated range, then quantize.

    The clip uses the calibrated min/max; the quantization grid is the
    scheme's placement of that range (symmetric grids straddle zero even
    for one-sided activations).
    """
    bits = _check_bits(bits)
    values = np.asarray(values, dtype=np.float64)
    if bits >= FULL_PRECISION_BITS:
        return np.array(values)
    clipped = np.clip(values, calibrated.min, calibrated.max)
    if spec.scheme == DYNAMIC_FIXED_POINT:
        fmt = fixed_point_format(np.array([calibrated.min, calibrated.max]), bits)
        return fixed_point_quantize(clipped, bits, fmt)
    if spec.scheme == SYMMETRIC:
        m = calibrated.magnitude
        grid = Range(-m, m)
    else:
        grid = calibrated
    return bucket_quantize(clipped, bits, grid)


def quantize_place(
    model: ModelGraph,
    place: Place,
    bits: int,
    spec: QuantSpec,
    ranges: Mapping[Place, Range] | None = None,
) -> ModelGraph:
    """Quantize one place in a model copy; the original is untouched.

    Weight places get their kernel and bias snapped onto one shared grid
    computed from the layer's current values.  Activation places leave the
    weights alone (their rounding happens inside the forward pass, driven
    by the inference config) but a calibrated range must exist for them
    here.  32 bits is a no-op either way.  Removed taps (kept-mask False)
    stay exactly zero through quantization.
    """
    bits = _check_bits(bits)
    if place in ACTIVATION_PLACES:
        if bits < FULL_PRECISION_BITS and (ranges is None or place not in ranges):
            raise ValueError(f"activation place {place} needs a calibrated range")
        return model
    if bits >= FULL_PRECISION_BITS:
        return model
    name = place.value
    arrays = model.weights[name]
    flat = np.concatenate([a.ravel() for a in arrays])
    if spec.scheme == DYNAMIC_FIXED_POINT:
        fmt = fixed_point_format(flat, bits)
        new_arrays = tuple(fixed_point_quantize(a, bits, fmt) for a in arrays)
    else:
        grid = compute_range(flat, spec)
        new_arrays = tuple(bucket_quantize(a, bits, grid) for a in arrays)
    if name in model.conv_masks:
        mask = model.conv_masks[name]
        new_arrays = (np.where(mask, new_arrays[0], 0.0),) + new_arrays[1:]
    return model.with_weights(name, new_arrays)


def apply_assignment(
    model: ModelGraph,
    assignment: Mapping[Place, int],
    spec: QuantSpec,
    ranges: Mapping[Place, Range] | None = None,
    pruning_threshold: float = 0.0,
):
    """Fold quantize_place over all 8 places.

    Returns ``(model', config)``: the weight places are materialized into
    a new model, the activation places are recorded in an InferenceConfig
    for the forward pass.  Places are disjoint, so application order does
    not matter.
    """
    from .inference import InferenceConfig  # config lives with the forward pass

    validate_assignment(assignment)
    out = model
    for place in WEIGHT_PLACES:
        out = quantize_place(out, place, assignment[place], spec)
    for place in ACTIVATION_PLACES:
        out = quantize_place(out, place, assignment[place], spec, ranges)
    config = InferenceConfig(
        bit_assignment=dict(assignment),
        quant_scheme=spec,
        activation_ranges=dict(ranges) if ranges is not None else None,
        pruning_threshold=pruning_threshold,
    )
    return out, config
