"""The fixed two-branch text-CNN topology, its on-disk format, and the
eight precision places.

The graph is always: embedding -> {conv1d_1 (k=2), conv1d_2 (k=3)} in
parallel -> per-branch max-over-time pooling -> concat -> dense_1 ->
dense_2.  Only the layer widths vary between models; the wiring does not.
Weights live in memory as float64 arrays and on disk as a raw
little-endian float32 blob described by a JSON manifest.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ModelFormatError


class Place(str, enum.Enum):
    """The 8 sites whose numeric precision can be set independently.

    Five are stored layer weights and three are activation outputs
    (suffix ``_a``); the final classifier output has no activation site.
    """

    EMBEDDING = "embedding_1"
    CONV1 = "conv1d_1"
    CONV1_ACT = "conv1d_1_a"
    CONV2 = "conv1d_2"
    CONV2_ACT = "conv1d_2_a"
    DENSE1 = "dense_1"
    DENSE1_ACT = "dense_1_a"
    DENSE2 = "dense_2"

    def __str__(self) -> str:
        return self.value


WEIGHT_PLACES = (Place.EMBEDDING, Place.CONV1, Place.CONV2, Place.DENSE1, Place.DENSE2)
ACTIVATION_PLACES = (Place.CONV1_ACT, Place.CONV2_ACT, Place.DENSE1_ACT)
ALL_PLACES = tuple(Place)

FULL_PRECISION_BITS = 32


def layer_of(place: Place) -> str:
    """Layer name a place belongs to (activation places map to their layer)."""
    name = place.value
    return name[:-2] if name.endswith("_a") else name


def uniform_assignment(bits: int) -> dict[Place, int]:
    """Assignment with every place at the same precision."""
    return {p: bits for p in ALL_PLACES}


def validate_assignment(assignment: Mapping[Place, int]) -> None:
    missing = [p.value for p in ALL_PLACES if p not in assignment]
    if missing:
        raise ValueError(f"bit assignment missing places: {missing}")
    for place, bits in assignment.items():
        if not isinstance(bits, (int, np.integer)) or not 1 <= int(bits) <= 32:
            raise ValueError(f"{place}: bits must be an integer in [1, 32], got {bits!r}")


def assignment_to_json(assignment: Mapping[Place, int], scheme: str | None = None) -> str:
    payload: dict = {"bits": {p.value: int(assignment[p]) for p in ALL_PLACES}}
    if scheme is not None:
        payload["scheme"] = scheme
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def assignment_from_json(text: str) -> tuple[dict[Place, int], str | None]:
    payload = json.loads(text)
    bits = payload["bits"] if "bits" in payload else payload
    try:
        assignment = {Place(name): int(b) for name, b in bits.items()}
    except ValueError as exc:
        raise ValueError(f"unknown place in assignment: {exc}") from None
    validate_assignment(assignment)
    return assignment, payload.get("scheme") if isinstance(payload, dict) else None


@dataclass(frozen=True)
class EmbeddingSpec:
    name: str
    vocab_size: int
    dim: int
    kind: str = "embedding"


@dataclass(frozen=True)
class Conv1DSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int
    activation: str = "relu"
    kind: str = "conv1d"


@dataclass(frozen=True)
class DenseSpec:
    name: str
    in_features: int
    out_features: int
    activation: str = "relu"
    kind: str = "dense"


@dataclass(frozen=True)
class GlobalMaxPoolSpec:
    name: str
    source: str
    kind: str = "global_max_pool"


@dataclass(frozen=True)
class ConcatSpec:
    name: str
    inputs: tuple[str, ...]
    kind: str = "concat"


LayerSpec = EmbeddingSpec | Conv1DSpec | DenseSpec | GlobalMaxPoolSpec | ConcatSpec

LAYER_NAMES = ("embedding_1", "conv1d_1", "conv1d_2", "dense_1", "dense_2")


@dataclass(frozen=True)
class ModelGraph:
    """Immutable model: specs for the five weight-bearing layers plus their
    weight tensors.  Transformations (quantize, prune) return new graphs.

    ``weights`` maps layer name to a tuple of arrays: ``(matrix,)`` for the
    embedding, ``(kernel, bias)`` for convolutions and dense layers.  Conv
    kernels have shape [in_channels, out_channels, kernel_size].
    ``conv_masks`` holds optional kept-masks (False = removed by pruning);
    a missing entry means every tap is kept.
    """

    embedding: EmbeddingSpec
    conv1: Conv1DSpec
    conv2: Conv1DSpec
    dense1: DenseSpec
    dense2: DenseSpec
    weights: Mapping[str, tuple[np.ndarray, ...]]
    num_classes: int
    max_length: int
    pool: str = "max"
    conv_masks: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        return (self.embedding, self.conv1, self.conv2, self.dense1, self.dense2)

    @property
    def layer_sequence(self) -> tuple[LayerSpec, ...]:
        """Execution order including the implicit pooling/concat stages."""
        seq: list[LayerSpec] = [self.embedding, self.conv1, self.conv2]
        if self.pool == "max":
            seq.append(GlobalMaxPoolSpec("pool_1", source="conv1d_1"))
            seq.append(GlobalMaxPoolSpec("pool_2", source="conv1d_2"))
        seq.append(ConcatSpec("concat", inputs=("conv1d_1", "conv1d_2")))
        seq.extend([self.dense1, self.dense2])
        return tuple(seq)

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def kept_mask(self, name: str) -> np.ndarray:
        """Boolean kept-mask for a conv layer (all True when never pruned)."""
        if name in self.conv_masks:
            return self.conv_masks[name]
        return np.ones_like(self.weights[name][0], dtype=bool)

    def with_weights(self, name: str, arrays: tuple[np.ndarray, ...]) -> "ModelGraph":
        new_weights = dict(self.weights)
        new_weights[name] = arrays
        return replace(self, weights=new_weights)

    def with_mask(self, name: str, mask: np.ndarray) -> "ModelGraph":
        new_masks = dict(self.conv_masks)
        new_masks[name] = mask
        return replace(self, conv_masks=new_masks)


def build_model(
    vocab_size: int,
    dim: int,
    num_classes: int,
    max_length: int,
    conv_filters: tuple[int, int] = (128, 128),
    kernel_sizes: tuple[int, int] = (2, 3),
    dense_units: int = 128,
    pool: str = "max",
    weights: Mapping[str, tuple[np.ndarray, ...]] | None = None,
) -> ModelGraph:
    """Assemble a graph with the fixed topology; zero weights by default."""
    out1, out2 = conv_filters
    k1, k2 = kernel_sizes
    if pool == "max":
        dense_in = out1 + out2
    else:
        dense_in = out1 * (max_length - k1 + 1) + out2 * (max_length - k2 + 1)
    n_out = 1 if num_classes == 2 else num_classes
    model = ModelGraph(
        embedding=EmbeddingSpec("embedding_1", vocab_size, dim),
        conv1=Conv1DSpec("conv1d_1", dim, out1, k1),
        conv2=Conv1DSpec("conv1d_2", dim, out2, k2),
        dense1=DenseSpec("dense_1", dense_in, dense_units, "relu"),
        dense2=DenseSpec(
            "dense_2", dense_units, n_out, "sigmoid" if num_classes == 2 else "softmax"
        ),
        weights=weights if weights is not None else _zero_weights(
            vocab_size, dim, conv_filters, kernel_sizes, dense_in, dense_units, n_out
        ),
        num_classes=num_classes,
        max_length=max_length,
        pool=pool,
    )
    validate_model(model)
    return model


def _zero_weights(vocab_size, dim, conv_filters, kernel_sizes, dense_in, dense_units, n_out):
    out1, out2 = conv_filters
    k1, k2 = kernel_sizes
    return {
        "embedding_1": (np.zeros((vocab_size, dim)),),
        "conv1d_1": (np.zeros((dim, out1, k1)), np.zeros(out1)),
        "conv1d_2": (np.zeros((dim, out2, k2)), np.zeros(out2)),
        "dense_1": (np.zeros((dense_in, dense_units)), np.zeros(dense_units)),
        "dense_2": (np.zeros((dense_units, n_out)), np.zeros(n_out)),
    }


def _expected_shapes(model: ModelGraph) -> dict[str, tuple[tuple[int, ...], ...]]:
    e, c1, c2, d1, d2 = model.layers
    return {
        e.name: ((e.vocab_size, e.dim),),
        c1.name: ((c1.in_channels, c1.out_channels, c1.kernel_size), (c1.out_channels,)),
        c2.name: ((c2.in_channels, c2.out_channels, c2.kernel_size), (c2.out_channels,)),
        d1.name: ((d1.in_features, d1.out_features), (d1.out_features,)),
        d2.name: ((d2.in_features, d2.out_features), (d2.out_features,)),
    }


def validate_model(model: ModelGraph) -> None:
    """Check topology arities, weight shapes, and finiteness; raise
    ModelFormatError on any violation."""
    names = tuple(spec.name for spec in model.layers)
    if names != LAYER_NAMES:
        raise ModelFormatError(f"layer names must be {LAYER_NAMES}, got {names}")
    if model.num_classes < 2:
        raise ModelFormatError("num_classes must be >= 2")
    if model.max_length < max(model.conv1.kernel_size, model.conv2.kernel_size):
        raise ModelFormatError("max_length shorter than the largest kernel")
    if model.pool not in ("max", "none"):
        raise ModelFormatError(f"pool must be 'max' or 'none', got {model.pool!r}")

    if model.conv1.in_channels != model.embedding.dim or model.conv2.in_channels != model.embedding.dim:
        raise ModelFormatError("conv in_channels must equal embedding dim")
    if model.pool == "max":
        expected_in = model.conv1.out_channels + model.conv2.out_channels
    else:
        expected_in = model.conv1.out_channels * (model.max_length - model.conv1.kernel_size + 1) \
            + model.conv2.out_channels * (model.max_length - model.conv2.kernel_size + 1)
    if model.dense1.in_features != expected_in:
        raise ModelFormatError(
            f"dense_1 in_features {model.dense1.in_features} incompatible with conv outputs ({expected_in})"
        )
    if model.dense2.in_features != model.dense1.out_features:
        raise ModelFormatError("dense_2 in_features must equal dense_1 out_features")
    expected_out = 1 if model.num_classes == 2 else model.num_classes
    if model.dense2.out_features != expected_out:
        raise ModelFormatError(
            f"dense_2 out_features must be {expected_out} for {model.num_classes} classes"
        )
    expected_act = "sigmoid" if model.num_classes == 2 else "softmax"
    if model.dense2.activation != expected_act:
        raise ModelFormatError(f"dense_2 activation must be {expected_act}")

    shapes = _expected_shapes(model)
    for name, expected in shapes.items():
        if name not in model.weights:
            raise ModelFormatError(f"missing weights for layer {name!r}")
        arrays = model.weights[name]
        if len(arrays) != len(expected):
            raise ModelFormatError(f"{name}: expected {len(expected)} tensors, got {len(arrays)}")
        for arr, shape in zip(arrays, expected):
            if any(d < 1 for d in shape) or 0 in arr.shape:
                raise ModelFormatError(f"{name}: zero-size tensor rejected")
            if tuple(arr.shape) != shape:
                raise ModelFormatError(f"{name}: shape {tuple(arr.shape)} != expected {shape}")
            if not np.isfinite(arr).all():
                raise ModelFormatError(f"{name}: non-finite weight values")
    for name, mask in model.conv_masks.items():
        if name not in ("conv1d_1", "conv1d_2"):
            raise ModelFormatError(f"kept-mask on non-conv layer {name!r}")
        if mask.shape != model.weights[name][0].shape:
            raise ModelFormatError(f"{name}: kept-mask shape mismatch")


def parameter_counts(model: ModelGraph) -> dict[str, int]:
    """Per-layer parameter counts, biases included."""
    return {
        name: int(sum(arr.size for arr in arrays))
        for name, arrays in ((n, model.weights[n]) for n in LAYER_NAMES)
    }


def _manifest_dict(model: ModelGraph, weights_file: str) -> dict:
    layers = []
    for spec in model.layers:
        if isinstance(spec, EmbeddingSpec):
            params = {"vocab_size": spec.vocab_size, "dim": spec.dim}
        elif isinstance(spec, Conv1DSpec):
            params = {
                "in_channels": spec.in_channels,
                "out_channels": spec.out_channels,
                "kernel_size": spec.kernel_size,
                "activation": spec.activation,
            }
        else:
            params = {
                "in_features": spec.in_features,
                "out_features": spec.out_features,
                "activation": spec.activation,
            }
        layers.append({"name": spec.name, "kind": spec.kind, "params": params})
    return {
        "layers": layers,
        "num_classes": model.num_classes,
        "max_length": model.max_length,
        "weights_file": weights_file,
        "pool": model.pool,
    }


def save_model(model: ModelGraph, manifest_path: str | Path, force: bool = False) -> None:
    """Write manifest JSON plus a float32 little-endian weight blob.

    The blob is the layers' tensors flattened row-major in manifest order,
    kernel before bias.  Refuses to overwrite unless ``force`` is set.
    """
    validate_model(model)
    manifest_path = Path(manifest_path)
    blob_name = manifest_path.stem + "_weights.bin"
    blob_path = manifest_path.parent / blob_name
    for target in (manifest_path, blob_path):
        if target.exists() and not force:
            raise ModelFormatError(f"{target} exists; pass force=True to overwrite")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    parts = []
    for name in LAYER_NAMES:
        for arr in model.weights[name]:
            parts.append(np.ascontiguousarray(arr, dtype="<f4").ravel())
    blob_path.write_bytes(np.concatenate(parts).tobytes())
    manifest_path.write_text(json.dumps(_manifest_dict(model, blob_name), indent=2) + "\n")


def _spec_from_entry(entry: dict) -> LayerSpec:
    kind = entry.get("kind")
    name = entry.get("name")
    params = entry.get("params", {})
    try:
        if kind == "embedding":
            return EmbeddingSpec(name, int(params["vocab_size"]), int(params["dim"]))
        if kind == "conv1d":
            return Conv1DSpec(
                name,
                int(params["in_channels"]),
                int(params["out_channels"]),
                int(params["kernel_size"]),
                params.get("activation", "relu"),
            )
        if kind == "dense":
            return DenseSpec(
                name,
                int(params["in_features"]),
                int(params["out_features"]),
                params.get("activation", "relu"),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"layer {name!r}: bad params ({exc})") from None
    raise ModelFormatError(f"unknown layer kind {kind!r} for layer {name!r}")


def load_model(manifest_path: str | Path) -> ModelGraph:
    """Load a manifest + blob pair; weights come back bit-exact as float64
    upcasts of the stored float32 values."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read manifest {manifest_path}: {exc}") from None

    specs = [_spec_from_entry(e) for e in manifest.get("layers", [])]
    by_name = {s.name: s for s in specs}
    if tuple(s.name for s in specs) != LAYER_NAMES:
        raise ModelFormatError(
            f"manifest must list layers {LAYER_NAMES} in order, got {tuple(s.name for s in specs)}"
        )

    blob_path = manifest_path.parent / manifest["weights_file"]
    try:
        blob = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    except OSError as exc:
        raise ModelFormatError(f"cannot read weight blob: {exc}") from None

    model = ModelGraph(
        embedding=by_name["embedding_1"],
        conv1=by_name["conv1d_1"],
        conv2=by_name["conv1d_2"],
        dense1=by_name["dense_1"],
        dense2=by_name["dense_2"],
        weights={},
        num_classes=int(manifest["num_classes"]),
        max_length=int(manifest["max_length"]),
        pool=manifest.get("pool", "max"),
    )
    weights: dict[str, tuple[np.ndarray, ...]] = {}
    offset = 0
    for name, shapes in _expected_shapes(model).items():
        arrays = []
        for shape in shapes:
            size = int(np.prod(shape))
            if offset + size > blob.size:
                raise ModelFormatError(
                    f"weight blob ends inside layer {name!r}: "
                    f"need {size} floats at offset {offset}, blob has {blob.size}"
                )
            arrays.append(blob[offset : offset + size].astype(np.float64).reshape(shape))
            offset += size
        weights[name] = tuple(arrays)
    if offset != blob.size:
        raise ModelFormatError(f"weight blob has {blob.size - offset} unused trailing floats")

    model = replace(model, weights=weights)
    validate_model(model)
    return model
