"""Standalone C-syntax emission of the quantized, pruned network.

One header per weight layer carries its constant arrays (float values, or
integer codes plus a scale constant in fixed-point mode) and, for the
convolutions, a function whose channel loops are fully unrolled with the
weights hard-coded as literals.  Taps removed by pruning are absent from
the emitted source.  ``infer.c`` chains the layers after the embedding
lookup, which stays on the host: the generated entry point takes the
already-embedded input matrix.

The emitted arithmetic is plain float math over the baked (dequantized)
weight values; activation rounding is not re-simulated in C, only its
scale constants are exported for downstream datapath sizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import CodegenError
from .model import (
    FULL_PRECISION_BITS,
    Conv1DSpec,
    DenseSpec,
    ModelGraph,
    Place,
    WEIGHT_PLACES,
)
from .quantization import (
    DYNAMIC_FIXED_POINT,
    QuantSpec,
    bucket_codes,
    bucket_quantize,
    compute_range,
    fixed_point_codes,
    fixed_point_format,
    fixed_point_quantize,
)

GENERATED_NOTE = "/* Generated by quantprune. */"

LAYER_FILES = (
    "conv1d_1_weights.h",
    "conv1d_2_weights.h",
    "dense_1_weights.h",
    "dense_2_weights.h",
)


@dataclass(frozen=True)
class EmitConfig:
    """What to bake into the emitted source."""

    bits: Mapping[Place, int] | None = None  # None = every place at 32
    quant_scheme: QuantSpec = field(default_factory=QuantSpec)
    pruning_threshold: float = 0.0
    unroll: bool = True
    fixed_point: bool = False
    pragmas: tuple[str, ...] = ()  # opaque lines injected into conv loops

    def __post_init__(self):
        if self.pruning_threshold < 0:
            raise ValueError("pruning_threshold must be >= 0")
        if self.bits is not None:
            for place, b in self.bits.items():
                if not 1 <= int(b) <= 32:
                    raise ValueError(f"{place}: bits must be in [1, 32]")

    def place_bits(self, place: Place) -> int:
        if self.bits is None:
            return FULL_PRECISION_BITS
        return int(self.bits.get(place, FULL_PRECISION_BITS))


def _float_literal(value: float) -> str:
    """Single-precision literal; %.9g round-trips every float32."""
    v = float(np.float32(value))
    text = f"{v:.9g}"
    if not any(ch in text for ch in ".e"):
        text += ".0"
    return text + "f"


@dataclass(frozen=True)
class _Prepared:
    """One layer's emission-ready tensors and constants."""

    name: str
    macro: str
    kernel: np.ndarray  # dequantized values (pruned taps zeroed)
    bias: np.ndarray
    kept: np.ndarray | None  # conv tap mask after threshold; None for dense
    fixed: bool
    kernel_codes: np.ndarray | None = None
    bias_codes: np.ndarray | None = None
    scale: float = 0.0
    zero_point: float = 0.0


def _prepare(model: ModelGraph, name: str, config: EmitConfig) -> _Prepared:
    place = Place(name)
    bits = config.place_bits(place)
    arrays = model.weights[name]
    kernel, bias = arrays
    flat = np.concatenate([kernel.ravel(), bias.ravel()])
    spec = config.quant_scheme
    fixed = config.fixed_point and bits < FULL_PRECISION_BITS

    kernel_codes = bias_codes = None
    scale = 0.0
    zero_point = 0.0
    if bits < FULL_PRECISION_BITS:
        if spec.scheme == DYNAMIC_FIXED_POINT:
            fmt = fixed_point_format(flat, bits)
            q_kernel = fixed_point_quantize(kernel, bits, fmt)
            q_bias = fixed_point_quantize(bias, bits, fmt)
            if fixed:
                kernel_codes, scale = fixed_point_codes(kernel, fmt)
                bias_codes, _ = fixed_point_codes(bias, fmt)
        else:
            grid = compute_range(flat, spec)
            q_kernel = bucket_quantize(kernel, bits, grid)
            q_bias = bucket_quantize(bias, bits, grid)
            if fixed:
                kernel_codes, scale, zero_point = bucket_codes(kernel, bits, grid)
                bias_codes, _, _ = bucket_codes(bias, bits, grid)
    else:
        q_kernel, q_bias = np.array(kernel), np.array(bias)

    kept = None
    if isinstance(model.layer(name), Conv1DSpec):
        base = model.kept_mask(name)
        q_kernel = np.where(base, q_kernel, 0.0)
        kept = base & (np.abs(q_kernel) >= config.pruning_threshold)
        if kernel_codes is not None:
            kernel_codes = np.where(base, kernel_codes, 0)

    return _Prepared(
        name=name,
        macro=name.upper(),
        kernel=q_kernel,
        bias=q_bias,
        kept=kept,
        fixed=fixed,
        kernel_codes=kernel_codes,
        bias_codes=bias_codes,
        scale=scale,
        zero_point=zero_point,
    )


def _tap_coefficient(prep: _Prepared, i: int, o: int, t: int) -> str:
    if not prep.fixed:
        return _float_literal(prep.kernel[i, o, t])
    code = int(prep.kernel_codes[i, o, t])
    if prep.zero_point != 0.0:
        return f"({prep.macro}_ZERO_POINT + ({code}) * {prep.macro}_SCALE)"
    return f"(({code}) * {prep.macro}_SCALE)"


def _bias_expr(prep: _Prepared, index: str) -> str:
    if not prep.fixed:
        return f"{prep.name}_bias[{index}]"
    if prep.zero_point != 0.0:
        return f"({prep.macro}_ZERO_POINT + {prep.name}_bias_codes[{index}] * {prep.macro}_SCALE)"
    return f"({prep.name}_bias_codes[{index}] * {prep.macro}_SCALE)"


def _weight_cell(prep: _Prepared, pythonic_index: tuple) -> str:
    if not prep.fixed:
        return _float_literal(prep.kernel[pythonic_index])
    return str(int(prep.kernel_codes[pythonic_index]))


def _scale_macros(prep: _Prepared) -> list[str]:
    lines = []
    if prep.fixed:
        lines.append(f"#define {prep.macro}_SCALE {_float_literal(prep.scale)}")
        if prep.zero_point != 0.0:
            lines.append(f"#define {prep.macro}_ZERO_POINT {_float_literal(prep.zero_point)}")
    return lines


def _conv_arrays(prep: _Prepared, spec: Conv1DSpec) -> list[str]:
    m = prep.macro
    ctype = "int" if prep.fixed else "float"
    array_name = f"{prep.name}_weight_codes" if prep.fixed else f"{prep.name}_weights"
    lines = [
        f"static const {ctype} {array_name}[{m}_IN_CH][{m}_OUT_CH][{m}_KERNEL] = {{",
    ]
    for i in range(spec.in_channels):
        rows = []
        for o in range(spec.out_channels):
            taps = ", ".join(_weight_cell(prep, (i, o, t)) for t in range(spec.kernel_size))
            rows.append("{" + taps + "}")
        lines.append("    {" + ", ".join(rows) + ("}," if i < spec.in_channels - 1 else "}"))
    lines.append("};")
    lines.append("")
    if prep.fixed:
        bias_vals = ", ".join(str(int(c)) for c in prep.bias_codes)
        lines.append(f"static const int {prep.name}_bias_codes[{m}_OUT_CH] = {{{bias_vals}}};")
    else:
        bias_vals = ", ".join(_float_literal(v) for v in prep.bias)
        lines.append(f"static const float {prep.name}_bias[{m}_OUT_CH] = {{{bias_vals}}};")
    return lines


def _conv_function(prep: _Prepared, spec: Conv1DSpec, config: EmitConfig) -> list[str]:
    m = prep.macro
    lines = [
        f"static void {prep.name}_forward(const float in[{m}_IN_LEN][{m}_IN_CH],",
        f"{' ' * (len(prep.name) + 21)}float out[{m}_OUT_LEN][{m}_OUT_CH])",
        "{",
        f"    for (int s = 0; s < {m}_OUT_LEN; ++s) {{",
    ]
    for pragma in config.pragmas:
        lines.append(f"        {pragma}")
    if config.unroll:
        for o in range(spec.out_channels):
            terms = [
                f"in[s + {t}][{i}] * {_tap_coefficient(prep, i, o, t)}"
                for i in range(spec.in_channels)
                for t in range(spec.kernel_size)
                if prep.kept[i, o, t]
            ]
            terms.append(_bias_expr(prep, str(o)))
            lines.append(f"        out[s][{o}] = {terms[0]}")
            for term in terms[1:-1]:
                lines.append(f"                  + {term}")
            if len(terms) > 1:
                lines[-1] = lines[-1] if len(terms) == 1 else lines[-1]
                lines.append(f"                  + {terms[-1]};")
            else:
                lines[-1] += ";"
    else:
        weight = f"{prep.name}_weight_codes" if prep.fixed else f"{prep.name}_weights"
        cell = f"(float){weight}[i][o][t] * {m}_SCALE" if prep.fixed else f"{weight}[i][o][t]"
        if prep.fixed and prep.zero_point != 0.0:
            cell = f"({m}_ZERO_POINT + (float){weight}[i][o][t] * {m}_SCALE)"
        lines.extend(
            [
                f"        for (int o = 0; o < {m}_OUT_CH; ++o) {{",
                "            float acc = 0.0f;",
                f"            for (int i = 0; i < {m}_IN_CH; ++i) {{",
                f"                for (int t = 0; t < {m}_KERNEL; ++t) {{",
                f"                    acc += in[s + t][i] * {cell};",
                "                }",
                "            }",
                f"            out[s][o] = acc + {_bias_expr(prep, 'o')};",
                "        }",
            ]
        )
    lines.extend(["    }", "}"])
    return lines


def emit_layer(model: ModelGraph, layer_name: str, config: EmitConfig) -> str:
    """One self-contained header for a conv or dense layer.

    Deterministic text; raises CodegenError for the embedding (it stays on
    the host) and for non-weight stages.
    """
    if layer_name == "embedding_1":
        raise CodegenError("embedding_1 is not emitted; the lookup stays on the host")
    try:
        spec = model.layer(layer_name)
    except KeyError:
        raise CodegenError(f"unknown layer {layer_name!r}") from None
    if not isinstance(spec, (Conv1DSpec, DenseSpec)):
        raise CodegenError(f"layer kind {spec.kind!r} has no emitted form")

    prep = _prepare(model, layer_name, config)
    m = prep.macro
    guard = f"QP_{m}_WEIGHTS_H"
    lines = [GENERATED_NOTE, f"#ifndef {guard}", f"#define {guard}", ""]

    if isinstance(spec, Conv1DSpec):
        kept_count = int(prep.kept.sum())
        lines.append(
            f"/* {layer_name}: {spec.in_channels} -> {spec.out_channels} channels, "
            f"kernel {spec.kernel_size}, {kept_count} of {prep.kernel.size} taps kept */"
        )
        lines.extend(
            [
                f"#define {m}_IN_CH {spec.in_channels}",
                f"#define {m}_OUT_CH {spec.out_channels}",
                f"#define {m}_KERNEL {spec.kernel_size}",
                f"#define {m}_IN_LEN {model.max_length}",
                f"#define {m}_OUT_LEN {model.max_length - spec.kernel_size + 1}",
            ]
        )
        lines.extend(_scale_macros(prep))
        lines.append("")
        lines.extend(_conv_arrays(prep, spec))
        lines.append("")
        lines.extend(_conv_function(prep, spec, config))
    else:
        lines.append(f"/* {layer_name}: {spec.in_features} -> {spec.out_features} */")
        lines.extend(
            [
                f"#define {m}_IN {spec.in_features}",
                f"#define {m}_OUT {spec.out_features}",
            ]
        )
        lines.extend(_scale_macros(prep))
        lines.append("")
        ctype = "int" if prep.fixed else "float"
        array_name = f"{prep.name}_weight_codes" if prep.fixed else f"{prep.name}_weights"
        lines.append(f"static const {ctype} {array_name}[{m}_IN][{m}_OUT] = {{")
        for i in range(spec.in_features):
            row = ", ".join(_weight_cell(prep, (i, o)) for o in range(spec.out_features))
            comma = "," if i < spec.in_features - 1 else ""
            lines.append("    {" + row + "}" + comma)
        lines.append("};")
        lines.append("")
        if prep.fixed:
            bias_vals = ", ".join(str(int(c)) for c in prep.bias_codes)
            lines.append(f"static const int {prep.name}_bias_codes[{m}_OUT] = {{{bias_vals}}};")
        else:
            bias_vals = ", ".join(_float_literal(v) for v in prep.bias)
            lines.append(f"static const float {prep.name}_bias[{m}_OUT] = {{{bias_vals}}};")

    lines.extend(["", f"#endif /* {guard} */", ""])
    return "\n".join(lines)


def emit_infer_header(model: ModelGraph) -> str:
    n_out = model.dense2.out_features
    lines = [
        GENERATED_NOTE,
        "#ifndef QP_INFER_H",
        "#define QP_INFER_H",
        "",
        f"#define INFER_INPUT_LEN {model.max_length}",
        f"#define INFER_INPUT_DIM {model.embedding.dim}",
        f"#define INFER_NUM_OUTPUTS {n_out}",
        "",
        "void infer(const float input[INFER_INPUT_LEN][INFER_INPUT_DIM],",
        "           float output[INFER_NUM_OUTPUTS]);",
        "",
        "#endif /* QP_INFER_H */",
        "",
    ]
    return "\n".join(lines)


def _dense_weight_expr(model: ModelGraph, name: str, config: EmitConfig, idx: str) -> str:
    place = Place(name)
    fixed = config.fixed_point and config.place_bits(place) < FULL_PRECISION_BITS
    macro = name.upper()
    if not fixed:
        return f"{name}_weights{idx}"
    prep_zero = _prepare(model, name, config).zero_point
    if prep_zero != 0.0:
        return f"({macro}_ZERO_POINT + (float){name}_weight_codes{idx} * {macro}_SCALE)"
    return f"((float){name}_weight_codes{idx} * {macro}_SCALE)"


def _dense_bias_expr(model: ModelGraph, name: str, config: EmitConfig, idx: str) -> str:
    place = Place(name)
    fixed = config.fixed_point and config.place_bits(place) < FULL_PRECISION_BITS
    macro = name.upper()
    if not fixed:
        return f"{name}_bias[{idx}]"
    prep_zero = _prepare(model, name, config).zero_point
    if prep_zero != 0.0:
        return f"({macro}_ZERO_POINT + (float){name}_bias_codes[{idx}] * {macro}_SCALE)"
    return f"((float){name}_bias_codes[{idx}] * {macro}_SCALE)"


def emit_infer(model: ModelGraph, config: EmitConfig) -> str:
    """The top-level function chaining the emitted layers post-embedding."""
    lines = [
        GENERATED_NOTE,
        '#include "infer.h"',
        "",
        "#include <math.h>",
        "",
        '#include "conv1d_1_weights.h"',
        '#include "conv1d_2_weights.h"',
        '#include "dense_1_weights.h"',
        '#include "dense_2_weights.h"',
        "",
        "static float relu(float x) { return x > 0.0f ? x : 0.0f; }",
        "",
        "void infer(const float input[INFER_INPUT_LEN][INFER_INPUT_DIM],",
        "           float output[INFER_NUM_OUTPUTS])",
        "{",
        "    float conv1_out[CONV1D_1_OUT_LEN][CONV1D_1_OUT_CH];",
        "    float conv2_out[CONV1D_2_OUT_LEN][CONV1D_2_OUT_CH];",
        "    float features[DENSE_1_IN];",
        "    float hidden[DENSE_1_OUT];",
        "",
        "    conv1d_1_forward(input, conv1_out);",
        "    conv1d_2_forward(input, conv2_out);",
        "",
    ]
    if model.pool == "max":
        for branch, offset in (("conv1", "0"), ("conv2", "CONV1D_1_OUT_CH")):
            m = f"CONV1D_{branch[-1]}"
            lines.extend(
                [
                    f"    for (int o = 0; o < {m}_OUT_CH; ++o) {{",
                    f"        float best = relu({branch}_out[0][o]);",
                    f"        for (int s = 1; s < {m}_OUT_LEN; ++s) {{",
                    f"            float v = relu({branch}_out[s][o]);",
                    "            if (v > best) {",
                    "                best = v;",
                    "            }",
                    "        }",
                    f"        features[{offset} + o] = best;"
                    if offset != "0"
                    else "        features[o] = best;",
                    "    }",
                ]
            )
    else:
        lines.extend(
            [
                "    for (int s = 0; s < CONV1D_1_OUT_LEN; ++s) {",
                "        for (int o = 0; o < CONV1D_1_OUT_CH; ++o) {",
                "            features[s * CONV1D_1_OUT_CH + o] = relu(conv1_out[s][o]);",
                "        }",
                "    }",
                "    for (int s = 0; s < CONV1D_2_OUT_LEN; ++s) {",
                "        for (int o = 0; o < CONV1D_2_OUT_CH; ++o) {",
                "            features[CONV1D_1_OUT_LEN * CONV1D_1_OUT_CH"
                " + s * CONV1D_2_OUT_CH + o] = relu(conv2_out[s][o]);",
                "        }",
                "    }",
            ]
        )
    w1 = _dense_weight_expr(model, "dense_1", config, "[i][o]")
    b1 = _dense_bias_expr(model, "dense_1", config, "o")
    w2 = _dense_weight_expr(model, "dense_2", config, "[i][c]")
    b2 = _dense_bias_expr(model, "dense_2", config, "c")
    lines.extend(
        [
            "",
            "    for (int o = 0; o < DENSE_1_OUT; ++o) {",
            "        float acc = 0.0f;",
            "        for (int i = 0; i < DENSE_1_IN; ++i) {",
            f"            acc += features[i] * {w1};",
            "        }",
            f"        hidden[o] = relu(acc + {b1});",
            "    }",
            "",
            "    for (int c = 0; c < DENSE_2_OUT; ++c) {",
            "        float acc = 0.0f;",
            "        for (int i = 0; i < DENSE_2_IN; ++i) {",
            f"            acc += hidden[i] * {w2};",
            "        }",
            f"        output[c] = acc + {b2};",
            "    }",
            "",
        ]
    )
    if model.dense2.activation == "sigmoid":
        lines.append("    output[0] = 1.0f / (1.0f + expf(-output[0]));")
    else:
        lines.extend(
            [
                "    float max_logit = output[0];",
                "    for (int c = 1; c < DENSE_2_OUT; ++c) {",
                "        if (output[c] > max_logit) {",
                "            max_logit = output[c];",
                "        }",
                "    }",
                "    float denom = 0.0f;",
                "    for (int c = 0; c < DENSE_2_OUT; ++c) {",
                "        output[c] = expf(output[c] - max_logit);",
                "        denom += output[c];",
                "    }",
                "    for (int c = 0; c < DENSE_2_OUT; ++c) {",
                "        output[c] /= denom;",
                "    }",
            ]
        )
    lines.extend(["}", ""])
    return "\n".join(lines)


def emit_all(model: ModelGraph, config: EmitConfig) -> dict[str, str]:
    """Every generated file, keyed by its canonical file name."""
    files = {}
    for name in ("conv1d_1", "conv1d_2", "dense_1", "dense_2"):
        files[f"{name}_weights.h"] = emit_layer(model, name, config)
    files["infer.h"] = emit_infer_header(model)
    files["infer.c"] = emit_infer(model, config)
    return files
