"""ST-LSTM and ST-LSTM++ recurrent units.

Both cells are pure functions of their inputs and a :class:`ParameterSet`.
Kernels are stored one tensor per gate; at run time the kernels that read
the same input are concatenated so each input is convolved once.

Parameter names (per layer prefix ``l{n}.``)::

    x_g x_i x_f x_o         input -> temporal gates / output gate
    h_g h_i h_f h_o         H(t-1) -> temporal gates / output gate
    xm_g xm_i xm_f          input -> spatiotemporal gates (primed)
    m_g m_i m_f m_o         zigzag memory M -> primed gates / output gate
    c_o                     temporal memory C(t) -> output gate
    fuse                    1x1 kernel over [C, M] (or [C, M, M'])

ST-LSTM++ adds the second-order set::

    h2_g h2_i h2_f h2_o     H(t-2) -> temporal gates / output gate
    m2_g m2_i m2_f m2_o     second-order zigzag memory M' -> double-primed gates / output
    xm2_g xm2_i xm2_f       only when the input kernels are not shared
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ContractError,
    ParameterSet,
    ShapeError,
    Tensor,
    concat,
    conv2d,
    mul,
    sigmoid,
    split_channels,
    tanh,
)

ST_LSTM = "st_lstm"
ST_LSTM_PP = "st_lstm_pp"

FIRST_ORDER_KERNELS = (
    "x_g", "x_i", "x_f", "x_o",
    "h_g", "h_i", "h_f", "h_o",
    "xm_g", "xm_i", "xm_f",
    "m_g", "m_i", "m_f", "m_o",
    "c_o",
)
SECOND_ORDER_KERNELS = (
    "h2_g", "h2_i", "h2_f", "h2_o",
    "m2_g", "m2_i", "m2_f", "m2_o",
)
UNSHARED_INPUT_KERNELS = ("xm2_g", "xm2_i", "xm2_f")
BIAS_NAMES = ("b_g", "b_i", "b_f", "b_gm", "b_im", "b_fm", "b_o")
SECOND_ORDER_BIASES = ("b_gm2", "b_im2", "b_fm2")


@dataclass
class CellInputs:
    x: Tensor
    h1: Tensor
    c_prev: Tensor
    m_in: Tensor
    h2: Tensor | None = None
    m2_in: Tensor | None = None


@dataclass
class CellOutputs:
    h: Tensor
    c: Tensor
    m: Tensor
    delta_c: Tensor
    delta_m: Tensor
    m2: Tensor | None = None
    delta_m2: Tensor | None = None
    gates: dict[str, Tensor] = field(default_factory=dict)


def kernel_shapes(kind: str, in_channels: int, hidden: int, kernel_size: int = 3,
                  share_input_kernels: bool = True, bias: bool = False) -> dict[str, tuple[int, ...]]:
    """Shapes of every parameter one cell of ``kind`` owns, in canonical order."""
    k = kernel_size
    shapes: dict[str, tuple[int, ...]] = {}
    for name in FIRST_ORDER_KERNELS:
        src = in_channels if name.startswith("x") else hidden
        shapes[name] = (hidden, src, k, k)
    if kind == ST_LSTM_PP:
        for name in SECOND_ORDER_KERNELS:
            shapes[name] = (hidden, hidden, k, k)
        if not share_input_kernels:
            for name in UNSHARED_INPUT_KERNELS:
                shapes[name] = (hidden, in_channels, k, k)
        shapes["fuse"] = (hidden, 3 * hidden, 1, 1)
    elif kind == ST_LSTM:
        shapes["fuse"] = (hidden, 2 * hidden, 1, 1)
    else:
        raise ContractError(f"unknown cell kind {kind!r}")
    if bias:
        names = BIAS_NAMES + (SECOND_ORDER_BIASES if kind == ST_LSTM_PP else ())
        for name in names:
            shapes[name] = (1, hidden, 1, 1)
    return shapes


def init_cell_params(params: ParameterSet, prefix: str, kind: str, in_channels: int, hidden: int,
                     rng: np.random.Generator, kernel_size: int = 3, share_input_kernels: bool = True,
                     bias: bool = False, dtype=np.float32) -> None:
    """Add one cell's kernels to ``params``, uniform in +-1/sqrt(fan_in); biases start at zero."""
    for name, shape in kernel_shapes(kind, in_channels, hidden, kernel_size, share_input_kernels, bias).items():
        if name.startswith("b_"):
            arr = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1] * shape[2] * shape[3])
            arr = rng.uniform(-bound, bound, size=shape)
        params[prefix + name] = Tensor(arr.astype(dtype), requires_grad=True)


def _kernels(params: ParameterSet, prefix: str, names) -> Tensor:
    return concat([params[prefix + n] for n in names], axis=0)


def _maybe_bias(params: ParameterSet, prefix: str, name: str, z: Tensor) -> Tensor:
    key = prefix + name
    return z + params[key] if key in params else z


def _check_state_shapes(inputs: CellInputs, hidden: int) -> None:
    x = inputs.x
    b, _, h, w = x.shape
    expected = (b, hidden, h, w)
    for label in ("h1", "c_prev", "m_in", "h2", "m2_in"):
        t = getattr(inputs, label)
        if t is not None and t.shape != expected:
            raise ShapeError(f"{label} has shape {t.shape}, expected {expected}")


def st_lstm_forward(inputs: CellInputs, params: ParameterSet, prefix: str = "") -> CellOutputs:
    """Baseline ST-LSTM step. ``h2``/``m2_in`` are ignored."""
    hidden = params[prefix + "fuse"].shape[0]
    _check_state_shapes(inputs, hidden)
    x, h1, c_prev, m_in = inputs.x, inputs.h1, inputs.c_prev, inputs.m_in

    xg, xi, xf, xgm, xim, xfm, xo = split_channels(
        conv2d(x, _kernels(params, prefix, ("x_g", "x_i", "x_f", "xm_g", "xm_i", "xm_f", "x_o"))),
        [hidden] * 7)
    hg, hi, hf, ho = split_channels(
        conv2d(h1, _kernels(params, prefix, ("h_g", "h_i", "h_f", "h_o"))), [hidden] * 4)
    mg, mi, mf = split_channels(
        conv2d(m_in, _kernels(params, prefix, ("m_g", "m_i", "m_f"))), [hidden] * 3)

    g = tanh(_maybe_bias(params, prefix, "b_g", xg + hg))
    i = sigmoid(_maybe_bias(params, prefix, "b_i", xi + hi))
    f = sigmoid(_maybe_bias(params, prefix, "b_f", xf + hf))
    gm = tanh(_maybe_bias(params, prefix, "b_gm", xgm + mg))
    im = sigmoid(_maybe_bias(params, prefix, "b_im", xim + mi))
    fm = sigmoid(_maybe_bias(params, prefix, "b_fm", xfm + mf))

    delta_c = mul(i, g)
    delta_m = mul(im, gm)
    c = mul(f, c_prev) + delta_c
    m = mul(fm, m_in) + delta_m

    mem = concat([c, m], axis=1)
    o_mem = conv2d(mem, concat([params[prefix + "c_o"], params[prefix + "m_o"]], axis=1))
    o = sigmoid(_maybe_bias(params, prefix, "b_o", xo + ho + o_mem))
    h = mul(o, tanh(conv2d(mem, params[prefix + "fuse"])))
    gates = {"g": g, "i": i, "f": f, "g'": gm, "i'": im, "f'": fm, "o": o}
    return CellOutputs(h=h, c=c, m=m, delta_c=delta_c, delta_m=delta_m, gates=gates)


def st_lstm_pp_forward(inputs: CellInputs, params: ParameterSet, prefix: str = "") -> CellOutputs:
    """ST-LSTM++ step: first- and second-order horizon and zigzag flows."""
    if inputs.h2 is None or inputs.m2_in is None:
        raise ContractError("st_lstm_pp_forward needs h2 and m2_in")
    hidden = params[prefix + "fuse"].shape[0]
    _check_state_shapes(inputs, hidden)
    x, h1, h2 = inputs.x, inputs.h1, inputs.h2
    c_prev, m_in, m2_in = inputs.c_prev, inputs.m_in, inputs.m2_in
    shared = prefix + "xm2_g" not in params

    x_names = ["x_g", "x_i", "x_f", "xm_g", "xm_i", "xm_f", "x_o"]
    if not shared:
        x_names += list(UNSHARED_INPUT_KERNELS)
    x_parts = split_channels(conv2d(x, _kernels(params, prefix, x_names)), [hidden] * len(x_names))
    xg, xi, xf, xgm, xim, xfm, xo = x_parts[:7]
    xgm2, xim2, xfm2 = (xgm, xim, xfm) if shared else x_parts[7:]

    hg, hi, hf, ho = split_channels(
        conv2d(h1, _kernels(params, prefix, ("h_g", "h_i", "h_f", "h_o"))), [hidden] * 4)
    h2g, h2i, h2f, h2o = split_channels(
        conv2d(h2, _kernels(params, prefix, ("h2_g", "h2_i", "h2_f", "h2_o"))), [hidden] * 4)
    mg, mi, mf = split_channels(
        conv2d(m_in, _kernels(params, prefix, ("m_g", "m_i", "m_f"))), [hidden] * 3)
    m2g, m2i, m2f = split_channels(
        conv2d(m2_in, _kernels(params, prefix, ("m2_g", "m2_i", "m2_f"))), [hidden] * 3)

    g = tanh(_maybe_bias(params, prefix, "b_g", xg + hg + h2g))
    i = sigmoid(_maybe_bias(params, prefix, "b_i", xi + hi + h2i))
    f = sigmoid(_maybe_bias(params, prefix, "b_f", xf + hf + h2f))
    delta_c = mul(i, g)
    c = mul(f, c_prev) + delta_c

    gm = tanh(_maybe_bias(params, prefix, "b_gm", xgm + mg))
    im = sigmoid(_maybe_bias(params, prefix, "b_im", xim + mi))
    fm = sigmoid(_maybe_bias(params, prefix, "b_fm", xfm + mf))
    delta_m = mul(im, gm)
    m = mul(fm, m_in) + delta_m

    gm2 = tanh(_maybe_bias(params, prefix, "b_gm2", xgm2 + m2g))
    im2 = sigmoid(_maybe_bias(params, prefix, "b_im2", xim2 + m2i))
    fm2 = sigmoid(_maybe_bias(params, prefix, "b_fm2", xfm2 + m2f))
    delta_m2 = mul(im2, gm2)
    m2 = mul(fm2, m2_in) + delta_m2

    mem = concat([c, m, m2], axis=1)
    o_mem = conv2d(mem, concat([params[prefix + n] for n in ("c_o", "m_o", "m2_o")], axis=1))
    o = sigmoid(_maybe_bias(params, prefix, "b_o", xo + ho + h2o + o_mem))
    h = mul(o, tanh(conv2d(mem, params[prefix + "fuse"])))
    gates = {"g": g, "i": i, "f": f, "g'": gm, "i'": im, "f'": fm,
             "g''": gm2, "i''": im2, "f''": fm2, "o": o}
    return CellOutputs(h=h, c=c, m=m, m2=m2, delta_c=delta_c, delta_m=delta_m,
                       delta_m2=delta_m2, gates=gates)
