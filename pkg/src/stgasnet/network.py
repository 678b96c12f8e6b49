"""Stacked recurrent predictor: ST-GasNet (ST-LSTM++ layers) and the PredRNN baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cells import (
    SECOND_ORDER_KERNELS,
    ST_LSTM,
    ST_LSTM_PP,
    CellInputs,
    CellOutputs,
    init_cell_params,
    st_lstm_forward,
    st_lstm_pp_forward,
)
from .tensor import ContractError, ParameterSet, Tensor, concat, conv2d, sigmoid

ST_GASNET = "st_gasnet"
PRED_RNN = "pred_rnn"
VARIANTS = (ST_GASNET, PRED_RNN)


@dataclass
class ModelConfig:
    variant: str = ST_GASNET
    layers: int = 4
    hidden_channels: int = 16
    kernel_size: int = 3
    input_channels: int = 1
    height: int = 32
    width: int = 32
    share_input_kernels: bool = True
    bias: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.input_channels not in (1, 4):
            raise ValueError("input_channels must be 1 (plume only) or 4 (plume + wind)")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd number")
        if self.hidden_channels < 1:
            raise ValueError("hidden_channels must be >= 1")

    @property
    def cell_kind(self) -> str:
        return ST_LSTM_PP if self.variant == ST_GASNET else ST_LSTM

    @property
    def with_wind(self) -> bool:
        return self.input_channels == 4

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParameterSet:
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    for layer in range(cfg.layers):
        cin = cfg.input_channels if layer == 0 else cfg.hidden_channels
        init_cell_params(params, f"l{layer}.", cfg.cell_kind, cin, cfg.hidden_channels, rng,
                         kernel_size=cfg.kernel_size, share_input_kernels=cfg.share_input_kernels,
                         bias=cfg.bias, dtype=dtype)
    bound = 1.0 / np.sqrt(cfg.hidden_channels)
    params["head"] = Tensor(rng.uniform(-bound, bound, (1, cfg.hidden_channels, 1, 1)).astype(dtype),
                            requires_grad=True)
    if cfg.bias:
        params["head_b"] = Tensor(np.zeros((1, 1, 1, 1), dtype=dtype), requires_grad=True)
    return params


def output_head(h_top: Tensor, params: ParameterSet) -> Tensor:
    """1x1 projection of the top hidden state to one channel, squashed to (0, 1)."""
    z = conv2d(h_top, params["head"])
    if "head_b" in params:
        z = z + params["head_b"]
    return sigmoid(z)


@dataclass
class NetworkState:
    h: list[Tensor]
    c: list[Tensor]
    h_lag: list[Tensor]  # H(t-2) for the next step
    m_top: Tensor  # top-layer M from the previous step
    m2_top_1: Tensor  # top-layer M' from the previous step
    m2_top_2: Tensor  # top-layer M' from two steps back
    t: int = 0
    signature: tuple = field(default=())


def _signature(cfg: ModelConfig, batch: int) -> tuple:
    return (cfg.variant, cfg.layers, cfg.hidden_channels, batch, cfg.height, cfg.width)


def init_state(cfg: ModelConfig, batch: int, dtype=np.float32) -> NetworkState:
    shape = (batch, cfg.hidden_channels, cfg.height, cfg.width)
    z = Tensor(np.zeros(shape, dtype=dtype))
    return NetworkState(h=[z] * cfg.layers, c=[z] * cfg.layers, h_lag=[z] * cfg.layers,
                        m_top=z, m2_top_1=z, m2_top_2=z, t=0, signature=_signature(cfg, batch))


def step(frame: Tensor, state: NetworkState, params: ParameterSet, cfg: ModelConfig,
         trace: list | None = None) -> tuple[Tensor, NetworkState, list[tuple]]:
    """Advance the stack by one time step.

    Returns the next-frame probability map, the new state and one
    ``(delta_c, delta_m, delta_m2)`` triple per layer (``delta_m2`` is None
    for the baseline). When ``trace`` is a list, ``(layer, CellInputs,
    CellOutputs)`` records are appended to it.
    """
    if frame.ndim != 4 or frame.shape[1] != cfg.input_channels:
        raise ContractError(f"frame shape {frame.shape} does not match input_channels={cfg.input_channels}")
    if state.signature != _signature(cfg, frame.shape[0]):
        raise ContractError("network state was built for a different configuration")
    if frame.shape[2:] != (cfg.height, cfg.width):
        raise ContractError(f"frame extent {frame.shape[2:]} != configured {(cfg.height, cfg.width)}")

    second_order = cfg.variant == ST_GASNET
    x = frame
    m_in, m2_in = state.m_top, state.m2_top_2
    new_h, new_c, deltas = [], [], []
    for layer in range(cfg.layers):
        inputs = CellInputs(x=x, h1=state.h[layer], c_prev=state.c[layer], m_in=m_in,
                            h2=state.h_lag[layer] if second_order else None,
                            m2_in=m2_in if second_order else None)
        prefix = f"l{layer}."
        out: CellOutputs = (st_lstm_pp_forward(inputs, params, prefix) if second_order
                            else st_lstm_forward(inputs, params, prefix))
        if trace is not None:
            trace.append((layer, inputs, out))
        new_h.append(out.h)
        new_c.append(out.c)
        deltas.append((out.delta_c, out.delta_m, out.delta_m2))
        x, m_in, m2_in = out.h, out.m, out.m2

    new_state = NetworkState(
        h=new_h, c=new_c, h_lag=list(state.h), m_top=m_in,
        m2_top_1=m2_in if second_order else state.m2_top_1,
        m2_top_2=state.m2_top_1 if second_order else state.m2_top_2,
        t=state.t + 1, signature=state.signature)
    return output_head(x, params), new_state, deltas


def _augment(frame: Tensor, wind: Tensor | None) -> Tensor:
    return frame if wind is None else concat([frame, wind], axis=1)


def rollout(inputs, k: int, params: ParameterSet, cfg: ModelConfig, wind=None,
            trace: list | None = None) -> tuple[list[Tensor], list[list[tuple]]]:
    """Teacher-forced over the ``T`` inputs, then fed back on its own predictions for ``k`` steps.

    ``inputs`` is ``[T, B, 1, H, W]``; ``wind`` is ``[B, 3, H, W]`` (direction
    pair and speed) and is required when the model takes four input channels.
    Returns ``T + k - 1`` predictions aligned with frames ``2 .. T+k`` and the
    per-step delta lists.
    """
    frames = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs)
    if k < 0:
        raise ContractError("horizon k must be >= 0")
    if frames.ndim != 5 or frames.shape[0] < 1:
        raise ContractError(f"inputs must be a non-empty [T,B,1,H,W] array, got shape {frames.shape}")
    if frames.shape[2] != 1:
        raise ContractError("inputs carry the plume channel only; pass wind separately")
    dtype = next(iter(params.values())).dtype
    frames = frames.astype(dtype, copy=False)
    if cfg.with_wind:
        if wind is None:
            raise ContractError("model configured with wind channels but no wind given")
        wind_t = Tensor(np.asarray(wind.data if isinstance(wind, Tensor) else wind, dtype=dtype))
        if wind_t.shape != (frames.shape[1], 3) + frames.shape[3:]:
            raise ContractError(f"wind shape {wind_t.shape} does not match inputs")
    else:
        wind_t = None

    n_in = frames.shape[0]
    state = init_state(cfg, frames.shape[1], dtype=dtype)
    preds: list[Tensor] = []
    all_deltas: list[list[tuple]] = []
    for t in range(n_in + k - 1):
        frame = Tensor(frames[t]) if t < n_in else preds[-1]
        pred, state, deltas = step(_augment(frame, wind_t), state, params, cfg, trace=trace)
        preds.append(pred)
        all_deltas.append(deltas)
    return preds, all_deltas


class Model:
    """A configuration bound to its parameters."""

    def __init__(self, cfg: ModelConfig, params: ParameterSet | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def rollout(self, inputs, k: int, wind=None):
        return rollout(inputs, k, self.params, self.cfg, wind=wind)

    def predict(self, inputs, k: int, wind=None) -> np.ndarray:
        """Probability maps for the ``k`` frames after the inputs, ``[k, B, 1, H, W]``."""
        frames = np.asarray(inputs)
        if k < 1:
            return np.zeros((0,) + frames.shape[1:], dtype=np.float32)
        preds, _ = rollout(frames, k, self.params, self.cfg, wind=wind)
        tail = preds[frames.shape[0] - 1:]
        return np.stack([p.data for p in tail])


def lift_pred_rnn_params(pred_params: ParameterSet, gasnet_cfg: ModelConfig) -> ParameterSet:
    """ST-GasNet parameters that reproduce a PredRNN model exactly.

    First-order kernels and the head are copied; every second-order kernel
    and the M' columns of the 1x1 fusion kernel are zero.
    """
    if gasnet_cfg.variant != ST_GASNET:
        raise ContractError("target configuration must be the st_gasnet variant")
    ref = init_params(gasnet_cfg, seed=0, dtype=next(iter(pred_params.values())).dtype)
    out = ParameterSet()
    for name, tensor in ref.items():
        short = name.split(".", 1)[-1]
        if name in pred_params and short != "fuse":
            arr = pred_params[name].data.copy()
        elif short == "fuse":
            src = pred_params[name].data
            arr = np.zeros_like(tensor.data)
            arr[:, :src.shape[1]] = src
        else:
            arr = np.zeros_like(tensor.data)
        out[name] = Tensor(arr, requires_grad=True)
    return out


def zero_second_order(params: ParameterSet) -> ParameterSet:
    """Copy of ST-GasNet parameters with the second-order path disconnected."""
    out = params.copy()
    for name, tensor in out.items():
        short = name.split(".", 1)[-1]
        if short in SECOND_ORDER_KERNELS:
            tensor.data[...] = 0
        elif short == "fuse":
            hidden = tensor.shape[0]
            tensor.data[:, 2 * hidden:] = 0
    return out
