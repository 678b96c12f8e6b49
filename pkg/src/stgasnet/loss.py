"""Training objective: next-frame error plus memory-decoupling cosine penalties."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import ContractError, Tensor, as_tensor, mul, sqrt, square, tsum

COSINE_EPS = 1e-8


@dataclass
class LossWeights:
    prediction: float = 1.0
    decouple_m: float = 1.0
    decouple_m2: float = 1.0


def prediction_term(preds: Sequence[Tensor], targets, normalize_pixels: bool = True) -> Tensor:
    """Mean over steps of the squared l2 frame error.

    With ``normalize_pixels`` each frame's squared norm is divided by the
    number of entries in the frame batch (batch x pixels), so the value is a
    per-pixel mean squared error.
    """
    if len(preds) != len(targets):
        raise ContractError(f"{len(preds)} predictions vs {len(targets)} targets")
    if not preds:
        raise ContractError("prediction_term needs at least one step")
    batch = preds[0].shape[0]
    total = None
    for p, y in zip(preds, targets):
        y = as_tensor(y, like=p)
        if y.shape != p.shape:
            raise ContractError(f"prediction shape {p.shape} != target shape {y.shape}")
        err = tsum(square(p - y))
        total = err if total is None else total + err
    scale = 1.0 / len(preds)
    scale /= preds[0].data.size if normalize_pixels else batch
    return mul(total, scale)


def channel_cosines(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Per-channel cosine similarity, each channel flattened over batch and space."""
    dot = tsum(mul(a, b), axis=(0, 2, 3))
    na = sqrt(tsum(square(a), axis=(0, 2, 3)))
    nb = sqrt(tsum(square(b), axis=(0, 2, 3)))
    return dot / (mul(na, nb) + eps)


def decoupling_terms(deltas: Sequence[Sequence[tuple]], eps: float = COSINE_EPS) -> tuple[Tensor, Tensor | None]:
    """Summed cosines between delta C and delta M, and between delta C and delta M'.

    ``deltas[t][l]`` is the ``(delta_c, delta_m, delta_m2)`` triple from step t,
    layer l.  The second return value is None when no layer produced delta_m2.
    """
    cm, cm2 = None, None
    for per_step in deltas:
        for dc, dm, dm2 in per_step:
            s = tsum(channel_cosines(dc, dm, eps))
            cm = s if cm is None else cm + s
            if dm2 is not None:
                s2 = tsum(channel_cosines(dc, dm2, eps))
                cm2 = s2 if cm2 is None else cm2 + s2
    if cm is None:
        cm = Tensor(np.zeros((), dtype=np.float32))
    return cm, cm2


@dataclass
class LossBreakdown:
    total: Tensor
    prediction: Tensor
    decouple_m: Tensor
    decouple_m2: Tensor | None

    def as_floats(self) -> dict[str, float]:
        return {
            "total": float(self.total.data),
            "prediction": float(self.prediction.data),
            "decouple_m": float(self.decouple_m.data),
            "decouple_m2": float(self.decouple_m2.data) if self.decouple_m2 is not None else 0.0,
        }


def total_loss(preds, targets, deltas, weights: LossWeights | None = None,
               normalize_pixels: bool = True) -> LossBreakdown:
    """Prediction term plus decoupling terms; the M' term drops out for the baseline."""
    w = weights or LossWeights()
    pred = prediction_term(preds, targets, normalize_pixels)
    cm, cm2 = decoupling_terms(deltas)
    total = mul(pred, w.prediction) + mul(as_tensor(cm, like=pred), w.decouple_m)
    if cm2 is not None:
        total = total + mul(cm2, w.decouple_m2)
    return LossBreakdown(total=total, prediction=pred, decouple_m=cm, decouple_m2=cm2)
