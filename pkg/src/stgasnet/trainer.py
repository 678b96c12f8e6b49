"""Gradient training on clips and first-clip evaluation."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Clip, PlumeSequence
from .loss import LossWeights, total_loss
from .metrics import TN_DIVISOR, report_from_frames, MetricReport
from .network import ModelConfig, rollout
from .plume import wind_planes
from .tensor import ParameterSet, backward

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, iteration: int, terms: dict[str, float]):
        self.iteration = iteration
        self.terms = terms
        detail = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        super().__init__(f"non-finite loss at iteration {iteration}: {detail}")


class Adam:
    """Adaptive moment estimation over a ParameterSet (bias-corrected)."""

    def __init__(self, params: ParameterSet, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Rescale gradients in place so their global l2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            p.grad *= p.grad.dtype.type(scale)
    return norm


def param_checksum(params: ParameterSet) -> str:
    h = hashlib.sha256()
    for name, p in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    iterations: int = 200
    grad_clip: float = 5.0
    seed: int = 0
    T: int = 5
    k: int = 15
    stride: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    # False trains on the summed squared frame error; the per-pixel mean is
    # too small next to the summed cosines and the fit stalls at the base rate
    normalize_pixels: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    prediction: list[float] = field(default_factory=list)
    decouple_m: list[float] = field(default_factory=list)
    decouple_m2: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    checksum: str = ""
    wall_clock: float = field(default=0.0, compare=False)

    def __len__(self) -> int:
        return len(self.total)

    def log_lines(self) -> list[str]:
        return [f"iter={i + 1} total={self.total[i]:.8g} prediction={self.prediction[i]:.8g} "
                f"decouple_m={self.decouple_m[i]:.8g} decouple_m2={self.decouple_m2[i]:.8g} "
                f"grad_norm={self.grad_norm[i]:.8g}" for i in range(len(self))]


def batch_arrays(clips: list[Clip], with_wind: bool):
    """Stack clips into ``inputs [T,B,1,H,W]``, ``targets [T+k-1,B,1,H,W]`` and optional wind ``[B,3,H,W]``."""
    frames = np.stack([c.frames for c in clips], axis=1)[:, :, None]  # [T+k, B, 1, H, W]
    T = clips[0].inputs.shape[0]
    wind = None
    if with_wind:
        h, w = frames.shape[-2:]
        wind = np.stack([wind_planes(c.direction, c.speed, h, w) for c in clips])
    return frames[:T], frames[1:], wind


def train(params: ParameterSet, clips: list[Clip], model_cfg: ModelConfig, cfg: TrainConfig,
          callback=None) -> tuple[ParameterSet, TrainHistory]:
    """Minimise the prediction + decoupling objective with Adam.

    The input ``params`` are left untouched; a trained copy is returned.
    ``callback(iteration, breakdown_floats)`` is called after every update.
    """
    if not clips:
        raise ValueError("no training clips")
    k = clips[0].targets.shape[0]
    params = params.copy()
    opt = Adam(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory()
    start = time.perf_counter()

    order: list[int] = []
    for it in range(cfg.iterations):
        if len(order) < min(cfg.batch_size, len(clips)):
            order.extend(rng.permutation(len(clips)).tolist())
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        inputs, targets, wind = batch_arrays([clips[i] for i in idx], model_cfg.with_wind)

        params.zero_grad()
        preds, deltas = rollout(inputs, k, params, model_cfg, wind=wind)
        parts = total_loss(preds, targets, deltas, cfg.weights, cfg.normalize_pixels)
        terms = parts.as_floats()
        if not all(np.isfinite(v) for v in terms.values()):
            raise NonFiniteLossError(it + 1, terms)
        backward(parts.total)
        gnorm = clip_grad_norm(params, cfg.grad_clip)
        if not np.isfinite(gnorm):
            raise NonFiniteLossError(it + 1, dict(terms, grad_norm=gnorm))
        opt.step()

        hist.total.append(terms["total"])
        hist.prediction.append(terms["prediction"])
        hist.decouple_m.append(terms["decouple_m"])
        hist.decouple_m2.append(terms["decouple_m2"])
        hist.grad_norm.append(gnorm)
        if callback is not None:
            callback(it + 1, terms)
        if (it + 1) % 50 == 0:
            log.info("iter %d loss %.5f (prediction %.5f)", it + 1, terms["total"], terms["prediction"])

    hist.checksum = param_checksum(params)
    hist.wall_clock = time.perf_counter() - start
    return params, hist


def evaluate(model, sequences: list[PlumeSequence], T: int = 5, k: int = 15, threshold: float = 0.5,
             tn_divisor: float = TN_DIVISOR) -> MetricReport:
    """Score the first clip (t0 = 0) of every sequence; columns are frames T+1 .. T+k."""
    usable, skipped = [], []
    for seq in sequences:
        if seq.length < T + k:
            log.warning("sequence %s has %d frames < T+k=%d; skipped", seq.seq_id, seq.length, T + k)
            skipped.append(seq.seq_id)
        else:
            usable.append(seq)
    if not usable:
        raise ValueError("no sequence is long enough to evaluate")
    probs = predict_first_clips(model, usable, T, k)
    truths = {s.seq_id: s.frames[T:T + k] for s in usable}
    return report_from_frames(probs, truths, first_t=T + 1, threshold=threshold, tn_divisor=tn_divisor,
                              skipped=skipped)


def predict_first_clips(model, sequences: list[PlumeSequence], T: int, k: int) -> dict[str, np.ndarray]:
    """``{seq_id: [k, H, W]}`` probability maps from the first ``T`` frames of each sequence."""
    cfg = getattr(model, "cfg", None)
    with_wind = bool(cfg is not None and cfg.with_wind)
    inputs = np.stack([s.frames_float()[:T] for s in sequences], axis=1)[:, :, None]
    wind = None
    if with_wind:
        h, w = sequences[0].extent
        wind = np.stack([wind_planes(s.direction, s.speed, h, w) for s in sequences])
    out = model.predict(inputs, k, wind)  # [k, B, 1, H, W]
    return {s.seq_id: np.asarray(out[:, b, 0]) for b, s in enumerate(sequences)}
