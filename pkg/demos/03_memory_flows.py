#!/usr/bin/env python3
"""Look inside one rollout: zigzag memory, the two-step lag and the decoupling terms.

A freshly initialised two-layer ST-GasNet is run over a short random clip.
The trace shows which tensor feeds which, the delta cosines that the
training objective pushes apart are printed per layer, and zeroing the
second-order kernels recovers the first-order baseline exactly.

    python3 demos/03_memory_flows.py
"""
import numpy as np

from stgasnet.loss import channel_cosines, decoupling_terms
from stgasnet.network import PRED_RNN, ST_GASNET, ModelConfig, init_params, lift_pred_rnn_params, rollout

cfg = ModelConfig(variant=ST_GASNET, layers=2, hidden_channels=4, height=12, width=12)
params = init_params(cfg, seed=0)
x = (np.random.default_rng(0).random((4, 1, 1, 12, 12)) > 0.6).astype(np.float32)

trace = []
preds, deltas = rollout(x, 3, params, cfg, trace=trace)
print(f"{len(preds)} predictions for T=4, k=3 (frames 2..7)")

# trace holds (layer, inputs, outputs) for every step and layer, in order
steps = [trace[i:i + cfg.layers] for i in range(0, len(trace), cfg.layers)]
for t in range(2, 4):
    first = steps[t][0][1]
    print(f"step {t}: layer 0 M input is top-layer M of step {t - 1}: "
          f"{first.m_in is steps[t - 1][-1][2].m}; "
          f"M' input is top-layer M' of step {t - 2}: {first.m2_in is steps[t - 2][-1][2].m2}")

# per-layer channel cosines between memory updates at the last step
for layer, (dc, dm, dm2) in enumerate(deltas[-1]):
    print(f"layer {layer}: cos(dC, dM) per channel {np.round(channel_cosines(dc, dm).data, 3)}, "
          f"cos(dC, dM') {np.round(channel_cosines(dc, dm2).data, 3)}")
cm, cm2 = decoupling_terms(deltas)
print(f"summed over steps, layers and channels: {float(cm.data):.3f} and {float(cm2.data):.3f}")

# A PredRNN model lifted into ST-GasNet with zero second-order weights
base = ModelConfig(variant=PRED_RNN, layers=2, hidden_channels=4, height=12, width=12)
pparams = init_params(base, seed=1)
a, _ = rollout(x, 3, pparams, base)
b, _ = rollout(x, 3, lift_pred_rnn_params(pparams, cfg), cfg)
print("largest gap between PredRNN and its lifted ST-GasNet copy:",
      max(float(np.abs(p.data - q.data).max()) for p, q in zip(a, b)))
