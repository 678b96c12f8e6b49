#!/usr/bin/env python3
"""Train ST-GasNet and the PredRNN baseline on a small corpus and compare them.

Both models see the same clips (T=5 observed frames, k=15 predicted) from a
handful of sequences; the held-out sequences are scored on their first clip
with precision and the TN-discounted accuracy, one column per predicted
frame.  Runs in a few minutes on one core.

    python3 demos/02_train_and_compare.py [iterations]
"""
import sys

import numpy as np

from stgasnet import dataset as dio
from stgasnet.network import PRED_RNN, ST_GASNET, Model, ModelConfig, init_params
from stgasnet.plume import CityConfig, CorpusConfig, SimConfig, generate_corpus
from stgasnet.trainer import TrainConfig, evaluate, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300

seqs = generate_corpus(SimConfig(height=24, width=24), CorpusConfig(count=10, seed=0), CityConfig())
train_seqs, test_seqs = dio.split(seqs, 8, seed=0)
clips = [c for s in train_seqs for c in dio.make_clips(s, 5, 15, 2)]
print(f"{len(clips)} training clips from {len(train_seqs)} sequences; held out: "
      + ", ".join(s.seq_id for s in test_seqs))

# Same optimiser settings for both; only the cell type differs.
tc = TrainConfig(iterations=iterations, lr=5e-3, batch_size=4, seed=0)
reports = {}
for variant in (ST_GASNET, PRED_RNN):
    cfg = ModelConfig(variant=variant, layers=2, hidden_channels=8, height=24, width=24, bias=True)
    params = init_params(cfg, seed=0)
    trained, hist = train(params, clips, cfg, tc)
    print(f"{variant}: {params.num_values()} parameters, {hist.wall_clock:.0f}s, "
          f"prediction term {hist.prediction[0]:.1f} -> {np.mean(hist.prediction[-20:]):.1f}")
    reports[variant] = evaluate(Model(cfg, trained), test_seqs, T=5, k=15)

# One row per model and metric, columns t=6..20 as in the usual results table.
header = "".join(f"{t:>6d}" for t in reports[ST_GASNET].timesteps)
print(f"{'':24s}{header}   mean")
for variant, rep in reports.items():
    for name, values, mean in (("precision", rep.precision, rep.mean_precision),
                               ("mod. accuracy", rep.accuracy, rep.mean_accuracy)):
        print(f"{variant:>9s} {name:<14s}" + "".join(f"{v:6.2f}" for v in values) + f"  {mean:.3f}")
