"""ST-GasNet: recurrent spatiotemporal prediction of urban plume occupancy."""
from .cells import CellInputs, CellOutputs, st_lstm_forward, st_lstm_pp_forward
from .dataset import (
    Clip,
    PlumeSequence,
    load_checkpoint,
    load_sequence,
    make_clips,
    save_checkpoint,
    save_sequence,
    split,
)
from .loss import LossWeights, decoupling_terms, prediction_term, total_loss
from .metrics import ConfusionCounts, MetricReport, binarize_prediction, confusion, modified_accuracy, precision
from .network import Model, ModelConfig, init_params, output_head, rollout, step
from .plume import SimConfig, SourceSpec, WindField, binarize, build_city, generate_corpus, simulate, wind_channels
from .tensor import ParameterSet, Tensor, backward, conv2d, pointwise
from .trainer import Adam, TrainConfig, TrainHistory, evaluate, train

__version__ = "0.1.0"
