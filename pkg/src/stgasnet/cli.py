"""Command-line pipeline: ``generate``, ``train``, ``predict`` and ``evaluate``.

Configuration precedence is command line > ``--config`` JSON file > defaults.
Set ``STGASNET_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.

Exit codes: 0 success, 2 invalid configuration or usage, 3 missing input,
4 corrupt input, 5 non-finite training loss, 6 generation failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as dio
from .loss import LossWeights
from .network import VARIANTS, Model, ModelConfig, init_params
from .plume import (
    CityConfig,
    ConfigurationError,
    CorpusConfig,
    GenerationError,
    SimConfig,
    SourceSpec,
    generate_corpus,
)
from .raster import frame_to_gray, write_pgm
from .trainer import NonFiniteLossError, TrainConfig, evaluate, predict_first_clips, train

log = logging.getLogger("stgasnet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_CORRUPT = 4
EXIT_NONFINITE = 5
EXIT_GENERATION = 6


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class ModelSection:
    layers: int = 4
    hidden_channels: int = 16
    kernel_size: int = 3
    share_input_kernels: bool = True
    bias: bool = False


@dataclass
class EvalSection:
    threshold: float = 0.5
    tn_divisor: float = 4.0


@dataclass
class SplitSection:
    n_train: int | None = None  # None -> 36/44 of the corpus


@dataclass
class RunConfig:
    seed: int = 0
    variant: str = "st_gasnet"
    with_wind: bool = False
    sim: SimConfig = field(default_factory=SimConfig)
    city: CityConfig = field(default_factory=CityConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    source: SourceSpec = field(default_factory=SourceSpec)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    split: SplitSection = field(default_factory=SplitSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = {"sim": SimConfig, "city": CityConfig, "corpus": CorpusConfig, "source": SourceSpec,
            "model": ModelSection, "train": TrainConfig, "eval": EvalSection, "split": SplitSection}
SCALARS = ("seed", "variant", "with_wind")
# the run-wide seed drives these
SEED_FIELDS = {"corpus": "seed", "train": "seed"}


def _merge(base: dict, updates: dict, where: str) -> dict:
    out = dict(base)
    for key, value in updates.items():
        if key not in base:
            raise CLIError(f"unknown configuration key {where}{key!r}", EXIT_CONFIG)
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _build(data: dict) -> RunConfig:
    try:
        kwargs = {k: data[k] for k in SCALARS}
        for name, cls in SECTIONS.items():
            section = dict(data[name])
            if name == "source":
                section["cells"] = [tuple(c) for c in section["cells"]]
            kwargs[name] = cls(**section)
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid configuration: {exc}", EXIT_CONFIG) from exc
    if cfg.variant not in VARIANTS:
        raise CLIError(f"variant must be one of {VARIANTS}", EXIT_CONFIG)
    if cfg.train.seed != cfg.seed or cfg.corpus.seed != cfg.seed:
        cfg.train.seed = cfg.seed
        cfg.corpus.seed = cfg.seed
    return cfg


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise CLIError(f"override {text!r} must look like section.key=value", EXIT_CONFIG)
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    data = RunConfig().to_dict()
    sources = ["defaults"]
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CLIError(f"config file {path} not found", EXIT_MISSING)
        try:
            file_data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CLIError(f"config file {path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
        data = _merge(data, file_data, "")
        sources.append(str(path))
    cli: dict = {}
    for name in ("seed", "variant", "with_wind"):
        value = getattr(args, name, None)
        if value is not None:
            cli[name] = value
    if getattr(args, "count", None) is not None:
        cli.setdefault("corpus", {})["count"] = args.count
    if getattr(args, "iterations", None) is not None:
        cli.setdefault("train", {})["iterations"] = args.iterations
    for text in getattr(args, "set", None) or []:
        path, value = parse_override(text)
        node = cli
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    if cli:
        data = _merge(data, cli, "")
        sources.append("command line")
    cfg = _build(data)
    log.info("configuration from %s: %s", " < ".join(sources), json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


# -- helpers ------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_sequences(directory) -> list[dio.PlumeSequence]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CLIError(f"data directory {directory} not found", EXIT_MISSING)
    seqs = dio.load_sequence_dir(directory)
    if not seqs:
        raise CLIError(f"no {dio.SEQUENCE_EXT} files in {directory}", EXIT_MISSING)
    return seqs


def _load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CLIError(f"checkpoint {path} not found", EXIT_MISSING)
    params, meta = dio.load_checkpoint(path)
    return Model(ModelConfig(**meta["model"]), params), meta


def _default_n_train(total: int) -> int:
    return min(max(1, (total * 36) // 44), total - 1)


def _write_report(out: Path, report) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv())
    (out / "metrics.json").write_text(report.to_json() + "\n")


# -- subcommands --------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    seqs = generate_corpus(cfg.sim, cfg.corpus, cfg.city, cfg.source)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_hash": dio.config_hash(cfg.to_dict()), "seed": cfg.seed, "sequences": []}
    for seq in seqs:
        path = dio.save_sequence(out / f"{seq.seq_id}{dio.SEQUENCE_EXT}", seq)
        if dio.load_sequence(path) != seq:
            raise CLIError(f"validation of {path} failed", EXIT_CORRUPT)
        manifest["sequences"].append({
            "file": path.name, "seq_id": seq.seq_id, "angle_deg": round(math.degrees(seq.direction), 6),
            "speed": seq.speed, "frames": seq.length, "sha256": _sha256(path)})
        if args.images:
            for t, frame in enumerate(seq.frames):
                write_pgm(out / "images" / seq.seq_id / f"t{t + 1:03d}.pgm", frame_to_gray(frame, seq.mask))
    text = json.dumps(manifest, indent=2, sort_keys=True)
    (out / "manifest.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    seqs = _load_sequences(args.data)
    n_train = cfg.split.n_train if cfg.split.n_train is not None else _default_n_train(len(seqs))
    try:
        train_seqs, test_seqs = dio.split(seqs, n_train, cfg.seed)
    except dio.ContractError as exc:
        raise CLIError(str(exc), EXIT_CONFIG) from exc
    tc = cfg.train
    clips = [c for s in train_seqs for c in dio.make_clips(s, tc.T, tc.k, tc.stride)]
    h, w = seqs[0].extent
    model_cfg = ModelConfig(variant=cfg.variant, input_channels=4 if cfg.with_wind else 1, height=h, width=w,
                            **dataclasses.asdict(cfg.model))
    params = init_params(model_cfg, seed=cfg.seed)
    log.info("training %s on %d clips from %d sequences", cfg.variant, len(clips), len(train_seqs))
    trained, hist = train(params, clips, model_cfg, tc)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"model": model_cfg.to_dict(), "train": tc.to_dict(), "seed": cfg.seed,
            "train_ids": [s.seq_id for s in train_seqs], "test_ids": [s.seq_id for s in test_seqs],
            "param_checksum": hist.checksum, "config_hash": dio.config_hash(cfg.to_dict())}
    ckpt = dio.save_checkpoint(out / f"checkpoint{dio.CHECKPOINT_EXT}", trained, meta)
    params_back, _ = dio.load_checkpoint(ckpt)
    if any(not np.array_equal(params_back[k].data, trained[k].data) for k in trained):
        raise CLIError("checkpoint validation failed", EXIT_CORRUPT)
    (out / "train_log.txt").write_text("\n".join(hist.log_lines()) + "\n")
    summary = {"iterations": len(hist), "final_loss": hist.total[-1], "final_prediction": hist.prediction[-1],
               "param_checksum": hist.checksum, "checkpoint": ckpt.name}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("training finished in %.1fs", hist.wall_clock)
    return EXIT_OK


def _sequence_paths(items) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob(f"*{dio.SEQUENCE_EXT}")))
        elif p.exists():
            paths.append(p)
        else:
            raise CLIError(f"sequence {p} not found", EXIT_MISSING)
    if not paths:
        raise CLIError("no sequences given", EXIT_MISSING)
    return paths


def cmd_predict(args, cfg: RunConfig) -> int:
    model, meta = _load_checkpoint(args.checkpoint)
    T = args.T if args.T is not None else meta["train"]["T"]
    k = args.k if args.k is not None else meta["train"]["k"]
    out = Path(args.out)
    for path in _sequence_paths(args.sequence):
        seq = dio.load_sequence(path)
        window = seq.frames[args.t0:]
        if window.shape[0] < T:
            raise CLIError(f"{path} has fewer than T={T} frames after t0={args.t0}", EXIT_CONFIG)
        view = dio.PlumeSequence(frames=window, direction=seq.direction, speed=seq.speed, mask=seq.mask,
                                 seq_id=seq.seq_id)
        probs = predict_first_clips(model, [view], T, k)[seq.seq_id]
        pmeta = {"seq_id": seq.seq_id, "t0": args.t0, "T": T, "k": k, "variant": model.cfg.variant,
                 "checkpoint_checksum": meta.get("param_checksum", "")}
        dio.save_predictions(out / f"{seq.seq_id}{dio.PREDICTION_EXT}", probs, pmeta)
        if args.images:
            for j, frame in enumerate(probs):
                t = args.t0 + T + j + 1
                write_pgm(out / "images" / seq.seq_id / f"t{t:03d}.pgm", frame_to_gray(frame, seq.mask))
        print(f"{seq.seq_id}: {k} frames -> {out / (seq.seq_id + dio.PREDICTION_EXT)}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    seqs = {s.seq_id: s for s in _load_sequences(args.data)}
    out = Path(args.out)
    if args.predictions:
        from .metrics import report_from_frames

        pdir = Path(args.predictions)
        files = sorted(pdir.glob(f"*{dio.PREDICTION_EXT}")) if pdir.is_dir() else []
        if not files:
            raise CLIError(f"no {dio.PREDICTION_EXT} files in {pdir}", EXIT_MISSING)
        probs, truths, first_t = {}, {}, None
        for f in files:
            p, pm = dio.load_predictions(f)
            if pm["seq_id"] not in seqs:
                raise CLIError(f"prediction {f.name} refers to unknown sequence {pm['seq_id']}", EXIT_MISSING)
            start = pm["t0"] + pm["T"]
            truth = seqs[pm["seq_id"]].frames[start:start + pm["k"]]
            if truth.shape[0] != pm["k"]:
                raise CLIError(f"sequence {pm['seq_id']} too short for {f.name}", EXIT_CONFIG)
            probs[pm["seq_id"]], truths[pm["seq_id"]] = p, truth
            first_t = start + 1
        report = report_from_frames(probs, truths, first_t, cfg.eval.threshold, cfg.eval.tn_divisor)
    else:
        if not args.checkpoint:
            raise CLIError("evaluate needs --checkpoint or --predictions", EXIT_CONFIG)
        model, meta = _load_checkpoint(args.checkpoint)
        ids = meta.get("test_ids") or sorted(seqs)
        if args.all or not all(i in seqs for i in ids):
            ids = sorted(seqs)
        T = args.T if args.T is not None else meta["train"]["T"]
        k = args.k if args.k is not None else meta["train"]["k"]
        report = evaluate(model, [seqs[i] for i in ids], T, k, cfg.eval.threshold, cfg.eval.tn_divisor)
    _write_report(out, report)
    print(report.to_csv(), end="")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stgasnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--with-wind", dest="with_wind", type=_parse_bool, metavar="BOOL")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (JSON-decoded)")

    p = sub.add_parser("generate", help="simulate a plume corpus")
    common(p)
    p.add_argument("--count", type=int, help="number of (angle, speed) sequences")
    p.add_argument("--images", action="store_true", help="also write PGM frames")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a corpus")
    common(p)
    p.add_argument("--data", required=True, help="directory of sequence files")
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="roll a checkpoint forward from observed frames")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", nargs="+", required=True, help="sequence files or directories")
    p.add_argument("--t0", type=int, default=0)
    p.add_argument("--T", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--images", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="per-timestep precision and modified accuracy")
    common(p)
    p.add_argument("--data", required=True, help="directory of sequence files (ground truth)")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of prediction files to score instead of rolling out")
    p.add_argument("--all", action="store_true", help="score every sequence, not only the held-out split")
    p.add_argument("--T", type=int)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("STGASNET_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except dio.FormatError as exc:
        print(f"error: corrupt input: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
