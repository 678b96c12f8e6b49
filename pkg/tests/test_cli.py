import json
import struct

import numpy as np
import pytest

from stgasnet import dataset as dio
from stgasnet.cli import main
from stgasnet.raster import read_pgm

SMALL = {
    "sim": {"height": 10, "width": 10, "domain_length": 500.0, "frames": 12},
    "city": {"count": 2, "size_min": 1, "size_max": 2, "downstream_radius": 3},
    "model": {"layers": 1, "hidden_channels": 3},
    "train": {"T": 3, "k": 4, "stride": 2, "iterations": 2, "batch_size": 2},
}


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def generate(tmp_path, config, name="data", count=3, *extra):
    out = tmp_path / name
    assert run("generate", "--config", config, "--count", count, "--out", out, *extra) == 0
    return out


def test_generate_count_and_images(tmp_path, config, capsys):
    out = generate(tmp_path, config, "d", 2, "--images")
    files = sorted(out.glob("*.stgs"))
    assert len(files) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["sequences"]) == 2 and manifest["seed"] == 0
    seq = dio.load_sequence(files[0])
    img = read_pgm(out / "images" / seq.seq_id / "t001.pgm")
    assert img.shape == (10, 10) and set(np.unique(img)) <= {0, 128, 255}
    assert np.array_equal(img[::-1] == 255, seq.frames[0].astype(bool) & ~seq.mask.astype(bool))
    assert "sequences" in capsys.readouterr().out


def test_generate_default_count_is_45(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({"sim": {"height": 8, "width": 8, "domain_length": 400.0, "frames": 3},
                               "city": {"count": 1, "size_min": 1, "size_max": 1, "downstream_radius": 3}}))
    assert run("generate", "--config", cfg, "--out", tmp_path / "all") == 0
    assert len(list((tmp_path / "all").glob("*.stgs"))) == 45


def test_generate_is_byte_identical(tmp_path, config):
    a = generate(tmp_path, config, "a", 2)
    b = generate(tmp_path, config, "b", 2)
    names = sorted(p.name for p in a.iterdir() if p.is_file())
    assert names == sorted(p.name for p in b.iterdir() if p.is_file())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    c = generate(tmp_path, config, "c", 2, "--seed", 9)
    assert (c / "manifest.json").read_bytes() != (a / "manifest.json").read_bytes()


def test_full_pipeline_is_deterministic(tmp_path, config):
    data = generate(tmp_path, config)
    for run_dir in ("r1", "r2"):
        assert run("train", "--config", config, "--data", data, "--out", tmp_path / run_dir) == 0
        assert run("evaluate", "--config", config, "--data", data, "--checkpoint",
                   tmp_path / run_dir / "checkpoint.stgc", "--out", tmp_path / run_dir / "eval") == 0
    for rel in ("checkpoint.stgc", "train_log.txt", "train_summary.json", "eval/metrics.csv", "eval/metrics.json"):
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes(), rel
    lines = (tmp_path / "r1" / "train_log.txt").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("iter=1 total=")


def test_predict_then_evaluate_matches_internal_rollout(tmp_path, config):
    data = generate(tmp_path, config)
    assert run("train", "--config", config, "--data", data, "--out", tmp_path / "m") == 0
    ckpt = tmp_path / "m" / "checkpoint.stgc"
    assert run("predict", "--config", config, "--checkpoint", ckpt, "--sequence", data,
               "--out", tmp_path / "p", "--images") == 0
    preds = sorted((tmp_path / "p").glob("*.stgp"))
    assert len(preds) == 3
    probs, meta = dio.load_predictions(preds[0])
    assert probs.shape == (4, 10, 10) and meta["T"] == 3 and meta["k"] == 4
    assert (tmp_path / "p" / "images" / meta["seq_id"] / "t004.pgm").exists()
    assert run("evaluate", "--config", config, "--data", data, "--predictions", tmp_path / "p",
               "--out", tmp_path / "e1") == 0
    assert run("evaluate", "--config", config, "--data", data, "--checkpoint", ckpt, "--all",
               "--out", tmp_path / "e2") == 0
    a = json.loads((tmp_path / "e1" / "metrics.json").read_text())
    b = json.loads((tmp_path / "e2" / "metrics.json").read_text())
    assert a["timesteps"] == b["timesteps"] == [4, 5, 6, 7]
    assert a["precision"] == b["precision"] and a["accuracy"] == b["accuracy"]


def test_perfect_copy_predictions_score_one(tmp_path, config):
    data = generate(tmp_path, config)
    pdir = tmp_path / "copy"
    for path in sorted(data.glob("*.stgs")):
        seq = dio.load_sequence(path)
        dio.save_predictions(pdir / f"{seq.seq_id}.stgp", seq.frames[3:7].astype(np.float32),
                             {"seq_id": seq.seq_id, "t0": 0, "T": 3, "k": 4})
    assert run("evaluate", "--config", config, "--data", data, "--predictions", pdir, "--out", tmp_path / "e") == 0
    lines = (tmp_path / "e" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "metric,t=4,t=5,t=6,t=7"
    assert lines[1:] == ["precision," + ",".join(["1.000000"] * 4), "accuracy," + ",".join(["1.000000"] * 4)]


@pytest.mark.parametrize("wind", ["false", "true"])
def test_pred_rnn_end_to_end(tmp_path, config, wind):
    data = generate(tmp_path, config)
    out = tmp_path / "b"
    assert run("train", "--config", config, "--variant", "pred_rnn", "--with-wind", wind, "--data", data,
               "--out", out) == 0
    _, meta = dio.load_checkpoint(out / "checkpoint.stgc")
    assert meta["model"]["variant"] == "pred_rnn"
    assert meta["model"]["input_channels"] == (4 if wind == "true" else 1)
    assert run("evaluate", "--config", config, "--data", data, "--checkpoint", out / "checkpoint.stgc",
               "--out", out / "eval") == 0
    report = json.loads((out / "eval" / "metrics.json").read_text())
    assert report["sequence_ids"] == meta["test_ids"]


def test_overrides_and_unknown_keys(tmp_path, config):
    data = generate(tmp_path, config)
    out = tmp_path / "o"
    assert run("train", "--config", config, "--data", data, "--out", out, "--iterations", 3,
               "--set", "train.lr=0.01") == 0
    _, meta = dio.load_checkpoint(out / "checkpoint.stgc")
    assert meta["train"]["iterations"] == 3 and meta["train"]["lr"] == 0.01
    assert run("train", "--config", config, "--data", data, "--out", out, "--set", "train.bogus=1") == 2
    assert run("generate", "--config", config, "--out", out, "--set", "sim.boundary=\"periodic\"") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"depth": 3}}))
    assert run("generate", "--config", bad, "--out", out) == 2
    bad.write_text("{not json")
    assert run("generate", "--config", bad, "--out", out) == 2


def test_exit_codes_for_missing_and_corrupt(tmp_path, config):
    assert run("train", "--config", tmp_path / "nope.json", "--data", tmp_path, "--out", tmp_path / "x") == 3
    assert run("train", "--config", config, "--data", tmp_path / "nodata", "--out", tmp_path / "x") == 3
    data = generate(tmp_path, config)
    assert run("evaluate", "--config", config, "--data", data, "--checkpoint", tmp_path / "none.stgc",
               "--out", tmp_path / "x") == 3
    victim = sorted(data.glob("*.stgs"))[0]
    raw = bytearray(victim.read_bytes())
    raw[-1] ^= 0xFF
    victim.write_bytes(bytes(raw))
    assert run("train", "--config", config, "--data", data, "--out", tmp_path / "x") == 4
    struct.pack_into("<H", raw, 4, 7)
    victim.write_bytes(bytes(raw))
    assert run("train", "--config", config, "--data", data, "--out", tmp_path / "x") == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_code_for_non_finite_training(tmp_path, config):
    data = generate(tmp_path, config)
    assert run("train", "--config", config, "--data", data, "--out", tmp_path / "x",
               "--set", "train.lr=1e300", "--iterations", 3) == 5


def test_exit_code_for_generation_failure(tmp_path, config):
    assert run("generate", "--config", config, "--out", tmp_path / "g", "--set", "sim.dt=36.0",
               "--set", "sim.domain_length=100.0") == 6
    assert run("generate", "--config", config, "--out", tmp_path / "g", "--set", "city.count=60") == 6
