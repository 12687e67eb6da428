import json

import numpy as np
import pytest

from decolearn import dclt
from decolearn.cli import main
from decolearn.config import ConfigError, RunConfig, build_config, config_from_manifest, run_manifest

SMALL = ["--dataset.n_train", "4", "--dataset.n_val", "2", "--dataset.n_test", "2", "--dataset.size", "32"]
TINY = ["--model.recon_blocks", "1", "--model.recon_width", "4", "--model.reg_levels", "2",
        "--model.reg_width", "4", "--train.iterations", "3", "--train.batch_size", "2",
        "--train.record_wall_time", "false"]


def test_precedence_flags_over_file_over_defaults(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("train:\n  iterations: 77\n  lr_rec: 0.002\nmodel:\n  recon_width: 8\n")
    cfg = build_config(f, {"train.iterations": "5"})
    assert cfg.train.iterations == 5
    assert cfg.train.lr_rec == 0.002 and cfg.model.recon_width == 8
    assert cfg.train.batch_size == RunConfig().train.batch_size


def test_flat_json_file(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"dataset.acceleration": 5, "train.record_wall_time": False}))
    cfg = build_config(f)
    assert cfg.dataset.acceleration == 5.0 and cfg.train.record_wall_time is False


@pytest.mark.parametrize("over", [{"train.nope": 1}, {"train.iterations": "abc"}, {"train.iterations": "0"},
                                  {"loss.distance": "l7"}, {"dataset.acceleration": "0.5"}])
def test_invalid_values_are_rejected(over):
    with pytest.raises(ConfigError):
        build_config(None, over)


def test_manifest_roundtrip():
    cfg = build_config(None, {"train.seed": "9", "model.recon_width": "12"})
    m = run_manifest(cfg, "train")
    assert config_from_manifest(json.loads(json.dumps(m))).flat() == cfg.flat()
    assert m["seeds"]["train"] == 9 and "open_defaults" in m


def test_unknown_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--out", "x", "--train.bogus", "1"])
    assert e.value.code != 0


def test_missing_data_returns_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err.lower()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth-data", "--out", str(d)] + SMALL) == 0
    return d


def test_train_reconstruct_evaluate(data_dir, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--out", str(run)] + TINY) == 0
    assert (run / "final" / "recon").is_dir() and (run / "metrics.csv").exists()
    rec = tmp_path / "rec"
    assert main(["reconstruct", "--data", str(data_dir), "--out", str(rec), "--checkpoint", str(run / "final")]) == 0
    assert dclt.load_array(rec / "recon.dclt").shape == (2, 32, 32)
    assert len(list(rec.glob("*.pgm"))) == 2
    assert main(["evaluate", "--data", str(data_dir), "--images", str(rec), "--out", str(tmp_path / "r.csv")]) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "sample_id,method,acceleration,sigma,psnr_db,ssim" and len(lines) == 3


def test_reconstruct_never_reads_registration(data_dir, tmp_path):
    run = tmp_path / "run"
    main(["train", "--data", str(data_dir), "--out", str(run)] + TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["reconstruct", "--data", str(data_dir), "--out", str(a), "--checkpoint", str(run / "final"), "--no-pgm"])
    for f in (run / "final" / "reg").iterdir():
        f.write_bytes(b"\x00" * 7)
    main(["reconstruct", "--data", str(data_dir), "--out", str(b), "--checkpoint", str(run / "final"), "--no-pgm"])
    assert (a / "recon.dclt").read_bytes() == (b / "recon.dclt").read_bytes()


def test_rerun_from_manifest_is_identical(data_dir, tmp_path):
    main(["train", "--data", str(data_dir), "--out", str(tmp_path / "one")] + TINY)
    assert main(["train", "--manifest", str(tmp_path / "one" / "run_manifest.json"),
                 "--out", str(tmp_path / "two")]) == 0
    assert (tmp_path / "one" / "metrics.csv").read_bytes() == (tmp_path / "two" / "metrics.csv").read_bytes()


def test_baseline_reconstructions(data_dir, tmp_path):
    assert main(["reconstruct", "--data", str(data_dir), "--out", str(tmp_path / "z"),
                 "--method", "zero_filled", "--no-pgm"]) == 0
    assert main(["reconstruct", "--data", str(data_dir), "--out", str(tmp_path / "t"), "--method", "tv",
                 "--tv.iterations", "5", "--no-pgm"]) == 0
    z = dclt.load_array(tmp_path / "z" / "recon.dclt")
    t = dclt.load_array(tmp_path / "t" / "recon.dclt")
    assert z.shape == t.shape and not np.array_equal(z, t)
    assert json.loads((tmp_path / "t" / "manifest.json").read_text())["tau"] == RunConfig().tv.tau


def test_network_reconstruct_needs_checkpoint(data_dir, tmp_path):
    assert main(["reconstruct", "--data", str(data_dir), "--out", str(tmp_path / "x")]) == 1
