import json
import tarfile

import pytest

from hmcd.cli import main
from hmcd.config import RunConfig, validate
from hmcd.errors import SchemaError


def _write(path, text):
    path.write_text(text)
    return path


def test_config_defaults_and_toml(tmp_path):
    cfg = RunConfig.load(None)
    assert cfg.model.preset == "tiny" and cfg.eval.vote_threshold == 3
    p = _write(tmp_path / "c.toml", "seed = 7\n[train]\nepochs = 3\n[nms]\nmode = \"hard\"\n")
    cfg = RunConfig.load(p)
    assert (cfg.seed, cfg.train.epochs, cfg.nms.mode) == (7, 3, "hard")
    assert cfg.train_config().epochs == 3
    back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg


def test_config_rejects_unknown_and_mistyped_keys(tmp_path):
    with pytest.raises(SchemaError, match="train.epoch"):
        RunConfig.load(_write(tmp_path / "a.toml", "[train]\nepoch = 3\n"))
    with pytest.raises(SchemaError):
        RunConfig.load(_write(tmp_path / "b.json", json.dumps({"train": {"epochs": "ten"}})))
    with pytest.raises(SchemaError):
        validate(RunConfig.from_dict({"nms": {"mode": "gaussian"}}))


def test_cli_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path / "c.toml", "[train]\nepoch = 3\n")
    assert main(["synth", "sicd", "--map", "x", "--frames", "y", "--out", str(tmp_path), "--config", str(cfg)]) == 2
    assert "train.epoch" in capsys.readouterr().err


def test_cli_missing_map_exits_2(tmp_path):
    assert main(["synth", "sicd", "--map", str(tmp_path / "nope.json"), "--frames", str(tmp_path / "f.jsonl"),
                 "--out", str(tmp_path / "o")]) == 2


def test_cli_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["synth", "bogus"])
    assert exc.value.code == 2


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "labels=1" in capsys.readouterr().out


@pytest.fixture(scope="module")
def sicd_scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["scene", "sicd", "--out", str(root / "scene"), "--frames", "100", "--size", "64"]) == 0
    return root


def _labels_digest(out):
    return json.loads((out / "summary.json").read_text())["labels_sha256"]


def test_cli_synth_labels_every_frame_and_is_reproducible(sicd_scene):
    scene = sicd_scene / "scene"
    args = ["synth", "sicd", "--map", str(scene / "map.json"), "--frames", str(scene / "frames.jsonl")]
    assert main(args + ["--out", str(sicd_scene / "a"), "--seed", "3"]) == 0
    assert main(args + ["--out", str(sicd_scene / "b"), "--seed", "3"]) == 0
    with tarfile.open(sicd_scene / "a" / "labels.tar") as tf:
        assert len([m for m in tf.getmembers() if m.isfile()]) == 100
    assert _labels_digest(sicd_scene / "a") == _labels_digest(sicd_scene / "b")
    assert (sicd_scene / "a" / "labels.tar").read_bytes() == (sicd_scene / "b" / "labels.tar").read_bytes()


def test_cli_eval_clips_oracle_is_perfect(tmp_path):
    assert main(["scene", "vscd", "--out", str(tmp_path / "s"), "--clips", "4", "--clip-len", "6",
                 "--size", "64"]) == 0
    assert main(["synth", "vscd", "--map", str(tmp_path / "s/map.json"), "--frames",
                 str(tmp_path / "s/frames.jsonl"), "--out", str(tmp_path / "d")]) == 0
    assert main(["eval-clips", "--clips", str(tmp_path / "d"), "--report", str(tmp_path / "r.json"),
                 "--oracle"]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["top1"] == 1.0 and len(report["clips"]) == 4


def test_cli_train_eval_heatmaps(tmp_path):
    assert main(["scene", "sicd", "--out", str(tmp_path / "s"), "--frames", "3", "--size", "64"]) == 0
    assert main(["synth", "sicd", "--map", str(tmp_path / "s/map.json"), "--frames",
                 str(tmp_path / "s/frames.jsonl"), "--out", str(tmp_path / "d")]) == 0
    cfg = _write(tmp_path / "c.toml", "[model]\ninput_size = 64\n[train]\nmax_steps = 2\nbatch_size = 3\n")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "model.safetensors"
    assert ckpt.is_file() and (tmp_path / "run" / "loss.csv").is_file()

    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(tmp_path / "d"), "--config", str(cfg),
                 "--report", str(tmp_path / "ev" / "report.json"), "--plots", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["schema_version"] == 1 and "map" in report
    assert (tmp_path / "ev" / "pr_curves.png").is_file()
    assert (tmp_path / "ev" / "pr_correct.csv").is_file()

    frame = sorted((tmp_path / "d" / "images").glob("*.png"))[0]
    assert main(["heatmaps", "--checkpoint", str(ckpt), "--frame", str(frame),
                 "--out", str(tmp_path / "hm")]) == 0
    assert len(list((tmp_path / "hm").glob("pcd_s*_c*.png"))) == 9

    wrong = _write(tmp_path / "w.toml", "[model]\npreset = \"darknet53-like\"\ninput_size = 64\n")
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(tmp_path / "d"), "--config", str(wrong),
                 "--report", str(tmp_path / "x.json")]) == 2
