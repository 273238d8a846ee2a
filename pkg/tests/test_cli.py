import csv
import hashlib
import json

import pytest

from sss.cli import main
from sss.config import RunConfig, apply_override, load_config
from sss.errors import ConfigError

SMALL = {
    "synth": {"n_series": 20, "length_range": [600, 800], "burst_len_range": [50, 100]},
    "train": {"window_len": 32, "patch_len": 8, "patch_stride": 4, "d_model": 8, "hidden": 8,
              "epochs": 2},
}


def _write_config(path, extra=None):
    path.write_text(json.dumps({**SMALL, **(extra or {})}))
    return str(path)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_config(root / "cfg.json", {"out_dir": str(root / "run")})
    assert main(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--dataset", str(root / "data")]) == 0
    return root


class TestSynth:
    def test_deterministic(self, tmp_path):
        cfg = _write_config(tmp_path / "cfg.json")
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        assert main(["synth", "--config", cfg, "--seed-data", "1", "--out", str(tmp_path / "c")]) == 0
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b") != _digest(tmp_path / "c")

    def test_unknown_key(self, tmp_path):
        cfg = _write_config(tmp_path / "cfg.json", {"bogus": 1})
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "a")]) == 2

    def test_unknown_nested_key(self, tmp_path):
        cfg = _write_config(tmp_path / "cfg.json")
        assert main(["synth", "--config", cfg, "--set", "train.dropout=0.1", "--out", str(tmp_path / "a")]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "a")]) == 1


class TestTrainEval:
    def test_outputs(self, trained):
        run = trained / "run"
        assert (run / "model.bin").is_file() and (run / "model.bin.json").is_file()
        rows = list(csv.DictReader(open(run / "history.csv")))
        assert len(rows) == 2

    def test_eval_json(self, trained, capsys):
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(trained / "run" / "model.bin")]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert {"f1", "auc", "accuracy"} <= set(rep)

    def test_predict_csv(self, trained):
        out = trained / "pred.csv"
        assert main(["predict", "--checkpoint", str(trained / "run" / "model.bin"), "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert rows and all(abs(float(r["p0"]) + float(r["p1"]) - 1) < 1e-9 for r in rows)

    def test_missing_checkpoint(self, trained):
        assert main(["eval", "--checkpoint", str(trained / "absent.bin")]) == 1

    def test_incompatible_window(self, trained, tmp_path):
        meta_path = trained / "run" / "model.bin.json"
        meta = json.loads(meta_path.read_text())
        meta["config"]["train"]["window_len"] = 64
        bad = tmp_path / "model.bin"
        bad.write_bytes((trained / "run" / "model.bin").read_bytes())
        (tmp_path / "model.bin.json").write_text(json.dumps(meta))
        assert main(["eval", "--checkpoint", str(bad)]) == 4

    def test_identical_history_on_rerun(self, trained, tmp_path):
        cfg = _write_config(tmp_path / "cfg.json", {"out_dir": str(tmp_path / "run")})
        assert main(["train", "--config", cfg, "--dataset", str(trained / "data")]) == 0
        for name in ("history.csv", "model.bin"):
            assert (tmp_path / "run" / name).read_bytes() == (trained / "run" / name).read_bytes()

    def test_multiple_runs_summary(self, trained, tmp_path):
        cfg = _write_config(tmp_path / "cfg.json", {"out_dir": str(tmp_path / "multi")})
        assert main(["train", "--config", cfg, "--dataset", str(trained / "data"), "--epochs", "1",
                     "--runs", "2"]) == 0
        summary = json.loads((tmp_path / "multi" / "summary.json").read_text())
        assert len(summary["runs"]) == 2 and (tmp_path / "multi" / "run1" / "model.bin").is_file()


class TestHeatmap:
    def test_bins_tile_series(self, trained):
        out = trained / "hm" / "syn0001.csv"
        assert main(["heatmap", "--checkpoint", str(trained / "run" / "model.bin"), "--id", "syn0001",
                     "--out", str(out), "--bin-width", "50"]) == 0
        rows = [(int(r["bin_start"]), int(r["bin_end"]), float(r["probability"])) for r in csv.DictReader(open(out))]
        assert rows[0][0] == 0 and all(a[1] == b[0] for a, b in zip(rows, rows[1:]))
        series_len = sum(1 for _ in open(trained / "data" / "series" / "syn0001.csv"))
        assert rows[-1][1] == series_len
        assert all(0 <= p <= 1 for *_, p in rows)
        assert out.with_suffix(".pgm").is_file()

    def test_unknown_id(self, trained, tmp_path):
        assert main(["heatmap", "--checkpoint", str(trained / "run" / "model.bin"), "--id", "nope",
                     "--out", str(tmp_path / "x.csv")]) == 1


class TestConfig:
    def test_roundtrip(self):
        cfg = RunConfig.from_dict({**SMALL, "seeds": {"data": 3, "init": 4, "sampler": 5}})
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_seed_routing(self):
        cfg = RunConfig.from_dict({"seeds": {"data": 3, "init": 4, "sampler": 5}})
        assert cfg.synth_config().seed == 3
        t = cfg.train_config()
        assert (t.init_seed, t.sampler_seed) == (4, 5)

    def test_override_parsing(self):
        data = {}
        apply_override(data, "train.lr=0.001")
        apply_override(data, "dataset=some/dir")
        assert data == {"train": {"lr": 0.001}, "dataset": "some/dir"}
        with pytest.raises(ConfigError):
            apply_override(data, "novalue")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load_config(None, ["train.epochs=0"])
