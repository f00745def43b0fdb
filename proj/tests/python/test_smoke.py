import json
import math

import numpy as np
import pytest

import ichseq


def test_window_midpoint_and_stack():
    assert ichseq.apply_window(np.array([40.0]), 40.0, 80.0)[0] == 0.5
    out = ichseq.stack_windows(np.full((4, 5), 40.0))
    assert out.shape == (3, 4, 5)
    assert out[1, 0, 0] == pytest.approx(72.5 / 215.0)
    with pytest.raises(ichseq.ConfigError):
        ichseq.apply_window(np.zeros(3), 40.0, 0.0)


def test_metrics_match_simple_references():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.01, 0.99, size=(20, 6))
    y = rng.integers(0, 2, size=(20, 6)).astype(float)
    w = np.array([1, 1, 1, 1, 1, 2]) / 7.0
    ref = sum(w[c] * -np.mean(y[:, c] * np.log(p[:, c]) + (1 - y[:, c]) * np.log(1 - p[:, c])) for c in range(6))
    assert ichseq.weighted_log_loss(p, y) == pytest.approx(ref, abs=1e-12)

    assert ichseq.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert ichseq.roc_auc([0.3, 0.2], [1, 1]) is None
    assert ichseq.aggregate_scan(p) == list(p.max(axis=0))


def test_schedule():
    assert ichseq.lr_at(100, 1e-3, 100, 1100) == pytest.approx(1e-3, abs=1e-15)
    assert ichseq.lr_at(600, 1e-3, 100, 1100) == pytest.approx(5e-4, abs=1e-15)
    assert ichseq.lr_at(1100, 1e-3, 100, 1100, 1e-6) == pytest.approx(1e-6, abs=1e-15)


def test_synth_manifest_and_ingest(tmp_path):
    out = ichseq.synth(tmp_path / "d", n_studies=3, slices_per_study=2, size=16, seed=1)
    assert out["n_slices"] == 6
    rows = ichseq.read_manifest(out["manifest"])
    assert len(rows) == 6
    for r in rows:
        assert r["labels"][5] == int(any(r["labels"][:5]))
    built, excluded = ichseq.build_manifest(tmp_path / "d" / "raw", out["labels_csv"])
    assert excluded == []
    assert [r["slice_id"] for r in built] == [r["slice_id"] for r in rows]
    with pytest.raises(ichseq.IoError):
        ichseq.build_manifest(tmp_path / "missing")


def test_train_predict_validate_roundtrip(tmp_path):
    data = tmp_path / "data"
    ichseq.synth(data, n_studies=4, slices_per_study=3, size=16, seed=2, val_fraction=0.5)
    conf = tmp_path / "run.conf"
    conf.write_text(
        "[run]\nname = py\n[data]\n"
        f"train_manifest = {data / 'train.csv'}\nval_manifest = {data / 'val.csv'}\n"
        "[model]\nbackbone = tiny_cnn\nfeature_dim = 8\nlstm_hidden = 4\nlstm_layers = 1\n"
        "input_height = 16\ninput_width = 16\ntiny_channels = 4\n[train]\nepochs = 2\n"
    )
    assert "epochs = 3" in ichseq.config_text(str(conf), ["train.epochs=3"])
    code, out, err = ichseq.run_cli(["--config", str(conf), "--out", str(tmp_path / "runs"), "train"])
    assert code == 0, err
    ckpt = tmp_path / "runs" / "py" / "checkpoint.bin"

    preds = ichseq.predict(ckpt, data / "manifest.csv")
    assert len(preds) == 4
    for slice_ids, probs in preds.values():
        assert probs.shape == (len(slice_ids), 6)
        assert np.all((probs > 0) & (probs < 1))

    report = json.loads(ichseq.validate(ckpt, data / "val.csv"))
    assert math.isfinite(report["weighted_log_loss"])

    code, _, err = ichseq.run_cli(["train"])
    assert code == 2
    assert json.loads(err)["error"] == "config"
