import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from transde.cli import RunConfig, ablation_grid, main, read_scores_csv
from transde.data import load_csv

FAST = ["--synth-T", "400", "--window", "30", "--patch-sizes", "3,5", "--d-model", "8", "--epochs", "1"]


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("train", "--data", "synth", "--seed", 7, *FAST, "--out", out) == 0
    return out


def test_train_outputs(trained):
    assert (trained / "model.ckpt").is_file()
    loss = rows(trained / "loss.csv")
    assert loss[0] == ["epoch", "mean_loss_intra"] and len(loss) == 2
    echo = json.loads((trained / "config.json").read_text())
    assert echo["seed"] == 7 and echo["_run"]["command"] == "train"


def test_train_is_deterministic(trained, tmp_path):
    assert run("train", "--data", "synth", "--seed", 7, *FAST, "--out", tmp_path) == 0
    assert (tmp_path / "loss.csv").read_bytes() == (trained / "loss.csv").read_bytes()
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_config_echo_reproduces(trained, tmp_path):
    assert run("train", "--config", trained / "config.json", "--out", tmp_path) == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"window": 100, "patch_sizes": [3]}))
    assert run("train", "--config", cfg, "--out", tmp_path / "x") == 2
    assert run("train", "--config", cfg, *FAST, "--out", tmp_path / "y") == 0


def test_non_divisible_patch(capsys, tmp_path):
    assert run("train", "--window", 100, "--patch-sizes", 3, "--out", tmp_path) == 2
    assert "patch size must divide window" in capsys.readouterr().err


def test_msl_config_accepted(tmp_path):
    assert run("train", "--window", 90, "--patch-sizes", "3,5", "--d-model", 8, "--epochs", 1,
               "--synth-T", 400, "--out", tmp_path) == 0


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"windw": 60}))
    assert run("train", "--config", cfg) == 2


def test_score_and_plot(trained, tmp_path):
    assert run("score", "--checkpoint", trained / "model.ckpt", "--data", "synth", "--seed", 7,
               "--synth-T", 400, "--ratio", "labels", "--plot", "--out", tmp_path) == 0
    table = rows(tmp_path / "scores.csv")
    assert table[0] == ["timestamp", "score", "prediction", "label"]
    assert len(table) == 401
    root = ET.parse(tmp_path / "scores.svg").getroot()
    assert root.tag.endswith("svg")
    assert any(el.tag.endswith("polyline") for el in root)


def test_train_scores_lower_than_test(trained, tmp_path):
    base = ["--checkpoint", trained / "model.ckpt", "--seed", 7, "--synth-T", 400]
    assert run("score", *base, "--data", "synth", "--out", tmp_path / "test") == 0
    from transde.data import SynthConfig, save_csv, synthesize_pair
    train_ds = synthesize_pair(SynthConfig(T=400, seed=7))[0]
    save_csv(train_ds, tmp_path / "train.csv")
    assert run("score", *base, "--test-data", tmp_path / "train.csv", "--out", tmp_path / "train") == 0
    test_scores, _ = read_scores_csv(tmp_path / "test" / "scores.csv")
    train_scores, _ = read_scores_csv(tmp_path / "train" / "scores.csv")
    assert train_scores.mean() < test_scores.mean()


def test_missing_checkpoint(tmp_path):
    assert run("score", "--checkpoint", tmp_path / "none.ckpt", "--out", tmp_path) == 3


def test_checkpoint_mismatch(trained, tmp_path):
    assert run("score", "--checkpoint", trained / "model.ckpt", "--window", 90, "--out", tmp_path) == 2


def test_dimension_mismatch_is_data_error(trained, tmp_path):
    assert run("score", "--checkpoint", trained / "model.ckpt", "--synth-d", 2, "--synth-T", 400,
               "--out", tmp_path) == 3


def write_scores(path, scores, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "score", "prediction", "label"])
        for t, (s, y) in enumerate(zip(scores, labels)):
            w.writerow([t, s, 0, y])


def test_eval_perfect_separation(tmp_path):
    labels = [0] * 8 + [1] * 2
    write_scores(tmp_path / "s.csv", [0.1] * 8 + [0.9] * 2, labels)
    assert run("eval", "--scores", tmp_path / "s.csv", "--ratio", 0.2, "--adjust", "both", "--out", tmp_path) == 0
    result = json.loads((tmp_path / "metrics.json").read_text())
    assert result["raw"]["f1"] == 1.0 and result["adjusted"]["f1"] == 1.0
    assert result["adjusted"]["point_adjusted"] is True and result["raw"]["point_adjusted"] is False
    expected = {"precision", "recall", "f1", "tp", "fp", "fn", "tn", "threshold", "point_adjusted"}
    assert set(result["raw"]) == expected


def test_eval_single_mode_and_adjustment(tmp_path, rng):
    labels = np.zeros(100, dtype=int)
    labels[20:40] = 1
    scores = rng.uniform(size=100)
    write_scores(tmp_path / "s.csv", scores, labels)
    out = {}
    for mode in ("on", "off"):
        assert run("eval", "--scores", tmp_path / "s.csv", "--ratio", 0.1, "--adjust", mode,
                   "--out", tmp_path / mode) == 0
        out[mode] = json.loads((tmp_path / mode / "metrics.json").read_text())
    assert out["on"]["f1"] >= out["off"]["f1"]


def test_eval_missing_labels(tmp_path):
    write_scores(tmp_path / "s.csv", [0.1, 0.2], ["", ""])
    assert run("eval", "--scores", tmp_path / "s.csv", "--out", tmp_path) == 3


def test_synth_reproducible(tmp_path):
    for sub in ("a", "b"):
        assert run("synth", "--seed", 3, "--synth-T", 300, "--out", tmp_path / sub) == 0
    for name in ("train.csv", "test.csv", "anomalies.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run("synth", "--seed", 3, "--synth-T", 300, "--format", "raw", "--out", tmp_path / "r") == 0
    assert (tmp_path / "r" / "test.f32").stat().st_size == 300 * 3 * 4


def test_decompose_constant_and_roundtrip(tmp_path, rng):
    (tmp_path / "c.csv").write_text("a,b\n" + "4.0,-1.5\n" * 20)
    assert run("decompose", "--data", tmp_path / "c.csv", "--out", tmp_path / "c") == 0
    np.testing.assert_allclose(load_csv(tmp_path / "c" / "cyclical.csv").values, 0.0, atol=1e-9)

    values = rng.normal(size=(50, 2))
    with open(tmp_path / "r.csv", "w", encoding="utf-8") as fh:
        fh.write("a,b\n" + "".join(f"{float(x)!r},{float(y)!r}\n" for x, y in values))
    assert run("decompose", "--data", tmp_path / "r.csv", "--decompose-window", 15, "--alpha", 10,
               "--out", tmp_path / "r") == 0
    trend = load_csv(tmp_path / "r" / "trend.csv").values
    cyc = load_csv(tmp_path / "r" / "cyclical.csv").values
    np.testing.assert_allclose(trend + cyc, values, atol=1e-9)


def test_ablation_grid_sizes():
    base = RunConfig()
    assert len(ablation_grid(base, ["stop"])) == 4
    assert [c.loss_variant for c in ablation_grid(base, ["loss"])] == ["symmetric-kl", "simple-kl", "js"]
    assert [c.patch_level for c in ablation_grid(base, ["patch-level"])] == ["both", "intra-only", "inter-only"]
    assert len(ablation_grid(base, [], {"stops": [[True, False]], "loss_variants": ["js", "simple-kl"]})) == 2


def test_ablate_writes_table(tmp_path):
    assert run("ablate", "--axis", "patch-level", *FAST, "--ratio", "labels", "--out", tmp_path) == 0
    table = rows(tmp_path / "ablation.csv")
    assert table[0][:4] == ["stop_intra", "stop_inter", "patch_level", "loss_variant"]
    assert [r[2] for r in table[1:]] == ["both", "intra-only", "inter-only"]


def test_unknown_grid_key(tmp_path):
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps({"stopz": []}))
    assert run("ablate", "--grid", grid, *FAST, "--out", tmp_path) == 2
