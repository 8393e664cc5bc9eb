import json
import math

import numpy as np
import pytest

from mhrppg.checkpoint import load_checkpoint
from mhrppg.cli import main
from mhrppg.config import config_from_dict
from mhrppg.data import SynthSpec, generate_synthetic, read_signal_csv
from mhrppg.errors import DivergenceError
from mhrppg.metrics import EvalReport
from mhrppg.network import MultiHierarchicalNet
from mhrppg.train import (VARIANTS, Sample, read_ablation_csv, save_net, split_samples, train,
                          write_ablation_csv)

MICRO = "T = 8\nH = 32\nW = 32\nlffg_channels = 4\nstsc_channels = 8\nskin_channels = 4\n" \
        "epochs = 2\nlr = 0.001\n"


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert main(["synth", "--out", str(root / "data"), "--n", "3", "--frames", "16",
                 "--height", "32", "--width", "32", "--fps", "10", "--hr", "75"]) == 0
    (root / "micro.txt").write_text(MICRO)
    return root


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_layout(dataset):
    d = dataset / "data"
    listed = (d / "dataset.list").read_text().split()
    assert len(listed) == 3
    clip = d / listed[0]
    for name in ("manifest.txt", "frames.raw", "ppg.csv", "landmarks.csv"):
        assert (clip.parent / name).exists()


def test_train_infer_eval_flow(dataset, tmp_path):
    cfg = dataset / "micro.txt"
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--list", dataset / "data/dataset.list",
               "--out", out, "--quiet") == 0
    assert (out / "model.ckpt").exists() and (out / "config.txt").exists()
    assert len((out / "model_loss.csv").read_text().splitlines()) == 3
    manifest = dataset / "data" / (dataset / "data/dataset.list").read_text().split()[0]
    assert run("infer", "--checkpoint", out / "model.ckpt", "--manifest", manifest,
               "--out", tmp_path / "inf") == 0
    assert len(read_signal_csv(tmp_path / "inf/rppg.csv")) == 8
    hr = (tmp_path / "inf/hr.txt").read_text().strip()
    assert hr == "nan" or 42 <= float(hr) <= 240
    assert run("eval", "--checkpoint", out / "model.ckpt", "--list",
               dataset / "data/dataset.list", "--out", tmp_path / "ev") == 0
    summary = json.loads((tmp_path / "ev/summary.json").read_text())
    # two 8-frame segments per 16-frame clip
    assert summary["n"] == 6 and summary["histogram"]["edges"] == [3.0, 5.0, 10.0]


def test_same_seed_bitwise_identical_checkpoints(dataset, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--config", dataset / "micro.txt", "--list",
                   dataset / "data/dataset.list", "--out", tmp_path / name,
                   "--seed", 7, "--quiet") == 0
    assert (tmp_path / "a/model.ckpt").read_bytes() == (tmp_path / "b/model.ckpt").read_bytes()


def test_zero_epochs_checkpoint_is_initialisation(dataset, tmp_path):
    assert run("train", "--config", dataset / "micro.txt", "--list",
               dataset / "data/dataset.list", "--out", tmp_path, "--epochs", 0,
               "--seed", 3, "--quiet") == 0
    tensors, meta = load_checkpoint(tmp_path / "model.ckpt")
    cfg = config_from_dict(meta["config"])
    init = MultiHierarchicalNet(cfg.net, seed=3).state_dict()
    assert tensors.keys() == init.keys()
    for k in init:
        np.testing.assert_array_equal(tensors[k], init[k])


def test_untrained_network_infers_valid_length(dataset, tmp_path):
    cfg = config_from_dict({"T": 8, "H": 32, "W": 32, "lffg_channels": 4, "stsc_channels": 8,
                            "skin_channels": 4})
    save_net(tmp_path / "init.ckpt", MultiHierarchicalNet(cfg.net, seed=0).state_dict(), cfg)
    manifest = dataset / "data" / (dataset / "data/dataset.list").read_text().split()[0]
    assert run("infer", "--checkpoint", tmp_path / "init.ckpt", "--manifest", manifest,
               "--out", tmp_path) == 0
    assert len(read_signal_csv(tmp_path / "rppg.csv")) == 8


def test_config_checkpoint_mismatch_reported(dataset, tmp_path, capsys):
    cfg = config_from_dict({"T": 8, "H": 32, "W": 32, "lffg_channels": 4, "stsc_channels": 8,
                            "skin_channels": 4})
    save_net(tmp_path / "init.ckpt", MultiHierarchicalNet(cfg.net, seed=0).state_dict(), cfg)
    (tmp_path / "other.txt").write_text(MICRO.replace("lffg_channels = 4", "lffg_channels = 6"))
    manifest = dataset / "data" / (dataset / "data/dataset.list").read_text().split()[0]
    code = run("infer", "--checkpoint", tmp_path / "init.ckpt", "--config",
               tmp_path / "other.txt", "--manifest", manifest, "--out", tmp_path)
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: config:") and "mismatch" in err[0]


def test_missing_manifest_error_line(tmp_path, capsys):
    assert run("infer", "--checkpoint", tmp_path / "none.ckpt", "--manifest",
               tmp_path / "none.txt", "--out", tmp_path) == 2
    assert capsys.readouterr().err.startswith("error: ")


def test_baseline_cli(dataset, tmp_path):
    manifest = dataset / "data" / (dataset / "data/dataset.list").read_text().split()[0]
    assert run("baseline", "--method", "pos", "--clip", manifest, "--out", tmp_path) == 0
    assert len(read_signal_csv(tmp_path / "pos_signal.csv")) == 16
    assert math.isfinite(float((tmp_path / "pos_hr.txt").read_text()))


def test_report_names_missing_variants(dataset, tmp_path, capsys):
    (tmp_path / "ck").mkdir()
    code = run("report", "--config", dataset / "micro.txt", "--checkpoints", tmp_path / "ck",
               "--list", dataset / "data/dataset.list", "--out", tmp_path)
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error: data:")
    for _, slug, _ in VARIANTS:
        assert slug in err


def test_report_takes_segmenting_from_checkpoints(dataset, tmp_path):
    lst = dataset / "data/dataset.list"
    for _, slug, _ in VARIANTS:
        assert run("train", "--config", dataset / "micro.txt", "--list", lst, "--variant", slug,
                   "--epochs", 1, "--quiet", "--out", tmp_path / "ck") == 0
    # no --config: T = 8 must come from the checkpoints, not the 150-frame default
    assert run("report", "--checkpoints", tmp_path / "ck", "--list", lst,
               "--out", tmp_path) == 0
    assert list(read_ablation_csv(tmp_path / "ablation.csv")) == [v[0] for v in VARIANTS]
    lines = (tmp_path / "ablation.csv").read_text().splitlines()[1:]
    assert [line.rsplit(",", 1)[1] for line in lines] == ["6"] * len(VARIANTS)


def test_variant_set_matches_ablation_table():
    assert [v[0] for v in VARIANTS] == [
        "No C_feature extractor", "No Skin Map", "Loss (L_r)", "Loss (L_r + L_f)",
        "Proposed Method (L_r + L_f + L_s)"]


def test_ablation_csv_round_trip(tmp_path):
    rows = [(label, EvalReport(1.0 / (i + 3), math.sqrt(2) + i, 0.1 * i, None if i == 2 else
                               0.9 - i / 7, [])) for i, (label, _, _) in enumerate(VARIANTS)]
    write_ablation_csv(rows, tmp_path / "a.csv")
    back = read_ablation_csv(tmp_path / "a.csv")
    assert list(back) == [r[0] for r in rows]
    for label, rep in rows:
        got = back[label]
        assert (got.mae, got.rmse, got.sd_e, got.r) == (rep.mae, rep.rmse, rep.sd_e, rep.r)


def micro_sample(clip_id="c", nan=False):
    syn = generate_synthetic(SynthSpec(hr=75, fps=10, T=8, H=16, W=16), seed=0)
    frames = syn.clip.frames.copy()
    if nan:
        frames[:, 3] = np.nan
    return Sample(clip_id, frames, syn.ppg.values, syn.hr, 10.0, None)


def test_divergence_names_epoch_and_batch():
    cfg = config_from_dict({"T": 8, "H": 16, "W": 16, "lffg_channels": 2, "stsc_channels": 4,
                            "skin_channels": 2, "epochs": 1, "use_skinmap": False})
    with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
        train(cfg, [micro_sample(nan=True)])


def test_split_by_clip_four_to_one():
    samples = [micro_sample(f"clip{i}@{s}") for i in range(10) for s in (0, 8)]
    tr, val = split_samples(samples, 0.2, seed=0)
    tr_ids = {s.clip_id.split("@")[0] for s in tr}
    val_ids = {s.clip_id.split("@")[0] for s in val}
    assert not tr_ids & val_ids
    assert (len(tr_ids), len(val_ids)) == (8, 2)
