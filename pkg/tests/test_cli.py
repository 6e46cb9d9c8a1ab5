"""Command-line interface round trips on tiny inputs."""

import json

import numpy as np
import pytest

from renalseg.cli import main
from renalseg.volgrid import (LabelVolume, Volume3, read_lab3, read_vol3,
                              write_lab3, write_vol3)

from conftest import random_mask, random_volume


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_synth_writes_cases_and_manifest(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({
        "dims": [96, 96, 12], "n_subjects": 2, "timepoints_per_subject": 1,
    }))
    outdir = tmp_path / "cases"
    assert main(["synth", "--config", str(cfg), "--seed", "3",
                 "--outdir", str(outdir)]) == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert len(manifest["cases"]) == 2
    case = manifest["cases"][0]
    assert read_vol3(case["fa"]).dims == (96, 96, 12)
    assert read_lab3(case["truth"]).num_classes == 2


def test_emseg_command(rng, tmp_path):
    data = np.concatenate([rng.normal(0, 1, 500),
                           rng.normal(20, 1, 500)]).reshape(10, 10, 10)
    write_vol3(Volume3(data.astype(np.float32)), tmp_path / "in.vol3")
    diag = tmp_path / "diag.json"
    assert main(["emseg", "--input", str(tmp_path / "in.vol3"),
                 "--classes", "2", "--out", str(tmp_path / "out.lab3"),
                 "--diag", str(diag)]) == 0
    labels = read_lab3(tmp_path / "out.lab3")
    assert labels.num_classes == 2
    d = json.loads(diag.read_text())
    assert len(d["log_likelihoods"]) == 7
    assert len(d["mixture"]["means"]) == 2


def test_eval_command(rng, tmp_path, capsys):
    mask = random_mask(rng, (6, 6, 3))
    if not mask.labels.any():
        mask = LabelVolume(np.ones((6, 6, 3), dtype=np.uint8), 2)
    write_lab3(mask, tmp_path / "a.lab3")
    write_lab3(mask, tmp_path / "b.lab3")
    out = tmp_path / "m.json"
    assert main(["eval", "--pred", str(tmp_path / "a.lab3"),
                 "--truth", str(tmp_path / "b.lab3"), "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m == {"dsc": 1.0, "vd": 0.0, "ppv": 1.0}


def test_augment_command(rng, tmp_path):
    write_vol3(random_volume(rng, (10, 10, 4)), tmp_path / "v.vol3")
    write_lab3(random_mask(rng, (10, 10, 4)), tmp_path / "m.lab3")
    write_vol3(random_volume(rng, (10, 10, 4)), tmp_path / "r.vol3")
    outdir = tmp_path / "aug"
    assert main(["augment", "--input", str(tmp_path / "v.vol3"),
                 "--mask", str(tmp_path / "m.lab3"),
                 "--ref", str(tmp_path / "r.vol3"),
                 "--outdir", str(outdir)]) == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert len(manifest) == 10
    assert read_vol3(manifest[0]["vol"]).dims == (10, 10, 4)


def test_train_and_predict_commands(rng, tmp_path):
    pairs = []
    for i in range(2):
        vol = random_volume(rng, (16, 16, 8))
        mask = np.zeros((16, 16, 8), dtype=np.uint8)
        mask[4:9, 5:10, 2:5] = 1
        vp, mp = tmp_path / f"v{i}.vol3", tmp_path / f"m{i}.lab3"
        write_vol3(vol, vp)
        write_lab3(LabelVolume(mask, 2), mp)
        pairs.append([str(vp), str(mp)])
    ckpt = tmp_path / "net.un3d"
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({
        "pairs": pairs,
        "checkpoint": str(ckpt),
        "train": {"epochs": 2, "batch_size": 2, "learning_rate": 0.05},
    }))
    assert main(["train", "--config", str(cfg)]) == 0
    assert ckpt.exists()

    out = tmp_path / "soft.vol3"
    out_mask = tmp_path / "pred.lab3"
    assert main(["predict", "--checkpoint", str(ckpt),
                 "--input", pairs[0][0], "--out", str(out),
                 "--out-mask", str(out_mask)]) == 0
    soft = read_vol3(out)
    assert soft.dims == (16, 16, 8)
    assert 0.0 <= soft.data.min() and soft.data.max() <= 1.0
    assert read_lab3(out_mask).num_classes == 2


def test_localize_command(tmp_path):
    from renalseg.synthkid import PhantomSpec, generate
    case = generate(PhantomSpec(seed=5, dims=(96, 96, 12), n_subjects=1,
                                timepoints_per_subject=1))[0]
    write_vol3(case.fa, tmp_path / "fa.vol3")
    write_vol3(case.md, tmp_path / "md.vol3")
    box_path = tmp_path / "box.json"
    crop_path = tmp_path / "crop.vol3"
    assert main(["localize", "--fa", str(tmp_path / "fa.vol3"),
                 "--md", str(tmp_path / "md.vol3"),
                 "--out-box", str(box_path),
                 "--out-crop", str(crop_path)]) == 0
    box = json.loads(box_path.read_text())
    assert box["x0"] <= box["x1"] and box["y0"] <= box["y1"]
    assert read_vol3(crop_path).dims == (64, 64, 16)


def test_run_and_compare_commands(tmp_path, capsys):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "strategy": "em_only",
        "phantom": {"seed": 0, "dims": [96, 96, 12], "n_subjects": 2,
                    "timepoints_per_subject": 1},
        "out_dir": str(tmp_path / "out"),
        "n_folds": 2,
    }))
    assert main(["run", "--config", str(cfg_path)]) == 0
    report = tmp_path / "out" / "report_em_only.json"
    assert report.exists()

    # compare needs two reports from the same config family; clone the
    # em_only report under a different strategy name.
    other = json.loads(report.read_text())
    other["strategy"] = "proposed"
    other_path = tmp_path / "out" / "report_proposed.json"
    other_path.write_text(json.dumps(other))
    merged_path = tmp_path / "merged.json"
    assert main(["compare", "--reports", str(report), str(other_path),
                 "--out", str(merged_path)]) == 0
    merged = json.loads(merged_path.read_text())
    assert set(merged["mean_dsc"]) == {"em_only", "proposed"}
