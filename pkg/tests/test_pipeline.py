"""Experiment orchestration: folds, strategies, reports, determinism."""

import json
from dataclasses import replace

import numpy as np
import pytest

from renalseg.pipeline import (STRATEGIES, ExperimentConfig, _prepare_case,
                               compare_strategies, config_hash, fold_subjects,
                               otsu_threshold, run_strategy)
from renalseg.dicenet import TrainConfig
from renalseg.synthkid import PhantomSpec, generate

TINY_PHANTOM = PhantomSpec(seed=0, dims=(96, 96, 12), n_subjects=3,
                           timepoints_per_subject=1)


def _tiny_config(strategy, out_dir, **kw):
    return ExperimentConfig(
        strategy=strategy,
        phantom=TINY_PHANTOM,
        train=TrainConfig(epochs=2, learning_rate=0.01),
        out_dir=str(out_dir),
        n_folds=2,
        **kw,
    )


# ---------------------------------------------------------------------------
# Small pieces
# ---------------------------------------------------------------------------

def test_strategy_name_validated():
    with pytest.raises(ValueError):
        ExperimentConfig(strategy="bogus")


def test_config_roundtrip_through_dict(tmp_path):
    cfg = _tiny_config("em_only", tmp_path)
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_config_hash_ignores_strategy_and_outdir(tmp_path):
    a = _tiny_config("em_only", tmp_path / "a")
    b = _tiny_config("proposed", tmp_path / "b")
    assert config_hash(a) == config_hash(b)
    c = replace(a, master_seed=1)
    assert config_hash(a) != config_hash(c)


def test_otsu_separates_bimodal(rng):
    data = np.concatenate([rng.normal(0.2, 0.02, 4000),
                           rng.normal(0.8, 0.02, 1000)])
    thr = otsu_threshold(data)
    # The criterion is flat across the empty gap between the modes, so any
    # separating threshold is acceptable.
    assert 0.25 < thr < 0.75
    assert np.mean(data >= thr) == pytest.approx(0.2, abs=1e-3)


def test_fold_subjects():
    assert fold_subjects(15, 5, full_loao=False) == [0, 3, 6, 9, 12]
    assert fold_subjects(15, 5, full_loao=True) == list(range(15))
    assert fold_subjects(3, 5, full_loao=False) == [0, 1, 2]


def test_prepare_case_shapes():
    case = generate(TINY_PHANTOM)[0]
    cfg = _tiny_config("proposed", "unused")
    for strategy, dims in (("unet_raw", (64, 64, 16)),
                           ("cc_unet", (64, 64, 16)),
                           ("proposed", (64, 64, 16)),
                           ("proposed_sr", (64, 64, 64))):
        vol, truth, ctx = _prepare_case(case, cfg, strategy)
        assert vol.dims == dims
        assert truth.dims == dims
        if strategy != "unet_raw":
            assert "box" in ctx


# ---------------------------------------------------------------------------
# run_strategy
# ---------------------------------------------------------------------------

def test_run_em_only(tmp_path):
    cfg = _tiny_config("em_only", tmp_path)
    manifest, report = run_strategy(cfg)
    assert report["strategy"] == "em_only"
    assert len(report["cases"]) == 2          # one test case per fold
    assert report["summary"]["dsc"]["mean"] > 0.0
    assert (tmp_path / "report_em_only.json").exists()
    assert (tmp_path / "manifest_em_only.json").exists()


def test_run_no_fold_leakage(tmp_path):
    cfg = _tiny_config("em_only", tmp_path)
    manifest, _ = run_strategy(cfg)
    for fold in manifest["folds"]:
        assert not (set(fold["train_cases"]) & set(fold["test_cases"]))


def test_run_byte_identical_reports(tmp_path):
    cfg_a = _tiny_config("em_only", tmp_path / "a")
    cfg_b = _tiny_config("em_only", tmp_path / "b")
    run_strategy(cfg_a)
    run_strategy(cfg_b)
    a = (tmp_path / "a" / "report_em_only.json").read_bytes()
    b = (tmp_path / "b" / "report_em_only.json").read_bytes()
    assert a == b


def test_run_trained_strategy(tmp_path):
    cfg = _tiny_config("proposed", tmp_path)
    cfg = replace(cfg, n_folds=1)
    manifest, report = run_strategy(cfg)
    assert len(report["cases"]) == 1
    assert 0.0 <= report["cases"][0]["dsc"] <= 1.0
    assert (tmp_path / "proposed_fold0.un3d").exists()
    assert manifest["folds"][0]["errors"] == []


# ---------------------------------------------------------------------------
# compare_strategies
# ---------------------------------------------------------------------------

def _fake_report(strategy, dsc, h="abc"):
    return {
        "strategy": strategy,
        "config_hash": h,
        "summary": {"dsc": {"mean": dsc, "std": 0.05},
                    "vd": {"mean": 0.1, "std": 0.02},
                    "ppv": {"mean": 0.9, "std": 0.03}},
    }


def test_compare_sorts_by_dsc():
    reports = [_fake_report("unet_raw", 0.49), _fake_report("proposed", 0.88),
               _fake_report("em_only", 0.65), _fake_report("cc_unet", 0.60)]
    out = compare_strategies(reports)
    assert out["order"] == ["proposed", "em_only", "cc_unet", "unet_raw"]
    assert out["ordering_flags"] == []


def test_compare_shuffle_invariant():
    reports = [_fake_report("proposed", 0.88), _fake_report("em_only", 0.65)]
    assert compare_strategies(reports) == compare_strategies(reports[::-1])


def test_compare_flags_contradiction():
    reports = [_fake_report("proposed", 0.5), _fake_report("em_only", 0.8)]
    out = compare_strategies(reports)
    assert out["ordering_flags"]


def test_compare_reports_sr_difference():
    reports = [_fake_report("proposed", 0.88), _fake_report("proposed_sr", 0.86)]
    out = compare_strategies(reports)
    assert out["mean_dsc"]["proposed"] == 0.88
    assert out["mean_dsc"]["proposed_sr"] == 0.86


def test_compare_mismatched_hashes():
    with pytest.raises(ValueError):
        compare_strategies([_fake_report("proposed", 0.9, "aaa"),
                            _fake_report("em_only", 0.6, "bbb")])


def test_compare_needs_two():
    with pytest.raises(ValueError):
        compare_strategies([_fake_report("proposed", 0.9)])


def test_strategy_list_is_stable():
    assert STRATEGIES == ("unet_raw", "cc_unet", "em_only", "proposed",
                          "proposed_sr")
