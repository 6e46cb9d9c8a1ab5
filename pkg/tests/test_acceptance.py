"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the summary lines. The
strategy-ordering criterion trains 50 networks and dominates the runtime.
"""

import time

import numpy as np

from renalseg.augment import expand_training_set
from renalseg.dicenet import TrainConfig, UNet3dSpec, build_unet
from renalseg.dicenet import ops
from renalseg.dicenet.loss import weighted_dice_loss
from renalseg.emseg import EmConfig, em_segment
from renalseg.localizer import LocalizeConfig, localize
from renalseg.metrics import evaluate
from renalseg.pipeline import ExperimentConfig, run_strategy
from renalseg.synthkid import PhantomSpec, generate
from renalseg.volgrid import LabelVolume, Volume3


def _report(number, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {number} {name}: {status} ({detail})")
    assert ok, f"criterion {number} ({name}): {detail}"


def _fd_grad(f, x, eps=1e-3):
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def _rel_err(analytic, numeric):
    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return np.abs(analytic - numeric).max() / denom


# ---------------------------------------------------------------------------
# 1. Gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    t0 = time.time()
    worst = 0.0

    def check(forward, backward, x, rng, grads_from_tuple=0):
        nonlocal worst
        y, cache = forward(x)
        v = rng.normal(0, 1, y.shape)
        g = backward(v, cache)
        if isinstance(g, tuple):
            g = g[grads_from_tuple]
        fd = _fd_grad(lambda z: float((v * forward(z)[0]).sum()), x.copy())
        worst = max(worst, _rel_err(g, fd))

    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = rng.normal(0, 1, (2, 2, 4, 4, 4))
        w3 = rng.normal(0, 0.5, (2, 2, 3, 3, 3))
        w1 = rng.normal(0, 0.5, (3, 2))
        check(lambda z: ops.conv3d_forward(z, w3, np.zeros(2)),
              ops.conv3d_backward, x, rng)
        check(lambda z: ops.conv1x1_forward(z, w1, np.zeros(3)),
              ops.conv1x1_backward, x, rng)
        # weight/bias gradients of conv3d
        y, cache = ops.conv3d_forward(x, w3, np.zeros(2))
        v = rng.normal(0, 1, y.shape)
        _, gw, gb = ops.conv3d_backward(v, cache)
        fd_w = _fd_grad(lambda wz: float(
            (v * ops.conv3d_forward(x, wz, np.zeros(2))[0]).sum()), w3.copy())
        worst = max(worst, _rel_err(gw, fd_w))
        # pooling on tie-free values
        xp = rng.permutation(x.size).reshape(x.shape) * 1.0
        check(lambda z: ops.maxpool3d_forward(z, (2, 2, 2)),
              ops.maxpool3d_backward, xp, rng)
        check(lambda z: ops.upsample3d_forward(z, (2, 2, 2)),
              ops.upsample3d_backward, x, rng)
        xr = x.copy()
        xr[np.abs(xr) < 0.05] = 0.1      # keep clear of the relu kink
        check(ops.relu_forward, ops.relu_backward, xr, rng)
        check(ops.sigmoid_forward, ops.sigmoid_backward, x, rng)
        # weighted Dice loss on a 2x1x4x4x2 tensor
        p = rng.uniform(0.05, 0.95, (2, 1, 4, 4, 2))
        q = (rng.random((2, 1, 4, 4, 2)) < 0.3).astype(np.float64)
        q.ravel()[0] = 1.0
        _, grad = weighted_dice_loss(p, q)
        fd = _fd_grad(lambda z: weighted_dice_loss(z, q)[0], p.copy())
        worst = max(worst, _rel_err(grad.astype(np.float64), fd))

    elapsed = time.time() - t0
    _report(1, "gradient correctness",
            worst < 1e-3 and elapsed < 60,
            f"max rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. EM correctness
# ---------------------------------------------------------------------------

def test_criterion_2_em_correctness():
    t0 = time.time()
    rng = np.random.default_rng(7)
    true_means = (10.0, 20.0, 30.0)      # 10-sigma separation at sigma=1
    n = 32 ** 3
    counts = (n // 3, n // 3, n - 2 * (n // 3))
    samples = np.concatenate([
        rng.normal(m, 1.0, c) for m, c in zip(true_means, counts)])
    rng.shuffle(samples)
    vol = Volume3(samples.reshape(32, 32, 32).astype(np.float32))

    result = em_segment(vol, EmConfig(num_classes=3, em_iterations=7,
                                      mrf_beta=0.0))
    rel_errs = [abs(est - true) / true
                for est, true in zip(result.mixture.means, true_means)]
    ll = result.log_likelihoods
    monotone = all(b >= a - 1e-6 for a, b in zip(ll, ll[1:]))
    elapsed = time.time() - t0
    _report(2, "EM correctness",
            max(rel_errs) < 0.02 and monotone and len(ll) == 7
            and elapsed < 60,
            f"mean rel errs {[f'{e:.4f}' for e in rel_errs]}, "
            f"monotone={monotone}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. Localization recall
# ---------------------------------------------------------------------------

def test_criterion_3_localization_recall():
    t0 = time.time()
    spec = PhantomSpec(seed=42, n_subjects=5, timepoints_per_subject=4,
                       noise_sigma=0.0)
    cases = generate(spec)
    assert len(cases) >= 20
    cfg = LocalizeConfig(margin_px=5)
    covered = 0
    for case in cases:
        box, _, _ = localize(case.fa, cfg, EmConfig())
        xs, ys, _ = np.nonzero(case.truth.labels)
        inside = ((xs >= box.x0) & (xs <= box.x1)
                  & (ys >= box.y0) & (ys <= box.y1))
        if inside.mean() >= 0.99:
            covered += 1
    frac = covered / len(cases)
    elapsed = time.time() - t0
    _report(3, "localization recall",
            frac >= 0.95 and elapsed < 120,
            f"{covered}/{len(cases)} cases covered >= 99%, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. Augmentation arithmetic
# ---------------------------------------------------------------------------

def test_criterion_5_augmentation_arithmetic():
    rng = np.random.default_rng(3)
    dims = (48, 48, 10)
    train = [(Volume3(rng.normal(0.5, 0.2, dims).astype(np.float32)),
              LabelVolume((rng.random(dims) < 0.2).astype(np.uint8), 2))
             for _ in range(180)]
    test_split = [Volume3(rng.normal(0.5, 0.2, dims).astype(np.float32))
                  for _ in range(12)]
    ref = Volume3(np.clip(rng.normal(0.5, 0.12, (32, 32, 8)),
                          0.0, 1.0).astype(np.float32))

    test_bytes_before = [v.data.tobytes() for v in test_split]
    out = expand_training_set(train, ref)
    count_ok = len(out) == 1800

    lo, hi = float(ref.data.min()), float(ref.data.max())

    def norm_hist(data):
        h, _ = np.histogram(data.ravel(), bins=256, range=(lo, hi))
        return h / data.size

    ref_hist = norm_hist(ref.data)
    l1s = [np.abs(norm_hist(a.vol.data) - ref_hist).sum()
           for a in out if a.contrast == "matched"]
    l1_ok = max(l1s) < 0.1

    test_unchanged = all(v.data.tobytes() == b
                         for v, b in zip(test_split, test_bytes_before))
    _report(5, "augmentation arithmetic",
            count_ok and l1_ok and test_unchanged,
            f"180 -> {len(out)}, max hist L1 {max(l1s):.4f}, "
            f"test split unchanged={test_unchanged}")


# ---------------------------------------------------------------------------
# 6. Metric oracle equivalence
# ---------------------------------------------------------------------------

def test_criterion_6_metric_oracle():
    rng = np.random.default_rng(11)
    checked = 0
    max_diff = 0.0
    while checked < 100:
        dims = tuple(int(d) for d in rng.integers(2, 33, 3))
        truth = rng.random(dims) < rng.uniform(0.05, 0.5)
        pred = rng.random(dims) < rng.uniform(0.05, 0.5)
        if not truth.any():
            continue
        # Brute-force voxel-count oracle.
        tp = fp = fn = 0
        for a, b in zip(pred.ravel(), truth.ravel()):
            if a and b:
                tp += 1
            elif a:
                fp += 1
            elif b:
                fn += 1
        n_pred, n_truth = tp + fp, tp + fn
        dsc = 2 * tp / (n_pred + n_truth)
        vd = abs(n_pred - n_truth) / n_truth
        ppv = tp / n_pred if n_pred else 0.0
        m = evaluate(LabelVolume(pred.astype(np.uint8), 2),
                     LabelVolume(truth.astype(np.uint8), 2))
        max_diff = max(max_diff, abs(m.dsc - dsc), abs(m.vd - vd),
                       abs(m.ppv - ppv))
        checked += 1
    _report(6, "metric oracle equivalence",
            max_diff <= 1e-12,
            f"100 pairs, max ratio diff {max_diff:.2e}")


# ---------------------------------------------------------------------------
# 7. Determinism
# ---------------------------------------------------------------------------

def test_criterion_7_determinism(tmp_path):
    base = dict(
        strategy="proposed",
        phantom=PhantomSpec(seed=0, dims=(96, 96, 12), n_subjects=3,
                            timepoints_per_subject=1),
        train=TrainConfig(epochs=2, learning_rate=0.01),
        n_folds=2,
        master_seed=5,
    )
    run_strategy(ExperimentConfig(out_dir=str(tmp_path / "a"), **base))
    run_strategy(ExperimentConfig(out_dir=str(tmp_path / "b"), **base))
    a = (tmp_path / "a" / "report_proposed.json").read_bytes()
    b = (tmp_path / "b" / "report_proposed.json").read_bytes()
    _report(7, "determinism", a == b,
            f"report bytes equal={a == b}, {len(a)} bytes")


# ---------------------------------------------------------------------------
# 8. Reduced-network property
# ---------------------------------------------------------------------------

def test_criterion_8_reduced_network():
    reduced = build_unet(UNet3dSpec(base_channels=16))
    reference = build_unet(UNet3dSpec(base_channels=32))
    ok = len(reduced.params) == len(reference.params)
    detail = []
    for p_red, p_ref in zip(reduced.params, reference.params):
        if p_red.name != p_ref.name:
            ok = False
            break
        # Channel counts are the leading dims of each parameter; they must be
        # exactly half except for the fixed 1-channel input and output head.
        for axis in range(min(p_red.value.ndim, 2)):
            red_c, ref_c = p_red.value.shape[axis], p_ref.value.shape[axis]
            if ref_c in (reference.spec.in_channels, 1) and red_c == ref_c:
                continue
            if red_c * 2 != ref_c:
                ok = False
                detail.append(f"{p_red.name} axis {axis}: {red_c} vs {ref_c}")
    _report(8, "reduced-network channels",
            ok and reduced.parameter_count() < reference.parameter_count(),
            detail or f"{len(reduced.params)} params enumerated, "
                      f"{reduced.parameter_count()} vs "
                      f"{reference.parameter_count()} total")


# ---------------------------------------------------------------------------
# 4. Strategy ordering (runs last: trains 50 networks)
# ---------------------------------------------------------------------------

def test_criterion_4_strategy_ordering(tmp_path):
    t0 = time.time()
    seeds = range(5)
    per_seed = {}
    for seed in seeds:
        means = {}
        for strategy in ("proposed", "em_only", "unet_raw"):
            cfg = ExperimentConfig(
                strategy=strategy,
                out_dir=str(tmp_path / f"seed{seed}_{strategy}"),
                master_seed=seed,
            )
            _, report = run_strategy(cfg)
            means[strategy] = report["summary"]["dsc"]["mean"]
        ok = (means["proposed"] > means["em_only"] > means["unet_raw"]
              and means["proposed"] >= 0.85)
        per_seed[seed] = (ok, means)
        print(f"\n  seed {seed}: proposed={means['proposed']:.3f} "
              f"em_only={means['em_only']:.3f} "
              f"unet_raw={means['unet_raw']:.3f} -> "
              f"{'ok' if ok else 'VIOLATED'}")
    n_ok = sum(ok for ok, _ in per_seed.values())
    elapsed = time.time() - t0
    _report(4, "strategy ordering",
            n_ok >= 4,
            f"{n_ok}/5 seeds satisfy proposed > em_only > unet_raw with "
            f"proposed >= 0.85; {elapsed / 60:.1f} min "
            f"(runtime target 30 min assumes a desktop CPU)")
