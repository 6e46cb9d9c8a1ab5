"""Segmentation metrics (DSC, VD, PPV) and per-strategy aggregation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dicenet.loss import dice_coefficient
from .volgrid import LabelVolume

METRIC_NAMES = ("dsc", "vd", "ppv")


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    strategy: str
    dsc: float
    vd: float
    ppv: float


def evaluate(pred: LabelVolume, truth: LabelVolume,
             case_id: str = "", strategy: str = "") -> CaseMetrics:
    """Voxelwise DSC, relative volume difference, and precision.

    Empty truth is an error (VD denominator). An empty prediction against a
    nonempty truth scores dsc=0, vd=1, ppv=0.
    """
    if pred.dims != truth.dims:
        raise ValueError(f"dims mismatch: {pred.dims} vs {truth.dims}")
    p = pred.labels.astype(bool)
    t = truth.labels.astype(bool)
    n_truth = int(t.sum())
    if n_truth == 0:
        raise ValueError("empty truth mask: VD is undefined")
    n_pred = int(p.sum())
    tp = int((p & t).sum())
    dsc = dice_coefficient(p.astype(np.float64), t.astype(np.float64))
    vd = abs(n_pred - n_truth) / n_truth
    ppv = tp / n_pred if n_pred > 0 else 0.0
    return CaseMetrics(case_id=case_id, strategy=strategy,
                       dsc=float(dsc), vd=float(vd), ppv=float(ppv))


def aggregate(cases: list[CaseMetrics]) -> dict:
    """Per-strategy population mean and std of each metric.

    Strategies are ordered by descending mean DSC.
    """
    if not cases:
        raise ValueError("no case metrics to aggregate")
    by_strategy = {}
    for c in cases:
        by_strategy.setdefault(c.strategy, []).append(c)
    rows = {}
    for strategy, items in by_strategy.items():
        rows[strategy] = {
            m: {
                "mean": float(np.mean([getattr(c, m) for c in items])),
                "std": float(np.std([getattr(c, m) for c in items])),
            }
            for m in METRIC_NAMES
        }
    ordered = sorted(rows, key=lambda s: -rows[s]["dsc"]["mean"])
    return {s: rows[s] for s in ordered}


def format_table(summary: dict) -> str:
    """Aligned text table with columns Method | DSC | VD | PPV."""
    lines = [f"{'Method':<16} {'DSC':>13} {'VD':>13} {'PPV':>13}"]
    for strategy, metrics in summary.items():
        cells = [
            f"{metrics[m]['mean']:.2f} ± {metrics[m]['std']:.2f}"
            for m in METRIC_NAMES
        ]
        lines.append(f"{strategy:<16} {cells[0]:>13} {cells[1]:>13} {cells[2]:>13}")
    return "\n".join(lines)


def write_report(cases: list[CaseMetrics], json_path, txt_path=None) -> dict:
    summary = aggregate(cases)
    report = {
        "summary": summary,
        "cases": [asdict(c) for c in sorted(cases, key=lambda c: (c.strategy, c.case_id))],
    }
    with open(json_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    if txt_path is not None:
        with open(txt_path, "w") as f:
            f.write(format_table(summary) + "\n")
    return report
