"""Dice overlap and the class-weighted Dice loss with analytic gradients.

The weighted loss follows the generalized Dice form: per-class weights
w_l = 1 / (sum_i q_li)^2 over the two classes {background, kidney}, with
squared prediction/truth terms in the denominator. A class that is empty in
the batch is dropped from both sums, which keeps the loss finite.
"""

from __future__ import annotations

import numpy as np


def dice_coefficient(p: np.ndarray, q: np.ndarray) -> float:
    """2*sum(pq) / (sum(p^2) + sum(q^2)); 1.0 when both masks are empty."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    denom = float((p * p).sum() + (q * q).sum())
    if denom == 0.0:
        return 1.0
    return float(2.0 * (p * q).sum() / denom)


def dice_loss(p: np.ndarray, q: np.ndarray):
    """Unweighted 1 - Dice with gradient w.r.t. p."""
    p64 = p.astype(np.float64)
    q64 = q.astype(np.float64)
    s = (p64 * q64).sum()
    denom = (p64 * p64).sum() + (q64 * q64).sum()
    if denom == 0.0:
        return 0.0, np.zeros_like(p, dtype=np.float32)
    loss = 1.0 - 2.0 * s / denom
    grad = -2.0 * (q64 * denom - 2.0 * p64 * s) / denom ** 2
    return float(loss), grad.astype(np.float32)


def dice_weights(q: np.ndarray) -> dict:
    """Per-class 1/(sum q)^2 weights for {background, kidney}; empty class -> None."""
    q64 = q.astype(np.float64)
    n_fg = q64.sum()
    n_bg = q64.size - n_fg
    return {
        "background": None if n_bg == 0 else 1.0 / n_bg ** 2,
        "kidney": None if n_fg == 0 else 1.0 / n_fg ** 2,
    }


def weighted_dice_loss(p: np.ndarray, q: np.ndarray):
    """Generalized Dice loss over {background, kidney} with gradient w.r.t. p.

    p holds soft kidney probabilities in [0,1]; q is the binary kidney mask.
    Weights are recomputed from q for the given batch. Raises if q contains
    no foreground at all.
    """
    p64 = p.astype(np.float64)
    q64 = q.astype(np.float64)
    if q64.sum() == 0:
        raise ValueError("weighted_dice_loss: batch contains no foreground voxels")

    weights = dice_weights(q)
    classes = []                      # (w, p_class, q_class, dp_sign)
    if weights["background"] is not None:
        classes.append((weights["background"], 1.0 - p64, 1.0 - q64, -1.0))
    if weights["kidney"] is not None:
        classes.append((weights["kidney"], p64, q64, 1.0))

    num = sum(w * (pc * qc).sum() for w, pc, qc, _ in classes)
    den = sum(w * ((pc * pc).sum() + (qc * qc).sum()) for w, pc, qc, _ in classes)
    loss = 1.0 - 2.0 * num / den

    dnum = np.zeros_like(p64)
    dden = np.zeros_like(p64)
    for w, pc, qc, sign in classes:
        dnum += sign * w * qc
        dden += sign * w * 2.0 * pc
    grad = -2.0 * (dnum * den - num * dden) / den ** 2
    return float(loss), grad.astype(np.float32)
