"""K-means-initialized Gaussian-mixture EM with MRF spatial smoothing.

The spatial prior penalizes each class by the number of 6-neighbors whose
current hard label disagrees; labels are refreshed once per E-step from the
previous iteration (Jacobi update), so results do not depend on scan order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .volgrid import LabelVolume, Volume3

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixture:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not (means.shape == variances.shape == weights.shape):
            raise ValueError("means/variances/weights must share shape")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {weights.sum()}, not 1")
        if np.any(variances <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def num_classes(self) -> int:
        return self.means.size


@dataclass(frozen=True)
class EmConfig:
    num_classes: int = 12
    em_iterations: int = 7
    mrf_beta: float = 0.05
    kmeans_iterations: int = 25
    kmeans_seed: int = 0
    variance_floor_frac: float = 1e-6

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be >= 1")
        if self.mrf_beta < 0:
            raise ValueError("mrf_beta must be >= 0")


@dataclass(frozen=True)
class EmResult:
    labels: LabelVolume
    posteriors: np.ndarray          # (nx, ny, nz, K) responsibilities
    mixture: GaussianMixture
    log_likelihoods: list           # one value per EM iteration, post M-step
    empty_classes: list             # class indices that went empty at any point


def _variance_floor(data: np.ndarray, frac: float) -> float:
    return max(frac * float(np.var(data)), 1e-300)


def kmeans_init(vol: Volume3, num_classes: int, seed: int = 0,
                iterations: int = 25) -> GaussianMixture:
    """1D Lloyd iterations seeded at the K quantile midpoints of the intensities.

    The quantile init makes the result deterministic and equivariant under
    affine intensity rescaling; `seed` is accepted for interface stability but
    the procedure draws nothing random.
    """
    del seed
    data = np.sort(vol.data.ravel().astype(np.float64))
    n = data.size
    if np.unique(data).size < num_classes:
        raise DegenerateInputError(
            f"need >= {num_classes} distinct intensities, "
            f"got {np.unique(data).size}")

    centers = np.quantile(data, (np.arange(num_classes) + 0.5) / num_classes)
    csum = np.concatenate([[0.0], np.cumsum(data)])
    csum2 = np.concatenate([[0.0], np.cumsum(data ** 2)])

    def segment_bounds(c):
        edges = (c[:-1] + c[1:]) / 2.0
        idx = np.searchsorted(data, edges)
        return np.concatenate([[0], idx, [n]])

    for _ in range(iterations):
        centers = np.sort(centers)
        bounds = segment_bounds(centers)
        counts = np.diff(bounds)
        sums = csum[bounds[1:]] - csum[bounds[:-1]]
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        if np.allclose(new, centers, rtol=0, atol=0):
            centers = new
            break
        centers = new

    centers = np.sort(centers)
    bounds = segment_bounds(centers)
    counts = np.diff(bounds)
    sums = csum[bounds[1:]] - csum[bounds[:-1]]
    sums2 = csum2[bounds[1:]] - csum2[bounds[:-1]]
    means = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
    variances = np.where(
        counts > 0,
        sums2 / np.maximum(counts, 1) - means ** 2,
        0.0,
    )
    floor = _variance_floor(data, 1e-6)
    variances = np.maximum(variances, floor)
    weights = counts / n
    # Guard against an empty cluster leaving a zero weight: keep it tiny but valid.
    if np.any(weights == 0):
        weights = np.maximum(weights, 1e-12)
        weights = weights / weights.sum()
    return GaussianMixture(means, variances, weights)


def _log_pdf(data_flat: np.ndarray, mixture_means, mixture_vars) -> np.ndarray:
    d = data_flat[:, None] - mixture_means[None, :]
    return -0.5 * (_LOG_2PI + np.log(mixture_vars)[None, :]) \
        - d * d / (2.0 * mixture_vars[None, :])


def log_likelihood(vol: Volume3, mixture: GaussianMixture) -> float:
    """Sum over voxels of log of the mixture density."""
    logp = _log_pdf(vol.data.ravel().astype(np.float64),
                    mixture.means, mixture.variances)
    with np.errstate(divide="ignore"):
        logp = logp + np.log(mixture.weights)[None, :]
    m = logp.max(axis=1)
    return float((m + np.log(np.exp(logp - m[:, None]).sum(axis=1))).sum())


def _disagreement_counts(labels3: np.ndarray, num_classes: int) -> np.ndarray:
    """U[v, k] = number of 6-neighbors of v whose label differs from k."""
    nx, ny, nz = labels3.shape
    onehot = np.zeros(labels3.shape + (num_classes,), dtype=np.float64)
    idx = np.indices(labels3.shape)
    onehot[idx[0], idx[1], idx[2], labels3] = 1.0

    agree = np.zeros_like(onehot)
    n_neighbors = np.zeros(labels3.shape, dtype=np.float64)
    for axis in range(3):
        if labels3.shape[axis] < 2:
            continue
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        agree[tuple(sl_lo)] += onehot[tuple(sl_hi)]
        agree[tuple(sl_hi)] += onehot[tuple(sl_lo)]
        n_neighbors[tuple(sl_lo)] += 1
        n_neighbors[tuple(sl_hi)] += 1
    return n_neighbors[..., None] - agree


def em_segment(vol: Volume3, cfg: EmConfig) -> EmResult:
    """Fixed-iteration EM with a label-count MRF prior on the E-step."""
    mixture = kmeans_init(vol, cfg.num_classes, cfg.kmeans_seed,
                          cfg.kmeans_iterations)
    data3 = vol.data.astype(np.float64)
    flat = data3.ravel()
    n = flat.size
    K = cfg.num_classes
    floor = _variance_floor(flat, cfg.variance_floor_frac)

    means = mixture.means.copy()
    variances = mixture.variances.copy()
    weights = mixture.weights.copy()

    labels3 = np.abs(flat[:, None] - means[None, :]).argmin(axis=1) \
        .reshape(data3.shape)

    logliks = []
    empty = set()
    resp = None
    for _ in range(cfg.em_iterations):
        # E-step: spatially modulated prior from the previous hard labels.
        logp = _log_pdf(flat, means, variances)
        with np.errstate(divide="ignore"):
            logp += np.log(np.maximum(weights, 1e-300))[None, :]
        if cfg.mrf_beta > 0:
            U = _disagreement_counts(labels3, K).reshape(n, K)
            logp -= cfg.mrf_beta * U
        m = logp.max(axis=1, keepdims=True)
        resp = np.exp(logp - m)
        resp /= resp.sum(axis=1, keepdims=True)

        # M-step.
        nk = resp.sum(axis=0)
        nonempty = nk > 1e-10
        empty.update(int(k) for k in np.flatnonzero(~nonempty))
        safe_nk = np.maximum(nk, 1e-300)
        new_means = (resp * flat[:, None]).sum(axis=0) / safe_nk
        diff2 = (flat[:, None] - new_means[None, :]) ** 2
        new_vars = np.maximum((resp * diff2).sum(axis=0) / safe_nk, floor)
        means = np.where(nonempty, new_means, means)
        variances = np.where(nonempty, new_vars, variances)
        weights = nk / n
        weights = weights / weights.sum()

        labels3 = resp.argmax(axis=1).reshape(data3.shape).astype(np.intp)
        logliks.append(log_likelihood(
            vol, GaussianMixture(means, variances, weights)))

    # Canonical ordering: class index grows with class mean.
    order = np.argsort(means, kind="stable")
    remap = np.empty(K, dtype=np.uint8)
    remap[order] = np.arange(K, dtype=np.uint8)
    mixture = GaussianMixture(means[order], variances[order], weights[order])
    labels = LabelVolume(remap[labels3], K, vol.spacing)
    posteriors = resp[:, order].reshape(data3.shape + (K,)).astype(np.float32)
    empty_remapped = sorted(int(remap[k]) for k in empty)
    return EmResult(labels, posteriors, mixture, logliks, empty_remapped)
