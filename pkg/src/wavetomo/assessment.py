"""Image-quality metrics, the tumour-segmentation observer and ROC analysis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .correction import IMAGE_CENTER, IMAGE_HALF_RANGE, TrainedNet
from .nn import TrainConfig, sigmoid, train_network, unet

SSIM_RANGE = 0.2  # mm/us, the display window width
SSIM_SIGMA = 1.5
SSIM_WIN = 7


def rrmse(estimate: np.ndarray, truth: np.ndarray, background: float | np.ndarray) -> float:
    """``||truth - estimate|| / ||truth - background||``."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    denom = float(np.linalg.norm(truth - background))
    if denom == 0:
        raise ValueError("truth equals the background; RRMSE is undefined")
    return float(np.linalg.norm(truth - estimate)) / denom


def ssim(estimate: np.ndarray, truth: np.ndarray, data_range: float = SSIM_RANGE) -> float:
    """Mean SSIM with a 7x7 Gaussian window (sigma 1.5) and a fixed dynamic range.

    Local statistics use the unbiased (N-1) covariance correction and the mean
    skips a 3-pixel border where the window is truncated.
    """
    x = np.asarray(estimate, dtype=float)
    y = np.asarray(truth, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"images must be at least {SSIM_WIN} pixels per side")
    truncate = ((SSIM_WIN - 1) / 2) / SSIM_SIGMA

    def blur(img):
        return ndimage.gaussian_filter(img, SSIM_SIGMA, mode="reflect", truncate=truncate)

    n = SSIM_WIN * SSIM_WIN
    cov_norm = n / (n - 1)
    ux, uy = blur(x), blur(y)
    vx = cov_norm * (blur(x * x) - ux * ux)
    vy = cov_norm * (blur(y * y) - uy * uy)
    vxy = cov_norm * (blur(x * y) - ux * uy)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    pad = (SSIM_WIN - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_and_auc(scores, masks) -> RocCurve:
    """Pixel-pooled ROC: a pixel is called positive when its score is >= the threshold.

    Thresholds run from ``+inf`` (nothing positive) down through every distinct
    score; the area uses the trapezoid rule, so ties count one half.
    """
    s = np.concatenate([np.ravel(a) for a in scores]) if isinstance(scores, (list, tuple)) else np.ravel(scores)
    m = np.concatenate([np.ravel(a) for a in masks]) if isinstance(masks, (list, tuple)) else np.ravel(masks)
    s = np.asarray(s, dtype=float)
    m = np.asarray(m).astype(bool)
    if s.shape != m.shape:
        raise ValueError("scores and masks differ in size")
    n_pos, n_neg = int(m.sum()), int((~m).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative pixels")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, m_sorted = s[order], m[order]
    tp = np.cumsum(m_sorted)
    fp = np.cumsum(~m_sorted)
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s.size - 1]
    tp_c = np.r_[0, tp[last]].astype(np.int64)
    fp_c = np.r_[0, fp[last]].astype(np.int64)
    tpr = tp_c / n_pos
    fpr = fp_c / n_neg
    thresholds = np.r_[np.inf, s_sorted[last]]
    # trapezoid area in integer counts, one rounding at the end
    twice_area = int(np.sum(np.diff(fp_c) * (tp_c[1:] + tp_c[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return RocCurve(thresholds, fpr, tpr, auc)


def choose_threshold(curve: RocCurve) -> float:
    """Threshold maximising TPR - FPR; ties go to the smaller threshold."""
    j = curve.tpr - curve.fpr
    best = np.flatnonzero(j == j.max())
    return float(np.min(curve.thresholds[best]))


def paired_significance(a, b) -> float:
    """Two-sided Wilcoxon signed-rank p-value (exact for n <= 25, normal approximation above)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    d = a - b
    if np.all(d == 0):
        return 1.0
    method = "exact" if d.size <= 25 and np.all(d != 0) else "approx"
    return float(stats.wilcoxon(d, zero_method="wilcox", alternative="two-sided", method=method).pvalue)


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Mean and a Student-t confidence interval."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if v.size < 2:
        return mean, mean, mean
    half = float(stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size))
    return mean, mean - half, mean + half


def train_observer(images, masks, cfg: TrainConfig, width: int = 8, levels: int = 2) -> TrainedNet:
    """Segmentation U-Net scored by positively weighted pixel cross-entropy.

    When ``cfg.pos_weight`` is 1 it is replaced by the negative/positive pixel
    ratio of the training masks (capped at 100).
    """
    X = (np.asarray(images, dtype=float)[:, None] - IMAGE_CENTER) / IMAGE_HALF_RANGE
    Y = np.asarray(masks, dtype=float)[:, None]
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("masks must be binary")
    if cfg.pos_weight == 1.0:
        n_pos = Y.sum()
        weight = float(min((Y.size - n_pos) / n_pos, 100.0)) if n_pos else 1.0
        cfg = TrainConfig(**{**cfg.__dict__, "pos_weight": weight, "loss": "bce"})
    else:
        cfg = TrainConfig(**{**cfg.__dict__, "loss": "bce"})
    net = unet(1, 1, width, levels)
    params, log = train_network(net, X, Y, cfg)
    return TrainedNet(net, params, IMAGE_CENTER, IMAGE_HALF_RANGE, 0.0, 1.0, log, "observer")


def observer_probabilities(observer: TrainedNet, images) -> np.ndarray:
    """Per-pixel tumour probabilities (N, n, n)."""
    logits = observer(np.asarray(images, dtype=float)[:, None])[:, 0]
    return sigmoid(logits)
