"""Desk-scale quality metrics: PSNR, a depth-histogram entropy surrogate for
non-flatness, and hole coverage of rendered alpha maps."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0
PSNR_MSE_FLOOR = 1e-10


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0,1], capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr inputs must share a shape")
    mse = float(np.mean((a - b) ** 2))
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def nfs_surrogate(depth: np.ndarray, bins: int = 20) -> float:
    """Shannon entropy (nats) of the min-max normalized depth histogram.
    Constant depth maps score 0; a uniform ramp approaches ln(bins)."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth must be finite")
    lo, hi = float(depth.min()), float(depth.max())
    if hi - lo < 1e-12:
        return 0.0
    norm = (depth - lo) / (hi - lo)
    hist, _ = np.histogram(norm, bins=bins, range=(0.0, 1.0))
    p = hist[hist > 0] / norm.size
    return float(-np.sum(p * np.log(p)))


def hole_coverage(alpha: np.ndarray, tau: float) -> float:
    """Fraction of pixels whose accumulated alpha falls below tau."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.size == 0:
        return 0.0
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha map must lie in [0,1]")
    return float(np.count_nonzero(alpha < tau)) / alpha.size
