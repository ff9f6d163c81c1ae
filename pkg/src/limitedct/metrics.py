"""Reconstruction error measures."""

import csv
import math
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

METRIC_FIELDS = ("method", "photons", "rel_l2", "psnr", "ssim", "seconds")


def _pair(rec, truth):
    rec = np.asarray(rec, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if rec.shape != truth.shape:
        raise ValueError(f"shape mismatch {rec.shape} vs {truth.shape}")
    return rec, truth


def rel_l2(rec, truth) -> float:
    rec, truth = _pair(rec, truth)
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("reference image has zero norm")
    return float(np.linalg.norm(rec - truth) / denom)


def psnr(rec, truth, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images agree exactly."""
    rec, truth = _pair(rec, truth)
    mse = float(np.mean((rec - truth) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def ssim(rec, truth, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Mean structural similarity with an 11x11 Gaussian window and reflected borders."""
    x, y = _pair(rec, truth)
    if min(x.shape) < 11:
        raise ValueError("ssim needs images of at least 11x11")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def blur(a):
        # truncate 3.5 sigma gives radius 5, i.e. an 11-tap window at sigma 1.5
        return gaussian_filter(a, sigma, mode="reflect", truncate=3.5)

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def evaluate(rec, truth) -> dict:
    return {"rel_l2": rel_l2(rec, truth), "psnr": psnr(rec, truth), "ssim": ssim(rec, truth)}


def append_metrics_row(path, row: dict) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def read_metrics(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
