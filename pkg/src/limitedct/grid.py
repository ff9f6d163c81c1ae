"""Raster conventions shared by every module.

Images are square float64 arrays living on the unit square [-0.5, 0.5]^2,
row 0 at the top (y = +0.5) and column 0 at the left (x = -0.5).  The DFT is
unitary (``norm="ortho"``), so Parseval holds without constants; the 2*pi
factors of the continuous transform are absorbed into the frequency grid.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

log = logging.getLogger(__name__)

MAGIC = b"GRD1"
_HEADER = struct.Struct("<4sII")


class RasterFormatError(ValueError):
    pass


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"image must be square 2-D, got shape {img.shape}")
    if img.shape[0] < 2:
        raise ValueError("image size must be at least 2")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def pixel_centers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical (x, y) coordinates of pixel centers, each of shape (n, n)."""
    c = (np.arange(n) + 0.5) / n - 0.5
    x = np.broadcast_to(c[None, :], (n, n))
    y = np.broadcast_to(-c[:, None], (n, n))
    return x, y


def wrapped_indices(n: int) -> np.ndarray:
    """Index k -> k for k < n/2, k - n otherwise (numpy fftfreq layout times n)."""
    return np.fft.fftfreq(n) * n


def frequency_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical wavenumbers (xi_x, xi_y) for every entry of an n x n spectrum.

    Rows run downward in the image, so the row frequency maps to -xi_y.
    """
    k = 2 * np.pi * wrapped_indices(n)
    xi_x = np.broadcast_to(k[None, :], (n, n))
    xi_y = np.broadcast_to(-k[:, None], (n, n))
    return xi_x, xi_y


def fft2(img) -> np.ndarray:
    return np.fft.fft2(np.asarray(img, dtype=np.float64), norm="ortho")


def ifft2(spec, diagnostics: dict | None = None) -> np.ndarray:
    """Inverse unitary DFT returning a real image.

    The imaginary residue is dropped; its maximum magnitude is stored in
    ``diagnostics["max_imag"]`` when a dict is passed.  A residue above
    1e-6 * ||spec|| means the spectrum was not Hermitian and raises.
    """
    spec = np.asarray(spec)
    out = np.fft.ifft2(spec, norm="ortho")
    max_imag = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if diagnostics is not None:
        diagnostics["max_imag"] = max_imag
    if max_imag > 1e-6 * np.linalg.norm(spec):
        raise ValueError(f"spectrum is not Hermitian: max imaginary part {max_imag:.3e}")
    if max_imag > 1e-10:
        log.debug("ifft2 discarded imaginary residue %.3e", max_imag)
    return np.ascontiguousarray(out.real)


def write_raster(path, img) -> None:
    arr = np.ascontiguousarray(np.asarray(img, dtype="<f8"))
    if arr.ndim != 2:
        raise ValueError("raster must be 2-D")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols))
        fh.write(arr.tobytes(order="C"))


def read_raster(path, square: bool = True) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    payload = data[_HEADER.size:]
    expected = rows * cols * 8
    if len(payload) < expected:
        raise RasterFormatError(
            f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise RasterFormatError(f"{path}: trailing bytes after payload")
    if square and rows != cols:
        raise RasterFormatError(f"{path}: image raster must be square, got {rows}x{cols}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def to_gray8(img, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if not lo < hi:
        raise ValueError("display window needs lo < hi")
    t = np.clip((np.asarray(img, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    # round half up, not numpy's round-half-even
    return np.floor(t * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img, lo: float = 0.0, hi: float = 1.0) -> None:
    PILImage.fromarray(to_gray8(img, lo, hi)).save(path)
