"""Ellipse phantoms, their exact sinograms, and a photon-counting noise model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .grid import pixel_centers
from .radon import Geometry, Sinogram


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle_deg: float
    intensity: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("semi-axes must be positive")
        if max(self.a, self.b) + math.hypot(self.cx, self.cy) > math.sqrt(2) / 2 + 1e-12:
            raise ValueError("ellipse leaves the reconstruction disk")
        # tight test: bounding box of the rotated ellipse inside the unit square
        t = math.radians(self.angle_deg)
        hx = math.hypot(self.a * math.cos(t), self.b * math.sin(t))
        hy = math.hypot(self.a * math.sin(t), self.b * math.cos(t))
        if abs(self.cx) + hx > 0.5 + 1e-12 or abs(self.cy) + hy > 0.5 + 1e-12:
            raise ValueError("ellipse leaves the unit square")

    def contains(self, x, y) -> np.ndarray:
        t = math.radians(self.angle_deg)
        dx, dy = x - self.cx, y - self.cy
        xr = dx * math.cos(t) + dy * math.sin(t)
        yr = -dx * math.sin(t) + dy * math.cos(t)
        return (xr / self.a) ** 2 + (yr / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class EllipsePhantom:
    ellipses: tuple = field(default_factory=tuple)

    def scaled(self, factor: float) -> "EllipsePhantom":
        return EllipsePhantom(tuple(Ellipse(e.cx, e.cy, e.a, e.b, e.angle_deg, e.intensity * factor)
                                    for e in self.ellipses))


def _ring(cx, cy, a, b, angle, thickness, intensity):
    """A hollow ellipse: an outer ellipse and a cancelling inner one."""
    return (Ellipse(cx, cy, a, b, angle, intensity),
            Ellipse(cx, cy, a - thickness, b - thickness, angle, -intensity))


def thorax() -> EllipsePhantom:
    """Axial chest slice: soft tissue, dark lungs, heart, spine, sternum and hollow ribs.

    Overlaps are arranged so the summed intensity never leaves [0, 1], which
    keeps the exact sinogram consistent with the unclamped raster.
    """
    e = [
        Ellipse(0.0, 0.0, 0.44, 0.34, 0.0, 0.30),           # skin and fat
        Ellipse(0.0, 0.0, 0.415, 0.315, 0.0, 0.15),         # muscle wall
        Ellipse(-0.17, 0.03, 0.12, 0.21, -8.0, -0.38),      # right lung
        Ellipse(0.175, 0.035, 0.115, 0.2, 8.0, -0.38),      # left lung
        Ellipse(0.045, -0.02, 0.085, 0.07, 25.0, 0.12),     # heart
        Ellipse(0.035, -0.02, 0.05, 0.04, 25.0, 0.08),      # ventricle
        Ellipse(-0.03, -0.14, 0.022, 0.022, 0.0, 0.25),     # aorta
        Ellipse(0.0, -0.235, 0.045, 0.04, 0.0, 0.5),        # vertebral body
        Ellipse(0.0, -0.235, 0.016, 0.014, 0.0, -0.25),     # marrow
        Ellipse(0.0, -0.3, 0.012, 0.019, 0.0, 0.4),         # spinous process
        Ellipse(0.0, 0.29, 0.035, 0.014, 0.0, 0.45),        # sternum
        Ellipse(-0.16, 0.1, 0.008, 0.008, 0.0, 0.3),        # vessels in the lungs
        Ellipse(-0.2, -0.05, 0.01, 0.01, 0.0, 0.3),
        Ellipse(0.15, 0.12, 0.009, 0.009, 0.0, 0.3),
        Ellipse(0.2, -0.04, 0.007, 0.007, 0.0, 0.3),
    ]
    for t in (35, 60, 120, 145, 200, 225, 315, 340):
        r = math.radians(t)
        e.extend(_ring(0.37 * math.cos(r), 0.27 * math.sin(r), 0.03, 0.018, t + 90.0, 0.009, 0.45))
    return EllipsePhantom(tuple(e))


def disk(radius: float = 0.25, intensity: float = 1.0) -> EllipsePhantom:
    return EllipsePhantom((Ellipse(0.0, 0.0, radius, radius, 0.0, intensity),))


PRESETS = {"thorax": thorax, "disk": disk}


def preset(name: str) -> EllipsePhantom:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown phantom preset {name!r}; choose from {sorted(PRESETS)}") from None


def read_phantom(path) -> EllipsePhantom:
    """One ellipse per line: cx cy a b angle_deg intensity; '#' starts a comment."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        out.append(Ellipse(*map(float, parts)))
    return EllipsePhantom(tuple(out))


def write_phantom(path, phantom: EllipsePhantom) -> None:
    lines = ["# cx cy a b angle_deg intensity"]
    lines += [" ".join(repr(float(v)) for v in (e.cx, e.cy, e.a, e.b, e.angle_deg, e.intensity))
              for e in phantom.ellipses]
    Path(path).write_text("\n".join(lines) + "\n")


def rasterize(phantom: EllipsePhantom, n: int, clamp: bool = True) -> np.ndarray:
    """Average of 2x2 sub-pixel samples of the summed ellipse intensities."""
    if n < 16:
        raise ValueError("image size must be at least 16")
    x, y = pixel_centers(2 * n)
    img = np.zeros((2 * n, 2 * n))
    for e in phantom.ellipses:
        img[e.contains(x, y)] += e.intensity
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img.reshape(n, 2, n, 2).mean(axis=(1, 3))


def analytic_sinogram(phantom: EllipsePhantom, geo: Geometry, mask=None) -> Sinogram:
    """Exact line integrals: intensity times chord length, summed over ellipses."""
    s = geo.bins[None, :]
    phi = geo.angles[:, None]
    values = np.zeros((geo.n_angles, geo.n_bins))
    for e in phantom.ellipses:
        t = math.radians(e.angle_deg)
        shift = s - (e.cx * np.cos(phi) + e.cy * np.sin(phi))
        rel = phi - t
        r2 = (e.a * np.cos(rel)) ** 2 + (e.b * np.sin(rel)) ** 2
        under = np.maximum(r2 - shift ** 2, 0.0)
        values += e.intensity * 2 * e.a * e.b * np.sqrt(under) / r2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        values[~mask] = 0.0
    return Sinogram(geo, values, mask)


@dataclass(frozen=True)
class NoiseConfig:
    photons: float = 1e4
    attenuation_scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.photons >= 1:
            raise ValueError("photons must be at least 1")
        if self.attenuation_scale is not None and not self.attenuation_scale > 0:
            raise ValueError("attenuation_scale must be positive")


def auto_attenuation_scale(v: Sinogram, depth: float = 4.0) -> float:
    peak = float(np.max(v.values))
    return depth / peak if peak > 0 else 1.0


def apply_poisson_noise(v: Sinogram, noise: NoiseConfig, stats: dict | None = None) -> Sinogram:
    """Photon-count noise under Beer-Lambert attenuation.

    Each bin draws one uniform from a Philox stream keyed by the seed, at a
    counter given by its flat index (angle, bin), and maps it through the
    Poisson quantile function.  A bin's count therefore depends only on the
    seed and its position.  Zero counts are clamped to 0.5 before the log;
    the number of clamped bins goes to ``stats["clamped"]``.
    """
    if not np.all(np.isfinite(v.values)):
        raise ValueError("sinogram contains non-finite values")
    scale = noise.attenuation_scale or auto_attenuation_scale(v)
    n0 = float(noise.photons)
    gen = np.random.Generator(np.random.Philox(key=noise.seed & (2 ** 64 - 1)))
    uniforms = gen.random(v.values.size).reshape(v.values.shape)
    lam = n0 * np.exp(-scale * v.values)
    counts = poisson.ppf(uniforms, lam)
    clamped = counts < 0.5
    out = -np.log(np.maximum(counts, 0.5) / n0) / scale
    out[~v.mask] = 0.0
    if stats is not None:
        stats["clamped"] = int(np.count_nonzero(clamped & v.mask[:, None]))
        stats["attenuation_scale"] = scale
    return v.with_values(out)
