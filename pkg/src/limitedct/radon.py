"""Parallel-beam Radon transform on the unit square.

The forward operator is ray driven: every line {<x, omega> = s} is sampled at
step 1/N, the image is bilinearly interpolated at each sample and the sum is
scaled by the step.  The operator is assembled once per geometry as a sparse
matrix, so the backprojection is its exact transpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp

from .grid import check_image, pixel_centers


def default_bins(n: int) -> int:
    """Odd bin count with spacing just under 1/n, so s = 0 is a bin center."""
    return 2 * math.ceil(n / math.sqrt(2)) + 1


@dataclass(frozen=True, eq=False)
class Geometry:
    """Angles phi (radians) of omega = (cos phi, sin phi), detector bins on [-sqrt2/2, sqrt2/2]."""

    size: int
    angles: np.ndarray
    n_bins: int = 0

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64).ravel()
        if angles.size < 1:
            raise ValueError("geometry needs at least one angle")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("angles must be strictly increasing")
        if angles[0] < -np.pi / 2 - 1e-12 or angles[-1] >= np.pi / 2 - 1e-12:
            raise ValueError("angles must lie in [-pi/2, pi/2)")
        object.__setattr__(self, "angles", angles)
        if self.n_bins == 0:
            object.__setattr__(self, "n_bins", default_bins(self.size))
        if self.n_bins < 2:
            raise ValueError("need at least 2 detector bins")
        if self.size < 2:
            raise ValueError("image size must be at least 2")

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def bins(self) -> np.ndarray:
        h = math.sqrt(2) / 2
        return np.linspace(-h, h, self.n_bins)

    @property
    def bin_width(self) -> float:
        return math.sqrt(2) / (self.n_bins - 1)

    def key(self) -> tuple:
        return (self.size, self.n_bins, self.angles.tobytes())

    def __eq__(self, other):
        return isinstance(other, Geometry) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    @classmethod
    def from_degrees(cls, size: int, degrees, n_bins: int = 0) -> "Geometry":
        return cls(size, np.deg2rad(np.asarray(degrees, dtype=np.float64)), n_bins)


def full_geometry(size: int, n_angles: int = 180, n_bins: int = 0) -> Geometry:
    """n_angles equispaced angles over the half-turn [-90 deg, 90 deg)."""
    return Geometry(size, -np.pi / 2 + np.pi * np.arange(n_angles) / n_angles, n_bins)


def limited_mask(geo: Geometry, half_range_deg: float) -> np.ndarray:
    """Mask of the angles phi with -Phi <= phi < Phi."""
    phi = math.radians(half_range_deg)
    tol = 1e-9
    return (geo.angles >= -phi - tol) & (geo.angles < phi - tol)


@dataclass
class Sinogram:
    geometry: Geometry
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(self.geometry.n_angles, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool).copy()
        expected = (self.geometry.n_angles, self.geometry.n_bins)
        if self.values.shape != expected:
            raise ValueError(f"sinogram shape {self.values.shape} != {expected}")
        if self.mask.shape != (self.geometry.n_angles,):
            raise ValueError("mask length must equal the number of angles")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram contains non-finite values")
        if np.any(self.values[~self.mask]):
            raise ValueError("masked-out rows must be zero")

    @property
    def measured(self) -> np.ndarray:
        return self.values[self.mask]

    def with_values(self, values) -> "Sinogram":
        return Sinogram(self.geometry, values, self.mask)


@numba.njit(cache=True)
def _ray_block(n, cos_a, sin_a, svals, step, n_steps):
    """CSR pieces (row pointer, column, weight) for all rays of one angle."""
    nb = svals.shape[0]
    half = 0.5 + 1.0 / n
    cap = nb * (4 * n_steps + 8)
    indptr = np.zeros(nb + 1, np.int64)
    cols = np.empty(cap, np.int32)
    vals = np.empty(cap, np.float64)
    tmp_i = np.empty(4 * n_steps, np.int64)
    tmp_w = np.empty(4 * n_steps, np.float64)
    nnz = 0
    for k in range(nb):
        s = svals[k]
        m = 0
        for j in range(n_steps):
            t = (j - (n_steps - 1) * 0.5) * step
            x = s * cos_a - t * sin_a
            y = s * sin_a + t * cos_a
            if x < -half or x > half or y < -half or y > half:
                continue
            cc = (x + 0.5) * n - 0.5
            rr = (0.5 - y) * n - 0.5
            c0 = math.floor(cc)
            r0 = math.floor(rr)
            fc = cc - c0
            fr = rr - r0
            ic = int(c0)
            ir = int(r0)
            for dr in range(2):
                r = ir + dr
                if r < 0 or r >= n:
                    continue
                wr = fr if dr == 1 else 1.0 - fr
                for dc in range(2):
                    c = ic + dc
                    if c < 0 or c >= n:
                        continue
                    wc = fc if dc == 1 else 1.0 - fc
                    w = wr * wc
                    if w == 0.0:
                        continue
                    tmp_i[m] = r * n + c
                    tmp_w[m] = w * step
                    m += 1
        if m > 0:
            order = np.argsort(tmp_i[:m], kind="mergesort")
            last = -1
            for q in range(m):
                idx = tmp_i[order[q]]
                if idx != last:
                    cols[nnz] = idx
                    vals[nnz] = tmp_w[order[q]]
                    nnz += 1
                    last = idx
                else:
                    vals[nnz - 1] += tmp_w[order[q]]
        indptr[k + 1] = nnz
    return indptr, cols[:nnz].copy(), vals[:nnz].copy()


class Projector:
    """Sparse ray-driven projector for a fixed list of angles."""

    def __init__(self, size: int, angles: np.ndarray, n_bins: int):
        self.size = size
        self.angles = np.asarray(angles, dtype=np.float64)
        self.n_bins = n_bins
        h = math.sqrt(2) / 2
        svals = np.linspace(-h, h, n_bins)
        step = 1.0 / size
        n_steps = int(math.ceil(math.sqrt(2) * size)) + 1
        ptrs, cols, vals = [np.zeros(1, np.int64)], [], []
        offset = 0
        for a in self.angles:
            ip, ci, va = _ray_block(size, math.cos(a), math.sin(a), svals, step, n_steps)
            ptrs.append(ip[1:] + offset)
            cols.append(ci)
            vals.append(va)
            offset += ci.size
        shape = (self.angles.size * n_bins, size * size)
        if cols:
            self.matrix = sp.csr_matrix(
                (np.concatenate(vals), np.concatenate(cols), np.concatenate(ptrs)), shape=shape)
        else:
            self.matrix = sp.csr_matrix(shape)
        self._transpose = None

    @property
    def transpose(self):
        if self._transpose is None:
            self._transpose = self.matrix.T.tocsr()
        return self._transpose

    def forward(self, img: np.ndarray) -> np.ndarray:
        out = self.matrix @ img.reshape(-1)
        return out.reshape(self.angles.size, self.n_bins)

    def adjoint(self, rows: np.ndarray) -> np.ndarray:
        out = self.transpose @ rows.reshape(-1)
        return out.reshape(self.size, self.size)


@lru_cache(maxsize=3)
def _cached_projector(size: int, n_bins: int, angle_bytes: bytes) -> Projector:
    return Projector(size, np.frombuffer(angle_bytes, dtype=np.float64), n_bins)


def projector(geo: Geometry, mask=None) -> Projector:
    """Cached projector over the measured angles of ``geo``."""
    angles = geo.angles if mask is None else geo.angles[np.asarray(mask, dtype=bool)]
    return _cached_projector(geo.size, geo.n_bins, np.ascontiguousarray(angles).tobytes())


def radon_forward(img, geo: Geometry) -> Sinogram:
    img = check_image(img)
    if img.shape[0] != geo.size:
        raise ValueError(f"image size {img.shape[0]} does not match geometry size {geo.size}")
    return Sinogram(geo, projector(geo).forward(img))


def radon_limited(img, geo: Geometry, mask) -> Sinogram:
    img = check_image(img)
    if img.shape[0] != geo.size:
        raise ValueError(f"image size {img.shape[0]} does not match geometry size {geo.size}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (geo.n_angles,):
        raise ValueError("mask length must equal the number of angles")
    values = np.zeros((geo.n_angles, geo.n_bins))
    if mask.any():
        values[mask] = projector(geo, mask).forward(img)
    return Sinogram(geo, values, mask)


def radon_adjoint(sino: Sinogram) -> np.ndarray:
    geo = sino.geometry
    if not sino.mask.any():
        return np.zeros((geo.size, geo.size))
    return projector(geo, sino.mask).adjoint(sino.measured)


def ramp_filter(n_bins: int, width: float, apodize: bool = False) -> tuple[np.ndarray, int]:
    """Frequency response of the band-limited Ram-Lak filter on a padded grid.

    Built from the sampled spatial kernel so the DC term is exact
    (plain |f| samples leave a constant offset).
    """
    pad = 1 << int(math.ceil(math.log2(2 * n_bins - 1)))
    n = np.concatenate([np.arange(0, pad // 2 + 1), np.arange(-(pad // 2) + 1, 0)])
    h = np.zeros(pad)
    h[0] = 1.0 / (4 * width ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * width) ** 2
    response = np.real(np.fft.rfft(h)) * width
    if apodize:
        f = np.fft.rfftfreq(pad)
        response = response * np.cos(np.pi * f)
    return response, pad


def filter_rows(rows: np.ndarray, width: float, apodize: bool = False) -> np.ndarray:
    n_bins = rows.shape[-1]
    response, pad = ramp_filter(n_bins, width, apodize)
    spec = np.fft.rfft(rows, n=pad, axis=-1) * response
    return np.fft.irfft(spec, n=pad, axis=-1)[..., :n_bins]


def fbp(sino: Sinogram, apodize: bool = False) -> np.ndarray:
    """Filtered backprojection; masked-out angles are skipped.

    The backprojection is the matched adjoint, whose per-angle sample density
    is 1 / (N^2 * bin width); that factor is undone together with the angular
    quadrature weight pi / n_angles of the half-turn grid.
    """
    geo = sino.geometry
    if not sino.mask.any():
        return np.zeros((geo.size, geo.size))
    q = filter_rows(sino.measured, geo.bin_width, apodize)
    back = projector(geo, sino.mask).adjoint(q)
    return back * (np.pi / geo.n_angles) * geo.size ** 2 * geo.bin_width


def _image_dft_on_lines(img: np.ndarray, angles: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Continuous-domain F u(sigma omega) of the pixel-center quadrature, evaluated exactly."""
    n = img.shape[0]
    x, y = pixel_centers(n)
    xs, ys = x[0], y[:, 0]
    out = np.empty((angles.size, sigmas.size), dtype=complex)
    for i, a in enumerate(angles):
        ex = np.exp(-1j * np.outer(sigmas * math.cos(a), xs))
        ey = np.exp(-1j * np.outer(sigmas * math.sin(a), ys))
        out[i] = np.einsum("sp,pq,sq->s", ey, img, ex, optimize=True) / n ** 2
    return out


def fourier_slice_check(img, geo: Geometry, mask=None, magnitudes: bool = False) -> float:
    """Max relative deviation between row spectra of K u and slices of F u.

    Both sides are evaluated as exact nonuniform sums on the detector's DFT
    frequencies, so only the projector's discretization is measured.
    """
    img = check_image(img)
    mask = np.ones(geo.n_angles, bool) if mask is None else np.asarray(mask, bool)
    if not mask.any() or not np.any(img):
        return 0.0
    sino = radon_limited(img, geo, mask)
    rows = sino.measured
    angles = geo.angles[mask]
    s = geo.bins
    ds = geo.bin_width
    m = np.arange(-(geo.n_bins // 2), geo.n_bins // 2 + 1)
    sigmas = 2 * np.pi * m / (geo.n_bins * ds)
    row_spec = ds * rows @ np.exp(-1j * np.outer(s, sigmas))
    slice_spec = _image_dft_on_lines(img, angles, sigmas)
    if magnitudes:
        row_spec, slice_spec = np.abs(row_spec), np.abs(slice_spec)
    dev = np.linalg.norm(row_spec - slice_spec, axis=1) / np.linalg.norm(slice_spec, axis=1)
    return float(dev.max())


def write_angles(path, sino: Sinogram) -> None:
    """Sidecar listing angles in degrees; masked-out angles start with '#'."""
    lines = []
    for deg, m in zip(np.rad2deg(sino.geometry.angles), sino.mask):
        lines.append(("" if m else "# ") + repr(float(deg)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_angles(path) -> tuple[np.ndarray, np.ndarray]:
    degrees, mask = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            masked = line.startswith("#")
            degrees.append(float(line.lstrip("#").strip()))
            mask.append(not masked)
    return np.asarray(degrees), np.asarray(mask, dtype=bool)


def write_sinogram(stem, sino: Sinogram) -> None:
    from .grid import write_raster

    write_raster(f"{stem}.grd", sino.values)
    write_angles(f"{stem}.angles", sino)


def read_sinogram(stem, size: int) -> Sinogram:
    from .grid import read_raster

    values = read_raster(f"{stem}.grd", square=False)
    degrees, mask = read_angles(f"{stem}.angles")
    geo = Geometry.from_degrees(size, degrees, values.shape[1])
    return Sinogram(geo, values, mask)
