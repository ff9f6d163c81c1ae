"""Translation-invariant curvelet frames built from Meyer windows.

Every window is a real, even, nonnegative array on the DFT grid, so the
frame filters are real convolutions and the coefficients of a real image are
real.  Antipodal wedges share a window (a frequency wedge and its mirror
image through the origin are combined in quadrature).  The bank is tight:
the squares of all windows sum to one at every grid frequency, which makes
the synthesis operator a left inverse of the analysis operator.

Window amplitudes are W * V rather than the squared product, and carry no
per-scale amplitude factor; both would break the sum-of-squares identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .grid import read_raster, wrapped_indices, write_raster

NU_CHOICES = ("exp", "poly3", "poly5", "poly7")


def _log_bump(x):
    with np.errstate(divide="ignore"):
        return -(1 + x) ** -2.0 - (1 - x) ** -2.0


def nu_eval(x, nu: str = "exp"):
    """Smooth step with nu(0) = 0, nu(1) = 1 and nu(x) + nu(1 - x) = 1.

    ``poly5`` is the quintic smoothstep 10x^3 - 15x^4 + 6x^5.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.clip(x, 0.0, 1.0)
    if nu == "poly3":
        out = t * t * (3 - 2 * t)
    elif nu == "poly5":
        out = t ** 3 * (10 - 15 * t + 6 * t * t)
    elif nu == "poly7":
        out = t ** 4 * (35 - 84 * t + 70 * t ** 2 - 20 * t ** 3)
    elif nu == "exp":
        inner = (t > 0) & (t < 1)
        ti = np.where(inner, t, 0.5)
        out = np.where(inner, expit(_log_bump(ti - 1) - _log_bump(ti)), t)
    else:
        raise ValueError(f"unknown nu {nu!r}; choose from {NU_CHOICES}")
    return out if out.ndim else float(out)


def meyer_radial(r, nu: str = "exp"):
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    rise = (r >= 2 / 3) & (r <= 5 / 6)
    flat = (r > 5 / 6) & (r < 4 / 3)
    fall = (r >= 4 / 3) & (r <= 5 / 3)
    out[rise] = np.cos(np.pi / 2 * nu_eval(5 - 6 * r[rise], nu))
    out[flat] = 1.0
    out[fall] = np.cos(np.pi / 2 * nu_eval(3 * r[fall] - 4, nu))
    return out if out.ndim else float(out)


def meyer_angular(phi, nu: str = "exp"):
    a = np.abs(np.asarray(phi, dtype=np.float64))
    out = np.zeros_like(a)
    out[a <= 1 / 3] = 1.0
    mid = (a > 1 / 3) & (a < 2 / 3)
    out[mid] = np.cos(np.pi / 2 * nu_eval(3 * a[mid] - 1, nu))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class WindowSpec:
    scales: int = 3
    wedges: tuple = ()
    nu: str = "exp"
    wedge_half_angle: float | None = None  # radians; None = standard tiling

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("need at least one scale")
        wedges = tuple(int(w) for w in self.wedges) or default_wedges(self.scales)
        if len(wedges) != self.scales:
            raise ValueError(f"{self.scales} scales but {len(wedges)} wedge counts")
        if any(w < 2 or w % 2 for w in wedges):
            raise ValueError("wedge counts must be positive even integers")
        object.__setattr__(self, "wedges", wedges)
        if self.nu not in NU_CHOICES:
            raise ValueError(f"unknown nu {self.nu!r}")
        phi = self.wedge_half_angle
        if phi is not None and not 0 < phi < np.pi / 2:
            raise ValueError("wedge half-angle must lie in (0, pi/2)")


def default_wedges(scales: int) -> tuple:
    return tuple(8 * 2 ** math.ceil(j / 2) for j in range(scales))


@dataclass
class WindowBank:
    size: int
    windows: np.ndarray  # (n_windows, N, N)
    keys: list  # (scale, wedge, label); scale is -1 for lowpass, J for highpass
    spec: WindowSpec
    half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.size
        self.half = np.ascontiguousarray(self.windows[:, :, : n // 2 + 1])

    def __len__(self):
        return len(self.keys)

    def labels(self) -> list:
        return [k[2] for k in self.keys]

    def indices(self, label: str) -> list:
        return [i for i, k in enumerate(self.keys) if k[2] == label]

    def partition_error(self) -> float:
        return float(np.max(np.abs(np.sum(self.windows ** 2, axis=0) - 1.0)))


def _polar(n: int):
    k = wrapped_indices(n)
    kx = np.broadcast_to(k[None, :], (n, n))
    ky = np.broadcast_to(-k[:, None], (n, n))
    return np.hypot(kx, ky), np.arctan2(ky, kx)


def _radial_scale(n: int, scales: int) -> float:
    """Factor c so that the finest ring's plateau ends at the Nyquist radius n/2."""
    if n < 16:
        raise ValueError("window banks need N >= 16")
    if n / 2 ** (scales + 1) < 1:
        raise ValueError(f"{scales} scales do not fit a {n}x{n} grid")
    return (4 / 3) * 2 ** (scales - 1) / (n / 2)


def _symmetrize(w: np.ndarray) -> np.ndarray:
    """Quadratic mean of w(k) and w(-k); only changes the Nyquist row/column."""
    flipped = np.roll(w[..., ::-1, ::-1], 1, axis=(-2, -1))
    return np.sqrt(0.5 * (w ** 2 + flipped ** 2))


def _standard_angular(phi: np.ndarray, n_wedges: int, nu: str) -> list:
    """Angular windows V(N phi / 2pi - l), antipodal pairs combined."""
    out = []
    for m in range(n_wedges // 2):
        acc = np.zeros_like(phi)
        for ell in (m, m - n_wedges // 2):
            arg = n_wedges * phi / (2 * np.pi) - ell
            arg = (arg + n_wedges / 2) % n_wedges - n_wedges / 2
            acc += meyer_angular(arg, nu) ** 2
        out.append(np.sqrt(acc))
    return out


def _wrap_half(a):
    return (a + np.pi / 2) % np.pi - np.pi / 2


def edge_partition(phi: np.ndarray, edges: np.ndarray, half_widths: np.ndarray, nu: str) -> list:
    """Angular partition of unity of squares on directions modulo pi.

    Window m covers [edges[m], edges[m+1]] (cyclically); at each edge the
    outgoing window falls as cos and the incoming one rises as sin over
    [edge - h, edge + h].
    """
    m_count = edges.size
    out = []
    for m in range(m_count):
        lo, hi = edges[m], edges[(m + 1) % m_count]
        h_lo, h_hi = half_widths[m], half_widths[(m + 1) % m_count]
        width = (hi - lo) % np.pi
        d = (phi - lo) % np.pi  # position inside [0, pi) measured from lo
        d = np.where(d > np.pi - h_lo, d - np.pi, d)
        rise = np.sin(np.pi / 2 * nu_eval((d + h_lo) / (2 * h_lo), nu))
        fall = np.cos(np.pi / 2 * nu_eval((d - width + h_hi) / (2 * h_hi), nu))
        w = np.where((d >= -h_lo) & (d <= width + h_hi), rise * fall, 0.0)
        out.append(w)
    return out


def adapted_edges(n_wedges: int, half_angle: float):
    """Edges and transition half-widths aligned with the visible boundary.

    Returns (edges, half_widths, visible) over directions modulo pi.  The
    visible arc [-Phi, Phi) and the invisible arc [Phi, pi - Phi) are each
    split evenly; the two boundary edges are exact.
    """
    if n_wedges < 4:
        raise ValueError("wedge-adapted rings need at least 4 wedges")
    n_half = n_wedges // 2
    n_vis = int(np.clip(round(n_half * 2 * half_angle / np.pi), 1, n_half - 1))
    n_inv = n_half - n_vis
    w_vis = 2 * half_angle / n_vis
    w_inv = (np.pi - 2 * half_angle) / n_inv
    edges = np.concatenate([
        -half_angle + w_vis * np.arange(n_vis),
        half_angle + w_inv * np.arange(n_inv),
    ])
    widths = np.concatenate([np.full(n_vis, w_vis), np.full(n_inv, w_inv)])
    left = np.roll(widths, 1)  # width of the window ending at each edge
    h = np.minimum(widths, left) / 6
    boundary = np.array([0, n_vis])
    h[boundary] = np.pi / (3 * n_wedges)
    h = np.minimum(h, 0.5 * np.minimum(widths, left))
    centers = edges + widths / 2
    visible = np.abs(_wrap_half(centers)) < half_angle
    return edges, h, visible


def build_window_bank(n: int, spec: WindowSpec | None = None) -> WindowBank:
    spec = spec or WindowSpec()
    c = _radial_scale(n, spec.scales)
    r, phi = _polar(n)
    rho = c * r
    rings, keys = [], []
    adapted = spec.wedge_half_angle is not None
    for j, n_wedges in enumerate(spec.wedges):
        radial = meyer_radial(rho / 2 ** j, spec.nu)
        if adapted:
            edges, h, visible = adapted_edges(n_wedges, spec.wedge_half_angle)
            angular = edge_partition(_wrap_half(phi), edges, h, spec.nu)
            labels = ["visible" if v else "invisible" for v in visible]
        else:
            angular = _standard_angular(phi, n_wedges, spec.nu)
            labels = ["standard"] * len(angular)
        for ell, (a, lab) in enumerate(zip(angular, labels)):
            rings.append(radial * a)
            keys.append((j, ell, lab))
    rings = _symmetrize(np.array(rings))
    rest = np.sqrt(np.maximum(0.0, 1.0 - np.sum(rings ** 2, axis=0)))
    inner = rho < 1.0
    low = np.where(inner, rest, 0.0)
    high = np.where(inner, 0.0, rest)
    windows = np.concatenate([low[None], rings, high[None]])
    keys = [(-1, 0, "lowpass")] + keys + [(spec.scales, 0, "highpass")]
    return WindowBank(n, windows, keys, spec)


def build_wedge_adapted_bank(n: int, spec: WindowSpec) -> WindowBank:
    if spec.wedge_half_angle is None:
        raise ValueError("wedge-adapted bank needs spec.wedge_half_angle")
    return build_window_bank(n, spec)


def visible_mask(n: int, half_angle: float) -> np.ndarray:
    """Grid frequencies whose direction (mod pi) lies in [-Phi, Phi); DC counts as visible."""
    r, phi = _polar(n)
    d = _wrap_half(phi)
    return ((d >= -half_angle) & (d < half_angle)) | (r == 0)


def _check_size(bank: WindowBank, arr: np.ndarray, lead: int | None):
    shape = (bank.size, bank.size) if lead is None else (lead, bank.size, bank.size)
    if arr.shape != shape:
        raise ValueError(f"shape {arr.shape} does not match window bank {shape}")


def analysis(u, bank: WindowBank) -> np.ndarray:
    """Frame coefficients theta_i = psi_i * u, one full-size raster per window."""
    u = np.asarray(u, dtype=np.float64)
    _check_size(bank, u, None)
    n = bank.size
    spec = np.fft.rfft2(u)
    return np.fft.irfft2(bank.half * spec, s=(n, n))


def synthesis(theta, bank: WindowBank) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    _check_size(bank, theta, len(bank))
    n = bank.size
    spec = np.einsum("wij,wij->ij", bank.half, np.fft.rfft2(theta))
    return np.fft.irfft2(spec, s=(n, n))


def export_bank(bank: WindowBank, directory) -> Path:
    """Write each window as GRD1 plus a manifest ``index scale wedge label file``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ((j, ell, lab), w) in enumerate(zip(bank.keys, bank.windows)):
        name = f"window_{i:03d}.grd"
        write_raster(directory / name, w)
        lines.append(f"{i} {j} {ell} {lab} {name}")
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> list:
    path = Path(path)
    rows = []
    for line in path.read_text().splitlines():
        i, j, ell, lab, name = line.split()
        rows.append((int(j), int(ell), lab, read_raster(path.parent / name)))
    return rows
