"""Finite differences, total variation and the proximal maps used by the solvers.

Vector fields are arrays of shape (2, N, N): component 0 is the horizontal
(column) difference, component 1 the vertical (row) difference.
"""

import numpy as np


def grad(u: np.ndarray) -> np.ndarray:
    """Forward differences with Neumann boundary (last difference is zero)."""
    g = np.zeros((2,) + u.shape)
    np.subtract(u[:, 1:], u[:, :-1], out=g[0, :, :-1])
    np.subtract(u[1:, :], u[:-1, :], out=g[1, :-1, :])
    return g


def div(p: np.ndarray) -> np.ndarray:
    """Backward differences; div = -grad^T exactly."""
    d = np.zeros(p.shape[1:])
    d[:, :-1] += p[0, :, :-1]
    d[:, 1:] -= p[0, :, :-1]
    d[:-1, :] += p[1, :-1, :]
    d[1:, :] -= p[1, :-1, :]
    return d


def tv_seminorm(u: np.ndarray) -> float:
    """Isotropic TV on the unit square.

    Differences times N approximate the gradient, pixels have area 1/N^2, so
    the discrete sum carries a net factor 1/N.  An edge of height c across
    the whole square has TV c.
    """
    g = grad(u)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)) / u.shape[0])


def prox_l1(theta: np.ndarray, t: float) -> np.ndarray:
    """Soft thresholding, sign(x) * max(|x| - t, 0)."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return theta - np.clip(theta, -t, t)


def prox_nonneg(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def project_l21_ball(p: np.ndarray, radius: float) -> np.ndarray:
    """Pixelwise projection of a vector field onto {|p(x)|_2 <= radius}."""
    if radius <= 0:
        return np.zeros_like(p)
    mag = np.sqrt(p[0] ** 2 + p[1] ** 2)
    return p * (radius / np.maximum(radius, mag))
