"""Primal-dual reconstruction methods for masked Radon data.

Every variational method here is a run of one generic Chambolle-Pock loop.
The linear part is a tuple of blocks, each paired with its own dual prox, so
a data term, a frame term and a TV term stack without special cases.  Blocks
are rescaled to comparable norms before stacking; the prox radii absorb the
scales so the minimized functional is unchanged.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .frames import WindowBank, analysis, synthesis
from .radon import Projector, Sinogram, projector
from .regularizers import div, grad, project_l21_ball, prox_l1, prox_nonneg


class DivergenceError(RuntimeError):
    """Raised when an iterate or objective becomes non-finite."""


@dataclass
class SolverConfig:
    alpha: float = 1e-3
    beta: float = 1e-3
    mu: float = 1.0
    outer_iters: int = 10
    inner_iters_l1: int = 200
    inner_iters_tv: int = 500
    beta_schedule: float = 2.0
    step_ratio: float = 1.0
    jacobi_coupling: bool = False
    nonneg: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "mu", "beta_schedule", "step_ratio"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        if self.step_ratio == 0:
            raise ValueError("step_ratio must be positive")
        for name in ("outer_iters", "inner_iters_l1", "inner_iters_tv"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass
class SolveReport:
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    seconds: float = 0.0
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def extend(self, other: "SolveReport") -> None:
        self.objective.extend(other.objective)
        self.residual.extend(other.residual)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "residual"])
            for i, (o, r) in enumerate(zip(self.objective, self.residual)):
                w.writerow([i, repr(float(o)), repr(float(r))])


def read_report_csv(path) -> SolveReport:
    rep = SolveReport()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep.objective.append(float(row["objective"]))
            rep.residual.append(float(row["residual"]))
    return rep


def power_method(apply: Callable, apply_adjoint: Callable, shape, iters: int = 100,
                 seed: int = 0) -> float:
    """Largest singular value of a linear map, inflated by 1%."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    x = np.random.default_rng(seed).standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = apply_adjoint(apply(x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return 1.01 * math.sqrt(lam)


# --- generic primal-dual loop -------------------------------------------------

def _check_finite(value: float, k: int):
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite iterate at iteration {k}")


def chambolle_pock(op: Callable, adj: Callable, prox_dual: Sequence[Callable],
                   prox_primal: Callable, x0: np.ndarray, iters: int, L: float,
                   objective: Callable | None = None, residual: Callable | None = None,
                   step_ratio: float = 1.0, y0=None):
    """Chambolle-Pock with theta = 1 and sigma * tau * L^2 = 1.

    ``op`` maps x to a tuple of dual-space blocks, ``adj`` maps such a tuple
    back.  ``prox_dual[i](p, sigma)`` is the prox of sigma F_i^* and
    ``prox_primal(x, tau)`` the prox of tau G.  Because the operator is
    linear, K x_bar = 2 K x_new - K x_old, so each iteration applies op and
    adj exactly once.  ``objective`` and ``residual`` are called as
    f(x, Kx) and traced per iteration.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if not L > 0:
        raise ValueError("L must be positive")
    tau = step_ratio / L
    sigma = 1.0 / (step_ratio * L)
    x = np.array(x0, dtype=np.float64, copy=True)
    kx = op(x)
    kx_bar = kx
    y = tuple(np.zeros_like(b) for b in kx) if y0 is None else tuple(np.copy(b) for b in y0)
    report = SolveReport()
    t0 = time.perf_counter()
    for k in range(iters):
        y = tuple(prox(yi + sigma * bi, sigma) for prox, yi, bi in zip(prox_dual, y, kx_bar))
        x = prox_primal(x - tau * adj(y), tau)
        kx_new = op(x)
        kx_bar = tuple(2.0 * a - b for a, b in zip(kx_new, kx))
        kx = kx_new
        if objective is not None:
            val = float(objective(x, kx))
            _check_finite(val, k)
            report.objective.append(val)
        else:
            _check_finite(float(np.sum(x)), k)
        if residual is not None:
            report.residual.append(float(residual(x, kx)))
    report.seconds = time.perf_counter() - t0
    report.extra["dual"] = y
    return x, report


def quadratic_dual(rhs, weight: float = 1.0):
    """Dual prox for (weight/2)||z - rhs||^2."""
    def prox(p, sigma):
        return (p - sigma * rhs) / (1.0 + sigma / weight)
    return prox


def box_dual(radius: float):
    """Dual prox for radius * ||z||_1, i.e. projection onto the l-infinity ball."""
    def prox(p, sigma):
        return np.clip(p, -radius, radius)
    return prox


def ball_dual(radius: float):
    """Dual prox for radius * sum |z(x)|_2 on vector fields."""
    def prox(p, sigma):
        return project_l21_ball(p, radius)
    return prox


# --- operator norms ---------------------------------------------------------------

_GRAD_NORM = math.sqrt(8.0)


def operator_norm(proj: Projector) -> float:
    """Cached power-method estimate of ||K||, stored on the projector."""
    if getattr(proj, "_norm", None) is None:
        n = proj.size
        proj._norm = power_method(proj.forward, proj.adjoint, (n, n), iters=60)
    return proj._norm


def _stacked_tv_norm(proj: Projector, c: float) -> float:
    """||(K, c grad)|| via power iteration, cached per scale."""
    cache = proj.__dict__.setdefault("_tv_norms", {})
    if c not in cache:
        n = proj.size
        cache[c] = power_method(lambda u: (proj.forward(u), c * grad(u)),
                                lambda y: proj.adjoint(y[0]) - c * div(y[1]),
                                (n, n), iters=60)
    return cache[c]


# --- problem plumbing -----------------------------------------------------------

@dataclass
class _Setup:
    proj: Projector
    data: np.ndarray
    size: int
    norm: float

    @property
    def tv_scale(self) -> float:
        return self.norm / _GRAD_NORM


def _setup(v: Sinogram) -> _Setup:
    geo = v.geometry
    if not v.mask.any():
        raise ValueError("sinogram has no measured angles")
    proj = projector(geo, v.mask)
    return _Setup(proj, v.measured, geo.size, operator_norm(proj))


def _check_bank(bank: WindowBank, n: int):
    if bank.size != n:
        raise ValueError(f"window bank size {bank.size} does not match image size {n}")


def _tv_radius(beta: float, n: int, c: float) -> float:
    # beta * TV(u) = beta / n * sum |grad u| = (beta / (n c)) * sum |c grad u|
    return beta / (n * c)


def _field_l21(p: np.ndarray) -> float:
    return float(np.sum(np.sqrt(p[0] ** 2 + p[1] ** 2)))


def _sq(a) -> float:
    return float(np.vdot(a, a).real)


def _positivity(cfg: SolverConfig):
    if cfg.nonneg:
        return lambda x, tau: prox_nonneg(x)
    return lambda x, tau: x


# --- l1 synthesis -----------------------------------------------------------------

def _theta_step(s: _Setup, bank: WindowBank, alpha: float, mu: float, coupled: np.ndarray | None,
                theta0: np.ndarray, iters: int, step_ratio: float):
    """min_theta 1/2||K Psi* theta - v||^2 + mu/2||K Psi* theta - coupled||^2 + alpha||theta||_1.

    Both quadratics share the operator, so they merge into one block with
    weight 1 + mu and right-hand side (v + mu * coupled) / (1 + mu).
    """
    v = s.data
    if coupled is None or mu == 0:
        weight, rhs, const = 1.0, v, 0.0
    else:
        weight = 1.0 + mu
        rhs = (v + mu * coupled) / weight
        # constant so the traced objective equals the unmerged functional
        const = 0.5 * (_sq(v) + mu * _sq(coupled)) - 0.5 * weight * _sq(rhs)

    def op(theta):
        return (s.proj.forward(synthesis(theta, bank)),)

    def adj(y):
        return analysis(s.proj.adjoint(y[0]), bank)

    def objective(theta, kx):
        return 0.5 * weight * _sq(kx[0] - rhs) + const + alpha * float(np.abs(theta).sum())

    def residual(theta, kx):
        return math.sqrt(_sq(kx[0] - v))

    return chambolle_pock(op, adj, [quadratic_dual(rhs, weight)],
                          lambda x, tau: prox_l1(x, tau * alpha), theta0, iters, s.norm,
                          objective, residual, step_ratio)


def reconstruct_l1_synthesis(v: Sinogram, bank: WindowBank, cfg: SolverConfig):
    """Synthesis-form l1 reconstruction; returns (u, theta, report)."""
    if not cfg.alpha > 0:
        raise ValueError("alpha must be positive")
    s = _setup(v)
    _check_bank(bank, s.size)
    theta0 = np.zeros((len(bank), s.size, s.size))
    theta, report = _theta_step(s, bank, cfg.alpha, 0.0, None, theta0,
                                cfg.inner_iters_l1, cfg.step_ratio)
    report.params = asdict(cfg)
    return synthesis(theta, bank), theta, report


# --- TV, analysis-l1 and hybrid -----------------------------------------------------

def _reconstruct_stacked(v: Sinogram, bank: WindowBank | None, alpha: float, beta: float,
                         cfg: SolverConfig, iters: int, u0=None):
    """min_u 1/2||K u - v||^2 + alpha||Psi u||_1 + beta TV(u) (+ positivity).

    Zero-weight terms are dropped from the stack rather than carried with a
    zero radius, so removing a term reproduces the smaller solver exactly.
    """
    s = _setup(v)
    n = s.size
    c = s.tv_scale
    d = s.norm
    use_tv = beta > 0
    use_l1 = alpha > 0
    if use_l1:
        _check_bank(bank, n)

    def op(u):
        out = [s.proj.forward(u)]
        if use_tv:
            out.append(c * grad(u))
        if use_l1:
            out.append(d * analysis(u, bank))
        return tuple(out)

    def adj(y):
        out = s.proj.adjoint(y[0])
        i = 1
        if use_tv:
            out = out - c * div(y[i])
            i += 1
        if use_l1:
            out = out + d * synthesis(y[i], bank)
        return out

    prox = [quadratic_dual(s.data)]
    if use_tv:
        prox.append(ball_dual(_tv_radius(beta, n, c)))
    if use_l1:
        prox.append(box_dual(alpha / d))

    # ||Psi|| = 1 and Psi* Psi = I, so the frame block adds d^2 to the normal operator
    L2 = (_stacked_tv_norm(s.proj, c) if use_tv else s.norm) ** 2
    if use_l1:
        L2 += (1.01 * d) ** 2
    L = math.sqrt(L2)

    def objective(u, kx):
        val = 0.5 * _sq(kx[0] - s.data)
        i = 1
        if use_tv:
            val += beta * _field_l21(kx[i]) / (c * n)
            i += 1
        if use_l1:
            val += alpha * float(np.abs(kx[i]).sum()) / d
        return val

    def residual(u, kx):
        return math.sqrt(_sq(kx[0] - s.data))

    x0 = np.zeros((n, n)) if u0 is None else u0
    u, report = chambolle_pock(op, adj, prox, _positivity(cfg), x0, iters, L,
                               objective, residual, cfg.step_ratio)
    report.params = asdict(cfg)
    return u, report


def reconstruct_tv(v: Sinogram, cfg: SolverConfig):
    """TV-regularized reconstruction with positivity; returns (u, report)."""
    if not cfg.beta > 0:
        raise ValueError("beta must be positive")
    return _reconstruct_stacked(v, None, 0.0, cfg.beta, cfg, cfg.inner_iters_tv)


def reconstruct_l1_analysis(v: Sinogram, bank: WindowBank, cfg: SolverConfig):
    """Analysis-form l1 reconstruction, min 1/2||Ku - v||^2 + alpha||Psi u||_1."""
    if not cfg.alpha > 0:
        raise ValueError("alpha must be positive")
    return _reconstruct_stacked(v, bank, cfg.alpha, 0.0, cfg, cfg.inner_iters_tv)


def reconstruct_hybrid(v: Sinogram, bank: WindowBank, cfg: SolverConfig):
    """Joint analysis-l1 plus TV penalty; returns (u, report)."""
    if not (cfg.alpha > 0 or cfg.beta > 0):
        raise ValueError("alpha or beta must be positive")
    return _reconstruct_stacked(v, bank, cfg.alpha, cfg.beta, cfg, cfg.inner_iters_tv)


# --- complementary l1-TV --------------------------------------------------------------

def _u_step(s: _Setup, target_data: np.ndarray, beta: float, mu: float, u0: np.ndarray,
            iters: int, step_ratio: float, nonneg: bool = True):
    """min_u beta TV(u) + positivity + mu/2 ||K u - target_data||^2."""
    n = s.size
    c = s.tv_scale

    def op(u):
        return (s.proj.forward(u), c * grad(u))

    def adj(y):
        return s.proj.adjoint(y[0]) - c * div(y[1])

    def objective(u, kx):
        return 0.5 * mu * _sq(kx[0] - target_data) + beta * _field_l21(kx[1]) / (c * n)

    def residual(u, kx):
        return math.sqrt(_sq(kx[0] - s.data))

    prox_primal = (lambda x, tau: prox_nonneg(x)) if nonneg else (lambda x, tau: x)
    return chambolle_pock(op, adj, [quadratic_dual(target_data, mu), ball_dual(_tv_radius(beta, n, c))],
                          prox_primal, u0, iters, _stacked_tv_norm(s.proj, c),
                          objective, residual, step_ratio)


def reconstruct_complementary(v: Sinogram, bank: WindowBank, cfg: SolverConfig, u0=None,
                              callback: Callable | None = None):
    """Alternating l1 (frame) and TV reconstructions tied by data proximity.

    Returns (u, aux, report) where aux = Psi* theta is the frame-side image.
    With mu = 0 there is no TV stage and u is the l1-synthesis image.
    ``report.extra["proximity"]`` holds ||K(u_n - Psi* theta_n)|| after each
    outer iteration; ``callback(n, u, aux)`` is called at the same points.
    """
    if not cfg.alpha > 0:
        raise ValueError("alpha must be positive")
    if cfg.outer_iters < 1:
        raise ValueError("outer_iters must be at least 1")
    s = _setup(v)
    n = s.size
    _check_bank(bank, n)
    u = np.zeros((n, n)) if u0 is None else np.array(u0, dtype=np.float64)
    theta = np.zeros((len(bank), n, n))
    aux = np.zeros((n, n))
    k_aux = np.zeros_like(s.data)
    report = SolveReport(params=asdict(cfg))
    proximity, stage_lengths = [], []
    t0 = time.perf_counter()
    for it in range(cfg.outer_iters):
        beta_n = cfg.beta * cfg.beta_schedule ** it
        k_aux_prev = k_aux
        theta, rep = _theta_step(s, bank, cfg.alpha, cfg.mu, s.proj.forward(u), theta,
                                 cfg.inner_iters_l1, cfg.step_ratio)
        report.extend(rep)
        stage_lengths.append(("theta", rep.iterations))
        aux = synthesis(theta, bank)
        k_aux = s.proj.forward(aux)
        target = k_aux_prev if cfg.jacobi_coupling else k_aux
        if cfg.mu > 0:
            u, rep = _u_step(s, target, beta_n, cfg.mu, u, cfg.inner_iters_tv,
                             cfg.step_ratio, cfg.nonneg)
            report.extend(rep)
            stage_lengths.append(("u", rep.iterations))
        else:
            # without coupling the TV stage has no data term; pass the frame image through
            u = aux.copy()
        proximity.append(math.sqrt(_sq(s.proj.forward(u) - k_aux)))
        if callback is not None:
            callback(it, u, aux)
    report.seconds = time.perf_counter() - t0
    report.extra["proximity"] = proximity
    report.extra["stages"] = stage_lengths
    return u, aux, report


# --- image-space coupling baseline ------------------------------------------------------

def _bb_theta_step(s: _Setup, bank: WindowBank, alpha: float, mu: float, u: np.ndarray,
                   theta0: np.ndarray, iters: int, step_ratio: float):
    """min_theta 1/2||K Psi* theta - v||^2 + alpha||theta||_1 + mu/2||Psi* theta - u||^2."""
    v = s.data
    use_mu = mu > 0

    def op(theta):
        w = synthesis(theta, bank)
        return (s.proj.forward(w), w) if use_mu else (s.proj.forward(w),)

    def adj(y):
        img = s.proj.adjoint(y[0])
        if use_mu:
            img = img + y[1]
        return analysis(img, bank)

    def objective(theta, kx):
        val = 0.5 * _sq(kx[0] - v) + alpha * float(np.abs(theta).sum())
        if use_mu:
            val += 0.5 * mu * _sq(kx[1] - u)
        return val

    def residual(theta, kx):
        return math.sqrt(_sq(kx[0] - v))

    prox = [quadratic_dual(v)]
    L = s.norm
    if use_mu:
        prox.append(quadratic_dual(u, mu))
        L = math.sqrt(s.norm ** 2 + 1.01 ** 2)
    return chambolle_pock(op, adj, prox, lambda x, tau: prox_l1(x, tau * alpha),
                          theta0, iters, L, objective, residual, step_ratio)


def tv_denoise(w: np.ndarray, beta: float, mu: float, iters: int, nonneg: bool = True,
               u0=None, step_ratio: float = 1.0):
    """min_u beta TV(u) + mu/2||u - w||^2 (+ positivity).

    With beta = 0 the minimizer is w (or its positive part) in closed form.
    """
    n = w.shape[0]
    if beta == 0:
        out = prox_nonneg(w) if nonneg else np.array(w, copy=True)
        return out, SolveReport(objective=[0.0], residual=[0.0])
    if not mu > 0:
        raise ValueError("mu must be positive")

    def op(u):
        return (grad(u),)

    def adj(y):
        return -div(y[0])

    def prox_primal(x, tau):
        x = (x + tau * mu * w) / (1.0 + tau * mu)
        return prox_nonneg(x) if nonneg else x

    def objective(u, kx):
        return 0.5 * mu * _sq(u - w) + beta * _field_l21(kx[0]) / n

    x0 = np.zeros_like(w) if u0 is None else u0
    return chambolle_pock(op, adj, [ball_dual(beta / n)], prox_primal, x0, iters,
                          _GRAD_NORM, objective, None, step_ratio)


def reconstruct_bb(v: Sinogram, bank: WindowBank, cfg: SolverConfig, u0=None,
                   callback: Callable | None = None):
    """Alternating l1 and TV steps coupled through mu/2||w - u||^2 in image space.

    Returns (u, report); ``report.extra["aux"]`` holds the final w.
    """
    if not cfg.mu > 0:
        raise ValueError("mu must be positive")
    s = _setup(v)
    n = s.size
    _check_bank(bank, n)
    u = np.zeros((n, n)) if u0 is None else np.array(u0, dtype=np.float64)
    theta = np.zeros((len(bank), n, n))
    w = np.zeros((n, n))
    report = SolveReport(params=asdict(cfg))
    gaps = []
    t0 = time.perf_counter()
    for it in range(cfg.outer_iters):
        beta_n = cfg.beta * cfg.beta_schedule ** it
        w_prev = w
        if cfg.alpha > 0:
            theta, rep = _bb_theta_step(s, bank, cfg.alpha, cfg.mu, u, theta,
                                        cfg.inner_iters_l1, cfg.step_ratio)
            report.extend(rep)
            w = synthesis(theta, bank)
        target = w_prev if cfg.jacobi_coupling else w
        u, rep = tv_denoise(target, beta_n, cfg.mu, cfg.inner_iters_tv, cfg.nonneg, u,
                            cfg.step_ratio)
        report.objective.extend(rep.objective)
        report.residual.extend([math.sqrt(_sq(s.proj.forward(u) - s.data))] * rep.iterations)
        gaps.append(float(np.linalg.norm(w - u)))
        if callback is not None:
            callback(it, u, w)
    report.seconds = time.perf_counter() - t0
    report.extra["aux"] = w
    report.extra["gap"] = gaps
    return u, report
