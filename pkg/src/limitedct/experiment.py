"""Experiment plumbing shared by the command line, scripts and acceptance tests."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import sim
from .frames import WindowBank, WindowSpec, build_window_bank
from .metrics import evaluate
from .radon import Geometry, Sinogram, fbp, full_geometry, limited_mask, radon_limited
from .solvers import (
    SolveReport, SolverConfig, reconstruct_bb, reconstruct_complementary, reconstruct_hybrid,
    reconstruct_l1_synthesis, reconstruct_tv,
)

log = logging.getLogger(__name__)

METHODS = ("fbp", "l1", "tv", "hybrid", "bb", "complementary")
MODES = ("limited", "sparse", "full")


@dataclass
class RunConfig:
    size: int = 256
    mode: str = "limited"
    half_range: float = 65.0
    sparse_views: int = 50
    full_views: int = 180
    angle_step: float = 1.0
    phantom: str = "thorax"
    phantom_file: str = ""
    data_model: str = "discrete"
    photons: float = 1e4
    attenuation_scale: float = 0.0
    seed: int = 0
    method: str = "complementary"
    alpha: float = 1e-4
    beta: float = 1e-4
    mu: float = 1.0
    outer_iters: int = 0
    inner_iters_l1: int = 200
    inner_iters_tv: int = 500
    beta_schedule: float = 2.0
    step_ratio: float = 100.0
    jacobi_coupling: bool = False
    nonneg: bool = True
    scales: int = 3
    wedges: str = ""
    nu: str = "exp"
    wedge_adapted: bool = True
    sinogram: str = ""
    record_time: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.phantom_file and self.phantom not in sim.PRESETS:
            raise ValueError(f"unknown phantom preset {self.phantom!r}; choose from {sorted(sim.PRESETS)}")
        if self.data_model not in ("discrete", "analytic"):
            raise ValueError("data_model must be 'discrete' or 'analytic'")
        if not self.photons >= 1:
            raise ValueError("photons must be at least 1")
        if self.size < 16:
            raise ValueError("size must be at least 16")
        if not 0 < self.half_range < 90:
            raise ValueError("half_range must lie in (0, 90) degrees")
        if self.sparse_views < 1 or self.full_views < 1:
            raise ValueError("view counts must be positive")
        if not self.angle_step > 0:
            raise ValueError("angle_step must be positive")
        self.solver_config()
        self.window_spec()

    def solver_config(self) -> SolverConfig:
        names = {f.name for f in fields(SolverConfig)}
        kw = {k: v for k, v in asdict(self).items() if k in names}
        kw["outer_iters"] = self.resolved_outer_iters()
        return SolverConfig(**kw)

    def resolved_outer_iters(self) -> int:
        """outer_iters = 0 picks 10 outer steps, or 4 below 10^4 photons."""
        if self.outer_iters:
            return self.outer_iters
        return 10 if self.photons >= 1e4 else 4

    def window_spec(self) -> WindowSpec:
        wedges = tuple(int(w) for w in self.wedges.replace(",", " ").split()) if self.wedges else ()
        # the adapted tiling follows the visible wedge, so it only applies to limited view
        adapt = self.wedge_adapted and self.mode == "limited"
        half = math.radians(self.half_range) if adapt else None
        return WindowSpec(self.scales, wedges, self.nu, half)


def coerce(name: str, text: str):
    """Parse a string into the type of the RunConfig field ``name``."""
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise KeyError(f"unknown config key {name!r}")
    kind = types[name]
    if kind in ("bool", bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if kind in ("int", int):
        return int(float(text)) if float(text).is_integer() else int(text)
    if kind in ("float", float):
        return float(text)
    return text.strip()


def geometry_for(cfg: RunConfig) -> tuple[Geometry, np.ndarray]:
    n = cfg.size
    if cfg.mode == "limited":
        degrees = np.arange(-90.0, 90.0, cfg.angle_step)
        geo = Geometry.from_degrees(n, degrees)
        return geo, limited_mask(geo, cfg.half_range)
    views = cfg.sparse_views if cfg.mode == "sparse" else cfg.full_views
    geo = full_geometry(n, views)
    return geo, np.ones(views, dtype=bool)


def phantom_for(cfg: RunConfig) -> sim.EllipsePhantom:
    if cfg.phantom_file:
        return sim.read_phantom(cfg.phantom_file)
    return sim.preset(cfg.phantom)


@dataclass
class Data:
    truth: np.ndarray
    clean: Sinogram
    noisy: Sinogram
    stats: dict


def make_data(cfg: RunConfig) -> Data:
    """Phantom raster, masked clean sinogram and its noisy version.

    ``photons = inf`` skips the noise.  With ``data_model = discrete`` the clean data is the discrete projector
    applied to the raster; ``analytic`` uses exact ellipse line integrals.
    """
    ph = phantom_for(cfg)
    truth = sim.rasterize(ph, cfg.size)
    geo, mask = geometry_for(cfg)
    if cfg.data_model == "analytic":
        clean = sim.analytic_sinogram(ph, geo, mask)
    else:
        clean = radon_limited(truth, geo, mask)
    if math.isinf(cfg.photons):
        return Data(truth, clean, clean, {"clamped": 0})
    noise = sim.NoiseConfig(cfg.photons, cfg.attenuation_scale or None, cfg.seed)
    stats = {}
    noisy = sim.apply_poisson_noise(clean, noise, stats)
    if stats["clamped"]:
        log.warning("%d bins had zero counts and were clamped", stats["clamped"])
    return Data(truth, clean, noisy, stats)


def bank_for(cfg: RunConfig, cache: dict | None = None) -> WindowBank:
    spec = cfg.window_spec()
    key = (cfg.size, spec)
    if cache is not None and key in cache:
        return cache[key]
    bank = build_window_bank(cfg.size, spec)
    if cache is not None:
        cache[key] = bank
    return bank


@dataclass
class Result:
    image: np.ndarray
    report: SolveReport
    aux: np.ndarray | None
    seconds: float


def run_method(method: str, v: Sinogram, scfg: SolverConfig, bank: WindowBank | None = None,
               callback=None) -> Result:
    t0 = time.perf_counter()
    aux = None
    if method == "fbp":
        image, report = fbp(v), SolveReport()
    elif method == "l1":
        image, aux, report = reconstruct_l1_synthesis(v, bank, scfg)
        aux = None
    elif method == "tv":
        image, report = reconstruct_tv(v, scfg)
    elif method == "hybrid":
        image, report = reconstruct_hybrid(v, bank, scfg)
    elif method == "bb":
        image, report = reconstruct_bb(v, bank, scfg, callback=callback)
        aux = report.extra.get("aux")
    elif method == "complementary":
        image, aux, report = reconstruct_complementary(v, bank, scfg, callback=callback)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Result(image, report, aux, time.perf_counter() - t0)


# parameters each method actually uses, in sweep order
SWEEP_PARAMS = {
    "fbp": (),
    "l1": ("alpha",),
    "tv": ("beta",),
    "hybrid": ("alpha", "beta"),
    "bb": ("alpha", "beta"),
    "complementary": ("alpha", "beta"),
}


@dataclass
class SweepRow:
    param: str
    value: float
    rel_l2: float
    psnr: float
    ssim: float


def sweep(method: str, v: Sinogram, truth: np.ndarray, scfg: SolverConfig,
          grids: list, bank: WindowBank | None = None, on_row=None):
    """Coordinate-wise grid search minimizing rel_l2.

    ``grids`` is a list of (param, values) swept in order; each stage keeps
    the best value found so far.  For the complementary method, the alpha
    stage scores the l1-synthesis solve (the theta-step on its own), so the
    frame weight is fixed before any coupled run.
    Returns (best_config, best_result, rows).
    """
    if not grids:
        raise ValueError("empty sweep")
    rows, best, best_res = [], scfg, None
    for param, values in grids:
        values = list(values)
        if not values:
            raise ValueError(f"empty grid for {param}")
        stage_method = "l1" if (method == "complementary" and param == "alpha") else method
        scores = []
        for val in values:
            trial = replace(best, **{param: val})
            res = run_method(stage_method, v, trial, bank)
            m = evaluate(res.image, truth)
            row = SweepRow(param, float(val), m["rel_l2"], m["psnr"], m["ssim"])
            rows.append(row)
            scores.append((m["rel_l2"], trial, res))
            if on_row is not None:
                on_row(row)
        k = int(np.argmin([s[0] for s in scores]))
        best = scores[k][1]
        if stage_method == method:
            best_res = scores[k][2]
        if len(values) >= 3 and k in (0, len(values) - 1):
            log.warning("best %s=%g lies on the grid boundary", param, values[k])
    if best_res is None:
        best_res = run_method(method, v, best, bank)
    return best, best_res, rows


# --- the comparison protocol ---------------------------------------------------------

L1_ALPHAS = (1e-5, 3e-5, 1e-4, 3e-4)
TV_BETAS = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
HYBRID_ALPHAS = (1e-6, 1e-5, 1e-4)
# complementary beta candidates, relative to the TV optimum carried to the last outer step
COMPLEMENTARY_BETA_FACTORS = (0.5, 1.0, 2.0, 4.0)
PROTOCOL_ORDER = ("fbp", "l1", "tv", "hybrid", "complementary", "bb")


@dataclass
class Outcome:
    method: str
    config: SolverConfig
    metrics: dict
    result: Result
    rows: list
    seconds: float


def complementary_betas(tv_beta: float, scfg: SolverConfig) -> list:
    """beta grid whose last-step weight beta * schedule^(N-1) / mu brackets the TV optimum."""
    last = scfg.beta_schedule ** (scfg.outer_iters - 1)
    return [f * tv_beta * scfg.mu / last for f in COMPLEMENTARY_BETA_FACTORS]


def run_protocol(cfg: RunConfig, methods=PROTOCOL_ORDER, data: Data | None = None,
                 on_row=None, on_outcome=None, fixed: SolverConfig | None = None) -> dict:
    """Sweep every method on one dataset and return {method: Outcome}.

    l1 sweeps alpha and tv sweeps beta.  hybrid starts from the TV beta and
    sweeps alpha.  complementary takes alpha from the l1 sweep (its theta-step
    alone), then sweeps beta on a grid tied to the TV optimum.  bb is run once
    at the complementary optimum, which is the matched-parameter ablation.
    Methods missing a prerequisite are swept on their own defaults.  ``fixed``
    sets the bb parameters when complementary is not part of this call.
    """
    data = data or make_data(cfg)
    bank = bank_for(cfg)
    base = cfg.solver_config()
    v, truth = data.noisy, data.truth
    out = {}

    def finish(method, scfg, res, rows, t0):
        o = Outcome(method, scfg, evaluate(res.image, truth), res, rows, time.perf_counter() - t0)
        out[method] = o
        log.info("%s: rel_l2 %.5f (%.0f s) alpha=%g beta=%g mu=%g", method, o.metrics["rel_l2"],
                 o.seconds, scfg.alpha, scfg.beta, scfg.mu)
        if on_outcome is not None:
            on_outcome(o)

    for method in methods:
        t0 = time.perf_counter()
        scfg = base
        if method == "fbp":
            finish(method, scfg, run_method("fbp", v, scfg), [], t0)
            continue
        if method == "bb":
            if "complementary" in out:
                scfg = out["complementary"].config
            elif fixed is not None:
                scfg = fixed
            finish(method, scfg, run_method("bb", v, scfg, bank), [], t0)
            continue
        grids = []
        if method == "l1":
            grids = [("alpha", L1_ALPHAS)]
        elif method == "tv":
            grids = [("beta", TV_BETAS)]
        elif method == "hybrid":
            if "tv" in out:
                scfg = replace(scfg, beta=out["tv"].config.beta)
            grids = [("alpha", HYBRID_ALPHAS)]
        elif method == "complementary":
            if "l1" in out:
                scfg = replace(scfg, alpha=out["l1"].config.alpha)
            else:
                grids.append(("alpha", L1_ALPHAS))
            tv_beta = out["tv"].config.beta if "tv" in out else scfg.beta
            grids.append(("beta", complementary_betas(tv_beta, scfg)))
        best, res, rows = sweep(method, v, truth, scfg, grids, bank, on_row)
        finish(method, best, res, rows, t0)
    return out
