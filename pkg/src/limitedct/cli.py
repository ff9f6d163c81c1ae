"""Command line entry point: ``python3 -m limitedct <command> [options]``.

Every command writes into one run directory: the effective configuration
(``config.txt``, key=value), artifacts and a log.  The directory is
``--run-dir`` if given, otherwise ``$LIMITEDCT_RUNS/<command>-<config hash>``
(``./runs`` when the variable is unset), so rerunning a configuration lands
in the same place.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import experiment as ex
from .grid import read_raster, write_png, write_raster
from .metrics import METRIC_FIELDS, append_metrics_row, evaluate, read_metrics
from .radon import read_sinogram, write_sinogram
from .sim import write_phantom
from .solvers import DivergenceError

log = logging.getLogger("limitedct")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_DIVERGED = 0, 1, 2, 3
RUN_ROOT_ENV = "LIMITEDCT_RUNS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- configuration --------------------------------------------------------------------

def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def format_config(cfg: ex.RunConfig) -> str:
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def build_config(args) -> ex.RunConfig:
    raw = read_config_file(args.config) if args.config else {}
    for f in fields(ex.RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            raw[f.name] = flag
    values = {}
    for key, text in raw.items():
        try:
            values[key] = ex.coerce(key, str(text))
        except KeyError as err:
            raise UsageError(str(err)) from None
        except ValueError as err:
            raise UsageError(f"{key}: {err}") from None
    try:
        return ex.RunConfig(**values)
    except ValueError as err:
        raise UsageError(str(err)) from None


def run_dir_for(command: str, cfg: ex.RunConfig, explicit: str | None) -> Path:
    if explicit:
        path = Path(explicit)
    else:
        digest = hashlib.sha1(format_config(cfg).encode()).hexdigest()[:10]
        path = Path(os.environ.get(RUN_ROOT_ENV, "runs")) / f"{command}-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _attach_log(run_dir: Path):
    handler = logging.FileHandler(run_dir / "log.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return handler


# --- commands ----------------------------------------------------------------------------

def _png(path, img):
    write_png(path, img, 0.0, 1.0)


def cmd_phantom(cfg: ex.RunConfig, run_dir: Path) -> None:
    ph = ex.phantom_for(cfg)
    from .sim import rasterize

    img = rasterize(ph, cfg.size)
    write_raster(run_dir / "phantom.grd", img)
    _png(run_dir / "phantom.png", img)
    write_phantom(run_dir / "phantom.txt", ph)
    log.info("phantom %s at %d px", cfg.phantom_file or cfg.phantom, cfg.size)


def cmd_project(cfg: ex.RunConfig, run_dir: Path) -> ex.Data:
    data = ex.make_data(cfg)
    write_raster(run_dir / "phantom.grd", data.truth)
    _png(run_dir / "phantom.png", data.truth)
    write_sinogram(run_dir / "clean", data.clean)
    write_sinogram(run_dir / "noisy", data.noisy)
    log.info("%d measured angles, %d clamped bins, attenuation scale %.6g",
             int(data.noisy.mask.sum()), data.stats["clamped"], data.stats["attenuation_scale"])
    return data


def _load_data(cfg: ex.RunConfig) -> ex.Data:
    data = ex.make_data(cfg)
    if cfg.sinogram:
        noisy = read_sinogram(cfg.sinogram, cfg.size)
        return ex.Data(data.truth, data.clean, noisy, data.stats)
    return data


def _write_result(run_dir: Path, cfg: ex.RunConfig, truth, res: ex.Result, stem="recon"):
    write_raster(run_dir / f"{stem}.grd", res.image)
    _png(run_dir / f"{stem}.png", res.image)
    if res.aux is not None:
        write_raster(run_dir / f"{stem}_aux.grd", res.aux)
        _png(run_dir / f"{stem}_aux.png", res.aux)
    res.report.write_csv(run_dir / f"{stem}_report.csv")
    m = evaluate(res.image, truth)
    row = {"method": cfg.method, "photons": repr(float(cfg.photons)), **m,
           "seconds": res.seconds if cfg.record_time else 0.0}
    append_metrics_row(run_dir / "metrics.csv", row)
    log.info("%s: rel_l2 %.5f psnr %.3f ssim %.4f (%.1f s)", cfg.method, m["rel_l2"],
             m["psnr"], m["ssim"], res.seconds)
    return m


def cmd_reconstruct(cfg: ex.RunConfig, run_dir: Path) -> dict:
    data = _load_data(cfg)
    bank = None if cfg.method in ("fbp", "tv") else ex.bank_for(cfg)
    res = ex.run_method(cfg.method, data.noisy, cfg.solver_config(), bank)
    return _write_result(run_dir, cfg, data.truth, res)


def parse_grid(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise UsageError(f"grid {text!r} must look like param=v1,v2,...")
    name, values = text.split("=", 1)
    name = name.strip()
    if name not in ("alpha", "beta", "mu"):
        raise UsageError(f"cannot sweep {name!r}; choose alpha, beta or mu")
    try:
        vals = [float(v) for v in values.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"bad grid values in {text!r}") from None
    if not vals:
        raise UsageError(f"empty grid for {name}")
    return name, vals


def cmd_sweep(cfg: ex.RunConfig, run_dir: Path, grids: list) -> ex.RunConfig:
    data = _load_data(cfg)
    bank = None if cfg.method in ("fbp", "tv") else ex.bank_for(cfg)
    path = run_dir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "rel_l2", "psnr", "ssim"])

        def on_row(r):
            w.writerow([r.param, repr(r.value), repr(r.rel_l2), repr(r.psnr), repr(r.ssim)])
            fh.flush()
            log.info("%s=%g: rel_l2 %.5f", r.param, r.value, r.rel_l2)

        best, res, _ = ex.sweep(cfg.method, data.noisy, data.truth, cfg.solver_config(),
                                grids, bank, on_row)
    best_cfg = replace(cfg, alpha=best.alpha, beta=best.beta, mu=best.mu)
    (run_dir / "best_config.txt").write_text(format_config(best_cfg))
    _write_result(run_dir, best_cfg, data.truth, res, stem="best")
    return best_cfg


def cmd_table(run_dir: Path) -> int:
    """Collect metrics.csv files below run_dir into table.csv, flagging per-photon bests."""
    rows = []
    for path in sorted(Path(run_dir).rglob("metrics.csv")):
        rows.extend(read_metrics(path))
    out = Path(run_dir) / "table.csv"
    header = ["photons", "method", "rel_l2", "psnr", "ssim",
              "best_rel_l2", "best_psnr", "best_ssim"]
    if not rows:
        log.warning("no metrics.csv found under %s", run_dir)
        with open(out, "w", newline="") as fh:
            csv.writer(fh).writerow(header)
        return 0
    # the last row per (photons, method) wins
    latest = {}
    for r in rows:
        latest[(float(r["photons"]), r["method"])] = r
    photons = sorted({k[0] for k in latest})
    methods = [m for m in ex.METHODS if any(k[1] == m for k in latest)]
    methods += sorted({k[1] for k in latest} - set(methods))
    for p in photons:
        for m in methods:
            if (p, m) not in latest:
                log.warning("missing run: method=%s photons=%g", m, p)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in photons:
            group = [(m, latest[(p, m)]) for m in methods if (p, m) in latest]
            vals = {k: [float(r[k]) for _, r in group] for k in ("rel_l2", "psnr", "ssim")}
            best = {"rel_l2": int(np.argmin(vals["rel_l2"])),
                    "psnr": int(np.argmax(vals["psnr"])),
                    "ssim": int(np.argmax(vals["ssim"]))}
            for i, (m, r) in enumerate(group):
                w.writerow([repr(p), m, r["rel_l2"], r["psnr"], r["ssim"],
                            int(best["rel_l2"] == i), int(best["psnr"] == i), int(best["ssim"] == i)])
    log.info("wrote %s", out)
    return len(latest)


def cmd_check() -> bool:
    """Quick invariant suite on small problems; returns True when all pass."""
    from .frames import WindowSpec, analysis, build_window_bank, synthesis
    from .radon import Sinogram, full_geometry, radon_adjoint, radon_forward
    from .regularizers import div, grad
    from .solvers import chambolle_pock, power_method, quadratic_dual

    rng = np.random.default_rng(0)
    results = {}
    geo = full_geometry(32, 24)
    u = rng.standard_normal((32, 32))
    v = rng.standard_normal((24, geo.n_bins))
    ku = radon_forward(u, geo).values
    results["radon adjoint"] = abs(np.vdot(ku, v) - np.vdot(u, radon_adjoint(Sinogram(geo, v)))) \
        <= 1e-6 * np.linalg.norm(ku) * np.linalg.norm(v)
    p = rng.standard_normal((2, 32, 32))
    results["grad/div adjoint"] = abs(np.vdot(grad(u), p) + np.vdot(u, div(p))) \
        <= 1e-12 * np.linalg.norm(grad(u)) * np.linalg.norm(p)
    for adapted in (None, math.radians(65)):
        bank = build_window_bank(64, WindowSpec(wedge_half_angle=adapted))
        x = rng.standard_normal((64, 64))
        name = "frame tightness" + (" (adapted)" if adapted else "")
        results[name] = bank.partition_error() <= 1e-10 and \
            np.linalg.norm(synthesis(analysis(x, bank), bank) - x) <= 1e-10 * np.linalg.norm(x)
    a = rng.standard_normal((20, 20))
    b = rng.standard_normal(20)
    lam = 0.5
    exact = np.linalg.solve(a.T @ a + lam * np.eye(20), a.T @ b)
    L = power_method(lambda z: (a @ z,), lambda y: a.T @ y[0], 20)
    xk, _ = chambolle_pock(lambda z: (a @ z,), lambda y: a.T @ y[0], [quadratic_dual(b)],
                           lambda z, t: z / (1 + t * lam), np.zeros(20), 2000, L)
    results["primal-dual oracle"] = np.linalg.norm(xk - exact) <= 1e-4 * np.linalg.norm(exact)
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return all(results.values())


# --- argument parsing ------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--run-dir", help="output directory (default: derived from the config)")
    for f in fields(ex.RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="limitedct", description="Limited-angle CT reconstruction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, helptext in [("phantom", "rasterize the phantom"),
                           ("project", "simulate clean and noisy sinograms"),
                           ("reconstruct", "run one reconstruction method"),
                           ("sweep", "grid-search regularization weights")]:
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        if name == "sweep":
            p.add_argument("--grid", action="append", default=[],
                           help="param=v1,v2,... ; repeat to sweep several parameters in order")
    t = sub.add_parser("table", help="aggregate metrics.csv files into one table")
    t.add_argument("run_dir")
    sub.add_parser("check", help="run the quick invariant suite")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    log.setLevel(logging.INFO)
    handler = None
    try:
        args = make_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        if args.command == "check":
            return EXIT_OK if cmd_check() else EXIT_RUNTIME
        if args.command == "table":
            cmd_table(Path(args.run_dir))
            return EXIT_OK
        cfg = build_config(args)
        grids = [parse_grid(g) for g in getattr(args, "grid", [])]
        if args.command == "sweep" and not grids:
            raise UsageError("sweep needs at least one --grid")
        run_dir = run_dir_for(args.command, cfg, args.run_dir)
        handler = _attach_log(run_dir)
        (run_dir / "config.txt").write_text(format_config(cfg))
        if args.command == "phantom":
            cmd_phantom(cfg, run_dir)
        elif args.command == "project":
            cmd_project(cfg, run_dir)
        elif args.command == "reconstruct":
            cmd_reconstruct(cfg, run_dir)
        elif args.command == "sweep":
            cmd_sweep(cfg, run_dir, grids)
        print(run_dir)
        return EXIT_OK
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


__all__ = ["main", "cmd_phantom", "cmd_project", "cmd_reconstruct", "cmd_sweep", "cmd_table",
           "cmd_check", "read_raster", "METRIC_FIELDS"]
