"""Command line pipeline: mesh -> Forman subdivision -> fabric -> flow -> permeability.

Configuration comes from an INI file (sections ``mesh``, ``statistics``,
``physics``, ``run``, ``solver``, ``output``) and is overridden by flags.
Run ``formanflow <command> --help`` for the flags of each command.

Exit codes: 0 success, 2 configuration error, 3 input-format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import multiprocessing
import resource
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fabric as fab
from . import io_formats as iof
from .calculus import Operators
from .complex_core import CellComplex
from .errors import (
    CapacityError,
    ConfigError,
    DegeneracyError,
    FormanFlowError,
    FormatError,
    NumericError,
    OrientationError,
    StructuralError,
    TopologyError,
    ValidationError,
)
from .flow import FlowProblem, SOLVERS, FLUX_METHODS, measure_permeability, opposite_faces, solve_steady
from .forman import FormanComplex, build_forman
from .voronoi import random_voronoi

log = logging.getLogger("formanflow")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
AXES = {"x": 0, "y": 1, "z": 2}
MESH_SOURCES = ("grid", "tess", "voronoi")


# --------------------------------------------------------------------------
# configuration


def _floats(text, n=None, what="value"):
    try:
        vals = [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {len(vals)}")
    return tuple(vals)


@dataclass
class RunConfig:
    """All run parameters. Units are SI (m, Pa, Pa s, m^3)."""

    # mesh
    mesh_source: str = "voronoi"
    tess_path: str | None = None
    grid: tuple = (4, 4, 4)
    size: tuple | None = None  # box edge lengths; voronoi default sizes the box from the grain statistics
    voronoi_cells: int = 500
    mesh_seed: int = 1
    lloyd: int = 0
    # statistics
    voluminous_csv: str | None = None
    expansive_csv: str | None = None
    grains_csv: str | None = None
    voids_csv: str | None = None
    target_porosity: float = 0.21
    thin_long_ratio: float = fab.THIN_LONG_RATIO
    voluminous_ratio: float = fab.VOLUMINOUS_RATIO
    smallest_grain_volume: float = 0.0
    # physics
    viscosity: float = fab.DEFAULT_VISCOSITY
    pressure_drop: float = 1.0
    default_conductivity: float = fab.DEFAULT_CONDUCTIVITY
    c_fluid: float = fab.C_FLUID
    c_solid: float = fab.C_SOLID
    max_aspect: float | None = fab.VOLUMINOUS_RATIO
    # run
    directions: str = "xyz"
    realisations: int = 30
    base_seed: int = 0
    retessellate: bool = False
    workers: int = 1
    # solver
    rtol: float = 1e-10
    solver: str = "auto"
    flux_method: str = "dual"
    # output
    output_dir: str = "results"
    export_fields: bool = False
    timing: bool = True

    def validate(self) -> "RunConfig":
        if self.mesh_source not in MESH_SOURCES:
            raise ConfigError(f"mesh source must be one of {MESH_SOURCES}, got {self.mesh_source!r}")
        if self.mesh_source == "tess" and not self.tess_path:
            raise ConfigError("mesh source 'tess' needs a path")
        if self.mesh_source == "grid" and (len(self.grid) != 3 or min(self.grid) < 1):
            raise ConfigError(f"grid needs three positive counts, got {self.grid}")
        if self.size is not None and (len(self.size) != 3 or min(self.size) <= 0):
            raise ConfigError(f"size needs three positive lengths, got {self.size}")
        if self.voronoi_cells < 1:
            raise ConfigError("voronoi cell count must be positive")
        if not self.directions or set(self.directions) - set(AXES) or len(set(self.directions)) != len(self.directions):
            raise ConfigError(f"directions must be distinct letters from 'xyz', got {self.directions!r}")
        if self.realisations < 1:
            raise ConfigError("realisations must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0.0 <= self.target_porosity < 1.0:
            raise ConfigError(f"target porosity must lie in [0, 1), got {self.target_porosity}")
        for name in ("viscosity", "pressure_drop", "default_conductivity", "rtol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if self.flux_method not in FLUX_METHODS:
            raise ConfigError(f"flux method must be one of {FLUX_METHODS}")
        if (self.voluminous_csv is None) != (self.expansive_csv is None):
            raise ConfigError("give both statistics CSV files or neither")
        if (self.grains_csv is None) != (self.voids_csv is None):
            raise ConfigError("give both segmentation CSV files or neither")
        return self


# (section, key) -> (field, parser)
_KEYS = {
    ("mesh", "source"): ("mesh_source", str),
    ("mesh", "path"): ("tess_path", str),
    ("mesh", "grid"): ("grid", lambda s: tuple(int(v) for v in _floats(s, 3, "mesh.grid"))),
    ("mesh", "size"): ("size", lambda s: _floats(s, 3, "mesh.size")),
    ("mesh", "cells"): ("voronoi_cells", int),
    ("mesh", "seed"): ("mesh_seed", int),
    ("mesh", "lloyd"): ("lloyd", int),
    ("statistics", "voluminous_csv"): ("voluminous_csv", str),
    ("statistics", "expansive_csv"): ("expansive_csv", str),
    ("statistics", "grains_csv"): ("grains_csv", str),
    ("statistics", "voids_csv"): ("voids_csv", str),
    ("statistics", "target_porosity"): ("target_porosity", float),
    ("statistics", "thin_long_ratio"): ("thin_long_ratio", float),
    ("statistics", "voluminous_ratio"): ("voluminous_ratio", float),
    ("statistics", "smallest_grain_volume"): ("smallest_grain_volume", float),
    ("physics", "viscosity"): ("viscosity", float),
    ("physics", "pressure_drop"): ("pressure_drop", float),
    ("physics", "default_conductivity"): ("default_conductivity", float),
    ("physics", "c_fluid"): ("c_fluid", float),
    ("physics", "c_solid"): ("c_solid", float),
    ("physics", "max_aspect"): ("max_aspect", lambda s: None if s.lower() == "none" else float(s)),
    ("run", "directions"): ("directions", str),
    ("run", "realisations"): ("realisations", int),
    ("run", "base_seed"): ("base_seed", int),
    ("run", "retessellate"): ("retessellate", "bool"),
    ("run", "workers"): ("workers", int),
    ("solver", "rtol"): ("rtol", float),
    ("solver", "method"): ("solver", str),
    ("solver", "flux"): ("flux_method", str),
    ("output", "dir"): ("output_dir", str),
    ("output", "export_fields"): ("export_fields", "bool"),
    ("output", "timing"): ("timing", "bool"),
}

_BOOLS = configparser.ConfigParser.BOOLEAN_STATES


def _apply(cfg: RunConfig, section: str, key: str, value: str):
    try:
        name, parse = _KEYS[section, key]
    except KeyError:
        raise ConfigError(f"unknown configuration key {section}.{key}") from None
    try:
        if parse == "bool":
            if value.lower() not in _BOOLS:
                raise ValueError(f"not a boolean: {value!r}")
            val = _BOOLS[value.lower()]
        else:
            val = parse(value)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    setattr(cfg, name, val)


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the INI file at ``path``, then ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = Path(path).parent
        for section in parser.sections():
            for key, value in parser.items(section):
                _apply(cfg, section, key, value)
                # relative input paths are resolved against the config file
                if key in ("path", "voluminous_csv", "expansive_csv", "grains_csv", "voids_csv") and not Path(value).is_absolute():
                    setattr(cfg, _KEYS[section, key][0], str(base / value))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _apply(cfg, section, key, value.strip())
    return cfg.validate()


# --------------------------------------------------------------------------
# pipeline


@dataclass
class ResultRow:
    realisation: int
    direction: str
    seed: int
    achieved_porosity: float | None = None
    Q_m3_per_s: float | None = None
    K_cond: float | None = None
    k_m2: float | None = None
    residual: float | None = None
    wall_s: float | None = None
    error: str | None = None
    imbalance: float | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(eq=False)
class Context:
    """Mesh, subdivision, operators and statistics shared by realisations."""

    M: CellComplex
    K: FormanComplex
    ops: Operators
    stats: fab.FeatureStats
    mesh_seed: int | None = None
    setup_s: float = 0.0


def peak_memory_mb() -> float:
    """Peak resident set size of this process (MB)."""
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return rss / 1024.0 if sys.platform != "darwin" else rss / 2**20


def load_stats(cfg: RunConfig) -> fab.FeatureStats:
    if cfg.voluminous_csv is not None:
        try:
            return fab.load_feature_stats(cfg.voluminous_csv, cfg.expansive_csv, cfg.target_porosity, cfg.smallest_grain_volume)
        except OSError as exc:
            raise FormatError(f"cannot read statistics: {exc}") from None
    if cfg.grains_csv is not None:
        g = iof.read_field_csv(cfg.grains_csv)
        v = iof.read_field_csv(cfg.voids_csv)
        try:
            voids = list(zip(v["volume_m3"], v["L"], v["I"], v["S"]))
            grains = g["volume_m3"]
        except KeyError as exc:
            raise FormatError(f"segmentation CSV is missing column {exc}") from None
        return fab.feature_stats(
            grains, voids, cfg.target_porosity,
            thin_long=cfg.thin_long_ratio, voluminous=cfg.voluminous_ratio,
        )
    return fab.synthetic_sandstone(cfg.target_porosity)


def build_mesh(cfg: RunConfig, stats: fab.FeatureStats | None = None, mesh_seed: int | None = None) -> CellComplex:
    """The cell complex described by the mesh section of ``cfg``."""
    if cfg.mesh_source == "tess":
        try:
            return iof.load_complex(cfg.tess_path)
        except OSError as exc:
            raise FormatError(f"cannot read tessellation: {exc}", path=cfg.tess_path) from None
    if cfg.mesh_source == "grid":
        size = cfg.size or (1.0, 1.0, 1.0)
        return iof.structured_grid(*cfg.grid, *size)
    size = cfg.size
    if size is None:
        stats = stats or load_stats(cfg)
        side = (cfg.voronoi_cells * stats.mean_volume) ** (1.0 / 3.0)
        size = (side, side, side)
    seed = cfg.mesh_seed if mesh_seed is None else mesh_seed
    return random_voronoi(cfg.voronoi_cells, size=size, seed=seed, lloyd=cfg.lloyd)


def prepare(cfg: RunConfig, mesh_seed: int | None = None, M: CellComplex | None = None) -> Context:
    """Build everything that does not depend on the fabric seed."""
    t0 = time.perf_counter()
    stats = load_stats(cfg)
    M = build_mesh(cfg, stats, mesh_seed) if M is None else M
    K = build_forman(M)
    ops = Operators.build(K)
    dt = time.perf_counter() - t0
    log.info("mesh N=%s, K N=%s, setup %.2f s, peak memory %.0f MB", M.counts, K.counts, dt, peak_memory_mb())
    return Context(M, K, ops, stats, mesh_seed, dt)


def realise_fabric(cfg: RunConfig, ctx: Context, seed: int) -> fab.FabricAssignment:
    a = fab.build_fabric(
        ctx.K, ctx.stats, seed,
        viscosity=cfg.viscosity, max_aspect=cfg.max_aspect,
        default=cfg.default_conductivity, c_fluid=cfg.c_fluid, c_solid=cfg.c_solid,
    )
    log.info(
        "seed %d: achieved porosity %.4f (target %.4f), %d void cells, %d expansive faces",
        seed, a.achieved_porosity, a.target_porosity,
        int(np.sum(a.cell_role == fab.VOLUMINOUS_VOID)), int(np.sum(a.face_role == fab.EXPANSIVE_VOID)),
    )
    return a


@dataclass(eq=False)
class DirectionRun:
    row: ResultRow
    solution: object
    inlet: np.ndarray
    outlet: np.ndarray


def solve_direction(cfg: RunConfig, ctx: Context, conductivity, direction: str, realisation=0, seed=0, porosity=None) -> DirectionRun:
    """Two-face experiment along ``direction``: ``dP`` on the low face, 0 on the high face."""
    t0 = time.perf_counter()
    ax = AXES[direction]
    M = ctx.M
    lo_f, hi_f = opposite_faces(M, ax)
    if len(lo_f) == 0 or len(hi_f) == 0:
        raise ValidationError(f"no boundary faces normal to {direction}")
    ext = M.bounding_box[1] - M.bounding_box[0]
    length = float(ext[ax])
    area = float(np.prod(np.delete(ext, ax)))
    problem = FlowProblem.two_face(ctx.ops, conductivity, lo_f, hi_f, cfg.pressure_drop, 0.0)
    sol = solve_steady(problem, rtol=cfg.rtol, method=cfg.solver)
    rep = measure_permeability(sol, lo_f, hi_f, length, area, cfg.pressure_drop, 0.0, cfg.viscosity, method=cfg.flux_method)
    wall = time.perf_counter() - t0
    row = ResultRow(
        realisation, direction, seed, porosity,
        rep.result.Q, rep.result.conductivity, rep.result.permeability,
        sol.residual, wall if cfg.timing else None, imbalance=rep.imbalance,
    )
    log.info(
        "realisation %d %s: Q=%.6e m^3/s, k=%.6e m^2, residual %.2e, imbalance %.2e, %.2f s, peak memory %.0f MB",
        realisation, direction, row.Q_m3_per_s, row.k_m2, sol.residual, rep.imbalance, wall, peak_memory_mb(),
    )
    return DirectionRun(row, sol, lo_f, hi_f)


def export_fields(cfg: RunConfig, ctx: Context, run: DirectionRun, tag: str):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = ctx.K
    sol = run.solution
    iof.write_field_csv(out / f"pressure_{tag}.csv", {"pressure_Pa": sol.pressure}, coords=K.coords)
    iof.write_vtk_points(out / f"pressure_{tag}.vtk", K.coords, {"pressure_Pa": sol.pressure})
    faces = np.concatenate([run.inlet, run.outlet])
    iof.write_flux_report(out / f"flux_{tag}.csv", faces, sol.face_fluxes(faces, cfg.flux_method), ctx.M)


def run_single(cfg: RunConfig, seed: int, direction: str, ctx: Context | None = None, conductivity=None, realisation: int = 0) -> ResultRow:
    """One realisation, one direction.

    ``conductivity`` (one value per K 1-cell) replaces the fabric model when
    given, which is how hand-built models such as a single fracture are run.
    """
    t0 = time.perf_counter()
    if direction not in AXES:
        raise ConfigError(f"unknown direction {direction!r}")
    ctx = ctx or prepare(cfg)
    porosity = None
    if conductivity is None:
        a = realise_fabric(cfg, ctx, seed)
        conductivity, porosity = a.conductivity, a.achieved_porosity
    run = solve_direction(cfg, ctx, conductivity, direction, realisation, seed, porosity)
    if cfg.export_fields:
        export_fields(cfg, ctx, run, f"r{realisation}_{direction}")
    if cfg.timing:
        run.row.wall_s = time.perf_counter() - t0
    return run.row


def _realisation_rows(cfg: RunConfig, ctx: Context, r: int) -> list:
    seed = cfg.base_seed + r
    rows = []
    t0 = time.perf_counter()
    try:
        if cfg.retessellate:
            ctx = prepare(cfg, mesh_seed=cfg.mesh_seed + r)
        a = realise_fabric(cfg, ctx, seed)
    except FormanFlowError as exc:
        log.warning("realisation %d failed: %s", r, exc)
        return [ResultRow(r, d, seed, error=f"{type(exc).__name__}: {exc}") for d in cfg.directions]
    t_fabric = time.perf_counter() - t0
    for d in cfg.directions:
        try:
            run = solve_direction(cfg, ctx, a.conductivity, d, r, seed, a.achieved_porosity)
            if cfg.export_fields:
                export_fields(cfg, ctx, run, f"r{r}_{d}")
            if cfg.timing:
                run.row.wall_s += t_fabric / len(cfg.directions)
            rows.append(run.row)
        except FormanFlowError as exc:
            log.warning("realisation %d direction %s failed: %s", r, d, exc)
            rows.append(ResultRow(r, d, seed, a.achieved_porosity, error=f"{type(exc).__name__}: {exc}"))
    return rows


_WORKER = {}


def _worker(r):
    return _realisation_rows(_WORKER["cfg"], _WORKER["ctx"], r)


@dataclass
class MonteCarloResult:
    rows: list
    summary: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r.ok]


def summarise(rows) -> dict:
    """Per direction (and ``"all"``) count, mean, std (ddof=1), min, max of ``k_m2``."""
    out = {}
    dirs = sorted({r.direction for r in rows}, key=lambda d: AXES.get(d, 9))
    for d in dirs + ["all"]:
        k = np.array([r.k_m2 for r in rows if r.ok and (d == "all" or r.direction == d)], dtype=float)
        if len(k) == 0:
            out[d] = {"n": 0, "mean": math.nan, "std": math.nan, "min": math.nan, "max": math.nan}
            continue
        out[d] = {
            "n": int(len(k)),
            "mean": float(np.mean(k)),
            "std": float(np.std(k, ddof=1)) if len(k) > 1 else 0.0,
            "min": float(np.min(k)),
            "max": float(np.max(k)),
        }
    return out


def run_montecarlo(cfg: RunConfig, ctx: Context | None = None) -> MonteCarloResult:
    """``realisations x len(directions)`` rows ordered by (realisation, direction).

    Realisation ``r`` uses fabric seed ``base_seed + r``. With
    ``retessellate`` the mesh seed also advances by ``r``. Failures are
    recorded in their rows and the sweep continues.
    """
    cfg.validate()
    if ctx is None and not cfg.retessellate:
        ctx = prepare(cfg)
    idx = range(cfg.realisations)
    if cfg.workers > 1:
        _WORKER.update(cfg=cfg, ctx=ctx)
        try:
            mp = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(cfg.workers, mp_context=mp) as pool:
                chunks = list(pool.map(_worker, idx))
        finally:
            _WORKER.clear()
    else:
        chunks = [_realisation_rows(cfg, ctx, r) for r in idx]
    rows = [row for chunk in chunks for row in chunk]
    res = MonteCarloResult(rows, summarise(rows))
    for d, s in res.summary.items():
        log.info("%s: n=%d mean=%.4e std=%.4e min=%.4e max=%.4e m^2", d, s["n"], s["mean"], s["std"], s["min"], s["max"])
    return res


def write_summary_csv(path, summary: dict):
    rows = [{"direction": d, **s} for d, s in summary.items()]
    return iof.write_results_csv(path, rows, columns=("direction", "n", "mean", "std", "min", "max"))


def write_failures_csv(path, rows):
    return iof.write_results_csv(path, [r for r in rows if not r.ok], columns=("realisation", "direction", "seed", "error"))


# --------------------------------------------------------------------------
# commands


def _out_dir(cfg) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_mesh_info(cfg, args):
    M = build_mesh(cfg)
    lo, hi = M.bounding_box
    print(f"counts (N0, N1, N2, N3): {M.counts}")
    print(f"euler characteristic: {M.euler_characteristic}")
    print(f"bounding box: {lo.tolist()} .. {hi.tolist()} m")
    print(f"volume: {float(M.measures[3].sum())!r} m^3")
    print(f"smallest face area: {float(M.measures[2].min())!r} m^2")
    return EXIT_OK


def cmd_forman(cfg, args):
    M = build_mesh(cfg)
    K = build_forman(M)
    print(f"M counts: {M.counts}")
    print(f"K counts: {K.counts}")
    print(f"K euler characteristic: {sum((-1) ** p * n for p, n in enumerate(K.counts))}")
    rel = abs(float(K.measures[3].sum()) - float(M.measures[3].sum())) / float(M.measures[3].sum())
    print(f"quasi-cube volume partition error: {rel:.3e}")
    return EXIT_OK


def cmd_fabric(cfg, args):
    ctx = prepare(cfg)
    a = realise_fabric(cfg, ctx, cfg.base_seed)
    out = _out_dir(cfg)
    M = ctx.M
    iof.write_field_csv(
        out / "fabric_faces.csv",
        {"role": a.face_role, "void_volume_m3": a.face_volume, "aperture_m": a.aperture},
        coords=M.centroids[2],
    )
    iof.write_field_csv(out / "fabric_cells.csv", {"role": a.cell_role}, coords=M.centroids[3])
    print(f"seed {a.seed} ({a.rng_algorithm})")
    print(f"target porosity {a.target_porosity!r}, achieved {a.achieved_porosity!r}")
    print(f"voluminous void cells: {int(np.sum(a.cell_role == fab.VOLUMINOUS_VOID))} of {M.counts[3]}")
    print(f"expansive faces: {int(np.sum(a.face_role == fab.EXPANSIVE_VOID))} of {M.counts[2]}")
    return EXIT_OK


def cmd_solve(cfg, args):
    ctx = prepare(cfg)
    a = realise_fabric(cfg, ctx, cfg.base_seed)
    run = solve_direction(cfg, ctx, a.conductivity, args.direction, 0, cfg.base_seed, a.achieved_porosity)
    export_fields(cfg, ctx, run, f"seed{cfg.base_seed}_{args.direction}")
    r = run.row
    print(f"Q = {r.Q_m3_per_s!r} m^3/s, k = {r.k_m2!r} m^2, residual = {r.residual:.3e}, imbalance = {r.imbalance:.3e}")
    return EXIT_OK


def cmd_perm(cfg, args):
    ctx = prepare(cfg)
    a = realise_fabric(cfg, ctx, cfg.base_seed)
    rows = [solve_direction(cfg, ctx, a.conductivity, d, 0, cfg.base_seed, a.achieved_porosity).row for d in cfg.directions]
    iof.write_results_csv(_out_dir(cfg) / "perm.csv", rows)
    for r in rows:
        print(f"{r.direction}: k = {r.k_m2!r} m^2 (Q = {r.Q_m3_per_s!r} m^3/s)")
    return EXIT_OK


def cmd_montecarlo(cfg, args):
    t0 = time.perf_counter()
    res = run_montecarlo(cfg)
    out = _out_dir(cfg)
    iof.write_results_csv(out / "results.csv", res.rows)
    write_summary_csv(out / "summary.csv", res.summary)
    if res.failures:
        write_failures_csv(out / "failures.csv", res.rows)
    print(f"{len(res.rows)} rows, {len(res.failures)} failed, {time.perf_counter() - t0:.1f} s, peak memory {peak_memory_mb():.0f} MB")
    for d, s in res.summary.items():
        print(f"{d}: n={s['n']} mean={s['mean']:.4e} std={s['std']:.4e} min={s['min']:.4e} max={s['max']:.4e} m^2")
    if res.failures and len(res.failures) == len(res.rows):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_export_operators(cfg, args):
    ctx = prepare(cfg)
    K, ops = ctx.K, ctx.ops
    out = _out_dir(cfg)
    for p in (1, 2, 3):
        iof.write_matrix_market(K.boundary_matrix(p), out / f"boundary_{p}.mtx", comment=f"boundary of K {p}-chains")
    iof.write_matrix_market(ops.star1, out / "hodge_1.mtx", comment="Hodge star on K 1-cochains")
    for p in range(4):
        iof.write_field_csv(out / f"weights_{p}.csv", {"weight": ops.ip.weights[p]})
    a = realise_fabric(cfg, ctx, cfg.base_seed)
    iof.write_matrix_market(ops.laplacian(a.conductivity), out / "laplacian.mtx", comment=f"material Laplacian, fabric seed {cfg.base_seed}")
    print(f"wrote operators of K {K.counts} to {out}")
    return EXIT_OK


COMMANDS = {
    "mesh-info": (cmd_mesh_info, "print cell counts and geometry of the mesh"),
    "forman": (cmd_forman, "build the Forman subdivision and print its census"),
    "fabric": (cmd_fabric, "map one fabric realisation (seed = run.base_seed) and write roles"),
    "solve": (cmd_solve, "solve one direction and export pressure and boundary fluxes"),
    "perm": (cmd_perm, "permeability of one realisation in every configured direction"),
    "montecarlo": (cmd_montecarlo, "realisations x directions sweep with summary statistics"),
    "export-operators": (cmd_export_operators, "write K operators as Matrix Market files"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="formanflow", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        s = sub.add_parser(name, help=helptext, description=helptext)
        s.add_argument("-c", "--config", help="INI configuration file")
        s.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one configuration key")
        g = s.add_argument_group("mesh")
        g.add_argument("--tess", metavar="PATH", help="Neper .tess tessellation")
        g.add_argument("--grid", nargs=3, type=int, metavar=("NX", "NY", "NZ"), help="structured grid cell counts")
        g.add_argument("--voronoi", type=int, metavar="N", help="random Voronoi tessellation with N cells")
        g.add_argument("--size", nargs=3, type=float, metavar=("LX", "LY", "LZ"), help="domain edge lengths (m)")
        g.add_argument("--mesh-seed", type=int, help="seed of the Voronoi generator")
        g = s.add_argument_group("physics")
        g.add_argument("--porosity", type=float, help="target porosity (fraction)")
        g.add_argument("--viscosity", type=float, help="dynamic viscosity (Pa s), default 1e-3")
        g.add_argument("--dp", type=float, help="pressure difference between the opposite faces (Pa), default 1")
        g = s.add_argument_group("run")
        g.add_argument("--seed", type=int, help="base fabric seed")
        g.add_argument("--directions", help="subset of 'xyz'")
        g.add_argument("--realisations", type=int, help="number of realisations")
        g.add_argument("--workers", type=int, help="parallel realisations")
        g.add_argument("--solver", choices=SOLVERS, help="linear solver")
        g.add_argument("--rtol", type=float, help="relative residual tolerance")
        g.add_argument("-o", "--output", help="output directory")
        if name == "solve":
            s.add_argument("--direction", choices=sorted(AXES), default="x", help="flow direction")
    return p


def config_from_args(args) -> RunConfig:
    over = list(args.set)
    if args.tess:
        over += ["mesh.source=tess", f"mesh.path={args.tess}"]
    if args.grid:
        over += ["mesh.source=grid", "mesh.grid=" + ",".join(map(str, args.grid))]
    if args.voronoi:
        over += ["mesh.source=voronoi", f"mesh.cells={args.voronoi}"]
    simple = {
        "size": ("mesh.size", lambda v: ",".join(map(repr, v))),
        "mesh_seed": ("mesh.seed", str),
        "porosity": ("statistics.target_porosity", repr),
        "viscosity": ("physics.viscosity", repr),
        "dp": ("physics.pressure_drop", repr),
        "seed": ("run.base_seed", str),
        "directions": ("run.directions", str),
        "realisations": ("run.realisations", str),
        "workers": ("run.workers", str),
        "solver": ("solver.method", str),
        "rtol": ("solver.rtol", repr),
        "output": ("output.dir", str),
    }
    for attr, (key, fmt) in simple.items():
        v = getattr(args, attr)
        if v is not None:
            over.append(f"{key}={fmt(v)}")
    return load_config(args.config, over)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError,)):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, StructuralError, OrientationError, DegeneracyError, TopologyError)):
        return EXIT_FORMAT
    if isinstance(exc, (NumericError, CapacityError)):
        return EXIT_NUMERIC
    if isinstance(exc, ValidationError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command][0](cfg, args)
    except FormanFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
