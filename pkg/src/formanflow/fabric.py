"""Fabric statistics, feature classification and property assignment.

Grains and large voids become polyhedra of M, small voids become faces, and
each K 1-cell then receives a Poiseuille-type conductivity.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .complex_core import CellComplex, _ragged_arange
from .errors import CapacityError, ValidationError
from .forman import FormanComplex

log = logging.getLogger(__name__)

THIN_LONG_RATIO = 0.35
VOLUMINOUS_RATIO = 0.64
DEFAULT_CONDUCTIVITY = 1e-12  # m^3 s / kg
DEFAULT_VISCOSITY = 1.0e-3  # Pa s
C_FLUID = 4.5e-10  # 1/Pa
C_SOLID = 1e-11  # 1/Pa
RNG_ALGORITHM = "numpy.random.PCG64"

GRAIN, VOLUMINOUS_VOID = 0, 1
NO_ROLE, EXPANSIVE_VOID, VOLUMINOUS_BOUNDARY = 0, 1, 2


class FeatureClass(enum.Enum):
    THIN_LONG = "thin_long"
    VOLUMINOUS = "voluminous"
    EXPANSIVE = "expansive"


def classify(L: float, I: float, S: float, thin_long=THIN_LONG_RATIO, voluminous=VOLUMINOUS_RATIO) -> FeatureClass:
    """Classify a feature from its largest, intermediate and smallest extents.

    Examples:
        >>> classify(10, 2, 1)
        <FeatureClass.THIN_LONG: 'thin_long'>
        >>> classify(10, 6, 3)
        <FeatureClass.EXPANSIVE: 'expansive'>
    """
    if not (L >= I >= S > 0):
        raise ValidationError(f"extents must satisfy L >= I >= S > 0, got {(L, I, S)}")
    if I / L < thin_long:
        return FeatureClass.THIN_LONG
    if S / L > voluminous:
        return FeatureClass.VOLUMINOUS
    return FeatureClass.EXPANSIVE


@dataclass(frozen=True)
class Void:
    volume: float  # m^3
    L: float
    I: float
    S: float


def split_voids(voids, smallest_grain_volume: float, **thresholds):
    """Separate voids into voluminous and expansive lists.

    Voids smaller than the smallest grain are expansive regardless of shape;
    larger ones go through :func:`classify`. Large thin-long voids cannot be
    mapped and raise ``ValidationError``.

    Returns:
        ``(voluminous, expansive)`` lists of :class:`Void`.
    """
    vol, exp = [], []
    for v in voids:
        v = v if isinstance(v, Void) else Void(*v)
        if not v.volume > 0:
            raise ValidationError(f"void volume must be positive, got {v.volume}")
        if v.volume < smallest_grain_volume:
            exp.append(v)
            continue
        cls = classify(v.L, v.I, v.S, **thresholds)
        if cls is FeatureClass.THIN_LONG:
            raise ValidationError(
                f"thin-long void of volume {v.volume:g} m^3: mapping to 1-cells is not supported"
            )
        (vol if cls is FeatureClass.VOLUMINOUS else exp).append(v)
    return vol, exp


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Fabric statistics driving the model construction.

    Attributes:
        volumes: bin volumes of voluminous features (m^3), ascending.
        frequency: relative frequency of each bin (grains and voluminous voids).
        void_frequency: the part of ``frequency`` that is voluminous voids.
        expansive_volumes: volumes of the expansive CDF points (m^3), ascending.
        expansive_cdf: cumulative probability at each point, ending at 1.
        target_porosity: total void volume fraction to reach.
        smallest_grain_volume: m^3, used when splitting voids.
    """

    volumes: np.ndarray
    frequency: np.ndarray
    void_frequency: np.ndarray
    expansive_volumes: np.ndarray
    expansive_cdf: np.ndarray
    target_porosity: float
    smallest_grain_volume: float = 0.0

    def __post_init__(self):
        for name in ("volumes", "frequency", "void_frequency", "expansive_volumes", "expansive_cdf"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        v, f, vf = self.volumes, self.frequency, self.void_frequency
        if v.ndim != 1 or f.shape != v.shape or vf.shape != v.shape:
            raise ValidationError("voluminous histogram columns must have equal length")
        if np.any(v <= 0) or np.any(f < 0) or np.any(vf < 0) or np.any(vf > f + 1e-15):
            raise ValidationError("histogram volumes must be positive and 0 <= void_frequency <= frequency")
        ev, ec = self.expansive_volumes, self.expansive_cdf
        if ev.shape != ec.shape or ev.ndim != 1:
            raise ValidationError("expansive CDF columns must have equal length")
        if len(ev):
            if np.any(ev <= 0) or np.any(np.diff(ev) < 0):
                raise ValidationError("expansive volumes must be positive and ascending")
            if np.any(np.diff(ec) < 0) or ec[0] < 0 or not math.isclose(ec[-1], 1.0, rel_tol=1e-9):
                raise ValidationError("expansive CDF must be nondecreasing and end at 1")
        if not 0.0 <= self.target_porosity < 1.0:
            raise ValidationError(f"target porosity must lie in [0, 1), got {self.target_porosity}")

    @property
    def mean_volume(self) -> float:
        return float(np.sum(self.volumes * self.frequency) / np.sum(self.frequency))

    @property
    def voluminous_void_share(self) -> float:
        """Fraction of the voluminous-feature volume that is void."""
        tot = np.sum(self.volumes * self.frequency)
        return float(np.sum(self.volumes * self.void_frequency) / tot) if tot > 0 else 0.0

    def expansive_quantile(self, u):
        """Inverse CDF by linear interpolation; below the first point returns the first volume."""
        if len(self.expansive_volumes) == 0:
            raise ValidationError("no expansive statistics")
        cdf, idx = np.unique(self.expansive_cdf, return_index=True)
        return np.interp(u, cdf, self.expansive_volumes[idx], left=self.expansive_volumes[0])


def feature_stats(grain_volumes, voids, target_porosity: float, bins=20, **thresholds) -> FeatureStats:
    """Histogram grains and voluminous voids, and form the expansive CDF.

    ``thresholds`` (``thin_long``, ``voluminous``) are passed to :func:`classify`.
    """
    g = np.asarray(grain_volumes, dtype=float)
    if len(g) == 0 or np.any(g <= 0):
        raise ValidationError("need positive grain volumes")
    smallest = float(g.min())
    vol, exp = split_voids(voids, smallest, **thresholds)
    vv = np.array([v.volume for v in vol])
    allv = np.concatenate([g, vv])
    edges = np.geomspace(allv.min(), allv.max() * (1 + 1e-12), bins + 1)
    centres = np.sqrt(edges[:-1] * edges[1:])
    freq = np.histogram(allv, edges)[0] / len(allv)
    vfreq = np.histogram(vv, edges)[0] / len(allv)
    keep = freq > 0
    ev = np.sort([v.volume for v in exp])
    cdf = np.arange(1, len(ev) + 1) / max(len(ev), 1)
    return FeatureStats(centres[keep], freq[keep], vfreq[keep], ev, cdf, target_porosity, smallest)


def _read_csv(path):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


def load_feature_stats(voluminous_csv, expansive_csv, target_porosity: float, smallest_grain_volume=0.0) -> FeatureStats:
    """Read the two statistics CSV files.

    The voluminous file has columns ``volume_m3, frequency`` and optionally
    ``void_frequency``; the expansive file has ``volume_m3,
    cumulative_probability``.
    """
    from .errors import FormatError

    def col(rows, name, path, default=None):
        try:
            return np.array([float(r[name]) if r.get(name) not in (None, "") else default for r in rows], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad or missing column {name!r}: {exc}", path=str(path)) from exc

    rv = _read_csv(voluminous_csv)
    if "volume_m3" not in rv[0] or "frequency" not in rv[0]:
        raise FormatError("voluminous CSV needs columns volume_m3, frequency", path=str(voluminous_csv))
    v = col(rv, "volume_m3", voluminous_csv)
    f = col(rv, "frequency", voluminous_csv)
    vf = col(rv, "void_frequency", voluminous_csv, 0.0) if "void_frequency" in rv[0] else np.zeros_like(v)
    re_ = _read_csv(expansive_csv)
    if "volume_m3" not in re_[0] or "cumulative_probability" not in re_[0]:
        raise FormatError("expansive CSV needs columns volume_m3, cumulative_probability", path=str(expansive_csv))
    ev = col(re_, "volume_m3", expansive_csv)
    ec = col(re_, "cumulative_probability", expansive_csv)
    o = np.argsort(v)
    return FeatureStats(v[o], f[o], vf[o], ev, ec, target_porosity, smallest_grain_volume)


def synthetic_sandstone(target_porosity=0.21, grain_diameter=2.0e-4, void_share=0.1, n_bins=15) -> FeatureStats:
    """Lognormal sandstone-like statistics for demos and tests.

    Grains follow a lognormal volume law around a sphere of ``grain_diameter``;
    ``void_share`` of the voluminous volume is void. Expansive voids follow a
    lognormal law around 5% of the mean grain volume.
    """
    v0 = math.pi / 6 * grain_diameter**3
    z = np.linspace(-2.5, 2.5, n_bins)
    sigma = 0.5
    volumes = v0 * np.exp(sigma * z)
    freq = np.exp(-0.5 * z**2)
    freq /= freq.sum()
    vf = freq * void_share
    ez = np.linspace(-3.0, 3.0, 25)
    evol = 5e-2 * v0 * np.exp(0.8 * ez)
    from scipy.special import ndtr

    cdf = ndtr(ez)
    cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
    return FeatureStats(volumes, freq, vf, evol, cdf, target_porosity, float(volumes[0]))


# ---------------------------------------------------------------------------
# mapping


def voluminous_targets(stats: FeatureStats, rng: np.random.Generator):
    """Endless stream of voluminous-void volumes drawn from the void histogram."""
    p = stats.void_frequency
    if p.sum() <= 0:
        return
    p = p / p.sum()
    while True:
        yield float(stats.volumes[rng.choice(len(p), p=p)])


def map_voluminous(M: CellComplex, targets, goal: float | None = None) -> np.ndarray:
    """Assign target void volumes to the unassigned 3-cells of closest volume.

    Args:
        M: the cell complex.
        targets: void volumes (m^3), processed in order; may be an endless
            iterator when ``goal`` is given.
        goal: optional total void volume; assignment stops once the chosen
            cells reach it, so the overshoot is below one cell volume.

    Returns:
        Role per 3-cell (``GRAIN`` or ``VOLUMINOUS_VOID``).
    """
    vol = M.measures[3]
    role = np.zeros(len(vol), dtype=np.int8)
    order = np.argsort(vol, kind="stable")
    sv = vol[order]
    free = np.ones(len(vol), dtype=bool)
    total = 0.0
    if goal is not None and goal <= 0:
        return role
    for v in targets:
        v = float(v)
        if not free.any():
            raise CapacityError(
                "not enough 3-cells for the voluminous voids", achieved=total / vol.sum()
            )
        # nearest free cell in volume; ties go to the smaller volume, then lower index
        pos = np.searchsorted(sv, v)
        fidx = np.flatnonzero(free[order])
        j = np.searchsorted(fidx, pos)
        cand = [fidx[k] for k in (j - 1, j) if 0 <= k < len(fidx)]
        best = min(cand, key=lambda k: (abs(sv[k] - v), k))
        c = order[best]
        free[c] = False
        role[c] = VOLUMINOUS_VOID
        total += vol[c]
        if goal is not None and total >= goal:
            break
    return role


def voluminous_boundary_faces(M: CellComplex, cell_role) -> np.ndarray:
    cells = np.flatnonzero(np.asarray(cell_role) == VOLUMINOUS_VOID)
    if len(cells) == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.diff(M.cell_ptr)[cells]
    pos = np.repeat(M.cell_ptr[cells], counts) + _ragged_arange(counts)
    return np.unique(M.cell_faces[pos])


@dataclass(frozen=True, eq=False)
class ExpansiveMap:
    face_volume: np.ndarray  # m^3 per M face, zero where unassigned
    aperture: np.ndarray  # m per M face
    picks: list  # (volume, face) in draw order
    achieved_porosity: float


def map_expansive(
    M: CellComplex,
    stats: FeatureStats,
    rng: np.random.Generator,
    excluded=(),
    start_volume=0.0,
    target_porosity=None,
    max_aspect: float | None = VOLUMINOUS_RATIO,
) -> ExpansiveMap:
    """Drop expansive voids on random internal faces until the porosity target is met.

    Each draw takes ``u`` uniform in (0, 1), the volume ``v`` from the inverse
    CDF, and a face uniformly from the eligible set. ``start_volume`` is the
    void volume already placed (voluminous voids); ``excluded`` faces
    (voluminous boundaries) are never picked.

    ``max_aspect`` keeps a void narrow: a face of area ``A`` hosts ``v`` only
    if ``v / A <= max_aspect * sqrt(A)``. ``None`` drops the condition.
    """
    phi = stats.target_porosity if target_porosity is None else float(target_porosity)
    if not 0.0 <= phi < 1.0:
        raise ValidationError(f"target porosity must lie in [0, 1), got {phi}")
    V = float(M.measures[3].sum())
    goal = phi * V
    nf = M.counts[2]
    fv = np.zeros(nf)
    eligible = M.face_coface_count == 2
    eligible[np.asarray(excluded, dtype=np.int64)] = False
    area = M.measures[2]
    capacity = np.inf * np.ones(nf) if max_aspect is None else max_aspect * area**1.5
    total = float(start_volume)
    picks = []
    while total < goal:
        if not eligible.any():
            raise CapacityError(
                f"ran out of eligible faces at porosity {total / V:.4f} (target {phi:.4f})",
                achieved=total / V,
            )
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        v = float(stats.expansive_quantile(u))
        cand = np.flatnonzero(eligible & (capacity >= v))
        if len(cand) == 0:
            raise CapacityError(
                f"no eligible face can host a void of {v:.3e} m^3 at porosity {total / V:.4f}",
                achieved=total / V,
            )
        f = int(cand[rng.integers(len(cand))])
        eligible[f] = False
        fv[f] = v
        picks.append((v, f))
        total += v
    ap = np.where(fv > 0, fv / np.where(area > 0, area, 1.0), 0.0)
    return ExpansiveMap(fv, ap, picks, total / V)


# ---------------------------------------------------------------------------
# properties


def plate_conductivity(h, viscosity=DEFAULT_VISCOSITY):
    """Flow between plates at distance ``h``: ``h^2 / (12 mu)``."""
    return np.asarray(h, dtype=float) ** 2 / (12.0 * viscosity)


def cylinder_conductivity(r, viscosity=DEFAULT_VISCOSITY):
    """Flow in a tube of radius ``r``: ``r^2 / (8 mu)``."""
    return np.asarray(r, dtype=float) ** 2 / (8.0 * viscosity)


def _face_edge_pairs(M, faces):
    counts = np.diff(M.face_ptr)[faces]
    pos = np.repeat(M.face_ptr[faces], counts) + _ragged_arange(counts)
    return np.repeat(faces, counts), M.face_edges[pos]


def _cell_face_pairs(M, cells):
    counts = np.diff(M.cell_ptr)[cells]
    pos = np.repeat(M.cell_ptr[cells], counts) + _ragged_arange(counts)
    return np.repeat(cells, counts), M.cell_faces[pos]


def assign_conductivities(
    K: FormanComplex,
    cell_role,
    aperture,
    viscosity: float = DEFAULT_VISCOSITY,
    default: float = DEFAULT_CONDUCTIVITY,
    c_fluid: float = C_FLUID,
    c_solid: float = C_SOLID,
):
    """Conductivity per K 1-cell and compressibility per K 0-cell.

    Voluminous-void cell ``c3``:
      * ``(c2, c3)``: tube with the radius of the disk of area ``mu(c2)``;
      * ``(c1, c2)`` for faces of ``c3``: plates at distance ``|(c2, c3)|``;
      * ``(c0, c1)`` for edges of ``c3``: tube of radius half the distance
        from the midpoint of ``c1`` to the centroid of ``c3``.

    Expansive face ``b2`` with aperture ``h``:
      * ``(b1, b2)``: plates at distance ``h``;
      * ``(b0, b1)``: tube of radius ``h / 2``.

    A K 1-cell reached by several rules keeps the largest value; all others
    get ``default``. K vertices in the closure of a void cell get ``c_fluid``,
    the rest ``c_solid``.
    """
    if not viscosity > 0:
        raise ValidationError("viscosity must be positive")
    M = K.M
    off = K.offsets
    cell_role = np.asarray(cell_role)
    aperture = np.asarray(aperture, dtype=float)
    if cell_role.shape != (M.counts[3],) or aperture.shape != (M.counts[2],):
        raise ValidationError("roles must cover every 3-cell and every face")
    if np.any(aperture < 0) or not np.all(np.isfinite(aperture)):
        raise ValidationError("apertures must be finite and non-negative")
    pi = np.full(K.counts[1], float(default))
    cen = M.centroids

    def put(upper_gid, lower_gid, val):
        idx = K.index_of(1, upper_gid, lower_gid)
        if np.any(idx < 0):
            raise ValidationError("missing K 1-cell for a conductive pair")
        np.maximum.at(pi, idx, val)

    void_cells = np.flatnonzero(cell_role == VOLUMINOUS_VOID)
    fluid = np.zeros(int(off[-1]), dtype=bool)
    if len(void_cells):
        c, f = _cell_face_pairs(M, void_cells)
        area = M.measures[2][f]
        put(off[3] + c, off[2] + f, cylinder_conductivity(np.sqrt(area / np.pi), viscosity))
        h = np.linalg.norm(cen[3][c] - cen[2][f], axis=1)
        ff, e = _face_edge_pairs(M, f)
        put(off[2] + ff, off[1] + e, plate_conductivity(np.repeat(h, np.diff(M.face_ptr)[f]), viscosity))
        ce = np.repeat(c, np.diff(M.face_ptr)[f])
        r = 0.5 * np.linalg.norm(cen[1][e] - cen[3][ce], axis=1)
        for end in (0, 1):
            put(off[1] + e, M.edges[e, end], cylinder_conductivity(r, viscosity))
        fluid[off[3] + void_cells] = True
        fluid[off[2] + f] = True
        fluid[off[1] + e] = True
        fluid[M.edges[e].ravel()] = True

    exp_faces = np.flatnonzero(aperture > 0)
    if len(exp_faces):
        ff, e = _face_edge_pairs(M, exp_faces)
        h = np.repeat(aperture[exp_faces], np.diff(M.face_ptr)[exp_faces])
        put(off[2] + ff, off[1] + e, plate_conductivity(h, viscosity))
        for end in (0, 1):
            put(off[1] + e, M.edges[e, end], cylinder_conductivity(h / 2.0, viscosity))
        fluid[off[2] + exp_faces] = True
        fluid[off[1] + e] = True
        fluid[M.edges[e].ravel()] = True

    comp = np.where(fluid[K.upper[0]], c_fluid, c_solid)
    return pi, comp


@dataclass(frozen=True, eq=False)
class FabricAssignment:
    """Roles, apertures and material coefficients of one realisation."""

    cell_role: np.ndarray
    face_role: np.ndarray
    face_volume: np.ndarray
    aperture: np.ndarray
    conductivity: np.ndarray
    compressibility: np.ndarray
    achieved_porosity: float
    target_porosity: float
    seed: int
    rng_algorithm: str = RNG_ALGORITHM
    picks: list = field(default_factory=list)


def build_fabric(
    K: FormanComplex,
    stats: FeatureStats,
    seed: int,
    viscosity=DEFAULT_VISCOSITY,
    max_aspect: float | None = VOLUMINOUS_RATIO,
    **kw,
) -> FabricAssignment:
    """Full mapping for one realisation: voluminous voids, expansive voids, coefficients."""
    M = K.M
    rng = np.random.Generator(np.random.PCG64(seed))
    V = float(M.measures[3].sum())
    # voluminous voids never exceed the total porosity target
    goal = min(stats.voluminous_void_share, stats.target_porosity) * V
    cell_role = map_voluminous(M, voluminous_targets(stats, rng), goal=goal)
    vb = voluminous_boundary_faces(M, cell_role)
    start = float(M.measures[3][cell_role == VOLUMINOUS_VOID].sum())
    em = map_expansive(M, stats, rng, excluded=vb, start_volume=start, max_aspect=max_aspect)
    face_role = np.zeros(M.counts[2], dtype=np.int8)
    face_role[vb] = VOLUMINOUS_BOUNDARY
    face_role[em.face_volume > 0] = EXPANSIVE_VOID
    pi, comp = assign_conductivities(K, cell_role, em.aperture, viscosity, **kw)
    return FabricAssignment(
        cell_role, face_role, em.face_volume, em.aperture, pi, comp,
        em.achieved_porosity, stats.target_porosity, int(seed), picks=em.picks,
    )
