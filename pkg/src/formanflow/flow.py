"""Steady and transient Darcy-type flow on the Forman subdivision K.

Unknowns are pressures on the K vertices outside the Dirichlet boundary.
Interior vertices carry the balance ``(delta*_1 Pi_1 delta_0 pi)(c) = 0``.

Two treatments of Neumann vertices are available:

``"natural"`` (default)
    The balance row is kept at Neumann vertices and the prescribed flux enters
    the right-hand side, each kite sharing a quarter of its flux with its four
    corners. The reduced matrix stays symmetric in the ``W_0`` inner product,
    and boundary totals of the nodal (dual) flux balance exactly.
``"hodge"``
    The balance row is replaced by the surface Hodge star of the kite fluxes,
    ``star_G tr star_1 Pi_1 delta_0 pi = star_G f``, divided by the mean
    length of the adjacent surface edges. The kite-to-vertex map has fewer
    independent rows than there are Neumann vertices on most meshes, in which
    case the solve raises ``SingularSystemError``.

Sign convention: ``upsilon = Pi_1 delta_0 pi`` follows the pressure gradient,
so ``psi = star_1 upsilon`` is the negative of the physical flow.
``FlowSolution.face_flux`` reports physical outflow (positive leaving). Its
default ``"dual"`` method sums the net nodal outflow ``d_1 W_1 upsilon`` and
is exactly conservative; the ``"psi"`` method sums ``psi`` over boundary
kites. The two coincide on cubical meshes but ``psi`` totals do not balance
on irregular ones.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .calculus import Operators, SurfaceCalculus, surface_calculus
from .complex_core import _face_geometry, _ragged_arange, boundary_subcomplex
from .errors import NumericError, SingularSystemError, ValidationError
from .forman import FormanComplex

log = logging.getLogger(__name__)

STEADY_RTOL = 1e-10
NEUMANN_MODES = ("natural", "hodge")
FLUX_METHODS = ("dual", "psi")
SOLVERS = ("auto", "direct", "amg")
AMG_THRESHOLD = 20_000  # unknowns above which "auto" picks AMG-preconditioned CG


@dataclass(frozen=True, eq=False)
class BoundarySets:
    """Dirichlet / Neumann partition of the boundary faces carried over to K.

    ``gamma_d[p]`` and ``gamma_n[p]`` hold K p-cell indices for p = 0, 1, 2.
    ``neumann_nodes`` are the Neumann vertices not already in ``gamma_d[0]``.
    """

    dirichlet_faces: np.ndarray
    neumann_faces: np.ndarray
    gamma_d: tuple
    gamma_n: tuple
    neumann_nodes: np.ndarray


def _closure_gids(K: FormanComplex, faces) -> np.ndarray:
    M = K.M
    off = K.offsets
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.diff(M.face_ptr)[faces]
    pos = np.repeat(M.face_ptr[faces], counts) + _ragged_arange(counts)
    return np.unique(
        np.concatenate([off[2] + faces, off[1] + M.face_edges[pos], M.face_verts[pos]])
    )


def induce_boundary_sets(K: FormanComplex, dirichlet_faces, neumann_faces=None) -> BoundarySets:
    """Transport a partition of the boundary faces of M to the cells of K.

    ``neumann_faces`` defaults to every boundary face not listed as Dirichlet.
    Vertices shared by both parts are Dirichlet.
    """
    bnd = boundary_subcomplex(K.M)
    all_faces = set(bnd.faces.tolist())
    d = np.unique(np.asarray(dirichlet_faces, dtype=np.int64))
    if not set(d.tolist()) <= all_faces:
        raise ValidationError("Dirichlet faces must be boundary faces")
    if neumann_faces is None:
        n = np.array(sorted(all_faces - set(d.tolist())), dtype=np.int64)
    else:
        n = np.unique(np.asarray(neumann_faces, dtype=np.int64))
        if not set(n.tolist()) <= all_faces:
            raise ValidationError("Neumann faces must be boundary faces")
        if set(n.tolist()) & set(d.tolist()):
            raise ValidationError("Dirichlet and Neumann face sets overlap")
        if set(n.tolist()) | set(d.tolist()) != all_faces:
            raise ValidationError("Dirichlet and Neumann faces must cover the boundary")
    gd_m = _closure_gids(K, d)
    gn_m = _closure_gids(K, n)
    gamma_d = tuple(np.flatnonzero(np.isin(K.upper[p], gd_m)) for p in range(3))
    gamma_n = tuple(np.flatnonzero(np.isin(K.upper[p], gn_m)) for p in range(3))
    nn = np.setdiff1d(gamma_n[0], gamma_d[0])
    return BoundarySets(d, n, gamma_d, gamma_n, nn)


def opposite_faces(M, axis: int, rtol: float = 1e-9, max_angle_deg: float = 10.0):
    """Boundary faces on the low and high side of the bounding box along ``axis``.

    A face qualifies when its outward normal lies within ``max_angle_deg`` of
    the axis and its centroid sits on the bounding plane.
    """
    bnd = boundary_subcomplex(M)
    _, cen, normal, _, _ = _face_geometry(M.coords, M.face_ptr, M.face_verts)
    n = normal[bnd.faces] * bnd.face_sign[:, None]
    n = n / np.linalg.norm(n, axis=1)[:, None]
    cosang = np.cos(np.radians(max_angle_deg))
    lo, hi = M.bounding_box[:, axis]
    tol = rtol * max(hi - lo, 1.0) + 1e-12 * (hi - lo)
    c = cen[bnd.faces, axis]
    low = bnd.faces[(n[:, axis] <= -cosang) & (np.abs(c - lo) <= tol + 1e-6 * (hi - lo))]
    high = bnd.faces[(n[:, axis] >= cosang) & (np.abs(c - hi) <= tol + 1e-6 * (hi - lo))]
    return low, high


@dataclass(eq=False)
class FlowProblem:
    """Pressure problem on K.

    ``dirichlet`` holds the pressure (Pa) of each vertex in ``sets.gamma_d[0]``.
    ``neumann_flux`` prescribes ``psi`` (m^3/s, kite orientation of K) on each
    kite of ``sets.gamma_n[2]``; zero when omitted. Use
    :func:`neumann_from_outflow` to build it from physical outward rates.
    """

    ops: Operators
    conductivity: np.ndarray
    sets: BoundarySets
    dirichlet: np.ndarray
    neumann_flux: np.ndarray | None = None
    compressibility: np.ndarray | None = None
    reference: int | None = None
    neumann: str = "natural"

    def __post_init__(self):
        K = self.ops.K
        if self.neumann not in NEUMANN_MODES:
            raise ValidationError(f"neumann must be one of {NEUMANN_MODES}, got {self.neumann!r}")
        self.conductivity = np.asarray(self.conductivity, dtype=float)
        if self.conductivity.shape != (K.counts[1],):
            raise ValidationError("conductivity must have one entry per K 1-cell")
        if np.any(self.conductivity < 0) or not np.all(np.isfinite(self.conductivity)):
            raise ValidationError("conductivities must be finite and non-negative")
        self.dirichlet = np.asarray(self.dirichlet, dtype=float)
        if self.dirichlet.shape != (len(self.sets.gamma_d[0]),):
            raise ValidationError("need one Dirichlet pressure per Dirichlet vertex")
        if not np.all(np.isfinite(self.dirichlet)):
            raise ValidationError("Dirichlet pressures must be finite")
        if self.compressibility is not None:
            self.compressibility = np.asarray(self.compressibility, dtype=float)
            if self.compressibility.shape != (K.counts[0],) or np.any(self.compressibility < 0):
                raise ValidationError("compressibility must be a non-negative value per K vertex")

    @classmethod
    def two_face(cls, ops, conductivity, inlet_faces, outlet_faces, p_in, p_out, **kw):
        """Pressure ``p_in`` on ``inlet_faces``, ``p_out`` on ``outlet_faces``, rest insulated."""
        K = ops.K
        faces = np.concatenate([inlet_faces, outlet_faces])
        sets = induce_boundary_sets(K, faces)
        in_nodes = np.flatnonzero(np.isin(K.upper[0], _closure_gids(K, inlet_faces)))
        out_nodes = np.flatnonzero(np.isin(K.upper[0], _closure_gids(K, outlet_faces)))
        if np.intersect1d(in_nodes, out_nodes).size:
            raise ValidationError("inlet and outlet faces touch")
        val = np.full(K.counts[0], np.nan)
        val[in_nodes] = p_in
        val[out_nodes] = p_out
        return cls(ops, conductivity, sets, val[sets.gamma_d[0]], **kw)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Reduced system ``A x = b`` over ``unknowns`` (K vertex indices)."""

    A: sp.csr_matrix
    b: np.ndarray
    unknowns: np.ndarray
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    neumann_rows: np.ndarray  # positions in ``unknowns`` carrying Neumann conditions
    row_scale: np.ndarray  # divisor applied to each row (1 for balance rows)


@dataclass(frozen=True, eq=False)
class _NeumannOperator:
    surface: SurfaceCalculus
    nodes: np.ndarray  # positions of the Neumann vertices in ``surface.nodes``
    kite_pos: np.ndarray  # position of each surface kite in ``gamma_n[2]``
    mean_length: np.ndarray


def _neumann_operator(problem: FlowProblem) -> _NeumannOperator | None:
    sets = problem.sets
    K = problem.ops.K
    if len(sets.neumann_faces) == 0:
        return None
    bnd = boundary_subcomplex(K.M)
    sign = dict(zip(bnd.faces.tolist(), bnd.face_sign.tolist()))
    surf = surface_calculus(K, sets.neumann_faces, [sign[f] for f in sets.neumann_faces.tolist()])
    loc = np.searchsorted(surf.nodes, sets.neumann_nodes)
    kite_pos = np.searchsorted(sets.gamma_n[2], surf.kites)
    absd1 = abs(surf.d1)[loc]
    mu1 = K.measures[1][surf.edges]
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_len = (absd1 @ mu1) / np.asarray(absd1.sum(axis=1)).ravel()
    return _NeumannOperator(surf, loc, kite_pos, mean_len)


def _check_anchored(problem: FlowProblem):
    K = problem.ops.K
    D = K.boundary_matrix(1)
    pos = problem.conductivity > 0
    adj = abs(D[:, pos]) @ abs(D[:, pos]).T
    ncomp, label = connected_components(adj, directed=False)
    anchored = np.zeros(ncomp, dtype=bool)
    anchored[label[problem.sets.gamma_d[0]]] = True
    if problem.reference is not None:
        anchored[label[problem.reference]] = True
    if not np.all(anchored):
        comp = int(np.flatnonzero(~anchored)[0])
        n = int(np.sum(label == comp))
        raise SingularSystemError(
            f"{n} K vertices form a block with no Dirichlet anchor; pin a reference pressure"
        )


def _assemble(problem: FlowProblem, diag_extra=None, rhs_extra=None) -> LinearSystem:
    K = problem.ops.K
    n0 = K.counts[0]
    sets = problem.sets
    dnodes = sets.gamma_d[0]
    dvals = problem.dirichlet
    if problem.reference is not None:
        if problem.reference in set(dnodes.tolist()):
            raise ValidationError("reference node is already a Dirichlet node")
        dnodes = np.r_[dnodes, problem.reference]
        dvals = np.r_[dvals, 0.0]
    is_d = np.zeros(n0, dtype=bool)
    is_d[dnodes] = True
    unknowns = np.flatnonzero(~is_d)
    _check_anchored(problem)

    rows = problem.ops.laplacian(problem.conductivity)
    if diag_extra is not None:
        rows = rows + sp.diags(diag_extra)
    rhs = np.zeros(n0) if rhs_extra is None else np.array(rhs_extra, dtype=float)
    scale = np.ones(n0)

    f = problem.neumann_flux
    f = np.zeros(len(sets.gamma_n[2])) if f is None else np.asarray(f, dtype=float)
    if f.shape != (len(sets.gamma_n[2]),):
        raise ValidationError("need one Neumann flux per Neumann kite")
    nn = sets.neumann_nodes
    neu = _neumann_operator(problem)
    if neu is not None and problem.neumann == "natural":
        if np.any(f != 0):
            surf = neu.surface
            # nodal share of the prescribed flux: a quarter of each adjacent kite
            cup = sp.diags(surf.weights[0]) @ surf.star2
            w0 = problem.ops.ip.weights[0][surf.nodes]
            rhs[surf.nodes] += (cup @ f[neu.kite_pos]) / w0
    elif neu is not None and len(nn):
        surf = neu.surface
        S = surf.star2[neu.nodes]
        star1 = problem.ops.star1[surf.kites]
        flux_rows = S @ star1 @ sp.diags(problem.conductivity) @ K.coboundary_matrix(0)
        keep = np.ones(n0)
        keep[nn] = 0.0
        P = sp.csr_matrix((np.ones(len(nn)), (nn, np.arange(len(nn)))), shape=(n0, len(nn)))
        scale[nn] = neu.mean_length
        rows = sp.diags(keep) @ rows + P @ sp.diags(1.0 / neu.mean_length) @ flux_rows
        rhs = keep * rhs + P @ ((S @ f[neu.kite_pos]) / neu.mean_length)
    rows = sp.csr_matrix(rows)

    x_d = np.zeros(n0)
    x_d[dnodes] = dvals
    sub = rows[unknowns]
    A = sub[:, unknowns].tocsr()
    b = rhs[unknowns] - sub @ x_d
    neumann_rows = np.searchsorted(unknowns, nn) if problem.neumann == "hodge" else np.zeros(0, dtype=np.int64)
    return LinearSystem(A, b, unknowns, dnodes, dvals, neumann_rows, scale[unknowns])


def assemble_steady(problem: FlowProblem) -> LinearSystem:
    """Reduced steady-state system with Dirichlet values eliminated."""
    return _assemble(problem)


@dataclass(frozen=True, eq=False)
class FlowSolution:
    """Pressure (Pa) on all K vertices and derived fluxes.

    ``upsilon`` (m^2/s) lives on K edges, ``psi`` (m^3/s) on K 2-cells.
    ``nodal_flux`` (m^3/s) is the net outflow ``d_1 W_1 upsilon`` of each K
    vertex; it vanishes at balanced vertices, so its boundary sums are exactly
    conservative.
    """

    problem: FlowProblem
    pressure: np.ndarray
    upsilon: np.ndarray
    psi: np.ndarray
    residual: float

    @cached_property
    def nodal_flux(self) -> np.ndarray:
        K = self.problem.ops.K
        return K.boundary_matrix(1) @ (self.problem.ops.ip.weights[1] * self.upsilon)

    def face_flux(self, faces, method: str = "dual") -> float:
        """Total physical outflow (m^3/s) through boundary M faces."""
        return float(np.sum(self.face_fluxes(faces, method)))

    def face_fluxes(self, faces, method: str = "dual") -> np.ndarray:
        """Physical outflow per boundary face (positive leaving the domain).

        ``"psi"`` sums ``psi`` over the kites of each face. ``"dual"`` shares
        the net outflow of every Dirichlet vertex among its adjacent Dirichlet
        kites in proportion to area and reports the prescribed flux on Neumann
        faces; on cubical meshes both agree to rounding.
        """
        if method not in FLUX_METHODS:
            raise ValidationError(f"method must be one of {FLUX_METHODS}, got {method!r}")
        K = self.problem.ops.K
        faces = np.asarray(faces, dtype=np.int64)
        bsign = _boundary_sign(K)
        if np.any(bsign[faces] == 0):
            raise ValidationError("flux requested through a non-boundary face")
        kites, face_of = _boundary_kites(K)
        if method == "psi":
            per_face = np.zeros(K.M.counts[2])
            np.add.at(per_face, face_of, -bsign[face_of] * self.psi[kites])
            return per_face[faces]
        sets = self.problem.sets
        per_face = np.zeros(K.M.counts[2])
        # Neumann faces carry their prescribed flux
        f = self.problem.neumann_flux
        if f is not None and len(sets.gamma_n[2]):
            nf = K.upper[2][sets.gamma_n[2]] - K.offsets[2]
            np.add.at(per_face, nf, -bsign[nf] * np.asarray(f, dtype=float))
        # Dirichlet vertices share their net outflow among adjacent Dirichlet kites by area
        is_d = np.zeros(K.M.counts[2], dtype=bool)
        is_d[sets.dirichlet_faces] = True
        dk = is_d[face_of]
        kites, face_of = kites[dk], face_of[dk]
        D = (abs(K.boundary_matrix(1)) @ abs(K.boundary_matrix(2)[:, kites])).tocoo()
        node, k = D.row, D.col
        area = K.measures[2][kites][k]
        tot = np.bincount(node, area, minlength=K.counts[0])
        np.add.at(per_face, face_of[k], -self.nodal_flux[node] * area / tot[node])
        return per_face[faces]


def _boundary_sign(K: FormanComplex) -> np.ndarray:
    bnd = boundary_subcomplex(K.M)
    sign = np.zeros(K.M.counts[2])
    sign[bnd.faces] = bnd.face_sign
    return sign


def _boundary_kites(K: FormanComplex):
    bnd = boundary_subcomplex(K.M)
    kites = np.flatnonzero(np.isin(K.upper[2], K.offsets[2] + bnd.faces))
    return kites, K.upper[2][kites] - K.offsets[2]


def _residual(A, x, b):
    r = A @ x - b
    nb = np.max(np.abs(b))
    return float(np.max(np.abs(r)) / nb) if nb > 0 else float(np.max(np.abs(r)))


def _solve_direct(A, b, pivot_check):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularSystemError(f"reduced flow matrix is singular: {exc}") from exc
    if pivot_check:
        d = np.abs(lu.U.diagonal())
        if d.min() <= 1e-12 * d.max():
            raise SingularSystemError(
                f"reduced flow matrix is numerically singular (pivot ratio {d.min() / d.max():.1e})"
            )
    return lu.solve(b)


def _solve_amg(A, b, weights, rtol, maxiter):
    import pyamg

    # W0 A is symmetric positive definite when every row is a balance row
    S = (sp.diags(weights) @ A).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    rhs = weights * b
    ml = pyamg.ruge_stuben_solver(S)
    x = None
    for tol in (1e-12, 1e-14, 1e-16):
        x = ml.solve(rhs, x0=x, tol=tol, accel="cg", maxiter=maxiter)
        if _residual(A, x, b) <= rtol:
            break
    return x


def _solve(A, b, rtol, pivot_check=False, method="auto", weights=None, maxiter=2000):
    if A.shape[0] == 0:
        return np.zeros(0), 0.0
    if method not in SOLVERS:
        raise ValidationError(f"solver must be one of {SOLVERS}, got {method!r}")
    if method == "auto":
        method = "amg" if weights is not None and A.shape[0] > AMG_THRESHOLD else "direct"
    if method == "amg":
        if weights is None:
            raise ValidationError("the AMG solver needs the symmetric (natural Neumann) system")
        x = _solve_amg(A, b, weights, rtol, maxiter)
    else:
        x = _solve_direct(A, b, pivot_check)
    if not np.all(np.isfinite(x)):
        raise NumericError("sparse solve produced non-finite values")
    res = _residual(A, x, b)
    if res > rtol:
        raise NumericError(f"relative residual {res:.3e} exceeds {rtol:.1e}", residual=res)
    return x, res


def _solver_weights(problem: FlowProblem, system: LinearSystem):
    if problem.neumann != "natural":
        return None
    return problem.ops.ip.weights[0][system.unknowns]


def _expand(system: LinearSystem, x, n0):
    p = np.zeros(n0)
    p[system.dirichlet_nodes] = system.dirichlet_values
    p[system.unknowns] = x
    return p


def solution_from_pressure(problem: FlowProblem, pressure, residual=0.0) -> FlowSolution:
    K = problem.ops.K
    ups = problem.conductivity * (K.coboundary_matrix(0) @ pressure)
    psi = problem.ops.star1 @ ups
    return FlowSolution(problem, pressure, ups, psi, residual)


def solve_steady(
    problem: FlowProblem,
    system: LinearSystem | None = None,
    rtol: float = STEADY_RTOL,
    method: str = "auto",
) -> FlowSolution:
    """Solve the steady problem.

    ``method`` is ``"direct"`` (sparse LU), ``"amg"`` (conjugate gradients
    preconditioned by classical algebraic multigrid on the symmetric form) or
    ``"auto"``, which uses AMG above ``AMG_THRESHOLD`` unknowns when the system
    is symmetric. Raises ``NumericError`` when the relative residual
    ``|Ax - b|_inf / |b|_inf`` exceeds ``rtol``.
    """
    system = system or assemble_steady(problem)
    x, res = _solve(
        system.A, system.b, rtol, problem.neumann == "hodge", method, _solver_weights(problem, system)
    )
    return solution_from_pressure(problem, _expand(system, x, problem.ops.K.counts[0]), res)


def step_transient(problem: FlowProblem, pressure, dt: float, rtol: float = STEADY_RTOL, method: str = "auto") -> np.ndarray:
    """One implicit Euler step ``(Pi_0/dt + Lap) p_new = (Pi_0/dt) p_old`` on balance rows."""
    if not dt > 0:
        raise ValidationError("time step must be positive")
    if problem.compressibility is None:
        raise ValidationError("transient steps need compressibilities")
    K = problem.ops.K
    c = problem.compressibility
    interior = np.ones(K.counts[0], dtype=bool)
    interior[problem.sets.gamma_d[0]] = False
    interior[problem.sets.neumann_nodes] = False
    if np.any(c[interior] <= 0):
        raise ValidationError("compressibility must be positive on interior vertices")
    pressure = np.asarray(pressure, dtype=float)
    system = _assemble(problem, diag_extra=c / dt, rhs_extra=c / dt * pressure)
    x, _ = _solve(
        system.A, system.b, rtol, problem.neumann == "hodge", method, _solver_weights(problem, system)
    )
    return _expand(system, x, K.counts[0])


def run_transient(problem: FlowProblem, initial, dt: float, t_end: float | None = None, max_steps: int = 10_000, tol: float = 1e-8):
    """Integrate from ``initial`` until ``|dp|_inf / dt <= tol * max|p_D|`` or ``t_end``."""
    p = np.asarray(initial, dtype=float).copy()
    p[problem.sets.gamma_d[0]] = problem.dirichlet
    scale = max(float(np.max(np.abs(problem.dirichlet))) if len(problem.dirichlet) else 0.0, 1.0)
    t = 0.0
    for n in range(max_steps):
        new = step_transient(problem, p, dt)
        t += dt
        rate = np.max(np.abs(new - p)) / dt
        p = new
        if rate <= tol * scale or (t_end is not None and t >= t_end):
            return p, t, n + 1
    return p, t, max_steps


def neumann_from_outflow(problem_or_K, sets: BoundarySets, outflow) -> np.ndarray:
    """Convert physical outward rates per Neumann kite into ``psi`` values."""
    K = getattr(problem_or_K, "K", problem_or_K)
    kites = sets.gamma_n[2]
    return -_boundary_sign(K)[K.upper[2][kites] - K.offsets[2]] * np.asarray(outflow, dtype=float)


@dataclass(frozen=True)
class Permeability:
    Q: float  # m^3/s
    conductivity: float  # m^3 s / kg
    permeability: float  # m^2


def permeability(Q: float, length: float, area: float, p1: float, p2: float, viscosity: float) -> Permeability:
    """``K = Q L / ((p2 - p1) A)`` and ``k = K * viscosity``."""
    if area <= 0 or length <= 0:
        raise ValidationError("length and area must be positive")
    if p2 == p1:
        raise ValidationError("pressure difference must be nonzero")
    if viscosity <= 0:
        raise ValidationError("viscosity must be positive")
    kc = Q * length / ((p2 - p1) * area)
    return Permeability(float(Q), float(kc), float(kc * viscosity))


@dataclass(frozen=True)
class FluxReport:
    inlet: float  # physical outflow through the inlet faces (m^3/s), negative for inflow
    outlet: float  # physical outflow through the outlet faces (m^3/s)
    imbalance: float  # |inlet + outlet| / |outlet|
    result: Permeability


def measure_permeability(
    solution: FlowSolution,
    inlet_faces,
    outlet_faces,
    length: float,
    area: float,
    p_in: float,
    p_out: float,
    viscosity: float,
    method: str = "dual",
) -> FluxReport:
    """Two-face experiment: ``Q`` is the absolute outlet total, ``dP = |p_in - p_out|``."""
    q_in = solution.face_flux(inlet_faces, method)
    q_out = solution.face_flux(outlet_faces, method)
    Q = abs(q_out)
    imb = abs(q_in + q_out) / Q if Q > 0 else abs(q_in + q_out)
    lo, hi = sorted((p_in, p_out))
    return FluxReport(q_in, q_out, imb, permeability(Q, length, area, lo, hi, viscosity))
