"""Forman subdivision (kite complex) of a polyhedral complex.

A p-cell of the subdivision K is a pair ``(upper -> lower)`` of cells of M with
``lower`` a face of ``upper`` and ``dim(upper) - dim(lower) == p``.  M cells are
addressed by a global id ``gid = offset[dim] + index``.

Every 3-cell ``(c -> v)`` of K is a topological cube when ``c`` is a simple
polyhedron.  Its chart labels the three edges of ``c`` at ``v`` as directions
0, 1, 2 (ascending edge index) and enumerates its 27 faces by a base-3 code:
digit ``k`` is 0 or 1 when direction k is fixed at that value and 2 when it is
free.  ``FormanComplex.chart[q, code]`` is the K index of that face and
``FormanComplex.chart_sign[q, code]`` relates its stored orientation to the
standard cube orientation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
import scipy.sparse as sp

from .complex_core import MIN_MEASURE, CellComplex, CellId, _ragged_arange
from .errors import DegeneracyError, OrientationError, StructuralError, TopologyError

# local cube codes ------------------------------------------------------------
CODES = np.array(list(product((0, 1, 2), repeat=3)))[:, ::-1]  # digit k = (t // 3**k) % 3
N_CODES = 27
CODE_FREE = [tuple(int(k) for k in range(3) if CODES[t, k] == 2) for t in range(N_CODES)]
CODE_DIM = np.array([len(f) for f in CODE_FREE])
UPPER_MASK = np.array([sum(1 << k for k in range(3) if CODES[t, k] >= 1) for t in range(N_CODES)])
LOWER_MASK = np.array([sum(1 << k for k in range(3) if CODES[t, k] == 1) for t in range(N_CODES)])
TOP_CODE = 26
# base-3 weight of each direction digit
_W3 = np.array([1, 3, 9])


def code_of(digits) -> int:
    return int(np.dot(digits, _W3))


def _facet_code(t, k, value):
    d = CODES[t].copy()
    d[k] = value
    return code_of(d)


@dataclass(frozen=True)
class FormanCell:
    upper: CellId
    lower: CellId

    @property
    def dim(self) -> int:
        return self.upper.dim - self.lower.dim


@dataclass(frozen=True, eq=False)
class FormanComplex:
    """The subdivided complex K with topology, geometry and quasi-cube charts."""

    M: CellComplex
    offsets: np.ndarray
    upper: tuple
    lower: tuple
    boundaries: tuple
    coords: np.ndarray
    measures: tuple
    chart_cells: np.ndarray
    chart: np.ndarray
    chart_sign: np.ndarray

    @property
    def counts(self) -> tuple:
        return tuple(len(u) for u in self.upper)

    @property
    def euler_characteristic(self) -> int:
        n = self.counts
        return n[0] - n[1] + n[2] - n[3]

    def m_dim(self, gid):
        return np.searchsorted(self.offsets, gid, side="right") - 1

    def m_cell(self, gid: int) -> CellId:
        d = int(self.m_dim(gid))
        return CellId(d, int(gid - self.offsets[d]))

    def cell(self, p: int, i: int) -> FormanCell:
        return FormanCell(self.m_cell(self.upper[p][i]), self.m_cell(self.lower[p][i]))

    @cached_property
    def _keys(self):
        nm = int(self.offsets[-1])
        out = []
        for p in range(4):
            key = self.upper[p].astype(np.int64) * nm + self.lower[p]
            order = np.argsort(key, kind="stable")
            out.append((key[order], order))
        return out

    def index_of(self, p: int, upper_gid, lower_gid) -> np.ndarray:
        """K indices of the p-cells ``(upper -> lower)``; -1 where no such cell exists."""
        nm = int(self.offsets[-1])
        key = np.asarray(upper_gid, dtype=np.int64) * nm + np.asarray(lower_gid, dtype=np.int64)
        skey, order = self._keys[p]
        if len(skey) == 0:
            return np.full(key.shape, -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(skey, key), len(skey) - 1)
        return np.where(skey[pos] == key, order[pos], -1)

    def boundary_matrix(self, p: int) -> sp.csr_matrix:
        if p not in (1, 2, 3):
            raise ValueError(f"boundary operator defined for p in 1..3, got {p}")
        return self.boundaries[p - 1]

    def coboundary_matrix(self, p: int) -> sp.csr_matrix:
        if p not in (0, 1, 2):
            raise ValueError(f"coboundary operator defined for p in 0..2, got {p}")
        return self.boundaries[p].T.tocsr()

    @cached_property
    def boundary_flags(self) -> tuple:
        """K cells on the boundary: those whose upper M cell lies on the boundary of M."""
        mflags = np.concatenate(self.M.boundary_flags)
        return tuple(mflags[u] for u in self.upper)

    @cached_property
    def _incidence_lookup(self):
        out = []
        for D in self.boundaries:
            coo = D.tocoo()
            key = coo.col.astype(np.int64) * D.shape[0] + coo.row
            order = np.argsort(key)
            out.append((key[order], coo.data[order], D.shape[0]))
        return out

    def incidence(self, p: int, hi, lo) -> np.ndarray:
        """Relative orientation between p-cells ``hi`` and (p-1)-cells ``lo`` (0 if not incident)."""
        skey, data, nrows = self._incidence_lookup[p - 1]
        key = np.asarray(hi, dtype=np.int64) * nrows + np.asarray(lo, dtype=np.int64)
        pos = np.minimum(np.searchsorted(skey, key), len(skey) - 1)
        return np.where(skey[pos] == key, data[pos], 0.0)


def build_forman(M: CellComplex) -> FormanComplex:
    """Subdivide ``M`` and attach geometry and quasi-cube charts.

    Raises:
        TopologyError: a polyhedron vertex with more than three edges.
        DegeneracyError: a kite cell with measure below ``MIN_MEASURE``.
    """
    if not isinstance(M, CellComplex):
        raise TypeError("build_forman expects a built CellComplex")
    n0, n1, n2, n3 = M.counts
    off = np.array([0, n0, n0 + n1, n0 + n1 + n2, n0 + n1 + n2 + n3], dtype=np.int64)
    nm = int(off[-1])
    E = M.edges
    fsize = np.diff(M.face_ptr)
    corner_face = np.repeat(np.arange(n2), fsize)
    nxt = np.arange(len(M.face_verts)) + 1
    prv = np.arange(len(M.face_verts)) - 1
    if n2:
        nxt[M.face_ptr[1:] - 1] = M.face_ptr[:-1]
        prv[M.face_ptr[:-1]] = M.face_ptr[1:] - 1
    corner_v = M.face_verts
    corner_e = M.face_edges
    corner_eprev = M.face_edges[prv] if n2 else corner_e
    corner_s = M.face_edge_sign.astype(float)
    corner_sprev = corner_s[prv] if n2 else corner_s

    def ev_sign(e, v):
        # orientation of node v in the boundary of edge e
        return np.where(E[e, 1] == v, 1.0, -1.0)

    # --- K cells ---------------------------------------------------------
    up = [np.arange(nm, dtype=np.int64)]
    lo = [np.arange(nm, dtype=np.int64)]

    cell_inc = np.repeat(np.arange(n3), np.diff(M.cell_ptr))
    up1 = np.concatenate(
        [
            np.repeat(off[1] + np.arange(n1), 2),
            off[2] + corner_face,
            off[3] + cell_inc,
        ]
    )
    lo1 = np.concatenate([E.ravel(), off[1] + corner_e, off[2] + M.cell_faces])
    eps1 = np.concatenate([np.tile([-1.0, 1.0], n1), corner_s, M.cell_face_sign.astype(float)])
    up.append(up1.astype(np.int64))
    lo.append(lo1.astype(np.int64))

    # cell corners: every corner of every face of every polyhedron
    inc_size = fsize[M.cell_faces]
    cc_inc = np.repeat(np.arange(len(M.cell_faces)), inc_size)
    cc_corner = M.face_ptr[M.cell_faces][cc_inc] + _ragged_arange(inc_size)
    cc_cell = cell_inc[cc_inc]
    cc_face = M.cell_faces[cc_inc]
    cc_cfs = M.cell_face_sign[cc_inc].astype(float)

    # (c -> e): each edge of a closed polyhedron lies in exactly two of its faces
    ce_key = cc_cell * n1 + corner_e[cc_corner]
    ce_order = np.argsort(ce_key, kind="stable")
    ce_sorted = ce_key[ce_order]
    ce_first = np.flatnonzero(np.r_[True, ce_sorted[1:] != ce_sorted[:-1]]) if len(ce_sorted) else np.zeros(0, np.int64)
    ce_count = np.diff(np.r_[ce_first, len(ce_sorted)])
    if np.any(ce_count != 2):
        bad = ce_sorted[ce_first[np.flatnonzero(ce_count != 2)[0]]]
        raise StructuralError(
            f"polyhedron {bad // n1} is not closed: edge {bad % n1} lies in {ce_count[ce_count != 2][0]} of its faces"
        )
    ce_cell = ce_sorted[ce_first] // n1
    ce_edge = ce_sorted[ce_first] % n1
    ce_rows = np.stack([ce_order[ce_first], ce_order[ce_first + 1]], axis=1)  # cell-corner rows

    up2 = np.concatenate([off[2] + corner_face, off[3] + ce_cell])
    lo2 = np.concatenate([corner_v, off[1] + ce_edge])
    up.append(up2.astype(np.int64))
    lo.append(lo2.astype(np.int64))

    # (c -> v): simple polyhedra have exactly three faces at each vertex
    cv_key = cc_cell * n0 + corner_v[cc_corner]
    cv_order = np.argsort(cv_key, kind="stable")
    cv_sorted = cv_key[cv_order]
    cv_first = np.flatnonzero(np.r_[True, cv_sorted[1:] != cv_sorted[:-1]]) if len(cv_sorted) else np.zeros(0, np.int64)
    cv_count = np.diff(np.r_[cv_first, len(cv_sorted)])
    if np.any(cv_count != 3):
        i = np.flatnonzero(cv_count != 3)[0]
        bad = cv_sorted[cv_first[i]]
        raise TopologyError(
            f"vertex {bad % n0} of polyhedron {bad // n0} has {cv_count[i]} incident faces; "
            "only simple polyhedra (3 edges per vertex) give quasi-cubes"
        )
    cv_cell = cv_sorted[cv_first] // n0
    cv_vert = cv_sorted[cv_first] % n0
    cv_rows = cv_order[cv_first[:, None] + np.arange(3)]  # (N3K, 3) cell-corner rows
    up.append((off[3] + cv_cell).astype(np.int64))
    lo.append(cv_vert.astype(np.int64))

    K_partial = FormanComplex(
        M=M,
        offsets=off,
        upper=tuple(up),
        lower=tuple(lo),
        boundaries=(),
        coords=np.concatenate([c for c in M.centroids], axis=0),
        measures=(),
        chart_cells=np.zeros((0, 8), np.int64),
        chart=np.zeros((0, N_CODES), np.int64),
        chart_sign=np.zeros((0, N_CODES), np.int8),
    )
    idx = K_partial.index_of
    counts = [len(u) for u in up]

    # --- boundary operators -------------------------------------------
    # facet rule for (d -> a): (c -> a) with c a facet of d carries eps(d, c);
    # (d -> b) with a a facet of b carries (-1)^(p+1) eps(b, a), p = facet dim.
    rows, cols, vals = [], [], []
    # K1: (d -> a) -> (a -> a) with eps, (d -> d) with -eps
    k1 = np.arange(counts[1])
    rows.append(np.concatenate([lo1, up1]))
    cols.append(np.concatenate([k1, k1]))
    vals.append(np.concatenate([eps1, -eps1]))
    D1 = sp.csr_matrix((vals[0], (rows[0], cols[0])), shape=(counts[0], counts[1]))

    # K2 (f -> v) at corner k: edges e_k and e_{k-1}
    nf2 = len(corner_v)
    kf = np.arange(nf2)
    fg = off[2] + corner_face
    r_ev1 = idx(1, off[1] + corner_e, corner_v)
    r_ev2 = idx(1, off[1] + corner_eprev, corner_v)
    r_fe1 = idx(1, fg, off[1] + corner_e)
    r_fe2 = idx(1, fg, off[1] + corner_eprev)
    rows2 = [r_ev1, r_ev2, r_fe1, r_fe2]
    cols2 = [kf] * 4
    vals2 = [corner_s, corner_sprev, ev_sign(corner_e, corner_v), ev_sign(corner_eprev, corner_v)]
    # K2 (c -> e)
    kc = nf2 + np.arange(len(ce_cell))
    cg = off[3] + ce_cell
    for j in range(2):
        row = ce_rows[:, j]
        f = cc_face[row]
        # corner edge equals ce_edge for these rows
        rows2.append(idx(1, off[2] + f, off[1] + ce_edge))
        cols2.append(kc)
        vals2.append(cc_cfs[row])
        rows2.append(idx(1, cg, off[2] + f))
        cols2.append(kc)
        vals2.append(corner_s[cc_corner[row]])
    r2 = np.concatenate(rows2)
    if np.any(r2 < 0):
        raise StructuralError("internal: missing K 1-cell in 2-cell boundary")
    D2 = sp.csr_matrix(
        (np.concatenate(vals2), (r2, np.concatenate(cols2))), shape=(counts[1], counts[2])
    )

    # K3 (c -> v): three faces and three edges of c at v
    n3k = counts[3]
    kq = np.arange(n3k)
    rows3, cols3, vals3 = [], [], []
    cgq = off[3] + cv_cell
    for j in range(3):
        row = cv_rows[:, j]
        f = cc_face[row]
        rows3.append(idx(2, off[2] + f, cv_vert))
        cols3.append(kq)
        vals3.append(cc_cfs[row])
    # edges at v within c: each appears in two of the three corners
    corner_pair = np.stack(
        [corner_e[cc_corner[cv_rows]], corner_eprev[cc_corner[cv_rows]]], axis=2
    ).reshape(n3k, 6)
    dirs = np.sort(corner_pair, axis=1)[:, ::2]  # each edge twice -> take every other
    if n3k and np.any(np.sort(corner_pair, axis=1)[:, 1::2] != dirs):
        raise TopologyError("non-Boolean vertex interval in a polyhedron")
    if n3k and np.any(dirs[:, 1:] == dirs[:, :-1]):
        raise TopologyError("polyhedron vertex with repeated edge")
    for j in range(3):
        e = dirs[:, j]
        rows3.append(idx(2, cgq, off[1] + e))
        cols3.append(kq)
        vals3.append(-ev_sign(e, cv_vert))
    r3 = np.concatenate(rows3) if rows3 else np.zeros(0, np.int64)
    if np.any(r3 < 0):
        raise StructuralError("internal: missing K 2-cell in 3-cell boundary")
    D3 = sp.csr_matrix(
        (np.concatenate(vals3) if vals3 else np.zeros(0), (r3, np.concatenate(cols3) if cols3 else r3)),
        shape=(counts[2], counts[3]),
    )
    boundaries = (D1, D2, D3)

    # --- quasi-cube charts ------------------------------------------------
    # chart_cells[q, mask] = gid of the M cell spanned by the directions in mask
    chart_cells = np.zeros((n3k, 8), dtype=np.int64)
    chart_cells[:, 0] = cv_vert
    chart_cells[:, 7] = cgq
    for k in range(3):
        chart_cells[:, 1 << k] = off[1] + dirs[:, k]
    cf = cc_face[cv_rows]  # (n3k, 3) faces
    ce_a = corner_e[cc_corner[cv_rows]]
    ce_b = corner_eprev[cc_corner[cv_rows]]
    for j in range(3):
        bits = np.zeros(n3k, dtype=np.int64)
        for k in range(3):
            bits |= np.where((ce_a[:, j] == dirs[:, k]) | (ce_b[:, j] == dirs[:, k]), 1 << k, 0)
        if n3k and np.any(~np.isin(bits, (3, 5, 6))):
            raise TopologyError("face at a polyhedron vertex does not span two of its edges")
        np.put_along_axis(chart_cells, bits[:, None], (off[2] + cf[:, j])[:, None], axis=1)
    chart = np.zeros((n3k, N_CODES), dtype=np.int64)
    for t in range(N_CODES):
        chart[:, t] = idx(
            CODE_DIM[t], chart_cells[:, UPPER_MASK[t]], chart_cells[:, LOWER_MASK[t]]
        )
    if n3k and np.any(chart < 0):
        raise TopologyError("quasi-cube chart references a missing K cell")

    K_top = FormanComplex(
        M=M,
        offsets=off,
        upper=tuple(up),
        lower=tuple(lo),
        boundaries=boundaries,
        coords=K_partial.coords,
        measures=(),
        chart_cells=chart_cells,
        chart=chart,
        chart_sign=np.zeros((n3k, N_CODES), np.int8),
    )
    validate_forman_orientation(K_top)
    sign = _chart_signs(K_top)

    measures = _kite_measures(K_top, corner_e, corner_eprev, ce_rows, cc_face)
    return FormanComplex(
        M=M,
        offsets=off,
        upper=tuple(up),
        lower=tuple(lo),
        boundaries=boundaries,
        coords=K_partial.coords,
        measures=measures,
        chart_cells=chart_cells,
        chart=chart,
        chart_sign=sign,
    )


def validate_forman_orientation(K: FormanComplex) -> None:
    D1, D2, D3 = K.boundaries
    if (D1 @ D2).count_nonzero() or (D2 @ D3).count_nonzero():
        raise OrientationError("boundary of boundary is nonzero on the subdivision")
    if K.counts[3]:
        cof = np.diff(D3.tocsr().indptr)
        if np.any(cof > 2):
            raise OrientationError("K 2-cell with more than two cofaces")
        s = np.asarray(D3.sum(axis=1)).ravel()
        if np.any(s[cof == 2] != 0):
            raise OrientationError("subdivision is not compatibly oriented")


def _chart_signs(K: FormanComplex) -> np.ndarray:
    """Orientation of each chart face relative to the standard cube orientation.

    Vertices are +1; a face inherits its sign from the facet obtained by
    fixing its first free direction at 1 (standard incidence +1 there).  All
    other facets are then checked against the standard cube incidences.
    """
    chart = K.chart
    n = len(chart)
    s = np.zeros((n, N_CODES), dtype=np.int8)
    order = np.argsort(CODE_DIM, kind="stable")
    for t in order:
        if CODE_DIM[t] == 0:
            s[:, t] = 1
            continue
        k0 = CODE_FREE[t][0]
        g = _facet_code(t, k0, 1)
        eps = K.incidence(CODE_DIM[t], chart[:, t], chart[:, g])
        s[:, t] = (eps * s[:, g]).astype(np.int8)
    for t in range(N_CODES):
        for j, k in enumerate(CODE_FREE[t]):
            for value in (0, 1):
                g = _facet_code(t, k, value)
                std = (-1) ** j * (1 if value else -1)
                eps = K.incidence(CODE_DIM[t], chart[:, t], chart[:, g])
                if np.any(eps != s[:, t] * s[:, g] * std):
                    q = int(np.flatnonzero(eps != s[:, t] * s[:, g] * std)[0])
                    raise OrientationError(
                        f"quasi-cube {q}: stored orientation is not a cube orientation"
                    )
    return s


def _kite_measures(K, corner_e, corner_eprev, ce_rows, cc_face):
    off = K.offsets
    X = K.coords
    up, lo = K.upper, K.lower
    mu0 = np.ones(len(up[0]))
    mu1 = np.linalg.norm(X[up[1]] - X[lo[1]], axis=1)

    nf2 = len(corner_e)
    m1 = np.concatenate([off[1] + corner_e, off[2] + cc_face[ce_rows[:, 0]]])
    m2 = np.concatenate([off[1] + corner_eprev, off[2] + cc_face[ce_rows[:, 1]]])
    a = X[lo[2]]
    diag = X[up[2]] - a
    mu2 = 0.5 * (
        np.linalg.norm(np.cross(X[m1] - a, diag), axis=1)
        + np.linalg.norm(np.cross(diag, X[m2] - a), axis=1)
    )
    assert len(mu2) == nf2 + len(ce_rows)

    # quasi-cube: six tetrahedra around the base-top diagonal
    cc = K.chart_cells
    ring = [1, 3, 2, 6, 4, 5]
    base = X[cc[:, 0]]
    top = X[cc[:, 7]]
    vol = np.zeros(len(cc))
    for i in range(6):
        p = X[cc[:, ring[i]]]
        q = X[cc[:, ring[(i + 1) % 6]]]
        vol += np.einsum("ij,ij->i", top - base, np.cross(p - base, q - base)) / 6.0
    mu3 = np.abs(vol)

    for dim, mu in ((1, mu1), (2, mu2), (3, mu3)):
        if len(mu) and mu.min() < MIN_MEASURE:
            i = int(np.argmin(mu))
            raise DegeneracyError(f"K {dim}-cell {i} {K.cell(dim, i)} has measure {mu[i]:.3e}")
    return (mu0, mu1, mu2, mu3)


def kite_measures(K: FormanComplex) -> tuple:
    """Measures of all K cells, per dimension (1 for vertices)."""
    return K.measures


def quasi_cube_chart(K: FormanComplex, cube: int) -> dict:
    """Map each face of quasi-cube ``cube`` to ``(fixed_at_one, free)`` direction sets.

    Keys are ``(dim, K index)``.  The base vertex ``(c0 -> c0)`` maps to
    ``(∅, ∅)``, the top vertex ``(c3 -> c3)`` to ``({0,1,2}, ∅)`` and the
    cube itself to ``(∅, {0,1,2})``.
    """
    if not 0 <= cube < K.counts[3]:
        raise TopologyError(f"no quasi-cube with index {cube}")
    out = {}
    for t in range(N_CODES):
        ones = frozenset(int(k) for k in range(3) if CODES[t, k] == 1)
        free = frozenset(CODE_FREE[t])
        out[(int(CODE_DIM[t]), int(K.chart[cube, t]))] = (ones, free)
    if len(out) != N_CODES:
        raise TopologyError(f"quasi-cube {cube} chart is not a bijection")
    return out
