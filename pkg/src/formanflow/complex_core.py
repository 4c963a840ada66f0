"""Polyhedral cell complexes: topology, relative orientations and geometry.

Cells are indexed densely per dimension. Relative orientations follow three
fixed rules:

* an edge runs from its lower-index node to its higher-index node;
* a face is oriented by the cyclic order of its vertex list;
* a polyhedron is oriented outward, so each face gets ``+1`` when the face
  normal points away from the polyhedron's reference point.

The resulting incidence is validated with ``d @ d == 0`` and the compatibility
check on interior faces before a complex is handed out.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegeneracyError, OrientationError, StructuralError, ValidationError

MIN_MEASURE = 1e-18


@dataclass(frozen=True)
class CellId:
    dim: int
    index: int


@dataclass(frozen=True)
class Cochain:
    """Coefficients of a p-cochain with a physical-dimension tag."""

    dim: int
    values: np.ndarray
    unit: str = ""

    def __len__(self):
        return len(self.values)


def _ragged_arange(counts):
    """Concatenation of ``arange(c)`` for each ``c`` in ``counts``."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    return np.arange(total, dtype=np.int64) - starts


def _ptr_from_lists(lists):
    counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    flat = (
        np.fromiter((int(v) for x in lists for v in x), dtype=np.int64, count=int(ptr[-1]))
        if len(lists)
        else np.zeros(0, dtype=np.int64)
    )
    return ptr, flat


@dataclass(frozen=True, eq=False)
class BoundarySubcomplex:
    """Cells of the boundary surface with the outward-induced face orientation.

    ``face_sign[i]`` is the relative orientation of ``faces[i]`` with its only
    adjacent polyhedron, so ``face_sign * d2[:, faces]`` is a compatibly oriented
    2-complex.
    """

    faces: np.ndarray
    face_sign: np.ndarray
    edges: np.ndarray
    nodes: np.ndarray


@dataclass(frozen=True, eq=False)
class CellComplex:
    """A 3-dimensional polyhedral cell complex (possibly with empty top dimensions).

    Faces and polyhedra are stored in CSR layout: ``face_verts[face_ptr[f]:face_ptr[f+1]]``
    is the vertex cycle of face ``f`` and ``face_edges`` holds, at the same position,
    the edge from that vertex to the next one.
    """

    coords: np.ndarray
    edges: np.ndarray
    face_ptr: np.ndarray
    face_verts: np.ndarray
    face_edges: np.ndarray
    face_edge_sign: np.ndarray
    cell_ptr: np.ndarray
    cell_faces: np.ndarray
    cell_face_sign: np.ndarray
    measures: tuple
    centroids: tuple

    @property
    def counts(self) -> tuple:
        return (
            len(self.coords),
            len(self.edges),
            len(self.face_ptr) - 1,
            len(self.cell_ptr) - 1,
        )

    @property
    def euler_characteristic(self) -> int:
        n0, n1, n2, n3 = self.counts
        return n0 - n1 + n2 - n3

    def cochain(self, dim, values, unit="") -> Cochain:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.counts[dim],):
            raise ValidationError(
                f"{dim}-cochain needs {self.counts[dim]} coefficients, got {values.shape}"
            )
        return Cochain(dim, values, unit)

    @cached_property
    def _boundaries(self):
        n0, n1, n2, n3 = self.counts
        d1 = sp.csr_matrix(
            (
                np.tile([-1.0, 1.0], n1),
                (self.edges.ravel(), np.repeat(np.arange(n1), 2)),
            ),
            shape=(n0, n1),
        )
        face_of_corner = np.repeat(np.arange(n2), np.diff(self.face_ptr))
        d2 = sp.csr_matrix(
            (self.face_edge_sign.astype(float), (self.face_edges, face_of_corner)),
            shape=(n1, n2),
        )
        cell_of_inc = np.repeat(np.arange(n3), np.diff(self.cell_ptr))
        d3 = sp.csr_matrix(
            (self.cell_face_sign.astype(float), (self.cell_faces, cell_of_inc)),
            shape=(n2, n3),
        )
        return (d1, d2, d3)

    def boundary_matrix(self, p: int) -> sp.csr_matrix:
        """Matrix of the boundary operator from p-chains to (p-1)-chains."""
        if p not in (1, 2, 3):
            raise ValidationError(f"boundary operator defined for p in 1..3, got {p}")
        return self._boundaries[p - 1]

    def coboundary_matrix(self, p: int) -> sp.csr_matrix:
        """Matrix of the coboundary from p-cochains to (p+1)-cochains (transpose of d_{p+1})."""
        if p not in (0, 1, 2):
            raise ValidationError(f"coboundary operator defined for p in 0..2, got {p}")
        return self._boundaries[p].T.tocsr()

    @cached_property
    def face_coface_count(self) -> np.ndarray:
        return np.bincount(self.cell_faces, minlength=self.counts[2])

    @cached_property
    def boundary_flags(self) -> tuple:
        """Per-dimension boolean masks of the cells lying on the boundary surface."""
        n0, n1, n2, n3 = self.counts
        if n3 == 0:
            # lower-dimensional complexes: nothing is enclosed
            return tuple(np.ones(n, dtype=bool) for n in (n0, n1, n2)) + (
                np.zeros(0, dtype=bool),
            )
        bf = self.face_coface_count == 1
        be = np.zeros(n1, dtype=bool)
        bn = np.zeros(n0, dtype=bool)
        corner_face = np.repeat(np.arange(n2), np.diff(self.face_ptr))
        on = bf[corner_face]
        be[self.face_edges[on]] = True
        bn[self.face_verts[on]] = True
        return (bn, be, bf, np.zeros(n3, dtype=bool))

    def face_vertices(self, f: int) -> np.ndarray:
        return self.face_verts[self.face_ptr[f] : self.face_ptr[f + 1]]

    def cell_face_list(self, c: int) -> np.ndarray:
        return self.cell_faces[self.cell_ptr[c] : self.cell_ptr[c + 1]]

    @property
    def bounding_box(self) -> np.ndarray:
        return np.array([self.coords.min(axis=0), self.coords.max(axis=0)])


def boundary_subcomplex(M: CellComplex) -> BoundarySubcomplex:
    """Boundary faces (exactly one adjacent polyhedron) with outward orientation."""
    n0, n1, n2, n3 = M.counts
    bn, be, bf, _ = M.boundary_flags
    if n3 == 0:
        return BoundarySubcomplex(
            np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
        )
    faces = np.flatnonzero(bf)
    sign = np.zeros(n2)
    sign[M.cell_faces] = M.cell_face_sign  # boundary faces are written exactly once
    return BoundarySubcomplex(faces, sign[faces], np.flatnonzero(be), np.flatnonzero(bn))


def _face_geometry(coords, face_ptr, face_verts):
    counts = np.diff(face_ptr)
    n2 = len(counts)
    face_of = np.repeat(np.arange(n2), counts)
    start = face_ptr[:-1]
    nxt = np.arange(len(face_verts)) + 1
    last = face_ptr[1:] - 1
    nxt[last] = start
    p = coords[face_verts]
    q = coords[face_verts[nxt]]
    g = np.add.reduceat(p, start, axis=0) / counts[:, None] if n2 else np.zeros((0, 3))
    gc = g[face_of]
    cross = 0.5 * np.cross(p - gc, q - gc)
    tri_area = np.linalg.norm(cross, axis=1)
    area = np.bincount(face_of, tri_area, minlength=n2)
    tri_c = (gc + p + q) / 3.0
    cen = np.stack(
        [np.bincount(face_of, tri_area * tri_c[:, k], minlength=n2) for k in range(3)], axis=1
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        cen = cen / area[:, None]
    normal = np.stack([np.bincount(face_of, cross[:, k], minlength=n2) for k in range(3)], axis=1)
    return area, cen, normal, g, nxt


def build_complex(
    nodes,
    faces: Sequence[Sequence[int]] = (),
    cells: Sequence[Sequence[int]] = (),
    edges=None,
) -> CellComplex:
    """Build and validate a cell complex.

    Args:
        nodes: (N0, 3) node coordinates in metres.
        faces: vertex cycles, one per 2-cell.
        cells: face index lists, one per 3-cell. Signs, if present, are ignored
            (orientation is recomputed from geometry).
        edges: optional (N1, 2) node pairs. Derived from the face cycles when
            omitted. Edge orientation is always lower node -> higher node.

    Raises:
        StructuralError: dangling references or malformed cells.
        DegeneracyError: a cell with measure below ``MIN_MEASURE``.
        OrientationError: the orientation checks fail.
    """
    coords = np.asarray(nodes, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise StructuralError(f"nodes must be an (N, 3) array, got shape {coords.shape}")
    n0 = len(coords)
    if not np.all(np.isfinite(coords)):
        raise StructuralError("non-finite node coordinate")

    face_ptr, face_verts = _ptr_from_lists(list(faces))
    n2 = len(face_ptr) - 1
    if n2 and (face_verts.min() < 0 or face_verts.max() >= n0):
        bad = int(np.flatnonzero((face_verts < 0) | (face_verts >= n0))[0])
        f = int(np.searchsorted(face_ptr, bad, side="right") - 1)
        raise StructuralError(f"face {f} references missing node {face_verts[bad]}")
    fcounts = np.diff(face_ptr)
    if n2 and fcounts.min() < 3:
        raise StructuralError(f"face {int(np.argmin(fcounts))} has fewer than 3 vertices")

    nxt = np.arange(len(face_verts)) + 1
    if n2:
        nxt[face_ptr[1:] - 1] = face_ptr[:-1]
    a = face_verts
    b = face_verts[nxt] if n2 else face_verts
    if np.any(a == b):
        raise StructuralError("face cycle repeats a vertex consecutively")
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)

    if edges is None:
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0) if n2 else np.zeros((0, 2), np.int64)
        edge_arr = pairs.astype(np.int64)
    else:
        edge_arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edge_arr) and (edge_arr.min() < 0 or edge_arr.max() >= n0):
            e = int(np.flatnonzero(((edge_arr < 0) | (edge_arr >= n0)).any(axis=1))[0])
            raise StructuralError(f"edge {e} references a missing node")
        edge_arr = np.sort(edge_arr, axis=1)
    n1 = len(edge_arr)
    if n1 and np.any(edge_arr[:, 0] == edge_arr[:, 1]):
        raise StructuralError(f"edge {int(np.flatnonzero(edge_arr[:, 0] == edge_arr[:, 1])[0])} is a loop")

    key = edge_arr[:, 0] * n0 + edge_arr[:, 1]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    if n1 > 1 and np.any(skey[1:] == skey[:-1]):
        raise StructuralError("duplicate edge in edge list")
    ckey = lo * n0 + hi
    pos = np.searchsorted(skey, ckey)
    pos_c = np.minimum(pos, max(n1 - 1, 0))
    found = (pos < n1) & (skey[pos_c] == ckey) if n1 else np.zeros(len(ckey), bool)
    if not np.all(found):
        bad = int(np.flatnonzero(~found)[0])
        f = int(np.searchsorted(face_ptr, bad, side="right") - 1)
        raise StructuralError(f"face {f} uses edge ({a[bad]}, {b[bad]}) missing from the edge list")
    face_edges = order[pos_c] if n1 else np.zeros(0, np.int64)
    face_edge_sign = np.where(a < b, 1, -1).astype(np.int8)

    cell_lists = [[abs(int(f)) for f in c] for c in cells]
    cell_ptr, cell_faces = _ptr_from_lists(cell_lists)
    n3 = len(cell_ptr) - 1
    if n3 and (cell_faces.min() < 0 or cell_faces.max() >= n2):
        raise StructuralError("polyhedron references a missing face")
    ccounts = np.diff(cell_ptr)
    if n3 and ccounts.min() < 2:
        raise StructuralError(f"polyhedron {int(np.argmin(ccounts))} has fewer than 2 faces")

    # geometry
    length = np.linalg.norm(coords[edge_arr[:, 1]] - coords[edge_arr[:, 0]], axis=1)
    emid = 0.5 * (coords[edge_arr[:, 0]] + coords[edge_arr[:, 1]])
    area, fcen, fnormal, fg, fnxt = _face_geometry(coords, face_ptr, face_verts)

    cell_face_sign = np.zeros(len(cell_faces), dtype=np.int8)
    volume = np.zeros(n3)
    ccen = np.zeros((n3, 3))
    if n3:
        cell_of_inc = np.repeat(np.arange(n3), ccounts)
        ref = np.add.reduceat(fcen[cell_faces], cell_ptr[:-1], axis=0) / ccounts[:, None]
        out = np.einsum("ij,ij->i", fnormal[cell_faces], fcen[cell_faces] - ref[cell_of_inc])
        cell_face_sign = np.where(out > 0, 1, -1).astype(np.int8)
        # signed tetrahedra (ref, face centre, v_k, v_k+1) over every face triangle
        fsize = fcounts[cell_faces]
        inc_of_tri = np.repeat(np.arange(len(cell_faces)), fsize)
        corner = face_ptr[cell_faces][inc_of_tri] + _ragged_arange(fsize)
        o = ref[cell_of_inc[inc_of_tri]]
        g = fg[cell_faces[inc_of_tri]]
        p = coords[face_verts[corner]]
        q = coords[face_verts[fnxt[corner]]]
        tv = np.einsum("ij,ij->i", g - o, np.cross(p - o, q - o)) / 6.0
        tv *= cell_face_sign[inc_of_tri]
        cid = cell_of_inc[inc_of_tri]
        volume = np.bincount(cid, tv, minlength=n3)
        tc = (o + g + p + q) / 4.0
        ccen = np.stack([np.bincount(cid, tv * tc[:, k], minlength=n3) for k in range(3)], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            ccen = ccen / volume[:, None]

    for dim, mu in ((1, length), (2, area), (3, volume)):
        if len(mu) and np.min(mu) < MIN_MEASURE:
            i = int(np.argmin(mu))
            raise DegeneracyError(f"{dim}-cell {i} has measure {mu[i]:.3e} < {MIN_MEASURE}")

    M = CellComplex(
        coords=coords,
        edges=edge_arr,
        face_ptr=face_ptr,
        face_verts=face_verts,
        face_edges=face_edges,
        face_edge_sign=face_edge_sign,
        cell_ptr=cell_ptr,
        cell_faces=cell_faces,
        cell_face_sign=cell_face_sign,
        measures=(np.ones(n0), length, area, volume),
        centroids=(coords.copy(), emid, fcen, ccen),
    )
    validate_orientation(M)
    return M


def validate_orientation(M: CellComplex) -> None:
    """Raise ``OrientationError`` unless d∘d = 0 and interior faces are compatible."""
    n0, n1, n2, n3 = M.counts
    d1, d2, d3 = M._boundaries
    if n2 and (d1 @ d2).count_nonzero():
        raise OrientationError("d1 @ d2 != 0")
    if n3:
        dd = (d2 @ d3).tocoo()
        if np.any(dd.data != 0):
            c = int(dd.col[np.flatnonzero(dd.data)[0]])
            raise OrientationError(f"d2 @ d3 != 0 around polyhedron {c}")
        cof = M.face_coface_count
        if np.any(cof > 2):
            raise StructuralError(f"face {int(np.argmax(cof))} is shared by more than two polyhedra")
        s = np.bincount(M.cell_faces, M.cell_face_sign.astype(float), minlength=n2)
        interior = cof == 2
        if np.any(s[interior] != 0):
            f = int(np.flatnonzero(interior & (s != 0))[0])
            raise OrientationError(f"interior face {f} is not compatibly oriented")
