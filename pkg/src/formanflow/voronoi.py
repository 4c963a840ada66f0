"""Voronoi tessellations of a box, a stand-in for externally generated meshes.

Seeds are mirrored across the six faces of the box so that the Voronoi cells
of the original seeds are clipped exactly to the box.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Voronoi, cKDTree

from .complex_core import CellComplex, build_complex
from .errors import ValidationError

log = logging.getLogger(__name__)


def _mirror(seeds, lo, hi):
    pts = [seeds]
    for ax in range(3):
        for plane in (lo[ax], hi[ax]):
            m = seeds.copy()
            m[:, ax] = 2 * plane - m[:, ax]
            pts.append(m)
    return np.concatenate(pts)


def _order_polygon(P):
    c = P.mean(axis=0)
    n = np.cross(P[1] - P[0], P[2] - P[0])
    for k in range(3, len(P)):
        if np.linalg.norm(n) > 0:
            break
        n = np.cross(P[k - 1] - P[0], P[k] - P[0])
    u = P[0] - c
    u /= np.linalg.norm(u)
    v = np.cross(n / np.linalg.norm(n), u)
    return np.argsort(np.arctan2((P - c) @ v, (P - c) @ u))


def voronoi_box(seeds, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), merge_tol=1e-9) -> CellComplex:
    """Voronoi complex of ``seeds`` clipped to the box ``origin + [0, size]``.

    Args:
        seeds: (n, 3) points strictly inside the box.
        size: box edge lengths (m).
        origin: lower corner.
        merge_tol: vertices closer than ``merge_tol * max(size)`` are merged.
    """
    seeds = np.asarray(seeds, dtype=float)
    lo = np.asarray(origin, dtype=float)
    hi = lo + np.asarray(size, dtype=float)
    n = len(seeds)
    if seeds.ndim != 2 or seeds.shape[1] != 3 or n < 1:
        raise ValidationError("seeds must be an (n, 3) array")
    if np.any(seeds <= lo) or np.any(seeds >= hi):
        raise ValidationError("seeds must lie strictly inside the box")
    if len(np.unique(seeds, axis=0)) != n:
        raise ValidationError("duplicate seeds")
    vor = Voronoi(_mirror(seeds, lo, hi))

    # merge near-coincident vertices produced by the mirror degeneracy
    V = vor.vertices
    tol = merge_tol * float(np.max(hi - lo))
    pairs = cKDTree(V).query_pairs(tol, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(V), len(V)))
    _, label = connected_components(g, directed=False)

    rp = vor.ridge_points
    a, b = rp[:, 0], rp[:, 1]
    inner = (a < n) & (b < n)
    wall = ((a < n) & (b >= n) & (b % n == a)) | ((b < n) & (a >= n) & (a % n == b))
    keep = np.flatnonzero(inner | wall)

    used = {}
    faces, owners = [], []
    for r in keep:
        rv = vor.ridge_vertices[r]
        if -1 in rv:
            raise ValidationError("unbounded Voronoi ridge inside the box")
        lab = list(dict.fromkeys(label[rv].tolist()))
        if len(lab) < 3:
            continue
        faces.append(lab)
        owners.append((a[r], b[r]) if inner[r] else (min(a[r], b[r]),))
        for v in lab:
            used.setdefault(v, rv[label[rv].tolist().index(v)])
    # compact node numbering; coordinates are the mean of each merged group
    old = np.array(sorted(used))
    newid = np.full(label.max() + 1, -1)
    newid[old] = np.arange(len(old))
    coords = np.zeros((len(old), 3))
    cnt = np.zeros(len(old))
    sel = newid[label] >= 0
    np.add.at(coords, newid[label[sel]], V[sel])
    np.add.at(cnt, newid[label[sel]], 1)
    coords /= cnt[:, None]
    coords = np.clip(coords, lo, hi)
    for ax in range(3):
        for plane in (lo[ax], hi[ax]):
            near = np.abs(coords[:, ax] - plane) <= tol
            coords[near, ax] = plane

    face_lists = []
    for f in faces:
        ids = newid[f]
        order = _order_polygon(coords[ids])
        face_lists.append(ids[order].tolist())
    cells = [[] for _ in range(n)]
    for i, own in enumerate(owners):
        for c in own:
            cells[c].append(i)
    return build_complex(coords, face_lists, cells)


def random_voronoi(n_cells: int, size=(1.0, 1.0, 1.0), seed: int = 0, origin=(0.0, 0.0, 0.0), lloyd: int = 0) -> CellComplex:
    """Voronoi complex from ``n_cells`` uniform random seeds (PCG64, ``seed``).

    ``lloyd`` relaxation sweeps move each seed to its cell centroid, which
    removes most sliver faces and very small cells.
    """
    if n_cells < 1:
        raise ValidationError("need at least one cell")
    rng = np.random.Generator(np.random.PCG64(seed))
    lo = np.asarray(origin, dtype=float)
    sz = np.asarray(size, dtype=float)
    pts = lo + sz * (1e-6 + (1 - 2e-6) * rng.random((n_cells, 3)))
    M = voronoi_box(pts, size, origin)
    for _ in range(int(lloyd)):
        M = voronoi_box(M.centroids[3], size, origin)
    return M
