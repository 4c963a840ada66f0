"""Metric operators on the kite complex: inner product, cup product, Hodge star,
adjoint coboundary and the conductivity-weighted Laplacian.

All assembly runs over the 27-face quasi-cube charts of ``FormanComplex``.  Two
cup-product conventions are available:

``"origin"``
    the classical cubical cup: front face through the chart's base vertex,
    back face through the opposite vertex.
``"average"`` (default)
    the same formula averaged over all choices of base vertex.  Each pair of
    topologically orthogonal cells inside a quasi-cube then contributes once,
    with weight 1/8.

Both satisfy the unit law and the Leibniz rule; see ``notes`` in the README for
why the averaged form is the default.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .errors import TopologyError, ValidationError
from .forman import CODE_DIM, CODE_FREE, CODES, N_CODES, TOP_CODE, FormanComplex, code_of

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-30
CUP_MODES = ("average", "origin")


def shuffle_sign(J, L) -> int:
    """Sign of the permutation sorting the concatenation ``J + L``."""
    seq = list(J) + list(L)
    inv = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return -1 if inv % 2 else 1


@lru_cache(maxsize=None)
def _cup_terms(t: int, p: int, mode: str):
    """(front code, back code, sign) terms of the cup on chart face ``t`` for a p-cochain in front."""
    free = CODE_FREE[t]
    n = len(free)
    if not 0 <= p <= n:
        return ()
    bases = [()]
    if mode == "average":
        bases = [R for r in range(n + 1) for R in combinations(free, r)]
    terms = []
    for R in bases:
        for J in combinations(free, p):
            L = tuple(k for k in free if k not in J)
            front = CODES[t].copy()
            back = CODES[t].copy()
            for k in L:
                front[k] = 1 if k in R else 0
            for k in J:
                back[k] = 0 if k in R else 1
            terms.append((code_of(front), code_of(back), shuffle_sign(J, L)))
    return tuple(terms)


def _check_mode(mode):
    if mode not in CUP_MODES:
        raise ValidationError(f"cup-product mode must be one of {CUP_MODES}, got {mode!r}")


def _require_charts(K: FormanComplex):
    if K.counts[3] == 0 or len(K.chart) != K.counts[3]:
        raise TopologyError("complex has no quasi-cube charts")


def _pair_table(p: int, mode: str):
    """Chart-level (front, back, sign) terms on the top cell with a (3-p)-cell in front."""
    return _cup_terms(TOP_CODE, 3 - p, mode)


def orthogonal_pairs(K: FormanComplex, p: int) -> np.ndarray:
    """Unique ``(c_p, b_{3-p})`` index pairs of topologically orthogonal cells."""
    if p not in (0, 1, 2, 3):
        raise ValidationError(f"p must be in 0..3, got {p}")
    _require_charts(K)
    # every orthogonal pair inside a quasi-cube is a (front, back) term of the averaged cup
    terms = _pair_table(p, "average")
    back = np.concatenate([K.chart[:, b] for _, b, _ in terms])
    front = np.concatenate([K.chart[:, f] for f, _, _ in terms])
    pairs = np.unique(np.stack([back, front], axis=1), axis=0)
    return pairs


@dataclass(frozen=True, eq=False)
class InnerProduct:
    """Diagonal weights ``w[p]`` with ``<a, b>_p = sum(w[p] * a * b)``."""

    weights: tuple

    def __call__(self, p, a, b):
        return float(np.sum(self.weights[p] * np.asarray(a) * np.asarray(b)))

    def matrix(self, p) -> sp.dia_matrix:
        return sp.diags(self.weights[p])


def inner_product(K: FormanComplex) -> InnerProduct:
    """Weights ``w_p(c) = (1 / (8 mu(c))) * sum of mu(b) over b orthogonal to c``."""
    _require_charts(K)
    weights = []
    for p in range(4):
        pairs = orthogonal_pairs(K, p)
        mu_b = K.measures[3 - p][pairs[:, 1]]
        s = np.bincount(pairs[:, 0], mu_b, minlength=K.counts[p])
        empty = s <= 0
        if np.any(empty):
            log.warning(
                "%d %d-cells have no orthogonal partner; weight floored at %g",
                int(empty.sum()), p, WEIGHT_FLOOR,
            )
        w = s / (8.0 * K.measures[p])
        w[empty] = WEIGHT_FLOOR
        weights.append(w)
    return InnerProduct(tuple(weights))


def cup_product(K: FormanComplex, tau, sigma, p: int, q: int, mode: str = "average", chart_use=None):
    """Cup product of a p-cochain ``tau`` and a q-cochain ``sigma`` (``p + q <= 3``).

    Each (p+q)-cell is evaluated in the chart of one quasi-cube containing it.
    ``chart_use`` selects which occurrence (``"first"`` or ``"last"``); the
    result does not depend on the choice.
    """
    _check_mode(mode)
    _require_charts(K)
    n = p + q
    if p < 0 or q < 0 or n > 3:
        raise ValidationError(f"cup product needs p, q >= 0 and p + q <= 3, got {p}, {q}")
    tau = np.asarray(tau, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if tau.shape != (K.counts[p],) or sigma.shape != (K.counts[q],):
        raise ValidationError("cochain lengths do not match the complex")
    out = np.zeros(K.counts[n])
    done = np.zeros(K.counts[n], dtype=bool)
    for t in range(N_CODES):
        if CODE_DIM[t] != n:
            continue
        cells = K.chart[:, t]
        if chart_use == "last":
            sel = np.unique(cells[::-1], return_index=True)[1]
            rows = len(cells) - 1 - sel
        else:
            rows = np.unique(cells, return_index=True)[1]
        rows = rows[~done[cells[rows]]]
        if len(rows) == 0:
            continue
        terms = _cup_terms(t, p, mode)
        acc = np.zeros(len(rows))
        sgn = K.chart_sign[rows]
        for f, b, rho in terms:
            acc += rho * sgn[:, f] * sgn[:, b] * tau[K.chart[rows, f]] * sigma[K.chart[rows, b]]
        if mode == "average":
            acc /= 2.0**n
        out[cells[rows]] = sgn[:, t] * acc
        done[cells[rows]] = True
    return out


def fundamental_class(K: FormanComplex, cochain3) -> float:
    """Evaluate a 3-cochain on the sum of all 3-cells."""
    return float(np.sum(cochain3))


def cup_matrix(K: FormanComplex, p: int, mode: str = "average") -> sp.csr_matrix:
    """``C[b, c] = (b^{3-p} ⌣ c^p)[K]`` as an ``N_{3-p} x N_p`` sparse matrix."""
    _check_mode(mode)
    _require_charts(K)
    terms = _pair_table(p, mode)
    sgn = K.chart_sign
    top = sgn[:, TOP_CODE].astype(float)
    wgt = 1.0 / 8.0 if mode == "average" else 1.0
    rows = np.concatenate([K.chart[:, f] for f, _, _ in terms])
    cols = np.concatenate([K.chart[:, b] for _, b, _ in terms])
    vals = np.concatenate([wgt * rho * top * sgn[:, f] * sgn[:, b] for f, b, rho in terms])
    return sp.csr_matrix((vals, (rows, cols)), shape=(K.counts[3 - p], K.counts[p]))


def hodge_star(K: FormanComplex, p: int, ip: InnerProduct | None = None, mode: str = "average") -> sp.csr_matrix:
    """Hodge star ``C^p -> C^{3-p}`` fixed by ``(tau ⌣ sigma)[K] = <tau, star sigma>``."""
    if p not in (0, 1, 2, 3):
        raise ValidationError(f"p must be in 0..3, got {p}")
    ip = ip or inner_product(K)
    C = cup_matrix(K, p, mode)
    return (sp.diags(1.0 / ip.weights[3 - p]) @ C).tocsr()


def adjoint_coboundary(K: FormanComplex, p: int, ip: InnerProduct | None = None) -> sp.csr_matrix:
    """Adjoint of the coboundary ``delta_{p-1}``: ``W_{p-1}^{-1} d_p W_p``."""
    if p not in (1, 2, 3):
        raise ValidationError(f"adjoint coboundary defined for p in 1..3, got {p}")
    ip = ip or inner_product(K)
    D = K.boundary_matrix(p)
    return (sp.diags(1.0 / ip.weights[p - 1]) @ D @ sp.diags(ip.weights[p])).tocsr()


def material_laplacian(K: FormanComplex, conductivity, ip: InnerProduct | None = None) -> sp.csr_matrix:
    """``delta*_1 Pi_1 delta_0`` for per-K-edge conductivities ``Pi_1``."""
    pi1 = np.asarray(conductivity, dtype=float)
    if pi1.shape != (K.counts[1],):
        raise ValidationError(f"need {K.counts[1]} edge conductivities, got {pi1.shape}")
    if np.any(pi1 < 0) or not np.all(np.isfinite(pi1)):
        raise ValidationError("conductivities must be finite and non-negative")
    ip = ip or inner_product(K)
    D = K.boundary_matrix(1)
    L = D @ sp.diags(ip.weights[1] * pi1) @ D.T
    return (sp.diags(1.0 / ip.weights[0]) @ L).tocsr()


@dataclass(frozen=True, eq=False)
class Operators:
    """Metric operators of one complex, built once and shared read-only."""

    K: FormanComplex
    ip: InnerProduct
    star1: sp.csr_matrix
    mode: str

    @classmethod
    def build(cls, K: FormanComplex, mode: str = "average") -> "Operators":
        ip = inner_product(K)
        return cls(K, ip, hodge_star(K, 1, ip, mode), mode)

    def laplacian(self, conductivity) -> sp.csr_matrix:
        return material_laplacian(self.K, conductivity, self.ip)


# ---------------------------------------------------------------------------
# calculus on a boundary surface of K (quasi-squares (f -> v) on boundary faces)


@dataclass(frozen=True, eq=False)
class SurfaceCalculus:
    """Inner product and top Hodge star on the 2-complex of kites over a set of boundary faces.

    ``kites`` are K 2-cell indices, ``kite_sign`` their orientation relative to
    the outward normal, ``nodes`` / ``edges`` the K 0- and 1-cells of the surface.
    """

    kites: np.ndarray
    kite_sign: np.ndarray
    nodes: np.ndarray
    edges: np.ndarray
    weights: tuple
    star2: sp.csr_matrix  # (len(nodes) x len(kites))
    d1: sp.csr_matrix  # surface boundary of edges, local numbering
    d2: sp.csr_matrix

    def adjoint(self, p):
        W = self.weights
        D = self.d1 if p == 1 else self.d2
        return sp.diags(1.0 / W[p - 1]) @ D @ sp.diags(W[p])


def surface_calculus(K: FormanComplex, faces, face_sign) -> SurfaceCalculus:
    """Build the surface calculus on boundary M faces ``faces`` with outward signs ``face_sign``."""
    faces = np.asarray(faces, dtype=np.int64)
    off = K.offsets
    gface = off[2] + faces
    sel = np.isin(K.upper[2], gface)
    kites = np.flatnonzero(sel)
    fsign = np.zeros(int(off[-1]))
    fsign[gface] = face_sign
    ksign = fsign[K.upper[2][kites]]

    D2 = K.boundary_matrix(2)[:, kites].tocsc()
    edges = np.unique(D2.indices)
    D1 = K.boundary_matrix(1)[:, edges].tocsc()
    nodes = np.unique(D1.indices)
    e_loc = np.full(K.counts[1], -1)
    e_loc[edges] = np.arange(len(edges))
    n_loc = np.full(K.counts[0], -1)
    n_loc[nodes] = np.arange(len(nodes))
    d2 = sp.csr_matrix(
        (D2.data, (e_loc[D2.indices], np.repeat(np.arange(len(kites)), np.diff(D2.indptr)))),
        shape=(len(edges), len(kites)),
    )
    d1 = sp.csr_matrix(
        (D1.data, (n_loc[D1.indices], np.repeat(np.arange(len(edges)), np.diff(D1.indptr)))),
        shape=(len(nodes), len(edges)),
    )
    mu2 = K.measures[2][kites]
    mu1 = K.measures[1][edges]
    inc = (abs(d1) @ abs(d2)).tocoo()  # nodes x kites, nonzero at the 4 corners
    corner_node, corner_kite = inc.row, inc.col
    w0 = np.bincount(corner_node, mu2[corner_kite], minlength=len(nodes)) / 4.0
    # inside a quasi-square each edge is orthogonal to the two edges meeting it in one vertex
    d2c = d2.tocsc()
    d2c.sort_indices()
    kite_edges = d2c.indices.reshape(-1, 4)
    ends = d1.tocsc()
    ends.sort_indices()
    ends = ends.indices.reshape(-1, 2)
    w1_sum = np.zeros(len(edges))
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            a, b = ends[kite_edges[:, i]], ends[kite_edges[:, j]]
            shared = (a[:, :1] == b).sum(axis=1) + (a[:, 1:] == b).sum(axis=1)
            np.add.at(w1_sum, kite_edges[:, i], np.where(shared == 1, mu1[kite_edges[:, j]], 0.0))
    w1 = w1_sum / (4.0 * mu1)
    w2 = 1.0 / mu2
    C = sp.csr_matrix((ksign[corner_kite] / 4.0, (corner_node, corner_kite)), shape=(len(nodes), len(kites)))
    star2 = (sp.diags(1.0 / w0) @ C).tocsr()
    return SurfaceCalculus(kites, ksign, nodes, edges, (w0, w1, w2), star2, d1, d2)
