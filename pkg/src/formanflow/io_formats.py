"""Mesh ingestion (Neper .tess, structured grids) and result serialization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .complex_core import CellComplex, build_complex
from .errors import FormatError, ValidationError

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# structured grids


def structured_grid(nx, ny, nz, Lx=1.0, Ly=1.0, Lz=1.0, origin=(0.0, 0.0, 0.0)) -> CellComplex:
    """Hexahedral grid of ``nx*ny*nz`` boxes spanning ``[0,Lx]x[0,Ly]x[0,Lz]``."""
    n = (nx, ny, nz)
    if any(int(k) != k or k < 1 for k in n):
        raise ValidationError(f"grid counts must be positive integers, got {n}")
    if min(Lx, Ly, Lz) <= 0:
        raise ValidationError("grid lengths must be positive")
    nx, ny, nz = (int(k) for k in n)
    xs = origin[0] + np.linspace(0.0, Lx, nx + 1)
    ys = origin[1] + np.linspace(0.0, Ly, ny + 1)
    zs = origin[2] + np.linspace(0.0, Lz, nz + 1)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    coords = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def node(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    faces = []
    xface, yface, zface = {}, {}, {}
    for k in range(nz + 1):
        for j in range(ny + 1):
            for i in range(nx + 1):
                if j < ny and k < nz:
                    xface[i, j, k] = len(faces)
                    faces.append([node(i, j, k), node(i, j + 1, k), node(i, j + 1, k + 1), node(i, j, k + 1)])
                if i < nx and k < nz:
                    yface[i, j, k] = len(faces)
                    faces.append([node(i, j, k), node(i, j, k + 1), node(i + 1, j, k + 1), node(i + 1, j, k)])
                if i < nx and j < ny:
                    zface[i, j, k] = len(faces)
                    faces.append([node(i, j, k), node(i + 1, j, k), node(i + 1, j + 1, k), node(i, j + 1, k)])
    cells = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                cells.append(
                    [
                        xface[i, j, k],
                        xface[i + 1, j, k],
                        yface[i, j, k],
                        yface[i, j + 1, k],
                        zface[i, j, k],
                        zface[i, j, k + 1],
                    ]
                )
    return build_complex(coords, faces, cells)


# --------------------------------------------------------------------------
# Neper .tess

TESS_VERSIONS = (2, 3, 4)
REQUIRED_SECTIONS = ("vertex", "edge", "face", "polyhedron", "domain")


@dataclass(frozen=True, eq=False)
class TessellationFile:
    """Topology and geometry read from a ``.tess`` file, with dense 0-based indices.

    ``*_ids`` hold the original ids in file order, so ``vertex_ids[i]`` is the
    file id of dense vertex ``i``. Face edge and polyhedron face lists are
    stored as dense indices plus a separate sign array.
    """

    format_version: str
    dim: int
    vertex_ids: np.ndarray
    coords: np.ndarray
    edge_ids: np.ndarray
    edges: np.ndarray
    face_ids: np.ndarray
    face_verts: list
    face_edges: list
    face_edge_signs: list
    poly_ids: np.ndarray
    poly_faces: list
    poly_face_signs: list
    domain_type: str
    bounding_box: np.ndarray
    path: str | None = None

    @property
    def counts(self) -> tuple:
        return (len(self.coords), len(self.edges), len(self.face_verts), len(self.poly_faces))

    def to_complex(self) -> CellComplex:
        """Cell complex with the file's vertex, edge, face and polyhedron order."""
        return build_complex(self.coords, self.face_verts, self.poly_faces, edges=self.edges)


class _Tokens:
    def __init__(self, text: str, path):
        self.path = path
        self.items = [(tok, n) for n, line in enumerate(text.splitlines(), 1) for tok in line.split()]
        self.pos = 0
        self.last_line = self.items[-1][1] if self.items else 1

    def error(self, msg, line=None):
        return FormatError(msg, line=line, path=self.path)

    def peek(self):
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    def line(self):
        return self.items[self.pos][1] if self.pos < len(self.items) else self.last_line

    def next(self, what):
        if self.pos >= len(self.items):
            raise self.error(f"unexpected end of file while reading {what}", self.last_line)
        tok = self.items[self.pos]
        self.pos += 1
        return tok

    def number(self, kind, what):
        tok, n = self.next(what)
        try:
            return kind(tok), n
        except ValueError:
            raise self.error(f"expected {kind.__name__} for {what}, got {tok!r}", n) from None

    def int(self, what):
        return self.number(int, what)[0]

    def float(self, what):
        return self.number(float, what)[0]

    def skip_section(self):
        while self.peek() is not None and not self.peek().startswith("**"):
            self.pos += 1


def _dense(ids, section, tokens, lines):
    index = {}
    for k, (i, n) in enumerate(zip(ids, lines)):
        if i in index:
            raise tokens.error(f"duplicate {section} id {i}", n)
        index[i] = k
    return index


def _lookup(index, i, what, tokens, line):
    try:
        return index[i]
    except KeyError:
        raise tokens.error(f"{what} references missing id {i}", line) from None


def parse_tess(path) -> TessellationFile:
    """Read a Neper ``.tess`` file (format versions 2.x to 4.x).

    Only the sections that describe the tessellation are used. Cell
    attributes (seeds, orientations, crystal symmetry) are skipped with a
    logged notice.

    Raises:
        FormatError: unreadable syntax, a missing section, inconsistent counts
            or a dangling id. The message carries the file and line number.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise FormatError(f"not a text file: {exc}", path=path) from None
    return parse_tess_text(text, path=str(path))


def parse_tess_text(text: str, path=None) -> TessellationFile:
    """Parse ``.tess`` content held in memory. See :func:`parse_tess`."""
    t = _Tokens(text, path)
    head = t.peek()
    if head != "***tess":
        raise t.error(f"expected '***tess' header, got {head!r}", t.line())
    t.next("header")
    version, dim, dom_type = None, 3, "unknown"
    seen = {}
    verts = edges = faces = polys = None
    dom_coords = None
    ended = False
    while t.peek() is not None:
        tok, line = t.next("section")
        if tok == "***end":
            ended = True
            break
        if not tok.startswith("**") or tok.startswith("***"):
            raise t.error(f"expected a section keyword, got {tok!r}", line)
        name = tok[2:]
        if name in seen:
            raise t.error(f"section **{name} repeated (first at line {seen[name]})", line)
        seen[name] = line
        if name == "format":
            version, vline = t.next("format version")
            try:
                major = int(version.split(".")[0])
            except ValueError:
                raise t.error(f"unreadable format version {version!r}", vline) from None
            if major not in TESS_VERSIONS:
                raise t.error(f"unsupported .tess format version {version}", vline)
        elif name == "general":
            dim = t.int("dimension")
            if dim != 3:
                raise t.error(f"only 3-dimensional tessellations are supported, got {dim}", line)
            if t.peek() is not None and not t.peek().startswith("*"):
                t.next("tessellation type")
        elif name == "cell":
            start = t.pos
            t.skip_section()
            attrs = [tok for tok, _ in t.items[start:t.pos] if tok.startswith("*")]
            if attrs:
                log.info("ignoring cell attributes %s in %s", " ".join(attrs), path)
        elif name == "vertex":
            verts = _read_records(t, "vertex", lambda: (t.int("vertex id"), [t.float("x"), t.float("y"), t.float("z")], t.next("vertex state")))
        elif name == "edge":
            edges = _read_records(t, "edge", lambda: (t.int("edge id"), [t.int("edge vertex"), t.int("edge vertex")], t.next("edge state")))
        elif name == "face":
            faces = _read_records(t, "face", lambda: _face_record(t))
        elif name == "polyhedron":
            polys = _read_records(t, "polyhedron", lambda: _poly_record(t))
        elif name == "domain":
            dom_type, dom_coords = _domain(t)
        else:
            log.info("ignoring section **%s in %s", name, path)
            t.skip_section()
    missing = [s for s in REQUIRED_SECTIONS if s not in seen]
    if missing:
        raise t.error(f"missing section **{missing[0]}", t.last_line)
    if not ended:
        raise t.error("missing '***end' (truncated file?)", t.last_line)
    if version is None:
        log.info("no **format section in %s, assuming a current layout", path)
        version = "unknown"
    return _assemble_tess(t, version, dim, dom_type, dom_coords, verts, edges, faces, polys)


def _read_records(t, section, read_one):
    count_line = t.line()
    n = t.int(f"**{section} count")
    if n < 0:
        raise t.error(f"negative **{section} count", count_line)
    out = []
    for k in range(n):
        nxt = t.peek()
        if nxt is None or nxt.startswith("*"):
            raise t.error(f"**{section} declares {n} records but only {k} were found", t.line())
        line = t.line()
        out.append((line,) + tuple(read_one()))
    return out


def _face_record(t):
    fid = t.int("face id")
    nv_line = t.line()
    nv = t.int("face vertex count")
    if nv < 3:
        raise t.error(f"face {fid} has {nv} vertices", nv_line)
    vs = [t.int("face vertex") for _ in range(nv)]
    ne_line = t.line()
    ne = t.int("face edge count")
    if ne != nv:
        raise t.error(f"face {fid} lists {nv} vertices but {ne} edges", ne_line)
    es = [t.int("face edge") for _ in range(ne)]
    for _ in range(4):
        t.float("face equation")
    t.next("face state")
    t.next("face point")
    for _ in range(3):
        t.float("face point coordinate")
    return fid, vs, es


def _poly_record(t):
    pid = t.int("polyhedron id")
    nf_line = t.line()
    nf = t.int("polyhedron face count")
    if nf < 2:
        raise t.error(f"polyhedron {pid} has {nf} faces", nf_line)
    return pid, [t.int("polyhedron face") for _ in range(nf)]


def _domain(t):
    dom_type, coords = "unknown", None
    while t.peek() is not None and t.peek().startswith("*") and not t.peek().startswith("**"):
        sub, _ = t.next("domain subsection")
        if sub == "*general":
            dom_type = t.next("domain type")[0]
        elif sub == "*vertex":
            recs = _read_records(t, "domain vertex", lambda: (t.int("id"), [t.float("x"), t.float("y"), t.float("z")], t.next("label")))
            coords = np.array([r[2] for r in recs], dtype=float).reshape(-1, 3)
            while t.peek() is not None and not t.peek().startswith("*"):
                t.pos += 1
        else:
            # domain edges and faces are implied by the tessellation itself
            while t.peek() is not None and not t.peek().startswith("*"):
                t.pos += 1
    return dom_type, coords


def _assemble_tess(t, version, dim, dom_type, dom_coords, verts, edges, faces, polys):
    v_ids = [r[1] for r in verts]
    v_index = _dense(v_ids, "vertex", t, [r[0] for r in verts])
    coords = np.array([r[2] for r in verts], dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(coords)):
        raise t.error("non-finite vertex coordinate")

    e_index = _dense([r[1] for r in edges], "edge", t, [r[0] for r in edges])
    edge_arr = np.zeros((len(edges), 2), dtype=np.int64)
    for k, (line, eid, (a, b), _) in enumerate(edges):
        edge_arr[k] = (_lookup(v_index, a, f"edge {eid}", t, line), _lookup(v_index, b, f"edge {eid}", t, line))
        if edge_arr[k, 0] == edge_arr[k, 1]:
            raise t.error(f"edge {eid} is a loop", line)

    f_index = _dense([r[1] for r in faces], "face", t, [r[0] for r in faces])
    face_verts, face_edges, face_signs = [], [], []
    for line, fid, vs, es in faces:
        dv = np.array([_lookup(v_index, v, f"face {fid}", t, line) for v in vs], dtype=np.int64)
        de = np.array([_lookup(e_index, abs(e), f"face {fid}", t, line) for e in es], dtype=np.int64)
        # the cycle must be closed by exactly the listed edges
        cyc = {tuple(sorted(p)) for p in zip(dv.tolist(), np.roll(dv, -1).tolist())}
        listed = {tuple(sorted(p)) for p in edge_arr[de].tolist()}
        if cyc != listed or len(cyc) != len(dv):
            raise t.error(f"face {fid}: vertex cycle is not closed by its edge list", line)
        face_verts.append(dv)
        face_edges.append(de)
        face_signs.append(np.sign(es).astype(np.int8))

    _dense([r[1] for r in polys], "polyhedron", t, [r[0] for r in polys])
    poly_faces, poly_signs = [], []
    for line, pid, fs in polys:
        if any(f == 0 for f in fs):
            raise t.error(f"polyhedron {pid} references face 0", line)
        poly_faces.append(np.array([_lookup(f_index, abs(f), f"polyhedron {pid}", t, line) for f in fs], dtype=np.int64))
        poly_signs.append(np.sign(fs).astype(np.int8))

    src = dom_coords if dom_coords is not None and len(dom_coords) else coords
    bbox = np.stack([src.min(axis=0), src.max(axis=0)]) if len(src) else np.zeros((2, 3))
    return TessellationFile(
        format_version=version,
        dim=dim,
        vertex_ids=np.array(v_ids, dtype=np.int64),
        coords=coords,
        edge_ids=np.array([r[1] for r in edges], dtype=np.int64),
        edges=edge_arr,
        face_ids=np.array([r[1] for r in faces], dtype=np.int64),
        face_verts=face_verts,
        face_edges=face_edges,
        face_edge_signs=face_signs,
        poly_ids=np.array([r[1] for r in polys], dtype=np.int64),
        poly_faces=poly_faces,
        poly_face_signs=poly_signs,
        domain_type=dom_type,
        bounding_box=bbox,
        path=None if t.path is None else str(t.path),
    )


def load_complex(path) -> CellComplex:
    """Parse a ``.tess`` file and build its cell complex."""
    return parse_tess(path).to_complex()


# --------------------------------------------------------------------------
# exports

RESULT_COLUMNS = ("realisation", "direction", "seed", "achieved_porosity", "Q_m3_per_s", "K_cond", "k_m2", "residual", "wall_s")


def _fmt(x) -> str:
    """Shortest decimal string that reads back to the same value."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_matrix_market(A, path, comment: str = "") -> Path:
    """Write a sparse matrix in Matrix Market coordinate format (general, real).

    Entries are written in row-major order with shortest round-trip decimals,
    so the byte stream depends only on the matrix.
    """
    path = Path(path)
    C = sp.coo_matrix(sp.csr_matrix(A, dtype=float), copy=True)
    C.sum_duplicates()
    order = np.lexsort((C.col, C.row))
    rows, cols, vals = C.row[order], C.col[order], C.data[order]
    with open(path, "w", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
        fh.write(f"{C.shape[0]} {C.shape[1]} {len(vals)}\n")
        fh.writelines(f"{r + 1} {c + 1} {_fmt(v)}\n" for r, c, v in zip(rows.tolist(), cols.tolist(), vals))
    return path


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a Matrix Market file into CSR."""
    try:
        A = scipy.io.mmread(str(path))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"not a Matrix Market file: {exc}", path=path) from None
    return sp.csr_matrix(A)


def write_field_csv(path, fields: dict, coords=None, ids=None) -> Path:
    """Write per-cell values as CSV with columns ``id[, x, y, z], <field>...``."""
    path = Path(path)
    cols = {k: np.asarray(v) for k, v in fields.items()}
    n = len(next(iter(cols.values()))) if cols else (0 if coords is None else len(coords))
    if any(len(v) != n for v in cols.values()):
        raise ValidationError("fields must have equal length")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    header = ["id"]
    data = [ids]
    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (n, 3):
            raise ValidationError("coords must be (n, 3) matching the fields")
        header += ["x", "y", "z"]
        data += [coords[:, 0], coords[:, 1], coords[:, 2]]
    header += list(cols)
    data += list(cols.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(col[i]) for col in data])
    return path


def read_field_csv(path) -> dict:
    """Read a CSV written by :func:`write_field_csv` into a dict of arrays."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise FormatError("empty CSV file", path=path) from None
        rows = list(r)
    out = {}
    for j, name in enumerate(header):
        try:
            col = [row[j] for row in rows]
        except IndexError:
            bad = next(i for i, row in enumerate(rows) if len(row) <= j)
            raise FormatError(f"row has {len(rows[bad])} columns, header has {len(header)}", line=bad + 2, path=path) from None
        kind = int if name == "id" else float
        try:
            out[name] = np.array([kind(v) for v in col])
        except ValueError as exc:
            raise FormatError(f"column {name!r}: {exc}", path=path) from None
    return out


def write_vtk_points(path, coords, fields: dict | None = None, title: str = "formanflow") -> Path:
    """Legacy ASCII VTK polydata of points with scalar point data."""
    path = Path(path)
    coords = np.asarray(coords, dtype=float).reshape(-1, 3)
    n = len(coords)
    fields = {} if fields is None else fields
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET POLYDATA\nPOINTS {n} double\n")
        fh.writelines(" ".join(_fmt(c) for c in p) + "\n" for p in coords)
        fh.write(f"VERTICES {n} {2 * n}\n")
        fh.writelines(f"1 {i}\n" for i in range(n))
        if fields:
            fh.write(f"POINT_DATA {n}\n")
        for name, vals in fields.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (n,):
                raise ValidationError(f"field {name!r} needs {n} values")
            fh.write(f"SCALARS {name.replace(' ', '_')} double 1\nLOOKUP_TABLE default\n")
            fh.writelines(_fmt(v) + "\n" for v in vals)
    return path


def write_results_csv(path, rows, columns=RESULT_COLUMNS) -> Path:
    """Results table, one row per (realisation, direction); extra keys are dropped.

    ``rows`` are mappings or objects with the column names as attributes.
    Missing values are written as empty fields.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            get = row.get if isinstance(row, dict) else (lambda k, _r=row: getattr(_r, k, None))
            w.writerow(["" if get(c) is None else _fmt(get(c)) for c in columns])
    return path


def read_results_csv(path) -> list:
    """Rows of a results CSV as dicts; numeric fields parsed, blanks become ``None``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rec = {}
        for k, v in row.items():
            if v == "" or v is None:
                rec[k] = None
            elif k in ("realisation", "seed"):
                rec[k] = int(v)
            elif k in ("direction", "error"):
                rec[k] = v
            else:
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
        out.append(rec)
    return out


def write_flux_report(path, faces, fluxes, M: CellComplex | None = None) -> Path:
    """Per boundary face outflow (m^3/s), optionally with face centroid and area."""
    faces = np.asarray(faces, dtype=np.int64)
    fields = {"outflow_m3_per_s": np.asarray(fluxes, dtype=float)}
    coords = None
    if M is not None:
        coords = M.centroids[2][faces]
        fields["area_m2"] = M.measures[2][faces]
    return write_field_csv(path, fields, coords=coords, ids=faces)


def export(entity, path, format: str | None = None, **kw) -> Path:
    """Write ``entity`` using a format chosen from its type or ``format``.

    Sparse matrices go to Matrix Market (``"mtx"``). A ``Cochain`` or a dict of
    arrays goes to CSV (``"csv"``) or legacy VTK points (``"vtk"``, needs
    ``coords``). A list of result rows goes to the results CSV (``"results"``).
    """
    from .complex_core import Cochain

    if format is None:
        if sp.issparse(entity) or isinstance(entity, np.ndarray) and entity.ndim == 2:
            format = "mtx"
        elif isinstance(entity, (list, tuple)):
            format = "results"
        else:
            format = "vtk" if str(path).endswith(".vtk") else "csv"
    if isinstance(entity, Cochain):
        entity = {kw.pop("name", "value"): entity.values}
    if format == "mtx":
        return write_matrix_market(entity, path, **kw)
    if format == "csv":
        return write_field_csv(path, entity, **kw)
    if format == "vtk":
        return write_vtk_points(path, kw.pop("coords"), entity, **kw)
    if format == "results":
        return write_results_csv(path, entity, **kw)
    raise ValidationError(f"unknown export format {format!r}")
