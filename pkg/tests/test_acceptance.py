"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line with the measured
quantities, then asserts at the stated tolerance.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from formanflow import cli
from formanflow.calculus import (
    CUP_MODES,
    Operators,
    adjoint_coboundary,
    cup_product,
    fundamental_class,
    hodge_star,
    inner_product,
)
from formanflow.complex_core import build_complex
from formanflow.fabric import cylinder_conductivity, plate_conductivity
from formanflow.flow import (
    FlowProblem,
    assemble_steady,
    measure_permeability,
    opposite_faces,
    run_transient,
    solve_steady,
    step_transient,
)
from formanflow.forman import build_forman
from formanflow.io_formats import structured_grid
from formanflow.voronoi import random_voronoi

import oracle


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# 1 -------------------------------------------------------------------------


def identity_residuals(M, rng):
    """Largest nilpotency, adjointness and Hodge residuals on one complex."""
    K = build_forman(M)
    ip = inner_product(K)
    nil = 0.0
    for C in (M, K):
        for p in (1, 2):
            for X in (C.boundary_matrix(p) @ C.boundary_matrix(p + 1), C.coboundary_matrix(p) @ C.coboundary_matrix(p - 1)):
                nil = max(nil, np.abs(X.data).max(initial=0.0))
    adj = hod = 0.0
    for p in (1, 2, 3):
        s = rng.standard_normal(K.counts[p])
        t = rng.standard_normal(K.counts[p - 1])
        lhs = ip(p, s, K.coboundary_matrix(p - 1) @ t)
        rhs = ip(p - 1, adjoint_coboundary(K, p, ip) @ s, t)
        adj = max(adj, abs(lhs - rhs) / max(1.0, abs(lhs)))
    for mode in CUP_MODES:
        for p in range(4):
            star = hodge_star(K, p, ip, mode)
            t = rng.standard_normal(K.counts[3 - p])
            s = rng.standard_normal(K.counts[p])
            lhs = fundamental_class(K, cup_product(K, t, s, 3 - p, p, mode))
            rhs = ip(3 - p, t, star @ s)
            hod = max(hod, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return nil, adj, hod


def test_criterion_1_operator_identities(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    meshes = [build_complex(*oracle.tetrahedron()), build_complex(*oracle.hexahedron())]
    meshes += [structured_grid(n, n, n) for n in (1, 2, 4, 8)]
    meshes.append(structured_grid(3, 5, 2, 0.3, 5.0, 1.0))
    nil = adj = hod = 0.0
    for M in meshes:
        a, b, c = identity_residuals(M, rng)
        nil, adj, hod = max(nil, a), max(adj, b), max(hod, c)
    wall = time.perf_counter() - t0
    ok = nil == 0 and adj < 1e-12 and hod < 1e-12 and wall < 10.0
    report(1, ok, f"dd=0 max|entry|={nil:g} adjoint={adj:.2e} hodge={hod:.2e} runtime={wall:.2f}s")
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_2_forman_census(report):
    results = []
    for make, expected in ((oracle.tetrahedron, (15, 28, 18, 4)), (oracle.hexahedron, (27, 54, 36, 8))):
        M = build_complex(*make())
        K = build_forman(M)
        brute = oracle.forman_census(oracle.RawComplex(*make()))
        vol = np.bincount(K.upper[3] - K.offsets[3], K.measures[3], minlength=M.counts[3])
        part = float(np.max(np.abs(vol - M.measures[3]) / M.measures[3]))
        results.append((tuple(K.counts), brute, expected, part))
    ok = all(k == b == e and p < 1e-9 for k, b, e, p in results)
    detail = "; ".join(f"K={k} oracle={b} partition={p:.1e}" for k, b, _, p in results)
    report(2, ok, detail)
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_3_oracle_equivalence(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for M in (structured_grid(2, 1, 1, 2.0, 1.0, 1.0), structured_grid(2, 2, 2)):
        K = build_forman(M)
        ops = Operators.build(K)
        net = oracle.DenseNetwork(oracle.RawComplex.from_complex(M))
        for axis in range(3):
            pi = rng.uniform(0.1, 10.0, K.counts[1])
            lo, hi = opposite_faces(M, axis)
            prob = FlowProblem.two_face(ops, pi, lo, hi, 1.0, 0.0)
            system = assemble_steady(prob)
            sol = solve_steady(prob, system)
            A, b, u, x, q_out, q_in = net.two_face_solve(pi[net.permutation(K, 1)], lo, hi, 1.0, 0.0)
            perm0 = net.permutation(K, 0)
            pos = np.searchsorted(system.unknowns, perm0[u])
            worst = max(
                worst,
                np.abs(system.A.toarray()[np.ix_(pos, pos)] - A).max() / np.abs(A).max(),
                np.abs(system.b[pos] - b).max() / np.abs(b).max(),
                np.abs(sol.pressure[perm0] - x).max(),
                rel(sol.face_flux(hi), q_out),
                rel(sol.face_flux(lo), q_in),
            )
    # conservation on every model solved here, including fabric models
    imbalance = 0.0
    cfg = cli.RunConfig(voronoi_cells=60, timing=False).validate()
    ctx = cli.prepare(cfg)
    for seed in range(3):
        a = cli.realise_fabric(cfg, ctx, seed)
        for d in "xyz":
            imbalance = max(imbalance, cli.solve_direction(cfg, ctx, a.conductivity, d).row.imbalance)
    ok = worst < 1e-10 and imbalance < 1e-8
    report(3, ok, f"max oracle deviation={worst:.2e} max flux imbalance={imbalance:.2e}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_4_conductivity_arithmetic(report):
    plate = plate_conductivity(1e-5, 1e-3)
    tube = cylinder_conductivity(2e-6, 1e-3)
    e1, e2 = rel(plate, 1e-10 / 12e-3), rel(tube, 5.0e-10)
    ok = e1 < 1e-12 and e2 < 1e-12
    report(4, ok, f"plate={plate:.6e} (rel {e1:.1e}) cylinder={tube:.6e} (rel {e2:.1e})")
    assert ok


# 5 -------------------------------------------------------------------------


def test_criterion_5_linearity(report):
    cfg = cli.RunConfig(voronoi_cells=60, timing=False).validate()
    ctx = cli.prepare(cfg)
    a = cli.realise_fabric(cfg, ctx, 0)
    ek = eq = 0.0
    for d in "xyz":
        base = cli.solve_direction(cfg, ctx, a.conductivity, d).row
        doubled_pi = cli.solve_direction(cfg, ctx, 2.0 * a.conductivity, d).row
        cfg2 = cli.RunConfig(voronoi_cells=60, timing=False, pressure_drop=2.0 * cfg.pressure_drop).validate()
        doubled_dp = cli.solve_direction(cfg2, ctx, a.conductivity, d).row
        ek = max(ek, rel(doubled_pi.k_m2, 2.0 * base.k_m2))
        eq = max(eq, rel(doubled_dp.Q_m3_per_s, 2.0 * base.Q_m3_per_s), rel(doubled_dp.k_m2, base.k_m2))
    ok = ek < 1e-12 and eq < 1e-12
    report(5, ok, f"k(2 Pi)/2k-1={ek:.1e} Q(2 dP)/2Q-1={eq:.1e}")
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_6_transient(report):
    rng = np.random.default_rng(6)
    fixed = limit = 0.0
    diverged = []
    meshes = [build_complex(*oracle.hexahedron()), structured_grid(2, 1, 1, 2.0, 1.0, 1.0),
              structured_grid(2, 2, 2), random_voronoi(30, seed=6)]
    for M in meshes:
        K = build_forman(M)
        ops = Operators.build(K)
        lo, hi = opposite_faces(M, 0)
        prob = FlowProblem.two_face(
            ops, rng.uniform(0.5, 2.0, K.counts[1]), lo, hi, 1.0, 0.0,
            compressibility=rng.uniform(0.5, 2.0, K.counts[0]),
        )
        p_star = solve_steady(prob).pressure
        scale = np.abs(p_star).max()
        fixed = max(fixed, np.abs(step_transient(prob, p_star, 0.7) - p_star).max() / scale)
        p_inf = step_transient(prob, np.zeros(K.counts[0]), 1e14)
        limit = max(limit, np.abs(p_inf - p_star).max() / scale)
        w0 = ops.ip.weights[0] * prob.compressibility
        # once converged the error sits at roundoff, which may wobble
        floor = 1e-13 * np.sqrt(np.sum(w0 * p_star**2))
        for dt in 10.0 ** np.arange(-6, 7):
            p = rng.uniform(-1.0, 2.0, K.counts[0])
            p[prob.sets.gamma_d[0]] = prob.dirichlet
            err = np.sqrt(np.sum(w0 * (p - p_star) ** 2))
            for _ in range(3):
                p = step_transient(prob, p, dt)
                new = np.sqrt(np.sum(w0 * (p - p_star) ** 2))
                if not np.all(np.isfinite(p)) or new > err * (1 + 1e-12) + floor:
                    diverged.append((M.counts, dt))
                    break
                err = new
        p_run, _, steps = run_transient(prob, np.zeros(K.counts[0]), dt=1.0, tol=1e-12)
        limit = max(limit, np.abs(p_run - p_star).max() / scale)
    ok = fixed < 1e-8 and limit < 1e-8 and not diverged
    report(6, ok, f"fixed point={fixed:.1e} steady limit={limit:.1e} diverging (mesh, dt)={diverged}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_7_monte_carlo(report):
    cfg = cli.RunConfig(voronoi_cells=200, realisations=30, directions="xyz", timing=False).validate()
    t0 = time.perf_counter()
    ctx = cli.prepare(cfg)
    a = cli.run_montecarlo(cfg, ctx)
    wall = time.perf_counter() - t0
    b = cli.run_montecarlo(cfg, ctx)
    k = np.array([r.k_m2 if r.ok else np.nan for r in a.rows])
    rows_ok = len(a.rows) == 90 and not a.failures
    positive = bool(np.all(k > 0))
    same = [r.k_m2 for r in a.rows] == [r.k_m2 for r in b.rows]
    span = float(np.nanmax(k) / np.nanmin(k)) if positive else np.inf
    imbalance = max(r.imbalance for r in a.rows if r.ok)

    # single fracture against its network oracle
    h, mu = 1e-4, 1e-3
    fcfg = cli.RunConfig(mesh_source="grid", grid=(1, 1, 2), size=(1.0, 1.0, 2.0), timing=False).validate()
    M = structured_grid(1, 1, 2, 1.0, 1.0, 2.0)
    fctx = cli.prepare(fcfg, M=M)
    R = oracle.RawComplex.from_complex(M)
    net = oracle.DenseNetwork(R)
    mid = [f for f in range(M.counts[2]) if sum(f in c for c in R.cells) == 2][0]
    pi = oracle.fracture_conductivity(net, mid, h, mu, fcfg.default_conductivity)
    cond = np.empty_like(pi)
    cond[net.permutation(fctx.K, 1)] = pi
    row = cli.run_single(fcfg, 0, "x", ctx=fctx, conductivity=cond)
    lo, hi = oracle.axis_faces(R, 0)
    *_, q_out, _ = net.two_face_solve(pi, lo, hi, fcfg.pressure_drop, 0.0)
    k_oracle = abs(q_out) * mu * 1.0 / (2.0 * fcfg.pressure_drop)
    frac = rel(row.k_m2, k_oracle)

    s = a.summary["all"]
    ok = rows_ok and positive and same and span < 100.0 and frac < 1e-8 and imbalance < 1e-8
    report(
        7, ok,
        f"rows={len(a.rows)} failures={len(a.failures)} positive={positive} deterministic={same} "
        f"span={span:.1f}x mean k={s['mean']:.3e} m^2 std={s['std']:.3e} imbalance={imbalance:.1e} "
        f"fracture k={row.k_m2:.6e} oracle={k_oracle:.6e} rel={frac:.1e} sweep={wall:.1f}s",
    )
    assert ok


# 8 -------------------------------------------------------------------------

_MEASURE = """
import json, resource, subprocess, sys, time
t0 = time.perf_counter()
proc = subprocess.run(sys.argv[1:], capture_output=True, text=True)
wall = time.perf_counter() - t0
rss_kb = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss
print(json.dumps({"rc": proc.returncode, "wall": wall, "rss_mb": rss_kb / 1024, "err": proc.stderr[-2000:]}))
"""


def test_criterion_8_performance(report, tmp_path):
    cmd = [sys.executable, "-m", "formanflow.cli", "perm", "--voronoi", "5000", "--directions", "x",
           "--seed", "0", "-o", str(tmp_path)]
    out = subprocess.run([sys.executable, "-c", _MEASURE, *cmd], capture_output=True, text=True, check=True)
    m = json.loads(out.stdout)
    k = None
    if m["rc"] == 0:
        k = float((tmp_path / "perm.csv").read_text().splitlines()[1].split(",")[6])
    ok = m["rc"] == 0 and m["wall"] < 120.0 and m["rss_mb"] < 2048.0
    report(8, ok, f"5000 polyhedra, 1 realisation, x: wall={m['wall']:.1f}s peak RSS={m['rss_mb']:.0f} MB k={k}")
    assert ok, m["err"]
