import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from formanflow.calculus import Operators
from formanflow.complex_core import boundary_subcomplex
from formanflow.errors import NumericError, SingularSystemError, ValidationError
from formanflow.flow import (
    FlowProblem,
    assemble_steady,
    induce_boundary_sets,
    measure_permeability,
    neumann_from_outflow,
    opposite_faces,
    permeability,
    run_transient,
    solve_steady,
    step_transient,
)
from formanflow.forman import build_forman
from formanflow.io_formats import structured_grid
from formanflow.voronoi import random_voronoi

import oracle


def setup(M, pi=None, axis=0, p_in=1.0, p_out=0.0, **kw):
    K = build_forman(M)
    ops = Operators.build(K)
    pi = np.ones(K.counts[1]) if pi is None else pi
    lo, hi = opposite_faces(M, axis)
    return ops, lo, hi, FlowProblem.two_face(ops, pi, lo, hi, p_in, p_out, **kw)


# boundary sets ------------------------------------------------------------


def test_one_dirichlet_face_closure(hexa):
    K = build_forman(hexa)
    bnd = boundary_subcomplex(hexa)
    sets = induce_boundary_sets(K, bnd.faces[:1], bnd.faces[1:])
    assert len(sets.gamma_d[0]) == 9
    assert len(sets.gamma_d[2]) == 4


def test_all_neumann_partition(hexa):
    K = build_forman(hexa)
    bnd = boundary_subcomplex(hexa)
    sets = induce_boundary_sets(K, [], bnd.faces)
    assert len(sets.gamma_d[0]) == 0


def test_shared_nodes_go_to_dirichlet(hexa):
    K = build_forman(hexa)
    bnd = boundary_subcomplex(hexa)
    sets = induce_boundary_sets(K, bnd.faces[:1], bnd.faces[1:])
    assert not set(sets.neumann_nodes) & set(sets.gamma_d[0])
    # rim vertices of the Dirichlet face belong to Neumann faces too
    assert set(sets.gamma_d[0]) & set(sets.gamma_n[0])


def test_overlapping_partition_rejected(hexa):
    K = build_forman(hexa)
    bnd = boundary_subcomplex(hexa)
    with pytest.raises(ValidationError):
        induce_boundary_sets(K, bnd.faces[:2], bnd.faces[1:])


def test_opposite_faces(grid222):
    for ax in range(3):
        lo, hi = opposite_faces(grid222, ax)
        assert len(lo) == len(hi) == 4
        np.testing.assert_allclose(grid222.centroids[2][lo, ax], 0.0)
        np.testing.assert_allclose(grid222.centroids[2][hi, ax], 1.0)


# steady solves -------------------------------------------------------------


def test_equal_pressures_give_constant_field(grid2):
    ops, lo, hi, prob = setup(grid2, p_in=3.0, p_out=3.0)
    sol = solve_steady(prob)
    np.testing.assert_allclose(sol.pressure, 3.0, rtol=1e-14)
    np.testing.assert_allclose(sol.upsilon, 0.0, atol=1e-14)
    assert sol.face_flux(hi) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("dims", [(2, 1, 1), (3, 2, 2)])
def test_linear_field_is_exact(dims):
    M = structured_grid(*dims, float(dims[0]), 1.0, 1.0)
    ops, lo, hi, prob = setup(M, p_in=2.0, p_out=0.0)
    sol = solve_steady(prob)
    x = ops.K.coords[:, 0]
    np.testing.assert_allclose(sol.pressure, 2.0 - 2.0 * x / dims[0], atol=1e-13)
    # Darcy: unit conductivity, gradient 2/L over a unit cross-section
    assert sol.face_flux(hi) == pytest.approx(2.0 / dims[0], rel=1e-12)


@pytest.mark.parametrize("fixture", ["grid2", "grid222"])
def test_matches_dense_oracle(fixture, request, rng):
    M = request.getfixturevalue(fixture)
    K = build_forman(M)
    ops = Operators.build(K)
    net = oracle.DenseNetwork(oracle.RawComplex.from_complex(M))
    pi = rng.uniform(0.2, 5.0, K.counts[1])
    lo, hi = opposite_faces(M, 0)
    prob = FlowProblem.two_face(ops, pi, lo, hi, 1.0, 0.0)
    system = assemble_steady(prob)
    sol = solve_steady(prob, system)
    A, b, u, x, q_out, q_in = net.two_face_solve(pi[net.permutation(K, 1)], lo, hi, 1.0, 0.0)
    perm0 = net.permutation(K, 0)
    pos = np.searchsorted(system.unknowns, perm0[u])
    assert np.array_equal(system.unknowns[pos], perm0[u])
    assert np.abs(system.A.toarray()[np.ix_(pos, pos)] - A).max() <= 1e-10 * np.abs(A).max()
    assert np.abs(system.b[pos] - b).max() <= 1e-10 * np.abs(b).max()
    assert np.abs(sol.pressure[perm0] - x).max() <= 1e-10
    assert sol.face_flux(hi) == pytest.approx(q_out, rel=1e-10)
    assert sol.face_flux(lo) == pytest.approx(q_in, rel=1e-10)


def test_series_bilayer(grid2):
    a, b = 1.0, 3.0
    K = build_forman(grid2)
    ops = Operators.build(K)
    net = oracle.DenseNetwork(oracle.RawComplex.from_complex(grid2))
    # K edges inside the first hexahedron (x < 1) get a, the rest b
    mid = 0.5 * (K.coords[K.boundary_matrix(1).tocsc().indices.reshape(-1, 2)].sum(axis=1))
    pi = np.where(mid[:, 0] < 1.0, a, b)
    lo, hi = opposite_faces(grid2, 0)
    sol = solve_steady(FlowProblem.two_face(ops, pi, lo, hi, 1.0, 0.0))
    *_, q_out, _ = net.two_face_solve(pi[net.permutation(K, 1)], lo, hi, 1.0, 0.0)
    assert sol.face_flux(hi) == pytest.approx(q_out, rel=1e-10)
    # two unit blocks in series
    assert q_out == pytest.approx(1.0 / (1.0 / a + 1.0 / b), rel=1e-12)


def test_psi_and_dual_agree_on_grids(grid222, rng):
    ops, lo, hi, prob = setup(grid222, rng.uniform(0.5, 2.0, build_forman(grid222).counts[1]))
    sol = solve_steady(prob)
    assert sol.face_flux(hi, "psi") == pytest.approx(sol.face_flux(hi, "dual"), rel=1e-10)
    assert sol.face_flux(lo, "psi") == pytest.approx(sol.face_flux(lo, "dual"), rel=1e-10)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_conservation_on_voronoi(seed, rng):
    M = random_voronoi(30, seed=seed)
    K = build_forman(M)
    ops, lo, hi, prob = setup(M, rng.lognormal(0.0, 2.0, K.counts[1]))
    sol = solve_steady(prob)
    rep = measure_permeability(sol, lo, hi, 1.0, 1.0, 1.0, 0.0, 1e-3)
    assert rep.imbalance <= 1e-8
    # fluxes through insulated faces vanish
    bnd = boundary_subcomplex(M)
    side = np.setdiff1d(bnd.faces, np.r_[lo, hi])
    assert np.abs(sol.face_fluxes(side)).max() <= 1e-12 * abs(rep.outlet)


def test_flux_rejects_interior_face(grid2):
    ops, lo, hi, prob = setup(grid2)
    sol = solve_steady(prob)
    interior = np.flatnonzero(grid2.face_coface_count == 2)
    with pytest.raises(ValidationError):
        sol.face_flux(interior)
    with pytest.raises(ValidationError):
        sol.face_flux(hi, method="both")


def test_nonzero_neumann_data_linear_field():
    M = structured_grid(2, 1, 1, 2.0, 1.0, 1.0)
    K = build_forman(M)
    ops = Operators.build(K)
    lo, hi = opposite_faces(M, 0)
    ylo, yhi = opposite_faces(M, 1)
    bnd = boundary_subcomplex(M)
    dfaces = np.concatenate([lo, hi])
    sets = induce_boundary_sets(K, dfaces)
    # p = 1 - x/2 + y: unit outflow through y = 0, unit inflow through y = 1
    g = lambda X: 1.0 - 0.5 * X[:, 0] + X[:, 1]
    faces_of_kite = K.upper[2][sets.gamma_n[2]] - K.offsets[2]
    normal_y = np.where(np.isin(faces_of_kite, ylo), -1.0, np.where(np.isin(faces_of_kite, yhi), 1.0, 0.0))
    outflow = -normal_y * K.measures[2][sets.gamma_n[2]]
    f = neumann_from_outflow(K, sets, outflow)
    prob = FlowProblem(ops, np.ones(K.counts[1]), sets, g(K.coords[sets.gamma_d[0]]), neumann_flux=f)
    sol = solve_steady(prob)
    np.testing.assert_allclose(sol.pressure, g(K.coords), atol=1e-12)
    assert sol.face_flux(yhi) == pytest.approx(-2.0, rel=1e-12)


def test_literal_neumann_rows_are_singular(grid2):
    ops, lo, hi, prob = setup(grid2, neumann="hodge")
    with pytest.raises(SingularSystemError):
        solve_steady(prob)


def test_unanchored_block(grid2):
    ops, lo, hi, _ = setup(grid2)
    K = ops.K
    sets = induce_boundary_sets(K, [], boundary_subcomplex(grid2).faces)
    with pytest.raises(SingularSystemError):
        assemble_steady(FlowProblem(ops, np.ones(K.counts[1]), sets, np.zeros(0)))
    # a reference pressure anchors it
    sol = solve_steady(FlowProblem(ops, np.ones(K.counts[1]), sets, np.zeros(0), reference=0))
    np.testing.assert_allclose(sol.pressure, 0.0, atol=1e-14)


def test_isolated_zero_conductivity_block(grid2):
    K = build_forman(grid2)
    pi = np.ones(K.counts[1])
    # cut every edge at one interior vertex
    v = int(np.flatnonzero(~np.concatenate(K.boundary_flags[:1]))[0])
    pi[K.boundary_matrix(1)[v].indices] = 0.0
    ops, lo, hi, prob = setup(grid2, pi)
    with pytest.raises(SingularSystemError):
        solve_steady(prob)


def test_problem_validation(grid2):
    ops, lo, hi, prob = setup(grid2)
    with pytest.raises(ValidationError):
        FlowProblem(ops, np.ones(3), prob.sets, prob.dirichlet)
    with pytest.raises(ValidationError):
        FlowProblem(ops, prob.conductivity, prob.sets, prob.dirichlet[:-1])
    with pytest.raises(ValidationError):
        FlowProblem(ops, prob.conductivity, prob.sets, prob.dirichlet, neumann="weak")
    with pytest.raises(ValidationError):
        FlowProblem.two_face(ops, prob.conductivity, lo, lo, 1.0, 0.0)


def test_amg_matches_direct(rng):
    M = structured_grid(5, 4, 4)
    K = build_forman(M)
    ops, lo, hi, prob = setup(M, rng.lognormal(0, 1, K.counts[1]))
    a = solve_steady(prob, method="direct")
    b = solve_steady(prob, method="amg")
    np.testing.assert_allclose(a.pressure, b.pressure, atol=1e-9)
    assert b.residual <= 1e-10


def test_residual_tolerance_enforced(grid2):
    ops, lo, hi, prob = setup(grid2)
    with pytest.raises(NumericError):
        solve_steady(prob, method="amg", rtol=1e-40)


def test_reduced_matrix_w0_symmetric(grid222, rng):
    K = build_forman(grid222)
    ops, lo, hi, prob = setup(grid222, rng.uniform(0.1, 1, K.counts[1]))
    system = assemble_steady(prob)
    S = (sp.diags(ops.ip.weights[0][system.unknowns]) @ system.A).toarray()
    np.testing.assert_allclose(S, S.T, atol=1e-13 * np.abs(S).max())
    assert np.linalg.eigvalsh(S).min() > 0


# linearity ---------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(
    dp=st.floats(1e-3, 1e3),
    shift=st.floats(-1e3, 1e3),
    s=st.floats(1e-3, 1e3),
    seed=st.integers(0, 2**31),
)
def test_linearity_properties(dp, shift, s, seed):
    M = structured_grid(2, 2, 1)
    K = build_forman(M)
    pi = np.random.default_rng(seed).uniform(0.1, 1.0, K.counts[1])
    ops, lo, hi, base = setup(M, pi, p_in=dp, p_out=0.0)
    q = solve_steady(base).face_flux(hi)
    q2 = solve_steady(FlowProblem.two_face(ops, pi, lo, hi, 2 * dp, 0.0)).face_flux(hi)
    assert q2 == pytest.approx(2 * q, rel=1e-12)
    qs = solve_steady(FlowProblem.two_face(ops, s * pi, lo, hi, dp, 0.0)).face_flux(hi)
    assert qs == pytest.approx(s * q, rel=1e-12)
    qc = solve_steady(FlowProblem.two_face(ops, pi, lo, hi, dp + shift, shift)).face_flux(hi)
    assert qc == pytest.approx(q, rel=1e-9)


# permeability --------------------------------------------------------------


def test_permeability_arithmetic():
    r = permeability(1e-9, 1e-3, 1e-6, 0.0, 1.0, 1e-3)
    assert r.conductivity == pytest.approx(1e-6, rel=1e-15)
    assert r.permeability == pytest.approx(1e-9, rel=1e-15)


@pytest.mark.parametrize(
    "args",
    [(1e-9, 1e-3, 0.0, 0.0, 1.0, 1e-3), (1e-9, 1e-3, 1e-6, 1.0, 1.0, 1e-3), (1e-9, 0.0, 1e-6, 0.0, 1.0, 1e-3), (1e-9, 1e-3, 1e-6, 0.0, 1.0, 0.0)],
)
def test_permeability_errors(args):
    with pytest.raises(ValidationError):
        permeability(*args)


# transient ----------------------------------------------------------------


def transient_problem(M, rng):
    K = build_forman(M)
    pi = rng.uniform(0.5, 2.0, K.counts[1])
    comp = rng.uniform(0.5, 2.0, K.counts[0])
    return setup(M, pi, compressibility=comp)


def test_steady_state_is_fixed_point(grid2, rng):
    ops, lo, hi, prob = transient_problem(grid2, rng)
    p = solve_steady(prob).pressure
    np.testing.assert_allclose(step_transient(prob, p, 0.3), p, atol=1e-10)


def test_large_step_limit(grid2, rng):
    ops, lo, hi, prob = transient_problem(grid2, rng)
    p_inf = solve_steady(prob).pressure
    p = step_transient(prob, np.zeros(ops.K.counts[0]), 1e12)
    np.testing.assert_allclose(p, p_inf, atol=1e-8)


@pytest.mark.parametrize("dt", [1e-6, 1e-3, 1.0, 1e3, 1e6])
def test_monotone_in_w0_norm(grid222, dt, rng):
    ops, lo, hi, prob = transient_problem(grid222, rng)
    p_star = solve_steady(prob).pressure
    w0 = ops.ip.weights[0] * prob.compressibility
    p = rng.uniform(-1, 2, ops.K.counts[0])
    p[prob.sets.gamma_d[0]] = prob.dirichlet
    err = np.sqrt(np.sum(w0 * (p - p_star) ** 2))
    for _ in range(5):
        p = step_transient(prob, p, dt)
        new = np.sqrt(np.sum(w0 * (p - p_star) ** 2))
        assert new <= err * (1 + 1e-12)
        err = new


def test_run_transient_converges(grid2, rng):
    ops, lo, hi, prob = transient_problem(grid2, rng)
    p, t, n = run_transient(prob, np.zeros(ops.K.counts[0]), dt=1.0)
    np.testing.assert_allclose(p, solve_steady(prob).pressure, atol=1e-7)
    assert n < 10_000


def test_transient_validation(grid2, rng):
    ops, lo, hi, prob = transient_problem(grid2, rng)
    with pytest.raises(ValidationError):
        step_transient(prob, np.zeros(ops.K.counts[0]), 0.0)
    ops, lo, hi, steady = setup(grid2)
    with pytest.raises(ValidationError):
        step_transient(steady, np.zeros(ops.K.counts[0]), 1.0)
