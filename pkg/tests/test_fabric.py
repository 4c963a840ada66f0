import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formanflow import fabric
from formanflow.errors import CapacityError, FormatError, ValidationError
from formanflow.fabric import (
    EXPANSIVE_VOID,
    VOLUMINOUS_BOUNDARY,
    VOLUMINOUS_VOID,
    FeatureClass,
    FeatureStats,
    Void,
    assign_conductivities,
    build_fabric,
    classify,
    cylinder_conductivity,
    feature_stats,
    load_feature_stats,
    map_expansive,
    map_voluminous,
    plate_conductivity,
    split_voids,
    synthetic_sandstone,
    voluminous_boundary_faces,
)
from formanflow.forman import build_forman
from formanflow.io_formats import structured_grid
from formanflow.voronoi import random_voronoi


@pytest.fixture(scope="module")
def model():
    st_ = synthetic_sandstone()
    L = (120 * st_.mean_volume) ** (1 / 3)
    M = random_voronoi(120, size=(L, L, L), seed=5)
    return M, build_forman(M), st_


# classification ------------------------------------------------------------


@pytest.mark.parametrize(
    "lis,expected",
    [
        ((10, 2, 1), FeatureClass.THIN_LONG),
        ((10, 8, 7), FeatureClass.VOLUMINOUS),
        ((10, 6, 3), FeatureClass.EXPANSIVE),
        ((10, 3.5, 1), FeatureClass.EXPANSIVE),  # I/L = 0.35 is not thin-long
        ((10, 8, 6.4), FeatureClass.EXPANSIVE),  # S/L = 0.64 is not voluminous
    ],
)
def test_classify(lis, expected):
    assert classify(*lis) is expected


@settings(max_examples=200)
@given(st.lists(st.floats(1e-6, 1e6), min_size=3, max_size=3))
def test_classify_is_total(ext):
    L, I, S = sorted(ext, reverse=True)
    assert classify(L, I, S) in set(FeatureClass)


def test_split_voids():
    small = Void(1e-12, 10, 1, 1)  # thin-long shape but smaller than the smallest grain
    big_round = Void(1e-9, 10, 9, 7)
    big_flat = Void(1e-9, 10, 6, 3)
    vol, exp = split_voids([small, big_round, big_flat], smallest_grain_volume=1e-10)
    assert vol == [big_round]
    assert exp == [small, big_flat]
    assert split_voids([], 1e-10) == ([], [])


def test_split_voids_rejects_large_thin_long():
    with pytest.raises(ValidationError, match="thin-long"):
        split_voids([Void(1e-9, 10, 1, 1)], 1e-10)


def test_feature_stats_thresholds():
    grains = [1e-10, 2e-10, 4e-10]
    voids = [(3e-10, 10, 7, 6.6), (1e-11, 10, 6, 3)]
    st_ = feature_stats(grains, voids, 0.2, bins=4)
    assert st_.void_frequency.sum() == pytest.approx(0.25)
    strict = feature_stats(grains, voids, 0.2, bins=4, voluminous=0.7)
    assert strict.void_frequency.sum() == 0.0
    assert len(strict.expansive_volumes) == 2


# conductivity arithmetic ---------------------------------------------------


def test_plate_and_cylinder_values():
    assert plate_conductivity(1e-5, 1e-3) == pytest.approx(8.333333333333334e-9, rel=1e-12)
    assert cylinder_conductivity(2e-6, 1e-3) == pytest.approx(5.0e-10, rel=1e-12)


@settings(max_examples=50)
@given(h=st.floats(1e-9, 1e-2), mu=st.floats(1e-5, 1.0))
def test_conductivity_scaling(h, mu):
    assert plate_conductivity(2 * h, mu) == pytest.approx(4 * plate_conductivity(h, mu), rel=1e-14)
    assert cylinder_conductivity(h, 2 * mu) == pytest.approx(cylinder_conductivity(h, mu) / 2, rel=1e-14)


def test_all_grain_model_gets_default(grid222):
    K = build_forman(grid222)
    pi, comp = assign_conductivities(K, np.zeros(8, int), np.zeros(grid222.counts[2]))
    assert np.all(pi == fabric.DEFAULT_CONDUCTIVITY)
    assert np.all(comp == fabric.C_SOLID)


def test_expansive_face_rules():
    M = structured_grid(1, 1, 2)
    K = build_forman(M)
    mid = int(np.flatnonzero(M.face_coface_count == 2)[0])
    ap = np.zeros(M.counts[2])
    ap[mid] = 1e-4
    pi, comp = assign_conductivities(K, np.zeros(2, int), ap, 1e-3)
    assert np.sum(pi == plate_conductivity(1e-4, 1e-3)) == 4
    assert np.sum(pi == cylinder_conductivity(5e-5, 1e-3)) == 8
    assert np.sum(comp == fabric.C_FLUID) == 9


def test_void_cell_rules(hexa):
    K = build_forman(hexa)
    pi, comp = assign_conductivities(K, np.ones(1, int), np.zeros(6), 1e-3)
    assert np.all(comp == fabric.C_FLUID)
    # (cell, face): disk of the face area; (face, edge): plates half a cell apart
    assert np.sum(np.isclose(pi, cylinder_conductivity(np.sqrt(1 / np.pi), 1e-3), rtol=1e-14)) == 6
    assert np.sum(np.isclose(pi, plate_conductivity(0.5, 1e-3), rtol=1e-14)) == 24
    assert np.all(pi > fabric.DEFAULT_CONDUCTIVITY)


def test_assign_validation(hexa):
    K = build_forman(hexa)
    with pytest.raises(ValidationError):
        assign_conductivities(K, np.zeros(1, int), np.zeros(6), viscosity=0.0)
    with pytest.raises(ValidationError):
        assign_conductivities(K, np.zeros(1, int), -np.ones(6))


# statistics --------------------------------------------------------------


def test_expansive_quantile():
    st_ = FeatureStats([1.0], [1.0], [0.0], [1.0, 2.0, 4.0], [0.2, 0.6, 1.0], 0.1)
    assert st_.expansive_quantile(0.1) == 1.0
    assert st_.expansive_quantile(0.4) == pytest.approx(1.5)
    assert st_.expansive_quantile(0.8) == pytest.approx(3.0)
    assert st_.expansive_quantile(1.0) == 4.0


@pytest.mark.parametrize(
    "kw",
    [
        dict(expansive_cdf=[0.2, 0.6, 0.9]),
        dict(expansive_volumes=[2.0, 1.0, 4.0]),
        dict(target_porosity=1.0),
        dict(void_frequency=[2.0]),
    ],
)
def test_stats_validation(kw):
    base = dict(
        volumes=[1.0], frequency=[1.0], void_frequency=[0.0],
        expansive_volumes=[1.0, 2.0, 4.0], expansive_cdf=[0.2, 0.6, 1.0], target_porosity=0.1,
    )
    base.update(kw)
    with pytest.raises(ValidationError):
        FeatureStats(**base)


def test_load_feature_stats(tmp_path):
    v = tmp_path / "vol.csv"
    e = tmp_path / "exp.csv"
    v.write_text("volume_m3,frequency,void_frequency\n2e-12,0.5,0.1\n1e-12,0.5,0.0\n")
    e.write_text("volume_m3,cumulative_probability\n1e-14,0.5\n1e-13,1.0\n")
    st_ = load_feature_stats(v, e, 0.2)
    np.testing.assert_array_equal(st_.volumes, [1e-12, 2e-12])
    assert st_.voluminous_void_share == pytest.approx((2e-12 * 0.1) / (2e-12 * 0.5 + 1e-12 * 0.5))
    e.write_text("volume,p\n1,1\n")
    with pytest.raises(FormatError):
        load_feature_stats(v, e, 0.2)


def test_synthetic_sandstone():
    st_ = synthetic_sandstone()
    assert st_.target_porosity == 0.21
    assert st_.expansive_cdf[-1] == pytest.approx(1.0)
    assert 0 < st_.voluminous_void_share < 0.21


# mapping -----------------------------------------------------------------


def test_map_voluminous_zero_targets(grid222):
    assert np.all(map_voluminous(grid222, iter(())) == 0)


def test_map_voluminous_exact_match():
    M = structured_grid(3, 1, 1, 3.0, 1.0, 1.0)
    M2 = structured_grid(2, 1, 1, 3.0, 1.0, 1.0)
    role = map_voluminous(M, iter([1.0]))
    assert role.sum() == 1
    role2 = map_voluminous(M2, iter([1.5]))
    assert role2.sum() == 1


def test_map_voluminous_capacity(grid222):
    with pytest.raises(CapacityError):
        map_voluminous(grid222, iter([0.1] * 9))


def test_map_expansive_zero_target(model):
    M, K, st_ = model
    em = map_expansive(M, st_, np.random.default_rng(0), target_porosity=0.0)
    assert em.picks == [] and em.achieved_porosity == 0.0


def test_map_expansive_capacity(grid222):
    st_ = FeatureStats([1.0], [1.0], [0.0], [1e-3], [1.0], 0.5)
    with pytest.raises(CapacityError) as info:
        map_expansive(grid222, st_, np.random.default_rng(0))
    assert info.value.achieved is not None


def test_map_expansive_porosity_and_apertures(model):
    M, K, st_ = model
    em = map_expansive(M, st_, np.random.default_rng(3))
    V = M.measures[3].sum()
    running = np.cumsum([v for v, _ in em.picks]) / V
    assert np.all(np.diff(running) >= 0)
    assert em.achieved_porosity >= st_.target_porosity
    assert em.achieved_porosity - st_.target_porosity <= em.picks[-1][0] / V
    faces = [f for _, f in em.picks]
    assert len(set(faces)) == len(faces)
    assert np.all(M.face_coface_count[faces] == 2)
    np.testing.assert_allclose(em.aperture[faces], em.face_volume[faces] / M.measures[2][faces], rtol=1e-15)


def test_aperture_arithmetic():
    # one face of area 1e-8 m^2 receiving 1e-12 m^3
    M = structured_grid(1, 1, 2, 1e-4, 1e-4, 2e-4)
    st_ = FeatureStats([1.0], [1.0], [0.0], [1e-12], [1.0], 1e-12 / 2e-12 - 1e-9)
    em = map_expansive(M, st_, np.random.default_rng(0), max_aspect=None)
    mid = int(np.flatnonzero(M.face_coface_count == 2)[0])
    assert em.aperture[mid] == pytest.approx(1e-4, rel=1e-12)


def test_build_fabric_invariants(model):
    M, K, st_ = model
    a = build_fabric(K, st_, seed=4)
    assert a.rng_algorithm == fabric.RNG_ALGORITHM
    vb = voluminous_boundary_faces(M, a.cell_role)
    assert np.all(a.face_role[vb] == VOLUMINOUS_BOUNDARY)
    assert not np.any((a.face_role == EXPANSIVE_VOID) & np.isin(np.arange(M.counts[2]), vb))
    assert np.all(a.conductivity > 0) and a.conductivity.shape == (K.counts[1],)
    V = M.measures[3].sum()
    assert 0 <= a.achieved_porosity - a.target_porosity <= max(v for v, _ in a.picks) / V
    void = M.measures[3][a.cell_role == VOLUMINOUS_VOID].sum()
    assert void / V <= st_.voluminous_void_share + M.measures[3].max() / V


def test_build_fabric_deterministic(model):
    M, K, st_ = model
    a = build_fabric(K, st_, seed=9)
    b = build_fabric(K, st_, seed=9)
    c = build_fabric(K, st_, seed=10)
    for name in ("cell_role", "face_role", "face_volume", "aperture", "conductivity", "compressibility"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.picks == b.picks
    assert a.picks != c.picks
