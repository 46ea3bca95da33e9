import numpy as np
import pytest
from hypothesis import given, strategies as st

from cpgrid.model import (CH4_PARAMS, GridParams, ModelConstructionError, StateSpaceModel,
                          build_from_params, chain_extend, closed_loop, delay_closed_loop,
                          four_bus_canonical, max_real_eig, nodal_matrices, sorted_spectrum,
                          zone_model)

A1_PRINTED = np.array([
    [-150.4375, -63.0006, -21.4758, 0],
    [-50.6563, -94.5009, -32.2137, 0],
    [35.6062, 9.1985, -53.6896, 0],
    [155.0137, 138.9167, 100.5830, 0],
])


def test_canonical_entries():
    m = four_bus_canonical()
    assert m.A[0, 0] == pytest.approx(175.9)
    assert m.A[1, 0] == pytest.approx(-350.0)
    assert m.B[3, 3] == pytest.approx(-1077.5)
    assert np.array_equal(m.C, np.eye(4))
    assert max_real_eig(m.A) > 0
    assert m.provenance == "canonical_4bus"


def test_a1_entrywise():
    _, m = build_from_params(CH4_PARAMS.with_load(0.0))
    nz = A1_PRINTED != 0
    rel = np.abs(m.A[nz] - A1_PRINTED[nz]) / np.abs(A1_PRINTED[nz])
    assert rel.max() < 1e-3
    assert np.abs(m.A[~nz]).max() < 1e-9
    assert abs(max_real_eig(m.A)) < 1e-6


def test_zone_open_loop():
    got = [max_real_eig(zone_model(z).A) for z in ("A2", "A3")]
    assert got == pytest.approx([-21.9580, -42.4541], abs=5e-3)


def test_invalid_coupling_rejected():
    with pytest.raises(ModelConstructionError):
        GridParams(2, (0.1, 0.1), (0.1, 0.1), (0.0, 1.0))


def test_json_roundtrip(tmp_path):
    doc = CH4_PARAMS.to_json()
    assert GridParams.from_json(doc) == CH4_PARAMS
    m = zone_model("A2")
    m2 = StateSpaceModel.from_json(m.to_json())
    assert np.array_equal(m.A, m2.A) and np.array_equal(m.B, m2.B)


def test_chain_extend_same_length_matches_builder():
    _, ref = build_from_params(CH4_PARAMS)
    m = chain_extend(4, CH4_PARAMS)
    assert np.array_equal(m.A, ref.A) and np.array_equal(m.B, ref.B)


def test_chain_extend_13():
    m = chain_extend(13)
    assert m.A.shape == (13, 13)
    assert np.array_equal(m.C, np.eye(13))
    assert "open_loop_unstable" in m.meta
    assert m.provenance == "chain_extended"
    with pytest.raises(ModelConstructionError):
        chain_extend(1)


def test_closed_loop_zero_gain():
    m = four_bus_canonical()
    _, lam = closed_loop(m, np.zeros((4, 4)))
    assert np.allclose(lam, sorted_spectrum(m.A), rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        closed_loop(m, np.zeros((3, 4)))


def test_published_spectra(published):
    m = four_bus_canonical()
    for key in ("ch2-s1", "ch2-s2"):
        _, lam = closed_loop(m, published[key]["K"])
        assert lam.real.max() == pytest.approx(published[key]["max_eig"], rel=0.01)


def test_delay_zero_is_bitwise(published):
    m = four_bus_canonical()
    K = published["ch2-s2"]["K"]
    a = closed_loop(m, K)
    b = delay_closed_loop(m, K, 0.0)
    c = delay_closed_loop(m, K, np.zeros((4, 4)))
    for x in (b, c):
        assert np.array_equal(a[0], x[0]) and np.array_equal(a[1], x[1])


def test_delay_destabilizing_trend(published):
    m = four_bus_canonical()
    K = published["ch2-s2"]["K"]
    base = closed_loop(m, K)[1].real.max()
    big = delay_closed_loop(m, K, 1.0)[1].real.max()
    assert big > base


def test_delay_on_unused_link_rejected(published):
    m = four_bus_canonical()
    K = published["ch2-s2"]["K"]
    D = np.full((4, 4), 1e-3)
    with pytest.raises(ValueError):
        delay_closed_loop(m, K, D)


def test_sorted_spectrum_order():
    lam = sorted_spectrum(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert lam[0].imag > lam[1].imag


pos = st.floats(1e-3, 1.0)


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(pos, min_size=n, max_size=n), st.lists(pos, min_size=n, max_size=n),
    st.lists(pos, min_size=n, max_size=n))))
def test_T2_is_minus_T1(args):
    n, R, L, Lc = args
    nm = nodal_matrices(GridParams(n, R, L, [v * 1e-2 for v in Lc]))
    assert np.array_equal(nm.T2, -nm.T1)
    assert np.array_equal(nm.T1 + nm.T2, np.zeros((n, n)))


@given(st.integers(2, 6), st.floats(0.01, 2.0))
def test_build_succeeds_with_positive_resistances(n, r):
    p = chain_extend(n, CH4_PARAMS.with_load(r))
    assert np.all(np.isfinite(p.A))


@given(st.integers(0, 2**31 - 1))
def test_closed_loop_zero_matches_open(seed):
    rng = np.random.default_rng(seed)
    m = StateSpaceModel(rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), np.eye(3))
    _, lam = closed_loop(m, np.zeros((2, 3)))
    assert np.array_equal(lam, m.open_loop_spectrum())
