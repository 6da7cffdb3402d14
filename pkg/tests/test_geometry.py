import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twistbilayer.errors import CapacityError, InvalidIndexError
from twistbilayer.geometry import (
    LAYER_A,
    LAYER_B,
    LatticeKind,
    build_moire_cell,
    closed_form_site_count,
    commensurate_angle,
    enumerate_angles,
    monolayer,
    rotation,
    tile_lattice,
)


def coprime_pairs(max_m, odd_sum_only=False, square_only=True):
    for m in range(1, max_m + 1):
        for n in range(1, m + 1):
            if math.gcd(m, n) != 1 or (m == n and m > 1):
                continue
            if odd_sum_only and (m + n) % 2 == 0:
                continue
            if square_only and math.acos(2 * m * n / (m * m + n * n)) >= math.pi / 4:
                continue
            yield m, n


def brute_force_sites(cell):
    """Enumerate lattice points of both layers inside the cell by direct search."""
    T = cell.T
    Tinv = np.linalg.inv(T)
    lat, basis = monolayer(cell.kind)
    reach = int(np.abs(T).sum()) + 2
    found = []
    for layer in (LAYER_A, LAYER_B):
        R = np.eye(2) if layer == LAYER_A else rotation(cell.angle.theta)
        for i, j in product(range(-reach, reach + 1), repeat=2):
            for b in basis:
                r = R @ (lat @ np.array([i, j]) + b)
                f = Tinv @ r
                if np.all(f > -1e-9) and np.all(f < 1 - 1e-9):
                    found.append((layer, r))
    return found


def test_square_angle_values():
    a = commensurate_angle("square", 2, 1)
    assert a.theta == pytest.approx(0.6435011087932844, abs=1e-12)
    assert a.degrees == pytest.approx(36.8699, abs=1e-4)
    assert commensurate_angle("square", 1, 1).theta == 0.0


def test_honeycomb_angle_value():
    a = commensurate_angle(LatticeKind.HONEYCOMB, 2, 1)
    assert a.theta == pytest.approx(math.acos(13 / 14), abs=1e-14)


@pytest.mark.parametrize("m,n", [(0, 1), (1, 0), (-2, 1), (1, 2), (3, 1)])
def test_invalid_indices(m, n):
    with pytest.raises(InvalidIndexError):
        commensurate_angle("square", m, n)


def test_both_odd_cells_hold_two_coincidences():
    cell = build_moire_cell(commensurate_angle("square", 5, 3))
    assert cell.n_sites == 68
    assert len(cell.coincidences) == 2


def test_non_coprime_is_reduced_with_warning():
    with pytest.warns(UserWarning):
        a = commensurate_angle("square", 4, 2)
    assert (a.m, a.n) == (2, 1)


def test_enumerate_contains_expected_angles():
    deg = [a.degrees for a in enumerate_angles("square", 3)]
    assert any(abs(d - 36.87) < 0.01 for d in deg)
    assert any(abs(d - 22.62) < 0.01 for d in deg)
    assert all(x > y for x, y in zip(deg, deg[1:]))
    only = enumerate_angles("square", 1)
    assert len(only) == 1 and only[0].theta == 0.0
    assert any(abs(a.degrees - 21.787) < 1e-3 for a in enumerate_angles("honeycomb", 2))


def test_enumerate_rejects_zero():
    with pytest.raises(ValueError):
        enumerate_angles("square", 0)


def test_cell_21_against_brute_force():
    cell = build_moire_cell(commensurate_angle("square", 2, 1))
    assert cell.n_sites == 10
    assert len(cell.coincidences) == 1
    pts = brute_force_sites(cell)
    assert len(pts) == 10
    # pairwise coincidence check between layers
    a = np.array([r for l, r in pts if l == LAYER_A])
    b = np.array([r for l, r in pts if l == LAYER_B])
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    assert int((d < 1e-9).sum()) == 1


def test_honeycomb_cell_site_count_brute_force():
    cell = build_moire_cell(commensurate_angle("honeycomb", 2, 1))
    assert cell.n_sites == 28
    assert len(brute_force_sites(cell)) == 28


@pytest.mark.parametrize("m,n", list(coprime_pairs(8)))
def test_square_site_count_exhaustive(m, n):
    cell = build_moire_cell(commensurate_angle("square", m, n))
    assert cell.n_sites == closed_form_site_count(LatticeKind.SQUARE, m, n) == 2 * (m * m + n * n)
    assert cell.area == pytest.approx(m * m + n * n)


@pytest.mark.parametrize("m,n", list(coprime_pairs(6, odd_sum_only=True)))
def test_single_coincidence_for_primitive_cells(m, n):
    cell = build_moire_cell(commensurate_angle("square", m, n))
    assert len(cell.coincidences) == 1


def test_reciprocal_duality():
    for m, n in [(2, 1), (3, 2), (5, 4)]:
        cell = build_moire_cell(commensurate_angle("square", m, n))
        np.testing.assert_allclose(cell.B.T @ cell.T, 2 * np.pi * np.eye(2), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(list(coprime_pairs(6, square_only=False))), st.sampled_from(["square", "honeycomb"]))
def test_layer_b_unrotates_onto_lattice(mn, kind):
    m, n = mn
    try:
        angle = commensurate_angle(kind, m, n)
    except InvalidIndexError:
        return
    cell = build_moire_cell(angle)
    lat, basis = monolayer(cell.kind)
    back = (rotation(-angle.theta) @ cell.positions[cell.layers == LAYER_B].T).T
    for r in back:
        ok = False
        for b in basis:
            f = np.linalg.solve(lat, r - b)
            ok |= bool(np.all(np.abs(f - np.round(f)) < 1e-9))
        assert ok
    assert np.all((cell.frac >= -1e-12) & (cell.frac < 1))


def test_csv_export(tmp_path):
    cell = build_moire_cell(commensurate_angle("square", 2, 1))
    p = tmp_path / "cell.csv"
    cell.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "layer,basis_index,x,y,frac1,frac2"
    assert len(lines) == 11


def test_tiling_sizes_and_index_roundtrip():
    sq = build_moire_cell(commensurate_angle("square", 2, 1))
    assert tile_lattice(sq, 4).n_sites == 160
    assert tile_lattice(sq, 64).n_sites == 40960
    hc = build_moire_cell(commensurate_angle("honeycomb", 2, 1))
    assert tile_lattice(hc, 2).n_sites == 112
    lat = tile_lattice(sq, 3)
    for idx in range(lat.n_sites):
        assert lat.index(*lat.unravel(idx)) == idx
    assert lat.index(3, -1, 0) == lat.index(0, 2, 0)


def test_tiling_capacity():
    sq = build_moire_cell(commensurate_angle("square", 2, 1))
    with pytest.raises(CapacityError):
        tile_lattice(sq, 100, max_sites=1000)
    with pytest.raises(ValueError):
        tile_lattice(sq, 0)


def test_minimal_image_displacements():
    sq = build_moire_cell(commensurate_angle("square", 2, 1))
    lat = tile_lattice(sq, 6)
    d = lat.displacements(0)
    f = np.linalg.solve(sq.T, d.T).T
    assert np.all(np.abs(f) <= 3 + 1e-9)
