import math

import numpy as np
import pytest

from relaycap.errors import DomainError, StructuralError
from relaycap.measures import (INFINITE, EmpiricalMeasure, FrustrationAtoms, FrustrationGrid, Interval,
                               ProductDensity, dumps, frustration_from_dict, frustration_to_dict,
                               measure_from_dict, measure_to_dict, query, relative_entropy, tv_distance,
                               window_index)

from conftest import one_atom

BOX = ((0.0, 1.0),)


def test_query_zero_measure():
    nu = EmpiricalMeasure([], [], np.zeros((0, 1)), [], [], 1.0, BOX)
    assert query(nu, (0, 1), (0, 1), None, (0, 1)) == 0.0
    assert query(ProductDensity.uniform(BOX, mass=0.0), (0, 0.5)) == 0.0


def test_query_single_atom():
    assert query(one_atom(), (0, 1), (0.4, 1), None, (0, 0.5)) == pytest.approx(0.3, abs=0)


def test_query_product_closed_form():
    nu = ProductDensity.uniform(BOX)
    assert query(nu, (0, 0.5), (0.5, 1), None, (0, 0.25)) == pytest.approx(0.0625, rel=1e-14)


def test_query_half_open_entrance():
    nu = one_atom(s=0.25)
    assert query(nu, (0.0, 0.25)) == 0.3
    assert query(nu, (0.25, 0.5)) == 0.0
    assert window_index(0.25, 0.25) == 0
    assert window_index(0.25001, 0.25) == 1


def test_query_rejects_bad_ranges():
    nu = one_atom()
    with pytest.raises(DomainError):
        query(nu, (0.5, 0.2))
    with pytest.raises(DomainError):
        query(nu, u_range=(0.0, 1.5))
    with pytest.raises(DomainError):
        query(nu, t_range=(-0.1, 0.5))


def test_query_spatial_region():
    nu = ProductDensity(np.array([0, 1.0]), np.array([0, 1.0]), [[2.0]], (np.array([0, 0.5, 1.0]),),
                        np.array([0.25, 0.75]), np.array([0, 1.0]), np.array([1.0]))
    assert query(nu, x_region=((0.0, 0.5),)) == pytest.approx(0.5)
    assert query(nu, x_region=((0.25, 1.0),)) == pytest.approx(2 * (0.125 + 0.75))


def test_point_exit_cell():
    nu = ProductDensity.uniform(BOX, exit_at_horizon=True)
    assert query(nu, t_range=(0.0, 0.99)) == 0.0
    assert query(nu, t_range=(1.0, 1.0)) == 1.0


def test_interval_fractions():
    f = Interval.closed(0.25, 0.75).cell_fractions(np.array([0, 0.5, 1.0]))
    assert f.tolist() == [0.5, 0.5]


def test_entropy_identity_and_scaling():
    mu = ProductDensity.uniform(BOX)
    assert relative_entropy(mu, mu) == 0.0
    assert relative_entropy(mu.scaled(2.0), mu) == pytest.approx(2 * math.log(2) - 1, abs=1e-12)


def test_entropy_half_support():
    # density ratio 2 on half the entrance axis and 0 on the other half;
    # oracle: cellwise sum of c log c - c + 1 times the cell mass
    mu = ProductDensity(np.array([0, 0.5, 1.0]), np.array([0, 1.0]), [[0.5], [0.5]], (np.array([0, 1.0]),),
                        np.ones(1), np.array([0, 1.0]), np.ones(1))
    nu = mu.with_st_mass([[1.0], [0.0]])
    oracle = sum(m * (c * math.log(c) - c + 1) if c > 0 else m for c, m in ((2, 0.5), (0, 0.5)))
    assert oracle == pytest.approx(math.log(2))
    assert relative_entropy(nu, mu) == pytest.approx(oracle, abs=1e-12)


def test_entropy_infinite_and_cross_type():
    mu = ProductDensity(np.array([0, 0.5, 1.0]), np.array([0, 1.0]), [[1.0], [0.0]], (np.array([0, 1.0]),),
                        np.ones(1), np.array([0, 1.0]), np.ones(1))
    nu = mu.with_st_mass([[0.5], [0.5]])
    assert relative_entropy(nu, mu) is INFINITE
    assert INFINITE > 1e300
    with pytest.raises(TypeError):
        float(INFINITE)
    with pytest.raises(StructuralError):
        relative_entropy(one_atom(), mu)


def test_entropy_atoms():
    a = one_atom(w=0.6)
    b = one_atom(w=0.3)
    assert relative_entropy(a, b) == pytest.approx(0.6 * math.log(2) - 0.6 + 0.3)
    assert relative_entropy(one_atom(s=0.4), b) is INFINITE


def _atoms(pairs):
    pts = {"a": (0.1, 0.2, 0.3), "b": (0.4, 0.5, 0.6), "c": (0.7, 0.8, 0.9)}
    return FrustrationAtoms([pts[k][0] for k, _ in pairs], [pts[k][1] for k, _ in pairs],
                            [[pts[k][2]] for k, _ in pairs], [w for _, w in pairs])


def test_tv_examples():
    a = _atoms([("a", 0.5), ("b", 0.2)])
    b = _atoms([("a", 0.1), ("c", 0.4)])
    assert tv_distance(a, a) == 0.0
    assert tv_distance(_atoms([("a", 0.5)]), _atoms([])) == 0.5
    assert tv_distance(a, b) == pytest.approx(0.6)


def test_tv_grid_mixed():
    g = FrustrationGrid(np.array([0, 0.5, 1]), np.array([0, 1.0]), (np.array([0, 1.0]),),
                        np.array([[[0.5]], [[0.0]]]))
    assert tv_distance(_atoms([("a", 0.5)]), g) == pytest.approx(0.0)
    with pytest.raises(StructuralError):
        g + FrustrationGrid(np.array([0, 1.0]), np.array([0, 1.0]), (np.array([0, 1.0]),), np.zeros((1, 1, 1)))


def test_json_roundtrip():
    for nu in (one_atom(), ProductDensity.uniform(BOX, exit_at_horizon=True)):
        d = measure_to_dict(nu)
        back = measure_from_dict(d)
        assert dumps(measure_to_dict(back)) == dumps(d)
    g = _atoms([("a", 0.5), ("b", 0.2)])
    assert dumps(frustration_to_dict(frustration_from_dict(frustration_to_dict(g)))) == dumps(frustration_to_dict(g))
    with pytest.raises(StructuralError):
        measure_from_dict({"variant": "other"})


def test_validation():
    with pytest.raises(Exception):
        EmpiricalMeasure([0.1], [0.2], [[0.5]], [0.1], [0.0], 1.0, BOX)
    with pytest.raises(StructuralError):
        ProductDensity(np.array([0, 1.0]), np.array([0, 1.0]), [[1.0]], (np.array([0, 1.0]),), np.array([0.5]),
                       np.array([0, 1.0]), np.ones(1))
