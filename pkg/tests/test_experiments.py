import math

import numpy as np
import pytest

from finabs import experiments as ex

from oracles import RATIO_CONSTANT, doubling_derived


def test_doubling_formulas():
    o = ex.doubling_optimal_distortion(5, 1)
    assert o.D_derived == pytest.approx(7 * (1 - 4.0**-5) / 45, rel=1e-15)
    assert o.D_derived == pytest.approx(0.155404, abs=1e-6)
    assert o.R == pytest.approx(math.log(16))
    assert ex.doubling_optimal_distortion(1, 1).D_derived == pytest.approx(7 / 12)
    for l in range(1, 6):
        for k in (1, 2, 4, 64):
            assert ex.doubling_optimal_distortion(l, k).D_derived == pytest.approx(doubling_derived(l, k), rel=1e-14)
    # the alternative closed form does not match the segment derivation
    assert ex.doubling_optimal_distortion(5, 1).D_paper_printed > 100
    with pytest.raises(ValueError):
        ex.doubling_optimal_distortion(0, 1)


@pytest.mark.parametrize("l,k", [(1, 1), (2, 2), (3, 4), (4, 1)])
def test_doubling_achievability(l, k):
    r = ex.doubling_optimal_abstraction(l, k, samples=5000, seed=1)
    assert r.cells == k * 2 ** (l - 1)
    assert r.transitions == (1 if r.cells == 1 else 2 * r.cells)
    assert r.inclusion_violations == 0
    assert r.within_3se


def test_ratio_constant():
    for l in (2, 3, 5):
        rows = ex.doubling_ratio_check(l, range(1, 65))
        for r in rows:
            assert r["ratio"] == pytest.approx(RATIO_CONSTANT, rel=1e-12)
    assert ex.RATIO_CONSTANT == pytest.approx(RATIO_CONSTANT, rel=1e-15)
    with pytest.raises(ValueError):
        ex.doubling_ratio_check(1, [1])


def test_induced_cover_radii():
    r = ex.induced_cover_radii(3, 2)
    assert len(r) == 8
    # every segment (x, 2x, 4x) over a cell of width 1/8 has length sqrt(21)/8
    assert r == pytest.approx(np.full(8, math.sqrt(21) / 16), rel=1e-14)


def test_covering_inequality():
    for k in (1, 2, 4, 8):
        for row in ex.covering_check(3, k):
            assert row["holds"]
    # with c = v_1 and s = inf the inequality is tight on this cover
    for k in (1, 3, 8):
        (row,) = ex.covering_check(3, k, s_grid=(math.inf,), c=2.0)
        assert row["lhs"] == pytest.approx(row["rhs"], rel=1e-12)


def test_guard_cells():
    assert ex.guard_cells([10, 10, 10]) == 1000
    with pytest.raises(ex.ResourceGuardError):
        ex.guard_cells([50, 50, 50])
    assert ex.guard_cells([50, 50, 50], allow_large=True) == 125_000
    with pytest.raises(ex.ResourceGuardError):
        ex.nonlinear3d_experiment(Ns=(100,), ls=(2,))


def test_reproduce_doubling_small():
    achiev, ratios, checks = ex.reproduce_doubling(ls=(1, 2), ks=(1, 2), ratio_ks=(1, 2, 3), samples=2000)
    assert len(achiev) == 4
    assert all(c.passed for c in checks)
    # l = 1, k = 1 has zero rate and is left out of the ratio table
    assert {(r["l"], r["k"]) for r in ratios} == {(1, 2), (1, 3), (2, 1), (2, 2), (2, 3)}


def test_nonlinear3d_small():
    rows, checks = ex.nonlinear3d_experiment(Ns=(4, 6), ls=(2, 3), samples=500)
    assert len(rows) == 4
    assert set(ex.NONLINEAR3D_COLUMNS) <= set(rows[0])
    assert all(c.passed for c in checks if c.required)
    for r in rows:
        assert r["D_empirical"] >= r["D_lower"] > 0
