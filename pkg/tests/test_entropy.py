import math

import numpy as np
import pytest

from finabs import dynamics as dy
from finabs import entropy as en
from finabs.geometry import BoxRegion

from oracles import (
    HALF_LOG_341, LOG_SQRT_21, SQUARE_H_L2, SQUARE_H_L3, SQUARE_HINF_L2, SQUARE_HSUP_L2, SQUARE_RENYI2_L2, SQUARE_RENYI2_L3,
)


def test_doubling_entropy_mc():
    h, se = en.entropy_mc(dy.doubling(), 3, 100_000, 0)
    assert abs(h - LOG_SQRT_21) < 0.01
    assert se < 1e-12  # the Gram determinant is constant


def test_identity_entropy_exact():
    h, se = en.entropy_mc(dy.identity(1), 5, 100, 0)
    assert h == pytest.approx(0.5 * math.log(5), abs=1e-12) and se < 1e-14


@pytest.mark.parametrize("l,expected", [(2, SQUARE_H_L2), (3, SQUARE_H_L3)])
def test_square_entropy_quadrature(l, expected):
    h, se = en.entropy_mc(dy.square(), l, 100_000, 1)
    assert abs(h - expected) <= 4 * se


@pytest.mark.parametrize("l,expected", [(2, SQUARE_RENYI2_L2), (3, SQUARE_RENYI2_L3)])
def test_square_renyi_quadrature(l, expected):
    hs, se = en.renyi_mc(dy.square(), l, 2.0, 100_000, 2)
    assert abs(hs - expected) <= 4 * se


def test_renyi_constant_det_systems():
    for l in (1, 3, 5):
        for s in (1.5, 2.0, 7.0):
            hs, se = en.renyi_mc(dy.doubling(), l, s, 1000, 0)
            assert hs == pytest.approx(0.5 * (math.log(4**l - 1) - math.log(3)), abs=1e-12)
            hi, _ = en.renyi_mc(dy.identity(1), l, s, 1000, 0)
            assert hi == pytest.approx(0.5 * math.log(l), abs=1e-12)
    with pytest.raises(ValueError):
        en.renyi_mc(dy.doubling(), 3, 1.0, 100, 0)


def test_renyi_sup():
    v, method = en.renyi_sup(dy.doubling(), 5, 1000, 0)
    assert v == pytest.approx(HALF_LOG_341, abs=1e-12) and method == en.CLOSED_FORM
    v, _ = en.renyi_sup(dy.identity(2), 3, 100, 0)
    assert v == pytest.approx(math.log(3), abs=1e-12)
    v, method = en.renyi_sup(dy.square(), 2, 1000, 0)
    assert v == pytest.approx(SQUARE_HSUP_L2, abs=1e-12)  # attained at the vertex x = 1
    assert "lower estimate" in method
    assert v <= SQUARE_HSUP_L2 + 1e-12


def test_renyi_limit():
    v, method = en.renyi_limit(dy.square(), 2, 1000, 0)
    assert v == pytest.approx(SQUARE_HINF_L2, abs=1e-15) and "upper estimate" in method
    v, method = en.renyi_limit(dy.doubling(), 5, 1000, 0)
    assert v == pytest.approx(HALF_LOG_341, abs=1e-12) and method == en.CLOSED_FORM
    rep = en.entropy_report(dy.square(), 2, (2.0,), 1000, 0)
    assert rep.h_inf == pytest.approx(SQUARE_HINF_L2, abs=1e-15)
    assert rep.h_sup == pytest.approx(SQUARE_HSUP_L2, abs=1e-12)
    # h_inf is the large-s limit of h_s
    h50, _ = en.renyi_mc(dy.square(), 2, 400.0, 20000, 0)
    assert rep.h_inf <= h50 < 0.02


def test_closed_forms():
    r = en.entropy_closed_form("doubling", None, 5, s_grid=(2.0, math.inf))
    assert r.h == r.h_inf == r.renyi_value(2.0) == pytest.approx(HALF_LOG_341, abs=1e-14)
    lim = en.entropy_closed_form("lti-schur", {"A": [[0.5]]}, 64)
    geometric = math.log(2.0) + 0.5 * math.log((1 - 0.25**64) / 0.75)
    assert lim.h == pytest.approx(geometric, abs=1e-8)
    assert lim.h == pytest.approx(math.log(2) + 0.5 * math.log(4 / 3), abs=1e-8)
    idn = en.entropy_closed_form("identity", {"n": 3}, 1)
    assert idn.h == 0.0
    with pytest.raises(ValueError):
        en.entropy_closed_form("square", None, 2)
    with pytest.raises(ValueError):
        en.entropy_closed_form("lti-schur", {}, 2)


@pytest.mark.parametrize("sys,l", [
    (dy.doubling(), 4), (dy.identity(2), 3), (dy.lti([[0.5, 0.2], [0.0, 0.7]]), 5),
])
def test_closed_form_vs_mc(sys, l):
    cf = en.closed_form_for(sys, l, (2.0,))
    rep = en.entropy_report(sys, l, (2.0, math.inf), 5000, 3)
    assert abs(rep.h - cf.h) <= 3 * rep.stderr_h + 1e-12
    r = rep.renyi[0]
    assert abs(r.value - cf.renyi_value(2.0)) <= 3 * r.stderr + 1e-12
    assert rep.h_inf == pytest.approx(cf.h_inf, abs=1e-10)


@pytest.mark.parametrize("sys,l", [
    (dy.doubling(), 3), (dy.square(), 3), (dy.identity(2), 4), (dy.nonlinear3d(), 3),
    (dy.lti([[0.5, 0.1], [0.2, 0.3]]), 4),
])
def test_entropy_properties(sys, l):
    s_grid = (1.5, 2.0, 4.0, 8.0, math.inf)
    rep = en.entropy_report(sys, l, s_grid, 4000, 4)
    h0 = math.log(sys.domain.volume)
    assert rep.h >= h0 - 3 * rep.stderr_h
    values = [(rep.h, rep.stderr_h)] + [(r.value, r.stderr) for r in rep.renyi] + [(rep.h_inf, 0.0)]
    for v, se in values:
        assert math.isfinite(v) and v >= h0 - 3 * se - 1e-12
    for (a, sa), (b, sb) in zip(values, values[1:]):
        assert b <= a + 3 * math.hypot(sa, sb) + 1e-12


def test_report_serialisation_and_lookup():
    rep = en.entropy_report(dy.square(), 2, (2.0, math.inf), 100, 0)
    d = rep.to_dict()
    assert set(d) >= {"h", "stderr_h", "renyi", "h_inf", "h_sup", "method", "samples", "seed"}
    assert rep.renyi_value(math.inf) == rep.h_inf
    with pytest.raises(KeyError):
        rep.renyi_value(3.0)


def test_entropy_worker_independent():
    a = en.entropy_report(dy.nonlinear3d(), 3, (2.0,), 9000, 1, workers=1)
    b = en.entropy_report(dy.nonlinear3d(), 3, (2.0,), 9000, 1, workers=4)
    assert a == b


def test_non_unit_domain_volume():
    idn = dy.identity(2, BoxRegion((0.0, 0.0), (2.0, 3.0)))
    h, _ = en.entropy_mc(idn, 4, 100, 0)
    assert h == pytest.approx(math.log(6.0) + math.log(4.0), abs=1e-12)
