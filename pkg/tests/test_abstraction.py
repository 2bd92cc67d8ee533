import math

import numpy as np
import pytest

from finabs import abstraction as ab
from finabs import dynamics as dy
from finabs.geometry import BoxRegion, chebyshev_of_box, sup_sq_dist

from oracles import FIG3_DISTORTION, FIG3_TRANSITIONS, NONLINEAR3D_N10_TRANSITIONS, brute_force_distortion


def fig3():
    sq = dy.square()
    grid = ab.build_partition(sq.domain, [5])
    return sq, grid, ab.build_transitions(sq, grid)


def test_partition_examples():
    g = ab.build_partition(BoxRegion.unit(1), [5])
    bounds = [v for c in map(g.cell, range(5)) for v in (c.lo[0], c.hi[0])]
    assert bounds == pytest.approx([0, .2, .2, .4, .4, .6, .6, .8, .8, 1])
    assert ab.build_partition(BoxRegion((-1.0,) * 3, (1.0,) * 3), [10, 10, 10]).n_cells == 1000
    one = ab.build_partition(BoxRegion.unit(1), [1])
    assert one.cell(0) == BoxRegion.unit(1)


def test_partition_errors():
    with pytest.raises(ab.AbstractionError):
        ab.build_partition(BoxRegion((0.0,), (0.0,)), [3])
    with pytest.raises(ab.AbstractionError):
        ab.build_partition(BoxRegion.unit(1), [0])


def test_encode_half_open_convention():
    g = ab.build_partition(BoxRegion.unit(1), [5])
    assert g.encode_point([0.7]) == 3
    assert g.encode_point([0.2]) == 1
    assert g.encode_point([1.0]) == 4
    assert g.encode_point([0.0]) == 0
    with pytest.raises(ab.AbstractionError):
        g.encode_point([1.01])


def test_cells_partition_domain():
    g = ab.build_partition(BoxRegion((-1.0, 0.0), (1.0, 3.0)), [7, 3])
    x = np.random.default_rng(0).uniform([-1, 0], [1, 3], (5000, 2))
    idx = g.encode(x)
    lo, hi = g.cell_bounds()
    assert np.all((x >= lo[idx]) & (x <= hi[idx]))
    assert sum(g.cell(i).volume for i in range(g.n_cells)) == pytest.approx(6.0)


def test_fig3_transitions():
    _, _, rel = fig3()
    assert [(i + 1, j + 1) for i, j in rel.pairs()] == FIG3_TRANSITIONS


def test_identity_transitions_include_self():
    idn = dy.identity(1)
    g = ab.build_partition(idn.domain, [4])
    rel = ab.build_transitions(idn, g)
    for i in range(4):
        succ = set(rel.successors(i).tolist())
        assert i in succ and succ <= {i - 1, i, i + 1}
    exact = ab.build_transitions(idn, g, mode="exact")
    assert exact.pairs() == [(i, i) for i in range(4)]


@pytest.mark.parametrize("K", [4, 8, 12, 32])
def test_doubling_exact_transitions(K):
    d = dy.doubling()
    g = ab.build_partition(d.domain, [K])
    exact = ab.build_transitions(d, g, mode="exact")
    for j in range(K):
        assert exact.successors(j).tolist() == sorted({(2 * j) % K, (2 * j + 1) % K})
    closure = ab.build_transitions(d, g)
    assert set(exact.pairs()) <= set(closure.pairs())


def test_split_depth_refines_but_stays_sound():
    nl = dy.nonlinear3d()
    g = ab.build_partition(nl.domain, [6, 6, 6])
    coarse = ab.build_transitions(nl, g)
    fine = ab.build_transitions(nl, g, split_depth=1)
    assert set(fine.pairs()) <= set(coarse.pairs())
    assert ab.check_inclusion(nl, g, fine, 3, 3000, 5) == 0


def test_transitions_domain_mismatch():
    with pytest.raises(ab.AbstractionError):
        ab.build_transitions(dy.square(), ab.build_partition(BoxRegion((0.0,), (2.0,)), [4]))
    with pytest.raises(ab.AbstractionError):
        ab.build_transitions(dy.square(), ab.build_partition(dy.square().domain, [4]), mode="exact")


def test_fig3_distortion():
    _, g, rel = fig3()
    xi = np.array([[0.7], [0.49]])
    d = ab.distortion(xi, g.encode_point([0.7]), rel, g)
    assert d == pytest.approx(FIG3_DISTORTION, rel=1e-12)
    assert d == brute_force_distortion(xi, 3, rel, g)


def test_distortion_single_step_and_single_cell():
    _, g, rel = fig3()
    assert ab.distortion(np.array([[0.7]]), 3, rel, g) == pytest.approx(0.01)
    nl = dy.nonlinear3d()
    one = ab.build_partition(nl.domain, [1, 1, 1])
    r1 = ab.build_transitions(nl, one)
    states, _ = dy.trajectories(nl, np.array([[0.2, -0.5, 0.9]]), 4)
    expect = sum(sup_sq_dist(s, nl.domain) for s in states[0]) / 4
    assert ab.distortion(states[0], 0, r1, one) == pytest.approx(expect, rel=1e-14)


def test_distortion_bad_relation():
    g = ab.build_partition(BoxRegion.unit(1), [2])
    rel = ab.TransitionRelation.from_rows([[1], []])
    with pytest.raises(ab.AbstractionError):
        ab.distortion(np.array([[0.1], [0.6], [0.2]]), 0, rel, g)
    with pytest.raises(ab.AbstractionError):
        ab.distortions(np.array([[[0.1], [0.6], [0.2]]]), rel, g)


def test_dense_and_frontier_dp_agree():
    nl = dy.nonlinear3d()
    g = ab.build_partition(nl.domain, [5, 5, 5])
    rel = ab.build_transitions(nl, g)
    x0 = np.random.default_rng(7).uniform(-1, 1, (200, 3))
    states, _ = dy.trajectories(nl, x0, 4)
    batch = ab.distortions(states, rel, g)
    single = [ab.distortion(s, g.encode_point(s[0]), rel, g) for s in states]
    assert np.array_equal(batch, single)


@pytest.mark.parametrize("make,counts,l", [
    (dy.doubling, 8, 4), (dy.square, 10, 4), (lambda: dy.identity(1), 6, 3), (dy.doubling, 5, 3),
])
def test_dp_equals_brute_force(make, counts, l):
    sys = make()
    g = ab.build_partition(sys.domain, [counts])
    rel = ab.build_transitions(sys, g)
    x0 = np.random.default_rng(counts + l).uniform(0, 1, (250, 1))
    states, _ = dy.trajectories(sys, x0, l)
    dp = ab.distortions(states, rel, g)
    for s, d in zip(states, dp):
        assert d == brute_force_distortion(s, g.encode_point(s[0]), rel, g)


def test_identity_expected_distortion_closed_form():
    idn = dy.identity(1)
    for k in (1, 3, 8):
        g = ab.build_partition(idn.domain, [k])
        rel = ab.build_transitions(idn, g, mode="exact")
        est = ab.expected_distortion(idn, g, rel, 4, 20_000, 11)
        assert abs(est.mean - 7 / (12 * k * k)) <= 3 * est.stderr


def test_expected_distortion_determinism():
    sq, g, rel = fig3()
    a = ab.expected_distortion(sq, g, rel, 2, 2, 42)
    b = ab.expected_distortion(sq, g, rel, 2, 2, 42)
    assert a == b
    big1 = ab.expected_distortion(sq, g, rel, 3, 10_000, 3, workers=1)
    big4 = ab.expected_distortion(sq, g, rel, 3, 10_000, 3, workers=4)
    assert big1 == big4
    with pytest.raises(ValueError):
        ab.expected_distortion(sq, g, rel, 2, 1, 0)


def test_density_hook():
    sq, g, rel = fig3()

    def left_half(domain, seed, block, size):
        return np.random.default_rng([seed, block]).uniform(0, 0.5, (size, 1))

    d = ab.distortion_samples(sq, g, rel, 2, 500, 0, sampler=left_half)
    assert d.shape == (500,)
    assert ab.expected_distortion(sq, g, rel, 2, 500, 0, sampler=left_half).mean == pytest.approx(d.mean())


def test_inclusion_sound_and_fault_injection():
    sq, g, rel = fig3()
    assert ab.check_inclusion(sq, g, rel, 2, 10_000, 0) == 0
    assert ab.check_inclusion(sq, g, rel, 1, 100, 0) == 0
    broken = rel.without(3, 2)  # drop (Y4, Y3)
    assert ab.check_inclusion(sq, g, broken, 2, 10_000, 0) > 0
    assert ab.check_inclusion(sq, g, broken, 1, 100, 0) == 0


@pytest.mark.parametrize("sys,counts", [
    (dy.doubling(), [16]), (dy.square(), [9]), (dy.identity(2), [4, 5]),
    (dy.lti([[0.6, 0.3], [-0.2, 0.5]]), [6, 6]), (dy.nonlinear3d(), [7, 7, 7]),
])
def test_inclusion_zero_for_builtins(sys, counts):
    g = ab.build_partition(sys.domain, counts)
    rel = ab.build_transitions(sys, g)
    assert ab.check_inclusion(sys, g, rel, 4, 5000, 1) == 0


def test_refinement_monotone():
    nl = dy.nonlinear3d()
    x0 = np.random.default_rng(9).uniform(-1, 1, (1000, 3))
    states, _ = dy.trajectories(nl, x0, 3)
    means, ses = [], []
    for N in (4, 8):
        g = ab.build_partition(nl.domain, [N] * 3)
        d = ab.distortions(states, ab.build_transitions(nl, g), g)
        means.append(d.mean())
        ses.append(d.std(ddof=1) / math.sqrt(len(d)))
    assert means[1] <= means[0] + 3 * math.hypot(*ses)
    sq = dy.square()
    d1 = []
    for k in (5, 10, 20):
        g = ab.build_partition(sq.domain, [k])
        st, _ = dy.trajectories(sq, np.random.default_rng(2).uniform(0, 1, (1000, 1)), 3)
        d1.append(ab.distortions(st, ab.build_transitions(sq, g), g))
    assert np.all(d1[1] <= d1[0]) and np.all(d1[2] <= d1[1])


def test_chebyshev_pointwise_lower_bound():
    # d >= (1/l)(|xi - x_c|^2 + r_c^2) for the single path box containing xi
    sq, g, rel = fig3()
    x0 = np.random.default_rng(5).uniform(0, 1, (500, 1))
    states, _ = dy.trajectories(sq, x0, 3)
    for s, d in zip(states, ab.distortions(states, rel, g)):
        cells = [g.cell(g.encode_point(p)) for p in s]
        box = BoxRegion(tuple(c.lo[0] for c in cells), tuple(c.hi[0] for c in cells))
        cb = chebyshev_of_box(box)
        lower = (np.sum((s[:, 0] - cb.center) ** 2) + cb.radius**2) / 3
        assert d >= lower - 1e-15


def test_reachable_hull_contains_paths():
    _, g, rel = fig3()
    hull = ab.reachable_hull(g, rel, 3, 3)
    assert hull[0] == g.cell(3)
    assert hull[1].lo[0] == pytest.approx(0.2) and hull[1].hi[0] == pytest.approx(0.8)


def test_serialisation_roundtrip():
    nl = dy.nonlinear3d()
    g = ab.build_partition(nl.domain, [10, 10, 10])
    rel = ab.build_transitions(nl, g)
    assert rel.n_transitions == NONLINEAR3D_N10_TRANSITIONS
    doc = ab.abstraction_document(nl, g, rel, "closure")
    g2, rel2, fp = ab.load_abstraction(__import__("json").loads(ab.dump_abstraction(doc)))
    assert g2.counts == g.counts and g2.domain == g.domain
    assert np.array_equal(rel2.indptr, rel.indptr) and np.array_equal(rel2.indices, rel.indices)
    assert fp == nl.fingerprint()
    with pytest.raises(ab.AbstractionError):
        ab.load_abstraction({"format": "other"})


def test_transition_build_worker_independent():
    nl = dy.nonlinear3d()
    g = ab.build_partition(nl.domain, [6, 6, 6])
    a = ab.build_transitions(nl, g, workers=1)
    b = ab.build_transitions(nl, g, workers=4)
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.indptr, b.indptr)
