"""Independently computed reference values and brute-force checkers.

Constants were evaluated once with 30-digit quadrature or exact arithmetic and
frozen here; none of them is produced by the package under test.
"""

import math

import numpy as np

from finabs.geometry import sup_sq_dist

# 1/2 * integral_0^1 log(1 + 4x^2) dx = (log 5 - 2 + arctan 2) / 2
SQUARE_H_L2 = 0.358293315114095438808912396702
# -log integral_0^1 (1 + 4x^2)^{-1/2} dx = -log(asinh(2) / 2)
SQUARE_RENYI2_L2 = 0.325982612969810669705950695187
# 1/2 * integral_0^1 log(1 + 4x^2 + 16x^6) dx
SQUARE_H_L3 = 0.53299563174296538697375581248
# -log integral_0^1 (1 + 4x^2 + 16x^6)^{-1/2} dx  (s = 2)
SQUARE_RENYI2_L3 = 0.436592081263910130243799103628
# 1/2 log 5 (Gram determinant 1 + 4x^2 is largest at x = 1)
SQUARE_HSUP_L2 = 0.5 * math.log(5.0)
# the determinant is smallest (= 1) at x = 0, so h_inf = log vol = 0
SQUARE_HINF_L2 = 0.0

LOG_SQRT_21 = 1.52226121886171149825029899018
HALF_LOG_341 = 2.91594123864175839499555395125
# doubling, l = 5, R = log 16, c = v_1, s = inf only
DOUBLING_BOUND_L5_R16 = 0.0821996035545256514026348543337
RATIO_CONSTANT = 0.528942568327404275468986745943

# square map on 5 cells, worst path from Y4 for xi = (0.7, 0.49): (0.1^2 + 0.31^2) / 2
FIG3_DISTORTION = 0.05305
FIG3_TRANSITIONS = [(1, 1), (2, 1), (3, 1), (3, 2), (4, 2), (4, 3), (4, 4), (5, 4), (5, 5)]

# nonlinear3d with 10 cells per axis, closure rule: golden transition count
NONLINEAR3D_N10_TRANSITIONS = 15092


def doubling_derived(l: int, k: int) -> float:
    return 7.0 * (1.0 - 4.0**-l) / (9.0 * l * k * k)


def brute_force_distortion(states, w0, rel, grid) -> float:
    """Max over every enumerated cell path of the summed far-corner distances, divided by l.

    Summation order matches the dynamic programme (left fold over time), so the
    results agree bit for bit.
    """
    states = np.asarray(states, dtype=float)
    l = len(states)
    best = -math.inf
    stack = [(0, int(w0), sup_sq_dist(states[0], grid.cell(w0)))]
    while stack:
        t, cell, acc = stack.pop()
        if t == l - 1:
            best = max(best, acc)
            continue
        for nxt in rel.successors(cell):
            nxt = int(nxt)
            stack.append((t + 1, nxt, acc + sup_sq_dist(states[t + 1], grid.cell(nxt))))
    return best / l
