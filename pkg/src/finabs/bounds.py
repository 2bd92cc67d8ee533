"""Rate-distortion lower bounds for finite abstractions.

An abstraction with at most ``e^R`` cells has average worst-case distortion

    D >= (n/(2l)) (e^{-R+h-n/2} / (c Γ(1+n/2)))^{2/n}
         + (1/l) c^{-2/n} max_s e^{(2/n)(-(s/(s-1)) R + h_s)}

where ``h``/``h_s`` are trajectory entropies and ``c`` bounds the volume of
trajectory-space balls relative to state-space ones. For ``s = inf`` the
exponent is ``(2/n)(-R + h_inf)``. ``c`` comes from the smoothness class:
``v_n`` for affine maps, ``M^l v_n`` for M affine pieces and
``v_n (sum_{i<l} L^{2i})^{n/2}`` for Lipschitz maps; the smallest applicable
value is used. The high-rate variant takes ``c = v_n``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .dynamics import SystemDef
from .entropy import EntropyReport
from .geometry import gamma_half, unit_ball_volume

INF = math.inf
DEFAULT_S_GRID = (1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 50.0, INF)
HIGH_RATE = "high-rate"


class BoundError(ValueError):
    pass


def _log_lipschitz_sum(L: float, l: int) -> float:
    """``log sum_{i<l} L^{2i}`` without overflow."""
    if L == 1.0:
        return math.log(l)
    if L == 0.0:
        return 0.0
    a = 2.0 * math.log(L)
    if L > 1.0:
        # (L^{2l} - 1)/(L^2 - 1) = L^{2l-2} (1 - L^{-2l}) / (1 - L^{-2})
        return (l - 1) * a + math.log(-math.expm1(-l * a)) - math.log(-math.expm1(-a))
    return math.log(-math.expm1(l * a)) - math.log(-math.expm1(a))


def c_candidates(sys: SystemDef, l: int, lipschitz: Optional[float] = None) -> dict:
    """All applicable upper bounds on ``c`` keyed by case, as log values."""
    n = sys.n
    log_v = math.log(unit_ball_volume(n))
    kind = sys.smoothness.kind
    out = {}
    if kind == "affine":
        out["affine"] = log_v
    if kind == "piecewise-affine":
        out["piecewise-affine"] = l * math.log(sys.smoothness.pieces) + log_v
    L = lipschitz if lipschitz is not None else sys.lipschitz
    if L is not None:
        if L < 0:
            raise BoundError("Lipschitz constant must be non-negative")
        out["lipschitz"] = log_v + 0.5 * n * _log_lipschitz_sum(float(L), l)
    if not out:
        raise BoundError(f"{sys.name}: Lipschitz constant needed to bound c")
    return out


def c_constant(sys: SystemDef, l: int, high_rate: bool = False,
               lipschitz: Optional[float] = None) -> tuple[float, str]:
    """Smallest applicable bound on ``c`` and the case it comes from."""
    if l < 1:
        raise BoundError("horizon l must be >= 1")
    if high_rate:
        return unit_ball_volume(sys.n), HIGH_RATE
    cands = c_candidates(sys, l, lipschitz)
    case = min(cands, key=lambda k: (cands[k], k))
    return math.exp(cands[case]), case


class LowerBound(NamedTuple):
    value: float
    s_argmax: float
    term1: float
    term2: float


def _check_finite(**vals):
    for k, v in vals.items():
        if not math.isfinite(v):
            raise BoundError(f"{k} is not finite")


def _term1(R: float, n: int, h: float) -> float:
    """``(n/2)(e^{-R+h-n/2}/Γ(1+n/2))^{2/n}`` without the ``1/(l c^{2/n})`` factor."""
    return 0.5 * n * math.exp((2.0 / n) * (-R + h - 0.5 * n - math.log(gamma_half(n))))


def _term2_log(R: float, n: int, s: float, hs: float) -> float:
    rate = R if math.isinf(s) else (s / (s - 1.0)) * R
    return (2.0 / n) * (-rate + hs)


def _max_term2(R: float, n: int, renyi: Mapping[float, float]) -> tuple[float, float]:
    if not renyi:
        raise BoundError("empty s-grid")
    best_s, best = None, -INF
    for s in sorted(renyi):
        if not s > 1:
            raise BoundError(f"Rényi order {s} outside (1, inf]")
        _check_finite(**{f"h_{s}": renyi[s]})
        v = _term2_log(R, n, s, renyi[s])
        if v > best:
            best_s, best = s, v
    return math.exp(best), best_s


def distortion_lower_bound(R: float, n: int, l: int, h: float, renyi: Mapping[float, float],
                           c: float) -> LowerBound:
    """Lower bound on the average distortion of any abstraction with ``e^R`` cells.

    ``renyi`` maps each order ``s`` in ``(1, inf]`` to ``h_s`` (``inf`` to ``h_inf``).
    """
    if not R > 0:
        raise BoundError("rate R must be > 0")
    if l < 1 or n < 1:
        raise BoundError("n and l must be >= 1")
    _check_finite(R=R, h=h, c=c)
    if c <= 0:
        raise BoundError("c must be > 0")
    scale = 1.0 / (l * c ** (2.0 / n))
    t1 = scale * _term1(R, n, h)
    e2, s_best = _max_term2(R, n, renyi)
    t2 = scale * e2
    return LowerBound(t1 + t2, s_best, t1, t2)


class RateBound(NamedTuple):
    value: float
    vacuous: bool


def rate_lower_bound(D: float, n: int, l: int, h: float, h_inf: float, c: float) -> RateBound:
    """Smallest rate compatible with average distortion ``D`` (the ``s = inf`` inverse).

    Negative values are clamped to 0 and flagged vacuous.
    """
    if not D > 0:
        raise BoundError("distortion D must be > 0")
    _check_finite(D=D, h=h, h_inf=h_inf, c=c)
    # D e^{2R/n} = (1/(l c^{2/n})) [(n/2) e^{2h/n - 1}/Γ^{2/n} + e^{2 h_inf/n}]
    inner = _term1(0.0, n, h) + math.exp((2.0 / n) * h_inf)
    R = 0.5 * n * (math.log(inner) - math.log(l) - (2.0 / n) * math.log(c)) - 0.5 * n * math.log(D)
    if R < 0:
        return RateBound(0.0, True)
    return RateBound(R, False)


# --- relaxed bounds ------------------------------------------------------------

VARIANTS = ("printed", "derived")


@dataclass
class RelaxedBound:
    value: float
    K: float
    case: str
    s_argmax: Optional[float]
    variant: str
    flags: list = field(default_factory=list)
    R_lower: Optional[float] = None


def relaxed_constant(kind: str, n: int, l: int, L: Optional[float] = None, M: Optional[int] = None,
                     variant: str = "printed") -> tuple[float, str, list]:
    """``K(l)`` of the dynamics-free bound: ``(value, case tag, flags)``.

    ``variant="printed"`` uses the stated formulas verbatim, including the
    vanishing numerator at ``L = 1`` and the negative one for ``L > 1``.
    ``variant="derived"`` uses ``1/(l^2 v^{2/n})`` at ``L = 1`` and
    ``(L^2-1)/(l L^{2l} v^{2/n})`` for ``L > 1``, which follow from the
    Lipschitz bound on ``c``.
    """
    if variant not in VARIANTS:
        raise BoundError(f"unknown variant {variant!r}")
    if l < 1 or n < 1:
        raise BoundError("n and l must be >= 1")
    v2n = unit_ball_volume(n) ** (2.0 / n)
    flags: list = []
    if kind in ("piecewise-affine", "affine"):
        M = 1 if kind == "affine" and M is None else M
        if M is None or M < 1:
            raise BoundError("piecewise-affine bound needs M >= 1")
        return 1.0 / (l * M ** (2.0 * l / n) * v2n), f"piecewise-affine(M={M})", flags
    if kind != "lipschitz":
        raise BoundError(f"unknown system class {kind!r}")
    if L is None or L < 0:
        raise BoundError("Lipschitz bound needs L >= 0")
    if L < 1:
        return (1.0 - L * L) / (l * v2n), "L<1", flags
    if L == 1:
        if variant == "printed":
            flags.append("K=0 (1-L^2 vanishes)")
            return 0.0, "L=1", flags
        return 1.0 / (l * l * v2n), "L=1", flags
    log_l2l = 2.0 * l * math.log(L)
    if variant == "printed":
        flags.append("K<0 (negative numerator for L>1)")
        return -(L * L - 1.0) * math.exp(-log_l2l) / (l * v2n), "L>1", flags
    return (L * L - 1.0) * math.exp(-log_l2l) / (l * v2n), "L>1", flags


def relaxed_bound(kind: str, n: int, l: int, R: float, h0: float, renyi0: Mapping[float, float],
                  L: Optional[float] = None, M: Optional[int] = None, D: Optional[float] = None,
                  variant: str = "printed", h_inf0: Optional[float] = None) -> RelaxedBound:
    """Dynamics-free lower bound ``K(l) (term1(h0) + max_s term2(h_s0))``.

    ``h0``/``renyi0`` are entropies of the initial state alone. When ``D`` is
    given, the ``s = inf`` rate form is also returned, using ``h_inf0`` or
    else ``renyi0[inf]``: the printed variant
    scales only the first term by ``K``, the derived one is the exact inverse.
    Non-positive bounds are clamped to 0 and flagged vacuous.
    """
    if not R > 0:
        raise BoundError("rate R must be > 0")
    K, case, flags = relaxed_constant(kind, n, l, L, M, variant)
    _check_finite(h0=h0)
    t1 = _term1(R, n, h0)
    e2, s_best = _max_term2(R, n, renyi0)
    value = K * (t1 + e2)
    if value <= 0:
        flags.append("vacuous")
        value = 0.0
    out = RelaxedBound(value, K, case, s_best, variant, flags)
    if D is not None:
        if not D > 0:
            raise BoundError("distortion D must be > 0")
        if h_inf0 is None:
            if INF not in renyi0:
                raise BoundError("rate form needs h_inf of the initial state")
            h_inf0 = renyi0[INF]
        t1_0 = _term1(0.0, n, h0)
        e_inf = math.exp((2.0 / n) * h_inf0)
        inner = K * t1_0 + e_inf if variant == "printed" else K * (t1_0 + e_inf)
        if inner <= 0:
            out.R_lower = 0.0
            flags.append("rate vacuous")
        else:
            R_lower = 0.5 * n * (math.log(inner) - math.log(D))
            if R_lower < 0:
                flags.append("rate vacuous")
            out.R_lower = max(R_lower, 0.0)
    return out


def uniform_initial_renyi(sys: SystemDef, s_grid: Sequence[float] = DEFAULT_S_GRID) -> tuple[float, dict]:
    """Entropies of a uniform initial state: every order equals ``log vol X``."""
    h0 = math.log(sys.domain.volume)
    return h0, {s: h0 for s in s_grid}


# --- reports and curves ---------------------------------------------------------

@dataclass
class RDBoundReport:
    n: int
    l: int
    R: float
    cells: float
    h: float
    h_inf: float
    renyi: dict
    c: float
    c_case: str
    term1: float
    term2: float
    s_argmax: float
    D_lower: float
    c_highrate: float
    term1_highrate: float
    term2_highrate: float
    s_argmax_highrate: float
    D_lower_highrate: float
    R_lower: Optional[float] = None
    relaxed: Optional[dict] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["renyi"] = [{"s": _s_json(s), "value": v} for s, v in sorted(self.renyi.items())]
        d["s_argmax"] = _s_json(self.s_argmax)
        d["s_argmax_highrate"] = _s_json(self.s_argmax_highrate)
        return d

    def csv_row(self) -> dict:
        return {
            "R_nats": self.R,
            "cells": self.cells,
            "D_lower": self.D_lower,
            "D_lower_highrate": self.D_lower_highrate,
            "s_argmax": _s_json(self.s_argmax),
            "term1": self.term1,
            "term2": self.term2,
            "h": self.h,
            "h_inf": self.h_inf,
            "c": self.c,
            "c_case": self.c_case,
        }


CSV_COLUMNS = ("R_nats", "cells", "D_lower", "D_lower_highrate", "s_argmax", "term1", "term2",
               "h", "h_inf", "c", "c_case")


def _s_json(s: float):
    return "inf" if math.isinf(s) else s


def bound_report(R: float, report: EntropyReport, l: int, c: float, c_case: str,
                 s_grid: Sequence[float] = DEFAULT_S_GRID, D: Optional[float] = None) -> RDBoundReport:
    n = report.n
    renyi = report.renyi_map(s_grid)
    main = distortion_lower_bound(R, n, l, report.h, renyi, c)
    v = unit_ball_volume(n)
    hr = distortion_lower_bound(R, n, l, report.h, renyi, v)
    R_lower = None
    if D is not None:
        R_lower = rate_lower_bound(D, n, l, report.h, report.h_inf, c).value
    cells = math.exp(R)
    if abs(cells - round(cells)) <= 1e-9 * cells:
        cells = float(round(cells))
    return RDBoundReport(
        n, l, R, cells, report.h, report.h_inf, renyi, c, c_case,
        main.term1, main.term2, main.s_argmax, main.value,
        v, hr.term1, hr.term2, hr.s_argmax, hr.value, R_lower,
    )


def rd_curve(sys: SystemDef, l: int, R_grid: Sequence[float], report: EntropyReport,
             s_grid: Sequence[float] = DEFAULT_S_GRID, lipschitz: Optional[float] = None) -> list[RDBoundReport]:
    """Bound reports along an increasing grid of rates."""
    R_grid = [float(r) for r in R_grid]
    if any(b <= a for a, b in zip(R_grid, R_grid[1:])):
        raise BoundError("R grid must be strictly increasing")
    if report.l != l or report.n != sys.n:
        raise BoundError("entropy report does not match the system and horizon")
    c, case = c_constant(sys, l, lipschitz=lipschitz)
    return [bound_report(R, report, l, c, case, s_grid) for R in R_grid]


def parse_rate(value) -> float:
    """Rate in nats from a number or a ``"cells=k"`` string."""
    if isinstance(value, str):
        text = value.strip()
        if text.startswith("cells="):
            k = float(text[len("cells="):])
            if k <= 1:
                raise BoundError("cells must be > 1 for a positive rate")
            return math.log(k)
        value = float(text)
    R = float(value)
    if not np.isfinite(R):
        raise BoundError("rate must be finite")
    return R
