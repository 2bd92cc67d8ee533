"""Differential and Rényi entropies of l-step trajectories.

With a uniform initial state on ``X`` the trajectory lives on an n-dimensional
manifold in ``R^{n l}`` and its density is the initial density divided by the
volume factor ``sqrt(det(J^T J))`` of the trajectory map. Hence

    h    = log vol X + E[½ log det]
    h_s  = log vol X + 1/(1-s) · log E[det^{-(s-1)/2}]
    h_∞  = log vol X + ½ ess inf log det

The last line is the ``s -> inf`` limit of ``h_s``, i.e. ``-log ess sup p``;
the density peaks where the volume factor is smallest. ``renyi_sup`` also
offers the ess-sup variant ``log vol X + ½ ess sup log det``, which is larger
whenever the determinant varies and so is not a limit of ``h_s``.

Expectations are Monte Carlo over uniform initial states; all values are nats.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import SystemDef, gram_logdets, jacobian_chains
from .geometry import BoxRegion
from .rng import mean_and_stderr, sample_map

CLOSED_FORM = "closed-form"
SAMPLE_MAX_NOTE = "sample-max (lower estimate of ess sup)"
SAMPLE_MIN_NOTE = "sample-min (upper estimate of ess inf)"


@dataclass
class RenyiValue:
    s: float
    value: float
    stderr: float = 0.0


@dataclass
class EntropyReport:
    n: int
    l: int
    h: float
    stderr_h: float
    renyi: list[RenyiValue]
    h_inf: float
    log_volume: float
    method: dict = field(default_factory=dict)
    samples: Optional[int] = None
    seed: Optional[int] = None
    h_sup: Optional[float] = None

    def renyi_value(self, s: float) -> float:
        """``h_s`` for a finite ``s`` in the report, or ``h_inf`` for ``s = inf``."""
        if math.isinf(s):
            return self.h_inf
        for r in self.renyi:
            if r.s == s:
                return r.value
        raise KeyError(f"no Rényi entropy for s={s} in this report")

    def renyi_map(self, s_grid: Sequence[float]) -> dict:
        return {s: self.renyi_value(s) for s in s_grid}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["renyi"] = [asdict(r) for r in self.renyi]
        return d


def _check_l(l: int):
    if l < 1:
        raise ValueError("horizon l must be >= 1")


def logdet_samples(sys: SystemDef, l: int, samples: int, seed: int, workers: int = 1) -> np.ndarray:
    """``log det(J^T J)`` of the trajectory map at uniform initial states."""
    _check_l(l)

    def block(x0):
        _, J = jacobian_chains(sys, x0, l)
        return gram_logdets(J)

    return sample_map(sys.domain, samples, seed, block, workers)


def _mean_entropy(logvol: float, logdets: np.ndarray) -> tuple[float, float]:
    mean, se = mean_and_stderr(logdets)
    return logvol + 0.5 * mean, 0.5 * se


def _renyi_from_logdets(logvol: float, logdets: np.ndarray, s: float) -> tuple[float, float]:
    if not s > 1 or math.isinf(s):
        raise ValueError("Rényi order must be finite and > 1")
    a = -0.5 * (s - 1.0) * logdets
    amax = float(np.max(a))
    y = np.exp(a - amax)
    mean, se = mean_and_stderr(y)
    value = logvol + (amax + math.log(mean)) / (1.0 - s)
    # delta method through the log
    return value, abs(1.0 / (1.0 - s)) * se / mean


def _constant(logdets: np.ndarray) -> bool:
    spread = float(np.max(logdets) - np.min(logdets))
    return spread <= 1e-12 * (1.0 + float(np.max(np.abs(logdets))))


def entropy_mc(sys: SystemDef, l: int, samples: int, seed: int, workers: int = 1) -> tuple[float, float]:
    if samples < 2:
        raise ValueError("samples must be >= 2")
    return _mean_entropy(math.log(sys.domain.volume), logdet_samples(sys, l, samples, seed, workers))


def renyi_mc(sys: SystemDef, l: int, s: float, samples: int, seed: int, workers: int = 1) -> tuple[float, float]:
    if not s > 1 or math.isinf(s):
        raise ValueError("Rényi order must be finite and > 1")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    return _renyi_from_logdets(math.log(sys.domain.volume), logdet_samples(sys, l, samples, seed, workers), s)


def _vertex_logdets(sys: SystemDef, l: int) -> np.ndarray:
    _, J = jacobian_chains(sys, sys.domain.vertices(), l)
    return gram_logdets(J)


def renyi_sup(sys: SystemDef, l: int, samples: int, seed: int, workers: int = 1) -> tuple[float, str]:
    """Ess-sup variant ``log vol X + ½ max log det`` over samples and domain vertices.

    Returned with a method note: exact when the log-det is constant over the
    samples (affine pieces), otherwise a lower estimate of the essential sup.
    Equals ``h_inf`` only when the determinant is constant.
    """
    ld = np.concatenate([logdet_samples(sys, l, samples, seed, workers), _vertex_logdets(sys, l)])
    value = math.log(sys.domain.volume) + 0.5 * float(np.max(ld))
    return value, (CLOSED_FORM if _constant(ld) else SAMPLE_MAX_NOTE)


def renyi_limit(sys: SystemDef, l: int, samples: int, seed: int, workers: int = 1) -> tuple[float, str]:
    """``h_inf = log vol X + ½ min log det`` over samples and domain vertices, with a method note."""
    ld = np.concatenate([logdet_samples(sys, l, samples, seed, workers), _vertex_logdets(sys, l)])
    value = math.log(sys.domain.volume) + 0.5 * float(np.min(ld))
    return value, (CLOSED_FORM if _constant(ld) else SAMPLE_MIN_NOTE)


def entropy_report(sys: SystemDef, l: int, s_grid: Sequence[float], samples: int, seed: int,
                   workers: int = 1) -> EntropyReport:
    """All trajectory entropies from one shared set of Monte Carlo samples."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    logvol = math.log(sys.domain.volume)
    ld = logdet_samples(sys, l, samples, seed, workers)
    h, se = _mean_entropy(logvol, ld)
    renyi = [RenyiValue(s, *_renyi_from_logdets(logvol, ld, s)) for s in s_grid if not math.isinf(s)]
    all_ld = np.concatenate([ld, _vertex_logdets(sys, l)])
    h_inf = logvol + 0.5 * float(np.min(all_ld))
    h_sup = logvol + 0.5 * float(np.max(all_ld))
    mc = f"monte-carlo(samples={samples}, seed={seed})"
    const = _constant(all_ld)
    method = {
        "h": mc,
        "renyi": mc,
        "h_inf": CLOSED_FORM if const else f"{SAMPLE_MIN_NOTE}, samples={samples}+vertices",
        "h_sup": CLOSED_FORM if const else f"{SAMPLE_MAX_NOTE}, samples={samples}+vertices",
    }
    return EntropyReport(sys.n, l, h, se, renyi, h_inf, logvol, method, samples, seed, h_sup)


def _closed(n: int, l: int, logvol: float, half_logdet: float, s_grid: Sequence[float]) -> EntropyReport:
    v = logvol + half_logdet
    renyi = [RenyiValue(s, v, 0.0) for s in s_grid if not math.isinf(s)]
    method = {"h": CLOSED_FORM, "renyi": CLOSED_FORM, "h_inf": CLOSED_FORM, "h_sup": CLOSED_FORM}
    return EntropyReport(n, l, v, 0.0, renyi, v, logvol, method, h_sup=v)


def lti_gram(A: np.ndarray, l: int) -> np.ndarray:
    """``sum_{i<l} (A^i)^T A^i``, the Gram matrix of the stacked LTI trajectory map."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.zeros_like(A)
    P = np.eye(len(A))
    for _ in range(l):
        G += P.T @ P
        P = A @ P
    return G


def entropy_closed_form(kind: str, params: Optional[dict], l: int,
                        s_grid: Sequence[float] = (2.0,)) -> EntropyReport:
    """Exact entropies where ``det(J^T J)`` is constant over the domain.

    ``kind`` is ``doubling``, ``identity`` (params ``n``, optional ``domain``)
    or ``lti-schur`` (params ``A``, optional ``domain``).
    """
    _check_l(l)
    params = dict(params or {})
    if kind == "doubling":
        return _closed(1, l, 0.0, 0.5 * math.log((4.0**l - 1.0) / 3.0), s_grid)
    if kind == "identity":
        n = int(params.get("n", 1))
        dom = params.get("domain")
        logvol = math.log(BoxRegion.from_bounds(dom).volume) if dom is not None else 0.0
        return _closed(n, l, logvol, 0.5 * n * math.log(l), s_grid)
    if kind == "lti-schur":
        if "A" not in params:
            raise ValueError("lti-schur closed form needs a matrix 'A'")
        A = np.atleast_2d(np.asarray(params["A"], dtype=float))
        n = len(A)
        dom = params.get("domain")
        box = BoxRegion.from_bounds(dom) if dom is not None else BoxRegion((-1.0,) * n, (1.0,) * n)
        if box.dim != n:
            raise ValueError("domain dimension does not match A")
        sign, logdet = np.linalg.slogdet(lti_gram(A, l))
        if sign <= 0:
            raise ValueError("LTI Gram matrix is singular")
        return _closed(n, l, math.log(box.volume), 0.5 * float(logdet), s_grid)
    raise ValueError(f"no closed form for kind {kind!r}")


def closed_form_for(sys: SystemDef, l: int, s_grid: Sequence[float] = (2.0,)) -> Optional[EntropyReport]:
    """Closed-form report for built-ins that have one, else ``None``."""
    desc = sys.description.get("builtin")
    if desc == "doubling":
        return entropy_closed_form("doubling", None, l, s_grid)
    if desc == "identity":
        return entropy_closed_form("identity", {"n": sys.n, "domain": sys.domain.to_list()}, l, s_grid)
    if sys.smoothness.kind == "affine" and sys.affine_pieces:
        A = sys.affine_pieces[0].A
        return entropy_closed_form("lti-schur", {"A": A, "domain": sys.domain.to_list()}, l, s_grid)
    return None
