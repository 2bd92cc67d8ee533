"""System definitions, trajectory maps and Jacobian chains.

Every system exposes batched callables: ``f`` maps an ``(m, n)`` array of
states to their successors and ``jac`` returns the ``(m, n, n)`` Jacobians.
Built-ins carry closed forms; DSL systems go through :mod:`finabs.exprdsl`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import exprdsl
from .geometry import BoxRegion
from .rng import sample_map

log = logging.getLogger(__name__)

SMOOTHNESS_CLASSES = ("affine", "piecewise-affine", "lipschitz")
DOMAIN_TOL = 1e-12


class SystemDefError(ValueError):
    """Invalid system definition or parameters."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed factorisation during computation."""


@dataclass(frozen=True)
class AffinePiece:
    """``x+ = A x + b`` on ``region`` (half-open, closed on the domain's upper faces)."""

    region: BoxRegion
    A: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class Smoothness:
    kind: str
    pieces: Optional[int] = None  # M, for piecewise-affine
    lipschitz: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SMOOTHNESS_CLASSES:
            raise SystemDefError(f"unknown smoothness class {self.kind!r}")
        if self.kind == "piecewise-affine" and (self.pieces is None or self.pieces < 1):
            raise SystemDefError("piecewise-affine systems need a piece count M >= 1")
        if self.lipschitz is not None and self.lipschitz < 0:
            raise SystemDefError("Lipschitz constant must be non-negative")


@dataclass(frozen=True, eq=False)
class SystemDef:
    name: str
    n: int
    domain: BoxRegion
    smoothness: Smoothness
    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    description: dict = field(default_factory=dict)
    exprs: Optional[tuple] = None
    affine_pieces: Optional[tuple] = None

    @property
    def lipschitz(self) -> Optional[float]:
        return self.smoothness.lipschitz

    def fingerprint(self) -> dict:
        return {"name": self.name, "n": self.n, "domain": self.domain.to_list(), **self.description}


@dataclass
class TrajectoryMatrix:
    """An ``l``-step trajectory; ``jacobian`` is the stacked ``(n*l, n)`` matrix when requested."""

    l: int
    states: np.ndarray
    jacobian: Optional[np.ndarray] = None
    escapes: int = 0

    @property
    def flat(self) -> np.ndarray:
        return self.states.reshape(-1)


# --- built-ins -------------------------------------------------------------

def _as_batch(x: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, n)


def doubling() -> SystemDef:
    def f(x):
        y = 2.0 * x
        return y - np.floor(y)

    def jac(x):
        return np.full((len(x), 1, 1), 2.0)

    pieces = (
        AffinePiece(BoxRegion((0.0,), (0.5,)), np.array([[2.0]]), np.array([0.0])),
        AffinePiece(BoxRegion((0.5,), (1.0,)), np.array([[2.0]]), np.array([-1.0])),
    )
    return SystemDef(
        "doubling", 1, BoxRegion.unit(1), Smoothness("piecewise-affine", 2, 2.0), f, jac,
        {"builtin": "doubling"}, (exprdsl.parse("mod1(2*x1)", 1),), pieces,
    )


def square() -> SystemDef:
    return SystemDef(
        "square", 1, BoxRegion.unit(1), Smoothness("lipschitz"),
        lambda x: x * x, lambda x: (2.0 * x).reshape(-1, 1, 1),
        {"builtin": "square"}, (exprdsl.parse("x1^2", 1),),
    )


def lti(A, domain: Optional[BoxRegion] = None, name: str = "lti") -> SystemDef:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise SystemDefError(f"LTI matrix must be square, got shape {A.shape}")
    domain = domain or BoxRegion((-1.0,) * n, (1.0,) * n)
    if domain.dim != n:
        raise SystemDefError("domain dimension does not match A")
    return SystemDef(
        name, n, domain, Smoothness("affine"),
        lambda x: x @ A.T, lambda x: np.broadcast_to(A, (len(x), n, n)).copy(),
        {"builtin": name, "A": A.tolist()}, None,
        (AffinePiece(domain, A, np.zeros(n)),),
    )


def identity(n: int = 1, domain: Optional[BoxRegion] = None) -> SystemDef:
    sys = lti(np.eye(n), domain or BoxRegion.unit(n), name="identity")
    desc = {"builtin": "identity", "n": n}
    return SystemDef(sys.name, n, sys.domain, Smoothness("affine", lipschitz=1.0), sys.f, sys.jac,
                     desc, None, sys.affine_pieces)


NONLINEAR3D = ("0.9*x1 + 0.1*sin(x2)", "2*x2^3 - x2", "0.9*x3 + 0.1*x1*x2")


def nonlinear3d() -> SystemDef:
    def f(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([0.9 * x1 + 0.1 * np.sin(x2), 2.0 * x2**3 - x2, 0.9 * x3 + 0.1 * x1 * x2], axis=1)

    def jac(x):
        x1, x2 = x[:, 0], x[:, 1]
        J = np.zeros((len(x), 3, 3))
        J[:, 0, 0] = 0.9
        J[:, 0, 1] = 0.1 * np.cos(x2)
        J[:, 1, 1] = 6.0 * x2**2 - 1.0
        J[:, 2, 0] = 0.1 * x2
        J[:, 2, 1] = 0.1 * x1
        J[:, 2, 2] = 0.9
        return J

    return SystemDef(
        "nonlinear3d", 3, BoxRegion((-1.0,) * 3, (1.0,) * 3), Smoothness("lipschitz"), f, jac,
        {"builtin": "nonlinear3d"}, tuple(exprdsl.parse(t, 3) for t in NONLINEAR3D),
    )


def _piece_mask(region: BoxRegion, domain: BoxRegion, x: np.ndarray) -> np.ndarray:
    lo, hi = np.asarray(region.lo), np.asarray(region.hi)
    upper_closed = hi >= np.asarray(domain.hi)
    inside = (x >= lo) & ((x < hi) | (upper_closed & (x <= hi)))
    return inside.all(axis=1)


def piecewise_affine(pieces: Sequence[AffinePiece], domain: BoxRegion,
                     lipschitz: Optional[float] = None) -> SystemDef:
    pieces = tuple(pieces)
    if not pieces:
        raise SystemDefError("piecewise-affine system needs at least one piece")
    n = domain.dim
    for p in pieces:
        if p.A.shape != (n, n) or p.b.shape != (n,) or p.region.dim != n:
            raise SystemDefError("piece shapes do not match the domain dimension")

    def which(x):
        idx = np.full(len(x), -1)
        for k, p in enumerate(pieces):
            m = (idx < 0) & _piece_mask(p.region, domain, x)
            idx[m] = k
        # points in no piece (gaps between regions) go to the nearest piece
        missing = idx < 0
        if np.any(missing):
            dist = np.stack([np.linalg.norm(x[missing] - p.region.clamp(x[missing]), axis=1) for p in pieces])
            idx[missing] = np.argmin(dist, axis=0)
        return idx

    def f(x):
        idx = which(x)
        out = np.empty_like(x)
        for k, p in enumerate(pieces):
            m = idx == k
            out[m] = x[m] @ p.A.T + p.b
        return out

    def jac(x):
        idx = which(x)
        J = np.empty((len(x), n, n))
        for k, p in enumerate(pieces):
            J[idx == k] = p.A
        return J

    if lipschitz is None:
        lipschitz = max(float(np.linalg.norm(p.A, 2)) for p in pieces)
    desc = {
        "builtin": "piecewise-affine",
        "pieces": [{"region": p.region.to_list(), "A": p.A.tolist(), "b": p.b.tolist()} for p in pieces],
    }
    return SystemDef("piecewise-affine", n, domain, Smoothness("piecewise-affine", len(pieces), lipschitz),
                     f, jac, desc, None, pieces)


def from_expressions(texts: Sequence[str], domain: BoxRegion, smoothness: Smoothness,
                     name: str = "dsl") -> SystemDef:
    n = domain.dim
    if len(texts) != n:
        raise SystemDefError(f"need {n} expressions for a {n}-dimensional domain, got {len(texts)}")
    exprs = tuple(exprdsl.parse(t, n) for t in texts)

    def f(x):
        cols = [x[:, i] for i in range(n)]
        return np.stack([np.broadcast_to(exprdsl.evaluate(e, cols), (len(x),)) for e in exprs], axis=1)

    def jac(x):
        rows = [exprdsl.gradient(e, x.T)[1] for e in exprs]  # each (n, m)
        return np.stack(rows, axis=0).transpose(2, 0, 1).copy()

    return SystemDef(name, n, domain, smoothness, f, jac,
                     {"expressions": list(texts)}, exprs)


BUILTINS = ("doubling", "square", "identity", "lti", "nonlinear3d", "piecewise-affine")


def builtin(name: str, **params) -> SystemDef:
    domain = params.get("domain")
    if domain is not None and not isinstance(domain, BoxRegion):
        domain = BoxRegion.from_bounds(domain)
    if name == "doubling":
        return doubling()
    if name == "square":
        return square()
    if name == "identity":
        return identity(int(params.get("n", domain.dim if domain else 1)), domain)
    if name == "lti":
        if "A" not in params:
            raise SystemDefError("lti needs a matrix 'A'")
        return lti(params["A"], domain)
    if name == "nonlinear3d":
        return nonlinear3d()
    if name == "piecewise-affine":
        if domain is None:
            raise SystemDefError("piecewise-affine needs a 'domain'")
        pieces = [
            AffinePiece(BoxRegion.from_bounds(p["region"]), np.atleast_2d(np.asarray(p["A"], float)),
                        np.asarray(p["b"], float).reshape(-1))
            for p in params.get("pieces", [])
        ]
        return piecewise_affine(pieces, domain, params.get("L"))
    raise SystemDefError(f"unknown builtin system {name!r}; expected one of {BUILTINS}")


# --- operations ------------------------------------------------------------

def step_batch(sys: SystemDef, x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.asarray(sys.f(x), dtype=float)
    if not np.all(np.isfinite(y)):
        raise NumericError(f"{sys.name}: non-finite successor state")
    return y


def step(sys: SystemDef, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(sys.n)
    if not sys.domain.contains(x):
        if sys.domain.contains(x, DOMAIN_TOL):
            log.warning("state %s marginally outside the domain of %s", x, sys.name)
        else:
            raise SystemDefError(f"state {x} outside the domain of {sys.name}")
    return step_batch(sys, x[None, :])[0]


def trajectories(sys: SystemDef, x0: np.ndarray, l: int) -> tuple[np.ndarray, int]:
    """States ``(m, l, n)`` for a batch of initial states, plus the escape count.

    Successors leaving the domain are clamped back onto it and counted.
    """
    if l < 1:
        raise ValueError("horizon l must be >= 1")
    x = _as_batch(x0, sys.n)
    out = np.empty((len(x), l, sys.n))
    out[:, 0] = x
    escapes = 0
    lo, hi = np.asarray(sys.domain.lo), np.asarray(sys.domain.hi)
    for t in range(1, l):
        x = step_batch(sys, x)
        outside = np.any((x < lo - DOMAIN_TOL) | (x > hi + DOMAIN_TOL), axis=1)
        escapes += int(np.count_nonzero(outside))
        x = np.clip(x, lo, hi)
        out[:, t] = x
    return out, escapes


def behavior(sys: SystemDef, x0, l: int) -> TrajectoryMatrix:
    states, escapes = trajectories(sys, np.asarray(x0, dtype=float).reshape(1, sys.n), l)
    return TrajectoryMatrix(l, states[0], None, escapes)


def jacobian_chains(sys: SystemDef, x0: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """States ``(m, l, n)`` and stacked Jacobians ``(m, n*l, n)`` of the trajectory map."""
    states, _ = trajectories(sys, x0, l)
    m, n = states.shape[0], sys.n
    J = np.empty((m, n * l, n))
    P = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    J[:, :n] = P
    for t in range(1, l):
        P = np.asarray(sys.jac(states[:, t - 1]), dtype=float) @ P
        J[:, t * n:(t + 1) * n] = P
    return states, J


def jacobian_chain(sys: SystemDef, x0, l: int) -> TrajectoryMatrix:
    states, J = jacobian_chains(sys, np.asarray(x0, dtype=float).reshape(1, sys.n), l)
    return TrajectoryMatrix(l, states[0], J[0])


def gram_logdets(J: np.ndarray) -> np.ndarray:
    """``log det(J^T J)`` for a batch of stacked Jacobians ``(..., n*l, n)``."""
    G = np.swapaxes(J, -1, -2) @ J
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Gram matrix not positive definite; the Jacobian stack lost rank") from exc
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def log_det_gram(J) -> float:
    return float(gram_logdets(np.asarray(J, dtype=float)[None])[0])


def spectral_norms(M: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Largest singular value of each matrix in a batch ``(m, p, q)`` by power iteration."""
    M = np.asarray(M, dtype=float)
    G = np.swapaxes(M, -1, -2) @ M
    q = G.shape[-1]
    v = np.broadcast_to(np.linspace(1.0, 1.7, q) / np.linalg.norm(np.linspace(1.0, 1.7, q)), G.shape[:-1]).copy()
    lam = np.zeros(G.shape[0])
    for _ in range(max_iter):
        w = np.einsum("mij,mj->mi", G, v)
        new = np.linalg.norm(w, axis=1)
        zero = new == 0
        if np.any(zero):
            # v in the null space; restart those from a generic direction
            w[zero] = np.linspace(1.0, 2.0, q)
            new[zero] = 0.0
        v = w / np.linalg.norm(w, axis=1, keepdims=True)
        done = np.abs(new - lam) <= tol * np.maximum(new, 1.0)
        lam = new
        if np.all(done):
            break
    return np.sqrt(lam)


def lipschitz_estimate(sys: SystemDef, samples: int = 10_000, seed: int = 0, workers: int = 1) -> float:
    """Sup of the Jacobian spectral norm over uniform samples and the domain vertices."""
    if sys.lipschitz is not None:
        return float(sys.lipschitz)
    if samples < 1:
        raise ValueError("samples must be >= 1")

    def block(x):
        return spectral_norms(sys.jac(x))

    norms = sample_map(sys.domain, samples, seed, block, workers)
    corners = spectral_norms(sys.jac(sys.domain.vertices()))
    return float(max(norms.max(), corners.max()))


def resolve_lipschitz(sys: SystemDef, samples: int = 10_000, seed: int = 0) -> tuple[float, str]:
    if sys.lipschitz is not None:
        return float(sys.lipschitz), "exact"
    return lipschitz_estimate(sys, samples, seed), f"estimated(samples={samples}, seed={seed})"
