"""Uniform-grid abstractions: partitions, transition relations and distortion.

Cells are half-open ``[lo, hi)`` on every axis except the last slab, which is
closed, so each point of the domain belongs to exactly one cell. Transition
relations are stored in CSR form (``indptr``/``indices``) with sorted rows.

The abstraction output for an initial cell is the set of all cell paths of
length ``l`` starting there. It is never enumerated: the worst-case distortion
is a longest-path dynamic programme over (time, cell), which is exact because
the supremum of a squared distance over a product of boxes splits per
coordinate and per time step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import exprdsl
from .dynamics import SystemDef, trajectories
from .geometry import BoxRegion, Interval
from .rng import block_sizes, map_ordered, uniform_block

ABSTRACTION_FORMAT = "finabs.abstraction"
ABSTRACTION_VERSION = 1
DENSE_EDGE_LIMIT = 50_000
DENSE_CHUNK_ENTRIES = 2_000_000


class AbstractionError(ValueError):
    pass


class UniformGrid:
    """Uniform partition of a box into ``counts[i]`` slabs along axis ``i``."""

    def __init__(self, domain: BoxRegion, counts: Sequence[int]):
        counts = tuple(int(c) for c in counts)
        if len(counts) != domain.dim:
            raise AbstractionError(f"need {domain.dim} cell counts, got {len(counts)}")
        if any(c < 1 for c in counts):
            raise AbstractionError("cell counts must be >= 1")
        if np.any(domain.widths <= 0):
            raise AbstractionError("domain has a zero-width axis")
        self.domain = domain
        self.counts = counts
        self.edges = []
        for lo, hi, c in zip(domain.lo, domain.hi, counts):
            e = lo + np.arange(c + 1) * ((hi - lo) / c)
            e[-1] = hi
            self.edges.append(e)
        self.n_cells = int(np.prod(counts))
        self._multi = None

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def multi(self) -> np.ndarray:
        """``(n_cells, dim)`` per-axis indices of every flat cell index."""
        if self._multi is None:
            self._multi = np.stack(np.unravel_index(np.arange(self.n_cells), self.counts), axis=1)
        return self._multi

    def cell(self, i: int) -> BoxRegion:
        idx = np.unravel_index(int(i), self.counts)
        lo = tuple(float(self.edges[a][j]) for a, j in enumerate(idx))
        hi = tuple(float(self.edges[a][j + 1]) for a, j in enumerate(idx))
        return BoxRegion(lo, hi)

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.multi
        lo = np.stack([self.edges[a][m[:, a]] for a in range(self.dim)], axis=1)
        hi = np.stack([self.edges[a][m[:, a] + 1] for a in range(self.dim)], axis=1)
        return lo, hi

    def axis_index(self, axis: int, values: np.ndarray) -> np.ndarray:
        e = self.edges[axis]
        # half-open slabs: j with e[j] <= v < e[j+1]; the last slab also takes v == hi
        j = np.searchsorted(e, values, side="right") - 1
        return np.clip(j, 0, self.counts[axis] - 1)

    def encode(self, x) -> np.ndarray:
        """Flat cell index of each point in a batch ``(m, dim)``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        lo, hi = np.asarray(self.domain.lo), np.asarray(self.domain.hi)
        if np.any((x < lo) | (x > hi)):
            raise AbstractionError("point outside the grid domain")
        idx = [self.axis_index(a, x[:, a]) for a in range(self.dim)]
        return np.ravel_multi_index(idx, self.counts)

    def encode_point(self, x) -> int:
        return int(self.encode(x)[0])

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_list(), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> UniformGrid:
        return cls(BoxRegion.from_bounds(d["domain"]), d["counts"])


def build_partition(domain: BoxRegion, counts: Sequence[int]) -> UniformGrid:
    return UniformGrid(domain, counts)


@dataclass
class TransitionRelation:
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_transitions(self) -> int:
        return int(self.indptr[-1])

    def successors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i in range(self.n_cells) for j in self.successors(i)]

    def edge_keys(self) -> np.ndarray:
        src = np.repeat(np.arange(self.n_cells), np.diff(self.indptr))
        return src.astype(np.int64) * self.n_cells + self.indices

    def contains(self, src, dst) -> np.ndarray:
        keys = np.asarray(src, dtype=np.int64) * self.n_cells + np.asarray(dst, dtype=np.int64)
        table = self.edge_keys()
        pos = np.clip(np.searchsorted(table, keys), 0, max(len(table) - 1, 0))
        return (len(table) > 0) & (table[pos] == keys)

    def without(self, src: int, dst: int) -> TransitionRelation:
        """Copy with one transition removed (for fault-injection checks)."""
        rows = [self.successors(i) for i in range(self.n_cells)]
        rows[src] = rows[src][rows[src] != dst]
        return TransitionRelation.from_rows(rows)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> TransitionRelation:
        rows = [np.unique(np.asarray(r, dtype=np.int64)) for r in rows]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        return cls(indptr, indices.astype(np.int64))

    def to_rows(self) -> list[list[int]]:
        return [self.successors(i).tolist() for i in range(self.n_cells)]


# --- transitions --------------------------------------------------------------

def _closure_ranges(grid: UniformGrid, lo: np.ndarray, hi: np.ndarray):
    """Per-axis index ranges of cells whose closure meets the boxes ``[lo, hi]``."""
    jlo, jhi = [], []
    for a in range(grid.dim):
        e, c = grid.edges[a], grid.counts[a]
        first = np.searchsorted(e[1:], lo[:, a], side="left")  # first j with e[j+1] >= lo
        last = np.searchsorted(e, hi[:, a], side="right") - 1  # last j with e[j] <= hi
        # images leaving the domain are clamped onto it (escaping states are clamped too)
        first = np.minimum(first, c - 1)
        last = np.maximum(last, 0)
        last = np.maximum(last, first)
        jlo.append(first)
        jhi.append(np.minimum(last, c - 1))
    return np.stack(jlo, axis=1), np.stack(jhi, axis=1)


def _cells_in_ranges(grid: UniformGrid, jlo: np.ndarray, jhi: np.ndarray) -> np.ndarray:
    axes = [np.arange(a, b + 1) for a, b in zip(jlo, jhi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.ravel_multi_index([m.ravel() for m in mesh], grid.counts)


def _affine_image(lo, hi, A, b):
    """Bounding box of ``A x + b`` over boxes ``[lo, hi]`` (batched), outward padded."""
    lo_t = A[None, :, :] * lo[:, None, :]
    hi_t = A[None, :, :] * hi[:, None, :]
    mn, mx = np.minimum(lo_t, hi_t), np.maximum(lo_t, hi_t)
    out_lo = mn.sum(axis=2) + b
    out_hi = mx.sum(axis=2) + b
    mag = np.abs(mn).sum(axis=2) + np.abs(mx).sum(axis=2) + np.abs(b)
    pad = (A.shape[1] + 2) * np.finfo(float).eps * mag
    return out_lo - pad, out_hi + pad


def _image_boxes(sys: SystemDef, lo: np.ndarray, hi: np.ndarray):
    """List of (mask, image_lo, image_hi) covering the images of boxes ``[lo, hi]``."""
    if sys.affine_pieces:
        parts = []
        for p in sys.affine_pieces:
            plo = np.maximum(lo, np.asarray(p.region.lo))
            phi = np.minimum(hi, np.asarray(p.region.hi))
            mask = np.all(plo <= phi, axis=1)
            ilo, ihi = _affine_image(np.where(mask[:, None], plo, lo), np.where(mask[:, None], phi, hi), p.A, p.b)
            parts.append((mask, ilo, ihi))
        return parts
    if sys.exprs is None:
        raise AbstractionError(f"system {sys.name} has no interval extension")
    env = [Interval(lo[:, a], hi[:, a]) for a in range(sys.n)]
    ilo = np.empty_like(lo)
    ihi = np.empty_like(hi)
    for k, e in enumerate(sys.exprs):
        out = exprdsl.evaluate(e, env)
        if not isinstance(out, Interval):
            out = Interval(out, out)
        ilo[:, k] = np.broadcast_to(out.lo, (len(lo),))
        ihi[:, k] = np.broadcast_to(out.hi, (len(lo),))
    return [(np.ones(len(lo), dtype=bool), ilo, ihi)]


def _split_boxes(lo: np.ndarray, hi: np.ndarray, depth: int):
    """Subdivide every box into ``2**depth`` pieces per axis; returns bounds and parent ids."""
    if depth <= 0:
        return lo, hi, np.arange(len(lo))
    k = 2**depth
    n = lo.shape[1]
    grids = np.stack(np.meshgrid(*([np.arange(k)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    w = (hi - lo) / k
    sub_lo = lo[:, None, :] + grids[None, :, :] * w[:, None, :]
    sub_hi = lo[:, None, :] + (grids[None, :, :] + 1) * w[:, None, :]
    sub_hi = np.where(grids[None, :, :] == k - 1, hi[:, None, :], sub_hi)
    parent = np.repeat(np.arange(len(lo)), len(grids))
    return sub_lo.reshape(-1, n), sub_hi.reshape(-1, n), parent


def _closure_transitions(sys: SystemDef, grid: UniformGrid, split_depth: int, workers: int):
    lo, hi = grid.cell_bounds()
    slo, shi, parent = _split_boxes(lo, hi, split_depth)
    rows: list[list[np.ndarray]] = [[] for _ in range(grid.n_cells)]
    for mask, ilo, ihi in _image_boxes(sys, slo, shi):
        jlo, jhi = _closure_ranges(grid, ilo, ihi)
        sel = np.flatnonzero(mask)

        def cells(k: int) -> np.ndarray:
            i = sel[k]
            return _cells_in_ranges(grid, jlo[i], jhi[i])

        for i, succ in zip(sel, map_ordered(cells, len(sel), workers)):
            rows[parent[i]].append(succ)
    return TransitionRelation.from_rows(
        [np.concatenate(r) if r else np.zeros(0, dtype=np.int64) for r in rows]
    )


# exact (half-open) images for affine pieces, in rational arithmetic

def _frac(x) -> Fraction:
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class _Ival:
    lo: Fraction
    lo_closed: bool
    hi: Fraction
    hi_closed: bool

    def meet(self, o: "_Ival") -> Optional["_Ival"]:
        if self.lo > o.lo:
            lo, lc = self.lo, self.lo_closed
        elif o.lo > self.lo:
            lo, lc = o.lo, o.lo_closed
        else:
            lo, lc = self.lo, self.lo_closed and o.lo_closed
        if self.hi < o.hi:
            hi, hc = self.hi, self.hi_closed
        elif o.hi < self.hi:
            hi, hc = o.hi, o.hi_closed
        else:
            hi, hc = self.hi, self.hi_closed and o.hi_closed
        if lo < hi or (lo == hi and lc and hc):
            return _Ival(lo, lc, hi, hc)
        return None


def _exact_transitions(sys: SystemDef, grid: UniformGrid) -> TransitionRelation:
    if not sys.affine_pieces:
        raise AbstractionError("exact transitions need an affine or piecewise-affine system")
    n = grid.dim
    dom_hi = [_frac(v) for v in grid.domain.hi]
    dom_lo = [_frac(v) for v in grid.domain.lo]
    edges = [
        [dom_lo[a] + j * (dom_hi[a] - dom_lo[a]) / grid.counts[a] for j in range(grid.counts[a] + 1)]
        for a in range(n)
    ]

    def slab(a: int, j: int) -> _Ival:
        return _Ival(edges[a][j], True, edges[a][j + 1], j == grid.counts[a] - 1)

    pieces = []
    for p in sys.affine_pieces:
        region = [
            _Ival(_frac(p.region.lo[a]), True, _frac(p.region.hi[a]), _frac(p.region.hi[a]) >= dom_hi[a])
            for a in range(n)
        ]
        A = [[_frac(v) for v in row] for row in p.A]
        b = [_frac(v) for v in p.b]
        diagonal = all(A[r][c] == 0 for r in range(n) for c in range(n) if r != c)
        pieces.append((region, A, b, diagonal))

    def image(box: list[_Ival], A, b, diagonal) -> list[_Ival]:
        out = []
        for r in range(n):
            if diagonal:
                a, iv = A[r][r], box[r]
                if a > 0:
                    out.append(_Ival(a * iv.lo + b[r], iv.lo_closed, a * iv.hi + b[r], iv.hi_closed))
                elif a < 0:
                    out.append(_Ival(a * iv.hi + b[r], iv.hi_closed, a * iv.lo + b[r], iv.lo_closed))
                else:
                    out.append(_Ival(b[r], True, b[r], True))
            else:
                lo = b[r] + sum(min(A[r][c] * box[c].lo, A[r][c] * box[c].hi) for c in range(n))
                hi = b[r] + sum(max(A[r][c] * box[c].lo, A[r][c] * box[c].hi) for c in range(n))
                out.append(_Ival(lo, True, hi, True))
        return out

    def hits(a: int, iv: _Ival) -> list[int]:
        c = grid.counts[a]
        iv = iv.meet(_Ival(dom_lo[a], True, dom_hi[a], True)) or _Ival(
            *((dom_lo[a], True, dom_lo[a], True) if iv.hi < dom_lo[a] else (dom_hi[a], True, dom_hi[a], True))
        )
        width = (dom_hi[a] - dom_lo[a]) / c
        first = max(0, int((iv.lo - dom_lo[a]) / width) - 1)
        last = min(c - 1, int((iv.hi - dom_lo[a]) / width) + 1)
        return [j for j in range(first, last + 1) if iv.meet(slab(a, j)) is not None]

    rows = []
    for flat in range(grid.n_cells):
        idx = np.unravel_index(flat, grid.counts)
        cell = [slab(a, int(j)) for a, j in enumerate(idx)]
        succ = []
        for region, A, b, diagonal in pieces:
            part = [c.meet(r) for c, r in zip(cell, region)]
            if any(p is None for p in part):
                continue
            ranges = [hits(a, iv) for a, iv in enumerate(image(part, A, b, diagonal))]
            mesh = np.meshgrid(*ranges, indexing="ij")
            succ.append(np.ravel_multi_index([m.ravel() for m in mesh], grid.counts))
        rows.append(np.concatenate(succ) if succ else np.zeros(0, dtype=np.int64))
    return TransitionRelation.from_rows(rows)


def build_transitions(sys: SystemDef, grid: UniformGrid, mode: str = "closure",
                      split_depth: int = 0, workers: int = 1) -> TransitionRelation:
    """Sound transition relation of ``sys`` over ``grid``.

    ``mode="closure"`` adds ``(Y, Y')`` whenever the closure of ``Y'`` meets an
    outward-rounded enclosure of the image of the closure of ``Y``.
    ``mode="exact"`` uses the half-open images of affine pieces in rational
    arithmetic (up to the measure-zero closed outer faces of the domain).
    """
    if sys.domain != grid.domain:
        raise AbstractionError("system domain and grid domain differ")
    if mode == "closure":
        rel = _closure_transitions(sys, grid, split_depth, workers)
    elif mode == "exact":
        rel = _exact_transitions(sys, grid)
    else:
        raise AbstractionError(f"unknown transition mode {mode!r}")
    if np.any(np.diff(rel.indptr) == 0):
        raise AbstractionError("a cell ended up without successors")
    return rel


# --- distortion --------------------------------------------------------------

def _far_tables(grid: UniformGrid, points: np.ndarray) -> list[np.ndarray]:
    """Per axis, squared distance from each point to the far end of every slab: ``(m, counts[a])``."""
    out = []
    for a in range(grid.dim):
        e = grid.edges[a]
        p = points[:, a:a + 1]
        far = np.maximum(np.abs(p - e[None, :-1]), np.abs(p - e[None, 1:]))
        out.append(far * far)
    return out


def _cell_terms(grid: UniformGrid, tables: list[np.ndarray], rows, cells) -> np.ndarray:
    m = grid.multi[cells]
    g = tables[0][rows, m[..., 0]]
    for a in range(1, grid.dim):
        g = g + tables[a][rows, m[..., a]]
    return g


def _frontier_dp(grid: UniformGrid, rel: TransitionRelation, states: np.ndarray, w0: int) -> float:
    l = states.shape[0]
    tables = [_far_tables(grid, states[t:t + 1]) for t in range(l)]
    front = np.array([w0])
    val = _cell_terms(grid, tables[0], 0, front)
    for t in range(1, l):
        starts, stops = rel.indptr[front], rel.indptr[front + 1]
        counts = stops - starts
        if np.any(counts == 0):
            raise AbstractionError("cell without outgoing transitions before the horizon")
        offs = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        dst = rel.indices[offs]
        cand = np.repeat(val, counts)
        order = np.argsort(dst, kind="stable")
        dst, cand = dst[order], cand[order]
        heads = np.flatnonzero(np.r_[True, dst[1:] != dst[:-1]])
        front = dst[heads]
        val = np.maximum.reduceat(cand, heads) + _cell_terms(grid, tables[t], 0, front)
    return float(np.max(val) / l)


def _dense_dp(grid: UniformGrid, rel: TransitionRelation, states: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """Batched DP over all cells for a chunk of trajectories ``(m, l, n)``."""
    m, l, _ = states.shape
    N = grid.n_cells
    src = np.repeat(np.arange(N), np.diff(rel.indptr))
    dst = rel.indices
    order = np.argsort(dst, kind="stable")
    src_o, dst_o = src[order], dst[order]
    heads = np.flatnonzero(np.r_[True, dst_o[1:] != dst_o[:-1]])
    targets = dst_o[heads]
    rows = np.arange(m)[:, None]
    all_cells = np.arange(N)[None, :]
    val = np.full((m, N), -np.inf)
    t0 = _far_tables(grid, states[:, 0])
    val[np.arange(m), w0] = _cell_terms(grid, t0, np.arange(m), w0)
    for t in range(1, l):
        g = _cell_terms(grid, _far_tables(grid, states[:, t]), rows, all_cells)
        new = np.full((m, N), -np.inf)
        new[:, targets] = np.maximum.reduceat(val[:, src_o], heads, axis=1)
        val = new + g
    best = val.max(axis=1)
    if np.any(~np.isfinite(best)):
        raise AbstractionError("cell without outgoing transitions before the horizon")
    return best / l


def distortion(states, w0: int, rel: TransitionRelation, grid: UniformGrid) -> float:
    """Worst-case time-averaged squared deviation over all abstract paths from ``w0``."""
    states = np.asarray(getattr(states, "states", states), dtype=float).reshape(-1, grid.dim)
    if not 0 <= w0 < grid.n_cells:
        raise AbstractionError("initial cell index out of range")
    return _frontier_dp(grid, rel, states, int(w0))


def distortions(states: np.ndarray, rel: TransitionRelation, grid: UniformGrid) -> np.ndarray:
    """Distortion of each trajectory in a batch ``(m, l, n)``; initial cells are encoded here."""
    w0 = grid.encode(states[:, 0])
    if rel.n_transitions <= DENSE_EDGE_LIMIT:
        chunk = max(1, DENSE_CHUNK_ENTRIES // max(rel.n_transitions, grid.n_cells))
        parts = [_dense_dp(grid, rel, states[i:i + chunk], w0[i:i + chunk]) for i in range(0, len(states), chunk)]
        return np.concatenate(parts) if parts else np.zeros(0)
    return np.array([_frontier_dp(grid, rel, s, int(w)) for s, w in zip(states, w0)])


Sampler = Callable[[BoxRegion, int, int, int], np.ndarray]


class DistortionEstimate(NamedTuple):
    mean: float
    stderr: float


def distortion_samples(sys: SystemDef, grid: UniformGrid, rel: TransitionRelation, l: int,
                       samples: int, seed: int, workers: int = 1,
                       sampler: Optional[Sampler] = None) -> np.ndarray:
    """Per-sample distortions for initial states drawn from ``sampler`` (uniform by default)."""
    draw = sampler or uniform_block
    sizes = block_sizes(samples)

    def run(b: int) -> np.ndarray:
        x0 = draw(sys.domain, seed, b, sizes[b])
        states, _ = trajectories(sys, x0, l)
        return distortions(states, rel, grid)

    return np.concatenate(map_ordered(run, len(sizes), workers))


def expected_distortion(sys: SystemDef, grid: UniformGrid, rel: TransitionRelation, l: int,
                        samples: int, seed: int, workers: int = 1,
                        sampler: Optional[Sampler] = None) -> DistortionEstimate:
    from .rng import mean_and_stderr

    if samples < 2:
        raise ValueError("samples must be >= 2")
    d = distortion_samples(sys, grid, rel, l, samples, seed, workers, sampler)
    return DistortionEstimate(*mean_and_stderr(d))


def check_inclusion(sys: SystemDef, grid: UniformGrid, rel: TransitionRelation, l: int,
                    samples: int, seed: int, workers: int = 1) -> int:
    """Number of sampled trajectories whose cell sequence is not a path of ``rel``."""
    sizes = block_sizes(samples)

    def run(b: int) -> int:
        states, _ = trajectories(sys, uniform_block(sys.domain, seed, b, sizes[b]), l)
        cells = np.stack([grid.encode(states[:, t]) for t in range(l)], axis=1)
        ok = np.ones(len(cells), dtype=bool)
        for t in range(l - 1):
            ok &= rel.contains(cells[:, t], cells[:, t + 1])
        return int(np.count_nonzero(~ok))

    return sum(map_ordered(run, len(sizes), workers))


def reachable_hull(grid: UniformGrid, rel: TransitionRelation, w0: int, l: int) -> list[BoxRegion]:
    """Per-time bounding boxes of the cells reachable from ``w0``; their product contains the output set."""
    lo, hi = grid.cell_bounds()
    front = np.array([w0])
    out = []
    for t in range(l):
        if t:
            front = np.unique(np.concatenate([rel.successors(i) for i in front]))
        out.append(BoxRegion(tuple(lo[front].min(axis=0)), tuple(hi[front].max(axis=0))))
    return out


# --- serialisation -----------------------------------------------------------

def abstraction_document(sys: SystemDef, grid: UniformGrid, rel: TransitionRelation, mode: str) -> dict:
    return {
        "format": ABSTRACTION_FORMAT,
        "version": ABSTRACTION_VERSION,
        "system": sys.fingerprint(),
        "grid": grid.to_dict(),
        "mode": mode,
        "cells": grid.n_cells,
        "transition_count": rel.n_transitions,
        "transitions": rel.to_rows(),
    }


def dump_abstraction(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def load_abstraction(doc: dict) -> tuple[UniformGrid, TransitionRelation, dict]:
    if doc.get("format") != ABSTRACTION_FORMAT:
        raise AbstractionError("not an abstraction document")
    if doc.get("version") != ABSTRACTION_VERSION:
        raise AbstractionError(f"unsupported abstraction version {doc.get('version')}")
    grid = UniformGrid.from_dict(doc["grid"])
    rel = TransitionRelation.from_rows(doc["transitions"])
    if rel.n_cells != grid.n_cells:
        raise AbstractionError("transition table size does not match the grid")
    return grid, rel, doc.get("system", {})
