"""Max-of-affine tangent algebra.

All inner products are evaluated as explicit sums in coordinate order rather
than through BLAS, so that every code path (chunked, threaded, index
restricted or not) produces the same bits for the same inputs.  Argmax ties
go to the smallest row index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import run_chunks
from .model import ANCHOR_TOL, DisturbanceSet, Grid, tolerance_scale
from .neighbors import NeighborIndex, build_index
from .sampling import apply_matrices

_ROW_CHUNK = 64
_POINT_CHUNK = 4096
_BUDGET = 1 << 21  # scratch elements per block


def scores(points: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Broadcast ``sum_c points[..., c] * rows[..., c]``."""
    out = points[..., 0] * rows[..., 0]
    for c in range(1, points.shape[-1]):
        out = out + points[..., c] * rows[..., c]
    return out


def compose(rows: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """Row vectors times matrices: ``out[..., c] = sum_r rows[..., r] * mats[..., r, c]``."""
    out = rows[..., 0, None] * mats[..., 0, :]
    for r in range(1, rows.shape[-1]):
        out = out + rows[..., r, None] * mats[..., r, :]
    return out


def evaluate(tangents: np.ndarray, z) -> tuple[float, int]:
    """Value of the max-of-affine function at ``z`` and the (first) maximizing row."""
    vals = scores(np.asarray(z, dtype=float)[None, :], np.asarray(tangents, dtype=float))
    j = int(np.argmax(vals))
    return float(vals[j]), j


def evaluate_many(tangents: np.ndarray, points: np.ndarray, candidates: np.ndarray | None = None):
    """Values and argmax rows at a batch of points.

    With ``candidates`` (``(n, k)`` row indices sorted ascending), the max at
    point ``i`` is restricted to rows ``candidates[i]``.
    """
    tangents = np.asarray(tangents, dtype=float)
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    cols = [np.ascontiguousarray(tangents[:, c]) for c in range(d)]
    values = np.empty(n)
    argmax = np.empty(n, dtype=np.int64)
    width = tangents.shape[0] if candidates is None else candidates.shape[1]
    step = max(1, min(_POINT_CHUNK, _BUDGET // max(width, 1)))
    for lo in range(0, n, step):
        sl = slice(lo, lo + step)
        pts = [np.ascontiguousarray(points[sl, c]) for c in range(d)]
        if candidates is None:
            s = pts[0][:, None] * cols[0]
            for c in range(1, d):
                s = s + pts[c][:, None] * cols[c]
            j = np.argmax(s, axis=1)
        else:
            cand = np.ascontiguousarray(candidates[sl].T)  # (k, n)
            s = pts[0] * cols[0][cand]
            for c in range(1, d):
                s = s + pts[c] * cols[c][cand]
            j = cand[np.argmax(s, axis=0), np.arange(cand.shape[1])]
        argmax[sl] = j
        v = pts[0] * cols[0][j]
        for c in range(1, d):
            v = v + pts[c] * cols[c][j]
        values[sl] = v
    return values, argmax


@dataclass(frozen=True, eq=False)
class OracleSample:
    """Function values ``f(g^i)`` and subgradients at each grid point."""

    values: np.ndarray  # (m,)
    subgradients: np.ndarray  # (m, d)


class ConvexityError(ValueError):
    def __init__(self, i: int, j: int, gap: float):
        super().__init__(
            f"tangent at grid row {i} exceeds the function at row {j} by {gap:.3g}: data are not convex"
        )
        self.pair = (i, j)


def envelope_from_oracle(sample: OracleSample, grid: Grid) -> np.ndarray:
    """Tangent matrix of the subgradient envelope of ``f`` on ``grid``."""
    f = np.asarray(sample.values, dtype=float)
    sub = np.asarray(sample.subgradients, dtype=float)
    g = grid.points
    if f.shape != (grid.m,) or sub.shape != g.shape:
        raise ValueError(f"sample shapes {f.shape}, {sub.shape} do not match grid {g.shape}")
    # tangent_i(g^j) - f(g^j) must stay <= 0
    lin = g @ sub.T  # lin[j, i] = sub_i . g^j
    tangent_at = f[None, :] + lin - np.sum(sub * g, axis=1)[None, :]
    excess = tangent_at - f[:, None]
    tol = ANCHOR_TOL * tolerance_scale(f, sub, g)
    if np.any(excess > tol):
        j, i = np.unravel_index(int(np.argmax(excess)), excess.shape)
        raise ConvexityError(int(i), int(j), float(excess[j, i]))
    rows = sub.copy()
    intercept = f - np.sum(sub * g, axis=1)
    if grid.augmented:
        rows[:, 0] += intercept
    elif np.any(np.abs(intercept) > tol):
        raise ValueError("tangents with a nonzero intercept need an augmented grid")
    return rows


def displaced_points(grid: Grid, disturb: DisturbanceSet) -> np.ndarray:
    """``W^(k) g^i`` for every atom and grid row, shape ``(n, m, d)``."""
    return apply_matrices(disturb.matrices[:, None], grid.points[None])


def neighbor_candidates(grid: Grid, disturb: DisturbanceSet, index: NeighborIndex | None, k_nn: int) -> np.ndarray:
    """Anchors of the ``k_nn`` grid rows nearest to each displaced point, ``(n, m, k_nn)``, ascending."""
    if index is None:
        index = build_index(grid)
    disp = displaced_points(grid, disturb)
    idx, _ = index.knn(disp.reshape(-1, grid.d), k_nn)
    idx.sort(axis=1)
    return idx.reshape(disturb.n, grid.m, k_nn)


class ExpectationPlan:
    """Per-(grid, disturbance set) data reused by every :func:`expected_pwl` call.

    Holds the displaced points and disturbance entries in coordinate-major
    layout plus, for ``k_nn < m``, the neighbour candidate table.
    """

    def __init__(self, grid: Grid, disturb: DisturbanceSet, k_nn: int | None = None,
                 index: NeighborIndex | None = None, candidates: np.ndarray | None = None):
        m = grid.m
        if disturb.d != grid.d:
            raise ValueError(f"disturbance dimension {disturb.d} does not match grid d={grid.d}")
        k_nn = m if k_nn is None else int(k_nn)
        if not 1 <= k_nn <= m:
            raise ValueError(f"k_nn must lie in 1..{m}, got {k_nn}")
        self.grid, self.disturb, self.k_nn = grid, disturb, k_nn
        self.exact = k_nn == m
        if not self.exact and candidates is None:
            candidates = neighbor_candidates(grid, disturb, index, k_nn)
        self.candidates = candidates
        disp = displaced_points(grid, disturb)
        self.disp = np.ascontiguousarray(np.moveaxis(disp, -1, 0))  # (d, n, m)
        self.mats = np.ascontiguousarray(np.moveaxis(disturb.matrices, 0, -1))  # (d, d, n)
        self.weights = disturb.weights

    def apply(self, tangents: np.ndarray, workers: int | None = 1) -> np.ndarray:
        grid, d, m, n = self.grid, self.grid.d, self.grid.m, self.disturb.n
        tangents = np.asarray(tangents, dtype=float)
        if tangents.shape != (m, d):
            raise ValueError(f"tangent matrix shape {tangents.shape} does not match grid ({m}, {d})")
        cols = [np.ascontiguousarray(tangents[:, c]) for c in range(d)]
        disp, mats, weights, cand_all = self.disp, self.mats, self.weights, self.candidates
        width = m if self.exact else self.k_nn
        out = np.empty((m, d))

        def block(sl):
            rows_i = sl.stop - sl.start
            step = max(1, _BUDGET // (rows_i * width))
            acc = np.zeros((d, 1, rows_i))
            for lo in range(0, n, step):
                kc = slice(lo, lo + step)
                if self.exact:
                    s = disp[0, kc, sl, None] * cols[0]
                    for c in range(1, d):
                        s = s + disp[c, kc, sl, None] * cols[c]
                    j = np.argmax(s, axis=2)
                else:
                    cand = cand_all[kc, sl]
                    s = disp[0, kc, sl, None] * cols[0][cand]
                    for c in range(1, d):
                        s = s + disp[c, kc, sl, None] * cols[c][cand]
                    best = np.argmax(s, axis=2)
                    j = np.take_along_axis(cand, best[..., None], axis=2)[..., 0]
                picked = [cols[r][j] for r in range(d)]  # each (nk, rows_i)
                w = weights[kc, None]
                part = np.empty((d, j.shape[0] + 1, rows_i))
                for c in range(d):
                    comp = picked[0] * mats[0, c, kc, None]
                    for r in range(1, d):
                        comp = comp + picked[r] * mats[r, c, kc, None]
                    part[c, 1:] = comp * w
                part[:, :1] = acc
                acc = np.cumsum(part, axis=1)[:, -1:]
            out[sl] = acc[:, 0].T

        run_chunks(block, m, _ROW_CHUNK, workers)
        return out


def expected_pwl(tangents: np.ndarray, grid: Grid, disturb: DisturbanceSet,
                 index: NeighborIndex | None = None, k_nn: int | None = None, *,
                 plan: ExpectationPlan | None = None, workers: int | None = 1) -> np.ndarray:
    """Tangent matrix of ``z -> sum_k nu_k v(W_k z)`` on the grid.

    Row ``i`` is ``sum_k nu_k row_{j*} W_k`` where ``j*`` maximizes
    ``row_j . (W_k g^i)``, the search running over all rows when
    ``k_nn`` is ``None`` or ``m`` and otherwise over rows anchored at the
    ``k_nn`` grid points nearest to ``W_k g^i``.  The sum over atoms runs in
    ascending order.  Pass a prebuilt ``plan`` to reuse the neighbour table
    across calls.
    """
    if plan is None:
        plan = ExpectationPlan(grid, disturb, k_nn, index)
    return plan.apply(tangents, workers)
