"""Pathwise primal and dual bounds with martingale corrections from nested simulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._parallel import run_chunks
from .bellman import weighted_sum
from .envelope import evaluate_many
from .model import ControlSpec, FunctionStack, Grid, RewardOracle, tolerance_scale
from .neighbors import NeighborIndex, build_index
from .policy import PathPolicy
from .sampling import PathBundle, SubsimBundle, apply_matrices

_PATH_CHUNK = 16


@dataclass(frozen=True, eq=False)
class BoundSample:
    """Per-path lower (``primal``) and upper (``dual``) values at t = 0, shape ``(n_path, P)``."""

    primal: np.ndarray
    dual: np.ndarray

    def ordering_violations(self) -> np.ndarray:
        """``(path, position)`` pairs (0-based) where primal exceeds dual beyond tolerance."""
        tol = 1e-9 * tolerance_scale(self.primal, self.dual)
        return np.argwhere(self.primal > self.dual + tol)


def _evaluate(tangents, points, index, k_nn):
    cand = None
    if k_nn is not None:
        cand, _ = index.knn(points, k_nn)
        cand.sort(axis=1)
    return evaluate_many(tangents, points, cand)[0]


def mart_increments(paths: PathBundle, subsim: SubsimBundle, grid: Grid, stack: FunctionStack,
                    oracle: RewardOracle, index: NeighborIndex | None = None, k_nn: int | None = None,
                    *, workers: int | None = 1) -> np.ndarray:
    """Martingale increments, shape ``(n_path, T, P)``.

    Entry ``(i, t, p)`` is the realized ``v_{t+1}(p, Z_{t+1})`` minus its
    subsimulation average over ``S_k Z_t``; ``v_T`` is the exact scrap.
    """
    n_path, T = paths.n_path, paths.n_dec - 1
    if subsim.n_path != n_path or subsim.n_dec != paths.n_dec:
        raise ValueError("subsimulation bundle does not match the paths")
    if stack.n_dec != paths.n_dec or stack.m != grid.m or paths.d != grid.d:
        raise ValueError("stack, grid and paths dimensions disagree")
    if k_nn is not None and k_nn >= grid.m:
        k_nn = None
    if k_nn is not None and index is None:
        index = build_index(grid)
    n_pos, ns, d = stack.n_pos, subsim.n_subsim, grid.d
    weights = subsim.weights
    out = np.empty((n_path, T, n_pos))

    def block(sl):
        ids = range(sl.start, sl.stop)
        npb = sl.stop - sl.start
        for t in range(T):
            z_now = paths.states[sl, t]
            z_next = paths.states[sl, t + 1]
            pts = apply_matrices(subsim.slice(t, ids), z_now[:, None, :]).reshape(-1, d)
            if t + 1 < T:
                realized = np.empty((npb, n_pos))
                sub = np.empty((npb * ns, n_pos))
                c_real = c_sub = None
                if k_nn is not None:
                    c_real = np.sort(index.knn(z_next, k_nn)[0], axis=1)
                    c_sub = np.sort(index.knn(pts, k_nn)[0], axis=1)
                for q in range(n_pos):
                    realized[:, q] = evaluate_many(stack.value[t + 1, q], z_next, c_real)[0]
                    sub[:, q] = evaluate_many(stack.value[t + 1, q], pts, c_sub)[0]
            else:
                realized = oracle.scrap(z_next)
                sub = oracle.scrap(pts)
            sub = sub.reshape(npb, ns, n_pos) * weights[None, :, None]
            cond = np.cumsum(sub, axis=1)[:, -1]
            out[sl, t] = realized - cond

    run_chunks(block, n_path, _PATH_CHUNK, workers)
    return out


def _recursion_terms(transition, rewards, nxt, phi):
    # rewards (n, P, A); nxt, phi (n, P) -> (n, P, A)
    return rewards + weighted_sum(transition, nxt - phi)


def dual_bounds(paths: PathBundle, control: ControlSpec, oracle: RewardOracle, policy: PathPolicy,
                mart: np.ndarray) -> BoundSample:
    """Backward pathwise recursions for the lower (policy) and upper (dual) values."""
    n_path, T = paths.n_path, paths.n_dec - 1
    n_pos = control.n_pos
    if mart.shape != (n_path, T, n_pos):
        raise ValueError(f"martingale increments shape {mart.shape} != {(n_path, T, n_pos)}")
    if policy.actions.shape != (n_path, T, n_pos):
        raise ValueError(f"policy shape {policy.actions.shape} != {(n_path, T, n_pos)}")
    alpha = control.transition
    terminal = oracle.scrap(paths.states[:, T])
    lower = terminal.copy()
    upper = terminal.copy()
    rows = np.arange(n_path)[:, None]
    cols = np.arange(n_pos)[None, :]
    for t in range(T - 1, -1, -1):
        r = oracle.reward(t, paths.states[:, t])
        phi = mart[:, t]
        upper = np.max(_recursion_terms(alpha, r, upper, phi), axis=2)
        terms = _recursion_terms(alpha, r, lower, phi)
        lower = terms[rows, cols, policy.actions[:, t] - 1]
    return BoundSample(lower, upper)


def get_bounds(sample: BoundSample, alpha: float, p: int) -> tuple[float, float]:
    """Two-sided ``1 - alpha`` interval for position ``p`` (1-based)."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = sample.primal.shape[0]
    if n < 2:
        raise ValueError("need at least two paths to estimate a standard error")
    stats = bound_stats(sample, p)
    q = float(norm.ppf(1 - alpha / 2))
    return stats["mean_primal"] - q * stats["se_primal"], stats["mean_dual"] + q * stats["se_dual"]


def bound_stats(sample: BoundSample, p: int) -> dict:
    lo, hi = sample.primal[:, p - 1], sample.dual[:, p - 1]
    n = lo.size
    return {
        "mean_primal": float(np.mean(lo)),
        "mean_dual": float(np.mean(hi)),
        "se_primal": float(np.std(lo, ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
        "se_dual": float(np.std(hi, ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
        "n_path": int(n),
    }
