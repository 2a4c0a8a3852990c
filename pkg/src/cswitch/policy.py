"""Policy extraction along simulated paths and policy backtesting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import run_chunks
from .bellman import weighted_sum
from .envelope import evaluate_many
from .model import ControlSpec, FunctionStack, Grid, RewardOracle
from .neighbors import NeighborIndex, build_index
from .sampling import PathBundle, keyed_uniforms

_PATH_CHUNK = 64


@dataclass(frozen=True, eq=False)
class PathPolicy:
    """Prescribed 1-based action for every path, decision time and hypothetical position."""

    actions: np.ndarray  # (n_path, T, P)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    values: np.ndarray  # (n_path,) cumulated rewards including scrap
    positions: np.ndarray  # (n_path, n_dec) 1-based; column t is the position held at time t
    actions: np.ndarray  # (n_path, T) 1-based

    def exercise_times(self) -> np.ndarray:
        """First decision time whose action changes the position; ``T`` if none does."""
        moved = self.positions[:, 1:] != self.positions[:, :-1]
        horizon = moved.shape[1]
        return np.where(moved.any(axis=1), np.argmax(moved, axis=1), horizon)


def continuation_values(stack: FunctionStack, t: int, states: np.ndarray,
                        index: NeighborIndex | None = None, k_nn: int | None = None) -> np.ndarray:
    """``expected[t, q]`` evaluated at each state, shape ``(n, P)``."""
    cand = None
    if k_nn is not None and k_nn < stack.m:
        idx, _ = index.knn(states, k_nn)
        idx.sort(axis=1)
        cand = idx
    out = np.empty((states.shape[0], stack.n_pos))
    for q in range(stack.n_pos):
        out[:, q], _ = evaluate_many(stack.expected[t, q], states, cand)
    return out


def path_policy(paths: PathBundle, grid: Grid, control: ControlSpec, oracle: RewardOracle,
                stack: FunctionStack, index: NeighborIndex | None = None, k_nn: int | None = None,
                *, workers: int | None = 1) -> PathPolicy:
    """Greedy action against the expected value functions at every path state."""
    T = paths.n_dec - 1
    if stack.expected.shape[0] != T:
        raise ValueError(f"stack covers {stack.expected.shape[0]} decision times, paths need {T}")
    if stack.n_pos != control.n_pos or stack.m != grid.m or paths.d != grid.d:
        raise ValueError("paths, grid, control and stack dimensions disagree")
    if k_nn is not None and k_nn >= grid.m:
        k_nn = None
    if k_nn is not None and index is None:
        index = build_index(grid)
    alpha = control.transition
    actions = np.empty((paths.n_path, T, control.n_pos), dtype=np.int64)

    def block(sl):
        for t in range(T):
            z = paths.states[sl, t]
            cont = continuation_values(stack, t, z, index, k_nn)
            total = oracle.reward(t, z) + weighted_sum(alpha, cont)
            actions[sl, t] = np.argmax(total, axis=2) + 1

    run_chunks(block, paths.n_path, _PATH_CHUNK, workers)
    return PathPolicy(actions)


def backtest(start_pos: int, paths: PathBundle, control: ControlSpec, oracle: RewardOracle,
             policy: PathPolicy, seed: int = 0) -> BacktestResult:
    """Run the policy along each path from ``start_pos``, summing exact rewards and scrap."""
    n_pos = control.n_pos
    if not 1 <= start_pos <= n_pos:
        raise ValueError(f"start position must lie in 1..{n_pos}, got {start_pos}")
    n_path, n_dec = paths.n_path, paths.n_dec
    T = n_dec - 1
    if policy.actions.shape != (n_path, T, n_pos):
        raise ValueError(f"policy shape {policy.actions.shape} != {(n_path, T, n_pos)}")
    rows = np.arange(n_path)
    positions = np.empty((n_path, n_dec), dtype=np.int64)
    actions = np.empty((n_path, T), dtype=np.int64)
    values = np.zeros(n_path)
    positions[:, 0] = start_pos
    alpha = control.transition
    for t in range(T):
        p = positions[:, t]
        a = policy.actions[rows, t, p - 1]
        actions[:, t] = a
        values = values + oracle.reward(t, paths.states[:, t])[rows, p - 1, a - 1]
        if control.is_deterministic:
            positions[:, t + 1] = control.targets[p - 1, a - 1]
        else:
            u = keyed_uniforms(seed, (3, t), n_path)
            cdf = np.cumsum(alpha[p - 1, a - 1], axis=1)
            nxt = np.sum(u[:, None] >= cdf, axis=1)
            positions[:, t + 1] = np.minimum(nxt, n_pos - 1) + 1
    values = values + oracle.scrap(paths.states[:, T])[rows, positions[:, T] - 1]
    return BacktestResult(values, positions, actions)
