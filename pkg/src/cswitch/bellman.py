"""Backward induction with the double-modified Bellman operator."""
from __future__ import annotations

import logging

import numpy as np

from .envelope import ExpectationPlan, evaluate_many
from .model import ControlSpec, DisturbanceSet, FunctionStack, Grid, RewardSubgradients, validate_model
from .neighbors import NeighborIndex, build_index

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Inconsistent model parts; ``violations`` lists every failed check."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


def weighted_sum(transition: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[..., p, a] = sum_q transition[p, a, q] * values[..., q]`` accumulated in ``q`` order."""
    out = transition[..., 0] * values[..., None, None, 0]
    for q in range(1, transition.shape[-1]):
        out = out + transition[..., q] * values[..., None, None, q]
    return out


def double_modified_step(next_value: np.ndarray, t: int, grid: Grid, control: ControlSpec,
                         disturb: DisturbanceSet, reward_t: np.ndarray,
                         index: NeighborIndex | None = None, k_nn: int | None = None, *,
                         plan: ExpectationPlan | None = None, workers: int | None = 1):
    """One application of the operator.

    ``next_value`` is ``(P, m, d)``, ``reward_t`` is ``(P, A, m, d)``.
    Returns ``(value_t, expected_t)``, both ``(P, m, d)``.
    """
    n_pos, n_action = control.n_pos, control.n_action
    m, d = grid.m, grid.d
    next_value = np.asarray(next_value, dtype=float)
    reward_t = np.asarray(reward_t, dtype=float)
    if next_value.shape != (n_pos, m, d):
        raise ValueError(f"next value shape {next_value.shape} != {(n_pos, m, d)}")
    if reward_t.shape != (n_pos, n_action, m, d):
        raise ValueError(f"reward shape at t={t} is {reward_t.shape}, expected {(n_pos, n_action, m, d)}")

    if plan is None:
        plan = ExpectationPlan(grid, disturb, k_nn, index)
    expected = np.stack([plan.apply(next_value[q], workers) for q in range(n_pos)])

    g = grid.points
    exp_val = np.empty((m, n_pos))
    exp_arg = np.empty((m, n_pos), dtype=np.int64)
    for q in range(n_pos):
        exp_val[:, q], exp_arg[:, q] = evaluate_many(expected[q], g)
    rew_val = np.empty((m, n_pos, n_action))
    rew_arg = np.empty((m, n_pos, n_action), dtype=np.int64)
    for p in range(n_pos):
        for a in range(n_action):
            rew_val[:, p, a], rew_arg[:, p, a] = evaluate_many(reward_t[p, a], g)

    alpha = control.transition
    candidate = rew_val + weighted_sum(alpha, exp_val)  # (m, P, A)
    best = np.argmax(candidate, axis=2)  # (m, P)

    rows_i = np.arange(m)
    exp_rows = np.stack([expected[q][exp_arg[:, q]] for q in range(n_pos)], axis=1)  # (m, P', d)
    value = np.empty((n_pos, m, d))
    for p in range(n_pos):
        a = best[:, p]
        r_rows = reward_t[p, a, rew_arg[rows_i, p, a]]  # (m, d)
        weights = alpha[p, a]  # (m, P')
        acc = weights[:, 0, None] * exp_rows[:, 0]
        for q in range(1, n_pos):
            acc = acc + weights[:, q, None] * exp_rows[:, q]
        value[p] = r_rows + acc
    return value, expected


def backward_induction(grid: Grid, control: ControlSpec, disturbances, rewards: RewardSubgradients,
                       k_nn: int | None = None, *, index: NeighborIndex | None = None,
                       workers: int | None = 1, check: bool = True) -> FunctionStack:
    """Value and expected value functions for ``t = T .. 0``.

    ``disturbances`` is one :class:`DisturbanceSet` reused at every step or a
    sequence of ``T`` sets, entry ``t`` sampling the transition ``t -> t+1``.
    ``k_nn=None`` searches all tangent rows.
    """
    if check:
        problems = validate_model(grid, control, disturbances, rewards)
        if problems:
            raise ModelError(problems)
    T = rewards.horizon
    if T < 1:
        raise ValueError("horizon must be at least one step")
    sets = [disturbances] * T if isinstance(disturbances, DisturbanceSet) else list(disturbances)
    if len(sets) == 1:
        sets = sets * T
    if k_nn is not None and int(k_nn) >= grid.m:
        k_nn = None
    if k_nn is not None and index is None:
        index = build_index(grid)

    n_pos, m, d = control.n_pos, grid.m, grid.d
    value = np.empty((T + 1, n_pos, m, d))
    expected = np.empty((T, n_pos, m, d))
    value[T] = rewards.scrap
    plans: dict[int, ExpectationPlan] = {}
    for t in range(T - 1, -1, -1):
        ds = sets[t]
        if id(ds) not in plans:
            plans[id(ds)] = ExpectationPlan(grid, ds, k_nn, index)
        value[t], expected[t] = double_modified_step(
            value[t + 1], t, grid, control, ds, rewards.tangents[t], index, k_nn,
            plan=plans[id(ds)], workers=workers,
        )
        log.debug("t=%d done", t)
    return FunctionStack(value, expected)
