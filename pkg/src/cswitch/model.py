"""Domain types for convex switching systems and the two option templates.

Conventions used throughout the package:

* time ``t`` is 0-based, ``t = 0 .. T`` with ``T = n_dec - 1``;
* positions and actions are 1-based *labels* whenever they are passed as a
  single index (``p``, ``a``) or stored as values (control tables, policies,
  backtest positions), while numpy axes are plain 0-based;
* a tangent matrix is an ``(m, d)`` array whose row ``i`` is the linear map
  ``z -> row_i @ z`` anchored at grid point ``g^i``.  With an augmented grid
  (first coordinate identically 1) the first column carries the intercept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np

ANCHOR_TOL = 1e-9


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def tolerance_scale(*arrays) -> float:
    """1 + largest absolute entry over the given arrays (unitless tolerances)."""
    peak = 0.0
    for arr in arrays:
        arr = np.asarray(arr, dtype=float)
        if arr.size:
            peak = max(peak, float(np.max(np.abs(arr))))
    return 1.0 + peak


@dataclass(frozen=True, eq=False)
class Grid:
    points: np.ndarray
    augmented: bool = False

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(np.atleast_2d(self.points)))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def violations(self) -> list[str]:
        pts = self.points
        out = []
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            return [f"Grid.points: expected a non-empty m x d matrix, got shape {pts.shape}"]
        if not np.all(np.isfinite(pts)):
            out.append("Grid.points: non-finite entries")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            out.append("Grid.points: rows are not pairwise distinct")
        if self.augmented and not np.all(pts[:, 0] == 1.0):
            bad = int(np.flatnonzero(pts[:, 0] != 1.0)[0])
            out.append(f"Grid.augmented: row {bad} has first coordinate {pts[bad, 0]!r} != 1")
        return out


@dataclass(frozen=True, eq=False)
class ControlSpec:
    """Position transition law.

    Either ``targets`` (a P x A table of 1-based target positions) or
    ``probabilities`` (a P x A x P tensor, ``probabilities[p, a, q]`` being
    the chance of moving from position ``p+1`` to ``q+1`` under action
    ``a+1``) is set.
    """

    targets: np.ndarray | None = None
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        if (self.targets is None) == (self.probabilities is None):
            raise ValueError("ControlSpec needs exactly one of targets or probabilities")
        if self.targets is not None:
            object.__setattr__(self, "targets", _frozen(np.atleast_2d(self.targets), dtype=np.int64))
        else:
            object.__setattr__(self, "probabilities", _frozen(self.probabilities))

    @classmethod
    def deterministic(cls, table) -> ControlSpec:
        return cls(targets=table)

    @classmethod
    def stochastic(cls, tensor) -> ControlSpec:
        return cls(probabilities=tensor)

    @property
    def is_deterministic(self) -> bool:
        return self.targets is not None

    @property
    def n_pos(self) -> int:
        return (self.targets if self.is_deterministic else self.probabilities).shape[0]

    @property
    def n_action(self) -> int:
        return (self.targets if self.is_deterministic else self.probabilities).shape[1]

    @cached_property
    def transition(self) -> np.ndarray:
        """Dense ``(P, A, P)`` probability tensor (0/1 for deterministic tables)."""
        if not self.is_deterministic:
            return self.probabilities
        n_pos, n_action = self.targets.shape
        dense = np.zeros((n_pos, n_action, n_pos))
        for p in range(n_pos):
            for a in range(n_action):
                target = int(self.targets[p, a])
                if 1 <= target <= n_pos:
                    dense[p, a, target - 1] = 1.0
        dense.setflags(write=False)
        return dense

    def violations(self) -> list[str]:
        out = []
        if self.is_deterministic:
            table = self.targets
            bad = np.argwhere((table < 1) | (table > table.shape[0]))
            for p, a in bad:
                out.append(
                    f"ControlSpec.targets[{p + 1},{a + 1}] = {table[p, a]} outside 1..{table.shape[0]}"
                )
            return out
        probs = self.probabilities
        if probs.ndim != 3 or probs.shape[0] != probs.shape[2]:
            return [f"ControlSpec.probabilities: expected P x A x P, got shape {probs.shape}"]
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            out.append("ControlSpec.probabilities: negative or non-finite entries")
        sums = probs.sum(axis=2)
        for p, a in np.argwhere(np.abs(sums - 1.0) > 1e-12):
            out.append(f"ControlSpec.probabilities[{p + 1},{a + 1},:] sums to {sums[p, a]!r}, not 1")
        return out


@dataclass(frozen=True, eq=False)
class DisturbanceSet:
    """Weighted sample ``(W^(k), nu^(k))`` of a matrix-valued disturbance."""

    matrices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        object.__setattr__(self, "matrices", _frozen(mats))
        object.__setattr__(self, "weights", _frozen(np.atleast_1d(self.weights)))

    @property
    def n(self) -> int:
        return self.matrices.shape[0]

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    def violations(self, d: int | None = None, label: str = "DisturbanceSet") -> list[str]:
        out = []
        mats, w = self.matrices, self.weights
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            out.append(f"{label}.matrices: expected n x d x d, got shape {mats.shape}")
        elif d is not None and mats.shape[1] != d:
            out.append(f"{label}.matrices: dimension {mats.shape[1]} does not match grid d={d}")
        if w.shape != (mats.shape[0],):
            out.append(f"{label}.weights: {w.shape[0]} weights for {mats.shape[0]} matrices")
        if not np.all(np.isfinite(mats)):
            out.append(f"{label}.matrices: non-finite entries")
        if np.any(w <= 0):
            out.append(f"{label}.weights: non-positive weight")
        if abs(math.fsum(w.tolist()) - 1.0) > 1e-12:
            out.append(f"{label}.weights: sum is {math.fsum(w.tolist())!r}, not 1")
        return out


@dataclass(frozen=True, eq=False)
class RewardSubgradients:
    """Tangent representations of running rewards and terminal scrap.

    ``tangents[t, p, a]`` is the ``(m, d)`` tangent matrix of
    ``r_t(p+1, ., a+1)``; ``scrap[p]`` that of ``r_T(p+1, .)``.
    """

    tangents: np.ndarray  # (T, P, A, m, d)
    scrap: np.ndarray  # (P, m, d)

    def __post_init__(self):
        object.__setattr__(self, "tangents", _frozen(self.tangents))
        object.__setattr__(self, "scrap", _frozen(self.scrap))

    @property
    def horizon(self) -> int:
        return self.tangents.shape[0]


@dataclass(frozen=True, eq=False)
class FunctionStack:
    """Value functions ``value[t, p]`` (t = 0..T) and expected value functions
    ``expected[t, p]`` (t = 0..T-1), each an ``(m, d)`` tangent matrix."""

    value: np.ndarray  # (T+1, P, m, d)
    expected: np.ndarray  # (T, P, m, d)

    def __post_init__(self):
        object.__setattr__(self, "value", _frozen(self.value))
        object.__setattr__(self, "expected", _frozen(self.expected))

    @property
    def n_dec(self) -> int:
        return self.value.shape[0]

    @property
    def n_pos(self) -> int:
        return self.value.shape[1]

    @property
    def m(self) -> int:
        return self.value.shape[2]

    @property
    def d(self) -> int:
        return self.value.shape[3]

    def evaluate(self, t: int, p: int, z) -> float:
        """Value function ``v_t(p, z)`` for a 1-based position ``p``."""
        rows = self.value[t, p - 1]
        return float(np.max(rows @ np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class RewardOracle:
    """Exact reward and scrap functions.

    ``reward(t, states)`` maps an ``(n, d)`` batch to an ``(n, P, A)`` array,
    ``scrap(states)`` to an ``(n, P)`` array.
    """

    reward: Callable[[int, np.ndarray], np.ndarray]
    scrap: Callable[[np.ndarray], np.ndarray]

    def __call__(self, t: int, p: int, a: int, z) -> float:
        z = np.asarray(z, dtype=float)[None]
        return float(self.reward(t, z)[0, p - 1, a - 1])

    def terminal(self, p: int, z) -> float:
        z = np.asarray(z, dtype=float)[None]
        return float(self.scrap(z)[0, p - 1])


class SwitchingModel(NamedTuple):
    grid: Grid
    control: ControlSpec
    disturbances: list  # one DisturbanceSet per transition t -> t+1
    rewards: RewardSubgradients
    oracle: RewardOracle


def anchor_violations(tangents: np.ndarray, grid: Grid, label: str = "TangentMatrix") -> list[str]:
    """Rows that fail to attain the maximum at their own anchor point."""
    tangents = np.asarray(tangents, dtype=float)
    if tangents.shape != grid.points.shape:
        return [f"{label}: shape {tangents.shape} does not match grid {grid.points.shape}"]
    if not np.all(np.isfinite(tangents)):
        return [f"{label}: non-finite entries"]
    vals = grid.points @ tangents.T  # vals[i, j] = row_j . g^i
    own = np.diag(vals)
    best = vals.max(axis=1)
    tol = ANCHOR_TOL * tolerance_scale(tangents, grid.points)
    bad = np.flatnonzero(own < best - tol)
    return [
        f"{label}: row {i} misses its anchor max by {best[i] - own[i]:.3g}" for i in bad[:5]
    ]


def validate_model(grid: Grid, control: ControlSpec, disturb, rewards: RewardSubgradients) -> list[str]:
    """Cross-type dimension and invariant checks; returns the violations found."""
    out = list(grid.violations())
    out += control.violations()
    sets = [disturb] if isinstance(disturb, DisturbanceSet) else list(disturb)
    for t, ds in enumerate(sets):
        label = "DisturbanceSet" if len(sets) == 1 else f"DisturbanceSet[{t}]"
        out += ds.violations(d=grid.d, label=label)
    tan, scrap = rewards.tangents, rewards.scrap
    expected = (control.n_pos, control.n_action, grid.m, grid.d)
    if tan.ndim != 5 or tan.shape[1:] != expected:
        out.append(f"RewardSubgradients.tangents: shape {tan.shape[1:]} != (P, A, m, d) = {expected}")
    elif len(sets) not in (1, tan.shape[0]):
        out.append(
            f"DisturbanceSet: {len(sets)} sets supplied for horizon T={tan.shape[0]}"
        )
    if scrap.shape != (control.n_pos, grid.m, grid.d):
        out.append(f"RewardSubgradients.scrap: shape {scrap.shape} != {(control.n_pos, grid.m, grid.d)}")
    if out:
        return out
    for t in range(tan.shape[0]):
        for p in range(tan.shape[1]):
            for a in range(tan.shape[2]):
                out += anchor_violations(tan[t, p, a], grid, f"RewardSubgradients.tangents[{t},{p + 1},{a + 1}]")
    for p in range(scrap.shape[0]):
        out += anchor_violations(scrap[p], grid, f"RewardSubgradients.scrap[{p + 1}]")
    return out


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


class TemplateError(ValueError):
    """Invalid template parameter; ``field`` names the offending parameter."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _augmented_grid(lo: float, hi: float, count: int) -> Grid:
    pts = np.column_stack([np.ones(count), np.linspace(lo, hi, count)])
    return Grid(pts, augmented=True)


def _check_grid(lo, hi, count):
    if int(count) != count or count < 2:
        raise TemplateError("grid_count", f"must be an integer >= 2, got {count!r}")
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise TemplateError("grid_range", f"need finite lo < hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class BermudanPut:
    """Bermudan put on a sampled geometric Brownian motion.

    Positions: 1 = exercised, 2 = alive.  Actions: 1 = continue, 2 = exercise.
    """

    rate: float = 0.06
    step: float = 0.02
    vol: float = 0.2
    n_dec: int = 51
    strike: float = 40.0
    grid_range: tuple[float, float] = (30.0, 60.0)
    grid_count: int = 301
    start: float = 36.0

    kind = "bermudan_put"
    start_position = 2
    exercise_action = 2

    def validate(self):
        if not self.vol > 0:
            raise TemplateError("vol", f"must be > 0, got {self.vol}")
        if not self.step > 0:
            raise TemplateError("step", f"must be > 0, got {self.step}")
        if int(self.n_dec) != self.n_dec or self.n_dec < 2:
            raise TemplateError("n_dec", f"must be an integer >= 2, got {self.n_dec}")
        if not self.strike >= 0:
            raise TemplateError("strike", f"must be >= 0, got {self.strike}")
        if not math.isfinite(self.rate):
            raise TemplateError("rate", f"must be finite, got {self.rate}")
        if not self.start > 0:
            raise TemplateError("start", f"must be > 0, got {self.start}")
        _check_grid(*self.grid_range, self.grid_count)

    @property
    def horizon(self) -> int:
        return int(self.n_dec) - 1

    def discount(self, t) -> float:
        return math.exp(-self.rate * self.step * t)

    def dynamics(self):
        """Shock specification: ``W = diag(1, eps)`` with lognormal ``eps``."""
        from .sampling import RandomEntry, RandomEntrySpec

        drift = (self.rate - 0.5 * self.vol**2) * self.step
        sd = self.vol * math.sqrt(self.step)
        return RandomEntrySpec(
            constant=np.eye(2),
            entries=(RandomEntry(1, 1, 0.0, 1.0, "affine"),),
            shock="lognormal",
            log_mean=drift,
            log_sd=sd,
        )

    def start_state(self) -> np.ndarray:
        return np.array([1.0, float(self.start)])


@dataclass(frozen=True)
class Swing:
    """Unit refraction period swing option on an exponential mean-reverting price.

    Position ``p`` means ``p - 1`` rights remain.  Actions: 1 = exercise,
    2 = hold (note the reversed labels relative to :class:`BermudanPut`).
    """

    rate: float = 0.0
    kappa: float = 0.9
    mu: float = 0.0
    vol: float = 0.5
    strike: float = 0.0
    n_dec: int = 101
    n_rights: int = 5
    grid_range: tuple[float, float] = (-2.0, 2.0)
    grid_count: int = 101
    start: float = 0.0

    kind = "swing"
    exercise_action = 1

    def validate(self):
        if not self.vol > 0:
            raise TemplateError("vol", f"must be > 0, got {self.vol}")
        if not 0 <= self.kappa < 1:
            raise TemplateError("kappa", f"must lie in [0, 1), got {self.kappa}")
        if int(self.n_dec) != self.n_dec or self.n_dec < 2:
            raise TemplateError("n_dec", f"must be an integer >= 2, got {self.n_dec}")
        if int(self.n_rights) != self.n_rights or self.n_rights < 1:
            raise TemplateError("n_rights", f"must be an integer >= 1, got {self.n_rights}")
        if not self.strike >= 0:
            raise TemplateError("strike", f"must be >= 0, got {self.strike}")
        for name in ("rate", "mu", "start"):
            if not math.isfinite(getattr(self, name)):
                raise TemplateError(name, "must be finite")
        _check_grid(*self.grid_range, self.grid_count)

    @property
    def horizon(self) -> int:
        return int(self.n_dec) - 1

    @property
    def start_position(self) -> int:
        return int(self.n_rights) + 1

    def discount(self, t) -> float:
        return math.exp(-self.rate * t)

    def dynamics(self):
        """Shock specification: ``W = [[1, 0], [kappa*mu + vol*eps, 1 - kappa]]``."""
        from .sampling import RandomEntry, RandomEntrySpec

        const = np.array([[1.0, 0.0], [0.0, 1.0 - self.kappa]])
        return RandomEntrySpec(
            constant=const,
            entries=(RandomEntry(1, 0, self.kappa * self.mu, self.vol, "affine"),),
            shock="normal",
        )

    def start_state(self) -> np.ndarray:
        return np.array([1.0, float(self.start)])


TEMPLATES = {"bermudan_put": BermudanPut, "swing": Swing}


def _put_tangent_rows(grid: Grid, strike: float, scale: float) -> np.ndarray:
    # at the kink (price == strike) the in-the-money slope is used
    rows = np.zeros((grid.m, 2))
    in_money = grid.points[:, 1] <= strike
    if strike > 0:
        rows[in_money, 0] = scale * strike
        rows[in_money, 1] = -scale
    return rows


def build_put_template(params: BermudanPut, n_cells: int = 1000) -> SwitchingModel:
    from .sampling import partition_sampling

    params.validate()
    T = params.horizon
    grid = _augmented_grid(*params.grid_range, params.grid_count)
    control = ControlSpec.deterministic([[1, 1], [2, 1]])

    tangents = np.zeros((T, 2, 2, grid.m, 2))
    for t in range(T):
        tangents[t, 1, 1] = _put_tangent_rows(grid, params.strike, params.discount(t))
    scrap = np.zeros((2, grid.m, 2))
    scrap[1] = _put_tangent_rows(grid, params.strike, params.discount(T))

    disturb = partition_sampling(params.dynamics(), n_cells)
    strike, T_final = params.strike, T

    def reward(t, states):
        states = np.atleast_2d(states)
        out = np.zeros((states.shape[0], 2, 2))
        out[:, 1, 1] = params.discount(t) * np.maximum(strike - states[:, 1], 0.0)
        return out

    def scrap_fn(states):
        states = np.atleast_2d(states)
        out = np.zeros((states.shape[0], 2))
        out[:, 1] = params.discount(T_final) * np.maximum(strike - states[:, 1], 0.0)
        return out

    return SwitchingModel(
        grid,
        control,
        [disturb] * T,
        RewardSubgradients(tangents, scrap),
        RewardOracle(reward, scrap_fn),
    )


def swing_control(n_rights: int) -> ControlSpec:
    rows = [[max(p - 1, 1), p] for p in range(1, n_rights + 2)]
    return ControlSpec.deterministic(rows)


def _swing_tangent_rows(grid: Grid, strike_now: float) -> np.ndarray:
    """Tangents of ``z -> (exp(z_2) - strike_now)^+`` at the grid points."""
    x = grid.points[:, 1]
    slope = np.exp(x)
    intercept = (slope - strike_now) - slope * x
    rows = np.column_stack([intercept, slope])
    # out of the money the positive part is flat; the kink keeps the exponential tangent
    rows[slope < strike_now] = 0.0
    return rows


def build_swing_template(params: Swing, n_cells: int = 1000) -> SwitchingModel:
    from .sampling import partition_sampling

    params.validate()
    T, n_pos = params.horizon, int(params.n_rights) + 1
    grid = _augmented_grid(*params.grid_range, params.grid_count)
    control = swing_control(int(params.n_rights))

    tangents = np.zeros((T, n_pos, 2, grid.m, 2))
    for t in range(T):
        rows = _swing_tangent_rows(grid, params.strike * params.discount(t))
        tangents[t, 1:, 0] = rows
    scrap = np.zeros((n_pos, grid.m, 2))
    scrap[1:] = _swing_tangent_rows(grid, params.strike * params.discount(T))

    disturb = partition_sampling(params.dynamics(), n_cells)
    strike = params.strike

    def payoff(t, states):
        return np.maximum(np.exp(states[:, 1]) - strike * params.discount(t), 0.0)

    def reward(t, states):
        states = np.atleast_2d(states)
        out = np.zeros((states.shape[0], n_pos, 2))
        out[:, 1:, 0] = payoff(t, states)[:, None]
        return out

    def scrap_fn(states):
        states = np.atleast_2d(states)
        out = np.zeros((states.shape[0], n_pos))
        out[:, 1:] = payoff(T, states)[:, None]
        return out

    return SwitchingModel(
        grid,
        control,
        [disturb] * T,
        RewardSubgradients(tangents, scrap),
        RewardOracle(reward, scrap_fn),
    )


def build_template(params, n_cells: int = 1000) -> SwitchingModel:
    if isinstance(params, BermudanPut):
        return build_put_template(params, n_cells)
    if isinstance(params, Swing):
        return build_swing_template(params, n_cells)
    raise TypeError(f"unknown template parameters {type(params).__name__}")


def make_template(kind: str, **params):
    """Instantiate and validate template parameters by name."""
    try:
        cls = TEMPLATES[kind]
    except KeyError:
        raise TemplateError("model", f"unknown template {kind!r}; choose from {sorted(TEMPLATES)}") from None
    known = set(cls.__dataclass_fields__)
    unknown = set(params) - known
    if unknown:
        name = sorted(unknown)[0]
        raise TemplateError(name, "unknown parameter")
    if "grid_range" in params:
        params["grid_range"] = tuple(float(v) for v in params["grid_range"])
    obj = cls(**params)
    obj.validate()
    return obj
