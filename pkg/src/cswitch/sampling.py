"""Disturbance quantization and scenario generation.

Randomness is keyed: every slice of a generated tensor draws from its own
``SeedSequence(seed, spawn_key=key)`` stream, so any slice can be rebuilt on
its own (or in parallel) with identical bits.  Keys in use:

====================  ===================
generator             key
====================  ===================
monte_carlo_sampling  ``(0,)``
gen_paths             ``(1, t)``
gen_subsim            ``(2, t, path)``
backtest transitions  ``(3, t)``
====================  ===================

Antithetic pairs are formed on the underlying standard normal draws and are
interleaved along the fastest axis: paths ``(0, 1), (2, 3), ...`` at a fixed
time for :func:`gen_paths`, subsims ``(0, 1), ...`` at a fixed (time, path)
for :func:`gen_subsim`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .model import DisturbanceSet

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class RandomEntry:
    """Matrix entry ``(row, col)`` (0-based) driven by the scalar shock.

    ``kind == "affine"``: ``a + b * shock``; ``kind == "exp"``: ``exp(a + b * shock)``.
    """

    row: int
    col: int
    a: float
    b: float
    kind: str = "affine"

    def apply(self, shock):
        if self.kind == "affine":
            return self.a + self.b * shock
        if self.kind == "exp":
            return np.exp(self.a + self.b * shock)
        raise ValueError(f"unknown transform {self.kind!r}")


@dataclass(frozen=True, eq=False)
class RandomEntrySpec:
    """Disturbance ``W`` built from a constant matrix and one scalar shock.

    ``shock="normal"`` is a standard normal; ``shock="lognormal"`` is
    ``exp(log_mean + log_sd * Z)`` with ``Z`` standard normal.
    """

    constant: np.ndarray
    entries: tuple = ()
    shock: str = "normal"
    log_mean: float = 0.0
    log_sd: float = 1.0

    def __post_init__(self):
        const = np.array(self.constant, dtype=float)
        const.setflags(write=False)
        object.__setattr__(self, "constant", const)
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.shock not in ("normal", "lognormal"):
            raise ValueError(f"unsupported shock distribution {self.shock!r}")
        d = const.shape[0]
        for e in self.entries:
            if not (0 <= e.row < d and 0 <= e.col < d):
                raise ValueError(f"random entry ({e.row}, {e.col}) outside a {d}x{d} matrix")
            if not np.isfinite(e.b):
                raise ValueError("random entry coefficient b must be finite")

    @property
    def d(self) -> int:
        return self.constant.shape[0]

    def shocks(self, normals):
        """Map standard normal draws to shock values."""
        if self.shock == "normal":
            return normals
        return np.exp(self.log_mean + self.log_sd * normals)

    def matrices(self, shocks) -> np.ndarray:
        """Disturbance matrices for an array of shock values (shape ``shocks.shape + (d, d)``)."""
        shocks = np.asarray(shocks, dtype=float)
        out = np.broadcast_to(self.constant, shocks.shape + self.constant.shape).copy()
        for e in self.entries:
            out[..., e.row, e.col] = e.apply(shocks)
        return out


def _mass(lo, hi):
    # P(lo < Z < hi) for a standard normal, evaluated on the accurate tail
    return np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _cell_means(entry: RandomEntry, spec: RandomEntrySpec, lo, hi, prob):
    """Conditional mean of the transformed entry on normal-quantile cells (lo, hi)."""
    if spec.shock == "normal":
        if entry.kind == "affine":
            return entry.a + entry.b * (_phi(lo) - _phi(hi)) / prob
        b = entry.b
        return np.exp(entry.a + 0.5 * b * b) * _mass(lo - b, hi - b) / prob
    if entry.kind != "affine":
        raise ValueError("partition sampling does not support exp transforms of a lognormal shock")
    s = spec.log_sd
    shock_mean = np.exp(spec.log_mean + 0.5 * s * s) * _mass(lo - s, hi - s) / prob
    return entry.a + entry.b * shock_mean


def partition_sampling(spec: RandomEntrySpec, n_cells: int) -> DisturbanceSet:
    """Local averages of ``W`` on ``n_cells`` equiprobable cells of the shock.

    Cell ``k`` is bounded by the shock quantiles at ``k/n`` and ``(k+1)/n``;
    the atom is the conditional mean of every random entry in that cell and
    every atom has weight ``1/n``.
    """
    if int(n_cells) != n_cells or n_cells < 1:
        raise ValueError(f"n_cells must be a positive integer, got {n_cells!r}")
    n = int(n_cells)
    edges = ndtri(np.arange(n + 1) / n)  # -inf .. inf in standard-normal space
    lo, hi = edges[:-1], edges[1:]
    prob = 1.0 / n
    mats = np.broadcast_to(spec.constant, (n, spec.d, spec.d)).copy()
    for e in spec.entries:
        mats[:, e.row, e.col] = _cell_means(e, spec, lo, hi, prob)
    return DisturbanceSet(mats, np.full(n, prob))


def _stream(seed: int, key: tuple) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def keyed_uniforms(seed: int, key: tuple, n: int) -> np.ndarray:
    return _stream(seed, key).random(n)


def keyed_normals(seed: int, key: tuple, n: int, antithetic: bool) -> np.ndarray:
    """``n`` standard normals from the stream keyed by ``(seed, key)``."""
    rng = _stream(seed, key)
    if not antithetic:
        return rng.standard_normal(n)
    if n % 2:
        raise ValueError(f"antithetic sampling needs an even count, got {n}")
    half = rng.standard_normal(n // 2)
    out = np.empty(n)
    out[0::2] = half
    out[1::2] = -half
    return out


def monte_carlo_sampling(spec: RandomEntrySpec, n: int, seed: int, antithetic: bool = False) -> DisturbanceSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    normals = keyed_normals(seed, (0,), n, antithetic)
    return DisturbanceSet(spec.matrices(spec.shocks(normals)), np.full(n, 1.0 / n))


def apply_matrices(mats: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Batched ``mats @ z`` summed in fixed column order (no BLAS, reproducible bits)."""
    d = mats.shape[-1]
    out = mats[..., 0] * z[..., None, 0]
    for c in range(1, d):
        out = out + mats[..., c] * z[..., None, c]
    return out


@dataclass(frozen=True, eq=False)
class PathBundle:
    states: np.ndarray  # (n_path, n_dec, d)
    disturbances: np.ndarray  # (n_path, n_dec - 1, d, d)
    start: np.ndarray

    @property
    def n_path(self) -> int:
        return self.states.shape[0]

    @property
    def n_dec(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @classmethod
    def from_disturbances(cls, start, disturbances) -> PathBundle:
        """Roll the linear recursion ``Z_{t+1} = W_{t+1} Z_t`` forward."""
        start = np.asarray(start, dtype=float)
        disturbances = np.asarray(disturbances, dtype=float)
        n_path, horizon = disturbances.shape[:2]
        states = np.empty((n_path, horizon + 1, start.size))
        states[:, 0] = start
        for t in range(horizon):
            states[:, t + 1] = apply_matrices(disturbances[:, t], states[:, t])
        return cls(states, disturbances, start)


def gen_paths(start, spec: RandomEntrySpec, n_path: int, n_dec: int, seed: int, antithetic: bool = True) -> PathBundle:
    if n_path < 1 or n_dec < 2:
        raise ValueError("need n_path >= 1 and n_dec >= 2")
    if antithetic and n_path % 2:
        raise ValueError(f"antithetic paths need an even n_path, got {n_path}")
    horizon = n_dec - 1
    shocks = np.empty((n_path, horizon))
    for t in range(horizon):
        shocks[:, t] = spec.shocks(keyed_normals(seed, (1, t), n_path, antithetic))
    return PathBundle.from_disturbances(start, spec.matrices(shocks))


class SubsimBundle:
    """Nested-simulation disturbances, indexed ``[subsim, path, t]``.

    Built either lazily from a shock spec (slices are generated on demand
    from their own keyed stream) or from an explicit
    ``(n_subsim, n_path, n_dec - 1, d, d)`` tensor.
    """

    def __init__(self, n_subsim, n_path, n_dec, weights=None, *, spec=None, seed=0,
                 antithetic=True, tensor=None):
        self.n_subsim, self.n_path, self.n_dec = int(n_subsim), int(n_path), int(n_dec)
        self.spec, self.seed, self.antithetic = spec, seed, antithetic
        self._tensor = None if tensor is None else np.asarray(tensor, dtype=float)
        if weights is None:
            weights = np.full(self.n_subsim, 1.0 / self.n_subsim)
        self.weights = np.asarray(weights, dtype=float)

    @classmethod
    def from_tensor(cls, tensor, weights=None) -> SubsimBundle:
        tensor = np.asarray(tensor, dtype=float)
        n_subsim, n_path, horizon = tensor.shape[:3]
        return cls(n_subsim, n_path, horizon + 1, weights, tensor=tensor)

    @property
    def d(self) -> int:
        return self.spec.d if self._tensor is None else self._tensor.shape[-1]

    def shocks(self, t: int, path: int) -> np.ndarray:
        normals = keyed_normals(self.seed, (2, t, path), self.n_subsim, self.antithetic)
        return self.spec.shocks(normals)

    def slice(self, t: int, paths=None) -> np.ndarray:
        """Matrices for time ``t``, shape ``(len(paths), n_subsim, d, d)``."""
        if paths is None:
            paths = range(self.n_path)
        if self._tensor is not None:
            return np.moveaxis(self._tensor[:, list(paths), t], 0, 1)
        shocks = np.stack([self.shocks(t, i) for i in paths])
        return self.spec.matrices(shocks)

    def tensor(self) -> np.ndarray:
        if self._tensor is not None:
            return self._tensor
        per_t = [self.slice(t) for t in range(self.n_dec - 1)]  # (n_path, n_subsim, d, d) each
        return np.moveaxis(np.stack(per_t, axis=2), 1, 0)


def gen_subsim(spec: RandomEntrySpec, n_subsim: int, n_path: int, n_dec: int, seed: int,
               antithetic: bool = True) -> SubsimBundle:
    if n_subsim < 1 or n_path < 1 or n_dec < 2:
        raise ValueError("need n_subsim >= 1, n_path >= 1 and n_dec >= 2")
    if antithetic and n_subsim % 2:
        raise ValueError(f"antithetic subsimulation needs an even n_subsim, got {n_subsim}")
    return SubsimBundle(n_subsim, n_path, n_dec, spec=spec, seed=seed, antithetic=antithetic)
