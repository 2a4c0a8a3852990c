"""JSON run configuration."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import TemplateError, make_template


class ConfigError(ValueError):
    pass


@dataclass
class SolverSettings:
    grid_count: int | None = None  # None keeps the template default
    grid_range: tuple[float, float] | None = None
    n_cells: int = 1000
    k_nn: int | None = 10  # None searches every tangent row


@dataclass
class BoundSettings:
    n_path: int = 500
    n_subsim: int = 500
    seed: int = 12345
    alpha: float = 0.01
    antithetic: bool = True


@dataclass
class RunConfig:
    model: str
    params: dict = field(default_factory=dict)
    solver: SolverSettings = field(default_factory=SolverSettings)
    bounds: BoundSettings = field(default_factory=BoundSettings)
    out: str = "out"

    def template(self):
        """Validated template parameters including the solver's grid settings."""
        params = dict(self.params)
        if self.solver.grid_count is not None:
            params["grid_count"] = self.solver.grid_count
        if self.solver.grid_range is not None:
            params["grid_range"] = self.solver.grid_range
        try:
            return make_template(self.model, **params)
        except TemplateError as exc:
            raise ConfigError(f"params.{exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"params: {exc}") from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["solver"]["grid_range"] is not None:
            out["solver"]["grid_range"] = list(out["solver"]["grid_range"])
        return out


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown setting")
    return cls(**raw)


def _check(cfg: RunConfig):
    s, b = cfg.solver, cfg.bounds
    if not isinstance(s.n_cells, int) or s.n_cells < 1:
        raise ConfigError(f"solver.n_cells: must be a positive integer, got {s.n_cells!r}")
    if s.k_nn is not None and (not isinstance(s.k_nn, int) or s.k_nn < 1):
        raise ConfigError(f"solver.k_nn: must be a positive integer or null, got {s.k_nn!r}")
    if s.grid_range is not None:
        if len(s.grid_range) != 2:
            raise ConfigError("solver.grid_range: expected [lo, hi]")
        s.grid_range = (float(s.grid_range[0]), float(s.grid_range[1]))
    for name in ("n_path", "n_subsim"):
        val = getattr(b, name)
        if not isinstance(val, int) or val < 2:
            raise ConfigError(f"bounds.{name}: must be an integer >= 2, got {val!r}")
        if b.antithetic and val % 2:
            raise ConfigError(f"bounds.{name}: must be even with antithetic sampling, got {val}")
    if not isinstance(b.seed, int) or b.seed < 0:
        raise ConfigError(f"bounds.seed: must be a non-negative integer, got {b.seed!r}")
    if not 0 < b.alpha < 1:
        raise ConfigError(f"bounds.alpha: must lie in (0, 1), got {b.alpha!r}")
    template = cfg.template()
    if s.k_nn is not None and s.k_nn > template.grid_count:
        raise ConfigError(f"solver.k_nn: {s.k_nn} exceeds the grid size {template.grid_count}")


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(raw) - {"model", "params", "solver", "bounds", "out"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level key")
    if "model" not in raw:
        raise ConfigError("model: missing")
    try:
        cfg = RunConfig(
            model=raw["model"],
            params=dict(raw.get("params") or {}),
            solver=_section(SolverSettings, raw.get("solver"), "solver"),
            bounds=_section(BoundSettings, raw.get("bounds"), "bounds"),
            out=str(raw.get("out", "out")),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _check(cfg)
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return parse_config(raw)
