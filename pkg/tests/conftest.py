import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from cswitch.cli import BoundsRun, run_bounds, solve
from cswitch.config import RunConfig, load_config
from cswitch.model import BermudanPut, FunctionStack, SwitchingModel, build_put_template

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@dataclass
class FullRun:
    cfg: RunConfig
    model: SwitchingModel
    stack: FunctionStack
    bounds: BoundsRun
    solve_cpu: float
    bounds_cpu: float


def _full_run(name: str) -> FullRun:
    cfg = load_config(CONFIGS / f"{name}.json")
    t0 = time.process_time()
    model, stack = solve(cfg)
    t1 = time.process_time()
    run = run_bounds(cfg, model, stack)
    t2 = time.process_time()
    return FullRun(cfg, model, stack, run, t1 - t0, t2 - t1)


@pytest.fixture(scope="session")
def put_run() -> FullRun:
    """Full-size Bermudan put: solve plus 500 x 500 bounds."""
    return _full_run("bermudan_put")


@pytest.fixture(scope="session")
def swing_run() -> FullRun:
    return _full_run("swing")


@pytest.fixture(scope="session")
def put51():
    """Bermudan put on a 51-point grid with the standard 1000-cell sampling."""
    params = BermudanPut(grid_count=51)
    return params, build_put_template(params, 1000)


@pytest.fixture(scope="session")
def put51_exact(put51):
    from cswitch.bellman import backward_induction

    _, model = put51
    return backward_induction(model.grid, model.control, model.disturbances, model.rewards, k_nn=None)


def write_config(path: Path, model: str, params=None, solver=None, bounds=None, out=None) -> Path:
    raw = {"model": model, "params": params or {}, "solver": solver or {}, "bounds": bounds or {}}
    if out is not None:
        raw["out"] = str(out)
    path.write_text(json.dumps(raw))
    return path


SMALL_PUT = dict(params={"n_dec": 11}, solver={"grid_count": 61, "n_cells": 100, "k_nn": 10},
                 bounds={"n_path": 40, "n_subsim": 20, "seed": 7})
SMALL_SWING = dict(params={"n_dec": 11, "n_rights": 3}, solver={"grid_count": 41, "n_cells": 100, "k_nn": 10},
                   bounds={"n_path": 40, "n_subsim": 20, "seed": 7})


def rng(seed=0):
    return np.random.default_rng(seed)
