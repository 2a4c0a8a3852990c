"""Command-line front end: ``solve``, ``bounds``, ``backtest`` and ``plot-data``.

Exit codes: 0 success, 2 configuration error, 3 artifact mismatch, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .bellman import backward_induction
from .config import ConfigError, RunConfig, load_config
from .envelope import evaluate_many
from .duality import BoundSample, bound_stats, dual_bounds, get_bounds, mart_increments
from .model import FunctionStack, SwitchingModel, build_template
from .neighbors import build_index
from .policy import PathPolicy, backtest, path_policy
from .sampling import gen_paths, gen_subsim
from .storage import ArtifactError, load_stack, save_stack, write_csv

log = logging.getLogger("cswitch")

EXIT_CONFIG, EXIT_ARTIFACT, EXIT_IO = 2, 3, 4
STACK_FILE = "stack.csws"


@dataclasses.dataclass
class BoundsRun:
    paths: object
    policy: PathPolicy
    mart: np.ndarray
    sample: BoundSample


class _Clock:
    def __enter__(self):
        self.wall, self.cpu = time.perf_counter(), time.process_time()
        return self

    def __exit__(self, *exc):
        self.wall = time.perf_counter() - self.wall
        self.cpu = time.process_time() - self.cpu

    def report(self) -> dict:
        return {"wall_s": round(self.wall, 4), "cpu_s": round(self.cpu, 4)}


def _k_nn(cfg: RunConfig, model: SwitchingModel):
    k = cfg.solver.k_nn
    return None if k is None or k >= model.grid.m else k


def build_model(cfg: RunConfig):
    params = cfg.template()
    return params, build_template(params, cfg.solver.n_cells)


def solve(cfg: RunConfig, workers: int | None = 1) -> tuple[SwitchingModel, FunctionStack]:
    _, model = build_model(cfg)
    stack = backward_induction(model.grid, model.control, model.disturbances, model.rewards,
                               k_nn=_k_nn(cfg, model), workers=workers)
    return model, stack


def run_bounds(cfg: RunConfig, model: SwitchingModel, stack: FunctionStack,
               workers: int | None = 1, seed: int | None = None) -> BoundsRun:
    params = cfg.template()
    b = cfg.bounds
    seed = b.seed if seed is None else seed
    k_nn = _k_nn(cfg, model)
    index = build_index(model.grid)
    spec = params.dynamics()
    paths = gen_paths(params.start_state(), spec, b.n_path, params.n_dec, seed, b.antithetic)
    policy = path_policy(paths, model.grid, model.control, model.oracle, stack, index, k_nn, workers=workers)
    subsim = gen_subsim(spec, b.n_subsim, b.n_path, params.n_dec, seed, b.antithetic)
    mart = mart_increments(paths, subsim, model.grid, stack, model.oracle, index, k_nn, workers=workers)
    sample = dual_bounds(paths, model.control, model.oracle, policy, mart)
    return BoundsRun(paths, policy, mart, sample)


def check_stack(stack: FunctionStack, model: SwitchingModel) -> None:
    expected = (model.rewards.horizon + 1, model.control.n_pos, model.grid.m, model.grid.d)
    if stack.value.shape != expected:
        raise ArtifactError(f"stack dimensions {stack.value.shape} do not match the configuration {expected}")


def _update_manifest(out: Path, command: str, entry: dict) -> None:
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            manifest = {}
    manifest[command] = entry
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.bounds.seed = args.seed
    if getattr(args, "alpha", None) is not None:
        if not 0 < args.alpha < 1:
            raise ConfigError(f"--alpha: must lie in (0, 1), got {args.alpha}")
        cfg.bounds.alpha = args.alpha
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _load_checked(args, out: Path, model: SwitchingModel) -> FunctionStack:
    stack = load_stack(Path(args.stack) if args.stack else out / STACK_FILE)
    check_stack(stack, model)
    return stack


def cmd_solve(args) -> int:
    cfg, out = _prepare(args)
    with _Clock() as clock:
        model, stack = solve(cfg, args.threads)
    save_stack(out / STACK_FILE, stack)
    _update_manifest(out, "solve", {
        "config": cfg.to_dict(),
        "k_nn": _k_nn(cfg, model),
        "dims": {"n_dec": stack.n_dec, "n_pos": stack.n_pos, "m": stack.m, "d": stack.d},
        "timing": clock.report(),
        "artifact": STACK_FILE,
    })
    print(f"solve: {stack.n_dec} epochs x {stack.n_pos} positions x {stack.m} tangents "
          f"({clock.wall:.2f}s wall, {clock.cpu:.2f}s cpu) -> {out / STACK_FILE}")
    return 0


def _positions(args, n_pos: int) -> list[int]:
    if args.position is None:
        return list(range(1, n_pos + 1))
    if not 1 <= args.position <= n_pos:
        raise ConfigError(f"--position: must lie in 1..{n_pos}, got {args.position}")
    return [args.position]


def cmd_bounds(args) -> int:
    cfg, out = _prepare(args)
    _, model = build_model(cfg)
    stack = _load_checked(args, out, model)
    positions = _positions(args, model.control.n_pos)
    with _Clock() as clock:
        run = run_bounds(cfg, model, stack, args.threads)
    rows, report = [], []
    for p in positions:
        low, high = get_bounds(run.sample, cfg.bounds.alpha, p)
        stats = bound_stats(run.sample, p)
        report.append({"position": p, "low": low, "high": high, **stats})
        rows.append([p, low, high, stats["mean_primal"], stats["mean_dual"], stats["se_primal"],
                     stats["se_dual"], stats["n_path"]])
        print(f"position {p}: [{low:.6f}, {high:.6f}]  primal {stats['mean_primal']:.6f} "
              f"(se {stats['se_primal']:.2e})  dual {stats['mean_dual']:.6f} (se {stats['se_dual']:.2e})")
    write_csv(out / "bounds.csv",
              ["position", "low", "high", "mean_primal", "mean_dual", "se_primal", "se_dual", "n_path"], rows)
    (out / "bounds.json").write_text(json.dumps({"alpha": cfg.bounds.alpha, "bounds": report}, indent=2) + "\n")
    _update_manifest(out, "bounds", {"config": cfg.to_dict(), "timing": clock.report()})
    print(f"bounds: {cfg.bounds.n_path} paths x {cfg.bounds.n_subsim} subsims "
          f"({clock.wall:.2f}s wall, {clock.cpu:.2f}s cpu)")
    return 0


def cmd_backtest(args) -> int:
    cfg, out = _prepare(args)
    params, model = build_model(cfg)
    stack = _load_checked(args, out, model)
    b = cfg.bounds
    seed = b.seed
    paths = gen_paths(params.start_state(), params.dynamics(), b.n_path, params.n_dec, seed, b.antithetic)
    if args.override == "exercise-now":
        shape = (paths.n_path, paths.n_dec - 1, model.control.n_pos)
        policy = PathPolicy(np.full(shape, params.exercise_action, dtype=np.int64))
    else:
        policy = path_policy(paths, model.grid, model.control, model.oracle, stack,
                             build_index(model.grid), _k_nn(cfg, model), workers=args.threads)
    start = args.position or params.start_position
    if not 1 <= start <= model.control.n_pos:
        raise ConfigError(f"--position: must lie in 1..{model.control.n_pos}, got {start}")
    result = backtest(start, paths, model.control, model.oracle, policy, seed)
    ex = result.exercise_times()
    rows = [[i, v, e, p] for i, (v, e, p) in enumerate(zip(result.values, ex, result.positions[:, -1]))]
    summary = [
        ["mean", float(np.mean(result.values)), float(np.mean(ex)), ""],
        ["sd", float(np.std(result.values, ddof=1)), float(np.std(ex, ddof=1)), ""],
    ]
    for q in (0.05, 0.25, 0.5, 0.75, 0.95):
        summary.append([f"q{int(q * 100):02d}", float(np.quantile(result.values, q)),
                        float(np.quantile(ex, q)), ""])
    write_csv(out / "backtest.csv", ["path", "value", "exercise_time", "terminal_position"], rows + summary)
    print(f"backtest: mean value {summary[0][1]:.6f}, sd {summary[1][1]:.6f}, "
          f"mean exercise time {summary[0][2]:.3f} -> {out / 'backtest.csv'}")
    return 0


def cmd_plot_data(args) -> int:
    cfg, out = _prepare(args)
    _, model = build_model(cfg)
    stack = _load_checked(args, out, model)
    t = 0 if args.time is None else args.time
    p = args.position or (cfg.template().start_position)
    if not 0 <= t < stack.n_dec:
        raise ConfigError(f"--time: must lie in 0..{stack.n_dec - 1}, got {t}")
    if not 1 <= p <= stack.n_pos:
        raise ConfigError(f"--position: must lie in 1..{stack.n_pos}, got {p}")
    g = model.grid.points
    varying = [c for c in range(g.shape[1]) if np.ptp(g[:, c]) > 0]
    values = evaluate_many(stack.value[t, p - 1], g)[0]
    rows = [[*(g[i, c] for c in varying), values[i]] for i in range(g.shape[0])]
    path = out / f"plot_t{t}_p{p}.csv"
    write_csv(path, [f"x{c + 1}" for c in varying] + ["value"], rows)
    print(f"plot-data: {len(rows)} rows -> {path}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cswitch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: config 'out')")
        p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = all cores")
        return p

    common(sub.add_parser("solve", help="approximate the value functions")).set_defaults(fn=cmd_solve)
    for name, fn, helptext in (
        ("bounds", cmd_bounds, "primal-dual confidence bounds"),
        ("backtest", cmd_backtest, "backtest the policy on the bound paths"),
        ("plot-data", cmd_plot_data, "value function on the grid as CSV"),
    ):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--stack", help="stack artifact (default: OUT/stack.csws)")
        p.add_argument("--position", type=int)
        p.add_argument("--seed", type=int, help="override bounds.seed")
        p.add_argument("--alpha", type=float, help="override bounds.alpha")
        if name == "plot-data":
            p.add_argument("--time", type=int)
        if name == "backtest":
            p.add_argument("--override", choices=["exercise-now"], help="replace the solved policy")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
