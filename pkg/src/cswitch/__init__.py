"""Convex switching systems: max-of-affine backward induction with primal-dual bounds."""
from .bellman import ModelError, backward_induction, double_modified_step
from .duality import BoundSample, bound_stats, dual_bounds, get_bounds, mart_increments
from .envelope import (ConvexityError, OracleSample, envelope_from_oracle, evaluate, evaluate_many,
                       expected_pwl)
from .model import (BermudanPut, ControlSpec, DisturbanceSet, FunctionStack, Grid, RewardOracle,
                    RewardSubgradients, Swing, SwitchingModel, TemplateError, build_put_template,
                    build_swing_template, build_template, make_template, validate_model)
from .neighbors import NeighborIndex, build_index, query_knn
from .policy import BacktestResult, PathPolicy, backtest, path_policy
from .sampling import (PathBundle, RandomEntry, RandomEntrySpec, SubsimBundle, gen_paths, gen_subsim,
                       monte_carlo_sampling, partition_sampling)

__version__ = "0.1.0"
