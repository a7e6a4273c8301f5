from .drivers import DriverFn, driver_exp, driver_linear, driver_mc_check, driver_mv
from .errors import InvalidParam, NotPureInsurance, SingularProjection
from .grid import GridModel, Increment, binomial_grid
from .solver import (
    BsdeSolution,
    TrendReport,
    drift_identity_check,
    exp_tower_check,
    solve_discrete,
    trend_report,
)
