from .model import (
    ConditionalValue,
    Density,
    ObservableSpec,
    Partition,
    Payoff,
    ScenarioTree,
    TreeConfig,
    build_tree,
    cond_expectation,
    partition_for,
    risk_neutral_measure,
)

from .evaluate import (
    DensitySet,
    PenaltyFn,
    PrincipleSpec,
    backward_evaluate,
    evaluate,
    two_step,
)

from .bsde import BsdeSolution, DriverFn, GridModel, solve_discrete

from .reports import AxiomReport, CheckResult, Report, WitnessReport
