from .errors import (
    Arbitrage,
    IncompleteMarket,
    InvalidConfig,
    NotMeasurable,
    UnknownTime,
    ZeroBlockMass,
)
from .lattices import binomial_config, lattice_config, product_config, random_config
from .measures import (
    financial_chain,
    one_step_pricing,
    path_pricing_density,
    risk_neutral_measure,
    solve_one_step,
)
from .partitions import ObservableSpec, Partition, financial_partition, partition_for
from .tree import Node, ScenarioTree, TreeConfig, build_tree
from .values import ConditionalValue, Density, Payoff, cond_expectation
from . import payoffs
