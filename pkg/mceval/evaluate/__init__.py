from .errors import (
    BandClampWarning,
    ConstructionFailed,
    EmptyFamily,
    EmptySet,
    InfeasibleBand,
    InvalidLevel,
    InvalidSpec,
    NonpositiveNumeraire,
    PreconditionViolated,
)

from .principles import (
    PrincipleOracle,
    PrincipleSpec,
    avar,
    evaluate,
    local_glue,
    var,
)

from .twostep import (
    RiskNeutralOracle,
    TwoStepEvaluation,
    financial_agreement_witness,
    is_market_consistent_witness,
    market_local_witness,
    martingale_bounds,
    numeraire_transform,
    sub_replication,
    super_replication,
    two_step,
)

from .duality import (
    DensitySet,
    CounterexampleEvaluation,
    PenaltyFn,
    avar_hedged,
    canonical_counterexample_template,
    characteristic_check,
    concatenate,
    market_local_counterexample,
    dual_eval,
    essential_supremum,
    gini_penalty,
    indicator_penalty,
    lift,
    penalty_of,
    pricing_agreement_check,
)

from .dynamic import (
    DynamicEvaluation,
    DynamicFamily,
    ExpectationFamily,
    FamilyOfOracles,
    backward_evaluate,
    dynamic_market_consistency_check,
    monotonicity_check,
    reveal_structure_check,
    static_family,
    time_consistency_check,
)
