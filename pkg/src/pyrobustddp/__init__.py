"""Robust differential dynamic programming for uncertain generalized plants."""

from pyrobustddp._backward import (
    AffinePolicy,
    BackwardStepResult,
    Strategy,
    backward_step,
    backward_step_canonical,
    backward_step_dual,
    backward_step_simple,
    default_sigma,
    run_backward_pass,
)
from pyrobustddp._driver import (
    CertificateLabel,
    IterationRecord,
    PlanOptions,
    PlanStatus,
    RobustPlan,
    Trajectory,
    evaluate_cost,
    load_plan,
    plan,
    rollout,
    save_plan,
    simulate_uncertain,
)
from pyrobustddp._errors import (
    BackwardInfeasible,
    ConfigError,
    DimensionMismatch,
    Infeasible,
    MaxItersExceeded,
    NonAffineExpression,
    NonFiniteDerivative,
    NonFiniteState,
    NonSymmetricTerminalCost,
    NotApplicable,
    NotConcaveInW,
    NumericalFailure,
    PrimalCheckFailed,
    RankDeficientFactor,
    RankDeficientW1,
    RankDeficientW12,
    RegularityViolated,
    RobustDdpError,
    SchemaVersionMismatch,
    SingularP,
    SingularPivot,
    UnknownVariable,
    WellPosednessFailure,
    WrongSign,
)
from pyrobustddp._experiment import RunConfig, load_run_config, run_montecarlo
from pyrobustddp._models import PendulumParams, build_pendulum_plant, linear_fixture, pendulum_derivative, rk4_step
from pyrobustddp._plant import (
    GeneralizedPlant,
    MultiplierSet,
    Provenance,
    UncertaintySample,
    ValidationReport,
    box_multipliers,
    validate_plant,
)
from pyrobustddp._qapprox import Linearization, QMethod, StageQuadCost, linearize, q_matrix, regularize
from pyrobustddp._quadform import (
    Block,
    Definiteness,
    DualizationCheck,
    PartitionedQuad,
    ValueQuad,
    WorstCaseMap,
    dualize_equiv,
    dualize_oneway,
    schur_eliminate,
    worst_case_delta_w,
)
from pyrobustddp._sdp import (
    AffineExpr,
    LmiProblem,
    SdpSolution,
    SolveStatus,
    SolverOptions,
    Variable,
    assemble,
    bmat,
    dump_problem,
    load_problem,
    psd,
    solve,
    trace,
)

__version__ = '0.0.0'

__all__ = [
    'AffineExpr',
    'AffinePolicy',
    'BackwardInfeasible',
    'BackwardStepResult',
    'Block',
    'CertificateLabel',
    'ConfigError',
    'Definiteness',
    'DimensionMismatch',
    'DualizationCheck',
    'GeneralizedPlant',
    'Infeasible',
    'IterationRecord',
    'Linearization',
    'LmiProblem',
    'MaxItersExceeded',
    'MultiplierSet',
    'NonAffineExpression',
    'NonFiniteDerivative',
    'NonFiniteState',
    'NonSymmetricTerminalCost',
    'NotApplicable',
    'NotConcaveInW',
    'NumericalFailure',
    'PartitionedQuad',
    'PendulumParams',
    'PlanOptions',
    'PlanStatus',
    'PrimalCheckFailed',
    'Provenance',
    'QMethod',
    'RankDeficientFactor',
    'RankDeficientW1',
    'RankDeficientW12',
    'RegularityViolated',
    'RobustDdpError',
    'RobustPlan',
    'RunConfig',
    'SchemaVersionMismatch',
    'SdpSolution',
    'SingularP',
    'SingularPivot',
    'SolveStatus',
    'SolverOptions',
    'StageQuadCost',
    'Strategy',
    'Trajectory',
    'UncertaintySample',
    'UnknownVariable',
    'ValidationReport',
    'ValueQuad',
    'Variable',
    'WellPosednessFailure',
    'WorstCaseMap',
    'WrongSign',
    'assemble',
    'backward_step',
    'backward_step_canonical',
    'backward_step_dual',
    'backward_step_simple',
    'bmat',
    'box_multipliers',
    'build_pendulum_plant',
    'default_sigma',
    'dualize_equiv',
    'dualize_oneway',
    'dump_problem',
    'evaluate_cost',
    'linear_fixture',
    'linearize',
    'load_plan',
    'load_problem',
    'load_run_config',
    'pendulum_derivative',
    'plan',
    'psd',
    'q_matrix',
    'regularize',
    'rk4_step',
    'rollout',
    'run_backward_pass',
    'run_montecarlo',
    'save_plan',
    'schur_eliminate',
    'simulate_uncertain',
    'solve',
    'trace',
    'validate_plant',
    'worst_case_delta_w',
]
