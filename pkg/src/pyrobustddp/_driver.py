"""The robust DDP loop.

:func:`plan` alternates robust backward passes along the current trajectory with nominal rollouts (``w = 0``) of the
resulting affine policies until the rolled-out states stop moving.

Usage
-----

.. code-block:: python

    import numpy as np
    from pyrobustddp import PlanOptions, linear_fixture, plan

    plant = linear_fixture('double_integrator')
    robust_plan = plan(plant, np.array([1.0, 0.0]), PlanOptions(max_iters=5))
    robust_plan.raise_for_status()
    print(robust_plan.bound)
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import pathlib
import time
import typing

import numpy as np

from pyrobustddp import _common
from pyrobustddp._backward import DEFAULT_SIGMA_WEIGHT, AffinePolicy, Strategy, run_backward_pass
from pyrobustddp._errors import (
    BackwardInfeasible,
    DimensionMismatch,
    MaxItersExceeded,
    NonFiniteState,
    SchemaVersionMismatch,
    WellPosednessFailure,
)
from pyrobustddp._plant import validate_plant
from pyrobustddp._qapprox import QMethod
from pyrobustddp._quadform import ValueQuad
from pyrobustddp._sdp import SolverOptions

if typing.TYPE_CHECKING:
    from pyrobustddp._plant import GeneralizedPlant, UncertaintySample

logger = logging.getLogger('pyrobustddp.driver')

PLAN_SCHEMA_VERSION = 1


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """States ``x_0 .. x_T`` with inputs, disturbances and uncertainty outputs ``0 .. T - 1``."""

    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.array(self.states, dtype=float))
        horizon = states.shape[0] - 1
        arrays = {'states': states}
        for name in ('inputs', 'disturbances', 'outputs'):
            value = np.array(getattr(self, name), dtype=float)
            arrays[name] = value.reshape(horizon, -1) if value.size else np.zeros((horizon, 0))
        for name, value in arrays.items():
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def distance(self, other: Trajectory) -> float:
        """Norm of the stacked state deviations."""
        return float(np.linalg.norm(self.states - other.states))


class PlanStatus(str, enum.Enum):
    CONVERGED = 'converged'
    MAX_ITERS = 'max_iters'
    INFEASIBLE = 'infeasible'


class CertificateLabel(str, enum.Enum):
    EXACT = 'exact'
    LOCAL = 'local'


@dataclasses.dataclass(frozen=True)
class IterationRecord:
    iteration: int
    step_norm: float
    nominal_cost: float
    bound: float


@dataclasses.dataclass(frozen=True)
class PlanOptions:
    """Settings of :func:`plan`.

    ``epsilon`` defaults to ``1e-6 * (1 + ||states||)`` of the current trajectory. ``initial_inputs`` replaces the
    zero inputs of the first rollout.
    """

    epsilon: float | None = None
    max_iters: int = 50
    strategy: Strategy = Strategy.AUTO
    qmethod: QMethod = QMethod.LINEARIZED
    sigma_weight: float = DEFAULT_SIGMA_WEIGHT
    regularization: float | None = None
    solver: SolverOptions = dataclasses.field(default_factory=SolverOptions)
    initial_inputs: np.ndarray | None = None
    trace_path: _common.PATH_TYPE | None = None

    def __post_init__(self):
        object.__setattr__(self, 'strategy', Strategy(self.strategy))
        object.__setattr__(self, 'qmethod', QMethod(self.qmethod))
        if self.max_iters < 1:
            raise ValueError(f'max_iters must be at least 1, got {self.max_iters}')


@dataclasses.dataclass(frozen=True)
class RobustPlan:
    """Policies and certified values anchored at ``trajectory``.

    ``rollout`` is the nominal rollout of the policies, ``log`` has one record per DDP iteration.
    """

    policies: tuple[AffinePolicy, ...]
    values: tuple[ValueQuad, ...]
    trajectory: Trajectory
    rollout: Trajectory
    log: tuple[IterationRecord, ...]
    status: PlanStatus
    label: CertificateLabel
    strategies: tuple[str, ...] = ()

    @property
    def bound(self) -> float:
        """Certified bound ``V_0(x_0)`` on the worst-case cost."""
        return self.values[0](self.trajectory.states[0])

    @property
    def converged(self) -> bool:
        return self.status is PlanStatus.CONVERGED

    def raise_for_status(self) -> RobustPlan:
        """Return ``self`` unless the loop stopped at the iteration limit.

        :raises MaxItersExceeded: If the trajectory did not converge.
        """
        if self.status is PlanStatus.MAX_ITERS:
            raise MaxItersExceeded(f'Plan did not converge within {len(self.log)} iterations')
        return self


def _checked(state: np.ndarray, t: int) -> np.ndarray:
    if not np.all(np.isfinite(state)):
        raise NonFiniteState(f'The dynamics produced a non-finite state at timestep {t}')
    return state


def rollout(plant: GeneralizedPlant, policies: typing.Sequence[AffinePolicy], x0: np.ndarray) -> Trajectory:
    """Nominal closed-loop rollout with ``w = 0``.

    :raises NonFiniteState: If the dynamics blow up.
    """
    if len(policies) != plant.horizon:
        raise DimensionMismatch(f'Got {len(policies)} policies for horizon {plant.horizon}')
    states = [_checked(np.asarray(x0, dtype=float).ravel(), 0)]
    inputs = []
    outputs = []
    w = np.zeros(plant.d)
    for t, policy in enumerate(policies):
        u = policy(states[-1])
        inputs.append(u)
        outputs.append(plant.output(states[-1], u, w))
        states.append(_checked(plant.step(states[-1], u, w), t + 1))
    return Trajectory(np.array(states), np.array(inputs), np.zeros((plant.horizon, plant.d)), np.array(outputs))


def open_loop_rollout(plant: GeneralizedPlant, x0: np.ndarray, inputs: np.ndarray | None = None) -> Trajectory:
    """Nominal rollout of fixed inputs, zero inputs by default."""
    inputs = np.zeros((plant.horizon, plant.m)) if inputs is None else np.asarray(inputs, dtype=float)
    x0 = np.asarray(x0, dtype=float).ravel()
    policies = [AffinePolicy(u, np.zeros((plant.m, plant.n)), x0, np.zeros(plant.m)) for u in inputs]
    return rollout(plant, policies, x0)


def evaluate_cost(plant: GeneralizedPlant, trajectory: Trajectory) -> float:
    """Sum of the stage costs plus the terminal cost."""
    stage = sum(plant.cost(x, u) for x, u in zip(trajectory.states[:-1], trajectory.inputs, strict=True))
    return float(stage + plant.terminal_value(trajectory.states[-1]))


def simulate_uncertain(
    plant: GeneralizedPlant,
    policies: typing.Sequence[AffinePolicy],
    x0: np.ndarray,
    sample: UncertaintySample,
) -> tuple[Trajectory, float]:
    """Closed-loop rollout under a realization of the uncertainty.

    At every step ``w = delta_t * g(x, u, w)`` is resolved by fixed-point iteration.

    :return: The trajectory and its realized cost.
    :raises WellPosednessFailure: If the uncertainty loop does not settle.
    :raises NonFiniteState: If the dynamics blow up.
    """
    if sample.horizon < plant.horizon or sample.channels != len(plant.channels):
        raise DimensionMismatch(
            f'Sample of shape {sample.deltas.shape} does not fit horizon {plant.horizon} and {len(plant.channels)} '
            'channels'
        )
    if plant.d and not plant.channels:
        logger.debug('Plant %s has no box channels, simulating with w = 0.', plant.name)
    states = [_checked(np.asarray(x0, dtype=float).ravel(), 0)]
    inputs = []
    disturbances = []
    outputs = []
    for t, policy in enumerate(policies):
        x = states[-1]
        u = policy(x)
        w = plant.close_loop(x, u, sample.at(t)) if plant.channels else np.zeros(plant.d)
        inputs.append(u)
        disturbances.append(w)
        outputs.append(plant.output(x, u, w))
        states.append(_checked(plant.step(x, u, w), t + 1))
    trajectory = Trajectory(np.array(states), np.array(inputs), np.array(disturbances), np.array(outputs))
    return trajectory, evaluate_cost(plant, trajectory)


def plan(plant: GeneralizedPlant, x0: np.ndarray, options: PlanOptions | None = None) -> RobustPlan:
    """Plan a robust trajectory from ``x0``.

    :param plant: The plant.
    :param x0: The initial state.
    :param options: Loop and backward pass settings.
    :return: The plan; its status tells whether the loop converged.
    :raises BackwardInfeasible: If the first backward pass finds no certificate.
    :raises NonSymmetricTerminalCost: If the terminal cost is not symmetric positive semi-definite.
    :raises WellPosednessFailure: If the uncertainty loop of the plant fails its probes.
    """
    options = options or PlanOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (plant.n,):
        raise DimensionMismatch(f'Initial state of shape {x0.shape} does not fit n={plant.n}')
    report = validate_plant(plant)
    if not report.valid:
        raise WellPosednessFailure(
            f'Plant {plant.name} failed {len(report.issues)} well-posedness probes, first {report.issues[0]}'
        )
    trajectory = open_loop_rollout(plant, x0, options.initial_inputs)
    log: list[IterationRecord] = []
    last = None
    status = PlanStatus.MAX_ITERS
    for iteration in range(1, options.max_iters + 1):
        started = time.perf_counter()
        try:
            results = run_backward_pass(
                plant,
                trajectory,
                strategy=options.strategy,
                qmethod=options.qmethod,
                sigma_weight=options.sigma_weight,
                regularization=options.regularization,
                solver=options.solver,
                iteration=iteration,
                trace_path=options.trace_path,
            )
        except BackwardInfeasible as e:
            if last is None:
                raise
            logger.warning('Iteration %d failed (%s), returning the plan of iteration %d.', iteration, e, iteration - 1)
            status = PlanStatus.INFEASIBLE
            break
        policies = [result.policy for result in results]
        following = rollout(plant, policies, x0)
        step_norm = following.distance(trajectory)
        epsilon = options.epsilon
        if epsilon is None:
            epsilon = 1e-6 * (1.0 + float(np.linalg.norm(trajectory.states)))
        record = IterationRecord(
            iteration=iteration,
            step_norm=step_norm,
            nominal_cost=evaluate_cost(plant, following),
            bound=results[0].value(x0),
        )
        log.append(record)
        logger.info(
            'Iteration %d: step %.3e, nominal cost %.6e, bound %.6e (%.2fs).',
            iteration,
            record.step_norm,
            record.nominal_cost,
            record.bound,
            time.perf_counter() - started,
        )
        last = (results, trajectory, following)
        if step_norm < epsilon:
            status = PlanStatus.CONVERGED
            break
        trajectory = following
    if status is PlanStatus.MAX_ITERS:
        logger.warning('Plan did not converge within %d iterations.', options.max_iters)
    results, anchor, following = typing.cast('tuple', last)
    return RobustPlan(
        policies=tuple(result.policy for result in results),
        values=tuple(result.value for result in results),
        trajectory=anchor,
        rollout=following,
        log=tuple(log),
        status=status,
        label=CertificateLabel.EXACT if plant.linear else CertificateLabel.LOCAL,
        strategies=tuple(result.strategy.value for result in results),
    )


def _trajectory_to_dict(trajectory: Trajectory) -> dict[str, list]:
    return {
        'states': trajectory.states.tolist(),
        'inputs': trajectory.inputs.tolist(),
        'disturbances': trajectory.disturbances.tolist(),
        'outputs': trajectory.outputs.tolist(),
    }


def _trajectory_from_dict(data: typing.Mapping[str, list]) -> Trajectory:
    return Trajectory(data['states'], data['inputs'], data['disturbances'], data['outputs'])


def plan_to_dict(robust_plan: RobustPlan) -> dict[str, typing.Any]:
    return {
        'schema_version': PLAN_SCHEMA_VERSION,
        'status': robust_plan.status.value,
        'label': robust_plan.label.value,
        'strategies': list(robust_plan.strategies),
        'policies': [
            {
                'k1': policy.k1.tolist(),
                'K2': policy.K2.tolist(),
                'anchor_state': policy.anchor_state.tolist(),
                'anchor_input': policy.anchor_input.tolist(),
            }
            for policy in robust_plan.policies
        ],
        'values': [
            {'matrix': value.matrix.tolist(), 'anchor': value.anchor.tolist(), 'certified': value.certified}
            for value in robust_plan.values
        ],
        'trajectory': _trajectory_to_dict(robust_plan.trajectory),
        'rollout': _trajectory_to_dict(robust_plan.rollout),
        'log': [dataclasses.asdict(record) for record in robust_plan.log],
    }


def plan_from_dict(data: typing.Mapping[str, typing.Any]) -> RobustPlan:
    """Rebuild a plan from its document.

    :raises SchemaVersionMismatch: If the document has another schema version.
    """
    version = data.get('schema_version')
    if version != PLAN_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f'Plan schema version {version} is not supported, expected {PLAN_SCHEMA_VERSION}')
    return RobustPlan(
        policies=tuple(
            AffinePolicy(p['k1'], np.asarray(p['K2'], dtype=float), p['anchor_state'], p['anchor_input'])
            for p in data['policies']
        ),
        values=tuple(ValueQuad(v['matrix'], v['anchor'], certified=v['certified']) for v in data['values']),
        trajectory=_trajectory_from_dict(data['trajectory']),
        rollout=_trajectory_from_dict(data['rollout']),
        log=tuple(IterationRecord(**record) for record in data['log']),
        status=PlanStatus(data['status']),
        label=CertificateLabel(data['label']),
        strategies=tuple(data['strategies']),
    )


def save_plan(robust_plan: RobustPlan, path: _common.PATH_TYPE) -> None:
    pathlib.Path(path).write_text(json.dumps(plan_to_dict(robust_plan), indent=2), encoding='utf-8')


def load_plan(path: _common.PATH_TYPE) -> RobustPlan:
    return plan_from_dict(json.loads(pathlib.Path(path).read_text(encoding='utf-8')))
