"""Run configurations and the Monte Carlo comparison of robust and nominal planning.

Every shot draws the initial state uniformly from the configured ranges and one constant parameter sample per
uncertainty channel. Shot ``k`` uses the generator ``np.random.default_rng([seed, k])``, so any shot can be
reproduced in isolation. The nominal baseline is the same planner run on the plant with its uncertainty channels
removed; both policies are then simulated on the uncertain plant.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import pathlib
import time
import tomllib
import typing

import numpy as np

from pyrobustddp import _common
from pyrobustddp._backward import DEFAULT_SIGMA_WEIGHT, Strategy
from pyrobustddp._driver import PlanOptions, RobustPlan, plan, simulate_uncertain
from pyrobustddp._errors import ConfigError, RobustDdpError
from pyrobustddp._models import PendulumParams, build_pendulum_plant, linear_fixture
from pyrobustddp._plant import GeneralizedPlant, UncertaintySample
from pyrobustddp._qapprox import QMethod
from pyrobustddp._sdp import SolverOptions

logger = logging.getLogger('pyrobustddp.montecarlo')

PENDULUM_RANGES = {
    'theta': (math.pi - 1.0, math.pi + 1.0),
    'omega': (-0.5, 0.5),
    's': (-1.0, 1.0),
    'v': (-1.0, 1.0),
}
LINEAR_MODELS = ('scalar', 'double_integrator', 'random_stable')
METHODS = ('robust', 'nominal')


@dataclasses.dataclass(frozen=True)
class Model:
    """A plant together with the names and defaults the CLI and the experiment need."""

    plant: GeneralizedPlant
    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    x0: np.ndarray
    ranges: dict[str, tuple[float, float]]
    parameter_names: tuple[str, ...]
    parameters: typing.Callable[[np.ndarray], np.ndarray]


def build_model(name: str, params: typing.Mapping[str, typing.Any] | None = None) -> Model:
    """Build a built-in model by name.

    :param name: ``pendulum`` or one of the linear fixtures.
    :param params: Keyword overrides of :class:`PendulumParams` or of :func:`linear_fixture`.
    :raises ConfigError: If the name or a parameter is unknown or invalid.
    """
    params = dict(params or {})
    if name != 'pendulum' and name not in LINEAR_MODELS:
        raise ConfigError(f'Unknown model "{name}", choose from pendulum, {", ".join(LINEAR_MODELS)}')
    try:
        if name == 'pendulum':
            pendulum = PendulumParams(**params)
            plant, _ = build_pendulum_plant(pendulum)
            nominal = np.array([pendulum.d1, pendulum.d2])
            return Model(
                plant=plant,
                state_names=tuple(PENDULUM_RANGES),
                input_names=('u',),
                x0=np.array([math.pi, 0.0, 0.0, 0.0]),
                ranges=dict(PENDULUM_RANGES),
                parameter_names=('d1', 'd2'),
                parameters=lambda delta: nominal + pendulum.radius * np.ravel(delta),
            )
        plant = linear_fixture(name, **params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f'Invalid parameters for model "{name}": {e}') from e
    state_names = tuple(f'x{i + 1}' for i in range(plant.n))
    return Model(
        plant=plant,
        state_names=state_names,
        input_names=('u',) if plant.m == 1 else tuple(f'u{i + 1}' for i in range(plant.m)),
        x0=np.ones(plant.n),
        ranges=dict.fromkeys(state_names, (-1.0, 1.0)),
        parameter_names=tuple(f'delta{i + 1}' for i in range(len(plant.channels))),
        parameters=np.ravel,
    )


def _fields(cls: type) -> set[str]:
    return {field.name for field in dataclasses.fields(cls)}


def _check_keys(data: typing.Mapping[str, typing.Any], cls: type, section: str) -> None:
    unknown = sorted(set(data) - _fields(cls))
    if unknown:
        raise ConfigError(f'Unknown keys in [{section}]: {", ".join(unknown)}')


@dataclasses.dataclass(frozen=True)
class PlannerConfig:
    strategy: str = Strategy.AUTO.value
    qmethod: str = QMethod.LINEARIZED.value
    epsilon: float | None = None
    max_iters: int = 50
    sigma_weight: float = DEFAULT_SIGMA_WEIGHT
    regularization: float | None = None
    backend: str = 'embedded'

    def __post_init__(self):
        try:
            Strategy(self.strategy)
            QMethod(self.qmethod)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.max_iters < 1:
            raise ConfigError(f'max_iters must be at least 1, got {self.max_iters}')
        if self.sigma_weight <= 0.0:
            raise ConfigError(f'sigma_weight must be positive, got {self.sigma_weight}')

    def options(self, trace_path: _common.PATH_TYPE | None = None) -> PlanOptions:
        return PlanOptions(
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            strategy=Strategy(self.strategy),
            qmethod=QMethod(self.qmethod),
            sigma_weight=self.sigma_weight,
            regularization=self.regularization,
            solver=SolverOptions(backend=self.backend),
            trace_path=trace_path,
        )


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo settings. ``ranges`` replaces the model's initial-state ranges per named state."""

    samples: int = 50
    seed: int = 1
    ranges: dict[str, tuple[float, float]] = dataclasses.field(default_factory=dict)
    failure_threshold: float = 0.1
    replan: bool = True
    time_varying: bool = False

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f'The seed must be non-negative, got {self.seed}')
        if self.samples < 1:
            raise ConfigError(f'At least one sample is required, got {self.samples}')
        if self.failure_threshold <= 0.0:
            raise ConfigError(f'failure_threshold must be positive, got {self.failure_threshold}')
        ranges = {}
        for name, bounds in self.ranges.items():
            if len(bounds) != 2:  # noqa: PLR2004
                raise ConfigError(f'Range of "{name}" must be [lo, hi], got {bounds}')
            lo, hi = (float(bound) for bound in bounds)
            if lo > hi:
                raise ConfigError(f'Range of "{name}" is ill-ordered: {lo} > {hi}')
            ranges[name] = (lo, hi)
        object.__setattr__(self, 'ranges', ranges)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: str = 'pendulum'
    params: dict[str, typing.Any] = dataclasses.field(default_factory=dict)
    x0: tuple[float, ...] | None = None
    out: str | None = None
    planner: PlannerConfig = dataclasses.field(default_factory=PlannerConfig)
    experiment: ExperimentConfig = dataclasses.field(default_factory=ExperimentConfig)

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> RunConfig:
        """Build a configuration from a parsed document.

        :raises ConfigError: On unknown keys or invalid values.
        """
        _check_keys(data, cls, 'root')
        planner = data.get('planner', {})
        experiment = data.get('experiment', {})
        _check_keys(planner, PlannerConfig, 'planner')
        _check_keys(experiment, ExperimentConfig, 'experiment')
        try:
            x0 = data.get('x0')
            return cls(
                model=str(data.get('model', 'pendulum')),
                params=dict(data.get('params', {})),
                x0=None if x0 is None else tuple(float(value) for value in x0),
                out=data.get('out'),
                planner=PlannerConfig(**planner),
                experiment=ExperimentConfig(**experiment),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f'Invalid configuration: {e}') from e

    def with_overrides(self, **overrides: typing.Any) -> RunConfig:
        """Replace the given entries, ignoring ``None``.

        Accepted keys are ``out``, ``seed``, ``samples``, ``strategy`` and ``qmethod``.
        """
        overrides = {key: value for key, value in overrides.items() if value is not None}
        planner = {key: overrides.pop(key) for key in ('strategy', 'qmethod') if key in overrides}
        experiment = {key: overrides.pop(key) for key in ('seed', 'samples') if key in overrides}
        return dataclasses.replace(
            self,
            planner=dataclasses.replace(self.planner, **planner),
            experiment=dataclasses.replace(self.experiment, **experiment),
            **overrides,
        )

    def build_model(self) -> Model:
        model = build_model(self.model, self.params)
        unknown = sorted(set(self.experiment.ranges) - set(model.state_names))
        if unknown:
            raise ConfigError(f'Ranges name unknown states: {", ".join(unknown)}')
        if self.x0 is not None and len(self.x0) != model.plant.n:
            raise ConfigError(f'x0 has {len(self.x0)} entries, the model has {model.plant.n} states')
        return model

    def initial_state(self, model: Model) -> np.ndarray:
        return model.x0 if self.x0 is None else np.array(self.x0)


def load_run_config(path: _common.PATH_TYPE) -> RunConfig:
    """Load a JSON or TOML run configuration.

    :raises ConfigError: If the file cannot be read or parsed, or holds unknown keys or invalid values.
    """
    path = pathlib.Path(path)
    try:
        data = _common._load_configuration(path)  # noqa: SLF001
    except OSError as e:
        raise ConfigError(f'Cannot read configuration {path}: {e}') from e
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f'Cannot parse configuration {path}: {e}') from e
    return RunConfig.from_dict(data)


@dataclasses.dataclass(frozen=True)
class ShotRecord:
    shot: int
    method: str
    parameters: tuple[float, ...]
    x0: tuple[float, ...]
    cost: float
    terminal_norm: float
    failed: bool


@dataclasses.dataclass(frozen=True)
class MethodSummary:
    """Running statistics over the finite costs of one method, in shot order."""

    method: str
    running_mean: tuple[float, ...]
    running_std: tuple[float, ...]
    failures: int
    shots: int

    @property
    def mean(self) -> float:
        return self.running_mean[-1] if self.running_mean else math.inf

    @property
    def std(self) -> float:
        return self.running_std[-1] if self.running_std else math.inf

    @classmethod
    def from_records(cls, method: str, records: typing.Sequence[ShotRecord]) -> MethodSummary:
        costs = np.array([record.cost for record in records if math.isfinite(record.cost)])
        means = tuple(float(np.mean(costs[:k])) for k in range(1, costs.size + 1))
        stds = tuple(float(np.std(costs[:k])) for k in range(1, costs.size + 1))
        return cls(method, means, stds, sum(record.failed for record in records), len(records))

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            'shots': self.shots,
            'failures': self.failures,
            'mean': self.mean,
            'std': self.std,
            'running_mean': list(self.running_mean),
            'running_std': list(self.running_std),
        }


@dataclasses.dataclass(frozen=True)
class MonteCarloResult:
    state_names: tuple[str, ...]
    parameter_names: tuple[str, ...]
    records: tuple[ShotRecord, ...]
    summaries: dict[str, MethodSummary]
    config: RunConfig

    def write(self, out: _common.PATH_TYPE) -> tuple[pathlib.Path, pathlib.Path]:
        """Write ``shots.csv`` and ``summary.json`` into ``out``."""
        out = pathlib.Path(out)
        out.mkdir(parents=True, exist_ok=True)
        shots_path = out.joinpath('shots.csv')
        with shots_path.open('w', encoding=_common.ENCODING, newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(
                ['shot', 'method', *self.parameter_names, *(f'{name}0' for name in self.state_names)]
                + ['cost', 'terminal_norm']
            )
            for record in self.records:
                writer.writerow(
                    [record.shot, record.method]
                    + [repr(value) for value in (*record.parameters, *record.x0, record.cost, record.terminal_norm)]
                )
        summary_path = out.joinpath('summary.json')
        summary = {
            'model': self.config.model,
            'samples': self.config.experiment.samples,
            'seed': self.config.experiment.seed,
            'failure_threshold': self.config.experiment.failure_threshold,
            'replan': self.config.experiment.replan,
            'methods': {method: summary.to_dict() for method, summary in self.summaries.items()},
        }
        summary_path.write_text(json.dumps(summary, indent=2) + '\n', encoding=_common.ENCODING)
        return shots_path, summary_path


def draw_shot(model: Model, experiment: ExperimentConfig, shot: int) -> tuple[np.ndarray, UncertaintySample]:
    """The initial state and uncertainty sample of shot ``shot``."""
    rng = np.random.default_rng([experiment.seed, shot])
    bounds = np.array([experiment.ranges.get(name, model.ranges[name]) for name in model.state_names])
    x0 = rng.uniform(bounds[:, 0], bounds[:, 1])
    sample = UncertaintySample.draw(
        rng, model.plant.horizon, len(model.plant.channels), time_varying=experiment.time_varying
    )
    return x0, sample


def _run_method(
    plant: GeneralizedPlant,
    planner: typing.Callable[[np.ndarray], RobustPlan],
    x0: np.ndarray,
    sample: UncertaintySample,
) -> tuple[float, float]:
    robust_plan = planner(x0)
    trajectory, cost = simulate_uncertain(plant, robust_plan.policies, x0, sample)
    return cost, float(np.linalg.norm(trajectory.states[-1]))


def run_montecarlo(config: RunConfig) -> MonteCarloResult:
    """Compare robust and nominal planning over ``config.experiment.samples`` shots.

    A planner or simulation failure of a shot is recorded with infinite cost and counted as a failure; the run
    continues.
    """
    model = config.build_model()
    experiment = config.experiment
    options = config.planner.options()
    plants = {'robust': model.plant, 'nominal': model.plant.without_uncertainty()}
    planners: dict[str, typing.Callable[[np.ndarray], RobustPlan]] = {}
    for method, plant in plants.items():
        if experiment.replan:
            planners[method] = lambda x0, plant=plant: plan(plant, x0, options)
        else:
            fixed = plan(plant, config.initial_state(model), options)
            planners[method] = lambda _x0, fixed=fixed: fixed
    logger.info(
        'Monte Carlo on %s with %d shots (seed %d, replan %s).',
        model.plant.name,
        experiment.samples,
        experiment.seed,
        experiment.replan,
    )
    records = []
    started = time.perf_counter()
    for shot in range(experiment.samples):
        x0, sample = draw_shot(model, experiment, shot)
        parameters = tuple(float(value) for value in model.parameters(sample.deltas[0]))
        for method in METHODS:
            try:
                cost, terminal_norm = _run_method(model.plant, planners[method], x0, sample)
            except RobustDdpError as e:
                logger.warning('Shot %d (%s) failed: %s', shot, method, e)
                cost, terminal_norm = math.inf, math.inf
            failed = not math.isfinite(cost) or terminal_norm > experiment.failure_threshold
            records.append(
                ShotRecord(shot, method, parameters, tuple(float(v) for v in x0), cost, terminal_norm, failed)
            )
        logger.info('Shot %d/%d done after %.1fs.', shot + 1, experiment.samples, time.perf_counter() - started)
    records = tuple(records)
    summaries = {
        method: MethodSummary.from_records(method, [record for record in records if record.method == method])
        for method in METHODS
    }
    return MonteCarloResult(model.state_names, model.parameter_names, records, summaries, config)
