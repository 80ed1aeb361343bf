import csv
import json
import logging
import pathlib
import typing

import numpy as np

from pyrobustddp import _common
from pyrobustddp._backward import Strategy
from pyrobustddp._driver import PlanStatus, Trajectory, load_plan, plan, save_plan, simulate_uncertain
from pyrobustddp._errors import RobustDdpError
from pyrobustddp._experiment import Model, RunConfig, load_run_config, run_montecarlo
from pyrobustddp._plant import Provenance, UncertaintySample
from pyrobustddp._qapprox import QMethod

try:
    import click
except ImportError as import_error:
    raise ImportError("Cli not installed. Please install using 'pip install pyrobustddp[cli]'.") from import_error

DEFAULT_OUT = 'results'


class DeltaType(click.ParamType):
    name = 'delta'

    def convert(self, value: typing.Any, param: click.Parameter | None, ctx: click.Context | None) -> tuple[float, ...]:
        if isinstance(value, tuple):
            return value
        try:
            delta = tuple(float(part) for part in str(value).split(','))
        except ValueError as e:
            self.fail(f'{value!r} is not a comma separated list of numbers: {e}', param, ctx)
        if any(abs(part) > 1.0 for part in delta):
            self.fail(f'{value!r} leaves the admissible range [-1, 1]', param, ctx)
        return delta


DELTA = DeltaType()


def _config(config_path: pathlib.Path | None, **overrides: typing.Any) -> tuple[RunConfig, Model, pathlib.Path]:
    try:
        config = RunConfig() if config_path is None else load_run_config(config_path)
        config = config.with_overrides(**overrides)
        model = config.build_model()
    except RobustDdpError as e:
        raise click.ClickException(str(e)) from e
    out = pathlib.Path(config.out or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return config, model, out


def _write_trajectory(path: pathlib.Path, model: Model, trajectory: Trajectory) -> None:
    """Write one row per state with the input applied at that step, empty after the last step."""
    with path.open('w', encoding=_common.ENCODING, newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['t', *model.state_names, *model.input_names])
        blank = [''] * len(model.input_names)
        for t, state in enumerate(trajectory.states):
            inputs = [repr(float(value)) for value in trajectory.inputs[t]] if t < trajectory.horizon else blank
            writer.writerow([t, *(repr(float(value)) for value in state), *inputs])


@click.group(help='Plan and evaluate robust trajectories.')
@click.version_option(message='%(version)s')
@click.option('-v', '--verbose', is_flag=True, help='Log progress to stderr.')
def cli(verbose: bool):  # noqa: FBT001
    if verbose:
        logging.basicConfig(level=logging.INFO, format='%(asctime)s %(name)s %(levelname)s %(message)s')


_config_option = click.option(
    '--config',
    'config_path',
    type=click.Path(exists=True, dir_okay=False, path_type=pathlib.Path),
    help='JSON or TOML run configuration.',
)
_out_option = click.option('--out', type=click.Path(file_okay=False), help='Output directory.')
_strategy_option = click.option(
    '--strategy', type=click.Choice([strategy.value for strategy in Strategy]), help='Convexification strategy.'
)
_qmethod_option = click.option(
    '--qmethod', type=click.Choice([method.value for method in QMethod]), help='Quadratic approximation of Q.'
)


@click.command(short_help='Plan a robust trajectory and write plan.json and trajectory.csv.')
@_config_option
@_out_option
@_strategy_option
@_qmethod_option
def plan_command(config_path: pathlib.Path | None, out: str | None, strategy: str | None, qmethod: str | None):
    """Plan from the configured initial state.

    Exits with code 2 if the planner stops at its iteration limit; the files are written nevertheless.
    """
    config, model, out_dir = _config(config_path, out=out, strategy=strategy, qmethod=qmethod)
    try:
        robust_plan = plan(model.plant, config.initial_state(model), config.planner.options())
    except RobustDdpError as e:
        raise click.ClickException(f'Planning failed: {e}') from e
    save_plan(robust_plan, out_dir.joinpath('plan.json'))
    _write_trajectory(out_dir.joinpath('trajectory.csv'), model, robust_plan.rollout)
    click.echo(
        f'{robust_plan.status.value} after {len(robust_plan.log)} iterations, '
        f'certified bound {robust_plan.bound:.6g} ({robust_plan.label.value}).'
    )
    if robust_plan.status is PlanStatus.MAX_ITERS:
        raise SystemExit(2)


@click.command(short_help='Simulate a plan under one uncertainty sample.')
@_config_option
@_out_option
@click.option(
    '--plan',
    'plan_path',
    type=click.Path(exists=True, dir_okay=False, path_type=pathlib.Path),
    help='Plan file, defaults to plan.json in the output directory.',
)
@click.option('--delta', type=DELTA, help='Normalized channel parameters, e.g. "1,-1".')
@click.option('--seed', type=click.IntRange(min=0), help='Draw the channel parameters with this seed.')
def simulate(
    config_path: pathlib.Path | None,
    out: str | None,
    plan_path: pathlib.Path | None,
    delta: tuple[float, ...] | None,
    seed: int | None,
):
    """Simulate the plan's policies on the uncertain plant and write trajectory.csv and cost.json."""
    if delta is not None and seed is not None:
        raise click.UsageError('--delta and --seed are mutually exclusive.')
    config, model, out_dir = _config(config_path, out=out)
    plant = model.plant
    channels = len(plant.channels)
    if delta is None and seed is None:
        sample = UncertaintySample.nominal(plant.horizon, channels)
    elif delta is not None:
        if len(delta) != channels:
            raise click.BadParameter(f'expected {channels} values, got {len(delta)}', param_hint='--delta')
        sample = UncertaintySample.constant(delta, plant.horizon)
    else:
        sample = UncertaintySample.draw(np.random.default_rng(seed), plant.horizon, channels)
    try:
        robust_plan = load_plan(plan_path or out_dir.joinpath('plan.json'))
        trajectory, cost = simulate_uncertain(plant, robust_plan.policies, config.initial_state(model), sample)
    except (OSError, ValueError, RobustDdpError) as e:
        raise click.ClickException(f'Simulation failed: {e}') from e
    _write_trajectory(out_dir.joinpath('trajectory.csv'), model, trajectory)
    report = {
        'cost': cost,
        'bound': robust_plan.bound,
        'label': robust_plan.label.value,
        'terminal_norm': float(np.linalg.norm(trajectory.states[-1])),
        'provenance': Provenance(sample.provenance).value,
        'delta': sample.deltas[0].tolist(),
    }
    out_dir.joinpath('cost.json').write_text(json.dumps(report, indent=2) + '\n', encoding=_common.ENCODING)
    click.echo(f'Realized cost {cost:.6g}, certified bound {robust_plan.bound:.6g}.')


@click.command(short_help='Compare robust and nominal planning over sampled uncertainties.')
@_config_option
@_out_option
@click.option('--seed', type=click.IntRange(min=0), help='Seed of the experiment.')
@click.option('--samples', type=click.IntRange(min=1), help='Number of Monte Carlo shots.')
@_strategy_option
@_qmethod_option
def montecarlo(  # noqa: PLR0913
    config_path: pathlib.Path | None,
    out: str | None,
    seed: int | None,
    samples: int | None,
    strategy: str | None,
    qmethod: str | None,
):
    """Run the Monte Carlo comparison and write shots.csv and summary.json."""
    config, _, out_dir = _config(config_path, out=out, seed=seed, samples=samples, strategy=strategy, qmethod=qmethod)
    try:
        result = run_montecarlo(config)
    except RobustDdpError as e:
        raise click.ClickException(f'Monte Carlo run failed: {e}') from e
    result.write(out_dir)
    for method, summary in result.summaries.items():
        click.echo(
            f'{method}: mean {summary.mean:.6g}, std {summary.std:.6g}, failures {summary.failures}/{summary.shots}'
        )


cli.add_command(plan_command, name='plan')
cli.add_command(simulate)
cli.add_command(montecarlo)
