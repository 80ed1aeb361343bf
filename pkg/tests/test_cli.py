"""tests for module _cli.py."""

import csv
import json
import pathlib
from unittest import mock

import pytest
from click.testing import CliRunner

from pyrobustddp._cli import cli
from pyrobustddp._errors import BackwardInfeasible

FIXTURES = pathlib.Path(__file__).parent.joinpath('fixtures')


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def _plan(runner: CliRunner, config: pathlib.Path, out: pathlib.Path):
    return runner.invoke(cli, ['plan', '--config', str(config), '--out', str(out)])


def test_plan(runner: CliRunner, tmp_path: pathlib.Path):
    """Test that plan writes the plan document and the nominal trajectory."""
    result = _plan(runner, FIXTURES.joinpath('scalar.json'), tmp_path)
    assert result.exit_code == 0, result.output
    assert 'converged' in result.output
    document = json.loads(tmp_path.joinpath('plan.json').read_text(encoding='utf-8'))
    assert document['schema_version'] == 1
    assert document['label'] == 'exact'
    assert len(document['policies']) == 5
    with tmp_path.joinpath('trajectory.csv').open(encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['t', 'x1', 'u']
    assert len(rows) == 1 + 6
    assert rows[-1][-1] == ''
    assert float(rows[1][1]) == pytest.approx(1.0)


def test_plan_max_iters(runner: CliRunner, tmp_path: pathlib.Path):
    """Test that stopping at the iteration limit exits with code 2 and still writes the plan."""
    config = tmp_path.joinpath('config.json')
    config.write_text(
        json.dumps({'model': 'scalar', 'params': {'horizon': 3}, 'planner': {'epsilon': 0.0, 'max_iters': 1}}),
        encoding='utf-8',
    )
    result = _plan(runner, config, tmp_path.joinpath('out'))
    assert result.exit_code == 2
    assert tmp_path.joinpath('out', 'plan.json').exists()


def test_plan_failures(runner: CliRunner, tmp_path: pathlib.Path):
    """Test that invalid configurations and planner failures exit with code 1."""
    config = tmp_path.joinpath('config.json')
    config.write_text(json.dumps({'model': 'scalar', 'planner': {'max_iter': 3}}), encoding='utf-8')
    result = _plan(runner, config, tmp_path)
    assert result.exit_code == 1
    assert 'Unknown keys' in result.output
    with mock.patch('pyrobustddp._cli.plan', side_effect=BackwardInfeasible(0, 1, 'no certificate')):
        result = _plan(runner, FIXTURES.joinpath('scalar.json'), tmp_path)
    assert result.exit_code == 1
    assert 'Planning failed' in result.output
    result = runner.invoke(cli, ['plan', '--config', str(FIXTURES.joinpath('scalar.json')), '--strategy', 'greedy'])
    assert result.exit_code == 2


def test_simulate(runner: CliRunner, tmp_path: pathlib.Path):
    """Test that simulate reports a realized cost within the certified bound."""
    config = FIXTURES.joinpath('random_stable.toml')
    assert _plan(runner, config, tmp_path).exit_code == 0
    for delta in ('1', '-1', '0.25'):
        result = runner.invoke(cli, ['simulate', '--config', str(config), '--out', str(tmp_path), '--delta', delta])
        assert result.exit_code == 0, result.output
        report = json.loads(tmp_path.joinpath('cost.json').read_text(encoding='utf-8'))
        assert report['delta'] == [float(delta)]
        assert report['provenance'] == 'sampled'
        assert report['cost'] <= report['bound'] + 1e-6 * (1.0 + abs(report['bound']))
    result = runner.invoke(cli, ['simulate', '--config', str(config), '--out', str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert json.loads(tmp_path.joinpath('cost.json').read_text(encoding='utf-8'))['provenance'] == 'nominal'
    result = runner.invoke(cli, ['simulate', '--config', str(config), '--out', str(tmp_path), '--seed', '3'])
    assert result.exit_code == 0, result.output


@pytest.mark.parametrize(
    'arguments',
    [
        ['--delta', '1,1'],
        ['--delta', '2'],
        ['--delta', 'one'],
        ['--delta', '1', '--seed', '2'],
    ],
)
def test_simulate_usage_errors(runner: CliRunner, tmp_path: pathlib.Path, arguments: list[str]):
    """Test that malformed channel parameters are usage errors."""
    config = FIXTURES.joinpath('random_stable.toml')
    result = runner.invoke(cli, ['simulate', '--config', str(config), '--out', str(tmp_path), *arguments])
    assert result.exit_code == 2


def test_simulate_without_plan(runner: CliRunner, tmp_path: pathlib.Path):
    """Test that a missing plan file is reported."""
    config = FIXTURES.joinpath('random_stable.toml')
    result = runner.invoke(cli, ['simulate', '--config', str(config), '--out', str(tmp_path)])
    assert result.exit_code == 1
    assert 'Simulation failed' in result.output


def test_montecarlo(runner: CliRunner, tmp_path: pathlib.Path):
    """Test that montecarlo writes the shot table and the summary."""
    config = FIXTURES.joinpath('random_stable.toml')
    result = runner.invoke(
        cli, ['montecarlo', '--config', str(config), '--out', str(tmp_path), '--samples', '1', '--seed', '2']
    )
    assert result.exit_code == 0, result.output
    assert 'robust: mean' in result.output
    assert 'nominal: mean' in result.output
    summary = json.loads(tmp_path.joinpath('summary.json').read_text(encoding='utf-8'))
    assert summary['samples'] == 1
    assert summary['seed'] == 2
    with tmp_path.joinpath('shots.csv').open(encoding='utf-8', newline='') as f:
        assert len(list(csv.reader(f))) == 1 + 2
