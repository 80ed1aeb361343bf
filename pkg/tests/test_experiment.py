"""tests for module _experiment.py."""

import csv
import json
import math
import pathlib
from unittest import mock

import numpy as np
import pytest

from pyrobustddp import _experiment
from pyrobustddp._errors import ConfigError, NonFiniteState
from pyrobustddp._experiment import RunConfig

FIXTURES = pathlib.Path(__file__).parent.joinpath('fixtures')


def test_load_run_config():
    """Test that a TOML run configuration is read into its sections."""
    config = _experiment.load_run_config(FIXTURES.joinpath('random_stable.toml'))
    assert config.model == 'random_stable'
    assert config.params == {'seed': 5, 'uncertain': True, 'horizon': 6}
    assert config.x0 == (1.0, -0.5)
    assert config.planner.epsilon == pytest.approx(1e-3)
    assert config.planner.max_iters == 10
    assert config.experiment.samples == 3
    assert config.experiment.ranges == {'x1': (-0.5, 0.5)}
    model = config.build_model()
    assert model.state_names == ('x1', 'x2')
    assert model.parameter_names == ('delta1',)
    assert np.allclose(config.initial_state(model), [1.0, -0.5])
    options = config.planner.options()
    assert options.max_iters == 10
    assert options.solver.backend == 'embedded'


def test_load_run_config_errors(tmp_path: pathlib.Path):
    """Test that unreadable and unparsable files are configuration errors."""
    with pytest.raises(ConfigError, match='Cannot read'):
        _experiment.load_run_config(tmp_path.joinpath('missing.toml'))
    broken = tmp_path.joinpath('broken.json')
    broken.write_text('{"model": ', encoding='utf-8')
    with pytest.raises(ConfigError, match='Cannot parse'):
        _experiment.load_run_config(broken)
    broken = tmp_path.joinpath('broken.toml')
    broken.write_text('model = \n', encoding='utf-8')
    with pytest.raises(ConfigError, match='Cannot parse'):
        _experiment.load_run_config(broken)


@pytest.mark.parametrize(
    ('document', 'message'),
    [
        ({'modle': 'scalar'}, r'Unknown keys in \[root\]'),
        ({'planner': {'max_iter': 3}}, r'Unknown keys in \[planner\]'),
        ({'experiment': {'sample': 3}}, r'Unknown keys in \[experiment\]'),
        ({'planner': {'strategy': 'greedy'}}, 'greedy'),
        ({'planner': {'max_iters': 0}}, 'max_iters'),
        ({'experiment': {'ranges': {'x1': [1.0, -1.0]}}}, 'ill-ordered'),
        ({'experiment': {'ranges': {'x1': [1.0]}}}, 'lo, hi'),
        ({'experiment': {'seed': -1}}, 'seed'),
        ({'x0': ['a']}, 'Invalid configuration'),
    ],
)
def test_invalid_documents(document: dict, message: str):
    """Test that invalid documents are rejected with a configuration error."""
    with pytest.raises(ConfigError, match=message):
        RunConfig.from_dict(document)


@pytest.mark.parametrize(
    ('config', 'message'),
    [
        (RunConfig(model='quadrotor'), 'Unknown model'),
        (RunConfig(model='scalar', params={'mass': 1.0}), 'Invalid parameters'),
        (RunConfig(model='pendulum', params={'radius': -1.0}), 'Invalid parameters'),
        (RunConfig(model='scalar', x0=(1.0, 2.0)), 'x0 has 2 entries'),
        (RunConfig.from_dict({'model': 'scalar', 'experiment': {'ranges': {'theta': [0, 1]}}}), 'unknown states'),
    ],
)
def test_invalid_models(config: RunConfig, message: str):
    """Test that model construction reports unknown names and mismatching settings."""
    with pytest.raises(ConfigError, match=message):
        config.build_model()


def test_pendulum_model():
    """Test the defaults of the pendulum model."""
    model = RunConfig().build_model()
    assert model.state_names == ('theta', 'omega', 's', 'v')
    assert model.x0 == pytest.approx([math.pi, 0.0, 0.0, 0.0])
    assert model.parameters(np.array([1.0, -1.0])) == pytest.approx([0.1, 0.0])


def test_with_overrides():
    """Test that overrides land in their sections and None leaves entries untouched."""
    config = RunConfig(model='scalar').with_overrides(out='runs', seed=9, samples=None, strategy='dual', qmethod=None)
    assert config.out == 'runs'
    assert config.experiment.seed == 9
    assert config.experiment.samples == 50
    assert config.planner.strategy == 'dual'
    assert config.planner.qmethod == 'linearized'


def test_draw_shot_is_reproducible():
    """Test that every shot depends only on the seed and its index."""
    config = _experiment.load_run_config(FIXTURES.joinpath('random_stable.toml'))
    model = config.build_model()
    x0, sample = _experiment.draw_shot(model, config.experiment, 2)
    again, same = _experiment.draw_shot(model, config.experiment, 2)
    other, _ = _experiment.draw_shot(model, config.experiment, 1)
    assert np.array_equal(x0, again)
    assert np.array_equal(sample.deltas, same.deltas)
    assert not np.array_equal(x0, other)
    assert -0.5 <= x0[0] <= 0.5
    assert -1.0 <= x0[1] <= 1.0
    assert sample.deltas.shape == (6, 1)
    assert np.allclose(sample.deltas, sample.deltas[0])


def test_run_montecarlo(tmp_path: pathlib.Path):
    """Test a small comparison and that the written summary can be recomputed from the shots."""
    config = _experiment.load_run_config(FIXTURES.joinpath('random_stable.toml'))
    result = _experiment.run_montecarlo(config)
    assert len(result.records) == 2 * config.experiment.samples
    assert [record.method for record in result.records[:2]] == ['robust', 'nominal']
    assert all(math.isfinite(record.cost) for record in result.records)
    shots_path, summary_path = result.write(tmp_path)
    with shots_path.open(encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ['shot', 'method', 'delta1', 'x10', 'x20', 'cost', 'terminal_norm']
    summary = json.loads(summary_path.read_text(encoding='utf-8'))
    assert summary['samples'] == 3
    for method in _experiment.METHODS:
        costs = [float(row['cost']) for row in rows if row['method'] == method]
        assert summary['methods'][method]['mean'] == pytest.approx(np.mean(costs))
        assert summary['methods'][method]['std'] == pytest.approx(np.std(costs))
        assert summary['methods'][method]['running_mean'][0] == pytest.approx(costs[0])
        assert summary['methods'][method]['shots'] == 3


def test_run_montecarlo_records_failures():
    """Test that a failing simulation counts as a failed shot with infinite cost and the run continues."""
    config = RunConfig.from_dict(
        {
            'model': 'random_stable',
            'params': {'uncertain': True, 'horizon': 4},
            'planner': {'epsilon': 1e-3},
            'experiment': {'samples': 2, 'replan': False},
        }
    )
    with mock.patch('pyrobustddp._experiment.simulate_uncertain', side_effect=NonFiniteState('diverged')):
        result = _experiment.run_montecarlo(config)
    assert len(result.records) == 4
    assert all(record.failed and record.cost == math.inf for record in result.records)
    for summary in result.summaries.values():
        assert summary.failures == 2
        assert summary.mean == math.inf
        assert summary.to_dict()['running_mean'] == []
