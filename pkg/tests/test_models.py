"""tests for module _models.py."""

import math

import numpy as np
import pytest

from pyrobustddp._errors import NonFiniteState
from pyrobustddp._models import PendulumParams, build_pendulum_plant, linear_fixture, pendulum_derivative, rk4_step
from pyrobustddp._plant import UncertaintySample, box_multipliers, validate_plant
from pyrobustddp._qapprox import linearize


def test_pendulum_derivative():
    """Test the pendulum dynamics at hand-computed points."""
    params = PendulumParams(d2=0.1)
    horizontal = pendulum_derivative(np.array([math.pi / 2.0, 0.0, 0.0, 0.0]), 0.0, params)
    assert horizontal == pytest.approx([0.0, params.gravity / params.length, 0.0, 0.0])
    moving = pendulum_derivative(np.array([0.0, 0.0, 0.0, 1.0]), np.array([0.0]), params)
    assert moving == pytest.approx([0.0, -0.1, 1.0, -0.1])
    perturbed = pendulum_derivative(np.array([0.0, 1.0, 0.0, 1.0]), 0.0, params, np.array([0.02, -0.05]))
    assert perturbed[3] == pytest.approx(-0.05)
    assert perturbed[1] == pytest.approx(-0.07 - 0.05)
    assert np.allclose(pendulum_derivative(np.zeros(4), 0.0, params), 0.0)


def test_pendulum_params():
    """Test the derived step size and the parameter checks."""
    assert PendulumParams().dt == pytest.approx(0.2)
    with pytest.raises(ValueError, match='radius'):
        PendulumParams(radius=-0.1)
    with pytest.raises(ValueError, match='step'):
        PendulumParams(steps=0)


def test_rk4_step():
    """Test the integrator on exponential decay and its non-finite guard."""
    result = rk4_step(lambda x, _u: -x, np.array([1.0]), np.zeros(1), 0.1)
    assert result == pytest.approx([math.exp(-0.1)], rel=1e-6)
    with pytest.raises(NonFiniteState):
        rk4_step(lambda x, _u: x * np.inf, np.array([1.0]), np.zeros(1), 0.1)


def test_pendulum_plant():
    """Test dimensions, multipliers and the upright equilibrium of the pendulum plant."""
    params = PendulumParams()
    plant, multipliers = build_pendulum_plant(params)
    assert (plant.n, plant.m, plant.d, plant.l) == (4, 1, 2, 2)
    assert plant.channels == (1, 1)
    assert plant.horizon == params.steps
    assert not plant.linear
    assert len(multipliers) == 2
    assert multipliers.size == 1 + 4 + 1 + 2
    assert plant.output(np.array([0.3, 2.0, -1.0, -4.0]), np.ones(1)) == pytest.approx([0.1, -0.2])
    # at the target the channels see the rates omega and v
    assert multipliers.positive_factors[0] == pytest.approx(np.array([[0.0, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0]]))
    assert multipliers.positive_factors[1] == pytest.approx(np.array([[0.0, 0.0, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0]]))
    assert np.allclose(plant.step(np.zeros(4), np.zeros(1), np.zeros(2)), 0.0)
    assert np.allclose(plant.close_loop(np.zeros(4), np.zeros(1), np.array([1.0, -1.0])), 0.0)
    assert plant.cost(np.ones(4), np.array([2.0])) == pytest.approx(4.0 * params.dt)
    assert plant.terminal_value(np.ones(4)) == pytest.approx(4.0 * params.terminal_weight)
    assert validate_plant(plant, samples=4).valid


@pytest.mark.parametrize('delta', [(1.0, -1.0), (-0.3, 0.7), (-1.0, -1.0), (0.0, 0.0)])
def test_pendulum_channels_perturb_friction(delta: tuple[float, float]):
    """Test that closing the channels reproduces the perturbed friction coefficients."""
    params = PendulumParams()
    plant, _ = build_pendulum_plant(params)
    sample = UncertaintySample.constant(delta, plant.horizon)
    x = np.array([2.5, -0.4, 0.1, 0.3])
    u = np.array([0.8])
    w = plant.close_loop(x, u, sample.at(0))
    assert w == pytest.approx(np.asarray(delta) * params.radius * x[[1, 3]])
    perturbed = PendulumParams(
        d1=params.d1 + params.radius * delta[0],
        d2=params.d2 + params.radius * delta[1],
    )
    assert pendulum_derivative(x, u, params, w) == pytest.approx(pendulum_derivative(x, u, perturbed), abs=1e-12)
    expected = rk4_step(lambda state, force: pendulum_derivative(state, force, perturbed), x, u, params.dt)
    # the rates change within one step while w is held
    assert np.allclose(plant.step(x, u, w), expected, atol=1e-2)
    if delta == (0.0, 0.0):
        assert np.allclose(plant.step(x, u, w), expected, atol=1e-12)


def test_pendulum_multipliers_cover_the_channels():
    """Test that the multipliers at a trajectory point are non-negative on every gridded channel realization."""
    params = PendulumParams()
    plant, _ = build_pendulum_plant(params)
    x = np.array([2.5, -0.4, 0.1, 0.3])
    u = np.array([0.8])
    lin, _ = linearize(plant, x, u)
    assert lin.Bw[1, 0] == pytest.approx(-params.dt, rel=0.2)
    multipliers = box_multipliers(plant.channels, lin.output_rows)
    combined = multipliers.combine(np.ones(2))
    rng = np.random.default_rng(11)
    grid = np.linspace(-1.0, 1.0, 21)
    for delta1 in grid:
        for delta2 in grid:
            head = np.concatenate([[1.0], rng.standard_normal(4), rng.standard_normal(1)])
            z = lin.output_rows[:, : 1 + 4 + 1] @ head
            xi = np.concatenate([head, np.array([delta1, delta2]) * z])
            assert xi @ combined @ xi >= -1e-12


def test_linear_fixtures():
    """Test the fixture dimensions and the rejected combinations."""
    assert linear_fixture('scalar').n == 1
    assert linear_fixture('double_integrator').n == 2
    uncertain = linear_fixture('random_stable', seed=3, uncertain=True)
    assert (uncertain.n, uncertain.m, uncertain.d, uncertain.l) == (2, 1, 1, 1)
    assert uncertain.name == 'random_stable-uncertain'
    assert uncertain.linear
    lin, _ = uncertain.derivative_provider(np.zeros(2), np.zeros(1), np.zeros(1))
    assert max(abs(np.linalg.eigvals(lin.A))) == pytest.approx(0.9)
    nominal = linear_fixture('random_stable', seed=3)
    assert np.allclose(nominal.step(np.ones(2), np.ones(1)), uncertain.step(np.ones(2), np.ones(1)))
    with pytest.raises(ValueError, match='Unknown'):
        linear_fixture('quadrotor')
    with pytest.raises(ValueError, match='random_stable'):
        linear_fixture('scalar', uncertain=True)
