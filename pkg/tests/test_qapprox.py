"""tests for module _qapprox.py."""

import dataclasses

import numpy as np
import pytest

from pyrobustddp import _qapprox
from pyrobustddp._errors import DimensionMismatch, NonFiniteDerivative
from pyrobustddp._models import linear_fixture
from pyrobustddp._quadform import PartitionedQuad, ValueQuad


@pytest.fixture
def uncertain_plant():
    return linear_fixture('random_stable', seed=3, uncertain=True)


def test_stage_cost_from_taylor():
    """Test that the stage cost model reproduces a quadratic cost exactly."""
    plant = linear_fixture('double_integrator')
    x = np.array([0.4, -0.2])
    u = np.array([0.7])
    _, cost = plant.derivative_provider(x, u, np.zeros(0))
    dx = np.array([0.1, 0.3])
    du = np.array([-0.5])
    vector = np.concatenate([[1.0], dx, du])
    assert vector @ cost.matrix @ vector == pytest.approx(plant.cost(x + dx, u + du))
    assert cost.R33 == pytest.approx(np.eye(1))
    with pytest.raises(DimensionMismatch):
        _qapprox.StageQuadCost(np.eye(3), 2, 1)


def test_linearize_matches_provider(uncertain_plant):
    """Test that finite differences agree with the exact derivatives of a linear plant."""
    x = np.array([0.5, -1.0])
    u = np.array([0.2])
    exact, exact_cost = _qapprox.linearize(uncertain_plant, x, u)
    differenced, differenced_cost = _qapprox.linearize(
        dataclasses.replace(uncertain_plant, derivative_provider=None), x, u
    )
    for name in ('f', 'A', 'Bu', 'Bw', 'output_rows'):
        assert np.allclose(getattr(differenced, name), getattr(exact, name), atol=1e-6), name
    assert np.allclose(differenced_cost.matrix, exact_cost.matrix, atol=1e-4)
    assert (exact.n, exact.m, exact.d) == (2, 1, 1)


def test_linearization_checks():
    """Test that linearizations reject mismatched shapes and non-finite derivatives."""
    with pytest.raises(DimensionMismatch):
        _qapprox.Linearization(np.zeros(2), np.ones((2, 1)), np.zeros((2, 1)), np.zeros((2, 0)))
    with pytest.raises(DimensionMismatch, match='Output rows'):
        _qapprox.Linearization(np.zeros(2), np.eye(2), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((1, 4)))
    plant = linear_fixture('scalar')
    provider = plant.derivative_provider

    def broken(x: np.ndarray, u: np.ndarray, w: np.ndarray):
        linearization, cost = provider(x, u, w)
        return dataclasses.replace(linearization, A=np.array([[np.nan]])), cost

    with pytest.raises(NonFiniteDerivative):
        _qapprox.linearize(dataclasses.replace(plant, derivative_provider=broken), np.ones(1), np.ones(1))


@pytest.mark.parametrize('with_provider', [True, False])
def test_taylor_and_linearized_agree_on_linear_plants(uncertain_plant, with_provider: bool):  # noqa: FBT001
    """Test that both Q estimates coincide for affine dynamics and quadratic costs."""
    plant = uncertain_plant if with_provider else dataclasses.replace(uncertain_plant, derivative_provider=None)
    x = np.array([0.3, 0.8])
    u = np.array([-0.4])
    v_next = ValueQuad.quadratic(np.array([[2.0, 0.5], [0.5, 1.0]]), anchor=np.array([0.1, -0.2]))
    linearized = _qapprox.q_matrix(plant, x, u, v_next, 'linearized')
    taylor = _qapprox.q_matrix(plant, x, u, v_next, 'taylor')
    assert linearized.dims == (1, 2, 1, 1)
    assert np.allclose(taylor.matrix, linearized.matrix, atol=1e-6 if with_provider else 1e-4)
    dx = np.array([0.2, -0.1])
    du = np.array([0.3])
    dw = np.array([0.05])
    expected = plant.cost(x + dx, u + du) + v_next(plant.step(x + dx, u + du, dw))
    assert linearized.value(dx, du, dw) == pytest.approx(expected)


def test_linearized_q_dimension_mismatch(uncertain_plant):
    """Test that a value function of the wrong size is rejected."""
    lin, cost = _qapprox.linearize(uncertain_plant, np.zeros(2), np.zeros(1))
    with pytest.raises(DimensionMismatch):
        _qapprox.linearized_q(lin, cost, ValueQuad.quadratic(np.eye(3)))


def test_regularize():
    """Test that regularization lifts the deviation block by a doubling of mu_min and keeps q11."""
    matrix = np.diag([5.0, -0.5, 1.0, 2.0])
    quad = PartitionedQuad(matrix, (1, 1, 1, 1))
    assert _qapprox.regularization_shift(quad, 0.1) == pytest.approx(0.8)
    regularized = _qapprox.regularize(quad, 0.1)
    assert regularized.q11 == pytest.approx(5.0)
    assert np.linalg.eigvalsh(regularized.matrix[1:, 1:]).min() >= 0.1
    assert np.allclose(regularized.matrix[1:, 1:], matrix[1:, 1:] + 0.8 * np.eye(3))
    definite = PartitionedQuad(np.diag([0.0, 1.0, 1.0, 1.0]), (1, 1, 1, 1))
    assert _qapprox.regularize(definite, 0.5) is definite
    with pytest.raises(ValueError, match='mu_min'):
        _qapprox.regularize(quad, 0.0)
