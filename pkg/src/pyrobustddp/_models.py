"""Built-in plants.

The cart-pendulum has state ``(theta, omega, s, v)`` with ``theta`` measured from the upright position, so the
target is the origin and ``theta = pi`` hangs down. Both friction coefficients are uncertain: the channels see
``z = radius * (omega, v)`` at the start of a step and ``w = delta * z`` is subtracted from ``omega_dot`` and
``v_dot``, held constant over the step like the input. The continuous dynamics with ``w`` then equal those with
``d_i = nominal + radius * delta_i``; the discrete step agrees with parametric integration up to the rate change
within one step.

The linear fixtures have exact derivative providers and serve as oracles for the Riccati recursion and the
worst-case certificate.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import typing

import numpy as np

from pyrobustddp._errors import NonFiniteState
from pyrobustddp._plant import GeneralizedPlant, MultiplierSet, box_multipliers
from pyrobustddp._qapprox import Linearization, StageQuadCost
from pyrobustddp._quadform import ValueQuad

logger = logging.getLogger('pyrobustddp.models')

Derivative = typing.Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclasses.dataclass(frozen=True)
class PendulumParams:
    gravity: float = 9.81
    length: float = 1.0
    d1: float = 0.05
    d2: float = 0.05
    radius: float = 0.05
    duration: float = 10.0
    steps: int = 50
    terminal_weight: float = 1000.0

    def __post_init__(self):
        if self.radius < 0.0:
            raise ValueError(f'The friction radius must be non-negative, got {self.radius}')
        if self.steps < 1:
            raise ValueError(f'At least one step is required, got {self.steps}')

    @property
    def dt(self) -> float:
        return self.duration / self.steps


def pendulum_derivative(
    state: np.ndarray,
    u: float | np.ndarray,
    params: PendulumParams,
    w: np.ndarray | None = None,
) -> np.ndarray:
    """Time derivative of ``(theta, omega, s, v)``.

    :param w: Friction forces subtracted from ``omega_dot`` and ``v_dot``; ``w = delta * radius * (omega, v)``
        reproduces the coefficients ``d_i + radius * delta_i``.
    """
    theta, omega, _, v = np.ravel(state)
    force = float(np.ravel(u)[0]) if np.ndim(u) else float(u)
    w1, w2 = (0.0, 0.0) if w is None else np.ravel(w)
    v_dot = -params.d2 * v - w2 + force
    omega_dot = (
        -params.d1 * omega - w1 + params.gravity / params.length * math.sin(theta) + math.cos(theta) * v_dot
    )
    return np.array([omega, omega_dot, v, v_dot])


def rk4_step(derivative: Derivative, state: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step with the input held constant.

    :raises NonFiniteState: If the result is not finite.
    """
    state = np.asarray(state, dtype=float)
    k1 = derivative(state, u)
    k2 = derivative(state + dt / 2.0 * k1, u)
    k3 = derivative(state + dt / 2.0 * k2, u)
    k4 = derivative(state + dt * k3, u)
    result = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(result)):
        raise NonFiniteState(f'Integration from {state} with input {u} produced a non-finite state')
    return result


def build_pendulum_plant(params: PendulumParams | None = None) -> tuple[GeneralizedPlant, MultiplierSet]:
    """The cart-pendulum with two uncertain friction channels.

    :return: The plant and its multiplier set at the upright target. The uncertainty output ``radius * (omega, v)``
        is linear in the state, so the backward pass rebuilds the set from the linearized output at every
        trajectory point.
    """
    params = params or PendulumParams()
    dt = params.dt
    logger.debug('Pendulum with dt=%.3f, friction (%.3f, %.3f) +- %.3f.', dt, params.d1, params.d2, params.radius)

    def dynamics(x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        return rk4_step(lambda state, force: pendulum_derivative(state, force, params, w), x, u, dt)

    def uncertainty_output(x: np.ndarray, _u: np.ndarray, _w: np.ndarray) -> np.ndarray:
        return params.radius * np.asarray(x, dtype=float)[[1, 3]]

    def stage_cost(_x: np.ndarray, u: np.ndarray) -> float:
        return float(np.sum(np.square(u)) * dt)

    plant = GeneralizedPlant(
        n=4,
        m=1,
        d=2,
        l=2,
        dynamics=dynamics,
        uncertainty_output=uncertainty_output,
        stage_cost=stage_cost,
        terminal_cost=ValueQuad.quadratic(params.terminal_weight * np.eye(4)),
        horizon=params.steps,
        channels=(1, 1),
        name='pendulum',
    )
    output_rows = np.zeros((2, 1 + 4 + 1 + 2))
    output_rows[0, 1 + 1] = params.radius
    output_rows[1, 1 + 3] = params.radius
    return plant, box_multipliers(plant.channels, output_rows)


@dataclasses.dataclass(frozen=True)
class _LinearData:
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    terminal: np.ndarray
    horizon: int
    bw: np.ndarray | None = None
    cz: np.ndarray | None = None


def _linear_plant(data: _LinearData, name: str) -> GeneralizedPlant:
    n, m = data.b.shape
    bw = np.zeros((n, 0)) if data.bw is None else data.bw
    cz = np.zeros((0, n)) if data.cz is None else data.cz
    d = bw.shape[1]

    def dynamics(x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        return data.a @ x + data.b @ np.ravel(u) + bw @ np.ravel(w)

    def uncertainty_output(x: np.ndarray, _u: np.ndarray, _w: np.ndarray) -> np.ndarray:
        return cz @ x

    def stage_cost(x: np.ndarray, u: np.ndarray) -> float:
        u = np.ravel(u)
        return float(x @ data.q @ x + u @ data.r @ u)

    def derivatives(x: np.ndarray, u: np.ndarray, w: np.ndarray) -> tuple[Linearization, StageQuadCost]:
        output_rows = np.hstack([(cz @ x)[:, None], cz, np.zeros((cz.shape[0], m + d))])
        linearization = Linearization(dynamics(x, u, w), data.a, data.b, bw, output_rows if d else None)
        gradient = np.concatenate([2.0 * data.q @ x, 2.0 * data.r @ np.ravel(u)])
        hessian = 2.0 * np.block([[data.q, np.zeros((n, m))], [np.zeros((m, n)), data.r]])
        return linearization, StageQuadCost.from_taylor(stage_cost(x, u), gradient, hessian, n, m)

    return GeneralizedPlant(
        n=n,
        m=m,
        d=d,
        l=cz.shape[0],
        dynamics=dynamics,
        uncertainty_output=uncertainty_output,
        stage_cost=stage_cost,
        terminal_cost=ValueQuad.quadratic(data.terminal),
        horizon=data.horizon,
        derivative_provider=derivatives,
        linear=True,
        name=name,
    )


def linear_fixture(
    kind: str,
    *,
    seed: int = 7,
    uncertain: bool = False,
    horizon: int = 20,
) -> GeneralizedPlant:
    """Linear plants with quadratic costs.

    :param kind: ``scalar`` (``x+ = 0.9 x + u``), ``double_integrator`` (sampled with ``dt = 0.1``) or
        ``random_stable`` (spectral radius 0.9).
    :param seed: Seed of ``random_stable``.
    :param uncertain: Add one box channel ``w = delta * z`` with ``z`` a row of the state to ``random_stable``.
    :param horizon: The number of steps.
    """
    if kind == 'scalar':
        data = _LinearData(np.array([[0.9]]), np.array([[1.0]]), np.eye(1), np.eye(1), np.eye(1), horizon)
    elif kind == 'double_integrator':
        dt = 0.1
        data = _LinearData(
            np.array([[1.0, dt], [0.0, 1.0]]),
            np.array([[dt**2 / 2.0], [dt]]),
            np.eye(2),
            np.eye(1),
            np.eye(2),
            horizon,
        )
    elif kind == 'random_stable':
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((2, 2))
        a *= 0.9 / max(np.abs(np.linalg.eigvals(a)))
        data = _LinearData(
            a,
            rng.standard_normal((2, 1)),
            np.eye(2),
            np.eye(1),
            np.eye(2),
            horizon,
            bw=0.3 * rng.standard_normal((2, 1)) if uncertain else None,
            cz=0.3 * rng.standard_normal((1, 2)) if uncertain else None,
        )
    else:
        raise ValueError(f'Unknown linear fixture "{kind}"')
    if uncertain and kind != 'random_stable':
        raise ValueError('Only the random_stable fixture has an uncertainty channel')
    return _linear_plant(data, kind if not uncertain else f'{kind}-uncertain')
