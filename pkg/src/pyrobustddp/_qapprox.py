"""Quadratic Q-function models at a trajectory point.

Two estimates of ``Q_t`` over ``(1, dx, du, dw)`` are available. :func:`taylor_q` expands the composition
``f0(x, u) + V_next(f(x, u, w))`` to second order. :func:`linearized_q` composes the quadratic stage cost with the
value function through the affine linearization of the dynamics; the result is positive semi-definite whenever
both ingredients are. For affine dynamics and quadratic costs both estimates are exact and coincide.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import typing

import numpy as np

from pyrobustddp import _common
from pyrobustddp._errors import DimensionMismatch, NonFiniteDerivative
from pyrobustddp._quadform import PartitionedQuad, ValueQuad

if typing.TYPE_CHECKING:
    from pyrobustddp._plant import GeneralizedPlant

logger = logging.getLogger('pyrobustddp.qapprox')


class QMethod(str, enum.Enum):
    TAYLOR = 'taylor'
    LINEARIZED = 'linearized'


@dataclasses.dataclass(frozen=True)
class StageQuadCost:
    """Quadratic model ``(1, dx, du)^T R (1, dx, du)`` of the stage cost."""

    matrix: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        matrix = _common.symmetrize(np.atleast_2d(self.matrix))
        if matrix.shape != (1 + self.n + self.m, 1 + self.n + self.m):
            raise DimensionMismatch(f'Stage cost matrix of shape {matrix.shape} does not fit n={self.n}, m={self.m}')
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def from_taylor(cls, value: float, gradient: np.ndarray, hessian: np.ndarray, n: int, m: int) -> StageQuadCost:
        """Second-order expansion ``value + gradient^T d + d^T hessian d / 2``."""
        size = 1 + n + m
        matrix = np.zeros((size, size))
        matrix[0, 0] = value
        matrix[0, 1:] = matrix[1:, 0] = np.ravel(gradient) / 2.0
        matrix[1:, 1:] = np.asarray(hessian, dtype=float) / 2.0
        return cls(matrix, n, m)

    @property
    def r11(self) -> float:
        return float(self.matrix[0, 0])

    @property
    def r12(self) -> np.ndarray:
        return self.matrix[0, 1 : 1 + self.n]

    @property
    def r13(self) -> np.ndarray:
        return self.matrix[0, 1 + self.n :]

    @property
    def R22(self) -> np.ndarray:  # noqa: N802
        return self.matrix[1 : 1 + self.n, 1 : 1 + self.n]

    @property
    def R23(self) -> np.ndarray:  # noqa: N802
        return self.matrix[1 : 1 + self.n, 1 + self.n :]

    @property
    def R33(self) -> np.ndarray:  # noqa: N802
        return self.matrix[1 + self.n :, 1 + self.n :]


def _columns(value: np.ndarray, rows: int) -> np.ndarray:
    matrix = np.asarray(value, dtype=float)
    if matrix.size == 0:
        return np.zeros((rows, matrix.shape[-1] if matrix.ndim == 2 else 0))  # noqa: PLR2004
    return matrix.reshape(rows, -1)


@dataclasses.dataclass(frozen=True)
class Linearization:
    """``f(x + dx, u + du, w + dw) ~ f + A dx + Bu du + Bw dw``.

    ``output_rows`` optionally holds the linearized uncertainty output over ``(1, dx, du, dw)``.
    """

    f: np.ndarray
    A: np.ndarray
    Bu: np.ndarray
    Bw: np.ndarray
    output_rows: np.ndarray | None = None

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.f, dtype=float))
        n = f.size
        a = _columns(self.A, n)
        bu = _columns(self.Bu, n)
        bw = _columns(self.Bw, n)
        if a.shape != (n, n):
            raise DimensionMismatch(f'A of shape {a.shape} does not fit a state of size {n}')
        for name, value in (('f', f), ('A', a), ('Bu', bu), ('Bw', bw)):
            object.__setattr__(self, name, value)
        if self.output_rows is not None:
            rows = np.atleast_2d(np.asarray(self.output_rows, dtype=float))
            if rows.shape[1] != 1 + n + bu.shape[1] + bw.shape[1]:
                raise DimensionMismatch(f'Output rows of shape {rows.shape} do not fit the (1, dx, du, dw) basis')
            object.__setattr__(self, 'output_rows', rows)

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.Bu.shape[1]

    @property
    def d(self) -> int:
        return self.Bw.shape[1]

    def without_disturbance(self) -> Linearization:
        return Linearization(self.f, self.A, self.Bu, np.zeros((self.n, 0)))


def _split(plant: GeneralizedPlant, point: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return point[: plant.n], point[plant.n : plant.n + plant.m], point[plant.n + plant.m :]


def _check_finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteDerivative(f'{what} is not finite')
    return values


def _output_rows(plant: GeneralizedPlant, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    point = np.concatenate([x, u, w])
    jacobian = _common.jacobian(lambda v: plant.output(*_split(plant, v)), point)
    return np.hstack([plant.output(x, u, w)[:, None], _check_finite(jacobian, 'Output Jacobian')])


def linearize(
    plant: GeneralizedPlant,
    x: np.ndarray,
    u: np.ndarray,
    w: np.ndarray | None = None,
) -> tuple[Linearization, StageQuadCost]:
    """Linearize the dynamics and expand the stage cost at ``(x, u, w)``.

    The plant's ``derivative_provider`` is used when present, central finite differences otherwise. The
    uncertainty output is linearized as well when the plant has one.

    :raises NonFiniteDerivative: If a derivative is not finite.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.zeros(plant.d) if w is None else np.asarray(w, dtype=float)
    if plant.derivative_provider is not None:
        linearization, cost = plant.derivative_provider(x, u, w)
    else:
        point = np.concatenate([x, u, w])
        jacobian = _check_finite(
            _common.jacobian(lambda v: plant.step(*_split(plant, v)), point),
            'Dynamics Jacobian',
        )
        linearization = Linearization(
            plant.step(x, u, w),
            jacobian[:, : plant.n],
            jacobian[:, plant.n : plant.n + plant.m],
            jacobian[:, plant.n + plant.m :],
        )
        xu = np.concatenate([x, u])

        def stage(v: np.ndarray) -> float:
            return plant.cost(v[: plant.n], v[plant.n :])

        cost = StageQuadCost.from_taylor(
            plant.cost(x, u),
            _check_finite(_common.jacobian(stage, xu)[0], 'Stage cost gradient'),
            _check_finite(_common.hessian(stage, xu), 'Stage cost Hessian'),
            plant.n,
            plant.m,
        )
    _check_finite(
        np.concatenate([linearization.f, linearization.A.ravel(), linearization.Bu.ravel(), linearization.Bw.ravel()]),
        'Linearization',
    )
    _check_finite(cost.matrix, 'Stage cost model')
    if plant.l and linearization.output_rows is None:
        linearization = dataclasses.replace(linearization, output_rows=_output_rows(plant, x, u, w))
    return linearization, cost


def linearized_q(lin: Linearization, cost: StageQuadCost, v_next: ValueQuad) -> PartitionedQuad:
    """Compose the stage cost model with ``V_next`` through the affine dynamics.

    ``V_next`` is anchored at the next nominal state, so the next state deviation is
    ``f + A dx + Bu du + Bw dw - anchor``.

    :raises DimensionMismatch: If the ingredients do not share dimensions.
    """
    n, m, d = lin.n, lin.m, lin.d
    if v_next.n != n or cost.n != n or cost.m != m:
        raise DimensionMismatch(
            f'Linearization (n={n}, m={m}), cost (n={cost.n}, m={cost.m}) and value (n={v_next.n}) do not match'
        )
    size = 1 + n + m + d
    next_state = np.zeros((1 + n, size))
    next_state[0, 0] = 1.0
    next_state[1:, 0] = lin.f - v_next.anchor
    next_state[1:, 1 : 1 + n] = lin.A
    next_state[1:, 1 + n : 1 + n + m] = lin.Bu
    next_state[1:, 1 + n + m :] = lin.Bw
    stage = np.eye(1 + n + m, size)
    matrix = next_state.T @ v_next.matrix @ next_state + stage.T @ cost.matrix @ stage
    return PartitionedQuad(matrix, (1, n, m, d))


def _value_gradient(v_next: ValueQuad, state: np.ndarray) -> tuple[float, np.ndarray]:
    vector = np.concatenate([[1.0], state - v_next.anchor])
    return v_next(state), 2.0 * (v_next.matrix[1:, :] @ vector)


def taylor_q(
    plant: GeneralizedPlant,
    x: np.ndarray,
    u: np.ndarray,
    w: np.ndarray | None,
    v_next: ValueQuad,
) -> PartitionedQuad:
    """Second-order expansion of ``f0(x, u) + V_next(f(x, u, w))`` at the given point.

    With a derivative provider the stage cost model is taken from the provider and the curvature of the dynamics
    from differences of provider Jacobians. Without one the composition is differenced directly.

    :raises NonFiniteDerivative: If the value, gradient or Hessian is not finite.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.zeros(plant.d) if w is None else np.asarray(w, dtype=float)
    point = np.concatenate([x, u, w])
    size = point.size
    xu = plant.n + plant.m
    if plant.derivative_provider is None:

        def composed(v: np.ndarray) -> float:
            state, control, disturbance = _split(plant, v)
            return plant.cost(state, control) + v_next(plant.step(state, control, disturbance))

        value = composed(point)
        gradient = _common.jacobian(composed, point)[0]
        hessian = _common.hessian(composed, point)
    else:
        provider = plant.derivative_provider

        def dynamics_jacobian(v: np.ndarray) -> np.ndarray:
            linearization, _ = provider(*_split(plant, v))
            return np.hstack([linearization.A, linearization.Bu, linearization.Bw])

        linearization, cost = provider(x, u, w)
        jacobian = np.hstack([linearization.A, linearization.Bu, linearization.Bw])
        next_value, next_gradient = _value_gradient(v_next, linearization.f)
        value = cost.r11 + next_value
        gradient = jacobian.T @ next_gradient
        gradient[:xu] += 2.0 * cost.matrix[0, 1:]
        hessian = jacobian.T @ (2.0 * v_next.P22) @ jacobian
        hessian[:xu, :xu] += 2.0 * cost.matrix[1:, 1:]
        curvature = np.zeros((size, size))
        for j, h in enumerate(_common.JACOBIAN_STEP * (1.0 + np.abs(point))):
            forward = point.copy()
            backward = point.copy()
            forward[j] += h
            backward[j] -= h
            derivative = (dynamics_jacobian(forward) - dynamics_jacobian(backward)) / (2.0 * h)
            curvature[:, j] = derivative.T @ next_gradient
        hessian += _common.symmetrize(curvature)
    _check_finite(np.concatenate([[value], gradient, hessian.ravel()]), 'Taylor expansion')
    matrix = np.zeros((1 + size, 1 + size))
    matrix[0, 0] = value
    matrix[0, 1:] = matrix[1:, 0] = gradient / 2.0
    matrix[1:, 1:] = hessian / 2.0
    return PartitionedQuad(matrix, plant.dims)


def q_matrix(
    plant: GeneralizedPlant,
    x: np.ndarray,
    u: np.ndarray,
    v_next: ValueQuad,
    method: QMethod | str = QMethod.LINEARIZED,
    linearization: tuple[Linearization, StageQuadCost] | None = None,
) -> PartitionedQuad:
    """Estimate ``Q_t`` at the nominal point ``(x, u, w = 0)`` with the chosen method."""
    if QMethod(method) is QMethod.TAYLOR:
        return taylor_q(plant, x, u, None, v_next)
    lin, cost = linearization or linearize(plant, x, u)
    return linearized_q(lin, cost, v_next)


def regularization_shift(quad: PartitionedQuad, mu_min: float) -> float:
    """Smallest ``sigma`` in ``{0, mu_min * 2^k}`` lifting the deviation block to at least ``mu_min``."""
    if mu_min <= 0.0:
        raise ValueError(f'mu_min must be positive, got {mu_min}')
    smallest = _common.min_eig(quad.matrix[1:, 1:])
    tol = 1e-12 * max(1.0, abs(smallest))
    if smallest + tol >= mu_min:
        return 0.0
    required = mu_min - smallest
    sigma = mu_min
    while sigma + tol < required:
        sigma *= 2.0
    return sigma


def regularize(quad: PartitionedQuad, mu_min: float) -> PartitionedQuad:
    """Add ``sigma * blockdiag(0, I)`` so that the ``(dx, du, dw)`` block is at least ``mu_min * I``.

    ``q11`` is never modified; a form that already satisfies the bound is returned unchanged.
    """
    sigma = regularization_shift(quad, mu_min)
    if sigma == 0.0:
        return quad
    logger.debug('Regularizing Q with sigma=%.3e.', sigma)
    shift = np.eye(quad.size)
    shift[0, 0] = 0.0
    return PartitionedQuad(quad.matrix + sigma * shift, quad.dims)
