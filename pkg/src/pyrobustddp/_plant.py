"""Uncertain discrete-time generalized plants.

A plant maps ``(x_t, u_t, w_t)`` to the next state and to the uncertainty output ``z_t``. The loop is closed by
normalized box-parametric channels: channel ``i`` of size ``c_i`` produces ``w_i = delta_i * z_i`` with
``delta_i`` in ``[-1, 1]``. The quadratic constraints ``|z_i|^2 - |w_i|^2 >= 0`` that every admissible channel
satisfies are the multiplier generators used by the backward pass.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import typing

import numpy as np

from pyrobustddp import _common
from pyrobustddp._errors import (
    DimensionMismatch,
    NonSymmetricTerminalCost,
    RankDeficientFactor,
    WellPosednessFailure,
)
from pyrobustddp._quadform import ValueQuad

if typing.TYPE_CHECKING:
    from pyrobustddp._qapprox import Linearization, StageQuadCost

logger = logging.getLogger('pyrobustddp.plant')

Dynamics = typing.Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
StageCost = typing.Callable[[np.ndarray, np.ndarray], float]
DerivativeProvider = typing.Callable[
    [np.ndarray, np.ndarray, np.ndarray],
    tuple['Linearization', 'StageQuadCost'],
]
MultiplierProvider = typing.Callable[[np.ndarray, np.ndarray, np.ndarray], 'MultiplierSet']

FACTORIZATION_TOL = 1e-10
PROBE_SAMPLES = 32
FIXED_POINT_ITERATIONS = 100
FIXED_POINT_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class MultiplierSet:
    """Generators ``M_i = Mp_i^T Mp_i - Mm_i^T Mm_i`` of the multiplier cone.

    Every factor must have full row rank; the factorization is verified on construction.
    """

    positive_factors: tuple[np.ndarray, ...]
    negative_factors: tuple[np.ndarray, ...]
    size: int

    def __post_init__(self):
        positive = tuple(np.atleast_2d(np.asarray(f, dtype=float)) for f in self.positive_factors)
        negative = tuple(np.atleast_2d(np.asarray(f, dtype=float)) for f in self.negative_factors)
        if len(positive) != len(negative):
            raise DimensionMismatch(f'Got {len(positive)} positive but {len(negative)} negative factors')
        for index, factor in enumerate((*positive, *negative)):
            if factor.shape[1] != self.size:
                raise DimensionMismatch(f'Factor {index} has {factor.shape[1]} columns, expected {self.size}')
            if factor.shape[0] and np.linalg.matrix_rank(factor, tol=FACTORIZATION_TOL) < factor.shape[0]:
                raise RankDeficientFactor(f'Factor {index} of shape {factor.shape} does not have full row rank')
        object.__setattr__(self, 'positive_factors', positive)
        object.__setattr__(self, 'negative_factors', negative)

    @classmethod
    def empty(cls, size: int) -> MultiplierSet:
        return cls((), (), size)

    @classmethod
    def from_generators(cls, generators: typing.Sequence[np.ndarray]) -> MultiplierSet:
        """Factor symmetric generators through their eigendecomposition."""
        positive = []
        negative = []
        size = None
        for generator in generators:
            generator = np.asarray(generator, dtype=float)
            if not np.allclose(generator, generator.T, atol=1e-12):
                raise ValueError('Multiplier generators must be symmetric')
            size = generator.shape[0]
            eigenvalues, eigenvectors = np.linalg.eigh(generator)
            cutoff = FACTORIZATION_TOL * (1.0 + np.abs(eigenvalues).max(initial=0.0))
            up = eigenvalues > cutoff
            down = eigenvalues < -cutoff
            positive.append(np.sqrt(eigenvalues[up])[:, None] * eigenvectors[:, up].T)
            negative.append(np.sqrt(-eigenvalues[down])[:, None] * eigenvectors[:, down].T)
        if size is None:
            raise ValueError('At least one generator is required, use MultiplierSet.empty otherwise')
        return cls(tuple(positive), tuple(negative), size)

    def __len__(self) -> int:
        return len(self.positive_factors)

    @property
    def generators(self) -> tuple[np.ndarray, ...]:
        return tuple(p.T @ p - q.T @ q for p, q in zip(self.positive_factors, self.negative_factors, strict=True))

    def combine(self, lambdas: np.ndarray) -> np.ndarray:
        """``sum_i lambda_i M_i``."""
        result = np.zeros((self.size, self.size))
        for weight, generator in zip(np.ravel(lambdas), self.generators, strict=True):
            result += weight * generator
        return result


def box_multipliers(channel_dims: typing.Sequence[int], output_rows: np.ndarray) -> MultiplierSet:
    """Multiplier generators of normalized box-parametric channels.

    :param channel_dims: Size ``c_i`` of every channel; the channels own the trailing ``sum(c_i)`` coordinates of
        the ``(1, dx, du, dw)`` basis in order.
    :param output_rows: Matrix of shape ``(sum(c_i), 1 + n + m + d)``, the linearized uncertainty output
        ``z = output_rows @ (1, dx, du, dw)``.
    :return: One generator ``C_i^T C_i - E_i^T E_i`` per channel with ``C_i`` the channel's output rows and
        ``E_i`` the selector of its disturbance coordinates.
    :raises RankDeficientFactor: If the output rows of a channel are linearly dependent.
    """
    output_rows = np.atleast_2d(np.asarray(output_rows, dtype=float))
    channel_dims = [int(c) for c in channel_dims]
    total = sum(channel_dims)
    if output_rows.shape[0] != total:
        raise DimensionMismatch(f'Got {output_rows.shape[0]} output rows for channels of total size {total}')
    size = output_rows.shape[1]
    w_start = size - total
    positive = []
    negative = []
    offset = 0
    for channel in channel_dims:
        selector = np.zeros((channel, size))
        selector[np.arange(channel), w_start + offset + np.arange(channel)] = 1.0
        positive.append(output_rows[offset : offset + channel])
        negative.append(selector)
        offset += channel
    return MultiplierSet(tuple(positive), tuple(negative), size)


class Provenance(str, enum.Enum):
    NOMINAL = 'nominal'
    SAMPLED = 'sampled'
    WORST_CASE_ESTIMATE = 'worst_case_estimate'


@dataclasses.dataclass(frozen=True)
class UncertaintySample:
    """Normalized channel parameters ``delta[t, i]`` for every timestep.

    ``apply`` closes channel ``i`` as ``w_i = delta[t, i] * z_i`` and rejects parameters outside ``[-1, 1]``.
    """

    deltas: np.ndarray
    provenance: Provenance = Provenance.SAMPLED

    def __post_init__(self):
        deltas = np.array(self.deltas, dtype=float)
        if deltas.ndim != 2:  # noqa: PLR2004
            raise DimensionMismatch(f'Expected deltas of shape (horizon, channels), got {deltas.shape}')
        deltas.flags.writeable = False
        object.__setattr__(self, 'deltas', deltas)
        object.__setattr__(self, 'provenance', Provenance(self.provenance))

    @classmethod
    def nominal(cls, horizon: int, channels: int) -> UncertaintySample:
        return cls(np.zeros((horizon, channels)), Provenance.NOMINAL)

    @classmethod
    def constant(
        cls,
        values: typing.Sequence[float],
        horizon: int,
        provenance: Provenance = Provenance.SAMPLED,
    ) -> UncertaintySample:
        """The same parameters at every timestep, as for an uncertain physical constant."""
        return cls(np.tile(np.asarray(values, dtype=float), (horizon, 1)), provenance)

    @classmethod
    def draw(
        cls,
        rng: np.random.Generator,
        horizon: int,
        channels: int,
        *,
        time_varying: bool = False,
    ) -> UncertaintySample:
        """Uniform parameters in ``[-1, 1]``, redrawn at every timestep when ``time_varying``."""
        if time_varying:
            return cls(rng.uniform(-1.0, 1.0, size=(horizon, channels)))
        return cls.constant(rng.uniform(-1.0, 1.0, size=channels), horizon)

    @property
    def horizon(self) -> int:
        return self.deltas.shape[0]

    @property
    def channels(self) -> int:
        return self.deltas.shape[1]

    def at(self, t: int) -> np.ndarray:
        """The admissible channel parameters of timestep ``t``."""
        delta = self.deltas[t]
        if np.any(np.abs(delta) > 1.0 + 1e-12):  # noqa: PLR2004
            raise ValueError(f'Channel parameters {delta} at timestep {t} lie outside [-1, 1]')
        return delta

    def apply(self, t: int, z: np.ndarray, channel_dims: typing.Sequence[int]) -> np.ndarray:
        return np.repeat(self.at(t), channel_dims) * np.ravel(z)


def _check_vector(value: typing.Any, size: int, what: str) -> np.ndarray:
    vector = np.atleast_1d(np.asarray(value, dtype=float))
    if vector.shape != (size,):
        raise DimensionMismatch(f'{what} returned shape {vector.shape}, expected ({size},)')
    return vector


@dataclasses.dataclass(frozen=True)
class GeneralizedPlant:
    """Discrete-time uncertain plant ``x+ = f(x, u, w)``, ``z = g(x, u, w)`` with cost ``f0(x, u)``.

    ``terminal_cost`` is a :class:`ValueQuad` or a ``(1 + n) x (1 + n)`` matrix over ``(1, x)``. ``channels`` lists
    the box channel sizes and defaults to ``d`` scalar channels. ``linear`` marks plants with affine dynamics and
    quadratic costs, for which the planned bounds are exact certificates.
    """

    n: int
    m: int
    d: int
    l: int  # noqa: E741
    dynamics: Dynamics
    uncertainty_output: Dynamics
    stage_cost: StageCost
    terminal_cost: ValueQuad | np.ndarray
    horizon: int
    derivative_provider: DerivativeProvider | None = None
    channels: tuple[int, ...] | None = None
    multiplier_provider: MultiplierProvider | None = None
    linear: bool = False
    name: str = 'plant'

    def __post_init__(self):
        if min(self.n, self.m, self.d, self.l) < 0:
            raise DimensionMismatch(f'Dimensions must be non-negative, got n={self.n} m={self.m} d={self.d} l={self.l}')
        if self.horizon < 1:
            raise ValueError(f'The horizon must be at least 1, got {self.horizon}')
        channels = self.channels
        if channels is None:
            channels = (1,) * self.d if self.l == self.d else ()
        channels = tuple(int(c) for c in channels)
        if channels and (sum(channels) != self.d or self.l != self.d):
            raise DimensionMismatch(f'Box channels {channels} require d == l == {sum(channels)}')
        if self.d and not channels and self.multiplier_provider is None:
            raise DimensionMismatch('An uncertain plant needs box channels or a multiplier provider')
        object.__setattr__(self, 'channels', channels)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (1, self.n, self.m, self.d)

    @property
    def terminal_value(self) -> ValueQuad:
        if isinstance(self.terminal_cost, ValueQuad):
            return self.terminal_cost
        return ValueQuad(self.terminal_cost, np.zeros(self.n))

    def step(self, x: np.ndarray, u: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
        w = np.zeros(self.d) if w is None else w
        return _check_vector(self.dynamics(x, u, w), self.n, 'dynamics')

    def output(self, x: np.ndarray, u: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
        w = np.zeros(self.d) if w is None else w
        return _check_vector(self.uncertainty_output(x, u, w), self.l, 'uncertainty_output')

    def cost(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(self.stage_cost(x, u))

    def close_loop(
        self,
        x: np.ndarray,
        u: np.ndarray,
        delta: np.ndarray,
        *,
        max_iterations: int = FIXED_POINT_ITERATIONS,
        tol: float = FIXED_POINT_TOL,
    ) -> np.ndarray:
        """Resolve ``w = delta * g(x, u, w)`` by fixed-point iteration from ``w = 0``.

        :raises WellPosednessFailure: If the iteration does not settle within ``max_iterations``.
        """
        gains = np.repeat(np.asarray(delta, dtype=float), self.channels)
        w = np.zeros(self.d)
        for _ in range(max_iterations):
            updated = gains * self.output(x, u, w)
            if not np.all(np.isfinite(updated)):
                break
            if np.linalg.norm(updated - w) <= tol * (1.0 + np.linalg.norm(w)):
                return updated
            w = updated
        raise WellPosednessFailure(f'Uncertainty loop did not converge for delta={delta} at x={x}')

    def without_uncertainty(self) -> GeneralizedPlant:
        """The nominal plant with the uncertainty channels removed."""
        if not self.d and not self.l:
            return self
        d = self.d
        dynamics = self.dynamics
        provider = self.derivative_provider

        def nominal_dynamics(x: np.ndarray, u: np.ndarray, _w: np.ndarray) -> np.ndarray:
            return dynamics(x, u, np.zeros(d))

        def no_output(_x: np.ndarray, _u: np.ndarray, _w: np.ndarray) -> np.ndarray:
            return np.zeros(0)

        nominal_provider = None
        if provider is not None:

            def nominal_provider(
                x: np.ndarray, u: np.ndarray, _w: np.ndarray
            ) -> tuple[Linearization, StageQuadCost]:
                linearization, cost = provider(x, u, np.zeros(d))
                return linearization.without_disturbance(), cost

        return dataclasses.replace(
            self,
            d=0,
            l=0,
            dynamics=nominal_dynamics,
            uncertainty_output=no_output,
            derivative_provider=nominal_provider,
            channels=(),
            multiplier_provider=None,
            name=f'{self.name}-nominal',
        )


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    issues: tuple[str, ...] = ()
    probe_samples: int = 0
    probe_skipped: bool = True

    @property
    def valid(self) -> bool:
        return not self.issues


def validate_plant(plant: GeneralizedPlant, *, samples: int = PROBE_SAMPLES, seed: int = 0) -> ValidationReport:
    """Check the plant's evaluators and probe well-posedness of its uncertainty loop.

    Well-posedness is sampled, not proven: for ``samples`` random points and channel parameters the loop
    ``w = delta * g(x, u, w)`` must settle by fixed-point iteration.

    :param plant: The plant to check.
    :param samples: The number of probe points.
    :param seed: Seed of the probe generator, the report is deterministic given the seed.
    :return: The validation report.
    :raises DimensionMismatch: If an evaluator returns the wrong size.
    :raises NonSymmetricTerminalCost: If the terminal cost is not symmetric positive semi-definite.
    """
    x0 = np.zeros(plant.n)
    u0 = np.zeros(plant.m)
    plant.step(x0, u0)
    plant.output(x0, u0)
    if not np.isfinite(plant.cost(x0, u0)):
        raise DimensionMismatch('stage_cost must return a finite scalar')
    matrix = (
        plant.terminal_cost.matrix
        if isinstance(plant.terminal_cost, ValueQuad)
        else np.atleast_2d(np.asarray(plant.terminal_cost, dtype=float))
    )
    if matrix.shape != (1 + plant.n, 1 + plant.n):
        raise DimensionMismatch(f'Terminal cost of shape {matrix.shape} does not fit n={plant.n}')
    if not _common.is_symmetric(matrix):
        raise NonSymmetricTerminalCost('The terminal cost matrix is not symmetric')
    if _common.min_eig(matrix) < -_common.definiteness_threshold(matrix):
        raise NonSymmetricTerminalCost('The terminal cost matrix is not positive semi-definite')
    if not plant.channels:
        logger.debug('Plant %s has no box channels, skipping the well-posedness probe.', plant.name)
        return ValidationReport()
    rng = np.random.default_rng(seed)
    issues = []
    for index in range(samples):
        x = rng.standard_normal(plant.n)
        u = rng.standard_normal(plant.m)
        delta = rng.uniform(-1.0, 1.0, size=len(plant.channels))
        try:
            plant.close_loop(x, u, delta)
        except WellPosednessFailure:
            issues.append(f'probe {index}: uncertainty loop did not converge for delta={delta.tolist()}')
    if issues:
        logger.warning('Plant %s failed %d of %d well-posedness probes.', plant.name, len(issues), samples)
    return ValidationReport(issues=tuple(issues), probe_samples=samples, probe_skipped=False)
