"""The robust backward pass.

At every timestep the Q-function model ``Q`` over ``(1, dx, du, dw)`` is combined with the multiplier generators
into ``Qbar = Q + sum_i lambda_i M_i``. A gain ``K = [k1 K2]`` and a value matrix ``P`` over ``(1, dx)`` certify the
step when the robust Bellman inequality

    T(K)^T (Qbar - blockdiag(P, 0, 0)) T(K) < 0,   T(K) = [E_a + J_u K, T_b]

holds, with ``E_a`` embedding ``(1, dx)``, ``J_u`` embedding ``du`` and ``T_b`` embedding ``dw``. The inequality is
bilinear in ``(K, lambda)``; three strategies turn it into an LMI and minimize ``trace(Sigma P)``.

simple
    Applicable when the generators do not touch ``du`` and ``Q33 > 0``; one Schur complement.
dual
    Factors ``Q`` and the generators and dualizes the inequality in the inverses of ``P`` and the multipliers.
    Exact when the negative generator factors restricted to ``dw`` form an invertible square matrix.
canonical
    The same factorization with a left inverse of that matrix; sufficient, possibly conservative.
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
from pyrobustddp._errors import (
    BackwardInfeasible,
    DimensionMismatch,
    Infeasible,
    NonSymmetricTerminalCost,
    NotApplicable,
    NumericalFailure,
    PrimalCheckFailed,
    RankDeficientW12,
    RegularityViolated,
)
from pyrobustddp._plant import MultiplierSet, box_multipliers
from pyrobustddp._qapprox import QMethod, linearize, q_matrix, regularize
from pyrobustddp._quadform import Block, PartitionedQuad, ValueQuad
from pyrobustddp._sdp import (
    AffineExpr,
    SolverOptions,
    Variable,
    assemble,
    bmat,
    psd,
    repeat_diag,
    scaled,
    solve,
    trace,
)

if typing.TYPE_CHECKING:
    from collections.abc import Callable

    from pyrobustddp._driver import Trajectory
    from pyrobustddp._plant import GeneralizedPlant
    from pyrobustddp._qapprox import Linearization

logger = logging.getLogger('pyrobustddp.backward')

DEFAULT_SIGMA_WEIGHT = 1e-2
"""Weight ``rho`` of the state block in the default ``Sigma = blockdiag(1, rho I)``."""

MARGIN_SCALE = 1e-7
"""LMI margins are ``MARGIN_SCALE * (1 + ||Q||_2)``."""

REGULARITY_BUDGET = 1e-6
"""Largest diagonal perturbation, relative to ``||Q||_2``, accepted to make ``Q`` positive semi-definite."""

PRIMAL_CHECK_TOL = 1e-9

INVERSE_MULTIPLIER_FLOOR = 1e-9
"""Inverse multipliers at or below this value are treated as sitting on their lower bound."""

_STRUCTURE_TOL = 1e-12


class Strategy(str, enum.Enum):
    AUTO = 'auto'
    SIMPLE = 'simple'
    DUAL = 'dual'
    CANONICAL = 'canonical'


@dataclasses.dataclass(frozen=True)
class AffinePolicy:
    """``u(x) = anchor_input + k1 + K2 (x - anchor_state)``."""

    k1: np.ndarray
    K2: np.ndarray
    anchor_state: np.ndarray
    anchor_input: np.ndarray

    def __post_init__(self):
        k1 = np.atleast_1d(np.asarray(self.k1, dtype=float))
        k2 = np.asarray(self.K2, dtype=float).reshape(k1.size, -1)
        object.__setattr__(self, 'k1', k1)
        object.__setattr__(self, 'K2', k2)
        object.__setattr__(self, 'anchor_state', np.asarray(self.anchor_state, dtype=float).ravel())
        object.__setattr__(self, 'anchor_input', np.asarray(self.anchor_input, dtype=float).ravel())

    @classmethod
    def from_gain(cls, gain: np.ndarray, anchor_state: np.ndarray, anchor_input: np.ndarray) -> AffinePolicy:
        gain = np.atleast_2d(gain)
        return cls(gain[:, 0], gain[:, 1:], anchor_state, anchor_input)

    @property
    def gain(self) -> np.ndarray:
        """``[k1 K2]`` acting on ``(1, dx)``."""
        return np.hstack([self.k1[:, None], self.K2])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.anchor_input + self.k1 + self.K2 @ (np.ravel(x) - self.anchor_state)


@dataclasses.dataclass(frozen=True)
class BackwardStepResult:
    policy: AffinePolicy
    value: ValueQuad
    multipliers: np.ndarray
    strategy: Strategy
    status: str
    certificate_margin: float
    trace_value: float
    qbar: PartitionedQuad
    inverse_value: np.ndarray | None = None
    timestep: int | None = None


def default_sigma(n: int, weight: float = DEFAULT_SIGMA_WEIGHT) -> np.ndarray:
    """``blockdiag(1, weight * I_n)``."""
    return np.diag(np.concatenate([[1.0], np.full(n, weight)]))


def default_margin(q: PartitionedQuad) -> float:
    return MARGIN_SCALE * (1.0 + _common.spectral_norm(q.matrix))


@dataclasses.dataclass(frozen=True)
class _Layout:
    """Embeddings of ``(1, dx)``, ``du`` and ``dw`` into the ``(1, dx, du, dw)`` basis."""

    e_a: np.ndarray
    j_u: np.ndarray
    t_b: np.ndarray

    @classmethod
    def of(cls, q: PartitionedQuad) -> _Layout:
        identity = np.eye(q.size)
        a = 1 + q.n
        return cls(identity[:, :a], identity[:, q.index(Block.U)], identity[:, q.index(Block.W)])

    @property
    def a(self) -> int:
        return self.e_a.shape[1]

    def embed_value(self, p: np.ndarray) -> np.ndarray:
        return self.e_a @ p @ self.e_a.T

    def closed_loop(self, gain: np.ndarray) -> np.ndarray:
        return np.hstack([self.e_a + self.j_u @ gain, self.t_b])


def _check_inputs(q: PartitionedQuad, multipliers: MultiplierSet, sigma: np.ndarray) -> np.ndarray:
    if multipliers.size != q.size:
        raise DimensionMismatch(f'Multipliers of size {multipliers.size} do not fit Q of size {q.size}')
    sigma = _common.symmetrize(np.atleast_2d(sigma))
    if sigma.shape != (1 + q.n, 1 + q.n):
        raise DimensionMismatch(f'Sigma of shape {sigma.shape} does not fit n={q.n}')
    return sigma


def _select(vector: Variable, index: int) -> AffineExpr:
    return np.eye(vector.shape[0])[index : index + 1] @ vector.expr()


def _realize(
    q: PartitionedQuad,
    qbar_matrix: np.ndarray,
    p: np.ndarray,
    gain: np.ndarray,
) -> tuple[PartitionedQuad, float]:
    """Evaluate the robust Bellman inequality at a solution and check the conditions its derivation needs.

    :return: ``Qbar`` and the largest eigenvalue of the realized inequality.
    :raises PrimalCheckFailed: If the inequality or one of the side conditions fails.
    """
    layout = _Layout.of(q)
    qbar = PartitionedQuad(qbar_matrix, q.dims)
    closed = layout.closed_loop(gain)
    realized = closed.T @ (qbar.matrix - layout.embed_value(p)) @ closed
    scale = 1.0 + _common.spectral_norm(qbar.matrix)
    largest = _common.max_eig(realized)
    if largest > -PRIMAL_CHECK_TOL * scale:
        raise PrimalCheckFailed(f'Realized Bellman inequality has eigenvalue {largest:.3e} above {-PRIMAL_CHECK_TOL}')
    if qbar.d and _common.max_eig(qbar.Q44) > -PRIMAL_CHECK_TOL * scale:
        raise PrimalCheckFailed('Qbar44 is not negative definite')
    if qbar.m:
        reduced = qbar.Q33
        if qbar.d:
            reduced = reduced - qbar.Q34 @ np.linalg.solve(qbar.Q44, qbar.Q34.T)
        if _common.min_eig(reduced) < PRIMAL_CHECK_TOL * scale:
            raise PrimalCheckFailed('The input block of Qbar reduced by the disturbance block is not positive definite')
    return qbar, largest


def _finish(
    q: PartitionedQuad,
    qbar_matrix: np.ndarray,
    p: np.ndarray,
    gain: np.ndarray,
    lambdas: np.ndarray,
    sigma: np.ndarray,
    strategy: Strategy,
    anchor: np.ndarray | None,
    anchor_input: np.ndarray | None,
    inverse_value: np.ndarray | None = None,
) -> BackwardStepResult:
    qbar, largest = _realize(q, qbar_matrix, p, gain)
    anchor = np.zeros(q.n) if anchor is None else anchor
    anchor_input = np.zeros(q.m) if anchor_input is None else anchor_input
    p = _common.symmetrize(p)
    return BackwardStepResult(
        policy=AffinePolicy.from_gain(gain, anchor, anchor_input),
        value=ValueQuad(p, anchor, certified=_common.is_positive_definite(p)),
        multipliers=lambdas,
        strategy=strategy,
        status='optimal',
        certificate_margin=largest,
        trace_value=float(np.trace(sigma @ p)),
        qbar=qbar,
        inverse_value=inverse_value,
    )


def backward_step_simple(
    q: PartitionedQuad,
    multipliers: MultiplierSet,
    sigma: np.ndarray,
    *,
    margin: float | None = None,
    options: SolverOptions | None = None,
    anchor: np.ndarray | None = None,
    anchor_input: np.ndarray | None = None,
) -> BackwardStepResult:
    """Solve the step with a single Schur complement on the input block.

    :raises NotApplicable: If a generator has entries in the input rows or ``Q33`` is not positive definite.
    :raises Infeasible: If no certificate exists.
    """
    sigma = _check_inputs(q, multipliers, sigma)
    u_index = q.index(Block.U)
    for index, generator in enumerate(multipliers.generators):
        if np.abs(generator[u_index, :]).max(initial=0.0) > _STRUCTURE_TOL * (1.0 + np.abs(generator).max()):
            raise NotApplicable(f'Multiplier generator {index} depends on the input deviation')
    if q.m and not _common.is_positive_definite(q.Q33):
        raise NotApplicable('Q33 is not positive definite')
    margin = default_margin(q) if margin is None else margin
    layout = _Layout.of(q)
    a, d = layout.a, q.d
    embed = np.hstack([layout.e_a, layout.t_b])
    select = np.eye(a, a + d)
    p = Variable('P', (a, a), symmetric=True)
    k = Variable('K', (q.m, a))
    variables = [p, k]
    base = AffineExpr(embed.T @ q.matrix @ embed)
    if len(multipliers):
        lam = Variable('lam', (len(multipliers), 1), lower=0.0)
        variables.append(lam)
        for index, generator in enumerate(multipliers.generators):
            base = base + scaled(embed.T @ generator @ embed, _select(lam, index))
    base = base - bmat([[p, None], [None, np.zeros((d, d))]])
    feedback = k @ select
    cross = (embed.T @ q.matrix @ layout.j_u) @ feedback
    bellman = base + cross + cross.T
    schur = bmat([[bellman, feedback.T], [feedback, -np.linalg.inv(q.Q33)]])
    problem = assemble(
        [psd(-schur, name='bellman'), psd(p, name='value')],
        objective=trace(sigma @ p),
        variables=variables,
        margin=margin,
    )
    values = problem.unpack(solve(problem, options).ensure_optimal().y)
    lambdas = np.maximum(values['lam'].ravel(), 0.0) if len(multipliers) else np.zeros(0)
    qbar = q.matrix + multipliers.combine(lambdas)
    return _finish(q, qbar, values['P'], values['K'], lambdas, sigma, Strategy.SIMPLE, anchor, anchor_input)


@dataclasses.dataclass(frozen=True)
class _Factorization:
    """``Qbar = Pi+^T diag(S1, I) Pi+ - Pi2^T S2 Pi2`` with ``Pi+ = [Pi1; L]`` and the ``dw`` elimination."""

    q_eps: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    positive_counts: tuple[int, ...]
    negative_counts: tuple[int, ...]


def _factorize(q: PartitionedQuad, multipliers: MultiplierSet, *, square: bool) -> _Factorization:
    eigenvalues, eigenvectors = np.linalg.eigh(q.matrix)
    budget = REGULARITY_BUDGET * _common.spectral_norm(q.matrix)
    if eigenvalues[0] < -budget:
        raise RegularityViolated(f'Q has eigenvalue {eigenvalues[0]:.3e} below the perturbation budget {-budget:.3e}')
    eps = max(0.0, -float(eigenvalues[0]))
    if eps > 0.0:
        logger.debug('Perturbing Q by %.3e to make it positive semi-definite.', eps)
    factor = np.sqrt(np.maximum(eigenvalues + eps, 0.0))[:, None] * eigenvectors.T
    size = q.size
    pi1 = np.vstack([*multipliers.positive_factors, np.zeros((0, size))])
    pi2 = np.vstack([*multipliers.negative_factors, np.zeros((0, size))])
    t_b = _Layout.of(q).t_b
    w12 = pi2 @ t_b
    if square:
        if w12.shape[0] != w12.shape[1] or (w12.size and np.linalg.cond(w12) > 1e12):  # noqa: PLR2004
            raise NotApplicable(f'The disturbance rows of the negative factors, shape {w12.shape}, are not invertible')
        left_inverse = np.linalg.inv(w12) if w12.size else np.zeros((q.d, 0))
    else:
        singular_values = np.linalg.svd(w12, compute_uv=False) if w12.size else np.zeros(0)
        if w12.shape[0] < w12.shape[1] or singular_values.min(initial=np.inf) <= _common.DEFINITENESS_TOL:
            raise RankDeficientW12(
                f'The disturbance rows of the negative factors, shape {w12.shape}, are rank deficient'
            )
        left_inverse = np.linalg.pinv(w12) if w12.size else np.zeros((q.d, 0))
    pi_plus = np.vstack([pi1, factor])
    projection = np.eye(size) - t_b @ left_inverse @ pi2
    return _Factorization(
        q_eps=q.matrix + eps * np.eye(size),
        phi=pi_plus @ projection,
        psi=pi_plus @ t_b @ left_inverse,
        positive_counts=tuple(f.shape[0] for f in multipliers.positive_factors),
        negative_counts=tuple(f.shape[0] for f in multipliers.negative_factors),
    )


def _inverse_multipliers(
    factorization: _Factorization,
    count: int,
    size: int,
) -> tuple[list[Variable], AffineExpr | np.ndarray, list]:
    """The block ``X = diag(S1^-1, I) - Psi S2^-1 Psi^T`` with ``mu_i <= nu_i``."""
    if not count:
        return [], np.eye(size), []
    mu = Variable('mu', (count, 1), lower=0.0)
    nu = Variable('nu', (count, 1), lower=0.0)
    inverse_positive = repeat_diag(mu, factorization.positive_counts)
    block = bmat([[inverse_positive, None], [None, np.eye(size)]])
    coupling = factorization.psi @ repeat_diag(nu, factorization.negative_counts) @ factorization.psi.T
    ordering = psd(repeat_diag(nu - mu, [1] * count), strict=False, name='ordering')
    return [mu, nu], block - coupling, [ordering]


def _recover_qbar(
    factorization: _Factorization,
    multipliers: MultiplierSet,
    values: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    qbar = factorization.q_eps.copy()
    if not len(multipliers):
        return qbar, np.zeros(0)
    mu = values['mu'].ravel()
    nu = values['nu'].ravel()
    if min(mu.min(), nu.min()) <= INVERSE_MULTIPLIER_FLOOR:
        raise RegularityViolated(
            f'An inverse multiplier is at its lower bound (mu={mu.tolist()}, nu={nu.tolist()}), '
            'the certificate needs an unbounded multiplier'
        )
    alphas = 1.0 / mu
    betas = 1.0 / nu
    for alpha, beta, positive, negative in zip(
        alphas, betas, multipliers.positive_factors, multipliers.negative_factors, strict=True
    ):
        qbar += alpha * positive.T @ positive - beta * negative.T @ negative
    return qbar, betas


def backward_step_dual(
    q: PartitionedQuad,
    multipliers: MultiplierSet,
    sigma: np.ndarray,
    *,
    margin: float | None = None,
    options: SolverOptions | None = None,
    anchor: np.ndarray | None = None,
    anchor_input: np.ndarray | None = None,
) -> BackwardStepResult:
    """Solve the dualized step in ``(P^-1, K P^-1)`` and the inverse multipliers.

    :raises NotApplicable: If the negative factors restricted to ``dw`` are not an invertible square matrix.
    :raises RegularityViolated: If ``Q`` is indefinite beyond the perturbation budget or an inverse multiplier
        sits on its lower bound.
    :raises Infeasible: If no certificate exists.
    """
    sigma = _check_inputs(q, multipliers, sigma)
    factorization = _factorize(q, multipliers, square=True)
    margin = default_margin(q) if margin is None else margin
    layout = _Layout.of(q)
    a = layout.a
    p_inv = Variable('Pt', (a, a), symmetric=True)
    y = Variable('Y', (q.m, a))
    epigraph = Variable('Z', (a, a), symmetric=True)
    inverse_vars, x_block, extra = _inverse_multipliers(factorization, len(multipliers), q.size)
    coupling = (factorization.phi @ layout.e_a) @ p_inv + (factorization.phi @ layout.j_u) @ y
    problem = assemble(
        [
            psd(bmat([[x_block, coupling], [coupling.T, p_inv]]), name='dual-bellman'),
            psd(bmat([[epigraph, np.eye(a)], [np.eye(a), p_inv]]), strict=False, name='epigraph'),
            *extra,
        ],
        objective=trace(sigma @ epigraph),
        variables=[p_inv, y, epigraph, *inverse_vars],
        margin=margin,
    )
    values = problem.unpack(solve(problem, options).ensure_optimal().y)
    inverse_value = _common.symmetrize(values['Pt'])
    p = _common.symmetrize(np.linalg.inv(inverse_value))
    gain = values['Y'] @ p
    qbar, lambdas = _recover_qbar(factorization, multipliers, values)
    return _finish(q, qbar, p, gain, lambdas, sigma, Strategy.DUAL, anchor, anchor_input, inverse_value)


def backward_step_canonical(
    q: PartitionedQuad,
    multipliers: MultiplierSet,
    sigma: np.ndarray,
    *,
    margin: float | None = None,
    options: SolverOptions | None = None,
    anchor: np.ndarray | None = None,
    anchor_input: np.ndarray | None = None,
) -> BackwardStepResult:
    """Solve the step through the factorized form with a left inverse, linear in ``(P, K)``.

    The dual inequality implies the primal one; the primal is verified a posteriori.

    :raises RankDeficientW12: If the negative factors restricted to ``dw`` lack full column rank.
    :raises RegularityViolated: If ``Q`` is indefinite beyond the perturbation budget or an inverse multiplier
        sits on its lower bound.
    :raises Infeasible: If no certificate exists.
    :raises PrimalCheckFailed: If the recovered solution violates the primal inequality.
    """
    sigma = _check_inputs(q, multipliers, sigma)
    factorization = _factorize(q, multipliers, square=False)
    margin = default_margin(q) if margin is None else margin
    layout = _Layout.of(q)
    a = layout.a
    p = Variable('P', (a, a), symmetric=True)
    k = Variable('K', (q.m, a))
    inverse_vars, x_block, extra = _inverse_multipliers(factorization, len(multipliers), q.size)
    coupling = factorization.phi @ (layout.e_a + layout.j_u @ k)
    problem = assemble(
        [psd(bmat([[x_block, coupling], [coupling.T, p]]), name='canonical-bellman'), *extra],
        objective=trace(sigma @ p),
        variables=[p, k, *inverse_vars],
        margin=margin,
    )
    values = problem.unpack(solve(problem, options).ensure_optimal().y)
    qbar, lambdas = _recover_qbar(factorization, multipliers, values)
    return _finish(q, qbar, values['P'], values['K'], lambdas, sigma, Strategy.CANONICAL, anchor, anchor_input)


_STEPS = {
    Strategy.SIMPLE: backward_step_simple,
    Strategy.DUAL: backward_step_dual,
    Strategy.CANONICAL: backward_step_canonical,
}


def backward_step(
    q: PartitionedQuad,
    multipliers: MultiplierSet,
    sigma: np.ndarray,
    strategy: Strategy | str = Strategy.AUTO,
    **kwargs: typing.Any,
) -> BackwardStepResult:
    """Solve one step with the given strategy.

    ``auto`` tries simple, dual and canonical in this order and moves on when a strategy is not applicable or the
    regularity requirement fails. Infeasibility is never retried with another strategy.
    """
    strategy = Strategy(strategy)
    if strategy is not Strategy.AUTO:
        return _STEPS[strategy](q, multipliers, sigma, **kwargs)
    for candidate in (Strategy.SIMPLE, Strategy.DUAL):
        try:
            return _STEPS[candidate](q, multipliers, sigma, **kwargs)
        except (NotApplicable, RegularityViolated) as e:
            logger.debug('Strategy %s not usable: %s', candidate.value, e)
    return backward_step_canonical(q, multipliers, sigma, **kwargs)


def multipliers_at(
    plant: GeneralizedPlant,
    x: np.ndarray,
    u: np.ndarray,
    linearization: Linearization,
) -> MultiplierSet:
    """Multiplier generators of the plant at a trajectory point."""
    size = 1 + plant.n + plant.m + plant.d
    if plant.multiplier_provider is not None:
        return plant.multiplier_provider(x, u, np.zeros(plant.d))
    if plant.channels:
        return box_multipliers(plant.channels, linearization.output_rows)
    return MultiplierSet.empty(size)


def _terminal_value(plant: GeneralizedPlant, v_terminal: ValueQuad | None) -> ValueQuad:
    """The terminal value of a backward pass, checked against the plant's terminal cost.

    :raises DimensionMismatch: If the terminal cost or ``v_terminal`` does not fit the state.
    :raises NonSymmetricTerminalCost: If the terminal cost is not symmetric or ``v_terminal`` is below it.
    """
    matrix = (
        plant.terminal_cost.matrix
        if isinstance(plant.terminal_cost, ValueQuad)
        else np.atleast_2d(np.asarray(plant.terminal_cost, dtype=float))
    )
    if matrix.shape != (1 + plant.n, 1 + plant.n):
        raise DimensionMismatch(f'Terminal cost of shape {matrix.shape} does not fit n={plant.n}')
    if not _common.is_symmetric(matrix):
        raise NonSymmetricTerminalCost('The terminal cost matrix is not symmetric')
    terminal = plant.terminal_value
    if v_terminal is None:
        return terminal
    if v_terminal.n != plant.n:
        raise DimensionMismatch(f'Terminal value of size {v_terminal.n} does not fit n={plant.n}')
    gap = v_terminal.matrix - terminal.reanchor(v_terminal.anchor).matrix
    if _common.min_eig(gap) < -_common.definiteness_threshold(v_terminal.matrix):
        raise NonSymmetricTerminalCost('The terminal value is below the terminal cost')
    return v_terminal


SigmaSchedule = typing.Union[np.ndarray, 'Callable[[int], np.ndarray]', None]  # noqa: UP007


def run_backward_pass(
    plant: GeneralizedPlant,
    trajectory: Trajectory,
    v_terminal: ValueQuad | None = None,
    *,
    strategy: Strategy | str = Strategy.AUTO,
    qmethod: QMethod | str = QMethod.LINEARIZED,
    sigma: SigmaSchedule = None,
    sigma_weight: float = DEFAULT_SIGMA_WEIGHT,
    regularization: float | None = None,
    solver: SolverOptions | None = None,
    iteration: int | None = None,
    trace_path: _common.PATH_TYPE | None = None,
) -> list[BackwardStepResult]:
    """Run the backward recursion from ``T - 1`` down to ``0`` along ``trajectory``.

    :param plant: The plant.
    :param trajectory: The anchor trajectory with ``T + 1`` states and ``T`` inputs.
    :param v_terminal: Terminal value, defaults to the plant's terminal cost.
    :param strategy: The convexification strategy of every step.
    :param qmethod: How ``Q_t`` is estimated.
    :param sigma: A fixed weight, a function of the timestep or ``None`` for ``blockdiag(1, sigma_weight I)``.
    :param sigma_weight: The state weight of the default ``Sigma``.
    :param regularization: ``mu_min`` of :func:`regularize`; no regularization when ``None``.
    :param solver: SDP solver settings.
    :param iteration: The DDP iteration, reported in errors and the trace.
    :param trace_path: Append one JSON line per solved step to this file.
    :return: The step results indexed by timestep.
    :raises BackwardInfeasible: If a step has no certificate or the solver fails.
    :raises NonSymmetricTerminalCost: If ``v_terminal`` is below the terminal cost of the plant.
    """
    horizon = plant.horizon
    if len(trajectory.states) != horizon + 1 or len(trajectory.inputs) != horizon:
        raise DimensionMismatch(f'Trajectory lengths do not match the horizon {horizon}')
    started = time.perf_counter()
    v_next = _terminal_value(plant, v_terminal).reanchor(trajectory.states[horizon])
    results: list[BackwardStepResult | None] = [None] * horizon
    trace_lines = []
    for t in reversed(range(horizon)):
        x = trajectory.states[t]
        u = trajectory.inputs[t]
        weight = sigma(t) if callable(sigma) else sigma
        weight = default_sigma(plant.n, sigma_weight) if weight is None else weight
        try:
            linearization = linearize(plant, x, u)
            q = q_matrix(plant, x, u, v_next, qmethod, linearization)
            if regularization:
                q = regularize(q, regularization)
            multipliers = multipliers_at(plant, x, u, linearization)
            result = backward_step(
                q,
                multipliers,
                weight,
                strategy,
                options=solver,
                anchor=x,
                anchor_input=u,
            )
        except (Infeasible, NumericalFailure) as e:
            raise BackwardInfeasible(t, iteration, f'{type(e).__name__}: {e}') from e
        except Exception as e:
            e.add_note(f'raised at timestep {t}')
            raise
        result = dataclasses.replace(result, timestep=t)
        logger.debug(
            'Timestep %d: strategy %s, trace %.6e, certificate margin %.3e.',
            t,
            result.strategy.value,
            result.trace_value,
            result.certificate_margin,
        )
        trace_lines.append(
            {
                'iteration': iteration,
                'timestep': t,
                'strategy': result.strategy.value,
                'trace': result.trace_value,
                'certificate_margin': result.certificate_margin,
                'multipliers': result.multipliers.tolist(),
            },
        )
        results[t] = result
        v_next = result.value
    if trace_path is not None:
        with pathlib.Path(trace_path).open('a', encoding='utf-8') as trace_file:
            trace_file.writelines(json.dumps(line) + '\n' for line in trace_lines)
    logger.debug('Backward pass finished in %.2fs.', time.perf_counter() - started)
    return typing.cast('list[BackwardStepResult]', results)
