"""Linear matrix inequality problems and their solution.

Decision variables are declared as :class:`Variable` objects and combined into matrix-valued
:class:`AffineExpr` expressions. :func:`assemble` turns a list of constraints ``expr >= 0`` into the canonical
:class:`LmiProblem`

    minimize  c^T y   subject to   F0_j + sum_i y_i F_ij >= margin_j I   for every block j,

which :func:`solve` hands to a backend. The embedded backend is a dense primal-dual interior-point method with
Nesterov-Todd scaling and Mehrotra's predictor-corrector steps, adequate for blocks of up to about a hundred
rows. The optional ``cvxpy`` backend delegates to an external conic solver.

Usage
-----

.. code-block:: python

    import numpy as np
    from pyrobustddp import Variable, assemble, bmat, psd, solve

    y = Variable('y', (1, 1))
    one = np.ones((1, 1))
    problem = assemble([psd(bmat([[y, one], [one, y]]))], objective=y)
    solution = solve(problem)
    solution.ensure_optimal()
    print(problem.unpack(solution.y)['y'])  # close to 1
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
import pathlib
import time
import typing

import numpy as np
import scipy.linalg

from pyrobustddp import _common
from pyrobustddp._errors import (
    DimensionMismatch,
    Infeasible,
    NonAffineExpression,
    NumericalFailure,
    SchemaVersionMismatch,
    UnknownVariable,
)

logger = logging.getLogger('pyrobustddp.sdp')

DEFAULT_MARGIN = 1e-7
"""Strict inequalities ``F > 0`` are posed as ``F >= margin * I``."""

SCHEMA_NAME = 'pyrobustddp.lmi'
SCHEMA_VERSION = 1

_SYMMETRY_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class Variable:
    """A named matrix-valued decision variable.

    Scalars have shape ``(1, 1)``, vectors ``(k, 1)``. Symmetric variables are parametrized by the orthonormal basis
    ``E_ii`` and ``(E_ij + E_ji) / sqrt(2)`` for ``i < j``, all other variables by the entries in row-major order.
    ``lower`` is an element-wise lower bound and is only supported for non-symmetric variables.
    """

    name: str
    shape: tuple[int, int]
    symmetric: bool = False
    lower: float | None = None

    __array_ufunc__ = None

    def __post_init__(self):
        rows, cols = (int(s) for s in self.shape)
        object.__setattr__(self, 'shape', (rows, cols))
        if self.symmetric and rows != cols:
            raise DimensionMismatch(f'Symmetric variable {self.name} must be square, got shape {self.shape}')
        if self.symmetric and self.lower is not None:
            raise ValueError(f'Bounds are not supported for symmetric variable {self.name}')

    @property
    def size(self) -> int:
        rows, cols = self.shape
        return rows * (rows + 1) // 2 if self.symmetric else rows * cols

    def basis(self) -> np.ndarray:
        """Basis matrices of the variable, shape ``(size, rows, cols)``."""
        rows, cols = self.shape
        basis = np.zeros((self.size, rows, cols))
        if not self.symmetric:
            basis.reshape(self.size, -1)[np.arange(self.size), np.arange(self.size)] = 1.0
            return basis
        for k, (i, j) in enumerate(zip(*np.triu_indices(rows), strict=True)):
            if i == j:
                basis[k, i, i] = 1.0
            else:
                basis[k, i, j] = basis[k, j, i] = 1.0 / math.sqrt(2.0)
        return basis

    def pack(self, value: np.ndarray) -> np.ndarray:
        """Coordinates of ``value`` in the variable basis."""
        value = np.asarray(value, dtype=float).reshape(self.shape)
        return np.einsum('kij,ij->k', self.basis(), value)

    def unpack(self, coordinates: np.ndarray) -> np.ndarray:
        return np.einsum('k,kij->ij', np.asarray(coordinates, dtype=float), self.basis())

    def expr(self) -> AffineExpr:
        return AffineExpr(np.zeros(self.shape), {self.name: self.basis()}, {self.name: self})

    @property
    def T(self) -> AffineExpr:  # noqa: N802
        return self.expr().T

    def __add__(self, other: typing.Any) -> AffineExpr:
        return self.expr() + other

    def __radd__(self, other: typing.Any) -> AffineExpr:
        return other + self.expr()

    def __sub__(self, other: typing.Any) -> AffineExpr:
        return self.expr() - other

    def __rsub__(self, other: typing.Any) -> AffineExpr:
        return other - self.expr()

    def __neg__(self) -> AffineExpr:
        return -self.expr()

    def __mul__(self, other: float) -> AffineExpr:
        return self.expr() * other

    def __rmul__(self, other: float) -> AffineExpr:
        return self.expr() * other

    def __matmul__(self, other: typing.Any) -> AffineExpr:
        return self.expr() @ other

    def __rmatmul__(self, other: typing.Any) -> AffineExpr:
        return other @ self.expr()


class AffineExpr:
    """Matrix-valued expression ``constant + sum_k y_k T_k`` over named variables.

    ``terms`` maps a variable name to the images of its basis matrices, an array of shape ``(size, rows, cols)``.
    Products of two non-constant expressions raise :class:`NonAffineExpression`.
    """

    __array_ufunc__ = None

    def __init__(
        self,
        constant: np.ndarray,
        terms: dict[str, np.ndarray] | None = None,
        variables: dict[str, Variable] | None = None,
    ):
        self.constant = np.atleast_2d(np.asarray(constant, dtype=float))
        self.terms = dict(terms or {})
        self.variables = dict(variables or {})

    @staticmethod
    def wrap(value: typing.Any) -> AffineExpr:
        if isinstance(value, AffineExpr):
            return value
        if isinstance(value, Variable):
            return value.expr()
        return AffineExpr(value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.constant.shape  # type: ignore[return-value]

    @property
    def is_constant(self) -> bool:
        return not self.terms

    def _combine(self, other: typing.Any, sign: float) -> AffineExpr:
        other = AffineExpr.wrap(other)
        if other.shape != self.shape:
            raise DimensionMismatch(f'Cannot add expressions of shapes {self.shape} and {other.shape}')
        terms = dict(self.terms)
        for name, coefficient in other.terms.items():
            terms[name] = terms[name] + sign * coefficient if name in terms else sign * coefficient
        variables = {**self.variables, **other.variables}
        return AffineExpr(self.constant + sign * other.constant, terms, variables)

    def __add__(self, other: typing.Any) -> AffineExpr:
        return self._combine(other, 1.0)

    def __radd__(self, other: typing.Any) -> AffineExpr:
        return AffineExpr.wrap(other)._combine(self, 1.0)

    def __sub__(self, other: typing.Any) -> AffineExpr:
        return self._combine(other, -1.0)

    def __rsub__(self, other: typing.Any) -> AffineExpr:
        return AffineExpr.wrap(other)._combine(self, -1.0)

    def __neg__(self) -> AffineExpr:
        return self * -1.0

    def __mul__(self, other: float) -> AffineExpr:
        if isinstance(other, (AffineExpr, Variable)):
            raise NonAffineExpression('Element-wise products of expressions are not affine')
        factor = float(other)
        return AffineExpr(
            self.constant * factor,
            {name: coefficient * factor for name, coefficient in self.terms.items()},
            self.variables,
        )

    def __rmul__(self, other: float) -> AffineExpr:
        return self * other

    def __matmul__(self, other: typing.Any) -> AffineExpr:
        other = AffineExpr.wrap(other)
        if not self.is_constant and not other.is_constant:
            raise NonAffineExpression('The product of two variable expressions is not affine')
        if other.is_constant:
            right = other.constant
            return AffineExpr(
                self.constant @ right,
                {name: np.einsum('kij,jl->kil', coefficient, right) for name, coefficient in self.terms.items()},
                self.variables,
            )
        return self.constant @ other

    def __rmatmul__(self, other: typing.Any) -> AffineExpr:
        left = AffineExpr.wrap(other)
        if not left.is_constant:
            return left @ self
        return AffineExpr(
            left.constant @ self.constant,
            {name: np.einsum('ij,kjl->kil', left.constant, coefficient) for name, coefficient in self.terms.items()},
            self.variables,
        )

    @property
    def T(self) -> AffineExpr:  # noqa: N802
        return AffineExpr(
            self.constant.T,
            {name: np.swapaxes(coefficient, 1, 2) for name, coefficient in self.terms.items()},
            self.variables,
        )

    def evaluate(self, assignment: typing.Mapping[str, np.ndarray]) -> np.ndarray:
        """Value of the expression for the given variable values."""
        value = self.constant.copy()
        for name, coefficient in self.terms.items():
            if name not in assignment:
                raise UnknownVariable(f'No value assigned to variable {name}')
            coordinates = self.variables[name].pack(assignment[name])
            value += np.einsum('k,kij->ij', coordinates, coefficient)
        return value


ExprLike = typing.Union[AffineExpr, Variable, np.ndarray, float]  # noqa: UP007


def as_expr(value: ExprLike) -> AffineExpr:
    return AffineExpr.wrap(value)


def bmat(blocks: list[list[ExprLike | None]]) -> AffineExpr:
    """Assemble a block matrix from expressions, constants and ``None`` (zero) entries."""
    wrapped = [[None if entry is None else as_expr(entry) for entry in row] for row in blocks]
    heights: list[int | None] = [None] * len(wrapped)
    widths: list[int | None] = [None] * max(len(row) for row in wrapped)
    for i, row in enumerate(wrapped):
        for j, entry in enumerate(row):
            if entry is None:
                continue
            rows, cols = entry.shape
            if heights[i] not in (None, rows) or widths[j] not in (None, cols):
                raise DimensionMismatch(f'Block ({i}, {j}) of shape {entry.shape} does not fit its row or column')
            heights[i], widths[j] = rows, cols
    if None in heights or None in widths:
        raise DimensionMismatch('Every block row and column needs at least one sized entry')
    row_offsets = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    col_offsets = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    constant = np.zeros((row_offsets[-1], col_offsets[-1]))
    variables: dict[str, Variable] = {}
    for row in wrapped:
        for entry in row:
            if entry is not None:
                variables.update(entry.variables)
    terms = {name: np.zeros((var.size, row_offsets[-1], col_offsets[-1])) for name, var in variables.items()}
    for i, row in enumerate(wrapped):
        for j, entry in enumerate(row):
            if entry is None:
                continue
            rs = slice(row_offsets[i], row_offsets[i + 1])
            cs = slice(col_offsets[j], col_offsets[j + 1])
            constant[rs, cs] = entry.constant
            for name, coefficient in entry.terms.items():
                terms[name][:, rs, cs] += coefficient
    return AffineExpr(constant, terms, variables)


def trace(expr: ExprLike) -> AffineExpr:
    expr = as_expr(expr)
    return AffineExpr(
        np.trace(expr.constant).reshape(1, 1),
        {name: np.einsum('kii->k', coefficient).reshape(-1, 1, 1) for name, coefficient in expr.terms.items()},
        expr.variables,
    )


def scaled(matrix: np.ndarray, scalar: ExprLike) -> AffineExpr:
    """The product of a constant matrix with a ``(1, 1)`` expression."""
    scalar = as_expr(scalar)
    if scalar.shape != (1, 1):
        raise DimensionMismatch(f'Expected a scalar expression, got shape {scalar.shape}')
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    return AffineExpr(
        matrix * scalar.constant[0, 0],
        {name: np.einsum('k,ij->kij', coefficient[:, 0, 0], matrix) for name, coefficient in scalar.terms.items()},
        scalar.variables,
    )


def repeat_diag(vector: ExprLike, counts: typing.Sequence[int]) -> AffineExpr:
    """``diag(v_1 I_{c_1}, ..., v_s I_{c_s})`` for a ``(s, 1)`` expression ``v``."""
    vector = as_expr(vector)
    if vector.shape != (len(counts), 1):
        raise DimensionMismatch(f'Expected a vector of length {len(counts)}, got shape {vector.shape}')
    counts = np.asarray(counts, dtype=int)

    def expand(column: np.ndarray) -> np.ndarray:
        return np.diag(np.repeat(column, counts))

    return AffineExpr(
        expand(vector.constant[:, 0]),
        {name: np.stack([expand(c[:, 0]) for c in coefficient]) for name, coefficient in vector.terms.items()},
        vector.variables,
    )


@dataclasses.dataclass(frozen=True)
class LmiConstraint:
    """``expr >= margin * I`` when ``strict``, ``expr >= 0`` otherwise."""

    expr: AffineExpr
    strict: bool = True
    name: str = ''


def psd(expr: ExprLike, *, strict: bool = True, name: str = '') -> LmiConstraint:
    return LmiConstraint(as_expr(expr), strict=strict, name=name)


@dataclasses.dataclass(frozen=True)
class LmiBlock:
    name: str
    f0: np.ndarray
    coefficients: np.ndarray
    strict: bool = True

    @property
    def size(self) -> int:
        return self.f0.shape[0]

    def value(self, y: np.ndarray) -> np.ndarray:
        return self.f0 + np.einsum('k,kij->ij', y, self.coefficients)


@dataclasses.dataclass(frozen=True)
class LmiProblem:
    """Minimize ``c^T y + objective_offset`` subject to ``F_j(y) >= margin_j I`` and the variable bounds.

    Variables are ordered by name; ``offsets[k]`` is the position of the first coordinate of ``variables[k]`` in
    ``y``. A block's margin is ``margin`` when it is strict and zero otherwise.
    """

    variables: tuple[Variable, ...]
    c: np.ndarray
    blocks: tuple[LmiBlock, ...]
    objective_offset: float = 0.0
    margin: float = DEFAULT_MARGIN

    @property
    def dimension(self) -> int:
        return sum(var.size for var in self.variables)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.cumsum([0] + [var.size for var in self.variables])[:-1])

    @property
    def lower_bounds(self) -> np.ndarray:
        bounds = [np.full(var.size, -np.inf if var.lower is None else var.lower) for var in self.variables]
        return np.concatenate(bounds) if bounds else np.zeros(0)

    def block_margin(self, block: LmiBlock) -> float:
        return self.margin if block.strict else 0.0

    def pack(self, assignment: typing.Mapping[str, np.ndarray]) -> np.ndarray:
        unknown = set(assignment) - {var.name for var in self.variables}
        if unknown:
            raise UnknownVariable(f'Unknown variables {sorted(unknown)}')
        parts = [var.pack(assignment[var.name]) for var in self.variables]
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, y: np.ndarray) -> dict[str, np.ndarray]:
        return {
            var.name: var.unpack(y[offset : offset + var.size])
            for var, offset in zip(self.variables, self.offsets, strict=True)
        }

    def objective(self, y: np.ndarray) -> float:
        return float(self.c @ y) + self.objective_offset

    def residual(self, y: np.ndarray) -> float:
        """Worst constraint residual ``min_j (min eig F_j(y) - margin_j)``, ``+inf`` without blocks."""
        residuals = [_common.min_eig(block.value(y)) - self.block_margin(block) for block in self.blocks]
        return min(residuals, default=float('inf'))

    def bound_violation(self, y: np.ndarray) -> float:
        lower = self.lower_bounds
        finite = np.isfinite(lower)
        return float(np.max(lower[finite] - y[finite], initial=0.0))


def assemble(
    constraints: typing.Sequence[LmiConstraint],
    objective: ExprLike | None = None,
    *,
    variables: typing.Sequence[Variable] | None = None,
    margin: float = DEFAULT_MARGIN,
) -> LmiProblem:
    """Build the canonical LMI problem.

    :param constraints: The matrix inequalities, each with a square expression.
    :param objective: A ``(1, 1)`` expression to minimize; zero when omitted.
    :param variables: The declared variables. When given, expressions may only reference these.
    :param margin: The margin of strict inequalities.
    :return: The assembled problem.
    :raises UnknownVariable: If an expression references an undeclared variable.
    :raises DimensionMismatch: If a constraint is not square or not symmetric.
    """
    objective_expr = as_expr(0.0 if objective is None else objective)
    if objective_expr.shape != (1, 1):
        raise DimensionMismatch(f'The objective must be a scalar expression, got shape {objective_expr.shape}')
    used: dict[str, Variable] = {}
    for expr in [objective_expr, *(constraint.expr for constraint in constraints)]:
        for name, var in expr.variables.items():
            if name in used and used[name] != var:
                raise ValueError(f'Variable name {name} is declared twice with different definitions')
            used[name] = var
    if variables is not None:
        declared = {var.name: var for var in variables}
        unknown = set(used) - set(declared)
        if unknown:
            raise UnknownVariable(f'Expressions reference undeclared variables {sorted(unknown)}')
        used = declared
    ordered = tuple(sorted(used.values(), key=lambda var: var.name))
    offsets = dict(zip((var.name for var in ordered), np.cumsum([0] + [v.size for v in ordered])[:-1], strict=True))
    dimension = sum(var.size for var in ordered)

    def scatter(expr: AffineExpr) -> np.ndarray:
        coefficients = np.zeros((dimension, *expr.shape))
        for name, coefficient in expr.terms.items():
            coefficients[offsets[name] : offsets[name] + coefficient.shape[0]] = coefficient
        return coefficients

    blocks = []
    for index, constraint in enumerate(constraints):
        expr = constraint.expr
        rows, cols = expr.shape
        if rows != cols:
            raise DimensionMismatch(f'Constraint {constraint.name or index} is not square, shape {expr.shape}')
        coefficients = scatter(expr)
        scale = 1.0 + np.abs(expr.constant).max(initial=0.0) + np.abs(coefficients).max(initial=0.0)
        asymmetry = max(
            np.abs(expr.constant - expr.constant.T).max(initial=0.0),
            np.abs(coefficients - np.swapaxes(coefficients, 1, 2)).max(initial=0.0),
        )
        if asymmetry > _SYMMETRY_TOL * scale:
            raise DimensionMismatch(f'Constraint {constraint.name or index} is not symmetric')
        blocks.append(
            LmiBlock(
                name=constraint.name or f'block{index}',
                f0=_common.symmetrize(expr.constant),
                coefficients=(coefficients + np.swapaxes(coefficients, 1, 2)) / 2.0,
                strict=constraint.strict,
            ),
        )
    c = scatter(objective_expr)[:, 0, 0] if dimension else np.zeros(0)
    return LmiProblem(
        variables=ordered,
        c=c,
        blocks=tuple(blocks),
        objective_offset=float(objective_expr.constant[0, 0]),
        margin=margin,
    )


class SolveStatus(str, enum.Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    MAX_ITER = 'max_iter'
    NUMERICAL_FAILURE = 'numerical_failure'


@dataclasses.dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 200
    gap_tol: float = 1e-8
    feas_tol: float = 1e-9
    infeas_tol: float = 1e-8
    step_fraction: float = 0.98
    backend: str = 'embedded'


@dataclasses.dataclass(frozen=True)
class SdpSolution:
    y: np.ndarray
    status: SolveStatus
    objective: float
    residual: float
    iterations: int = 0
    certificate: tuple[np.ndarray, ...] | None = None
    message: str = ''

    def ensure_optimal(self) -> SdpSolution:
        """Return ``self`` when optimal.

        :raises Infeasible: If the problem was found infeasible.
        :raises NumericalFailure: For every other non-optimal status.
        """
        if self.status is SolveStatus.OPTIMAL:
            return self
        if self.status is SolveStatus.INFEASIBLE:
            raise Infeasible(f'LMI problem is infeasible: {self.message}', certificate=self.certificate)
        raise NumericalFailure(f'SDP solver stopped with status {self.status.value}: {self.message}')


class SdpBackend(typing.Protocol):
    name: str

    def solve(self, problem: LmiProblem, options: SolverOptions) -> SdpSolution: ...


@dataclasses.dataclass
class _Iterate:
    x: list[np.ndarray]
    z: list[np.ndarray]
    y: np.ndarray


class EmbeddedBackend:
    """Dense infeasible-start primal-dual path-following method.

    The LMI problem is the dual of the standard pair

        (P) minimize <C, X> s.t. <A_i, X> = b_i, X >= 0
        (D) maximize b^T y  s.t. sum_i y_i A_i + Z = C, Z >= 0

    with ``A_i = -F_i``, ``C = F_0 - margin I`` and ``b = -c``. Variable bounds become ``1 x 1`` blocks.
    Infeasibility of the LMI is reported when the primal iterate turns into an improving ray, a matrix
    ``X >= 0`` with ``<A_i, X> ~ 0`` and ``<C, X> < 0``.
    """

    name = 'embedded'

    def solve(self, problem: LmiProblem, options: SolverOptions) -> SdpSolution:
        a_blocks, c_blocks = self._standard_form(problem)
        b = -problem.c
        started = time.perf_counter()
        iterate = self._initial_point(a_blocks, c_blocks, b)
        nu = sum(block.shape[0] for block in c_blocks)
        norm_b = float(np.linalg.norm(b))
        norm_c = math.sqrt(sum(float(np.sum(block**2)) for block in c_blocks))
        status, message = SolveStatus.MAX_ITER, f'no convergence within {options.max_iters} iterations'
        certificate = None
        iteration = 0
        for iteration in range(1, options.max_iters + 1):  # noqa: B007
            ax = sum(np.einsum('kij,ij->k', a, x) for a, x in zip(a_blocks, iterate.x, strict=True))
            rp = b - ax
            rd = [
                c - z - np.einsum('k,kij->ij', iterate.y, a)
                for a, c, z in zip(a_blocks, c_blocks, iterate.z, strict=True)
            ]
            gap = sum(float(np.sum(x * z)) for x, z in zip(iterate.x, iterate.z, strict=True))
            pobj = sum(float(np.sum(c * x)) for c, x in zip(c_blocks, iterate.x, strict=True))
            dobj = float(b @ iterate.y)
            pinf = float(np.linalg.norm(rp)) / (1.0 + norm_b)
            dinf = math.sqrt(sum(float(np.sum(r**2)) for r in rd)) / (1.0 + norm_c)
            rel_gap = max(gap, abs(pobj - dobj)) / (1.0 + abs(pobj) + abs(dobj))
            logger.debug(
                'iteration %d: pobj %.8e dobj %.8e gap %.2e pinf %.2e dinf %.2e', iteration, pobj, dobj, gap, pinf, dinf
            )
            if pinf <= options.feas_tol and dinf <= options.feas_tol and rel_gap <= options.gap_tol:
                status, message = SolveStatus.OPTIMAL, 'converged'
                break
            if pobj < 0.0 and float(np.linalg.norm(ax)) <= options.infeas_tol * -pobj:
                status, message = SolveStatus.INFEASIBLE, 'primal improving ray found'
                certificate = tuple(x / -pobj for x in iterate.x)
                break
            try:
                iterate = self._step(iterate, a_blocks, rp, rd, gap / nu, options)
            except (np.linalg.LinAlgError, ValueError) as e:
                status, message = SolveStatus.NUMERICAL_FAILURE, f'Newton step failed: {e}'
                break
            if iterate is None:
                status, message = SolveStatus.NUMERICAL_FAILURE, 'step length collapsed'
                break
        y = np.zeros(problem.dimension) if iterate is None else iterate.y[: problem.dimension]
        logger.debug(
            'Embedded SDP solver finished with status %s after %d iterations in %.3fs.',
            status.value,
            iteration,
            time.perf_counter() - started,
        )
        return SdpSolution(
            y=y,
            status=status,
            objective=problem.objective(y),
            residual=problem.residual(y),
            iterations=iteration,
            certificate=certificate,
            message=message,
        )

    @staticmethod
    def _standard_form(problem: LmiProblem) -> tuple[list[np.ndarray], list[np.ndarray]]:
        a_blocks = []
        c_blocks = []
        for block in problem.blocks:
            a_blocks.append(-block.coefficients)
            c_blocks.append(block.f0 - problem.block_margin(block) * np.eye(block.size))
        lower = problem.lower_bounds
        for index in np.flatnonzero(np.isfinite(lower)):
            coefficient = np.zeros((problem.dimension, 1, 1))
            coefficient[index, 0, 0] = 1.0
            a_blocks.append(-coefficient)
            c_blocks.append(np.array([[-lower[index]]]))
        return a_blocks, c_blocks

    @staticmethod
    def _initial_point(a_blocks: list[np.ndarray], c_blocks: list[np.ndarray], b: np.ndarray) -> _Iterate:
        norm_a = np.sqrt(sum(np.einsum('kij,kij->k', a, a) for a in a_blocks))
        xs = []
        zs = []
        for a, c in zip(a_blocks, c_blocks, strict=True):
            size = c.shape[0]
            xi = max(10.0, math.sqrt(size), size * float(np.max((1.0 + np.abs(b)) / (1.0 + norm_a), initial=0.0)))
            eta = max(
                10.0,
                math.sqrt(size),
                float(np.max(np.sqrt(np.einsum('kij,kij->k', a, a)), initial=0.0)),
                float(np.linalg.norm(c)),
            )
            xs.append(xi * np.eye(size))
            zs.append(eta * np.eye(size))
        return _Iterate(x=xs, z=zs, y=np.zeros(b.size))

    def _step(
        self,
        iterate: _Iterate,
        a_blocks: list[np.ndarray],
        rp: np.ndarray,
        rd: list[np.ndarray],
        mu: float,
        options: SolverOptions,
    ) -> _Iterate | None:
        scalings = [_nt_scaling(x, z) for x, z in zip(iterate.x, iterate.z, strict=True)]
        a_hat = [np.einsum('ji,kjl,lm->kim', r, a, r) for (r, _, _), a in zip(scalings, a_blocks, strict=True)]
        rd_hat = [r.T @ res @ r for (r, _, _), res in zip(scalings, rd, strict=True)]
        dimension = rp.size
        schur = np.zeros((dimension, dimension))
        for a in a_hat:
            flat = a.reshape(dimension, -1)
            schur += flat @ flat.T
        try:
            factor = scipy.linalg.cho_factor(schur)

            def solve_schur(rhs: np.ndarray) -> np.ndarray:
                return scipy.linalg.cho_solve(factor, rhs)
        except np.linalg.LinAlgError:

            def solve_schur(rhs: np.ndarray) -> np.ndarray:
                return scipy.linalg.lstsq(schur, rhs)[0]

        lambdas = [lam for _, _, lam in scalings]

        def direction(targets: list[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
            e_hat = [2.0 * t / (lam[:, None] + lam[None, :]) for t, lam in zip(targets, lambdas, strict=True)]
            rhs = rp - sum(np.einsum('kij,ij->k', a, e - r) for a, e, r in zip(a_hat, e_hat, rd_hat, strict=True))
            dy = solve_schur(rhs)
            dz_hat = [r - np.einsum('k,kij->ij', dy, a) for r, a in zip(rd_hat, a_hat, strict=True)]
            dx_hat = [e - dz for e, dz in zip(e_hat, dz_hat, strict=True)]
            return dy, dx_hat, dz_hat

        affine_targets = [-np.diag(lam**2) for lam in lambdas]
        dy_a, dx_a, dz_a = direction(affine_targets)
        alpha_p = min(1.0, _max_step(lambdas, dx_a))
        alpha_d = min(1.0, _max_step(lambdas, dz_a))
        nu = sum(lam.size for lam in lambdas)
        mu_affine = (
            sum(
                float(np.sum((np.diag(lam) + alpha_p * dx) * (np.diag(lam) + alpha_d * dz)))
                for lam, dx, dz in zip(lambdas, dx_a, dz_a, strict=True)
            )
            / nu
        )
        sigma = min(1.0, max(0.0, mu_affine / mu)) ** 3 if mu > 0.0 else 0.0
        corrector_targets = [
            sigma * mu * np.eye(lam.size) - np.diag(lam**2) - (dx @ dz + dz @ dx) / 2.0
            for lam, dx, dz in zip(lambdas, dx_a, dz_a, strict=True)
        ]
        dy, dx_hat, dz_hat = direction(corrector_targets)
        alpha_p = min(1.0, options.step_fraction * _max_step(lambdas, dx_hat))
        alpha_d = min(1.0, options.step_fraction * _max_step(lambdas, dz_hat))
        if max(alpha_p, alpha_d) < 1e-12:  # noqa: PLR2004
            return None
        xs = []
        zs = []
        for (r, r_inv, _), x, z, dx, dz in zip(scalings, iterate.x, iterate.z, dx_hat, dz_hat, strict=True):
            xs.append(_common.symmetrize(x + alpha_p * (r @ dx @ r.T)))
            zs.append(_common.symmetrize(z + alpha_d * (r_inv.T @ dz @ r_inv)))
        if not all(np.all(np.isfinite(m)) for m in (*xs, *zs)):
            raise ValueError('iterate is not finite')
        return _Iterate(x=xs, z=zs, y=iterate.y + alpha_d * dy)


def _nt_scaling(x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nesterov-Todd scaling ``R`` with ``R^T Z R = R^-1 X R^-T = diag(lambda)``.

    :return: ``R``, ``R^-1`` and ``lambda``.
    """
    lx = scipy.linalg.cholesky(x, lower=True)
    lz = scipy.linalg.cholesky(z, lower=True)
    _, lam, vt = scipy.linalg.svd(lz.T @ lx)
    r = lx @ vt.T / np.sqrt(lam)[None, :]
    r_inv = (np.sqrt(lam)[:, None] * vt) @ scipy.linalg.solve_triangular(lx, np.eye(lx.shape[0]), lower=True)
    return r, r_inv, lam


def _max_step(lambdas: list[np.ndarray], directions: list[np.ndarray]) -> float:
    """Largest ``alpha`` keeping ``diag(lambda) + alpha * direction`` positive semi-definite in every block."""
    alpha = float('inf')
    for lam, direction in zip(lambdas, directions, strict=True):
        scale = 1.0 / np.sqrt(lam)
        smallest = float(np.linalg.eigvalsh(scale[:, None] * direction * scale[None, :])[0])
        if smallest < 0.0:
            alpha = min(alpha, -1.0 / smallest)
    return alpha


class CvxpyBackend:
    """Backend delegating to cvxpy and its default SDP solver."""

    name = 'cvxpy'

    def __init__(self):
        try:
            import cvxpy  # noqa: PLC0415
        except ImportError as import_error:
            raise ImportError(
                "cvxpy backend not installed. Please install using 'pip install pyrobustddp[cvxpy]'."
            ) from import_error
        self._cp = cvxpy

    def solve(self, problem: LmiProblem, options: SolverOptions) -> SdpSolution:
        cp = self._cp
        y = cp.Variable(problem.dimension)
        constraints = []
        for block in problem.blocks:
            expr = cp.Constant(block.f0 - problem.block_margin(block) * np.eye(block.size))
            for index in np.flatnonzero(np.abs(block.coefficients).reshape(problem.dimension, -1).max(axis=1)):
                expr = expr + y[index] * block.coefficients[index]
            constraints.append((expr + expr.T) / 2 >> 0)
        lower = problem.lower_bounds
        finite = np.flatnonzero(np.isfinite(lower))
        if finite.size:
            constraints.append(y[finite] >= lower[finite])
        cvx_problem = cp.Problem(cp.Minimize(problem.c @ y), constraints)
        try:
            cvx_problem.solve()
        except cp.error.SolverError as e:
            return SdpSolution(
                y=np.zeros(problem.dimension),
                status=SolveStatus.NUMERICAL_FAILURE,
                objective=float('nan'),
                residual=float('nan'),
                message=str(e),
            )
        if cvx_problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            status = SolveStatus.OPTIMAL
        elif cvx_problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            status = SolveStatus.INFEASIBLE
        else:
            status = SolveStatus.NUMERICAL_FAILURE
        values = np.zeros(problem.dimension) if y.value is None else np.asarray(y.value, dtype=float)
        return SdpSolution(
            y=values,
            status=status,
            objective=problem.objective(values),
            residual=problem.residual(values),
            message=str(cvx_problem.status),
        )


_BACKENDS: dict[str, typing.Callable[[], SdpBackend]] = {
    EmbeddedBackend.name: EmbeddedBackend,
    CvxpyBackend.name: CvxpyBackend,
}


def get_backend(name: str) -> SdpBackend:
    """Instantiate the backend registered under ``name``."""
    try:
        return _BACKENDS[name]()
    except KeyError as e:
        raise ValueError(f'Unknown SDP backend "{name}". Available backends are {sorted(_BACKENDS)}') from e


def solve(problem: LmiProblem, options: SolverOptions | None = None) -> SdpSolution:
    """Solve an assembled LMI problem.

    Problems without decision variables are decided by an eigenvalue check.

    :param problem: The assembled problem.
    :param options: Solver settings, defaults to :class:`SolverOptions`.
    :return: The solution; inspect ``status`` or call :meth:`SdpSolution.ensure_optimal`.
    """
    options = options or SolverOptions()
    if problem.dimension == 0:
        y = np.zeros(0)
        residual = problem.residual(y)
        status = SolveStatus.OPTIMAL if residual >= 0.0 else SolveStatus.INFEASIBLE
        return SdpSolution(y=y, status=status, objective=problem.objective(y), residual=residual)
    return get_backend(options.backend).solve(problem, options)


def _triplets(matrix: np.ndarray) -> list[list[float]]:
    rows, cols = np.nonzero(np.triu(matrix))
    return [[int(i), int(j), float(matrix[i, j])] for i, j in zip(rows, cols, strict=True)]


def _from_triplets(size: int, triplets: list[list[float]]) -> np.ndarray:
    matrix = np.zeros((size, size))
    for i, j, value in triplets:
        matrix[int(i), int(j)] = matrix[int(j), int(i)] = value
    return matrix


def problem_to_dict(problem: LmiProblem) -> dict[str, typing.Any]:
    """Serialize a problem: variable table, objective and upper-triangle ``(row, col, value)`` triplets."""
    return {
        'schema': SCHEMA_NAME,
        'version': SCHEMA_VERSION,
        'margin': problem.margin,
        'objective': {'c': problem.c.tolist(), 'offset': problem.objective_offset},
        'variables': [
            {
                'name': var.name,
                'shape': list(var.shape),
                'symmetric': var.symmetric,
                'lower': var.lower,
                'offset': offset,
                'size': var.size,
            }
            for var, offset in zip(problem.variables, problem.offsets, strict=True)
        ],
        'blocks': [
            {
                'name': block.name,
                'size': block.size,
                'strict': block.strict,
                'f0': _triplets(block.f0),
                'coefficients': [
                    {'index': int(index), 'entries': _triplets(block.coefficients[index])}
                    for index in range(problem.dimension)
                    if np.any(block.coefficients[index])
                ],
            }
            for block in problem.blocks
        ],
    }


def problem_from_dict(data: typing.Mapping[str, typing.Any]) -> LmiProblem:
    if data.get('schema') != SCHEMA_NAME or data.get('version') != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f'Unsupported LMI document {data.get("schema")} version {data.get("version")}')
    variables = tuple(
        Variable(entry['name'], tuple(entry['shape']), entry['symmetric'], entry['lower'])
        for entry in data['variables']
    )
    dimension = sum(var.size for var in variables)
    blocks = []
    for entry in data['blocks']:
        coefficients = np.zeros((dimension, entry['size'], entry['size']))
        for coefficient in entry['coefficients']:
            coefficients[coefficient['index']] = _from_triplets(entry['size'], coefficient['entries'])
        f0 = _from_triplets(entry['size'], entry['f0'])
        blocks.append(LmiBlock(entry['name'], f0, coefficients, entry['strict']))
    return LmiProblem(
        variables=variables,
        c=np.asarray(data['objective']['c'], dtype=float),
        blocks=tuple(blocks),
        objective_offset=float(data['objective']['offset']),
        margin=float(data['margin']),
    )


def dump_problem(problem: LmiProblem, path: _common.PATH_TYPE) -> None:
    """Write ``problem`` as a JSON document for cross-checking with external solvers."""
    pathlib.Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2), encoding='utf-8')


def load_problem(path: _common.PATH_TYPE) -> LmiProblem:
    return problem_from_dict(json.loads(pathlib.Path(path).read_text(encoding='utf-8')))
