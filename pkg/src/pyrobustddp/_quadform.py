"""Partitioned quadratic forms over the basis ``(1, dx, du, dw)``.

The Q-function of a timestep, the multiplier matrix and their sum all live on the same four-block layout: a
constant coordinate, the state deviation, the input deviation and the disturbance deviation. This module holds
that layout together with the matrix transforms the backward pass is built from.

Classes
-------

PartitionedQuad
    Symmetric matrix over ``(1, dx, du, dw)`` with named block accessors.
ValueQuad
    Symmetric matrix over ``(1, dx)`` anchored at a state, the value function approximation of a timestep.
WorstCaseMap
    Affine map from ``(1, dx, du)`` to the maximizing disturbance deviation.
DualizationCheck
    Truth values of a primal and a dual pair of matrix inequalities.

Functions
---------

schur_eliminate(quad, block, expected) -> PartitionedQuad
    Eliminate one block by a Schur complement.
worst_case_delta_w(qbar) -> WorstCaseMap
    Maximize the quadratic over the disturbance deviation.
dualize_equiv(p, w) -> DualizationCheck
    Evaluate both sides of the equivalent dualization.
dualize_oneway(p, w1, w2) -> DualizationCheck
    Evaluate both sides of the one-way dualization with a left inverse.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

from pyrobustddp import _common
from pyrobustddp._errors import (
    DimensionMismatch,
    NotConcaveInW,
    RankDeficientW1,
    SingularP,
    SingularPivot,
    WrongSign,
)

MAX_CONDITION = 1e12
"""Condition number above which a pivot or an outer matrix counts as singular."""

CONCAVITY_TOL = 1e-9
"""The disturbance block must have all eigenvalues at or below ``-CONCAVITY_TOL``."""

BLOCK_NAMES = ('one', 'x', 'u', 'w')


class Block(enum.IntEnum):
    ONE = 0
    X = 1
    U = 2
    W = 3


class Definiteness(enum.Enum):
    POSITIVE = 'positive'
    NEGATIVE = 'negative'


def _freeze(matrix: np.ndarray) -> np.ndarray:
    matrix.flags.writeable = False
    return matrix


@dataclasses.dataclass(frozen=True)
class PartitionedQuad:
    """Symmetric matrix over ``(1, dx, du, dw)``.

    The matrix is symmetrized on construction. ``dims`` is the tuple of block sizes ``(1, n, m, d)``; a block of
    size zero is allowed and is what :func:`schur_eliminate` leaves behind for the eliminated block.
    """

    matrix: np.ndarray
    dims: tuple[int, int, int, int]

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != len(BLOCK_NAMES) or any(d < 0 for d in dims):
            raise DimensionMismatch(f'Block dimensions must be four non-negative integers, got {self.dims}')
        size = sum(dims)
        if matrix.shape != (size, size):
            raise DimensionMismatch(f'Matrix of shape {matrix.shape} does not match block dimensions {dims}')
        object.__setattr__(self, 'matrix', _freeze(_common.symmetrize(matrix)))
        object.__setattr__(self, 'dims', dims)

    @classmethod
    def zeros(cls, n: int, m: int, d: int) -> PartitionedQuad:
        return cls(np.zeros((1 + n + m + d, 1 + n + m + d)), (1, n, m, d))

    @property
    def n(self) -> int:
        return self.dims[Block.X]

    @property
    def m(self) -> int:
        return self.dims[Block.U]

    @property
    def d(self) -> int:
        return self.dims[Block.W]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def index(self, block: int) -> slice:
        """Slice of the rows belonging to ``block``."""
        start = sum(self.dims[:block])
        return slice(start, start + self.dims[block])

    def block(self, row: int, col: int) -> np.ndarray:
        return self.matrix[self.index(row), self.index(col)]

    @property
    def q11(self) -> float:
        return float(self.block(Block.ONE, Block.ONE)[0, 0]) if self.dims[Block.ONE] else 0.0

    @property
    def q12(self) -> np.ndarray:
        return self.block(Block.ONE, Block.X)

    @property
    def q13(self) -> np.ndarray:
        return self.block(Block.ONE, Block.U)

    @property
    def q14(self) -> np.ndarray:
        return self.block(Block.ONE, Block.W)

    @property
    def Q22(self) -> np.ndarray:  # noqa: N802
        return self.block(Block.X, Block.X)

    @property
    def Q23(self) -> np.ndarray:  # noqa: N802
        return self.block(Block.X, Block.U)

    @property
    def Q24(self) -> np.ndarray:  # noqa: N802
        return self.block(Block.X, Block.W)

    @property
    def Q33(self) -> np.ndarray:  # noqa: N802
        return self.block(Block.U, Block.U)

    @property
    def Q34(self) -> np.ndarray:  # noqa: N802
        return self.block(Block.U, Block.W)

    @property
    def Q44(self) -> np.ndarray:  # noqa: N802
        return self.block(Block.W, Block.W)

    def value(self, dx: np.ndarray, du: np.ndarray, dw: np.ndarray) -> float:
        """Evaluate the quadratic form at ``(1, dx, du, dw)``."""
        vector = np.concatenate([np.ones(self.dims[Block.ONE]), np.ravel(dx), np.ravel(du), np.ravel(dw)])
        return float(vector @ self.matrix @ vector)

    def __add__(self, other: PartitionedQuad) -> PartitionedQuad:
        if not isinstance(other, PartitionedQuad):
            return NotImplemented
        if other.dims != self.dims:
            raise DimensionMismatch(f'Cannot add quadratic forms with dimensions {self.dims} and {other.dims}')
        return PartitionedQuad(self.matrix + other.matrix, self.dims)


@dataclasses.dataclass(frozen=True)
class ValueQuad:
    """Value function approximation ``V(x) = (1, x - anchor)^T P (1, x - anchor)``.

    The matrix must be symmetric up to rounding. When ``certified`` is set it must be positive definite.
    """

    matrix: np.ndarray
    anchor: np.ndarray
    certified: bool = False

    def __post_init__(self):
        matrix = np.atleast_2d(np.array(self.matrix, dtype=float))
        anchor = np.array(self.anchor, dtype=float).ravel()
        if matrix.shape != (1 + anchor.size, 1 + anchor.size):
            raise DimensionMismatch(f'Value matrix of shape {matrix.shape} does not fit anchor of size {anchor.size}')
        if not _common.is_symmetric(matrix):
            raise ValueError('A value matrix must be symmetric')
        matrix = _common.symmetrize(matrix)
        if self.certified and not _common.is_positive_definite(matrix):
            raise ValueError('A certified value matrix must be positive definite')
        object.__setattr__(self, 'matrix', _freeze(matrix))
        object.__setattr__(self, 'anchor', _freeze(anchor))

    @classmethod
    def quadratic(cls, weight: np.ndarray, anchor: np.ndarray | None = None) -> ValueQuad:
        """Build ``(x - anchor)^T weight (x - anchor)`` with ``anchor`` defaulting to the origin."""
        weight = np.atleast_2d(np.asarray(weight, dtype=float))
        n = weight.shape[0]
        matrix = np.zeros((1 + n, 1 + n))
        matrix[1:, 1:] = weight
        return cls(matrix, np.zeros(n) if anchor is None else anchor)

    @property
    def n(self) -> int:
        return self.anchor.size

    @property
    def p11(self) -> float:
        return float(self.matrix[0, 0])

    @property
    def p12(self) -> np.ndarray:
        return self.matrix[0, 1:]

    @property
    def P22(self) -> np.ndarray:  # noqa: N802
        return self.matrix[1:, 1:]

    def __call__(self, x: np.ndarray) -> float:
        vector = np.concatenate([[1.0], np.ravel(x) - self.anchor])
        return float(vector @ self.matrix @ vector)

    def reanchor(self, anchor: np.ndarray) -> ValueQuad:
        """Express the same function over deviations from a new anchor state."""
        anchor = np.asarray(anchor, dtype=float).ravel()
        shift = np.eye(1 + self.n)
        shift[1:, 0] = anchor - self.anchor
        return ValueQuad(shift.T @ self.matrix @ shift, anchor)


@dataclasses.dataclass(frozen=True)
class WorstCaseMap:
    """Affine map ``(1, dx, du) -> dw`` given by ``gain``."""

    gain: np.ndarray

    def __call__(self, dx: np.ndarray, du: np.ndarray) -> np.ndarray:
        return self.gain @ np.concatenate([[1.0], np.ravel(dx), np.ravel(du)])


@dataclasses.dataclass(frozen=True)
class DualizationCheck:
    primal: bool
    dual: bool


def schur_eliminate(
    quad: PartitionedQuad,
    block: int,
    expected: Definiteness = Definiteness.POSITIVE,
) -> PartitionedQuad:
    """Eliminate ``block`` from ``quad`` by a Schur complement.

    For the partition ``[[A, B], [B^T, D]]`` with pivot ``D`` the result is ``A - B D^-1 B^T``. The returned form
    keeps the ``(1, n, m, d)`` layout with the eliminated block set to size zero.

    :param quad: The quadratic form.
    :param block: The block to eliminate, see :class:`Block`.
    :param expected: The definiteness the caller expects of the pivot.
    :return: The reduced quadratic form.
    :raises SingularPivot: If the pivot has a condition number above ``MAX_CONDITION``.
    :raises WrongSign: If the pivot does not have the expected definiteness.
    """
    block = Block(block)
    pivot_index = quad.index(block)
    pivot = quad.matrix[pivot_index, pivot_index]
    dims = list(quad.dims)
    dims[block] = 0
    keep = np.r_[0 : pivot_index.start, pivot_index.stop : quad.size].astype(int)
    if pivot.size == 0:
        return PartitionedQuad(quad.matrix[np.ix_(keep, keep)], tuple(dims))
    if np.linalg.cond(pivot) > MAX_CONDITION:
        raise SingularPivot(f'Pivot block {BLOCK_NAMES[block]} is singular')
    eigenvalues = np.linalg.eigvalsh(pivot)
    if expected is Definiteness.POSITIVE and eigenvalues[0] <= 0.0:
        raise WrongSign(f'Pivot block {BLOCK_NAMES[block]} is not positive definite, min eigenvalue {eigenvalues[0]}')
    if expected is Definiteness.NEGATIVE and eigenvalues[-1] >= 0.0:
        raise WrongSign(f'Pivot block {BLOCK_NAMES[block]} is not negative definite, max eigenvalue {eigenvalues[-1]}')
    coupling = quad.matrix[np.ix_(keep, np.arange(pivot_index.start, pivot_index.stop))]
    reduced = quad.matrix[np.ix_(keep, keep)] - coupling @ np.linalg.solve(pivot, coupling.T)
    return PartitionedQuad(reduced, tuple(dims))


def worst_case_delta_w(qbar: PartitionedQuad) -> WorstCaseMap:
    """Return the maximizer ``dw = -Q44^-1 [q41 Q42 Q43] (1, dx, du)``.

    :raises NotConcaveInW: If ``Q44`` has an eigenvalue above ``-CONCAVITY_TOL``.
    """
    q44 = qbar.Q44
    if q44.size and np.linalg.eigvalsh(q44)[-1] > -CONCAVITY_TOL:
        raise NotConcaveInW('The disturbance block is not negative definite, the maximization over dw is unbounded')
    w_index = qbar.index(Block.W)
    coupling = qbar.matrix[w_index, : w_index.start]
    if not q44.size:
        return WorstCaseMap(np.zeros((0, w_index.start)))
    return WorstCaseMap(-np.linalg.solve(q44, coupling))


def _check_outer(p: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[0] != p.shape[1]:
        raise DimensionMismatch(f'Outer matrix must be square, got shape {p.shape}')
    if not np.allclose(p, p.T, atol=1e-12):
        raise DimensionMismatch('Outer matrix must be symmetric')
    if np.linalg.cond(p) > MAX_CONDITION:
        raise SingularP('Outer matrix is singular')
    return _common.symmetrize(p)


def _dual_pair(p_inv: np.ndarray, w: np.ndarray) -> bool:
    rows, cols = w.shape
    first = np.vstack([w.T, -np.eye(rows)])
    second = np.vstack([np.eye(cols), np.zeros((rows, cols))])
    return _common.is_positive_definite(first.T @ p_inv @ first) and _common.is_negative_definite(
        second.T @ p_inv @ second,
    )


def dualize_equiv(p: np.ndarray, w: np.ndarray) -> DualizationCheck:
    """Evaluate the equivalent primal and dual pairs of matrix inequalities.

    With ``W`` of shape ``(l, k)`` and ``P`` of size ``k + l`` the primal pair is
    ``[I; W]^T P [I; W] < 0`` and ``[0; I]^T P [0; I] > 0``, the dual pair is
    ``[W^T; -I]^T P^-1 [W^T; -I] > 0`` and ``[I; 0]^T P^-1 [I; 0] < 0``.

    :raises SingularP: If ``P`` is singular.
    """
    p = _check_outer(p)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    rows, cols = w.shape
    if p.shape[0] != rows + cols:
        raise DimensionMismatch(f'Outer matrix of size {p.shape[0]} does not fit W of shape {w.shape}')
    first = np.vstack([np.eye(cols), w])
    second = np.vstack([np.zeros((cols, rows)), np.eye(rows)])
    primal = _common.is_negative_definite(first.T @ p @ first) and _common.is_positive_definite(
        second.T @ p @ second,
    )
    return DualizationCheck(primal=primal, dual=_dual_pair(np.linalg.inv(p), w))


def dualize_oneway(p: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> DualizationCheck:
    """Evaluate the one-way dualization with a left inverse of ``W1``.

    The dual pair uses ``W = W2 W1^+`` with ``W1^+ = (W1^T W1)^-1 W1^T``; when it holds, the primal pair
    ``[W1; W2]^T P [W1; W2] < 0`` and ``[0; I]^T P [0; I] > 0`` holds as well. The converse is not guaranteed.

    :raises RankDeficientW1: If ``W1`` does not have full column rank.
    :raises SingularP: If ``P`` is singular.
    """
    p = _check_outer(p)
    w1 = np.atleast_2d(np.asarray(w1, dtype=float))
    w2 = np.atleast_2d(np.asarray(w2, dtype=float))
    if w1.shape[1] != w2.shape[1] or p.shape[0] != w1.shape[0] + w2.shape[0]:
        raise DimensionMismatch(f'Shapes W1 {w1.shape}, W2 {w2.shape} do not fit outer matrix {p.shape}')
    singular_values = np.linalg.svd(w1, compute_uv=False)
    if w1.shape[0] < w1.shape[1] or singular_values.min(initial=np.inf) <= CONCAVITY_TOL:
        raise RankDeficientW1(f'W1 of shape {w1.shape} does not have full column rank')
    left_inverse = np.linalg.solve(w1.T @ w1, w1.T)
    stacked = np.vstack([w1, w2])
    second = np.vstack([np.zeros((w1.shape[0], w2.shape[0])), np.eye(w2.shape[0])])
    primal = _common.is_negative_definite(stacked.T @ p @ stacked) and _common.is_positive_definite(
        second.T @ p @ second,
    )
    return DualizationCheck(primal=primal, dual=_dual_pair(np.linalg.inv(p), w2 @ left_inverse))
