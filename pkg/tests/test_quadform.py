"""tests for module _quadform.py."""

import pathlib
import tomllib

import numpy as np
import pytest

from pyrobustddp._errors import (
    DimensionMismatch,
    NotConcaveInW,
    RankDeficientW1,
    SingularP,
    SingularPivot,
    WrongSign,
)
from pyrobustddp._quadform import (
    Block,
    Definiteness,
    PartitionedQuad,
    ValueQuad,
    dualize_equiv,
    dualize_oneway,
    schur_eliminate,
    worst_case_delta_w,
)

FIXTURES = pathlib.Path(__file__).parent.joinpath('fixtures')


def _random_quad(rng: np.random.Generator, n: int = 2, m: int = 1, d: int = 1) -> PartitionedQuad:
    size = 1 + n + m + d
    g = rng.standard_normal((size, size))
    return PartitionedQuad(g @ g.T + 0.5 * np.eye(size), (1, n, m, d))


def _definite(rng: np.random.Generator, size: int, signs: np.ndarray | None = None) -> np.ndarray:
    basis, _ = np.linalg.qr(rng.standard_normal((size, size)))
    eigenvalues = rng.uniform(0.5, 2.0, size) * (np.ones(size) if signs is None else signs)
    return basis @ np.diag(eigenvalues) @ basis.T


def test_partitioned_quad_blocks():
    """Test that the block accessors slice the (1, dx, du, dw) layout."""
    matrix = np.arange(36, dtype=float).reshape(6, 6)
    quad = PartitionedQuad(matrix, (1, 2, 1, 2))
    assert np.allclose(quad.matrix, quad.matrix.T)
    assert quad.q11 == 0.0
    assert quad.Q22.shape == (2, 2)
    assert quad.Q34.shape == (1, 2)
    assert quad.q14.shape == (1, 2)
    assert quad.index(Block.W) == slice(4, 6)
    assert quad.value(np.zeros(2), np.zeros(1), np.zeros(2)) == quad.q11
    with pytest.raises(DimensionMismatch, match='does not match block dimensions'):
        PartitionedQuad(matrix, (1, 2, 1, 1))
    with pytest.raises(DimensionMismatch, match='Cannot add'):
        _ = quad + PartitionedQuad.zeros(1, 1, 1)


def test_value_quad_reanchor():
    """Test that re-anchoring a value function leaves the function unchanged."""
    rng = np.random.default_rng(3)
    g = rng.standard_normal((3, 3))
    value = ValueQuad(g @ g.T, rng.standard_normal(2))
    moved = value.reanchor(np.array([0.5, -1.0]))
    for x in rng.standard_normal((5, 2)):
        assert moved(x) == pytest.approx(value(x), rel=1e-12, abs=1e-12)
    quadratic = ValueQuad.quadratic(np.diag([2.0, 3.0]))
    assert quadratic(np.array([1.0, 1.0])) == pytest.approx(5.0)
    assert quadratic.p11 == 0.0
    with pytest.raises(ValueError, match='must be positive definite'):
        ValueQuad(np.diag([1.0, 0.0]), np.zeros(1), certified=True)
    with pytest.raises(ValueError, match='must be symmetric'):
        ValueQuad.quadratic(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DimensionMismatch):
        ValueQuad(np.ones((2, 3)), np.zeros(1))


def test_schur_eliminate():
    """Test that eliminating a block matches minimizing the quadratic over it."""
    rng = np.random.default_rng(0)
    quad = _random_quad(rng)
    reduced = schur_eliminate(quad, Block.U, Definiteness.POSITIVE)
    assert reduced.dims == (1, 2, 0, 1)
    dx = rng.standard_normal(2)
    dw = rng.standard_normal(1)
    index = quad.index(Block.U)
    coupling = quad.matrix[index, :]
    vector = np.concatenate([[1.0], dx, [0.0], dw])
    du = -np.linalg.solve(quad.Q33, coupling @ vector)
    assert reduced.value(dx, np.zeros(0), dw) == pytest.approx(quad.value(dx, du, dw), rel=1e-10)


def test_schur_eliminate_errors():
    """Test that singular and wrongly signed pivots are rejected."""
    matrix = np.eye(4)
    matrix[2, 2] = 0.0
    with pytest.raises(SingularPivot):
        schur_eliminate(PartitionedQuad(matrix, (1, 1, 1, 1)), Block.U)
    with pytest.raises(WrongSign, match='not negative definite'):
        schur_eliminate(PartitionedQuad(np.eye(4), (1, 1, 1, 1)), Block.W, Definiteness.NEGATIVE)
    empty = schur_eliminate(PartitionedQuad(np.eye(3), (1, 1, 1, 0)), Block.W)
    assert empty.dims == (1, 1, 1, 0)


def test_worst_case_delta_w():
    """Test that the worst-case disturbance is a stationary point and a maximizer."""
    rng = np.random.default_rng(1)
    quad = _random_quad(rng, d=2)
    matrix = quad.matrix.copy()
    index = quad.index(Block.W)
    matrix[index, index] = -_definite(rng, 2)
    quad = PartitionedQuad(matrix, quad.dims)
    worst = worst_case_delta_w(quad)
    dx = rng.standard_normal(2)
    du = rng.standard_normal(1)
    dw = worst(dx, du)
    best = quad.value(dx, du, dw)
    for _ in range(10):
        assert quad.value(dx, du, dw + 0.1 * rng.standard_normal(2)) <= best + 1e-12
    with pytest.raises(NotConcaveInW):
        worst_case_delta_w(PartitionedQuad(np.eye(4), (1, 1, 1, 1)))


@pytest.mark.parametrize('seed', range(200))
def test_dualize_equiv(seed: int):
    """Test that the primal and the dual pair of the equivalent dualization agree."""
    rng = np.random.default_rng(seed)
    k, l = rng.integers(1, 4, size=2)  # noqa: E741
    w = 0.5 * rng.standard_normal((l, k))
    signs_first = np.ones(k) if seed % 2 == 0 else rng.choice([-1.0, 1.0], size=k)
    signs_second = np.ones(l) if seed % 2 == 0 else rng.choice([-1.0, 1.0], size=l)
    coupling = 0.1 * rng.standard_normal((k, l))
    inner = np.block(
        [
            [-_definite(rng, k, signs_first), coupling],
            [coupling.T, _definite(rng, l, signs_second)],
        ],
    )
    embedding = np.block([[np.eye(k), np.zeros((k, l))], [w, np.eye(l)]])
    embedding_inv = np.linalg.inv(embedding)
    p = embedding_inv.T @ inner @ embedding_inv
    check = dualize_equiv(p, w)
    assert check.primal == check.dual
    if seed % 2 == 0:
        assert check.primal


@pytest.mark.parametrize('seed', range(200))
def test_dualize_oneway_implication(seed: int):
    """Test that the dual pair of the one-way dualization implies the primal pair."""
    rng = np.random.default_rng(1000 + seed)
    k = int(rng.integers(1, 3))
    rows = k + int(rng.integers(0, 2))
    l = int(rng.integers(1, 3))  # noqa: E741
    w1 = rng.standard_normal((rows, k))
    w1[:k] += 2.0 * np.eye(k)
    w2 = rng.standard_normal((l, k))
    p = _definite(rng, rows + l, rng.choice([-1.0, 1.0], size=rows + l))
    check = dualize_oneway(p, w1, w2)
    if check.dual:
        assert check.primal


def test_dualize_oneway_counterexample():
    """Test that the persisted instance satisfies the primal pair while the dual pair fails."""
    data = tomllib.loads(FIXTURES.joinpath('oneway_counterexample.toml').read_text(encoding='utf-8'))
    check = dualize_oneway(np.array(data['p']), np.array(data['w1']), np.array(data['w2']))
    assert check.primal
    assert not check.dual


def test_dualize_errors():
    """Test that singular outer matrices and rank deficient projections are rejected."""
    with pytest.raises(SingularP):
        dualize_equiv(np.diag([1.0, 0.0]), np.array([[1.0]]))
    with pytest.raises(RankDeficientW1):
        dualize_oneway(np.diag([-1.0, -1.0, 1.0]), np.zeros((2, 1)), np.array([[1.0]]))
    with pytest.raises(DimensionMismatch):
        dualize_equiv(np.eye(3), np.ones((1, 1)))
