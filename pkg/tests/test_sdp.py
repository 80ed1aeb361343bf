"""tests for module _sdp.py."""

import json
import pathlib
import sys
from unittest import mock

import numpy as np
import pytest

from pyrobustddp._errors import (
    DimensionMismatch,
    Infeasible,
    NonAffineExpression,
    SchemaVersionMismatch,
    UnknownVariable,
)
from pyrobustddp._sdp import (
    CvxpyBackend,
    LmiBlock,
    LmiProblem,
    SolveStatus,
    SolverOptions,
    Variable,
    assemble,
    bmat,
    dump_problem,
    get_backend,
    load_problem,
    psd,
    repeat_diag,
    scaled,
    solve,
    trace,
)


def test_symmetric_variable_basis():
    """Test that symmetric variables pack and unpack through an orthonormal basis."""
    p = Variable('P', (3, 3), symmetric=True)
    assert p.size == 6
    basis = p.basis().reshape(6, -1)
    assert np.allclose(basis @ basis.T, np.eye(6))
    value = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    assert np.allclose(p.unpack(p.pack(value)), value)
    with pytest.raises(DimensionMismatch, match='must be square'):
        Variable('P', (2, 3), symmetric=True)
    with pytest.raises(ValueError, match='Bounds are not supported'):
        Variable('P', (2, 2), symmetric=True, lower=0.0)


def test_affine_expressions():
    """Test that affine expressions evaluate like the matrices they describe."""
    p = Variable('P', (2, 2), symmetric=True)
    k = Variable('K', (1, 2))
    lam = Variable('lam', (2, 1))
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    expr = a.T @ p @ a - p + k.T @ np.ones((1, 2)) + 2.0 * scaled(np.eye(2), np.ones((1, 2)) @ lam)
    values = {'P': np.array([[2.0, 1.0], [1.0, 3.0]]), 'K': np.array([[1.0, -1.0]]), 'lam': np.array([[0.5], [1.0]])}
    expected = a.T @ values['P'] @ a - values['P'] + 2.0 * 1.5 * np.eye(2) + np.array([[1.0, 1.0], [-1.0, -1.0]])
    assert np.allclose(expr.evaluate(values), expected)
    assert np.allclose(trace(p).evaluate(values), [[5.0]])
    assert np.allclose(repeat_diag(lam, [2, 1]).evaluate(values), np.diag([0.5, 0.5, 1.0]))
    block = bmat([[p, None], [None, -k.T @ np.ones((1, 1))]])
    assert block.shape == (4, 3)
    with pytest.raises(NonAffineExpression):
        _ = p @ p.expr()
    with pytest.raises(NonAffineExpression):
        _ = p.expr() * p
    with pytest.raises(UnknownVariable):
        expr.evaluate({'P': values['P']})
    with pytest.raises(DimensionMismatch):
        _ = p + k


def test_assemble_errors():
    """Test that assembling rejects asymmetric, non-square and undeclared constraints."""
    k = Variable('K', (2, 2))
    with pytest.raises(DimensionMismatch, match='not symmetric'):
        assemble([psd(k)])
    with pytest.raises(DimensionMismatch, match='not square'):
        assemble([psd(Variable('k', (1, 2)))])
    y = Variable('y', (1, 1))
    with pytest.raises(UnknownVariable, match='undeclared'):
        assemble([psd(y)], variables=[Variable('z', (1, 1))])
    with pytest.raises(DimensionMismatch, match='scalar expression'):
        assemble([psd(y)], objective=np.eye(2))


def test_solve_analytic():
    """Test that minimizing y subject to [[y, 1], [1, y]] >= 0 returns y = 1."""
    y = Variable('y', (1, 1))
    one = np.ones((1, 1))
    problem = assemble([psd(bmat([[y, one], [one, y]]))], objective=y)
    solution = solve(problem).ensure_optimal()
    assert solution.status is SolveStatus.OPTIMAL
    assert abs(problem.unpack(solution.y)['y'][0, 0] - 1.0) <= 1e-6
    assert solution.objective == pytest.approx(1.0, abs=1e-6)


def test_solve_lower_bounds():
    """Test that element-wise lower bounds are honored."""
    y = Variable('y', (2, 1), lower=0.0)
    problem = assemble([psd(np.eye(1) + np.ones((1, 2)) @ y)], objective=np.ones((1, 2)) @ y)
    solution = solve(problem).ensure_optimal()
    assert np.all(solution.y >= -1e-7)
    assert solution.objective == pytest.approx(0.0, abs=1e-6)
    assert problem.bound_violation(solution.y) <= 1e-7


@pytest.mark.parametrize('seed', range(50))
def test_solve_random_feasible(seed: int):
    """Test that strictly feasible random problems are solved to a feasible optimum."""
    rng = np.random.default_rng(seed)
    dimension, size = 3, 4
    coefficients = rng.standard_normal((dimension, size, size))
    coefficients = (coefficients + np.swapaxes(coefficients, 1, 2)) / 2.0
    y0 = rng.standard_normal(dimension)
    f0 = np.eye(size) - np.einsum('k,kij->ij', y0, coefficients)
    g = rng.standard_normal((size, size))
    z0 = g @ g.T + np.eye(size)
    c = np.einsum('kij,ij->k', coefficients, z0)
    problem = LmiProblem(
        variables=(Variable('y', (dimension, 1)),),
        c=c,
        blocks=(LmiBlock('random', f0, coefficients),),
    )
    solution = solve(problem)
    assert solution.status is SolveStatus.OPTIMAL
    assert solution.residual >= -1e-7
    assert solution.objective <= problem.objective(y0) + 1e-6 * (1.0 + abs(problem.objective(y0)))


def test_solve_infeasible():
    """Test that an infeasible problem is reported with a certificate."""
    y = Variable('y', (1, 1))
    problem = assemble([psd(y - np.ones((1, 1))), psd(-y)])
    solution = solve(problem)
    assert solution.status is SolveStatus.INFEASIBLE
    assert solution.certificate is not None
    with pytest.raises(Infeasible) as exc_info:
        solution.ensure_optimal()
    assert exc_info.value.certificate is not None


def test_solve_without_variables():
    """Test that problems without variables are decided by their eigenvalues."""
    assert solve(assemble([psd(np.eye(2))])).status is SolveStatus.OPTIMAL
    assert solve(assemble([psd(-np.eye(2))])).status is SolveStatus.INFEASIBLE


def test_problem_document(tmp_path: pathlib.Path):
    """Test that a dumped problem loads back with the same data."""
    p = Variable('P', (2, 2), symmetric=True)
    lam = Variable('lam', (1, 1), lower=0.0)
    problem = assemble(
        [psd(p - scaled(np.diag([1.0, 2.0]), lam)), psd(lam, strict=False)],
        objective=trace(p),
        margin=1e-6,
    )
    path = tmp_path.joinpath('problem.json')
    dump_problem(problem, path)
    loaded = load_problem(path)
    assert loaded.margin == problem.margin
    assert [var.name for var in loaded.variables] == ['P', 'lam']
    assert loaded.variables[1].lower == 0.0
    assert np.allclose(loaded.c, problem.c)
    for original, restored in zip(problem.blocks, loaded.blocks, strict=True):
        assert original.strict == restored.strict
        assert np.allclose(original.f0, restored.f0)
        assert np.allclose(original.coefficients, restored.coefficients)
    document = json.loads(path.read_text(encoding='utf-8'))
    document['version'] = 2
    path.write_text(json.dumps(document), encoding='utf-8')
    with pytest.raises(SchemaVersionMismatch, match='version 2'):
        load_problem(path)


def test_backends():
    """Test that unknown backends are rejected and a missing cvxpy is reported with an install hint."""
    assert get_backend('embedded').name == 'embedded'
    with pytest.raises(ValueError, match='Unknown SDP backend'):
        get_backend('mosek')
    with mock.patch.dict(sys.modules, {'cvxpy': None}), pytest.raises(ImportError, match=r'pyrobustddp\[cvxpy\]'):
        CvxpyBackend()
    with mock.patch.dict(sys.modules, {'cvxpy': None}), pytest.raises(ImportError):
        solve(assemble([psd(Variable('y', (1, 1)))]), SolverOptions(backend='cvxpy'))
