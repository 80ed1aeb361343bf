import json
import locale
import os
import pathlib
import sys
import tomllib
import typing

import numpy as np

PATH_TYPE = typing.Union[str, os.PathLike[str]]  # noqa: UP007

ENCODING = 'utf-8' if sys.flags.utf8_mode else locale.getencoding()

DEFINITENESS_TOL = 1e-9
"""Relative threshold for strict definiteness: ``> 0`` means ``min eig >= tol * (1 + ||A||_2)``."""

JACOBIAN_STEP = 1e-6
"""Relative step of central first differences."""

HESSIAN_STEP = 1e-4
"""Relative step of central second differences."""


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Return ``(M + M^T) / 2`` as a float array."""
    matrix = np.asarray(matrix, dtype=float)
    return (matrix + matrix.T) / 2.0


def is_symmetric(matrix: np.ndarray, tol: float = DEFINITENESS_TOL) -> bool:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:  # noqa: PLR2004
        return False
    return bool(np.allclose(matrix, matrix.T, rtol=0.0, atol=tol * (1.0 + np.abs(matrix).max(initial=0.0))))


def spectral_norm(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def definiteness_threshold(matrix: np.ndarray, tol: float = DEFINITENESS_TOL) -> float:
    return tol * (1.0 + spectral_norm(matrix))


def min_eig(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix, ``+inf`` for an empty one."""
    if matrix.size == 0:
        return float('inf')
    return float(np.linalg.eigvalsh(symmetrize(matrix))[0])


def max_eig(matrix: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix, ``-inf`` for an empty one."""
    if matrix.size == 0:
        return float('-inf')
    return float(np.linalg.eigvalsh(symmetrize(matrix))[-1])


def is_positive_definite(matrix: np.ndarray, tol: float = DEFINITENESS_TOL) -> bool:
    return min_eig(matrix) >= definiteness_threshold(matrix, tol)


def is_negative_definite(matrix: np.ndarray, tol: float = DEFINITENESS_TOL) -> bool:
    return max_eig(matrix) <= -definiteness_threshold(matrix, tol)


def _steps(point: np.ndarray, relative_step: float) -> np.ndarray:
    return relative_step * (1.0 + np.abs(point))


def jacobian(
    fun: typing.Callable[[np.ndarray], np.ndarray],
    point: np.ndarray,
    step: float = JACOBIAN_STEP,
) -> np.ndarray:
    """Central-difference Jacobian of a vector function.

    :param fun: Function mapping a 1d array to a 1d array.
    :param point: Expansion point.
    :param step: Relative step, scaled by ``1 + |coordinate|``.
    :return: Matrix of shape ``(len(fun(point)), len(point))``.
    """
    point = np.asarray(point, dtype=float)
    value = np.atleast_1d(np.asarray(fun(point), dtype=float))
    result = np.zeros((value.size, point.size))
    for i, h in enumerate(_steps(point, step)):
        forward = point.copy()
        backward = point.copy()
        forward[i] += h
        backward[i] -= h
        result[:, i] = (np.atleast_1d(fun(forward)) - np.atleast_1d(fun(backward))) / (2.0 * h)
    return result


def hessian(fun: typing.Callable[[np.ndarray], float], point: np.ndarray, step: float = HESSIAN_STEP) -> np.ndarray:
    """Central second-difference Hessian of a scalar function, symmetrized."""
    point = np.asarray(point, dtype=float)
    size = point.size
    steps = _steps(point, step)
    result = np.zeros((size, size))
    for i in range(size):
        for j in range(i, size):
            values = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                shifted = point.copy()
                shifted[i] += si * steps[i]
                shifted[j] += sj * steps[j]
                values.append(float(fun(shifted)))
            entry = (values[0] - values[1] - values[2] + values[3]) / (4.0 * steps[i] * steps[j])
            result[i, j] = entry
            result[j, i] = entry
    return result


def _load_configuration(path: pathlib.Path) -> dict[str, typing.Any]:
    """Load a configuration document.

    TOML is used for files ending in ``.toml``, JSON for everything else.

    :param path: The path to the configuration file.
    :return: A dictionary containing the configuration data.
    """
    text = path.read_text(encoding='utf-8')
    if path.suffix.lower() == '.toml':
        return dict(tomllib.loads(text))
    return dict(json.loads(text))
