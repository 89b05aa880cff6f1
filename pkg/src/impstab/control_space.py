"""Constructors for the control spaces used in practice.

All constraints are expressed on coordinates ``x`` relative to the basis and
are satisfied when every returned component is ``<= 0``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .probe import ControlSpace

__all__ = [
    "explicit_basis",
    "diagonal_basis",
    "reassignment_basis",
    "box_and_columnsum_constraint",
    "box_constraint",
]


def explicit_basis(mats: Sequence, constraint=None) -> ControlSpace:
    mats = [np.array(m, dtype=float, ndmin=2) for m in mats]
    if not mats:
        raise InvalidArgumentError("at least one basis matrix is required")
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"basis matrices have differing shapes {sorted(shapes)}")
    return ControlSpace(np.stack(mats), constraint=constraint, name="explicit")


def diagonal_basis(n: int, constraint=None) -> ControlSpace:
    """Basis element ``j`` has a single one at ``(j, j)``."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    n = int(n)
    basis = np.zeros((n, n, n))
    idx = np.arange(n)
    basis[idx, idx, idx] = 1.0
    return ControlSpace(basis, constraint=constraint, name="diagonal")


def reassignment_basis(N: int, constraint=None) -> ControlSpace:
    """Work-reassignment matrices ``B(i, j)``: ``-1`` at ``(j, j)``, ``+1`` at ``(i, j)``.

    Coordinates come in ``N`` blocks of ``N - 1``.  Block ``s`` (source
    column ``s``) lists targets ``s+1, ..., N-1`` and then wraps around to
    ``0, ..., s-1`` (zero-based).  Every column of every element sums to zero.
    """
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N}")
    N = int(N)
    basis = np.zeros((N * (N - 1), N, N))
    for src in range(N):
        for j in range(1, N):
            idx = src * (N - 1) + (j - 1)
            basis[idx, src, src] = -1.0
            basis[idx, (src + j) % N, src] = 1.0
    return ControlSpace(basis, constraint=constraint, name="reassignment")


class _BoxColumnSum:
    """``c(x) = [-x; C x - 1]`` with ``C = kron(I_N, ones(1, N - 1))``."""

    def __init__(self, N: int):
        self.N = N

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        outflow = x.reshape(self.N, self.N - 1).sum(axis=1)
        return np.concatenate([-x, outflow - 1.0])

    def __repr__(self):
        return f"box_and_columnsum_constraint({self.N})"


def box_and_columnsum_constraint(N: int) -> _BoxColumnSum:
    """Nonnegative coordinates whose per-source outflow is at most one.

    Matches the coordinate order of :func:`reassignment_basis`.  Any feasible
    ``x`` gives a matrix with diagonal in ``[-1, 0]``, nonnegative
    off-diagonal entries and zero column sums.
    """
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N}")
    return _BoxColumnSum(int(N))


class _Box:
    def __init__(self, lower: float, upper: float):
        self.lower, self.upper = float(lower), float(upper)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.lower - x, x - self.upper])

    def __repr__(self):
        return f"box_constraint({self.lower}, {self.upper})"


def box_constraint(lower: float, upper: float) -> _Box:
    """Every coordinate in ``[lower, upper]``."""
    if not lower <= upper:
        raise InvalidArgumentError(f"empty box [{lower}, {upper}]")
    return _Box(lower, upper)
