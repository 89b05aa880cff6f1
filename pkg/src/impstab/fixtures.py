"""Reference systems used by the examples, the sample configs and the tests."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .spectrum import DdeSystem

__all__ = [
    "NODE_V",
    "NODE_W",
    "diagonal_ode",
    "planar_delay_system",
    "neutral_scalar_dde",
    "ReassignmentInstance",
    "reassignment_instance",
    "network_system",
    "network_rhs",
]

NODE_V = np.array([[2.0, -0.11], [-5.0, 3.2]])
NODE_W = np.array([[-0.8, -0.05], [-0.09, -1.2]])


def diagonal_ode() -> DdeSystem:
    """``x' = diag(1, -1) x``; the delay is irrelevant since ``A1 = 0``."""
    return DdeSystem(np.diag([1.0, -1.0]), np.zeros((2, 2)), 1.0)


def planar_delay_system() -> DdeSystem:
    return DdeSystem([[-1.0, 1.0], [0.0, 1.0]], [[0.0, 0.0], [1.0, -0.1]], 0.4)


def neutral_scalar_dde() -> DdeSystem:
    """``x' = -(pi/2) x(t - 1)``, whose rightmost eigenvalues are ``+-i pi/2``."""
    return DdeSystem([[0.0]], [[-np.pi / 2]], 1.0)


class ReassignmentInstance(NamedTuple):
    system: DdeSystem
    rates: np.ndarray
    errors: np.ndarray


def reassignment_instance(N: int = 8, seed: int = 0, tau: float = 0.2) -> ReassignmentInstance:
    """Workers with folded-normal rates ``r`` and error rates near ``1e-4``.

    ``x' = R(-x(t) + E x(t - tau))`` with ``R = diag(r)``, ``E = diag(e)``.
    """
    rng = np.random.default_rng(seed)
    rates = np.abs(rng.standard_normal(N))
    errors = 1e-4 + 1e-5 * rng.random(N)
    R = np.diag(rates)
    return ReassignmentInstance(DdeSystem(-R, R @ np.diag(errors), tau), rates, errors)


def network_system(adjacency) -> DdeSystem:
    """Linearization at zero of the two-dimensional node network.

    ``adjacency`` is the coupling matrix ``A`` (the negative of a graph
    Laplacian), giving ``A0 = I (x) (V - I) + A (x) I_2`` and ``A1 = I (x) W``
    with unit delay.
    """
    A = np.asarray(adjacency, dtype=float)
    N = A.shape[0]
    a0 = np.kron(np.eye(N), NODE_V - np.eye(2)) + np.kron(A, np.eye(2))
    a1 = np.kron(np.eye(N), NODE_W)
    return DdeSystem(a0, a1, 1.0)


def network_rhs(adjacency):
    """Right-hand side ``f(t, x, x_delayed)`` of the nonlinear node network."""
    A = np.asarray(adjacency, dtype=float)
    N = A.shape[0]
    coupling = np.kron(A, np.eye(2))

    def f(t, x, xd):
        nodes = np.tanh(x).reshape(N, 2)
        delayed = np.tanh(xd).reshape(N, 2)
        return -x + (nodes @ NODE_V.T + delayed @ NODE_W.T).ravel() + coupling @ x

    return f
