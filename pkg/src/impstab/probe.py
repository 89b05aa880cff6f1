"""Monodromy matrix of the reduced impulsive dynamics, split as ``M(B) = M0(B) + Z``.

``Z = exp(Lambda / h)`` is the flow over one impulse period and
``M0(B) = Gamma Psi(0) B Phi(0) Z`` is linear in the controller ``B``.  Both
are tabulated against a fixed basis of control matrices so that the
optimizer only ever works with coordinate vectors.

Vectorization is column-major throughout (``order="F"``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidBasisError

if TYPE_CHECKING:  # pragma: no cover
    from .spectrum import SpectralData

__all__ = [
    "ControlSpace",
    "ProbeData",
    "block_matrix_exponential",
    "probe_map",
    "monodromy_at",
    "spectral_radius",
    "rank_diagnostic",
    "DEFICIENT_RANK_MESSAGE",
]

RANK_RTOL = 1e-10
BASIS_RTOL = 1e-10
DEFICIENT_RANK_MESSAGE = (
    "M0 of deficient rank; unconstrained problem might be infeasible "
    "with specified control space."
)


@dataclass(frozen=True)
class ControlSpace:
    """Ordered basis of ``n x n`` control matrices and an optional constraint.

    ``constraint`` maps coordinates ``x`` (length ``k``) to a vector whose
    components must all be ``<= 0`` for ``x`` to be admissible.
    """

    basis: np.ndarray
    constraint: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "explicit"

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.ndim == 2:
            basis = basis[None]
        if basis.ndim != 3 or basis.shape[0] == 0 or basis.shape[1] != basis.shape[2]:
            raise InvalidArgumentError(
                f"basis must be a nonempty stack of square matrices, got shape {basis.shape}"
            )
        if not np.all(np.isfinite(basis)):
            raise InvalidArgumentError("basis matrices must be finite")
        flat = basis.reshape(basis.shape[0], -1)
        sv = np.linalg.svd(flat, compute_uv=False)
        if sv[0] == 0 or np.sum(sv > BASIS_RTOL * sv[0]) < basis.shape[0]:
            raise InvalidBasisError("control basis matrices are linearly dependent")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    def matrix(self, x) -> np.ndarray:
        """The control matrix ``sum_i x_i basis_i``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.k,):
            raise InvalidArgumentError(f"expected {self.k} coordinates, got shape {x.shape}")
        return np.tensordot(x, self.basis, axes=1)

    def constraint_values(self, x) -> np.ndarray:
        if self.constraint is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.constraint(np.asarray(x, dtype=float)), dtype=float))


@dataclass(frozen=True)
class ProbeData:
    m0_blocks: tuple
    z: np.ndarray
    m0_vectorized: np.ndarray
    z_vectorized: np.ndarray
    h: float

    @property
    def d(self) -> int:
        return self.z.shape[0]

    @property
    def k(self) -> int:
        return self.m0_vectorized.shape[1]

    @classmethod
    def from_vectorized(cls, m0_vectorized, z_vectorized, h) -> "ProbeData":
        m0v = np.array(m0_vectorized, dtype=float, ndmin=2)
        zv = np.array(z_vectorized, dtype=float).ravel()
        d = int(round(np.sqrt(zv.size)))
        if d * d != zv.size or m0v.shape[0] != zv.size:
            raise InvalidArgumentError("inconsistent vectorized probe data")
        blocks = tuple(m0v[:, i].reshape(d, d, order="F") for i in range(m0v.shape[1]))
        return cls(blocks, zv.reshape(d, d, order="F"), m0v, zv, float(h))


def _parse_blocks(lam: np.ndarray) -> list[tuple[int, int]]:
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[0]
    if lam.ndim != 2 or lam.shape[1] != d:
        raise InvalidArgumentError("Lambda must be square")
    blocks, i = [], 0
    scale = 1.0 + np.abs(lam).max(initial=0.0)
    tol = 1e-14 * scale
    while i < d:
        if i + 1 < d and (lam[i, i + 1] != 0 or lam[i + 1, i] != 0):
            a = lam[i:i + 2, i:i + 2]
            if abs(a[0, 0] - a[1, 1]) > tol or abs(a[0, 1] + a[1, 0]) > tol or a[0, 1] == 0:
                raise InvalidArgumentError(f"2x2 block at {i} is not of the form [[s, w], [-w, s]]")
            blocks.append((i, 2))
            i += 2
        else:
            blocks.append((i, 1))
            i += 1
    mask = np.zeros_like(lam, dtype=bool)
    for start, size in blocks:
        mask[start:start + size, start:start + size] = True
    if np.any(lam[~mask] != 0):
        raise InvalidArgumentError("Lambda is not block diagonal")
    return blocks


def block_matrix_exponential(lambda_block: np.ndarray, t: float) -> np.ndarray:
    """``exp(t Lambda)`` for a realified block-diagonal ``Lambda``.

    ``[s] -> [exp(s t)]`` and
    ``[[s, w], [-w, s]] -> exp(s t) [[cos wt, sin wt], [-sin wt, cos wt]]``.
    """
    lam = np.asarray(lambda_block, dtype=float)
    out = np.zeros_like(lam)
    for i, size in _parse_blocks(lam):
        s = lam[i, i]
        if size == 1:
            out[i, i] = np.exp(s * t)
        else:
            w = lam[i, i + 1]
            e = np.exp(s * t)
            c, sn = np.cos(w * t), np.sin(w * t)
            out[i:i + 2, i:i + 2] = [[e * c, e * sn], [-e * sn, e * c]]
    return out


def probe_map(spectral: "SpectralData", h: float, space: ControlSpace) -> ProbeData:
    """Tabulate ``Z`` and ``M0(basis_i)`` for every basis element."""
    h = float(h)
    if not h > 0:
        raise InvalidArgumentError(f"impulse frequency h must be positive, got {h}")
    if space.n != spectral.n:
        raise InvalidArgumentError(
            f"control matrices are {space.n}x{space.n} but the system has n={spectral.n}"
        )
    z = block_matrix_exponential(spectral.lambda_block, 1.0 / h)
    left = spectral.gamma @ spectral.psi0  # d x n
    right = spectral.phi0 @ z  # n x d
    d, k = z.shape[0], space.k
    # M0(B_i) = left @ B_i @ right for all i at once
    stacked = np.einsum("an,knm,mb->kab", left, space.basis, right, optimize=True)
    m0_vec = np.empty((d * d, k))
    blocks = []
    for i in range(k):
        block = np.ascontiguousarray(stacked[i])
        blocks.append(block)
        m0_vec[:, i] = block.ravel(order="F")
    return ProbeData(tuple(blocks), z, m0_vec, z.ravel(order="F"), h)


def monodromy_at(probe: ProbeData, x) -> np.ndarray:
    """``M(x) = Z + sum_i x_i M0(basis_i)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (probe.k,):
        raise InvalidArgumentError(f"expected {probe.k} coordinates, got shape {x.shape}")
    d = probe.d
    return probe.z + (probe.m0_vectorized @ x).reshape(d, d, order="F")


def spectral_radius(m) -> float:
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("matrix has non-finite entries")
    if m.shape == (1, 1):
        return abs(float(m[0, 0]))
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def rank_diagnostic(probe: ProbeData) -> tuple[int, bool]:
    """Numerical rank of ``M0`` (as a ``d^2 x k`` matrix) and whether it is below ``d^2``."""
    m = probe.m0_vectorized
    d2 = m.shape[0]
    if m.size == 0:
        return 0, d2 > 0
    sv = np.linalg.svd(m, compute_uv=False)
    rank = 0 if sv[0] == 0 else int(np.sum(sv > RANK_RTOL * sv[0]))
    return rank, rank < d2


def coordinates_for_matrices(space: ControlSpace, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Least-squares coordinates of each matrix in ``mats`` relative to ``space``."""
    flat = space.basis.reshape(space.k, -1).T
    return np.column_stack(
        [np.linalg.lstsq(flat, np.asarray(m, float).ravel(), rcond=None)[0] for m in mats]
    )
