"""Eigendata of the uncontrolled linear DDE ``x' = A0 x(t) + A1 x(t - tau)``.

The infinitesimal generator is discretized on Chebyshev-Lobatto nodes mapped
to ``[-tau, 0]``.  Node ordering convention: index 0 is ``theta = 0`` and the
last node is ``theta = -tau``; in the Kronecker-lifted state vector the first
``n`` entries are the value at ``theta = 0``.

Eigenvalues inside a real-part window are polished by Newton's method on the
characteristic matrix ``Delta(xi) = xi I - A0 - A1 exp(-xi tau)`` and turned
into the real quantities needed by the reduced impulsive dynamics:

    Lambda   block-diagonal real matrix, [s] or [[s, w], [-w, s]] blocks
    Phi(0)   right eigenbasis at theta = 0        (n x d)
    Psi(0)   left (adjoint) eigenbasis at s = 0   (d x n)
    Gamma    inverse of the bilinear pairing <Psi, Phi>
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DefectiveSpectrumError,
    EmptyWindowError,
    ImpstabError,
    InvalidArgumentError,
    NormalizationSingularError,
    RefinementError,
)
from .probe import block_matrix_exponential

__all__ = [
    "DdeSystem",
    "EigenWindow",
    "SpectralData",
    "Spectrum",
    "chebyshev_diff",
    "discretize_generator",
    "compute_spectrum",
    "eigendata",
    "bilinear_form",
    "count_message",
    "rightmost_eigenvalues",
    "SpectrumRow",
    "spectrum_table",
]

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
PAIR_TOL = 1e-6
DEFECT_TOL = 1e-8
QUADRATURE_ORDER = 32
SINGULAR_RCOND = 1e-12
# a seed that Newton moves further than this (relative) is a discretization artifact
SPURIOUS_RTOL = 1e-2


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DdeSystem:
    """Linear DDE data ``(A0, A1, tau)``."""

    a0: np.ndarray
    a1: np.ndarray
    tau: float

    def __post_init__(self):
        a0 = np.array(self.a0, dtype=float, ndmin=2)
        a1 = np.array(self.a1, dtype=float, ndmin=2)
        if a0.ndim != 2 or a0.shape[0] != a0.shape[1]:
            raise InvalidArgumentError(f"a0 must be square, got shape {a0.shape}")
        if a1.shape != a0.shape:
            raise InvalidArgumentError(
                f"a1 shape {a1.shape} does not match a0 shape {a0.shape}"
            )
        if not (np.all(np.isfinite(a0)) and np.all(np.isfinite(a1))):
            raise InvalidArgumentError("a0 and a1 must have finite entries")
        tau = float(self.tau)
        if not (math.isfinite(tau) and tau > 0):
            raise InvalidArgumentError(f"tau must be positive and finite, got {self.tau}")
        object.__setattr__(self, "a0", _frozen(a0))
        object.__setattr__(self, "a1", _frozen(a1))
        object.__setattr__(self, "tau", tau)

    @property
    def n(self) -> int:
        return self.a0.shape[0]

    def characteristic_matrix(self, xi: complex) -> np.ndarray:
        """``Delta(xi) = xi I - A0 - A1 exp(-xi tau)``."""
        eye = np.eye(self.n)
        return xi * eye - self.a0 - self.a1 * np.exp(-xi * self.tau)

    def characteristic_derivative(self, xi: complex) -> np.ndarray:
        return np.eye(self.n) + self.tau * self.a1 * np.exp(-xi * self.tau)


@dataclass(frozen=True)
class EigenWindow:
    """Closed real-part window ``[lower, upper]``; infinities allowed."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        lower = -math.inf if self.lower is None else float(self.lower)
        upper = math.inf if self.upper is None else float(self.upper)
        if math.isnan(lower) or math.isnan(upper) or not lower < upper:
            raise InvalidArgumentError(f"window needs lower < upper, got [{lower}, {upper}]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, z: complex) -> bool:
        return self.lower <= z.real <= self.upper


@dataclass(frozen=True)
class SpectralData:
    lambda_block: np.ndarray
    phi0: np.ndarray
    psi0: np.ndarray
    gamma: np.ndarray
    eigs_all: tuple
    retained: tuple
    block_sizes: tuple = field(default=())

    @property
    def d(self) -> int:
        return self.lambda_block.shape[0]

    @property
    def n(self) -> int:
        return self.phi0.shape[0]


class Spectrum(NamedTuple):
    eigs_all: tuple
    retained: tuple
    message: str
    spurious: tuple = ()


# --------------------------------------------------------------------------
# Discretization
# --------------------------------------------------------------------------

def chebyshev_diff(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto nodes and differentiation matrix on ``[-1, 1]``.

    Parameters
    ----------
    N : int
        Polynomial degree; there are ``N + 1`` nodes ``cos(j pi / N)``,
        ordered from ``+1`` down to ``-1``.

    Returns
    -------
    x : (N+1,) ndarray
    D : (N+1, N+1) ndarray
        Exact on polynomials of degree at most ``N``.
    """
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"N must be an integer >= 1, got {N}")
    N = int(N)
    j = np.arange(N + 1)
    x = np.cos(np.pi * j / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(N + 1))
    # negative-sum trick for the diagonal keeps D @ ones == 0 to rounding
    D -= np.diag(D.sum(axis=1))
    return x, D


def discretize_generator(sys: DdeSystem, N: int) -> np.ndarray:
    """Pseudospectral matrix of the infinitesimal generator, size ``n(N+1)``."""
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N}")
    n = sys.n
    _, D = chebyshev_diff(int(N))
    G = np.kron((2.0 / sys.tau) * D, np.eye(n))
    G[:n, :] = 0.0
    G[:n, :n] = sys.a0
    G[:n, -n:] += sys.a1
    return G


# --------------------------------------------------------------------------
# Eigenvalues
# --------------------------------------------------------------------------

def _sort_ascending(eigs: np.ndarray) -> np.ndarray:
    return eigs[np.lexsort((eigs.imag, eigs.real))]


def _newton_refine(sys: DdeSystem, lam0: complex, v0: np.ndarray, real: bool):
    """Newton on ``Delta(lam) v = 0, c^T v = 1`` with ``c`` fixed by the seed."""
    dtype = float if real else complex
    n = sys.n
    v = np.asarray(v0, dtype=dtype)
    v = v / np.linalg.norm(v)
    c = np.conj(v)
    lam = dtype(lam0.real if real else lam0)
    scale = 1.0 + np.linalg.norm(sys.a0, 1) + np.linalg.norm(sys.a1, 1)
    J = np.zeros((n + 1, n + 1), dtype=dtype)
    F = np.zeros(n + 1, dtype=dtype)
    for it in range(1, NEWTON_MAXITER + 1):
        delta = sys.characteristic_matrix(lam)
        F[:n] = delta @ v
        F[n] = c @ v - 1.0
        res = np.linalg.norm(F)
        if res <= NEWTON_TOL * (scale + abs(lam)):
            return lam, v
        J[:n, :n] = delta
        J[:n, n] = sys.characteristic_derivative(lam) @ v
        J[n, :n] = c
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        v = v + step[:n]
        lam = lam + step[n]
        if not np.isfinite(lam):
            break
        if np.linalg.norm(step) <= NEWTON_TOL * (1.0 + abs(lam) + np.linalg.norm(v)):
            return lam, v
    raise RefinementError(complex(lam0), NEWTON_MAXITER)


def _normalize_right(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    mags = np.abs(v)
    k = int(np.argmax(mags > 1e-10 * mags.max()))
    return v * (np.conj(v[k]) / mags[k])


def _left_null_vector(sys: DdeSystem, lam, v: np.ndarray) -> np.ndarray:
    """Row ``u`` with ``u Delta(lam) = 0`` scaled so ``u v = 1``."""
    U, _, _ = np.linalg.svd(sys.characteristic_matrix(lam))
    u = np.conj(U[:, -1])
    if np.isrealobj(v):
        u = u.real
    s = u @ v
    if abs(s) < 1e-10:
        # u v can vanish for delay-dominated modes; fall back to the pairing
        s = u @ sys.characteristic_derivative(lam) @ v
    return u / s


def _refine_seed(sys: DdeSystem, lam0: complex, vec0: np.ndarray, real: bool):
    """Refined ``(lam, v)`` or ``None`` when the seed is a discretization artifact."""
    if not np.linalg.norm(vec0) > 0:
        # an eigenfunction vanishing at theta = 0 cannot solve Delta(lam) v = 0
        return None
    if real:
        k = int(np.argmax(np.abs(vec0)))
        vec0 = (vec0 * np.conj(vec0[k]) / abs(vec0[k])).real
        lam, v = _newton_refine(sys, complex(lam0.real), vec0, real=True)
        lam = float(lam)
    else:
        lam, v = _newton_refine(sys, complex(lam0), vec0, real=False)
        lam = complex(lam)
        if (lam.imag < 0) != (lam0.imag < 0):
            return None
    if abs(lam - lam0) > SPURIOUS_RTOL * (1.0 + abs(lam0)):
        return None
    return lam, v


def _discretized(sys: DdeSystem, N: int):
    ev, vecs = np.linalg.eig(discretize_generator(sys, N))
    order = np.lexsort((ev.imag, ev.real))
    return ev[order], vecs[: sys.n, order]


def _window_pairs(sys: DdeSystem, N: int, window: EigenWindow):
    """Refined ``(lam, v)`` for the window; pairs are represented by Im > 0."""
    ev, vecs = _discretized(sys, N)

    chosen: list[int] = []
    is_real: dict[int, bool] = {}
    for i in np.flatnonzero((ev.real >= window.lower) & (ev.real <= window.upper)):
        lam = ev[i]
        tol = PAIR_TOL * (1.0 + abs(lam))
        if abs(lam.imag) <= tol:
            rep, real = int(i), True
        else:
            dist = np.abs(ev - np.conj(lam))
            dist[i] = np.inf
            j = int(np.argmin(dist))
            if dist[j] > tol:
                raise ImpstabError(f"no conjugate partner found for eigenvalue {lam:.6g}")
            rep, real = (int(i), False) if lam.imag > 0 else (j, False)
        if rep not in is_real:
            chosen.append(rep)
            is_real[rep] = real

    refined, spurious = [], []
    for i in chosen:
        got = _refine_seed(sys, complex(ev[i]), vecs[:, i], is_real[i])
        if got is None:
            spurious.append(complex(ev[i]))
            continue
        lam, v = got
        refined.append((lam, _normalize_right(v)))

    refined.sort(key=lambda p: (-p[0].real, -abs(complex(p[0]).imag)))
    flat = []
    for lam, _ in refined:
        flat.append(complex(lam))
        if isinstance(lam, complex):
            flat.append(lam.conjugate())
    for a in range(len(flat)):
        for b in range(a + 1, len(flat)):
            if abs(flat[a] - flat[b]) < DEFECT_TOL:
                raise DefectiveSpectrumError(
                    f"retained eigenvalues {flat[a]:.10g} and {flat[b]:.10g} coincide "
                    f"to within {DEFECT_TOL:g}; repeated eigenvalues are not supported"
                )
    return tuple(complex(z) for z in ev), refined, tuple(flat), tuple(spurious)


def rightmost_eigenvalues(sys: DdeSystem, N: int, count: int) -> tuple:
    """The ``count`` refined eigenvalues with largest real part.

    Discretized eigenvalues that Newton's method carries far away are
    artifacts of the discretization and are skipped.  Conjugates count
    separately.
    """
    ev, vecs = _discretized(sys, N)
    found: list[complex] = []
    for i in range(len(ev) - 1, -1, -1):
        lam0 = complex(ev[i])
        if len(found) >= count:
            cutoff = sorted(z.real for z in found)[-count]
            if lam0.real < cutoff - SPURIOUS_RTOL * (1.0 + abs(lam0)):
                break
        real = abs(lam0.imag) <= PAIR_TOL * (1.0 + abs(lam0))
        try:
            got = _refine_seed(sys, lam0, vecs[:, i], real)
        except RefinementError:
            continue
        if got is None:
            continue
        lam = complex(got[0])
        if all(abs(lam - z) >= DEFECT_TOL for z in found):
            found.append(lam)
    found.sort(key=lambda z: (-z.real, -z.imag))
    return tuple(found[:count])


class SpectrumRow(NamedTuple):
    raw: complex
    refined: Optional[complex]  # None when the seed is a discretization artifact
    in_window: bool


def spectrum_table(sys: DdeSystem, N: int, window: EigenWindow | None = None) -> tuple:
    """Discretized eigenvalues by descending real part, each with its refined value."""
    ev, vecs = _discretized(sys, N)
    rows = []
    for i in range(len(ev) - 1, -1, -1):
        lam0 = complex(ev[i])
        real = abs(lam0.imag) <= PAIR_TOL * (1.0 + abs(lam0))
        try:
            got = _refine_seed(sys, lam0, vecs[:, i], real)
        except RefinementError:
            got = None
        refined = None if got is None else complex(got[0])
        inside = window is not None and refined is not None and window.contains(lam0)
        rows.append(SpectrumRow(lam0, refined, inside))
    return tuple(rows)


def _fmt_lower(x: float) -> str:
    # a zero lower bound prints as "-0.000000", matching the reference console output
    return "-0.000000" if x == 0 else f"{x:f}"


def count_message(k: int, window: EigenWindow) -> str:
    if math.isinf(window.upper):
        where = f"with real part at least {_fmt_lower(window.lower)}"
    else:
        where = f"with real part in the interval [{_fmt_lower(window.lower)},{window.upper:f}]"
    return f"Found {k} eigenvalues {where} for the input DDE, counting multiplicity."


def compute_spectrum(sys: DdeSystem, N: int, window: EigenWindow | None = None) -> Spectrum:
    """Sorted discretized spectrum plus the refined eigenvalues in ``window``.

    With ``window=None`` only ``eigs_all`` is computed (cheap exploratory
    pass); ``retained`` is then empty.
    """
    if window is None:
        ev = np.linalg.eigvals(discretize_generator(sys, N))
        eigs_all = tuple(complex(z) for z in _sort_ascending(ev))
        return Spectrum(eigs_all, (), f"Computed {len(eigs_all)} eigenvalues; no window given.")
    eigs_all, _, retained, spurious = _window_pairs(sys, N, window)
    return Spectrum(eigs_all, retained, count_message(len(retained), window), spurious)


# --------------------------------------------------------------------------
# Real eigendata
# --------------------------------------------------------------------------

def bilinear_form(
    sys: DdeSystem,
    lambda_block: np.ndarray,
    phi0: np.ndarray,
    psi0: np.ndarray,
    order: int = QUADRATURE_ORDER,
) -> np.ndarray:
    """Pairing ``<Psi, Phi>`` of the adjoint and right eigenbases.

    ``Psi(0) Phi(0) + int_0^tau Psi(s) A1 Phi(s - tau) ds`` with
    ``Phi(theta) = Phi(0) exp(Lambda theta)`` and
    ``Psi(s) = exp(-Lambda s) Psi(0)``, integrated by Gauss-Legendre
    quadrature of fixed ``order``.
    """
    tau = sys.tau
    nodes, weights = np.polynomial.legendre.leggauss(order)
    s = 0.5 * tau * (nodes + 1.0)
    w = 0.5 * tau * weights
    core = psi0 @ sys.a1 @ phi0
    integral = np.zeros((psi0.shape[0], phi0.shape[1]))
    if np.any(core):
        for sj, wj in zip(s, w):
            integral += wj * (
                block_matrix_exponential(lambda_block, -sj)
                @ core
                @ block_matrix_exponential(lambda_block, sj - tau)
            )
    return psi0 @ phi0 + integral


def eigendata(sys: DdeSystem, N: int, window: EigenWindow) -> SpectralData:
    """Realified ``Lambda, Phi(0), Psi(0), Gamma`` for the eigenvalues in ``window``.

    A conjugate pair ``s +- i w`` (``w > 0``) with right vector ``v`` and
    left vector ``u`` contributes columns ``(Re v, Im v)``, rows
    ``(Re u, -Im u)`` and the block ``[[s, w], [-w, s]]``.  The sign on the
    second row makes ``Psi(s) = exp(-Lambda s) Psi(0)`` an exact adjoint
    solution.
    """
    eigs_all, refined, retained, _ = _window_pairs(sys, N, window)
    if not refined:
        raise EmptyWindowError(
            f"no eigenvalues with real part in [{window.lower}, {window.upper}]"
        )
    cols, rows, sizes = [], [], []
    d = sum(1 if isinstance(lam, float) else 2 for lam, _ in refined)
    lam_block = np.zeros((d, d))
    pos = 0
    for lam, v in refined:
        u = _left_null_vector(sys, lam, v)
        if isinstance(lam, float):
            lam_block[pos, pos] = lam
            cols.append(v)
            rows.append(u)
            sizes.append(1)
            pos += 1
        else:
            sig, om = lam.real, lam.imag
            lam_block[pos:pos + 2, pos:pos + 2] = [[sig, om], [-om, sig]]
            cols.extend([v.real, v.imag])
            rows.extend([u.real, -u.imag])
            sizes.append(2)
            pos += 2
    phi0 = np.column_stack(cols)
    psi0 = np.vstack(rows)
    pairing = bilinear_form(sys, lam_block, phi0, psi0)
    if not np.all(np.isfinite(pairing)) or 1.0 / np.linalg.cond(pairing) < SINGULAR_RCOND:
        raise NormalizationSingularError("bilinear pairing <Psi, Phi> is singular to tolerance")
    gamma = np.linalg.inv(pairing)
    return SpectralData(
        lambda_block=_frozen(lam_block),
        phi0=_frozen(phi0),
        psi0=_frozen(psi0),
        gamma=_frozen(gamma),
        eigs_all=eigs_all,
        retained=retained,
        block_sizes=tuple(sizes),
    )

