"""Fixed-step simulation of impulsive delay differential equations.

Between impulse instants ``t = j / h`` the DDE is integrated by the method
of steps with classical RK4 on a uniform grid of step ``delta = 1 / (h m)``.
Delayed values come from a piecewise cubic Hermite interpolant of the
already computed solution.  Each grid interval keeps its own end values and
slopes, so a jump at a grid point leaves the left and right limits intact.

At an impulse instant the left limit ``x(t-)`` is stored first, then the
jump is applied and ``x(t+)`` is stored at the same time.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import InvalidArgumentError, TrajectoryFormatError
from .spectrum import DdeSystem

__all__ = [
    "SimConfig",
    "JumpRecord",
    "Trajectory",
    "RateFit",
    "grid_resolution",
    "simulate_linear",
    "simulate_nonlinear",
    "convergence_rate",
    "write_csv",
    "read_csv",
]

MAX_DENOMINATOR = 64
COMMENSURATE_TOL = 1e-12

History = Union[None, float, np.ndarray, Callable[[float], np.ndarray]]


@dataclass(frozen=True)
class SimConfig:
    """Impulse frequency, number of impulses, grid resolution and history.

    ``history`` is ``None`` (the constant ones vector), a constant vector, or
    a callable ``theta -> R^n`` defined on ``[-tau, 0]``.
    """

    h: float
    pulse_limit: int
    steps_per_period: int = 64
    history: History = None

    def __post_init__(self):
        h = float(self.h)
        if not (math.isfinite(h) and h > 0):
            raise InvalidArgumentError(f"h must be positive, got {self.h}")
        object.__setattr__(self, "h", h)
        if int(self.pulse_limit) != self.pulse_limit or self.pulse_limit < 1:
            raise InvalidArgumentError(f"pulse_limit must be a positive integer, got {self.pulse_limit}")
        object.__setattr__(self, "pulse_limit", int(self.pulse_limit))
        if int(self.steps_per_period) != self.steps_per_period or self.steps_per_period < 4:
            raise InvalidArgumentError(f"steps_per_period must be an integer >= 4, got {self.steps_per_period}")
        object.__setattr__(self, "steps_per_period", int(self.steps_per_period))

    @property
    def horizon(self) -> float:
        return self.pulse_limit / self.h


class JumpRecord(NamedTuple):
    time: float
    pre: np.ndarray
    post: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Stored samples; impulse instants appear twice (pre-jump, then post-jump)."""

    times: np.ndarray
    states: np.ndarray
    jumps: tuple = ()
    diverged: bool = False

    def __post_init__(self):
        t = np.array(self.times, dtype=float).ravel()
        x = np.array(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != t.size:
            raise InvalidArgumentError(f"{t.size} times but {x.shape[0]} states")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise InvalidArgumentError("times must be nondecreasing")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "jumps", tuple(self.jumps))

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def post_jump_samples(self) -> tuple[np.ndarray, np.ndarray]:
        """``(t_j, x(t_j+))`` at the impulses, or every sample if there are none."""
        if not self.jumps:
            return self.times, self.states
        return (
            np.array([j.time for j in self.jumps]),
            np.array([j.post for j in self.jumps]),
        )


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of ``log ||x||``.  Unpacks as ``(slope, residual_norm)``."""

    slope: float
    residual_norm: float
    samples: int
    note: str = ""

    def __iter__(self):
        return iter((self.slope, self.residual_norm))


# --------------------------------------------------------------------------
# Grid selection
# --------------------------------------------------------------------------

def grid_resolution(h: float, tau: float, steps_per_period: int) -> tuple[int, Optional[int]]:
    """Steps per impulse period ``m`` and the delay in steps, if commensurate.

    When ``tau h`` is ``p / q`` with ``q <= 64`` (to 1e-12), ``m`` is the
    smallest multiple of ``q`` not below ``steps_per_period`` and the delay is
    exactly ``p m / q`` steps.  Otherwise ``m`` is only raised far enough to
    keep the step below the delay, and the second value is ``None``.
    """
    ratio = tau * h
    frac = Fraction(ratio).limit_denominator(MAX_DENOMINATOR)
    if frac.numerator > 0 and abs(float(frac) - ratio) <= COMMENSURATE_TOL * max(1.0, ratio):
        q = frac.denominator
        m = q * math.ceil(steps_per_period / q)
        return m, frac.numerator * m // q
    m = max(steps_per_period, math.floor(1.0 / ratio) + 1)
    return m, None


def _history_fn(history: History, n: Optional[int]) -> tuple[Callable[[float], np.ndarray], int]:
    if callable(history):
        x0 = np.atleast_1d(np.asarray(history(0.0), dtype=float))
        if x0.ndim != 1 or (n is not None and x0.size != n):
            raise InvalidArgumentError(f"history returns shape {x0.shape}, expected ({n},)")
        size = x0.size

        def fn(s):
            return np.atleast_1d(np.asarray(history(s), dtype=float))

        return fn, size
    if history is None:
        if n is None:
            raise InvalidArgumentError("state dimension unknown; pass n or a history")
        const = np.ones(n)
    else:
        const = np.atleast_1d(np.asarray(history, dtype=float))
        if const.ndim != 1 or (n is not None and const.size != n):
            raise InvalidArgumentError(f"history has shape {const.shape}, expected ({n},)")
    const.setflags(write=False)
    return (lambda s: const), const.size


# --------------------------------------------------------------------------
# Integrator
# --------------------------------------------------------------------------

def _integrate(rhs, jump, tau: float, cfg: SimConfig, n: Optional[int]) -> Trajectory:
    hist, n = _history_fn(cfg.history, n)
    m, lag_steps = grid_resolution(cfg.h, tau, cfg.steps_per_period)
    delta = 1.0 / (cfg.h * m)
    total = m * cfg.pulse_limit

    # per-interval Hermite data: left value/slope, right value/slope
    y0 = np.empty((total, n))
    d0 = np.empty((total, n))
    y1 = np.empty((total, n))
    d1 = np.empty((total, n))

    def hermite(j, c):
        if c == 0.0:
            return y0[j]
        if c == 1.0:
            return y1[j]
        c2, c3 = c * c, c * c * c
        return (
            (2 * c3 - 3 * c2 + 1) * y0[j]
            + ((c3 - 2 * c2 + c) * delta) * d0[j]
            + (3 * c2 - 2 * c3) * y1[j]
            + ((c3 - c2) * delta) * d1[j]
        )

    if lag_steps is not None:
        def delayed(i, c):
            j = i - lag_steps
            if j < 0:
                return hist((i + c) * delta - tau)
            return hermite(j, c)
    else:
        def delayed(i, c):
            s = (i + c) * delta - tau
            if s <= 0.0:
                return hist(s)
            u = s / delta
            j = min(int(math.floor(u)), i - 1)
            return hermite(j, u - j)

    times = np.empty(total + 1 + cfg.pulse_limit)
    states = np.empty((times.size, n))
    jumps = []
    x = np.array(hist(0.0), dtype=float)
    if x.shape != (n,):
        raise InvalidArgumentError(f"history value has shape {x.shape}, expected ({n},)")
    times[0], states[0] = 0.0, x
    k = 1
    diverged = not np.all(np.isfinite(x))
    half = 0.5 * delta

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(total if not diverged else 0):
            t = i * delta
            lag_mid = delayed(i, 0.5)
            lag_end = delayed(i, 1.0)
            k1 = rhs(t, x, delayed(i, 0.0))
            k2 = rhs(t + half, x + half * k1, lag_mid)
            k3 = rhs(t + half, x + half * k2, lag_mid)
            t_next = (i + 1) / (cfg.h * m)
            k4 = rhs(t_next, x + delta * k3, lag_end)
            xn = x + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(xn)):
                diverged = True
                break
            y0[i], d0[i], y1[i] = x, k1, xn
            d1[i] = rhs(t_next, xn, lag_end)
            times[k], states[k] = t_next, xn
            k += 1
            if (i + 1) % m == 0:
                post = jump(xn)
                if not np.all(np.isfinite(post)):
                    diverged = True
                    break
                t_jump = (i + 1) // m / cfg.h
                times[k - 1] = t_jump
                times[k], states[k] = t_jump, post
                k += 1
                jumps.append(JumpRecord(t_jump, xn.copy(), post.copy()))
                x = post
            else:
                x = xn
    return Trajectory(times[:k].copy(), states[:k].copy(), tuple(jumps), diverged)


def simulate_linear(sys: DdeSystem, B, cfg: SimConfig) -> Trajectory:
    """``x' = A0 x(t) + A1 x(t - tau)`` with ``x <- (I + B) x`` at ``t = j / h``."""
    B = np.array(B, dtype=float, ndmin=2)
    if B.shape != (sys.n, sys.n):
        raise InvalidArgumentError(f"controller is {B.shape} but the system has n={sys.n}")
    a0, a1 = np.asarray(sys.a0), np.asarray(sys.a1)
    jump_matrix = np.eye(sys.n) + B

    def rhs(t, x, xd):
        return a0 @ x + a1 @ xd

    def jump(x):
        return jump_matrix @ x

    return _integrate(rhs, jump, sys.tau, cfg, sys.n)


def simulate_nonlinear(
    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    jump: Callable[[np.ndarray], np.ndarray],
    tau: float,
    cfg: SimConfig,
    n: Optional[int] = None,
) -> Trajectory:
    """``x' = f(t, x(t), x(t - tau))`` with ``x <- x + jump(x)`` at ``t = j / h``.

    ``n`` is needed only when ``cfg.history`` is ``None``.
    """
    tau = float(tau)
    if not (math.isfinite(tau) and tau > 0):
        raise InvalidArgumentError(f"tau must be positive, got {tau}")

    def rhs(t, x, xd):
        return np.asarray(f(t, x, xd), dtype=float)

    def jump_map(x):
        return x + np.asarray(jump(x), dtype=float)

    return _integrate(rhs, jump_map, tau, cfg, n)


# --------------------------------------------------------------------------
# Rate estimation
# --------------------------------------------------------------------------

def convergence_rate(traj: Trajectory, discard_fraction: float = 0.2) -> RateFit:
    """Fit ``log ||x(t_j+)|| ~ a + slope t_j`` over the post-jump samples.

    The leading ``discard_fraction`` of the samples is dropped as transient.
    A zero norm gives ``slope = -inf`` and a note.
    """
    if not 0.0 <= discard_fraction < 1.0:
        raise InvalidArgumentError(f"discard_fraction must lie in [0, 1), got {discard_fraction}")
    t, x = traj.post_jump_samples()
    start = int(math.floor(discard_fraction * t.size))
    t, x = t[start:], x[start:]
    if t.size < 4:
        raise InvalidArgumentError(f"need at least 4 samples after discarding, have {t.size}")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        return RateFit(-math.inf, math.nan, int(t.size), "zero norm sampled; state reached the origin")
    design = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(design, np.log(norms), rcond=None)
    resid = float(np.linalg.norm(design @ coef - np.log(norms)))
    return RateFit(float(coef[1]), resid, int(t.size))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def write_csv(traj: Trajectory, path=None) -> str:
    """Header ``t,x1,...,xn`` then one row per sample, values with 17 significant digits.

    Returns the text; also writes it to ``path`` when given.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{i + 1}" for i in range(traj.n)])
    for t, row in zip(traj.times, traj.states):
        writer.writerow([format(t, ".17g")] + [format(v, ".17g") for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_csv(source) -> Trajectory:
    """Parse :func:`write_csv` output.  Repeated times are read back as jumps.

    ``source`` is a path or an open text stream.
    """
    if hasattr(source, "read"):
        return _parse_csv(source)
    with open(source, encoding="utf-8", newline="") as fh:
        return _parse_csv(fh)


def _parse_csv(fh) -> Trajectory:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise TrajectoryFormatError(1, "empty file") from None
    n = len(header) - 1
    if n < 1 or header != ["t"] + [f"x{i + 1}" for i in range(n)]:
        raise TrajectoryFormatError(1, f"expected header t,x1,...,xn, got {','.join(header)}")
    rows = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != n + 1:
            raise TrajectoryFormatError(line, f"expected {n + 1} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise TrajectoryFormatError(line, str(exc)) from None
        if rows and values[0] < rows[-1][0]:
            raise TrajectoryFormatError(line, "times decrease")
        rows.append(values)
    if not rows:
        raise TrajectoryFormatError(2, "no samples")
    data = np.array(rows)
    times, states = data[:, 0], data[:, 1:]
    jumps = [
        JumpRecord(float(times[i]), states[i - 1].copy(), states[i].copy())
        for i in range(1, times.size)
        if times[i] == times[i - 1]
    ]
    diverged = not np.all(np.isfinite(states))
    return Trajectory(times, states, tuple(jumps), diverged)
