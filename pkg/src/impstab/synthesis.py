"""Controller synthesis: minimize ``x^T W x + C(x)`` subject to
``rho(M(x)) <= exp(gamma / h)`` and ``c(x) <= 0``.

The spectral-radius constraint is not smooth, so the solver is a
derivative-free compass search run on a quadratic-penalty objective

    cost(x) + mu * max(0, rho(x) - target)**2 + mu * sum(max(0, c_j(x))**2)

with ``mu`` raised tenfold until the incumbent is feasible.  Several starts
(the guess, zero, then seeded uniform points in ``[-1, 1]^k``) are run and
the cheapest feasible result wins; ties keep the earlier start.

When ``M0`` has full row rank, there is no constraint and the cost is purely
quadratic, the search runs over the ``d^2`` entries ``y`` of
``M - Z`` instead and maps back through the ``W``-weighted least-norm
preimage ``x(y) = W^-1 M0^T (M0 W^-1 M0^T)^-1 y``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CostEvaluationError, InfeasibleError, InvalidArgumentError
from .probe import (
    DEFICIENT_RANK_MESSAGE,
    ControlSpace,
    ProbeData,
    monodromy_at,
    rank_diagnostic,
    spectral_radius,
)

__all__ = [
    "SolverSettings",
    "SynthesisProblem",
    "SolverReport",
    "Controller",
    "VerificationReport",
    "TanhAbsCost",
    "evaluate_cost",
    "feasibility",
    "synthesize",
    "verify_controller",
]

log = logging.getLogger(__name__)

MSG_PROBE = "Unconstrained problem is provably feasible. Performing optimization in probe space."
MSG_CONTROL = "Performing optimization in control space."
MSG_OK = "Local minimum found that satisfies the constraints."
MSG_BUDGET = "Solver stopped prematurely."
MSG_INFEASIBLE = "Converged to an infeasible point."


@dataclass(frozen=True)
class SolverSettings:
    seed: int = 0
    starts: int = 8
    initial_mesh: float = 0.5
    mesh_floor: float = 1e-9
    budget: int = 100_000  # objective evaluations per start
    mu_initial: float = 1e2
    mu_factor: float = 10.0
    mu_max: float = 1e12
    feas_tol: float = 1e-8
    random_guess: bool = False

    def __post_init__(self):
        if self.starts < 1 or self.budget < 1:
            raise InvalidArgumentError("starts and budget must be positive")
        if not 0 < self.mesh_floor <= self.initial_mesh:
            raise InvalidArgumentError("need 0 < mesh_floor <= initial_mesh")
        if not (self.mu_initial > 0 and self.mu_factor > 1 and self.mu_max >= self.mu_initial):
            raise InvalidArgumentError("invalid penalty schedule")


@dataclass(frozen=True)
class SynthesisProblem:
    """Frequency ``h``, target rate ``gamma`` and the cost/constraint data.

    ``cost_weight`` is a positive scalar (times identity), a vector (diagonal)
    or a symmetric positive-definite ``k x k`` matrix.
    """

    h: float
    gamma: float
    cost_weight: object = 1.0
    cost_general: Optional[Callable[[np.ndarray], float]] = None
    constraint: Optional[Callable[[np.ndarray], np.ndarray]] = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    guess: Optional[np.ndarray] = None

    def __post_init__(self):
        h = float(self.h)
        if not (math.isfinite(h) and h > 0):
            raise InvalidArgumentError(f"h must be positive, got {self.h}")
        if not math.isfinite(float(self.gamma)):
            raise InvalidArgumentError("gamma must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "gamma", float(self.gamma))
        w = np.asarray(self.cost_weight, dtype=float)
        if w.ndim == 0:
            if not w > 0:
                raise InvalidArgumentError("scalar cost_weight must be positive")
        else:
            if w.ndim == 1:
                w = np.diag(w)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise InvalidArgumentError(f"cost_weight has bad shape {w.shape}")
            if np.max(np.abs(w - w.T), initial=0.0) > 1e-12:
                raise InvalidArgumentError("cost_weight must be symmetric")
            try:
                np.linalg.cholesky(w)
            except np.linalg.LinAlgError:
                raise InvalidArgumentError("cost_weight must be positive definite") from None
        w.setflags(write=False)
        object.__setattr__(self, "cost_weight", w)
        if self.guess is not None:
            g = np.array(self.guess, dtype=float).ravel()
            g.setflags(write=False)
            object.__setattr__(self, "guess", g)

    @property
    def target(self) -> float:
        """Bound ``exp(gamma / h)`` on the spectral radius."""
        return math.exp(self.gamma / self.h)

    def weight_matrix(self, k: int) -> np.ndarray:
        w = self.cost_weight
        if w.ndim == 0:
            return float(w) * np.eye(k)
        if w.shape != (k, k):
            raise InvalidArgumentError(f"cost_weight is {w.shape} but k = {k}")
        return np.asarray(w)

    @property
    def is_quadratic(self) -> bool:
        return self.cost_general is None


@dataclass(frozen=True)
class SolverReport:
    strategy: str
    termination: str  # "converged", "budget" or "infeasible"
    iterations: int
    evaluations: int
    start_index: int
    penalty: float
    rank: int
    deficient: bool
    messages: tuple = ()


@dataclass(frozen=True)
class Controller:
    coords: np.ndarray
    matrix: np.ndarray
    cost: float
    rho: float
    margin: float
    feasible: bool
    constraint_values: np.ndarray
    solver_report: Optional[SolverReport] = None


@dataclass(frozen=True)
class VerificationReport:
    rho: float
    margin: float
    cost: float
    constraint_values: np.ndarray
    feasible: bool
    mismatches: tuple

    @property
    def ok(self) -> bool:
        return not self.mismatches


# --------------------------------------------------------------------------
# Objective pieces
# --------------------------------------------------------------------------

def evaluate_cost(x, problem: SynthesisProblem) -> float:
    x = np.asarray(x, dtype=float)
    w = problem.cost_weight
    quad = float(w) * float(x @ x) if w.ndim == 0 else float(x @ problem.weight_matrix(x.size) @ x)
    extra = 0.0
    if problem.cost_general is not None:
        extra = float(problem.cost_general(x))
        if not math.isfinite(extra):
            raise CostEvaluationError(f"cost_general returned {extra} at x = {x}")
    return quad + extra


class TanhAbsCost:
    """``C(x) = weight * sum_k tanh(scale |x_k|)``, a smooth count of nonzero coordinates."""

    def __init__(self, scale: float = 4.0, weight: float = 1.0):
        if not (scale > 0 and weight >= 0):
            raise InvalidArgumentError("tanh_abs needs scale > 0 and weight >= 0")
        self.scale, self.weight = float(scale), float(weight)

    def __call__(self, x) -> float:
        return self.weight * float(np.sum(np.tanh(self.scale * np.abs(np.asarray(x, dtype=float)))))

    def __repr__(self):
        return f"TanhAbsCost(scale={self.scale}, weight={self.weight})"


def _constraint_fn(problem: SynthesisProblem, space: Optional[ControlSpace]):
    if problem.constraint is not None:
        return problem.constraint
    if space is not None:
        return space.constraint
    return None


def feasibility(x, probe: ProbeData, problem: SynthesisProblem, space: Optional[ControlSpace] = None):
    """``(rho, margin, constraint_values)`` at coordinates ``x``."""
    x = np.asarray(x, dtype=float)
    rho = spectral_radius(monodromy_at(probe, x))
    cfn = _constraint_fn(problem, space)
    cvals = np.zeros(0) if cfn is None else np.atleast_1d(np.asarray(cfn(x), dtype=float))
    return rho, problem.target - rho, cvals


def _is_feasible(margin: float, cvals: np.ndarray, tol: float) -> bool:
    return margin >= -tol and (cvals.size == 0 or float(cvals.max()) <= tol)


# --------------------------------------------------------------------------
# Compass search
# --------------------------------------------------------------------------

@dataclass
class _Run:
    x: np.ndarray
    cost: float
    violation: float
    feasible: bool
    evaluations: int
    iterations: int
    exhausted: bool
    penalty: float
    start: int


def _sweep(f, x, fx, mesh, directions, budget, evals):
    """Opportunistic poll of ``x +- mesh * d`` over ``directions``; ``x`` is updated in place."""
    improved = False
    for d in directions:
        for sign in (1.0, -1.0):
            if evals >= budget:
                return fx, improved, evals, True
            trial = x + (sign * mesh) * d
            ft = f(trial)
            evals += 1
            if ft < fx:
                x[:] = trial
                fx = ft
                improved = True
                break
    return fx, improved, evals, False


def _coordinate_sweep(f, x, fx, mesh, budget, evals):
    improved = False
    for i in range(x.size):
        xi = x[i]
        for step in (mesh, -mesh):
            if evals >= budget:
                return fx, improved, evals, True
            x[i] = xi + step
            ft = f(x)
            evals += 1
            if ft < fx:
                fx = ft
                improved = True
                break
            x[i] = xi
    return fx, improved, evals, False


def _compass(f, x, fx, mesh, floor, budget, rng, stop=None):
    """Compass search with mesh halving.

    A successful coordinate sweep is followed by Hooke-Jeeves pattern moves
    along the accumulated step.  Before the mesh is halved the point is also
    polled along a seeded random orthonormal basis, which lets the search
    leave kinks of the spectral radius where every coordinate direction
    fails.  ``stop(fx)`` ends the search early once it returns true.
    """
    evals = iters = 0
    k = x.size
    while mesh >= floor:
        if stop is not None and stop(fx):
            break
        iters += 1
        base = x.copy()
        fx, improved, evals, out = _coordinate_sweep(f, x, fx, mesh, budget, evals)
        if out:
            return x, fx, evals, iters, True
        if improved:
            while True:
                trial = x + (x - base)
                if evals >= budget:
                    return x, fx, evals, iters, True
                ft = f(trial)
                evals += 1
                ft, moved, evals, out = _coordinate_sweep(f, trial, ft, mesh, budget, evals)
                if ft < fx:
                    base, x, fx = x, trial, ft
                    if out:
                        return x, fx, evals, iters, True
                    continue
                if out:
                    return x, fx, evals, iters, True
                break
            continue
        if k > 1:
            q, _ = np.linalg.qr(rng.standard_normal((k, k)))
            fx, improved, evals, out = _sweep(f, x, fx, mesh, q.T, budget, evals)
            if out:
                return x, fx, evals, iters, True
            if improved:
                continue
        mesh *= 0.5
    return x, fx, evals, iters, False


def _penalized_run(cost, rho, cons, target, x0, settings: SolverSettings, start: int) -> _Run:
    tol = settings.feas_tol

    def measure_c(x):
        c = cons(x) if cons is not None else None
        return 0.0 if c is None or c.size == 0 else float(np.max(c))

    def measure(x):
        return rho(x) - target, measure_c(x)

    x = np.array(x0, dtype=float)
    rng = np.random.default_rng([settings.seed, start])
    mu = settings.mu_initial
    evals = iters = 0
    exhausted = False
    # a tenth of the budget is held back for the restoration phase
    main_budget = settings.budget - settings.budget // 10
    while True:
        # once c(x) <= 0 holds exactly it is kept as a hard barrier
        hard = cons is not None and measure_c(x) <= 0.0

        def objective(z, mu=mu, hard=hard):
            c = cons(z) if cons is not None else None
            pen = 0.0
            if c is not None and c.size:
                if hard and float(np.max(c)) > 0.0:
                    return math.inf
                pen = float(np.sum(np.maximum(c, 0.0) ** 2))
            pen += max(0.0, rho(z) - target) ** 2
            val = cost(z) + mu * pen
            return val if math.isfinite(val) else math.inf

        fx = objective(x)
        x, fx, ev, it, exhausted = _compass(
            objective, x, fx, settings.initial_mesh, settings.mesh_floor, main_budget - evals, rng
        )
        evals += ev + 1
        iters += it
        over, cv = measure(x)
        feasible = over <= tol and cv <= tol
        if feasible or exhausted or mu * settings.mu_factor > settings.mu_max:
            break
        mu *= settings.mu_factor
    if not feasible and settings.budget - evals > 1:
        # restoration: minimize the violation alone and stop at the first feasible point
        hard = cons is not None and measure_c(x) <= 0.0

        def violation(z, hard=hard):
            over, cv = measure(z)
            if hard and cv > 0.0:
                return math.inf
            val = max(over, 0.0) ** 2 + max(cv, 0.0) ** 2
            return val if math.isfinite(val) else math.inf

        fx = violation(x)
        x, fx, ev, it, out_of_budget = _compass(
            violation, x, fx, settings.initial_mesh, settings.mesh_floor, settings.budget - evals - 1, rng,
            stop=lambda v: v <= tol * tol,
        )
        evals += ev + 1
        iters += it
        exhausted = exhausted or out_of_budget
        over, cv = measure(x)
        feasible = over <= tol and cv <= tol
    return _Run(x, cost(x), max(over, cv, 0.0), feasible, evals, iters, exhausted, mu, start)


def _starts(guess: np.ndarray, dim: int, settings: SolverSettings) -> list[np.ndarray]:
    rng = np.random.default_rng(settings.seed)
    pts = [guess, np.zeros(dim)]
    while len(pts) < settings.starts:
        pts.append(rng.uniform(-1.0, 1.0, dim))
    # the guess may coincide with zero; keep order but drop exact duplicates
    out = []
    for p in pts[: settings.starts]:
        if not any(np.array_equal(p, q) for q in out):
            out.append(p)
    return out


def _best(runs: list[_Run]) -> _Run:
    feasible = [r for r in runs if r.feasible]
    if feasible:
        return min(feasible, key=lambda r: (r.cost, r.start))
    return min(runs, key=lambda r: (r.violation, r.cost, r.start))


# --------------------------------------------------------------------------
# Public entry points
# --------------------------------------------------------------------------

def _initial_guess(problem: SynthesisProblem, k: int) -> np.ndarray:
    if problem.guess is not None:
        if problem.guess.size != k:
            raise InvalidArgumentError(f"guess has length {problem.guess.size}, expected {k}")
        return np.array(problem.guess)
    if problem.solver.random_guess:
        return np.random.default_rng(problem.solver.seed + 1).uniform(-1.0, 1.0, k)
    return np.zeros(k)


def synthesize(probe: ProbeData, space: ControlSpace, problem: SynthesisProblem) -> Controller:
    """Find a small controller meeting the spectral-radius target.

    Raises
    ------
    InfeasibleError
        No feasible point was found and ``M0`` has rank below ``d^2``.  The
        best infeasible controller is attached to the exception.
    """
    k, d = probe.k, probe.d
    if space.k != k:
        raise InvalidArgumentError(f"probe has {k} columns but the control space has k={space.k}")
    settings = problem.solver
    rank, deficient = rank_diagnostic(probe)
    messages = []
    if deficient:
        messages.append(DEFICIENT_RANK_MESSAGE)
    cfn = _constraint_fn(problem, space)
    if k >= d * d:
        messages.append(f"Dimension of control space ({k}) is at least probe space dimension ({d * d}).")
    else:
        messages.append(f"Dimension of control space ({k}) is at most probe space dimension ({d * d}).")
    use_probe = (not deficient) and cfn is None and problem.is_quadratic and d > 0
    messages.append(MSG_PROBE if use_probe else MSG_CONTROL)
    for m in messages:
        log.info(m)

    guess = _initial_guess(problem, k)
    target = problem.target
    m0 = probe.m0_vectorized

    if use_probe:
        winv = np.linalg.inv(problem.weight_matrix(k))
        gram = m0 @ winv @ m0.T
        gram_inv = np.linalg.inv(gram)
        lift = winv @ m0.T @ gram_inv  # k x d^2
        quad = 0.5 * (gram_inv + gram_inv.T)

        def cost(y):
            return float(y @ quad @ y)

        def rho(y):
            return spectral_radius(probe.z + y.reshape(d, d, order="F"))

        starts = _starts(m0 @ guess, d * d, settings)
        runs = [_penalized_run(cost, rho, None, target, s, settings, i) for i, s in enumerate(starts)]
        best = _best(runs)
        x = lift @ best.x
        strategy = "probe"
    else:
        def cost(x):
            return evaluate_cost(x, problem)

        def rho(x):
            return spectral_radius(monodromy_at(probe, x))

        cons = None
        if cfn is not None:
            def cons(x):
                return np.atleast_1d(np.asarray(cfn(x), dtype=float))

        starts = _starts(guess, k, settings)
        runs = [_penalized_run(cost, rho, cons, target, s, settings, i) for i, s in enumerate(starts)]
        best = _best(runs)
        x = best.x
        strategy = "control"

    r, margin, cvals = feasibility(x, probe, problem, space)
    feasible = _is_feasible(margin, cvals, settings.feas_tol)
    if not feasible:
        termination, final = "infeasible", MSG_INFEASIBLE
    elif best.exhausted:
        termination, final = "budget", MSG_BUDGET
    else:
        termination, final = "converged", MSG_OK
    messages.append(final)
    log.info(final)
    report = SolverReport(
        strategy=strategy,
        termination=termination,
        iterations=sum(rn.iterations for rn in runs),
        evaluations=sum(rn.evaluations for rn in runs),
        start_index=best.start,
        penalty=best.penalty,
        rank=rank,
        deficient=deficient,
        messages=tuple(messages),
    )
    x = np.array(x, dtype=float)
    ctrl = Controller(
        coords=x,
        matrix=space.matrix(x),
        cost=evaluate_cost(x, problem),
        rho=r,
        margin=margin,
        feasible=feasible,
        constraint_values=cvals,
        solver_report=report,
    )
    if not feasible and deficient:
        raise InfeasibleError(
            f"{MSG_INFEASIBLE} {DEFICIENT_RANK_MESSAGE} (rank {rank} < {d * d})",
            controller=ctrl,
            rank=rank,
        )
    return ctrl


def verify_controller(
    probe: ProbeData,
    problem: SynthesisProblem,
    controller: Controller,
    space: Optional[ControlSpace] = None,
    tol: float = 1e-10,
) -> VerificationReport:
    """Recompute every derived field of ``controller`` and list the ones that disagree."""
    x = np.asarray(controller.coords, dtype=float)
    rho, margin, cvals = feasibility(x, probe, problem, space)
    cost = evaluate_cost(x, problem)
    feasible = _is_feasible(margin, cvals, problem.solver.feas_tol)
    bad = []

    def differs(a, b):
        return abs(a - b) > tol * (1.0 + abs(b))

    if differs(controller.rho, rho):
        bad.append("rho")
    if differs(controller.margin, margin):
        bad.append("margin")
    if differs(controller.cost, cost):
        bad.append("cost")
    stored = np.asarray(controller.constraint_values, dtype=float)
    if stored.shape != cvals.shape or (cvals.size and np.max(np.abs(stored - cvals)) > tol):
        bad.append("constraint_values")
    if bool(controller.feasible) != feasible:
        bad.append("feasible")
    if space is not None:
        mat = space.matrix(x)
        if np.shape(controller.matrix) != mat.shape or np.max(np.abs(controller.matrix - mat)) > tol:
            bad.append("matrix")
    return VerificationReport(rho, margin, cost, cvals, feasible, tuple(bad))
