"""JSON problem configuration: validation, canonical form and content hashes.

Every field is checked before any computation; errors name the offending
field with a dotted path such as ``synthesis.cost_weight``.  See the README
for the full schema.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .control_space import (
    box_and_columnsum_constraint,
    box_constraint,
    diagonal_basis,
    explicit_basis,
    reassignment_basis,
)
from .errors import ConfigError, ImpstabError
from .probe import ControlSpace
from .spectrum import DdeSystem, EigenWindow
from .synthesis import SolverSettings, SynthesisProblem, TanhAbsCost

__all__ = ["ProblemConfig", "parse_config", "load_config", "canonical_json", "content_hash"]

_SECTIONS = ("system", "control", "synthesis", "spectrum", "flags")
_SOLVER_INT = ("seed", "starts", "budget")
_SOLVER_FLOAT = ("initial_mesh", "mesh_floor", "mu_initial", "mu_factor", "mu_max", "feas_tol")
_DEFAULT_SOLVER = SolverSettings()


def canonical_json(obj: Any) -> str:
    """Compact JSON with sorted keys; the basis of every content hash."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# Field validators
# --------------------------------------------------------------------------

def _mapping(value, path: str, allowed: tuple, required: tuple = ()) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    extra = sorted(set(value) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")
    for key in required:
        if key not in value:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return value


def _number(value, path: str, *, positive: bool = False, nonnegative: bool = False) -> float:
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number, got a boolean")
    if isinstance(value, str):
        try:
            value = float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(path, f"cannot parse {value!r} as a number") from None
    if not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    x = float(value)
    if not math.isfinite(x):
        raise ConfigError(path, "must be finite")
    if positive and not x > 0:
        raise ConfigError(path, f"must be positive, got {x}")
    if nonnegative and x < 0:
        raise ConfigError(path, f"must be nonnegative, got {x}")
    return x


def _integer(value, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {value}")
    return int(value)


def _bool(value, path: str) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("true", "false"):
        return value == "true"
    raise ConfigError(path, f"expected a boolean, got {value!r}")


def _array(value, path: str, ndim) -> np.ndarray:
    ndims = (ndim,) if isinstance(ndim, int) else tuple(ndim)
    if ndims == (2,) and isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [[value]]
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a (nested) numeric array") from None
    if arr.ndim not in ndims:
        want = " or ".join(str(d) for d in ndims)
        raise ConfigError(path, f"expected a {want}-dimensional array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "entries must be finite")
    return arr


def _bound(value, path: str) -> Optional[str | float]:
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "-inf", "infinity", "-infinity"):
        return "-inf" if value.strip().startswith("-") else "inf"
    return _number(value, path)


# --------------------------------------------------------------------------
# Sections
# --------------------------------------------------------------------------

def _system(raw) -> dict:
    raw = _mapping(raw, "system", ("a0", "a1", "tau"), ("a0", "a1", "tau"))
    a0 = _array(raw["a0"], "system.a0", 2)
    a1 = _array(raw["a1"], "system.a1", 2)
    if a0.shape[0] != a0.shape[1] or a0.size == 0:
        raise ConfigError("system.a0", f"must be a nonempty square matrix, got shape {a0.shape}")
    if a1.shape != a0.shape:
        raise ConfigError("system.a1", f"shape {a1.shape} does not match a0 {a0.shape}")
    tau = _number(raw["tau"], "system.tau", positive=True)
    return {"a0": a0.tolist(), "a1": a1.tolist(), "tau": tau}


def _constraint(raw, basis: str) -> Optional[dict]:
    if raw is None:
        return None
    raw = _mapping(raw, "control.constraint", ("type", "lower", "upper"), ("type",))
    kind = raw["type"]
    if kind == "box":
        lower = _number(raw.get("lower", -1.0), "control.constraint.lower")
        upper = _number(raw.get("upper", 0.0), "control.constraint.upper")
        if not lower <= upper:
            raise ConfigError("control.constraint", f"empty box [{lower}, {upper}]")
        return {"type": "box", "lower": lower, "upper": upper}
    if kind == "box_columnsum":
        if basis != "reassignment":
            raise ConfigError("control.constraint.type", "box_columnsum requires the reassignment basis")
        if "lower" in raw or "upper" in raw:
            raise ConfigError("control.constraint", "box_columnsum takes no bounds")
        return {"type": "box_columnsum"}
    raise ConfigError("control.constraint.type", f"unknown constraint {kind!r}; use 'box' or 'box_columnsum'")


def _control(raw, n: int) -> tuple[dict, int]:
    raw = _mapping(raw, "control", ("basis", "matrices", "N", "constraint"), ("basis",))
    basis = raw["basis"]
    out: dict = {"basis": basis}
    if basis == "explicit":
        if "matrices" not in raw:
            raise ConfigError("control.matrices", "missing required field for the explicit basis")
        mats = _array(raw["matrices"], "control.matrices", 3)
        if mats.shape[1:] != (n, n) or mats.shape[0] == 0:
            raise ConfigError("control.matrices", f"expected a list of {n}x{n} matrices, got shape {mats.shape}")
        out["matrices"] = mats.tolist()
        k = mats.shape[0]
    elif basis == "diagonal":
        k = n
    elif basis == "reassignment":
        N = _integer(raw.get("N", n), "control.N", 2)
        if N != n:
            raise ConfigError("control.N", f"must equal the system dimension {n}, got {N}")
        out["N"] = N
        k = N * (N - 1)
    else:
        raise ConfigError("control.basis", f"unknown basis {basis!r}; use 'explicit', 'diagonal' or 'reassignment'")
    for key in ("matrices", "N"):
        if key in raw and key not in out:
            raise ConfigError(f"control.{key}", f"not used by the {basis} basis")
    out["constraint"] = _constraint(raw.get("constraint"), basis)
    return out, k


def _cost_general(raw) -> Optional[dict]:
    if raw is None:
        return None
    raw = _mapping(raw, "synthesis.cost_general", ("type", "scale", "weight"), ("type",))
    if raw["type"] != "tanh_abs":
        raise ConfigError("synthesis.cost_general.type", f"unknown cost {raw['type']!r}; use 'tanh_abs'")
    return {
        "type": "tanh_abs",
        "scale": _number(raw.get("scale", 4.0), "synthesis.cost_general.scale", positive=True),
        "weight": _number(raw.get("weight", 1.0), "synthesis.cost_general.weight", nonnegative=True),
    }


def _solver(raw) -> dict:
    defaults = {
        name: getattr(_DEFAULT_SOLVER, name)
        for name in _SOLVER_INT + _SOLVER_FLOAT + ("random_guess",)
    }
    raw = _mapping(raw if raw is not None else {}, "synthesis.solver", tuple(defaults))
    out = {}
    for name in _SOLVER_INT:
        out[name] = _integer(raw.get(name, defaults[name]), f"synthesis.solver.{name}", 0 if name == "seed" else 1)
    for name in _SOLVER_FLOAT:
        out[name] = _number(raw.get(name, defaults[name]), f"synthesis.solver.{name}", positive=True)
    out["random_guess"] = _bool(raw.get("random_guess", False), "synthesis.solver.random_guess")
    try:
        SolverSettings(**out)
    except ImpstabError as exc:
        raise ConfigError("synthesis.solver", str(exc)) from None
    return out


def _synthesis(raw, k: int) -> dict:
    raw = _mapping(
        raw,
        "synthesis",
        ("h", "gamma", "cost_weight", "cost_general", "guess", "solver"),
        ("h", "gamma"),
    )
    out = {
        "h": _number(raw["h"], "synthesis.h", positive=True),
        "gamma": _number(raw["gamma"], "synthesis.gamma"),
    }
    w = raw.get("cost_weight", 1.0)
    if isinstance(w, (int, float)) and not isinstance(w, bool):
        out["cost_weight"] = _number(w, "synthesis.cost_weight", positive=True)
    else:
        arr = _array(w, "synthesis.cost_weight", (1, 2))
        if arr.shape not in ((k,), (k, k)):
            raise ConfigError("synthesis.cost_weight", f"expected length {k} or {k}x{k}, got shape {arr.shape}")
        out["cost_weight"] = arr.tolist()
    out["cost_general"] = _cost_general(raw.get("cost_general"))
    guess = raw.get("guess")
    if guess is not None:
        g = _array(guess, "synthesis.guess", 1)
        if g.size != k:
            raise ConfigError("synthesis.guess", f"expected {k} coordinates, got {g.size}")
        guess = g.tolist()
    out["guess"] = guess
    out["solver"] = _solver(raw.get("solver"))
    return out


def _spectrum(raw) -> dict:
    raw = _mapping(raw if raw is not None else {}, "spectrum", ("N", "eig_lower", "eig_upper"))
    out = {
        "N": _integer(raw.get("N", 10), "spectrum.N", 2),
        "eig_lower": _bound(raw.get("eig_lower"), "spectrum.eig_lower"),
        "eig_upper": _bound(raw.get("eig_upper"), "spectrum.eig_upper"),
    }
    if out["eig_lower"] == "inf" or out["eig_upper"] == "-inf":
        raise ConfigError("spectrum", "eig_lower cannot be +inf and eig_upper cannot be -inf")
    if out["eig_upper"] is None:
        out["eig_upper"] = "inf"
    if out["eig_lower"] is not None:
        try:
            _window(out)
        except ImpstabError as exc:
            raise ConfigError("spectrum", str(exc)) from None
    return out


def _window(spec: dict) -> EigenWindow:
    lo, hi = spec["eig_lower"], spec["eig_upper"]
    return EigenWindow(-math.inf if lo == "-inf" else lo, math.inf if hi == "inf" else hi)


def parse_config(data: Any, source: Optional[Path] = None) -> "ProblemConfig":
    """Validate a decoded JSON document and return its canonical form."""
    data = _mapping(data, "", _SECTIONS, ("system", "control", "synthesis"))
    system = _system(data["system"])
    n = len(system["a0"])
    control, k = _control(data["control"], n)
    synthesis = _synthesis(data["synthesis"], k)
    spectrum = _spectrum(data.get("spectrum"))
    flags_raw = _mapping(data.get("flags") or {}, "flags", ("refining",))
    flags = {"refining": _bool(flags_raw.get("refining", False), "flags.refining")}
    canonical = {
        "system": system,
        "control": control,
        "synthesis": synthesis,
        "spectrum": spectrum,
        "flags": flags,
    }
    cfg = ProblemConfig(canonical, None if source is None else Path(source))
    for section, build in (("system", cfg.system), ("control", cfg.control_space), ("synthesis", cfg.problem)):
        try:
            build()
        except ImpstabError as exc:
            raise ConfigError(section, str(exc)) from None
    return cfg


def load_config(path) -> "ProblemConfig":
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(data, path)


@dataclass(frozen=True)
class ProblemConfig:
    """A validated configuration in canonical form."""

    canonical: dict
    source: Optional[Path] = None

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.canonical, indent=indent, sort_keys=True, ensure_ascii=False)

    def config_hash(self) -> str:
        return content_hash(self.canonical)

    def cache_key(self) -> str:
        """Hash of everything the spectral and probe stages depend on."""
        c = self.canonical
        return content_hash(
            {"system": c["system"], "control": c["control"], "h": c["synthesis"]["h"], "spectrum": c["spectrum"]}
        )

    @property
    def refining(self) -> bool:
        return self.canonical["flags"]["refining"]

    @property
    def N(self) -> int:
        return self.canonical["spectrum"]["N"]

    @property
    def h(self) -> float:
        return self.canonical["synthesis"]["h"]

    def system(self) -> DdeSystem:
        s = self.canonical["system"]
        return DdeSystem(s["a0"], s["a1"], s["tau"])

    def window(self) -> Optional[EigenWindow]:
        """The eigenvalue window, or ``None`` while ``eig_lower`` is unset."""
        spec = self.canonical["spectrum"]
        return None if spec["eig_lower"] is None else _window(spec)

    def control_space(self) -> ControlSpace:
        c = self.canonical["control"]
        n = len(self.canonical["system"]["a0"])
        con = c["constraint"]
        constraint = None
        if con is not None and con["type"] == "box":
            constraint = box_constraint(con["lower"], con["upper"])
        elif con is not None:
            constraint = box_and_columnsum_constraint(c["N"])
        if c["basis"] == "explicit":
            return explicit_basis(c["matrices"], constraint)
        if c["basis"] == "diagonal":
            return diagonal_basis(n, constraint)
        return reassignment_basis(c["N"], constraint)

    def problem(self) -> SynthesisProblem:
        s = self.canonical["synthesis"]
        cg = s["cost_general"]
        general = None if cg is None else TanhAbsCost(cg["scale"], cg["weight"])
        return SynthesisProblem(
            h=s["h"],
            gamma=s["gamma"],
            cost_weight=s["cost_weight"],
            cost_general=general,
            solver=SolverSettings(**s["solver"]),
            guess=s["guess"],
        )
