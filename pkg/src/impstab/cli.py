"""Command-line front end: ``impstab spectrum|synthesize|simulate|rate``.

Exit status: 0 success (feasible controller), 2 infeasible synthesis,
1 usage, configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cache import atomic_write_text, cache_dir, load_stages, store_stages
from .config import ProblemConfig, load_config
from .errors import ImpstabError, InfeasibleError, InvalidArgumentError
from .probe import probe_map, rank_diagnostic
from .simulate import SimConfig, convergence_rate, read_csv, simulate_linear, write_csv
from .spectrum import count_message, eigendata, spectrum_table
from .synthesis import Controller, synthesize

__all__ = ["main", "RunArtifacts", "build_parser"]

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _pairs(values) -> list:
    return [[complex(z).real, complex(z).imag] for z in values]


def _fmt_complex(z: complex) -> str:
    z = complex(z)
    if z.imag == 0:
        return f"{z.real:.6f}"
    sign = "+" if z.imag > 0 else "-"
    return f"{z.real:.6f} {sign} {abs(z.imag):.6f}i"


@dataclass(frozen=True)
class RunArtifacts:
    """Everything a synthesis run produced.  Only ``provenance`` holds timestamps."""

    spectral: dict
    probe: dict
    controller: dict
    solver: dict
    messages: list
    provenance: dict

    @classmethod
    def build(cls, cfg: ProblemConfig, spectral, rank: int, deficient: bool, ctrl: Controller, started: str):
        report = ctrl.solver_report
        return cls(
            spectral={"eigs_all": _pairs(spectral.eigs_all), "retained": _pairs(spectral.retained), "d": spectral.d},
            probe={"rank": rank, "deficient": deficient},
            controller={
                "coords": np.asarray(ctrl.coords).tolist(),
                "matrix": np.asarray(ctrl.matrix).tolist(),
                "cost": ctrl.cost,
                "rho": ctrl.rho,
                "margin": ctrl.margin,
                "feasible": bool(ctrl.feasible),
                "constraint_values": np.asarray(ctrl.constraint_values).tolist(),
            },
            solver={
                "strategy": report.strategy,
                "termination": report.termination,
                "iterations": report.iterations,
                "evaluations": report.evaluations,
                "start_index": report.start_index,
            },
            messages=list(report.messages),
            provenance={
                "config_hash": cfg.config_hash(),
                "cache_key": cfg.cache_key(),
                "tool_version": __version__,
                "started": started,
                "finished": _now(),
            },
        )

    def to_dict(self) -> dict:
        return {
            "spectral": self.spectral,
            "probe": self.probe,
            "controller": self.controller,
            "solver": self.solver,
            "messages": self.messages,
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _default_out(cfg: ProblemConfig, suffix: str) -> Path:
    src = cfg.source if cfg.source is not None else Path("impstab.json")
    return src.with_name(f"{src.stem}.{suffix}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_spectrum(args, out) -> int:
    cfg = load_config(args.config)
    sys_ = cfg.system()
    window = cfg.window()
    rows = spectrum_table(sys_, cfg.N, window)
    print(f"{'#':>4}  {'discretized':>30}  {'refined':>30}  note", file=out)
    for i, row in enumerate(rows, 1):
        refined = "-" if row.refined is None else _fmt_complex(row.refined)
        note = "spurious" if row.refined is None else ("retained" if row.in_window else "")
        print(f"{i:>4}  {_fmt_complex(row.raw):>30}  {refined:>30}  {note}", file=out)
    artifact = {
        "eigs_all": _pairs(r.raw for r in rows),
        "refined": [None if r.refined is None else _pairs([r.refined])[0] for r in rows],
        "in_window": [r.in_window for r in rows],
        "config_hash": cfg.config_hash(),
    }
    if window is not None:
        retained = [r.refined for r in rows if r.in_window]
        print(count_message(len(retained), window), file=out)
        artifact["retained"] = _pairs(retained)
    else:
        print("No eigenvalue window set (spectrum.eig_lower is null); choose one from the table above.", file=out)
    path = Path(args.out) if args.out else _default_out(cfg, "spectrum.json")
    atomic_write_text(path, json.dumps(artifact, indent=2, sort_keys=True) + "\n")
    print(f"spectrum written to {path}", file=out)
    return EXIT_OK


def _stages(cfg: ProblemConfig, refining: bool, out):
    space = cfg.control_space()
    directory = cache_dir(cfg.source)
    key = cfg.cache_key()
    if refining:
        spectral, probe = load_stages(directory, key)
        print("stages skipped: spectrum, probe", file=out)
        return space, spectral, probe
    window = cfg.window()
    if window is None:
        raise InvalidArgumentError("spectrum.eig_lower: required for synthesis")
    spectral = eigendata(cfg.system(), cfg.N, window)
    probe = probe_map(spectral, cfg.h, space)
    store_stages(directory, key, spectral, probe)
    return space, spectral, probe


def cmd_synthesize(args, out) -> int:
    started = _now()
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    refining = args.refine or cfg.refining
    space, spectral, probe = _stages(cfg, refining, out)
    window = cfg.window()
    if window is not None:
        print(count_message(len(spectral.retained), window), file=out)
    rank, deficient = rank_diagnostic(probe)
    infeasible_exc = None
    try:
        ctrl = synthesize(probe, space, cfg.problem())
    except InfeasibleError as exc:
        infeasible_exc = exc
        ctrl = exc.controller
    for msg in ctrl.solver_report.messages:
        print(msg, file=out)
    if deficient:
        print(f"rank(M0) = {rank} < d^2 = {probe.d ** 2}", file=out)
    artifacts = RunArtifacts.build(cfg, spectral, rank, deficient, ctrl, started)
    path = Path(args.out) if args.out else _default_out(cfg, "artifacts.json")
    atomic_write_text(path, artifacts.dumps())
    verdict = "feasible" if ctrl.feasible else "INFEASIBLE"
    print(f"controller ({verdict}): cost = {ctrl.cost:.6g}, rho = {ctrl.rho:.6g}, "
          f"target = {math.exp(cfg.problem().gamma / cfg.h):.6g}", file=out)
    print(np.array2string(np.asarray(ctrl.matrix), precision=4, suppress_small=True), file=out)
    print(f"artifacts written to {path} ({time.perf_counter() - t0:.2f} s)", file=out)
    if infeasible_exc is not None or not ctrl.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _load_controller(path: str, n: int) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidArgumentError(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if isinstance(data, dict):
        data = data.get("controller", data)
        if isinstance(data, dict):
            if "matrix" not in data:
                raise InvalidArgumentError(f"{path}: no 'matrix' field")
            data = data["matrix"]
    try:
        B = np.array(data, dtype=float, ndmin=2)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{path}: controller matrix is not numeric") from None
    if B.shape != (n, n):
        raise InvalidArgumentError(f"{path}: controller is {B.shape} but the system has n={n}")
    return B


def cmd_simulate(args, out) -> int:
    cfg = load_config(args.config)
    sys_ = cfg.system()
    B = np.zeros((sys_.n, sys_.n)) if args.zero else _load_controller(args.controller, sys_.n)
    traj = simulate_linear(sys_, B, SimConfig(cfg.h, args.pulses, args.steps))
    if args.out:
        write_csv(traj, args.out)
        print(f"trajectory written to {args.out} ({traj.times.size} samples)", file=out)
    x0, xf = traj.states[0], traj.states[-1]
    n0, nf = float(np.linalg.norm(x0)), float(np.linalg.norm(xf))
    periods = len(traj.jumps)
    print(f"final time {traj.times[-1]:.6g}, final norm {nf:.6e} (initial {n0:.6e})", file=out)
    if traj.diverged:
        print("diverged: non-finite state, trajectory truncated", file=out)
    if periods and n0 > 0 and nf > 0:
        print(f"per-period contraction {(nf / n0) ** (1.0 / periods):.6f} over {periods} periods", file=out)
    growing = [f"x{i + 1}" for i in range(sys_.n) if abs(xf[i]) > abs(x0[i])]
    if growing or traj.diverged or nf >= n0:
        print(f"non-decaying: {', '.join(growing) if growing else 'norm'}", file=out)
    else:
        print("decaying", file=out)
    return EXIT_OK


def cmd_rate(args, out) -> int:
    traj = read_csv(args.csv)
    fit = convergence_rate(traj, args.discard)
    print(f"slope {fit.slope:.8g}", file=out)
    print(f"residual_norm {fit.residual_norm:.8g}", file=out)
    print(f"samples {fit.samples}", file=out)
    if fit.note:
        print(f"note: {fit.note}", file=out)
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impstab", description="Impulsive stabilization of linear delay equations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="tabulate the discretized and refined spectrum")
    p.add_argument("config")
    p.add_argument("--out", help="spectrum JSON path (default: <config>.spectrum.json)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("synthesize", help="run spectrum, probe and synthesis stages")
    p.add_argument("config")
    p.add_argument("--refine", action="store_true", help="reuse cached spectrum and probe stages")
    p.add_argument("--out", help="artifacts JSON path (default: <config>.artifacts.json)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="simulate the linear impulsive system")
    p.add_argument("config")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--controller", help="JSON file: artifacts, {'matrix': ...} or a nested list")
    group.add_argument("--zero", action="store_true", help="use B = 0")
    p.add_argument("--pulses", type=int, required=True, help="number of impulses P")
    p.add_argument("--steps", type=int, default=64, help="minimum RK4 steps per impulse period")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rate", help="fit the log-norm decay rate of a trajectory CSV")
    p.add_argument("csv")
    p.add_argument("--discard", type=float, default=0.2, help="leading fraction of samples to drop")
    p.set_defaults(func=cmd_rate)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        return args.func(args, out)
    except ImpstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
