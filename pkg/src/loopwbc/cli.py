"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 scenario failure. Errors go to
stderr as ``ERROR <code>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import LoopWbcError, ParseError, ValidationError
from .model import GeneralizedState, load_model, resolve_data_path, validate_state

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"ERROR {EXIT_INVALID}: {message}\n")
        raise SystemExit(EXIT_INVALID)


def _fail(code: int, message: str) -> int:
    sys.stderr.write(f"ERROR {code}: {message}\n")
    return code


def _setup_logging() -> None:
    level = os.environ.get("LOOPWBC_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loopwbc", description="Wheeled-biped dynamics, whole-body control and simulation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--output", help="CSV log path (default: the scenario's output, else stdout)")
    s.add_argument("--dump-qp", metavar="DIR", help="write every hierarchical QP to DIR as JSON")
    s.add_argument("--summary", metavar="JSON", help="also write the run summary to this file")

    lint = sub.add_parser("lint-model", help="validate a model file")
    lint.add_argument("model")

    lin = sub.add_parser("linearize", help="print the pendulum linearization and LQR gains as JSON")
    lin.add_argument("--model", required=True)
    lin.add_argument("--state", required=True, help="state JSON (r, R, phi, u) or standing pose (hip, pitch, speed)")
    lin.add_argument("--Ts", type=float, default=0.0025)

    sub.add_parser("version", help="print the package version")
    return p


def _cmd_simulate(args) -> int:
    from .sim import load_scenario, run_scenario

    scenario = load_scenario(args.scenario)
    if args.output:
        scenario.output = args.output
    to_stdout = scenario.output is None
    result = run_scenario(scenario, dump_qp=args.dump_qp)
    summary = result.summary.to_dict()
    if to_stdout:
        sys.stdout.write(result.log.to_csv())
    else:
        sys.stdout.write(json.dumps(summary, indent=1) + "\n")
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=1) + "\n")
    if not result.summary.success:
        return _fail(EXIT_FAILED, f"scenario failed: {result.summary.failure} at t={result.summary.failure_time:.4f} s")
    return EXIT_OK


def _cmd_lint(args) -> int:
    model = load_model(args.model)
    from .assembly import standing_state

    standing_state(model)  # the loops must close and both wheels reach the ground
    info = {"name": model.name, "bodies": len(model.bodies), "joints": model.nj, "loops": len(model.loops),
            "wheels": len(model.wheels), "actuators": model.ntau, "n_u": model.nu,
            "total_mass": round(model.total_mass, 6)}
    sys.stdout.write(json.dumps(info) + "\n")
    return EXIT_OK


def _load_state(model, path):
    p = resolve_data_path(path)
    try:
        doc = json.loads(Path(p).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{p}: {exc}") from exc
    if {"r", "R", "phi", "u"} <= set(doc):
        try:
            s = GeneralizedState.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{p}: {exc}") from exc
        validate_state(model, s)
        return s
    from .assembly import standing_state

    unknown = set(doc) - {"hip", "pitch", "speed", "yaw", "yaw_rate", "position"}
    if unknown:
        raise ValidationError(f"{p}: unknown keys {sorted(unknown)}")
    return standing_state(model, hip=doc.get("hip"), pitch=doc.get("pitch"), speed=float(doc.get("speed", 0.0)),
                          yaw=float(doc.get("yaw", 0.0)), yaw_rate=float(doc.get("yaw_rate", 0.0)),
                          position=tuple(doc.get("position", (0.0, 0.0))))


def _cmd_linearize(args) -> int:
    from .kinematics import KinematicsCache
    from .lqr import LqrBalancer, lump_pendulum

    model = load_model(args.model)
    state = _load_state(model, args.state)
    pend = lump_pendulum(model, KinematicsCache(model, state))
    bal = LqrBalancer(Ts=args.Ts)
    gains = bal.gains(pend)
    lin = bal.linear
    out = {
        "theta": pend.theta, "theta_dot": pend.theta_dot, "v": pend.v, "length": pend.length,
        "a31": lin.a31, "b31": lin.b31, "Ts": lin.Ts,
        "A": lin.A.tolist(), "B": lin.B.tolist(), "Ad": lin.Ad.tolist(), "Bd": lin.Bd.tolist(),
        "K": np.asarray(gains.K).reshape(-1).tolist(), "P": gains.P.tolist(),
        "dare_residual": gains.residual, "spectral_radius": gains.spectral_radius,
    }
    sys.stdout.write(json.dumps(out, indent=1) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "version":
        sys.stdout.write(f"loopwbc {__version__}\n")
        return EXIT_OK
    handlers = {"simulate": _cmd_simulate, "lint-model": _cmd_lint, "linearize": _cmd_linearize}
    try:
        return handlers[args.command](args)
    except (ParseError, ValidationError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except LoopWbcError as exc:
        return _fail(EXIT_FAILED, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
