"""``nfww`` command line: symbolic pipeline, Kodama solve, obstruction scan and experiments.

Exit codes: 0 success, 1 failed verification, 2 usage error, 3 obstruction hit by a
command that needs the next normalisation step to be solvable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .evalplan import compile_field
from .kodama import KodamaProblem, kodama_solve, kodama_verify, lambda_scan
from .linalg import InconsistentSystem
from .normalform import (
    ObstructionError,
    VerificationError,
    normalize_order2,
    obstruction_report,
    printed_z2_coefficients,
    single_field_coefficients,
)
from .solver import (
    MODELS,
    CFLViolation,
    GridState,
    SimConfig,
    evolve,
    kdv_soliton_width,
    model_fields,
    residual_sweep,
    sech2_pulse,
    two_pulse_state,
    two_soliton_state,
)

log = logging.getLogger("nfww")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_OBSTRUCTED = 0, 1, 2, 3
INITIAL_DATA = ("two-soliton", "two-pulse", "random-solitons")


class UsageError(Exception):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


def _eps_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from exc
    if len(vals) < 3 or not all(0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("need at least three eps values in (0, 1)")
    return vals


class Output:
    """Writes artifacts under ``--out`` (with a manifest) or to stdout."""

    def __init__(self, out: str | None, command: str, args: dict):
        self.dir = Path(out) if out else None
        self.command = command
        self.args = args
        self.files: dict = {}
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def emit(self, name: str, text: str) -> None:
        if self.dir is None:
            sys.stdout.write(text)
            return
        path = self.dir / name
        path.write_text(text)
        self.register(name)

    def register(self, name: str) -> None:
        data = (self.dir / name).read_bytes()
        self.files[name] = {"bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}

    def close(self, status: int) -> None:
        if self.dir is None:
            return
        manifest = {"command": self.command, "arguments": self.args, "exit_code": status,
                    "files": dict(sorted(self.files.items())), "schema": "nfww-manifest/1"}
        (self.dir / "manifest.json").write_text(canonical_json(manifest))
        print(f"wrote {len(self.files)} file(s) and manifest.json to {self.dir}")


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_normalize(args, out: Output, rng) -> int:
    if args.order == 3:
        report = obstruction_report()
        blocked = report.verdict["class_scan"]["obstructed_terms"]
        out.emit("obstruction.json", canonical_json(report.to_json()))
        if blocked:
            shown = "; ".join(f"{c['coeff']} [{c['r_factor']}] x [{c['s_factor']}]" for c in blocked)
            print(f"nfww: order-3 step is obstructed by {shown}", file=sys.stderr)
            return EXIT_OBSTRUCTED
    res = normalize_order2(with_order3=args.order >= 2)
    data = res.to_json()
    if args.order == 1:
        keep = ("Z1", "W1", "G1")
        data["functionals"] = {k: v for k, v in data["functionals"].items() if k in keep}
        first = ("Z1 coefficients", "G1 generator")
        data["discrepancies"] = [d for d in data["discrepancies"] if d["equation"] in first]
    if args.emit_plans:
        data["plans"] = {m: {str(k): compile_field(f).to_json() for k, f in model_fields(m).items()}
                         for m in MODELS}
    if args.format == "json":
        out.emit("normalize.json", canonical_json(data))
    else:
        lines = [f"{name} = int {body['display']} dy" for name, body in data["functionals"].items()]
        lines += [f"check {k}: {v}" for k, v in data["checks"].items()]
        lines += [f"compare {d['equation']}: match={d['match']}" for d in data["discrepancies"]]
        out.emit("normalize.txt", "\n".join(lines) + "\n")
    failed = [k for k, ok in res.checks.items() if not ok]
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_kodama(args, out: Output, rng) -> int:
    explicit = [args.b1, args.b2, args.b3]
    if args.from_z2 and any(b is not None for b in explicit):
        raise UsageError("--from-z2 cannot be combined with --b1/--b2/--b3")
    if not args.from_z2 and any(b is None for b in explicit):
        raise UsageError("give --from-z2 or all of --b1, --b2, --b3")
    if args.from_z2:
        b = single_field_coefficients(normalize_order2(with_order3=False).Z2, "s")
        explicit = [b["u*u1^2"], b["u2^2"], b["u^4"]]
    problem = KodamaProblem(args.alpha, args.beta, *explicit)
    sol = kodama_solve(problem)
    zero = kodama_verify(problem, sol).is_zero()
    mirrored = kodama_solve(problem.mirrored())
    data = {
        "problem": problem.to_json(),
        "solution": sol.to_json(),
        "residual_is_zero": zero,
        "mirrored_field_solution": {k: str(getattr(mirrored, k)) for k in ("a1", "a2", "a3", "c2")},
        "printed_c2": "299/389",
        "printed_z2_coefficients": {k: str(v) for k, v in printed_z2_coefficients().items()},
        "lambda_scan": lambda_scan(problem),
    }
    out.emit("kodama.json", canonical_json(data))
    return EXIT_OK if zero else EXIT_VERIFY


def cmd_obstruction(args, out: Output, rng) -> int:
    out.emit("obstruction.json", canonical_json(obstruction_report().to_json()))
    return EXIT_OK


def initial_state(kind: str, L: float, N: int, rng) -> GridState:
    if kind == "two-soliton":
        return two_soliton_state(L=L, N=N)
    if kind == "two-pulse":
        return two_pulse_state(L=L, N=N)
    # random amplitudes and positions, drawn from the seeded generator
    amps = rng.uniform(0.2, 0.5, size=2)
    centers = rng.uniform(0.15 * L, 0.35 * L, size=2) * np.array([-1.0, 1.0])
    y = np.linspace(-L, L, N, endpoint=False)
    pulse = lambda c, a: sech2_pulse(y, c, a, kdv_soliton_width(a))
    return GridState(L, N, pulse(centers[0], amps[0]), pulse(centers[1], amps[1])).banded()


def cmd_simulate(args, out: Output, rng) -> int:
    state = initial_state(args.initial, args.L, args.N, rng)
    config = SimConfig(eps=args.eps, model=args.model, T_final=args.T, dt=args.dt, n_out=args.n_out)
    traj = evolve(state, config)
    log.info("simulated %s to T=%g in %.2fs (dt=%.3g)", args.model, args.T, traj.runtime, traj.dt)
    summary = {"model": args.model, "eps": args.eps, "L": args.L, "N": args.N, "T": args.T,
               "dt": traj.dt, "initial": args.initial, "energy_drift": traj.energy_drift,
               "final_max_norm": traj.final().max_norm()}
    if out.dir is None:
        out.emit("", canonical_json(summary))
        return EXIT_OK
    dump_dir = out.dir / "states" if args.dump else None
    if dump_dir:
        dump_dir.mkdir(exist_ok=True)
    traj.write_csv(out.dir / "trajectory.csv", dump_dir)
    out.register("trajectory.csv")
    if dump_dir:
        for f in sorted(dump_dir.iterdir()):
            out.register(f"states/{f.name}")
    out.emit("summary.json", canonical_json(summary))
    return EXIT_OK


def cmd_residual_sweep(args, out: Output, rng) -> int:
    state = initial_state(args.initial, args.L, args.N, rng)
    rep = residual_sweep(args.eps_list, state, args.model, residual_T=args.residual_T,
                         horizon=args.horizon)
    data = rep.to_json()
    # wall-clock times would break byte-identical output; they go to the log only
    for e, t in zip(data.pop("runtime"), rep.eps):
        log.info("eps=%g finished in %.2fs", t, e)
    out.emit("residual_report.json", canonical_json(data))
    return EXIT_OK


def cmd_selftest(args, out: Output, rng) -> int:
    from .acceptance import run_all

    results = run_all()
    text = "\n".join(r.line() for r in results) + "\n"
    if out.dir is None:
        sys.stdout.write(text)
    else:
        out.emit("selftest.txt", text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {
    "normalize": cmd_normalize,
    "kodama": cmd_kodama,
    "obstruction": cmd_obstruction,
    "simulate": cmd_simulate,
    "residual-sweep": cmd_residual_sweep,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="nfww", description=__doc__, formatter_class=fmt)
    parser.add_argument("--seed", type=int, default=0, help="seed for any random initial data")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="run the exact normal form pipeline", formatter_class=fmt)
    p.add_argument("--order", type=int, choices=(1, 2, 3), default=2,
                   help="highest order; 3 attempts the next step and exits 3 if it is blocked")
    p.add_argument("--emit-plans", action="store_true", help="include compiled evaluation plans")
    p.add_argument("--format", choices=("json", "text"), default="json", help="output format")
    p.add_argument("--out", default=None, help="artifact directory (stdout when omitted)")

    p = sub.add_parser("kodama", help="solve the order-2 Kodama matching problem", formatter_class=fmt)
    p.add_argument("--from-z2", action="store_true", help="take b1, b2, b3 from the engine's Z2")
    p.add_argument("--b1", type=_fraction, default=None, help="coefficient of u*u1^2")
    p.add_argument("--b2", type=_fraction, default=None, help="coefficient of u2^2")
    p.add_argument("--b3", type=_fraction, default=None, help="coefficient of u^4")
    p.add_argument("--alpha", type=_fraction, default=Fraction(-1, 12), help="coefficient of u1^2")
    p.add_argument("--beta", type=_fraction, default=Fraction(1, 4), help="coefficient of u^3")
    p.add_argument("--out", default=None, help="artifact directory (stdout when omitted)")

    p = sub.add_parser("obstruction", help="classify the order-3 mixed remainder", formatter_class=fmt)
    p.add_argument("--out", default=None, help="artifact directory (stdout when omitted)")

    p = sub.add_parser("simulate", help="integrate one model", formatter_class=fmt)
    p.add_argument("--model", choices=MODELS, default="nf", help="which Hamiltonian to integrate")
    p.add_argument("--eps", type=float, default=0.1, help="small parameter")
    p.add_argument("--L", type=float, default=40.0, help="half-length of the periodic box")
    p.add_argument("--N", type=int, default=1024, help="number of grid points")
    p.add_argument("--T", type=float, default=10.0, help="final time")
    p.add_argument("--dt", type=float, default=None, help="time step (automatic when omitted)")
    p.add_argument("--n-out", type=int, default=20, help="number of recorded output times")
    p.add_argument("--initial", choices=INITIAL_DATA, default="two-soliton", help="initial data")
    p.add_argument("--dump", action="store_true", help="also dump every recorded state")
    p.add_argument("--out", default=None, help="artifact directory (summary to stdout when omitted)")

    p = sub.add_parser("residual-sweep", help="residual and closeness scaling in eps", formatter_class=fmt)
    p.add_argument("--eps-list", type=_eps_list, default=[0.04, 0.08, 0.16], help="comma separated eps")
    p.add_argument("--initial", choices=INITIAL_DATA, default="two-soliton", help="initial data")
    p.add_argument("--model", choices=("nf", "hz"), default="nf", help="reduced model to test")
    p.add_argument("--L", type=float, default=40.0, help="half-length of the periodic box")
    p.add_argument("--N", type=int, default=1024, help="number of grid points")
    p.add_argument("--residual-T", type=float, default=0.5, help="residual sampled on [0, this]")
    p.add_argument("--horizon", type=float, default=1.0, help="closeness horizon is this / eps")
    p.add_argument("--out", default=None, help="artifact directory (stdout when omitted)")

    p = sub.add_parser("selftest", help="run the acceptance checks", formatter_class=fmt)
    p.add_argument("--out", default=None, help="artifact directory (stdout when omitted)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    rng = np.random.default_rng(args.seed)
    log.info("seed=%d NFWW_THREADS=%s", args.seed, os.environ.get("NFWW_THREADS", "1"))
    recorded = {k: (str(v) if isinstance(v, Fraction) else v) for k, v in sorted(vars(args).items())
                if k not in ("out", "verbose")}
    out = Output(getattr(args, "out", None), args.command, recorded)
    try:
        status = COMMANDS[args.command](args, out, rng)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nfww: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ObstructionError as exc:
        print(f"nfww: obstructed: {exc}", file=sys.stderr)
        status = EXIT_OBSTRUCTED
    except (VerificationError, InconsistentSystem) as exc:
        print(f"nfww: verification failed: {exc}", file=sys.stderr)
        status = EXIT_VERIFY
    except (ValueError, CFLViolation) as exc:
        # bad parameter values (eps out of range, dt too large, ...) are usage errors
        print(f"nfww: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.close(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
