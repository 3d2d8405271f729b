"""Command-line front end.

Every output file starts with a run manifest (subcommand, parameters, seed,
version, timestamp); ``lztrap replay FILE`` re-runs it and reproduces the
file byte for byte.  Exit codes: 0 success, 2 invalid arguments, 3 numerical
abort, 4 I/O failure; ``optimize`` additionally returns 5 when the iteration
cap is hit and 6 when the line search fails.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import linalg2 as la
from .dynamics import ControlPulse, propagate
from .noise import NoiseKind, NoiseSpec, UndefinedSpeedLimit, noise_report, qsl_time
from .objectives import (
    Gate,
    Observable,
    Transition,
    box_variation,
    classify_critical,
    cosine_variation,
    nonlinear_second_variation,
    second_order_expansion,
    Tolerances,
)
from .optimizer import (
    CONVERGED,
    ITERATION_CAP,
    LINE_SEARCH_FAILED,
    NumericalAbort,
    OptimizerConfig,
    TrapRunRecord,
    default_workers,
    landscape_scan,
    maximize,
    run_rng,
    trap_probability,
)
from .reporting import (
    RunManifest,
    pulse_to_dict,
    read_manifest,
    read_pulse,
    render_csv,
    render_json,
    write_text,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
EXIT_ITERATION_CAP = 5
EXIT_LINE_SEARCH = 6


class UsageError(Exception):
    pass


# -- argument parsing helpers ---------------------------------------------------

_S = 1 / math.sqrt(2)
NAMED_STATES = {
    "0": [1, 0],
    "1": [0, 1],
    "+": [_S, _S],
    "-": [_S, -_S],
    "+i": [_S, 1j * _S],
    "-i": [_S, -1j * _S],
    "t+": [_S, np.exp(1j * np.pi / 4) * _S],
}

NAMED_GATES = {
    "identity": la.IDENTITY,
    "x": la.SIGMA_X,
    "y": la.SIGMA_Y,
    "z": la.SIGMA_Z,
    "hadamard": np.array([[1, 1], [1, -1]]) * _S,
    "s": np.diag([1, 1j]),
    "t": np.diag([1, np.exp(1j * np.pi / 4)]),
}

NAMED_OBSERVABLES = {"x": la.SIGMA_X, "y": la.SIGMA_Y, "z": la.SIGMA_Z}


def _complex_list(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = [complex(tok.strip().replace(" ", "")) for tok in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what} needs {n} comma-separated entries, got {len(vals)}")
    return np.array(vals, dtype=complex)


def parse_state(text: str) -> np.ndarray:
    if text in NAMED_STATES:
        return np.array(NAMED_STATES[text], dtype=complex)
    v = _complex_list(text, 2, "state")
    try:
        return la.state(v)
    except ValueError as exc:
        raise UsageError(f"state {text!r}: {exc}") from None


def parse_matrix(text: str, named: dict, what: str) -> np.ndarray:
    if text.lower() in named:
        return np.array(named[text.lower()], dtype=complex)
    return _complex_list(text, 4, what).reshape(2, 2)


def parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def parse_ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse integer list {text!r}") from None


def parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"range must look like LO:HI, got {text!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise UsageError(f"invalid range {text!r}")
    return lo, hi


def build_spec(args):
    try:
        if args.objective == "transition":
            return Transition(parse_state(args.i), parse_state(args.f))
        if args.objective == "observable":
            rho = args.rho0
            if rho in NAMED_STATES:
                v = np.array(NAMED_STATES[rho], dtype=complex)
                rho_m = np.outer(v, v.conj())
            else:
                rho_m = _complex_list(rho, 4, "rho0").reshape(2, 2)
            return Observable(rho_m, parse_matrix(args.observable, NAMED_OBSERVABLES, "observable"))
        if args.objective == "gate":
            return Gate(parse_matrix(args.gate, NAMED_GATES, "gate"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raise UsageError(f"unknown objective {args.objective!r}")


def add_objective_flags(p):
    g = p.add_argument_group("objective")
    g.add_argument("--objective", choices=["transition", "observable", "gate"], default="transition")
    g.add_argument("--i", default="0", help="initial state: 0, 1, +, -, +i, -i, t+ or 'a,b'")
    g.add_argument("--f", default="1", help="target state, same syntax as --i")
    g.add_argument("--rho0", default="0", help="initial density matrix: named pure state or 4 entries")
    g.add_argument("--observable", default="z", help="x, y, z or 4 entries (row major)")
    g.add_argument("--gate", default="hadamard", help="identity, x, y, z, hadamard, s, t or 4 entries")


def _params(args) -> dict:
    skip = {"func", "out", "figure", "records", "timestamp", "workers"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _manifest(args, seed=None) -> RunManifest:
    return RunManifest.create(args.command, _params(args), seed, getattr(args, "timestamp", None))


def _figure_path(args, default_suffix: str):
    fig = getattr(args, "figure", None)
    if fig is None:
        return None
    if fig == "auto":
        if args.out == "-":
            raise UsageError("--figure auto needs --out to be a file")
        return str(Path(args.out).with_suffix(default_suffix))
    return fig


# -- subcommands -------------------------------------------------------------------


def cmd_scan(args) -> int:
    spec = build_spec(args)
    if args.N not in (1, 2):
        raise UsageError("scan supports --N 1 or --N 2")
    default = "-3:3" if args.N == 1 else "-2:2"
    ranges = [parse_range(r) for r in (args.range or [default])]
    if len(ranges) == 1:
        ranges = ranges * args.N
    if len(ranges) != args.N:
        raise UsageError(f"give one --range or exactly {args.N}")
    res = args.res if args.res is not None else (601 if args.N == 1 else 401)
    if res < 1:
        raise UsageError("--res must be >= 1")
    axes = [np.array([lo]) if lo == hi else np.linspace(lo, hi, res) for lo, hi in ranges]
    scan = landscape_scan(spec, args.T, args.delta, axes)

    header = [f"a{k + 1}" for k in range(args.N)] + ["J"]
    grids = np.meshgrid(*scan.axes, indexing="ij")
    cols = [g.reshape(-1) for g in grids] + [scan.values.reshape(-1)]
    footer = {}
    if scan.closed_form is not None:
        header.append("J_closed_form")
        cols.append(scan.closed_form.reshape(-1))
        footer["max_discrepancy"] = scan.max_discrepancy
    text = render_csv(_manifest(args), header, zip(*cols), footer)
    write_text(args.out, text)
    fig = _figure_path(args, ".png")
    if fig:
        from .plotting import scan_figure

        scan_figure(scan, fig, title=f"N={args.N}, T={args.T:g}")
    return EXIT_OK


def _optimizer_config(args) -> OptimizerConfig:
    try:
        return OptimizerConfig(
            max_iterations=args.max_iterations,
            grad_tolerance=args.grad_tol,
            armijo=args.armijo,
            shrink=args.shrink,
            max_backtracks=args.max_backtracks,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_optimize(args) -> int:
    spec = build_spec(args)
    config = _optimizer_config(args)
    if args.init is not None:
        a0 = np.array(parse_floats(args.init))
        if a0.size != args.N:
            raise UsageError(f"--init has {a0.size} amplitudes but --N is {args.N}")
        seed = None
    else:
        seed = args.seed
        a0 = run_rng(seed, 0).uniform(-args.A, args.A, size=args.N)
    pulse = ControlPulse.uniform(args.N, args.T, a0)
    try:
        res = maximize(spec, pulse, args.delta, config)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    verdict = classify_critical(
        spec, propagate(res.pulse, args.delta), Tolerances(grad=args.grad_tol), gradient_source="segments"
    )
    record = TrapRunRecord(
        seed=seed if seed is not None else -1, run_index=0, N=args.N, T=args.T, delta=args.delta,
        A=args.A, initial_amplitudes=a0.tolist(), final_amplitudes=res.pulse.amplitudes.tolist(),
        final_J=res.value, iterations=res.iterations, grad_sup=res.grad_sup, reason=res.reason,
        trapped=bool(res.value < args.threshold), threshold=args.threshold, trajectory=res.trajectory,
    )
    payload = {
        "record": record.to_dict(),
        "classification": verdict.kind.value,
        "pulse": pulse_to_dict(res.pulse, args.delta),
    }
    write_text(args.out, render_json(_manifest(args, seed), payload))
    return {CONVERGED: EXIT_OK, ITERATION_CAP: EXIT_ITERATION_CAP, LINE_SEARCH_FAILED: EXIT_LINE_SEARCH}[res.reason]


def cmd_trap_prob(args) -> int:
    spec = build_spec(args)
    config = _optimizer_config(args)
    ns = parse_ints(args.N)
    if not ns or min(ns) < 1:
        raise UsageError("--N needs positive integers")
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    workers = args.workers or default_workers()
    rows, stats, all_records = [], [], []
    for n in ns:
        st, recs = trap_probability(
            spec, n, args.T, args.delta, args.A, args.runs, args.seed, workers, config, args.threshold
        )
        stats.append(st)
        all_records.extend(recs)
        rows.append([st.N, st.runs, st.trapped, st.aborted, st.probability, st.stderr])
    header = ["N", "runs", "trapped", "aborted", "probability", "stderr"]
    manifest = _manifest(args, args.seed)
    write_text(args.out, render_csv(manifest, header, rows))
    if args.records:
        lines = [json.dumps({"manifest": manifest.to_dict()})]
        lines += [json.dumps(r.to_dict()) for r in all_records]
        write_text(args.records, "\n".join(lines) + "\n")
    fig = _figure_path(args, ".png")
    if fig:
        from .plotting import trap_figure

        trap_figure(stats, fig, title=f"T={args.T:g}, A={args.A:g}, {args.runs} runs")
    return EXIT_OK


def cmd_noise(args) -> int:
    spec = build_spec(args)
    try:
        pulse, file_delta = read_pulse(args.pulse)
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read pulse file: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"pulse file {args.pulse}: {exc}") from None
    delta = args.delta if args.delta is not None else (file_delta or 1.0)
    trace = propagate(pulse, delta)
    kinds = ["additive", "multiplicative"] if args.kind == "both" else [args.kind]
    sigmas = parse_floats(args.sigma)
    if any(s < 0 for s in sigmas):
        raise UsageError("sigma values must be non-negative")
    workers = args.workers or default_workers()
    reports = []
    try:
        for kind in kinds:
            for sigma in sigmas:
                reports.append(noise_report(
                    spec, trace, NoiseSpec(kind, sigma), args.samples, args.dt, args.seed, workers
                ))
    except NotImplementedError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    header = ["kind", "sigma", "J0", "predicted_decrease", "bound", "energy",
              "mc_mean", "mc_stderr", "mc_decrease", "samples"]
    rows = [[r.kind.value, r.sigma, r.noiseless, r.predicted, r.bound, r.energy,
             r.mc_mean, r.mc_stderr, r.mc_decrease, r.samples] for r in reports]
    write_text(args.out, render_csv(_manifest(args, args.seed), header, rows))
    fig = _figure_path(args, ".png")
    if fig:
        from .plotting import noise_figure

        noise_figure(reports, fig)
    return EXIT_OK


SECOND_VARIATIONS = {
    # name: (variation, target as a multiple of pi * alpha)
    "box": (box_variation(0.0, math.pi), -1.0),
    "cos4": (cosine_variation(4.0, 0.0, math.pi), 1.0 / 6.0),
}


def cmd_appendix(args) -> int:
    if args.T < math.pi:
        raise UsageError("--T must be at least pi (the variations live on [0, pi])")
    spec = build_spec(args)
    if not isinstance(spec, Transition):
        raise UsageError("appendix runs on transition objectives")
    scales = parse_floats(args.scales)
    if len(scales) != 2 or scales[0] == scales[1] or min(scales) <= 0:
        raise UsageError("--scales needs two distinct positive values")
    out = {}
    all_pass = True
    alpha = initial = None
    for name, (var, multiple) in SECOND_VARIATIONS.items():
        so = second_order_expansion(spec, var, args.T, (0.0, math.pi), args.delta)
        alpha, initial = so.alpha, so.initial_value
        rich, raw = nonlinear_second_variation(
            spec, var, args.T, (0.0, math.pi), scales, args.segments, args.delta
        )
        target = multiple * math.pi * so.alpha
        scale = abs(target) if target != 0 else 1.0
        ok_q = abs(so.second - target) <= 1e-3 * scale
        ok_r = abs(rich - target) <= 1e-3 * scale
        all_pass &= ok_q and ok_r
        out[name] = {
            "first_variation": so.first,
            "second_variation_quadrature": so.second,
            "second_variation_propagation": rich,
            "ratio_quadrature_to_pi_alpha": so.second / (math.pi * so.alpha) if so.alpha else None,
            "raw_ratios": dict(zip(map(str, scales), raw)),
            "target": target,
            "target_multiple_of_pi_alpha": multiple,
            "quadrature_matches_target": ok_q,
            "propagation_matches_target": ok_r,
        }
    signs = {k: np.sign(v["second_variation_quadrature"]) for k, v in out.items()}
    payload = {
        "alpha": alpha,
        "initial_value": initial,
        "variations": out,
        "opposite_signs": bool(alpha != 0 and signs["box"] == -signs["cos4"] != 0),
        "all_targets_met": bool(all_pass),
    }
    write_text(args.out, render_json(_manifest(args), payload))
    return EXIT_OK


def cmd_qsl(args) -> int:
    try:
        t = qsl_time(parse_state(args.i), parse_state(args.f), args.delta)
    except UndefinedSpeedLimit as exc:
        raise UsageError(str(exc)) from None
    write_text(args.out, render_json(_manifest(args), {"T_qsl": t}))
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        manifest = read_manifest(args.file)
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read manifest: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    if manifest.subcommand == "replay" or manifest.subcommand not in COMMANDS:
        raise UsageError(f"cannot replay subcommand {manifest.subcommand!r}")
    ns = argparse.Namespace(**manifest.parameters)
    ns.command = manifest.subcommand
    ns.out = args.out
    ns.timestamp = manifest.timestamp
    ns.figure = None
    ns.records = None
    ns.workers = args.workers
    return COMMANDS[manifest.subcommand](ns)


COMMANDS = {
    "scan": cmd_scan,
    "optimize": cmd_optimize,
    "trap-prob": cmd_trap_prob,
    "noise": cmd_noise,
    "appendix": cmd_appendix,
    "qsl": cmd_qsl,
}


def _add_optimizer_flags(p):
    g = p.add_argument_group("optimizer")
    g.add_argument("--max-iterations", type=int, default=10_000)
    g.add_argument("--grad-tol", type=float, default=1e-8)
    g.add_argument("--armijo", type=float, default=1e-4)
    g.add_argument("--shrink", type=float, default=0.5)
    g.add_argument("--max-backtracks", type=int, default=40)
    g.add_argument("--threshold", type=float, default=0.99, help="trap threshold on final J")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lztrap", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="-"):
        p.add_argument("--out", default=out_default, help="output path ('-' for stdout)")
        p.add_argument("--timestamp", default=None, help="manifest timestamp override")

    p = sub.add_parser("scan", help="objective on a grid of N=1 or N=2 amplitudes")
    add_objective_flags(p)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--range", action="append", help="LO:HI, once for all axes or once per axis")
    p.add_argument("--res", type=int, default=None, help="points per axis (601 for N=1, 401 for N=2)")
    p.add_argument("--figure", nargs="?", const="auto", default=None)
    common(p)

    p = sub.add_parser("optimize", help="BFGS ascent from a random or explicit start")
    add_objective_flags(p)
    p.add_argument("--N", type=int, default=40)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--A", type=float, default=10.0, help="random start half-width")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default=None, help="explicit comma-separated initial amplitudes")
    _add_optimizer_flags(p)
    common(p)

    p = sub.add_parser("trap-prob", help="trapping probability of random-start BFGS runs")
    add_objective_flags(p)
    p.add_argument("--N", default="1,2,4,6,8,10,15", help="comma-separated segment counts")
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--A", type=float, default=10.0)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help="default: $LZTRAP_WORKERS or 1")
    p.add_argument("--records", default=None, help="also write per-run records (JSON lines)")
    p.add_argument("--figure", nargs="?", const="auto", default=None)
    _add_optimizer_flags(p)
    common(p)

    p = sub.add_parser("noise", help="white-noise decrease: second order vs Monte Carlo")
    add_objective_flags(p)
    p.add_argument("--pulse", required=True, help="pulse JSON (or an optimize output)")
    p.add_argument("--kind", choices=["additive", "multiplicative", "both"], default="both")
    p.add_argument("--sigma", default="0.01,0.02,0.05")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--dt", type=float, default=0.0125)
    p.add_argument("--delta", type=float, default=None, help="default: from the pulse file, else 1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--figure", nargs="?", const="auto", default=None)
    common(p)

    p = sub.add_parser("appendix", help="second variations around the zero control")
    add_objective_flags(p)
    p.set_defaults(f="t+")
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--scales", default="1e-2,1e-3")
    p.add_argument("--segments", type=int, default=4000)
    common(p)

    p = sub.add_parser("qsl", help="quantum speed limit estimate")
    p.add_argument("--i", default="0")
    p.add_argument("--f", default="1")
    p.add_argument("--delta", type=float, default=1.0)
    common(p)

    p = sub.add_parser("replay", help="re-run the manifest stored in an output file")
    p.add_argument("file")
    p.add_argument("--out", default="-")
    p.add_argument("--workers", type=int, default=None)
    return parser


# options whose values may legitimately start with '-' (ranges, states, lists)
DASH_VALUE_OPTIONS = {"--range", "--i", "--f", "--init", "--gate", "--rho0", "--observable"}


def _glue_dash_values(argv: list[str]) -> list[str]:
    """Rewrite ``--range -3:3`` as ``--range=-3:3`` so argparse keeps the value."""
    out = []
    k = 0
    while k < len(argv):
        tok = argv[k]
        if tok in DASH_VALUE_OPTIONS and k + 1 < len(argv) and argv[k + 1].startswith("-"):
            out.append(f"{tok}={argv[k + 1]}")
            k += 2
            continue
        out.append(tok)
        k += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(_glue_dash_values(argv))
    func = cmd_replay if args.command == "replay" else COMMANDS[args.command]
    try:
        return func(args)
    except UsageError as exc:
        print(f"lztrap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"lztrap {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"lztrap {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
