"""Command-line entry point: ``parastab <command> [options]``.

Commands
--------
simulate     closed-loop run, CSV trace to ``--out`` (or stdout)
dde          scalar delayed-feedback run and its classification
spectral     diagonal (eigenmode) delayed-feedback run
check-ops    projection / feedback identities on the scenario mesh
sweep-tau    delayed_plain over a delay grid, reports the onset of growth
sweep-noise  delayed_predictor over noise magnitudes, reports plateaus

Exit codes: 0 success, 1 configuration or run failure, 2 unknown command.
"""
from __future__ import annotations

import argparse
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .actuation import ActuatorArray, SensorArray, identity_report
from .config import RunManifest, parse_config, write_trace_csv, trace_body
from .delay import DDEParams, SpectralParams, classify, solve_dde, spectral_demo, tau_hat, window_ratio
from .engine import ScenarioConfig, SimulationTrace, run, sweep_noise, sweep_tau
from .errors import InvalidParameter, NumericalFailure
from .fem import SemidiscreteOperators
from .mesh import build_regions, build_structured_mesh

COMMANDS = ("simulate", "dde", "spectral", "check-ops", "sweep-tau", "sweep-noise")
IDENTITY_TOL = 1e-10


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit 1."""

    def error(self, message):
        raise InvalidParameter(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--tau", type=float)
    p.add_argument("--T", type=float, dest="T")


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode")
    p.add_argument("--rf", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--zeta-mag", type=float, dest="zeta_mag")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parastab", description="Delayed-input parabolic stabilization runs.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in ("simulate", "check-ops", "sweep-tau", "sweep-noise"):
        p = sub.add_parser(name)
        _common(p)
        _scenario_flags(p)
    for name in ("dde", "spectral"):
        p = sub.add_parser(name)
        _common(p)
        p.add_argument("--rho", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--h", type=float)
        p.add_argument("--y0", type=float)
        if name == "spectral":
            p.add_argument("--m", type=int)
    return parser


def _overrides(args, names) -> dict:
    return {k: getattr(args, k) for k in names if getattr(args, k, None) is not None}


def _scenario(args) -> ScenarioConfig:
    cfg = parse_config(args.config) if args.config else ScenarioConfig()
    if not isinstance(cfg, ScenarioConfig):
        raise InvalidParameter(f"{args.config}: expected a closed-loop configuration")
    cfg = cfg.replace(**_overrides(args, ("mode", "tau", "rf", "seed", "zeta_mag", "T")))
    return cfg.validate()


def _dde_params(args) -> DDEParams:
    cfg = parse_config(args.config) if args.config else DDEParams()
    if not isinstance(cfg, DDEParams):
        raise InvalidParameter(f"{args.config}: expected 'kind = dde'")
    cfg = replace(cfg, **_overrides(args, ("rho", "kappa", "tau", "h", "y0", "T")))
    return cfg.validate()


def _emit(trace: SimulationTrace, manifest: RunManifest, out) -> None:
    if out:
        write_trace_csv(trace, out, manifest)
    else:
        sys.stdout.write("\n".join(manifest.lines()) + "\n" + trace_body(trace))


def cmd_simulate(args, out) -> int:
    cfg = _scenario(args)
    trace = run(cfg)
    _emit(trace, RunManifest("simulate", cfg, args.out or "-"), args.out)
    if args.out:
        print(f"wrote {len(trace.t)} rows to {args.out}", file=out)
    return 0


def _delay_trace(t, y, gains_y_delayed, cfg) -> SimulationTrace:
    norm_y = np.abs(y) if y.ndim == 1 else np.linalg.norm(y, axis=1)
    return SimulationTrace(t, norm_y, np.zeros_like(norm_y), gains_y_delayed, cfg)


def cmd_dde(args, out) -> int:
    p = _dde_params(args)
    traj = solve_dde(p, p.T)
    n_tau = int(round(p.tau / p.h))
    delayed = np.zeros_like(traj.y)
    delayed[n_tau:] = traj.y[: len(traj.y) - n_tau]
    trace = _delay_trace(traj.t, traj.y, np.abs(p.kappa * delayed), p)
    verdict = classify(traj)
    if args.out:
        write_trace_csv(trace, args.out, RunManifest("dde", p, args.out))
    print(f"tau_hat = {tau_hat(p.rho, p.kappa):.10g}", file=out)
    print(f"tau = {p.tau:.10g}  window ratio = {window_ratio(traj.y):.6g}", file=out)
    print(verdict, file=out)
    return 0


def cmd_spectral(args, out) -> int:
    base = _dde_params(args)
    kw = {"rho": base.rho, "kappa": base.kappa, "tau": base.tau, "h": base.h}
    if args.m is not None:
        kw["m"] = args.m
    p = SpectralParams.default(**kw).validate()
    traj = spectral_demo(p, base.T)
    coord = traj.y[:, 0]
    if args.out:
        n_tau = int(round(p.tau / p.h))
        delayed = np.zeros_like(traj.y)
        delayed[n_tau:] = traj.y[: len(traj.y) - n_tau]
        u = np.linalg.norm(p.kappa * delayed[:, : p.m], axis=1)
        trace = _delay_trace(traj.t, traj.y, u, base)
        write_trace_csv(trace, args.out, RunManifest("spectral", base, args.out))
    print(f"modes controlled: {p.m}  first eigenvalues: {np.round(p.alphas[:p.m + 1], 6).tolist()}",
          file=out)
    print(f"tau = {p.tau:.10g}  window ratio (coordinate 1) = {window_ratio(coord):.6g}", file=out)
    print(classify(coord), file=out)
    return 0


def cmd_check_ops(args, out) -> int:
    cfg = _scenario(args)
    mesh = build_structured_mesh(cfg.coarse_n)
    ops = SemidiscreteOperators(mesh, cfg.nu)
    act_regions, sen_regions = build_regions(cfg.M, cfg.S)
    act = ActuatorArray(ops, act_regions, cfg.lambda_K)
    sen = SensorArray(ops, sen_regions, cfg.lambda_L)
    report = identity_report(act, sen)
    ok = True
    for name, err in report.items():
        passed = err <= IDENTITY_TOL
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<22s} {err:.3e}", file=out)
    return 0 if ok else 1


def cmd_sweep_tau(args, out) -> int:
    cfg = _scenario(args)
    res = sweep_tau(cfg)
    print("tau        window_ratio  class", file=out)
    for tau, ratio, cls in zip(res.taus, res.ratios, res.classes):
        print(f"{tau:<10.4g} {ratio:<13.6g} {cls}", file=out)
    print(f"nominal    {res.nominal_ratio:<13.6g} {res.nominal_class}", file=out)
    onset = res.onset
    print(f"onset: {'none' if onset is None else f'{onset:.4g}'}", file=out)
    if args.out:
        _write_summary(args.out, ["tau", "window_ratio", "class"],
                       [(t, r, c) for t, r, c in zip(res.taus, res.ratios, res.classes)]
                       + [(0.0, res.nominal_ratio, f"nominal-{res.nominal_class}")])
    return 0


def cmd_sweep_noise(args, out) -> int:
    cfg = _scenario(args)
    zetas, plateaus, _ = sweep_noise(cfg)
    print("zeta_mag   plateau", file=out)
    for z, p in zip(zetas, plateaus):
        print(f"{z:<10.3g} {p:.6e}", file=out)
    if args.out:
        _write_summary(args.out, ["zeta_mag", "plateau"], list(zip(zetas, plateaus)))
    return 0


def _write_summary(path, header, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


_HANDLERS = {
    "simulate": cmd_simulate,
    "dde": cmd_dde,
    "spectral": cmd_spectral,
    "check-ops": cmd_check_ops,
    "sweep-tau": cmd_sweep_tau,
    "sweep-noise": cmd_sweep_noise,
}


def dispatch(command: str, argv: list[str], out=None) -> int:
    """Run ``command`` with its option list; returns the exit code."""
    out = sys.stdout if out is None else out
    if command not in _HANDLERS:
        print(f"parastab: unknown command {command!r}; expected one of {', '.join(COMMANDS)}",
              file=sys.stderr)
        return 2
    try:
        args = build_parser().parse_args([command, *argv])
        return _HANDLERS[command](args, out)
    except (InvalidParameter, NumericalFailure, OSError) as exc:
        print(f"parastab {command}: error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        build_parser().print_help()
        return 0 if argv else 2
    return dispatch(argv[0], argv[1:])


if __name__ == "__main__":
    sys.exit(main())
