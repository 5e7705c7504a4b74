"""Command line front end.

Exit codes: 0 pass, 1 residual or regularity failure, 2 configuration or
parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys

import numpy as np

from .config import CandidateEntry, RunConfig, load_config
from .equivalence import equivalence_report
from .errors import ConfigError, ExprSyntaxError, InputError, NumericalError
from .ham_residuals import default_ham_coefficients, hamiltonian_suite
from .jet_core import Axis, GridSpec, ResidualReport, grid_report, regularity_check, split_columns
from .lag_residuals import default_lag_coefficients, lagrangian_suite
from .legendre import Hamiltonian, inverse_legendre_batch, restricted_legendre_batch
from .reconstruction import el_section_residual, holonomy_residual, integrate_distribution, \
    path_independence_check

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
ROUND_TRIP_TOL = 1e-8
RECONSTRUCT_TOL = 1e-6
VELOCITY_COUNT = 5

log = logging.getLogger("mshj")


class Output:
    def __init__(self, quiet: bool, stream=None):
        self.quiet = quiet
        self.stream = stream or sys.stdout

    def line(self, text: str, always: bool = False) -> None:
        if always or not self.quiet:
            print(text, file=self.stream)

    def lines(self, lines: list[str]) -> None:
        if not lines:
            return
        self.line(lines[0], always=True)
        for text in lines[1:]:
            self.line(text)


def _jobs(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("MSHJ_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MSHJ_JOBS must be an integer, got {env!r}") from None
    return 1


def _setting(args, cfg: RunConfig, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return cfg.run.get(key, default)


def _grid(args, cfg: RunConfig) -> GridSpec:
    grid = cfg.grid
    if args.grid_scale is not None:
        if args.grid_scale < 1:
            raise ConfigError("--grid-scale must be a positive integer")
        grid = grid.scaled(args.grid_scale)
    return grid


def _tol(args, cfg: RunConfig) -> float:
    return args.tol if args.tol is not None else cfg.tol


def _require_theory(cfg: RunConfig, what: str):
    if cfg.theory is None:
        raise ConfigError(f"{what} needs a Lagrangian in [model]")
    return cfg.theory


def _write_pointwise(path: str, grid: GridSpec, report: ResidualReport) -> None:
    names = [f.name for f in report.families.values() if f.evaluated and f.components]
    cols = grid.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(grid.names + names)
        data = [cols[k] for k in grid.names] + [report.pointwise[k] for k in names]
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])


# ------------------------------------------------------------------ commands


def cmd_check_theory(args, cfg: RunConfig, out: Output) -> int:
    theory = _require_theory(cfg, "check-theory")
    c = theory.coords
    vb = cfg.bundle.velocity_box if cfg.bundle is not None else 1.0
    given = {a.name: a for a in cfg.velocity_axes}
    vel = [given.get(name, Axis(name, -vb, vb, VELOCITY_COUNT)) for name in c.v]
    base = _grid(args, cfg)
    jet = GridSpec(list(base.axes) + vel, base.cap)
    reg = regularity_check(theory, jet)
    where = ", ".join(f"{k}={v:.4g}" for k, v in reg.argmin.items())
    out.line(f"regularity: {'regular' if reg.regular else 'NOT regular'} "
             f"(min |det Hessian| {reg.min_abs_det:.6g} at {where})", always=True)
    if not reg.regular:
        return EXIT_FAIL
    worst, worst_h = 0.0, 0.0
    derived = Hamiltonian.derived(theory) if cfg.bundle and cfg.bundle.closed_form_H else None
    chunk = 16384
    for start in range(0, jet.size, chunk):
        stop = min(start + chunk, jet.size)
        x, u, v = split_columns(c, jet.columns(start, stop), stop - start, c.v)
        p = restricted_legendre_batch(theory, x, u, v)
        back, _ = inverse_legendre_batch(theory, x, u, p)
        worst = max(worst, float(np.max(np.abs(back - v))))
        if derived is not None:
            keep = np.ones(stop - start, dtype=bool)
            if cfg.bundle.delta is not None:
                keep = np.sum(p.reshape(-1, stop - start) ** 2, axis=0) <= 1.0 - cfg.bundle.delta
            if keep.any():
                hd = derived.values(x[:, keep], u[:, keep], p[..., keep], 0)[0]
                hc = cfg.H.values(x[:, keep], u[:, keep], p[..., keep], 0)[0]
                worst_h = max(worst_h, float(np.max(np.abs(hd - hc))))
    ok = worst < ROUND_TRIP_TOL
    out.line(f"legendre round trip: max |v - Leg^-1(Leg(v))| = {worst:.3e} over {jet.size} jet points")
    if derived is not None:
        out.line(f"derived vs closed-form Hamiltonian: max difference {worst_h:.3e}")
    out.line("theory check: " + ("PASS" if ok else "FAIL"), always=True)
    return EXIT_PASS if ok else EXIT_FAIL


def _generating(cfg: RunConfig, entry: CandidateEntry, name: str | None):
    if name is not None:
        return cfg.candidate(("generating",), name).value
    if entry.W is not None:
        return entry.W
    found = cfg.candidate(("generating",))
    return found.value if found else None


def cmd_verify(args, cfg: RunConfig, out: Output) -> int:
    side = _setting(args, cfg, "side")
    mode = _setting(args, cfg, "mode", "standard")
    if mode not in ("generalized", "standard", "classic"):
        raise ConfigError(f"mode must be generalized, standard or classic, got {mode!r}")
    name = cfg.run.get("candidate") if args.candidate is None else args.candidate
    if side is None:
        entry = cfg.candidate(("jetfield", "section"), name)
        if entry is None:
            raise ConfigError("verify needs a jetfield or section candidate")
        side = entry.side
    elif side == "lagrangian":
        entry = cfg.candidate(("jetfield",), name)
    elif side == "hamiltonian":
        entry = cfg.candidate(("section",), name)
    else:
        raise ConfigError(f"side must be lagrangian or hamiltonian, got {side!r}")
    if entry is None:
        kind = "jetfield" if side == "lagrangian" else "section"
        raise ConfigError(f"verify --side {side} needs a {kind} candidate")
    W = _generating(cfg, entry, cfg.run.get("generating"))
    if mode == "classic" and W is None:
        raise ConfigError("classic mode needs a generating candidate")
    coeff_name = cfg.run.get("coefficients")
    errors = cfg.run.get("errors", "raise")
    if errors not in ("raise", "skip"):
        raise ConfigError("[run] errors must be raise or skip")
    if side == "lagrangian":
        theory = _require_theory(cfg, "the Lagrangian suite")
        coeff = cfg.candidate(("lag_coefficients",), coeff_name)
        F = coeff.value if coeff else default_lag_coefficients(theory, entry.value)
        op, info = lagrangian_suite(theory, entry.value, mode, F, W,
                                    isotropy_form=cfg.run.get("isotropy_form", "exact"))
    else:
        coeff = cfg.candidate(("ham_coefficients",), coeff_name)
        G = coeff.value if coeff else default_ham_coefficients(cfg.H, entry.value)
        op, info = hamiltonian_suite(cfg.H, entry.value, mode, G, W, guard=cfg.guard)
    grid = _grid(args, cfg)
    csv_path = args.csv or cfg.run.get("csv")
    report = grid_report(op, grid, _tol(args, cfg), informational=info, errors=errors,
                         jobs=_jobs(args.jobs), keep_pointwise=bool(csv_path),
                         label=f"{side} {mode} [{entry.name}]")
    out.lines(report.summary_lines())
    if csv_path:
        _write_pointwise(csv_path, grid, report)
        out.line(f"per-point residuals written to {csv_path}")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_equivalence(args, cfg: RunConfig, out: Output) -> int:
    theory = _require_theory(cfg, "equivalence")
    name = cfg.run.get("candidate") if args.candidate is None else args.candidate
    entry = cfg.candidate(("jetfield",), name)
    if entry is None:
        raise ConfigError("equivalence needs a jetfield candidate")
    mode = _setting(args, cfg, "mode", "standard")
    W = _generating(cfg, entry, cfg.run.get("generating"))
    if mode == "classic" and W is None:
        raise ConfigError("classic mode needs a generating candidate")
    coeff = cfg.candidate(("lag_coefficients",), cfg.run.get("coefficients"))
    rep = equivalence_report(theory, entry.value, _grid(args, cfg), _tol(args, cfg), side="lagrangian",
                             F=coeff.value if coeff else None, H=cfg.H, mode=mode, W=W,
                             jobs=_jobs(args.jobs), errors=cfg.run.get("errors", "raise"),
                             guard=cfg.guard)
    out.lines(rep.summary_lines())
    return EXIT_PASS if rep.verdict == "pass-pass" and rep.transport.passed else EXIT_FAIL


def cmd_reconstruct(args, cfg: RunConfig, out: Output) -> int:
    rc = cfg.reconstruct
    entry = cfg.candidate(("jetfield",), args.candidate or rc.candidate)
    if entry is None:
        raise ConfigError("reconstruct needs a jetfield candidate")
    psi = entry.value
    m = cfg.m
    axes = {a.name: a for a in cfg.grid.axes}
    xaxes = [axes[name] for name in cfg.coords.x]
    lo = rc.lo or [a.lo for a in xaxes]
    hi = rc.hi or [a.hi for a in xaxes]
    if len(lo) != m or len(hi) != m:
        raise ConfigError(f"reconstruct box needs {m} lo and hi values")
    for a, l, h in zip(xaxes, lo, hi):
        if l < a.lo - 1e-12 or h > a.hi + 1e-12:
            raise ConfigError(f"reconstruct box [{l}, {h}] leaves the grid block on {a.name}")
    steps = rc.steps or [max(1, a.count - 1) for a in xaxes]
    if args.grid_scale:
        steps = [s * args.grid_scale for s in steps]
    x0 = args.x0 if args.x0 is not None else (rc.x0 or lo)
    u0 = args.u0 if args.u0 is not None else rc.u0
    if u0 is None:
        raise ConfigError("reconstruct needs u0 (--u0 or [reconstruct] u0)")
    path = args.csv or rc.csv
    if not path:
        raise ConfigError("reconstruct needs an output path (--csv or [reconstruct] csv)")
    box = list(zip(lo, hi))
    trace = integrate_distribution(psi, x0, u0, box, steps, rc.order)
    trace.write_csv(path)
    tol = args.tol if args.tol is not None else RECONSTRUCT_TOL
    ok = True
    out.line(f"trace: {trace.values[0].size} nodes, h = {', '.join(f'{v:.3g}' for v in trace.h)}; "
             f"written to {path}")
    if all(s >= 2 for s in trace.shape):
        hol = holonomy_residual(trace, psi)
        if cfg.theory is None:
            out.line(f"holonomy residual: {hol.max_abs:.3e}")
            ok &= hol.max_abs < tol
        else:
            # second-order stencil error; reported, not gated
            out.line(f"holonomy residual [info]: {hol.max_abs:.3e}")
            el = el_section_residual(cfg.theory, trace)
            out.line(f"euler-lagrange residual along the section: {el.max_abs:.3e}")
            ok &= el.max_abs < tol
    if m >= 2:
        pi = path_independence_check(psi, box, u0, steps, tol, x0)
        out.line(f"path independence: max discrepancy {pi.discrepancy:.3e} "
                 f"({'ok' if pi.passed else 'NOT integrable'})")
        ok &= pi.passed
    out.line(f"reconstruction: {'PASS' if ok else 'FAIL'} (tol {tol:.1e})", always=True)
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {
    "check-theory": cmd_check_theory,
    "verify": cmd_verify,
    "equivalence": cmd_equivalence,
    "reconstruct": cmd_reconstruct,
}


def _numbers(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH")
    common.add_argument("--tol", type=float)
    common.add_argument("--grid-scale", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--csv", metavar="PATH")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--candidate", help="candidate name (defaults to the first of the right kind)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mshj", description="Hamilton-Jacobi checks for first-order field theories")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check-theory", parents=[common], help="regularity and Legendre round trip")
    verify = sub.add_parser("verify", parents=[common], help="run one residual suite")
    verify.add_argument("--side", choices=("lagrangian", "hamiltonian"))
    verify.add_argument("--mode", choices=("generalized", "standard", "classic"))
    eq = sub.add_parser("equivalence", parents=[common], help="paired Lagrangian/Hamiltonian report")
    eq.add_argument("--mode", choices=("generalized", "standard", "classic"))
    rec = sub.add_parser("reconstruct", parents=[common], help="integrate a jet field to a section")
    rec.add_argument("--x0", type=_numbers)
    rec.add_argument("--u0", type=_numbers)
    return parser


def _caret(err: ExprSyntaxError) -> list[str]:
    col = len(err.text.encode("utf-8")[:err.offset].decode("utf-8", errors="ignore"))
    return [f"  {err.text}", "  " + " " * col + "^"]


def main(argv=None, stream=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Output(args.quiet, stream)
    err = sys.stderr
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg, out)
    except ExprSyntaxError as exc:
        print(f"error: {exc}", file=err)
        for text in _caret(exc):
            print(text, file=err)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERIC


def run(argv=None) -> str:
    """Run the CLI and capture its standard output (handy in tests)."""
    buf = io.StringIO()
    main(argv, buf)
    return buf.getvalue()
