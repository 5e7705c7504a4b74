"""Moving candidates across the Legendre map and checking complete families.

``pushforward_jetfield`` and ``pullback_section`` return composed fields that
evaluate the Legendre map (or its Newton inverse) on the fly, so nothing is
re-expressed symbolically.  Their first derivatives come from the chain rule
and, for the pull-back, from differentiating ``L_v(z, psi(z)) = s(z)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageMiss, DegenerateJacobian, InvalidParams, SliceFailure
from .ham_residuals import MomentumSection, default_ham_coefficients, hamiltonian_suite
from .jet_core import (BaseField, Coords, ExprFunction, FieldTheory, GridSpec, ResidualReport,
                       Values, base_columns, grid_report, prepare)
from .lag_residuals import JetField, default_lag_coefficients, lagrangian_suite
from .legendre import Hamiltonian, NewtonSettings, inverse_legendre_batch
from . import expr as ex

log = logging.getLogger(__name__)


def _lagrangian_derivs(theory: FieldTheory, x, u, v, order: int):
    m, n = theory.m, theory.n
    k = m + n
    size = np.shape(x)[-1]
    val, g, h = theory.lagrangian_values(x, u, v, order)
    out = {"val": val, "Lz": g[:k], "Lv": g[k:].reshape(n, m, size)}
    if order == 2:
        out["Lvz"] = h[k:, :k].reshape(n, m, k, size)
        out["Lvv"] = h[k:, k:].reshape(n, m, n, m, size)
    return out


class PushforwardSection(BaseField):
    """``s = L_v(x, u, psi(x, u))``."""

    def __init__(self, theory: FieldTheory, psi: BaseField):
        self.theory = theory
        self.psi = psi
        self.m, self.n = theory.m, theory.n
        self.coords = theory.coords
        self.shape = (self.n, self.m)
        self.max_order = min(1, psi.max_order - 1)

    def evaluate(self, x, u, order: int = 0) -> Values:
        if order > self.max_order:
            raise ValueError("pushed-forward sections carry first derivatives only")
        pv = self.psi.evaluate(x, u, order)
        d = _lagrangian_derivs(self.theory, x, u, pv.val, 2 if order else 1)
        if order == 0:
            return Values(d["Lv"])
        grad = d["Lvz"] + np.einsum("aibkN,bkzN->aizN", d["Lvv"], pv.grad)
        return Values(d["Lv"], grad)


class PullbackJetField(BaseField):
    """``psi = Leg^-1(x, u, s(x, u))`` solved by Newton at every point."""

    def __init__(self, theory: FieldTheory, s: BaseField, settings: NewtonSettings = NewtonSettings()):
        self.theory = theory
        self.s = s
        self.settings = settings
        self.m, self.n = theory.m, theory.n
        self.coords = theory.coords
        self.shape = (self.n, self.m)
        self.max_order = min(1, s.max_order)

    def evaluate(self, x, u, order: int = 0) -> Values:
        if order > self.max_order:
            raise ValueError("pulled-back jet fields carry first derivatives only")
        m, n = self.m, self.n
        k, nm = m + n, n * m
        size = np.shape(x)[-1]
        sv = self.s.evaluate(x, u, order)
        v, _ = inverse_legendre_batch(self.theory, x, u, sv.val, self.settings)
        if order == 0:
            return Values(v)
        d = _lagrangian_derivs(self.theory, x, u, v, 2)
        a = np.moveaxis(d["Lvv"].reshape(nm, nm, size), -1, 0)
        rhs = np.moveaxis((sv.grad - d["Lvz"]).reshape(nm, k, size), -1, 0)
        dpsi = np.linalg.solve(a, rhs)
        return Values(v, np.moveaxis(dpsi, 0, -1).reshape(n, m, k, size))


def pushforward_jetfield(theory: FieldTheory, psi: BaseField) -> PushforwardSection:
    return PushforwardSection(theory, psi)


def pullback_section(theory: FieldTheory, s: BaseField,
                     settings: NewtonSettings = NewtonSettings()) -> PullbackJetField:
    return PullbackJetField(theory, s, settings)


class TransportedHamCoefficients:
    """Legendre transport of Lagrangian coefficients:
    ``G[A][j][i] = L_{v[A][i] x_j} + v[B][j] L_{v[A][i] u[B]} + F[j][k][B] L_{v[A][i] v[B][k]}``
    at ``v = Leg^-1(p)``."""

    max_order = 0
    label = "transported"

    def __init__(self, theory: FieldTheory, F, settings: NewtonSettings = NewtonSettings()):
        self.theory, self.F, self.settings = theory, F, settings
        self.m, self.n = theory.m, theory.n

    def evaluate(self, x, u, p, order: int = 0) -> Values:
        if order > 0:
            raise ValueError("transported coefficients carry no derivatives")
        m = self.m
        v, _ = inverse_legendre_batch(self.theory, x, u, p, self.settings)
        d = _lagrangian_derivs(self.theory, x, u, v, 2)
        f = self.F.evaluate(x, u, v, 0).val
        lvx = d["Lvz"][:, :, :m]
        lvu = d["Lvz"][:, :, m:]
        g = (np.transpose(lvx, (0, 2, 1, 3))
             + np.einsum("bjN,aibN->ajiN", v, lvu)
             + np.einsum("jkbN,aibkN->ajiN", f, d["Lvv"]))
        return Values(g)


class TransportedLagCoefficients:
    """Inverse transport: solve the relation above for F at ``p = L_v(v)``."""

    max_order = 0
    label = "transported"

    def __init__(self, theory: FieldTheory, G):
        self.theory, self.G = theory, G
        self.m, self.n = theory.m, theory.n

    def evaluate(self, x, u, v, order: int = 0) -> Values:
        if order > 0:
            raise ValueError("transported coefficients carry no derivatives")
        m, n = self.m, self.n
        nm = n * m
        size = np.shape(x)[-1]
        d = _lagrangian_derivs(self.theory, x, u, v, 2)
        g = self.G.evaluate(x, u, d["Lv"], 0).val                    # [A][j][i]
        rhs = (np.transpose(g, (0, 2, 1, 3)) - d["Lvz"][:, :, :m]
               - np.einsum("bjN,aibN->aijN", v, d["Lvz"][:, :, m:]))  # [A][i][j]
        a = np.moveaxis(d["Lvv"].reshape(nm, nm, size), -1, 0)
        sol = np.linalg.solve(a, np.moveaxis(rhs.reshape(nm, m, size), -1, 0))  # (N, nm, m)
        f = np.moveaxis(sol, 0, -1).reshape(n, m, m, size)            # [B][k][j]
        return Values(np.transpose(f, (2, 1, 0, 3)))


# -------------------------------------------------------------- reports


@dataclass
class TransportCheck:
    factor: float
    offset: float
    worst_excess: float
    violations: int
    points: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass
class EquivalenceReport:
    source: str
    lagrangian: ResidualReport
    hamiltonian: ResidualReport
    transport: TransportCheck

    @property
    def verdict(self) -> str:
        lp, hp = self.lagrangian.passed, self.hamiltonian.passed
        if lp and hp:
            return "pass-pass"
        if not lp and not hp:
            return "fail-fail"
        return "mixed"

    @property
    def consistent(self) -> bool:
        return self.verdict != "mixed"

    def summary_lines(self) -> list[str]:
        lines = [f"verdict: {self.verdict} (source: {self.source})"]
        lines += self.lagrangian.summary_lines()
        lines += self.hamiltonian.summary_lines()
        t = self.transport
        lines.append(f"transport: {'ok' if t.passed else 'VIOLATED'} "
                     f"({t.violations} of {t.points} points exceed {t.factor:g}x source + {t.offset:g})")
        return lines


def _pointwise_max(report: ResidualReport) -> np.ndarray:
    arrays = [report.pointwise[f.name] for f in report.gating()
              if f.components and report.pointwise and f.name in report.pointwise]
    if not arrays:
        return np.zeros(report.grid_size)
    return np.nanmax(np.stack(arrays), axis=0)


def transport_check(source: ResidualReport, target: ResidualReport, factor: float = 10.0,
                    offset: float = 1e-10) -> TransportCheck:
    src, dst = _pointwise_max(source), _pointwise_max(target)
    excess = dst - (factor * src + offset)
    live = np.isfinite(excess)
    bad = int(np.sum(excess[live] > 0))
    worst = float(np.max(excess[live])) if live.any() else 0.0
    return TransportCheck(factor, offset, worst, bad, int(live.sum()))


def equivalence_report(theory: FieldTheory, candidate: BaseField, grid: GridSpec, tol: float = 1e-8,
                       *, side: str = "lagrangian", F=None, G=None, H: Hamiltonian | None = None,
                       mode: str = "standard", W: BaseField | None = None,
                       settings: NewtonSettings = NewtonSettings(), jobs: int = 1,
                       errors: str = "raise", guard=None) -> EquivalenceReport:
    """Run both suites on a candidate and its Legendre image.

    ``side`` names where the candidate lives.  Missing coefficients on the
    source side take the defaults of the suite; on the target side they are
    the Legendre transport of the source coefficients (coupled mode) unless
    given explicitly.
    """
    H = H or Hamiltonian.derived(theory, settings)
    if side == "lagrangian":
        psi = candidate
        F = F if F is not None else default_lag_coefficients(theory, psi)
        s = pushforward_jetfield(theory, psi)
        G = G if G is not None else TransportedHamCoefficients(theory, F, settings)
    elif side == "hamiltonian":
        s = candidate
        G = G if G is not None else default_ham_coefficients(H, s)
        psi = pullback_section(theory, s, settings)
        F = F if F is not None else TransportedLagCoefficients(theory, G)
    else:
        raise ValueError("side must be 'lagrangian' or 'hamiltonian'")
    lop, linfo = lagrangian_suite(theory, psi, mode, F, W)
    hop, hinfo = hamiltonian_suite(H, s, mode, G, W, guard=guard)
    common = dict(jobs=jobs, errors=errors, keep_pointwise=True)
    lrep = grid_report(lop, grid, tol, informational=linfo, label=f"lagrangian {mode}", **common)
    hrep = grid_report(hop, grid, tol, informational=hinfo, label=f"hamiltonian {mode}", **common)
    if side == "lagrangian":
        check = transport_check(lrep, hrep)
    else:
        check = transport_check(hrep, lrep)
    return EquivalenceReport(side, lrep, hrep, check)


# -------------------------------------------------------- complete families


@dataclass
class CompleteSolutionFamily:
    """Components over ``lam1..lamK, x, u`` with ``K = m n``.

    ``constraint`` is an optional expression in the parameters; parameters
    are admissible where it is <= 0.
    """

    side: str
    m: int
    n: int
    components: list
    box: list[tuple[float, float]]
    constraint: str | None = None
    name: str = "family"
    fn: ExprFunction = field(init=False, repr=False)
    constraint_node: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.side not in ("lagrangian", "hamiltonian"):
            raise InvalidParams("family side must be 'lagrangian' or 'hamiltonian'")
        k = self.m * self.n
        if len(self.box) != k:
            raise InvalidParams(f"parameter box needs {k} intervals, got {len(self.box)}")
        coords = Coords(self.m, self.n)
        allowed = self.parameter_names + coords.base
        self.fn = ExprFunction(self.components, (self.n, self.m), coords, allowed, None,
                               "family component")
        if self.constraint is not None:
            self.constraint_node = prepare(self.constraint, coords, self.parameter_names,
                                           what="parameter constraint")

    @property
    def parameter_names(self) -> list[str]:
        return [f"lam{k + 1}" for k in range(self.m * self.n)]

    def admissible(self, lam: np.ndarray) -> np.ndarray:
        """Mask over parameter batches of shape (K, N)."""
        lam = np.asarray(lam, dtype=float)
        inside = np.ones(lam.shape[-1], dtype=bool)
        for k, (lo, hi) in enumerate(self.box):
            inside &= (lam[k] >= lo) & (lam[k] <= hi)
        if self.constraint_node is not None:
            cols = dict(zip(self.parameter_names, lam))
            val, _, _ = ex.jet(self.constraint_node, cols, (), 0, lam.shape[-1])
            inside &= val <= 0
        return inside

    def slice(self, lam) -> BaseField:
        consts = dict(zip(self.parameter_names, (float(v) for v in lam)))
        cls = JetField if self.side == "lagrangian" else MomentumSection
        return cls(self.m, self.n, self.components, consts)

    def values(self, lam, x, u, order: int = 0) -> Values:
        """Components and derivatives over (parameters, x, u)."""
        size = np.shape(x)[-1]
        cols = base_columns(self.fn.coords, x, u)
        lam = np.broadcast_to(np.asarray(lam, float).reshape(len(self.box), -1), (len(self.box), size))
        cols.update(dict(zip(self.parameter_names, lam)))
        return self.fn.evaluate(cols, order, size)


@dataclass
class CompleteSolutionReport:
    slices: int
    slice_max_residual: float
    min_abs_det: float
    coverage_targets: int
    coverage_max_error: float
    passed: bool = True

    def summary_lines(self) -> list[str]:
        return [f"complete family: {'PASS' if self.passed else 'FAIL'}",
                f"  slices checked: {self.slices}, worst slice residual {self.slice_max_residual:.3e}",
                f"  min |det d(components)/d(parameters)|: {self.min_abs_det:.6g}",
                f"  coverage: {self.coverage_targets} targets, worst match {self.coverage_max_error:.3e}"]


def complete_solution_check(family: CompleteSolutionFamily, lam_grid: GridSpec, grid: GridSpec,
                            tol: float = 1e-8, *, theory: FieldTheory | None = None,
                            H: Hamiltonian | None = None, mode: str = "standard",
                            det_tol: float = 1e-10, targets: int = 100, match_tol: float = 1e-8,
                            seed: int = 0, max_iter: int = 50, jobs: int = 1) -> CompleteSolutionReport:
    """Check slices, the parameter Jacobian and coverage of a family.

    Raises ``SliceFailure``, ``DegenerateJacobian`` or ``CoverageMiss`` at the
    first failure.
    """
    m, n = family.m, family.n
    K = m * n
    if family.side == "lagrangian" and theory is None:
        raise InvalidParams("a Lagrangian family needs the field theory")
    if family.side == "hamiltonian" and H is None:
        if theory is None:
            raise InvalidParams("a Hamiltonian family needs a Hamiltonian or a field theory")
        H = Hamiltonian.derived(theory)
    lam_cols = lam_grid.columns()
    lam_all = np.array([lam_cols[name] for name in family.parameter_names])
    lam_ok = lam_all[:, family.admissible(lam_all)]
    worst = 0.0
    min_det = math.inf
    xcols = grid.columns()
    x = np.array([xcols.get(nm, np.zeros(grid.size)) for nm in Coords(m, n).x])
    u = np.array([xcols.get(nm, np.zeros(grid.size)) for nm in Coords(m, n).u])
    for lam in lam_ok.T:
        fld = family.slice(lam)
        if family.side == "lagrangian":
            op, info = lagrangian_suite(theory, fld, mode)
        else:
            op, info = hamiltonian_suite(H, fld, mode)
        rep = grid_report(op, grid, tol, informational=info, jobs=jobs)
        worst = max(worst, rep.max_residual)
        if not rep.passed:
            raise SliceFailure(lam, f"(max residual {rep.max_residual:.3e})")
        vals = family.values(lam, x, u, 1)
        jac = np.moveaxis(vals.grad[:, :, :K].reshape(K, K, -1), -1, 0)
        dets = np.abs(np.linalg.det(jac))
        j = int(np.argmin(dets))
        min_det = min(min_det, float(dets[j]))
        if dets[j] <= det_tol:
            raise DegenerateJacobian(lam, x[:, j], u[:, j], float(dets[j]))
    if lam_ok.shape[1] == 0:
        raise InvalidParams("no admissible parameter sample on the parameter grid")

    rng = np.random.default_rng(seed)
    lo = np.array([a.lo for a in grid.axes])
    hi = np.array([a.hi for a in grid.axes])
    box_lo = np.array([b[0] for b in family.box])
    box_hi = np.array([b[1] for b in family.box])
    start = lam_ok.mean(axis=1)
    worst_match = 0.0
    for _ in range(targets):
        pt = rng.uniform(lo, hi)
        named = dict(zip(grid.names, pt))
        xt = np.array([[named.get(nm, 0.0)] for nm in Coords(m, n).x])
        ut = np.array([[named.get(nm, 0.0)] for nm in Coords(m, n).u])
        while True:
            lam_star = rng.uniform(box_lo, box_hi)
            if family.admissible(lam_star[:, None])[0]:
                break
        target = family.values(lam_star, xt, ut, 0).val.reshape(K)
        lam = start.copy()
        err = math.inf
        for _ in range(max_iter):
            vals = family.values(lam, xt, ut, 1)
            resid = vals.val.reshape(K) - target
            err = float(np.max(np.abs(resid)))
            if err < match_tol:
                break
            jac = vals.grad[:, :, :K, 0].reshape(K, K)
            try:
                lam = lam - np.linalg.solve(jac, resid)
            except np.linalg.LinAlgError:
                break
        if err >= match_tol or not family.admissible(lam[:, None])[0]:
            raise CoverageMiss({"x": xt[:, 0].tolist(), "u": ut[:, 0].tolist(),
                                "target": target.tolist()}, f"(best mismatch {err:.3e})")
        worst_match = max(worst_match, err)
    return CompleteSolutionReport(lam_ok.shape[1], worst, min_det, targets, worst_match)
