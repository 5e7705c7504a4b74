"""Coordinates, field theories, grids and residual reports.

Coordinate names for a theory with ``m`` base and ``n`` fibre dimensions::

    x1..xm            base coordinates
    u1..un            field values
    vA_i              velocity of field A along base direction i
    pA_i              multimomentum of field A along base direction i

Multi-indices (A, i) are flattened A-major: ``v1_1, v1_2, ..., v2_1, ...``.
When ``m == 1`` the alias ``t`` stands for ``x1``; when ``n == 1`` the alias
``q`` stands for ``u1``; when both hold, ``v`` and ``p`` stand for ``v1_1``
and ``p1_1``.

Batched points are passed around as arrays ``x (m, N)``, ``u (n, N)`` and
``v`` or ``p`` of shape ``(n, m, N)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Collection, Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import CapExceeded, DomainError, InvalidParams, NumericalError

log = logging.getLogger(__name__)

DEFAULT_CAP = 10**7
DEFAULT_CHUNK = 16384


# ------------------------------------------------------------ coordinates


@dataclass(frozen=True)
class Coords:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidParams(f"dimensions must be positive, got m={self.m}, n={self.n}")

    @property
    def x(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.m)]

    @property
    def u(self) -> list[str]:
        return [f"u{a + 1}" for a in range(self.n)]

    @property
    def v(self) -> list[str]:
        return [f"v{a + 1}_{i + 1}" for a in range(self.n) for i in range(self.m)]

    @property
    def p(self) -> list[str]:
        return [f"p{a + 1}_{i + 1}" for a in range(self.n) for i in range(self.m)]

    @property
    def base(self) -> list[str]:
        return self.x + self.u

    @property
    def jet(self) -> list[str]:
        return self.base + self.v

    @property
    def momentum(self) -> list[str]:
        return self.base + self.p

    @property
    def aliases(self) -> dict[str, str]:
        out = {}
        if self.m == 1:
            out["t"] = "x1"
        if self.n == 1:
            out["q"] = "u1"
        if self.m == 1 and self.n == 1:
            out["v"] = "v1_1"
            out["p"] = "p1_1"
        return out

    def vindex(self, a: int, i: int) -> int:
        """Position of v(a, i) inside ``jet`` (same for p inside ``momentum``)."""
        return self.m + self.n + a * self.m + i


def prepare(text, coords: Coords, allowed: Sequence[str], constants: Collection[str] = (),
            what: str = "expression") -> ex.Node:
    """Parse, apply the coordinate aliases and check the variable set."""
    node = ex.rename(ex.as_node(text), coords.aliases)
    extra = ex.variables(node) - set(allowed) - set(constants)
    if extra:
        raise InvalidParams(
            f"{what} {ex.to_text(node)!r} uses undeclared variables {sorted(extra)}; "
            f"allowed: {', '.join(allowed)}"
        )
    return node


def base_columns(coords: Coords, x, u) -> dict[str, np.ndarray]:
    cols = {name: x[i] for i, name in enumerate(coords.x)}
    cols.update({name: u[a] for a, name in enumerate(coords.u)})
    return cols


def jet_columns(coords: Coords, x, u, v) -> dict[str, np.ndarray]:
    cols = base_columns(coords, x, u)
    flat = np.reshape(v, (coords.n * coords.m, -1))
    cols.update({name: flat[k] for k, name in enumerate(coords.v)})
    return cols


def momentum_columns(coords: Coords, x, u, p) -> dict[str, np.ndarray]:
    cols = base_columns(coords, x, u)
    flat = np.reshape(p, (coords.n * coords.m, -1))
    cols.update({name: flat[k] for k, name in enumerate(coords.p)})
    return cols


def as_batch(arr, rows: int) -> np.ndarray:
    """Coerce a point or a batch into shape (rows, N)."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got shape {a.shape}")
    return a


# ---------------------------------------------------------- expressions


@dataclass
class Values:
    """Component values with derivatives: val (*shape, N), grad (*shape, D, N),
    hess (*shape, D, D, N)."""

    val: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


class ExprFunction:
    """An array of expressions sharing one coordinate list.

    Derivatives are taken with respect to every name in ``coords``; names in
    ``constants`` are bound to fixed numbers.
    """

    def __init__(self, exprs, shape: Sequence[int], coords: Coords, allowed: Sequence[str],
                 constants: Mapping[str, float] | None = None, what: str = "component"):
        self.shape = tuple(shape)
        self.coords = coords
        self.allowed = list(allowed)
        self.constants = dict(constants or {})
        flat = list(np.asarray(exprs, dtype=object).reshape(-1)) if not isinstance(exprs, list) \
            else _flatten(exprs)
        if len(flat) != int(np.prod(self.shape, dtype=int)):
            raise InvalidParams(f"expected {int(np.prod(self.shape))} {what}s, got {len(flat)}")
        self.nodes = [prepare(e, coords, self.allowed, self.constants, what) for e in flat]

    @property
    def texts(self) -> list[str]:
        return [ex.to_text(n) for n in self.nodes]

    def evaluate(self, columns: Mapping[str, np.ndarray], order: int, size: int) -> Values:
        cols = dict(self.constants)
        cols.update(columns)
        vals, grads, hesses = [], [], []
        for node in self.nodes:
            v, g, h = ex.jet(node, cols, self.allowed, order, size)
            vals.append(v)
            grads.append(g)
            hesses.append(h)
        d = len(self.allowed)
        val = np.stack(vals).reshape(self.shape + (size,))
        grad = np.stack(grads).reshape(self.shape + (d, size)) if order >= 1 else None
        hess = np.stack(hesses).reshape(self.shape + (d, d, size)) if order == 2 else None
        return Values(val, grad, hess)


def _flatten(obj) -> list:
    if isinstance(obj, (list, tuple)):
        out = []
        for item in obj:
            out.extend(_flatten(item))
        return out
    return [obj]


# ----------------------------------------------------------------- theory


@dataclass(frozen=True)
class FieldTheory:
    """A first-order field theory given by its Lagrangian ``L(x, u, v)``.

    The volume form is fixed to dx1 ^ ... ^ dxm.
    """

    m: int
    n: int
    lagrangian: ex.Node
    name: str = "custom"

    def __init__(self, m: int, n: int, lagrangian, name: str = "custom"):
        coords = Coords(m, n)
        node = prepare(lagrangian, coords, coords.jet, what="Lagrangian")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lagrangian", node)
        object.__setattr__(self, "name", name)

    @property
    def coords(self) -> Coords:
        return Coords(self.m, self.n)

    def lagrangian_values(self, x, u, v, order: int = 2):
        """L and its derivatives over jet coordinates at a batch of points."""
        c = self.coords
        size = np.shape(x)[-1]
        return ex.jet(self.lagrangian, jet_columns(c, x, u, v), c.jet, order, size)


@dataclass(frozen=True)
class JetPoint:
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray  # (n, m)

    def __post_init__(self):
        for name in ("x", "u", "v"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name} in jet point")
            object.__setattr__(self, name, arr)
        if self.v.ndim != 2:
            object.__setattr__(self, "v", self.v.reshape(self.u.size, self.x.size))


@dataclass(frozen=True)
class RestrictedMomentumPoint:
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray  # (n, m), p[A][i]

    def __post_init__(self):
        for name in ("x", "u", "p"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name} in momentum point")
            object.__setattr__(self, name, arr)
        if self.p.ndim != 2:
            object.__setattr__(self, "p", self.p.reshape(self.u.size, self.x.size))


@dataclass(frozen=True)
class ExtendedMomentumPoint(RestrictedMomentumPoint):
    p0: float = 0.0


def hessian_batch(theory: FieldTheory, x, u, v) -> np.ndarray:
    """Velocity Hessian of L, shape (N, nm, nm), A-major flattening."""
    _, _, hess = theory.lagrangian_values(x, u, v, 2)
    k = theory.m + theory.n
    return np.moveaxis(hess[k:, k:, :], -1, 0)


def hessian(theory: FieldTheory, pt: JetPoint) -> np.ndarray:
    return hessian_batch(theory, pt.x[:, None], pt.u[:, None], pt.v[..., None])[0]


# ------------------------------------------------------------------ grids


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise InvalidParams(f"axis {self.name}: need finite lo <= hi, got [{self.lo}, {self.hi}]")
        if int(self.count) != self.count or self.count < 1:
            raise InvalidParams(f"axis {self.name}: count must be a positive integer")

    def samples(self) -> np.ndarray:
        if self.count == 1:
            return np.array([(self.lo + self.hi) / 2.0])
        return np.linspace(self.lo, self.hi, int(self.count))


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[Axis, ...]
    cap: int = DEFAULT_CAP

    def __init__(self, axes: Iterable[Axis | tuple], cap: int = DEFAULT_CAP):
        built = tuple(a if isinstance(a, Axis) else Axis(*a) for a in axes)
        names = [a.name for a in built]
        if len(set(names)) != len(names):
            raise InvalidParams(f"duplicate grid axes in {names}")
        object.__setattr__(self, "axes", built)
        object.__setattr__(self, "cap", int(cap))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.axes]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(a.count) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.axes else 1

    def check_cap(self) -> None:
        if self.size > self.cap:
            raise CapExceeded(self.size, self.cap)

    def scaled(self, factor: int) -> "GridSpec":
        return GridSpec([Axis(a.name, a.lo, a.hi, a.count * factor) for a in self.axes], self.cap)

    def columns(self, start: int = 0, stop: int | None = None) -> dict[str, np.ndarray]:
        """Coordinates of points ``start:stop`` in row-major order."""
        stop = self.size if stop is None else stop
        idx = np.unravel_index(np.arange(start, stop), self.shape)
        return {a.name: a.samples()[k] for a, k in zip(self.axes, idx)}

    def point(self, flat_index: int) -> dict[str, float]:
        return {k: float(v[0]) for k, v in self.columns(flat_index, flat_index + 1).items()}


def grid_points(grid: GridSpec) -> list[tuple[float, ...]]:
    """All grid points, row-major (last axis fastest)."""
    grid.check_cap()
    cols = grid.columns()
    return list(zip(*(cols[name].tolist() for name in grid.names)))


def split_columns(coords: Coords, columns: Mapping[str, np.ndarray], size: int,
                  extra: Sequence[str] = ()) -> tuple[np.ndarray, ...]:
    """Gather x, u (and optionally v or p blocks) from named columns.

    Coordinates missing from ``columns`` are taken as 0.
    """
    def rows(names):
        return np.array([np.broadcast_to(columns.get(nm, 0.0), (size,)) for nm in names],
                        dtype=float).reshape(len(names), size)
    x = rows(coords.x)
    u = rows(coords.u)
    out = [x, u]
    if extra:
        out.append(rows(extra).reshape(coords.n, coords.m, size))
    return tuple(out)


# ---------------------------------------------------------------- reports


class NotEvaluated:
    """Marker for a residual family that could not be evaluated."""

    def __init__(self, reason: str):
        self.reason = reason


@dataclass
class FamilyStats:
    name: str
    max_abs: float = 0.0
    rms: float = 0.0
    argmax: dict[str, float] | None = None
    component: tuple[int, ...] | None = None
    points: int = 0
    components: int = 0
    evaluated: bool = True
    note: str = ""

    @property
    def count(self) -> int:
        return self.points * self.components


@dataclass
class ResidualReport:
    families: dict[str, FamilyStats]
    grid_size: int
    tol: float
    informational: tuple[str, ...] = ()
    skipped: list[tuple[dict[str, float], str]] = field(default_factory=list)
    pointwise: dict[str, np.ndarray] | None = None
    label: str = ""

    def gating(self) -> list[FamilyStats]:
        return [f for k, f in self.families.items() if k not in self.informational and f.evaluated]

    @property
    def max_residual(self) -> float:
        return max((f.max_abs for f in self.gating()), default=0.0)

    @property
    def passed(self) -> bool:
        if self.grid_size and len(self.skipped) >= self.grid_size:
            return False
        return all(f.max_abs < self.tol for f in self.gating())

    def summary_lines(self) -> list[str]:
        head = f"{self.label or 'report'}: {'PASS' if self.passed else 'FAIL'} " \
               f"(max {self.max_residual:.3e}, tol {self.tol:.1e}, {self.grid_size} points)"
        lines = [head]
        for name, f in self.families.items():
            tag = " [info]" if name in self.informational else ""
            if not f.evaluated:
                lines.append(f"  {name}{tag}: not evaluated ({f.note})")
                continue
            if f.components == 0:
                lines.append(f"  {name}{tag}: empty family")
                continue
            where = ""
            if f.argmax is not None and f.max_abs > 0:
                where = " at " + ", ".join(f"{k}={v:.4g}" for k, v in f.argmax.items())
                if f.component:
                    where += f" component {f.component}"
            lines.append(f"  {name}{tag}: max {f.max_abs:.3e} rms {f.rms:.3e} "
                         f"({f.components} per point){where}")
        if self.skipped:
            lines.append(f"  skipped {len(self.skipped)} points after evaluation errors")
        return lines


ResidualOp = Callable[[Mapping[str, np.ndarray], int], Mapping[str, object]]


def grid_report(op: ResidualOp, grid: GridSpec, tol: float, *, informational: Collection[str] = (),
                errors: str = "raise", jobs: int = 1, chunk: int = DEFAULT_CHUNK,
                keep_pointwise: bool = False, label: str = "") -> ResidualReport:
    """Evaluate a residual operator over every grid point and aggregate.

    ``op(columns, size)`` receives named coordinate arrays and returns a map
    from family name to an array of shape ``(*components, size)`` or a
    ``NotEvaluated`` marker.  ``errors`` is ``"raise"`` (fail fast) or
    ``"skip"`` (record failing points and continue).
    """
    if errors not in ("raise", "skip"):
        raise ValueError("errors must be 'raise' or 'skip'")
    grid.check_cap()
    total = grid.size
    bounds = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]

    def work(bound):
        start, stop = bound
        return _run_chunk(op, grid, start, stop, errors)

    if jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]

    stats: dict[str, FamilyStats] = {}
    sumsq: dict[str, float] = {}
    pointwise: dict[str, list] = {}
    skipped: list = []
    for (start, stop), (fams, keep, skip) in zip(bounds, results):
        skipped.extend(skip)
        live = np.flatnonzero(keep) + start
        for name, res in fams.items():
            st = stats.setdefault(name, FamilyStats(name))
            if isinstance(res, NotEvaluated):
                st.evaluated = False
                st.note = res.reason
                continue
            res = np.asarray(res, dtype=float)
            comp_shape = res.shape[:-1]
            st.components = int(np.prod(comp_shape, dtype=int))
            if keep_pointwise:
                pw = np.abs(res).reshape(st.components, -1).max(axis=0) if st.components \
                    else np.zeros(res.shape[-1])
                full = np.full(stop - start, np.nan)
                full[keep] = pw
                pointwise.setdefault(name, []).append(full)
            st.points += res.shape[-1]
            if st.components == 0 or res.shape[-1] == 0:
                continue
            absr = np.abs(res)
            flat_arg = int(np.argmax(absr))
            local = absr.reshape(-1)[flat_arg]
            sumsq[name] = sumsq.get(name, 0.0) + float(np.sum(np.square(res)))
            if local > st.max_abs or st.argmax is None:
                comp_idx = np.unravel_index(flat_arg, absr.shape)
                st.max_abs = float(local)
                st.component = tuple(int(c) for c in comp_idx[:-1])
                st.argmax = grid.point(int(live[comp_idx[-1]]))
    for name, st in stats.items():
        if st.evaluated and st.count:
            st.rms = min(math.sqrt(sumsq.get(name, 0.0) / st.count), st.max_abs)
    pw_out = {k: np.concatenate(v) for k, v in pointwise.items()} if keep_pointwise else None
    return ResidualReport(stats, total, tol, tuple(informational), skipped, pw_out, label)


def _run_chunk(op, grid: GridSpec, start: int, stop: int, errors: str):
    cols = grid.columns(start, stop)
    size = stop - start
    try:
        fams = dict(op(cols, size))
        return fams, np.ones(size, dtype=bool), []
    except NumericalError as err:
        index = getattr(err, "index", None)
        if errors == "raise":
            if isinstance(err, DomainError) and index is not None and index < size:
                err.location = grid.point(start + index)
            raise
    # skip policy: evaluate point by point
    keep = np.ones(size, dtype=bool)
    skipped = []
    parts = []
    for k in range(size):
        one = {name: col[k:k + 1] for name, col in cols.items()}
        try:
            parts.append(dict(op(one, 1)))
        except NumericalError as err:
            keep[k] = False
            skipped.append((grid.point(start + k), str(err)))
    fams: dict[str, object] = {}
    if parts:
        for name in parts[0]:
            vals = [p[name] for p in parts]
            if isinstance(vals[0], NotEvaluated):
                fams[name] = vals[0]
            else:
                fams[name] = np.concatenate([np.asarray(v, dtype=float) for v in vals], axis=-1)
    return fams, keep, skipped


# ------------------------------------------------------------- regularity


@dataclass
class RegularityReport:
    min_abs_det: float
    argmin: dict[str, float]
    regular: bool
    tol: float


def regularity_check(theory: FieldTheory, grid: GridSpec, tol: float = 1e-12,
                     chunk: int = DEFAULT_CHUNK) -> RegularityReport:
    """Smallest |det| of the velocity Hessian over a grid in jet coordinates."""
    c = theory.coords
    unknown = set(grid.names) - set(c.jet) - set(c.aliases)
    if unknown:
        raise InvalidParams(f"grid axes {sorted(unknown)} are not jet coordinates")
    grid.check_cap()
    best = math.inf
    where = None
    for start in range(0, grid.size, chunk):
        stop = min(start + chunk, grid.size)
        cols = {c.aliases.get(k, k): v for k, v in grid.columns(start, stop).items()}
        x, u, v = split_columns(c, cols, stop - start, c.v)
        dets = np.abs(np.linalg.det(hessian_batch(theory, x, u, v)))
        k = int(np.argmin(dets))
        if dets[k] < best:
            best = float(dets[k])
            where = grid.point(start + k)
    return RegularityReport(best, where or {}, best > tol, tol)


# ------------------------------------------------------- fields over (x, u)


class BaseField:
    """Expression components over base coordinates (x, u).

    ``evaluate(x, u, order)`` returns ``Values`` with ``val`` of shape
    ``(*shape, N)`` and derivatives over ``x1..xm, u1..un``.  Composed
    fields implement the same method with a lower ``max_order``.
    """

    max_order = 2
    shape: tuple[int, ...] = ()

    def __init__(self, m: int, n: int, exprs, shape: Sequence[int],
                 constants: Mapping[str, float] | None = None, what: str = "component"):
        self.m, self.n = m, n
        self.coords = Coords(m, n)
        self.shape = tuple(shape)
        self.fn = ExprFunction(exprs, self.shape, self.coords, self.coords.base, constants, what)

    def evaluate(self, x, u, order: int = 0) -> Values:
        if order > self.max_order:
            raise ValueError(f"{type(self).__name__} supports derivatives up to order {self.max_order}")
        size = np.shape(x)[-1]
        return self.fn.evaluate(base_columns(self.coords, x, u), order, size)

    @property
    def texts(self) -> list[str]:
        return self.fn.texts
