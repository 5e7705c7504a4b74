"""Reconstructing field sections from a jet field.

A section ``phi(x)`` is an integral section of the jet field when
``d phi[A] / d x_i = psi[A][i](x, phi(x))``.  Sections are built on a box by
classical RK4 sweeps: integrate along the first axis of ``order`` through the
start point, then from every point reached along the next axis, and so on.
Different sweep orders agree exactly when the jet field is integrable.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUp, InvalidParams
from .jet_core import BaseField, DEFAULT_CHUNK, FieldTheory

log = logging.getLogger(__name__)

BLOWUP_CAP = 1e6


@dataclass
class SectionTrace:
    """Values ``phi`` of shape (n, *grid_shape) on a box grid."""

    axes: list[np.ndarray]
    values: np.ndarray
    steps: tuple[int, ...]
    method: str = "rk4"
    sweep_order: tuple[int, ...] = ()
    x0: tuple[float, ...] = ()
    u0: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.axes)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) if a.size > 1 else 0.0 for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    def mesh(self) -> np.ndarray:
        """Base coordinates of every node, shape (m, *grid_shape)."""
        return np.array(np.meshgrid(*self.axes, indexing="ij"))

    def at(self, x: Sequence[float]) -> np.ndarray:
        """Values at the node closest to ``x``."""
        idx = tuple(int(np.argmin(np.abs(a - xi))) for a, xi in zip(self.axes, x))
        return self.values[(slice(None),) + idx]

    def write_csv(self, target) -> None:
        """Header ``x1..xm,u1..un`` then one row per node, row-major, LF endings."""
        own = isinstance(target, (str, os.PathLike))
        fh = open(target, "w", newline="", encoding="utf-8") if own else target
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(self.m)] + [f"u{a + 1}" for a in range(self.n)])
            coords = self.mesh().reshape(self.m, -1)
            vals = self.values.reshape(self.n, -1)
            for k in range(coords.shape[1]):
                w.writerow([repr(float(c)) for c in coords[:, k]] + [repr(float(v)) for v in vals[:, k]])
        finally:
            if own:
                fh.close()

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], box, steps) -> "SectionTrace":
        """Sample ``fn(x)`` (x of shape (m, N), returning (n, N)) on a box grid."""
        axes = _axes(box, steps)
        mesh = np.array(np.meshgrid(*axes, indexing="ij"))
        shape = mesh.shape[1:]
        vals = np.atleast_2d(np.asarray(fn(mesh.reshape(len(axes), -1)), dtype=float))
        return cls(axes, vals.reshape((-1,) + shape), tuple(a.size - 1 for a in axes), "sampled")


def _axes(box, steps) -> list[np.ndarray]:
    box = [tuple(map(float, b)) for b in box]
    if np.ndim(steps) == 0:
        steps = [int(steps)] * len(box)
    if len(steps) != len(box):
        raise InvalidParams("need one step count per box axis")
    out = []
    for (lo, hi), s in zip(box, steps):
        if not lo < hi or int(s) < 1:
            raise InvalidParams(f"bad box axis [{lo}, {hi}] with {s} steps")
        out.append(np.linspace(lo, hi, int(s) + 1))
    return out


def _node_index(axis: np.ndarray, value: float) -> int:
    k = int(np.argmin(np.abs(axis - value)))
    h = axis[1] - axis[0]
    if abs(axis[k] - value) > 1e-9 * max(1.0, abs(h) * axis.size):
        raise InvalidParams(f"start coordinate {value} is not a grid node")
    return k


def integrate_distribution(psi: BaseField, x0: Sequence[float], u0: Sequence[float], box,
                           steps, order: Sequence[int] | None = None) -> SectionTrace:
    """RK4 dimension sweep of ``d phi / d x_i = psi[:, i](x, phi)``."""
    m, n = psi.m, psi.n
    if len(x0) != m or len(u0) != n or len(box) != m:
        raise InvalidParams("start point and box must match the jet field dimensions")
    order = tuple(range(m)) if order is None else tuple(order)
    if sorted(order) != list(range(m)):
        raise InvalidParams(f"sweep order {order} is not a permutation of the axes")
    axes = _axes(box, steps)
    shape = tuple(a.size for a in axes)
    start = tuple(_node_index(a, x) for a, x in zip(axes, x0))
    values = np.full((n,) + shape, np.nan)
    values[(slice(None),) + start] = np.asarray(u0, dtype=float)
    done: list[int] = []
    for axis in order:
        _sweep(psi, axes, values, start, done, axis)
        done.append(axis)
    return SectionTrace(axes, values, tuple(a.size - 1 for a in axes), "rk4", order,
                        tuple(float(v) for v in x0), tuple(float(v) for v in u0))


def _sweep(psi, axes, values, start, done, axis):
    m, n = len(axes), values.shape[0]
    # transverse block: processed axes span fully, others sit at the start index
    index = [slice(None) if k in done else start[k] for k in range(m)]
    free = [k for k in range(m) if k in done]
    mesh = np.meshgrid(*[axes[k] for k in free], indexing="ij") if free else []
    batch = int(np.prod([axes[k].size for k in free])) if free else 1
    xb = np.empty((m, batch))
    for k in range(m):
        if k in free:
            xb[k] = mesh[free.index(k)].reshape(-1)
        else:
            xb[k] = axes[k][start[k]]

    def slab(i):
        idx = list(index)
        idx[axis] = i
        return (slice(None),) + tuple(idx)

    def rhs(t, y):
        xb[axis] = t
        return psi.evaluate(xb, y, 0).val[:, axis, :]

    y0 = values[slab(start[axis])].reshape(n, batch)
    grid = axes[axis]
    for direction in (1, -1):
        y = y0.copy()
        i = start[axis]
        while 0 <= i + direction < grid.size:
            t, h = grid[i], grid[i + direction] - grid[i]
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            i += direction
            if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP_CAP:
                raise BlowUp(f"section exceeded {BLOWUP_CAP:g} at x{axis + 1}={grid[i]:.6g}")
            values[slab(i)] = y.reshape(values[slab(i)].shape)


@dataclass
class PathIndependence:
    discrepancy: float
    tol: float
    orders: tuple[tuple[int, ...], tuple[int, ...]]

    @property
    def passed(self) -> bool:
        return self.discrepancy < self.tol


def path_independence_check(psi: BaseField, box, u0: Sequence[float], steps, tol: float = 1e-6,
                            x0: Sequence[float] | None = None) -> PathIndependence:
    """Largest difference between the sweeps in axis order and reversed order."""
    if psi.m < 2:
        raise InvalidParams("path independence needs at least two base dimensions")
    x0 = [b[0] for b in box] if x0 is None else x0
    a = tuple(range(psi.m))
    b = a[::-1]
    ta = integrate_distribution(psi, x0, u0, box, steps, a)
    tb = integrate_distribution(psi, x0, u0, box, steps, b)
    return PathIndependence(float(np.max(np.abs(ta.values - tb.values))), tol, (a, b))


@dataclass
class GridResidual:
    """Residual on interior nodes: ``values`` of shape (*components, *interior)."""

    values: np.ndarray
    interior_axes: list[np.ndarray]
    components: int

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def argmax(self) -> dict[str, float]:
        if not self.values.size:
            return {}
        idx = np.unravel_index(int(np.argmax(np.abs(self.values))), self.values.shape)
        node = idx[self.values.ndim - len(self.interior_axes):]
        return {f"x{i + 1}": float(a[k]) for i, (a, k) in enumerate(zip(self.interior_axes, node))}


def _interior(trace: SectionTrace):
    if any(a.size < 3 for a in trace.axes):
        raise InvalidParams("central differences need at least 3 nodes per axis")
    return tuple(slice(1, -1) for _ in trace.axes)


def _first_derivs(trace: SectionTrace) -> np.ndarray:
    """Central first differences, shape (n, m, *interior)."""
    inner = _interior(trace)
    out = []
    for i, h in enumerate(trace.h):
        hi = list(inner)
        lo = list(inner)
        hi[i] = slice(2, None)
        lo[i] = slice(None, -2)
        out.append((trace.values[(slice(None),) + tuple(hi)]
                    - trace.values[(slice(None),) + tuple(lo)]) / (2 * h))
    return np.stack(out, axis=1)


def _second_derivs(trace: SectionTrace) -> np.ndarray:
    """Central second differences, shape (n, m, m, *interior)."""
    inner = _interior(trace)
    m = trace.m
    vals = trace.values
    h = trace.h

    def shifted(offsets):
        idx = []
        for k, off in enumerate(offsets):
            idx.append(slice(1 + off, vals.shape[k + 1] - 1 + off))
        return vals[(slice(None),) + tuple(idx)]

    zero = [0] * m
    out = np.empty((trace.n, m, m) + tuple(a.size - 2 for a in trace.axes))
    centre = vals[(slice(None),) + inner]
    for i in range(m):
        e = list(zero)
        e[i] = 1
        f = list(zero)
        f[i] = -1
        out[:, i, i] = (shifted(e) - 2 * centre + shifted(f)) / (h[i] * h[i])
        for j in range(i + 1, m):
            pp, pm, mp, mm = (list(zero) for _ in range(4))
            pp[i], pp[j] = 1, 1
            pm[i], pm[j] = 1, -1
            mp[i], mp[j] = -1, 1
            mm[i], mm[j] = -1, -1
            mixed = (shifted(pp) - shifted(pm) - shifted(mp) + shifted(mm)) / (4 * h[i] * h[j])
            out[:, i, j] = mixed
            out[:, j, i] = mixed
    return out


def holonomy_residual(trace: SectionTrace, psi: BaseField) -> GridResidual:
    """Central difference of phi minus psi(x, phi), shape (n, m, *interior)."""
    inner = _interior(trace)
    d1 = _first_derivs(trace)
    x = trace.mesh()[(slice(None),) + inner].reshape(trace.m, -1)
    u = trace.values[(slice(None),) + inner].reshape(trace.n, -1)
    pv = psi.evaluate(x, u, 0).val.reshape(d1.shape)
    return GridResidual(d1 - pv, [a[1:-1] for a in trace.axes], trace.n * trace.m)


def el_section_residual(theory: FieldTheory, trace: SectionTrace,
                        chunk: int = DEFAULT_CHUNK) -> GridResidual:
    """Second-order Euler-Lagrange residual along the prolongation of phi.

    ``L_u[A] - sum_i d/dx_i L_v[A][i]`` with the total derivative expanded by
    the chain rule using central differences of phi.
    """
    m, n = theory.m, theory.n
    if (trace.m, trace.n) != (m, n):
        raise InvalidParams("trace dimensions do not match the theory")
    k = m + n
    inner = _interior(trace)
    d1 = _first_derivs(trace).reshape(n, m, -1)
    d2 = _second_derivs(trace).reshape(n, m, m, -1)
    x = trace.mesh()[(slice(None),) + inner].reshape(m, -1)
    u = trace.values[(slice(None),) + inner].reshape(n, -1)
    total = x.shape[1]
    out = np.empty((n, total))
    for s in range(0, total, chunk):
        e = min(s + chunk, total)
        _, g, h = theory.lagrangian_values(x[:, s:e], u[:, s:e], d1[..., s:e], 2)
        size = e - s
        lvx = h[k:, :m].reshape(n, m, m, size)
        lvu = h[k:, m:k].reshape(n, m, n, size)
        lvv = h[k:, k:].reshape(n, m, n, m, size)
        out[:, s:e] = (g[m:k]
                       - np.einsum("aiiN->aN", lvx)
                       - np.einsum("biN,aibN->aN", d1[..., s:e], lvu)
                       - np.einsum("bijN,aibjN->aN", d2[..., s:e], lvv))
    shape = tuple(a.size - 2 for a in trace.axes)
    return GridResidual(out.reshape((n,) + shape), [a[1:-1] for a in trace.axes], n)


@dataclass
class Refinement:
    steps: tuple[int, int]
    errors: tuple[float, float]

    @property
    def ratio(self) -> float:
        return self.errors[0] / self.errors[1] if self.errors[1] > 0 else float("inf")


def refinement_ratio(psi: BaseField, x0, u0, box, steps: int,
                     exact: Callable[[np.ndarray], np.ndarray] | None = None,
                     order: Sequence[int] | None = None) -> Refinement:
    """Error reduction of the RK4 sweep when the step is halved.

    Errors are measured at the coarse nodes against ``exact(x)`` or, when no
    exact section is known, against a sweep with eight times as many steps.
    """
    coarse = integrate_distribution(psi, x0, u0, box, steps, order)
    fine = integrate_distribution(psi, x0, u0, box, 2 * steps, order)
    sub = tuple(slice(None, None, 2) for _ in range(psi.m))
    if exact is not None:
        ref = SectionTrace.from_function(exact, box, steps).values
    else:
        ref = integrate_distribution(psi, x0, u0, box, 8 * steps, order).values
        ref = ref[(slice(None),) + tuple(slice(None, None, 8) for _ in range(psi.m))]
    e1 = float(np.max(np.abs(coarse.values - ref)))
    e2 = float(np.max(np.abs(fine.values[(slice(None),) + sub] - ref)))
    return Refinement((steps, 2 * steps), (e1, e2))
