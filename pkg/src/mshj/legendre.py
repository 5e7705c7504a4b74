"""Legendre maps, their Newton inverse, and Hamiltonians.

A Hamiltonian is either an explicit expression in ``(x, u, p)`` or derived
from a regular Lagrangian as ``H = v.p - L`` at ``v = Leg^-1(p)``.  The
derived form never differentiates through the Newton iteration.  With
``A = L_vv``, ``B = L_vz`` and ``C = L_zz`` (``z`` the base coordinates x, u):

    H_z  = -L_z            H_p  = v
    H_pp = A^-1            H_pz = -A^-1 B        H_zz = B^T A^-1 B - C
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import DomainError, NonConvergence, OutOfDomain, SingularJacobian
from .jet_core import (Coords, ExtendedMomentumPoint, FieldTheory, JetPoint,
                       RestrictedMomentumPoint, momentum_columns, prepare)


@dataclass(frozen=True)
class NewtonSettings:
    max_iter: int = 50
    tol: float = 1e-12          # on max |L_v - p|, scaled by max(1, |p|)
    initial: str = "zero"       # "zero" or "provided"
    singular_det: float = 1e-14
    divergence_cap: float = 1e6

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.initial not in ("zero", "provided"):
            raise ValueError("initial guess policy must be 'zero' or 'provided'")


def restricted_legendre_batch(theory: FieldTheory, x, u, v) -> np.ndarray:
    _, grad, _ = theory.lagrangian_values(x, u, v, 1)
    k = theory.m + theory.n
    return grad[k:].reshape(theory.n, theory.m, -1)


def restricted_legendre(theory: FieldTheory, pt: JetPoint) -> RestrictedMomentumPoint:
    p = restricted_legendre_batch(theory, pt.x[:, None], pt.u[:, None], pt.v[..., None])
    return RestrictedMomentumPoint(pt.x, pt.u, p[..., 0])


def extended_legendre(theory: FieldTheory, pt: JetPoint) -> ExtendedMomentumPoint:
    val, grad, _ = theory.lagrangian_values(pt.x[:, None], pt.u[:, None], pt.v[..., None], 1)
    k = theory.m + theory.n
    p = grad[k:, 0].reshape(theory.n, theory.m)
    p0 = float(val[0] - np.sum(pt.v * p))
    return ExtendedMomentumPoint(pt.x, pt.u, p, p0)


def inverse_legendre_batch(theory: FieldTheory, x, u, p, settings: NewtonSettings = NewtonSettings(),
                           v0=None) -> tuple[np.ndarray, int]:
    """Solve ``L_v(x, u, v) = p`` for v at every point by Newton's method.

    Returns ``v`` with shape (n, m, N) and the number of iterations used.
    """
    n, m = theory.n, theory.m
    k, nm = m + n, n * m
    size = np.shape(x)[-1]
    target = np.reshape(p, (nm, size)).astype(float)
    if settings.initial == "provided":
        if v0 is None:
            raise ValueError("initial guess policy 'provided' needs v0")
        v = np.broadcast_to(np.reshape(v0, (nm, -1)), (nm, size)).astype(float).copy()
    else:
        v = np.zeros((nm, size))
    scale = np.maximum(1.0, np.max(np.abs(target), axis=0))
    first_step = None
    for it in range(settings.max_iter + 1):
        try:
            _, grad, hess = theory.lagrangian_values(x, u, v.reshape(n, m, size), 2)
        except DomainError as err:
            if it == 0:
                raise
            exc = OutOfDomain(f"Newton iterate left the domain of L: {err}")
            exc.index = err.index
            raise exc from err
        resid = grad[k:] - target
        norm = np.max(np.abs(resid), axis=0)
        done = norm <= settings.tol * scale
        if done.all():
            return v.reshape(n, m, size), it
        if it == settings.max_iter:
            exc = NonConvergence(f"inverse Legendre map did not converge in {it} iterations "
                                 f"(residual {norm.max():.3e})")
            exc.index = int(np.flatnonzero(~done)[0])
            raise exc
        active = np.flatnonzero(~done)
        jac = np.moveaxis(hess[k:, k:, active], -1, 0)
        det = np.linalg.det(jac)
        vnorm = np.max(np.abs(v[:, active]), axis=0)
        bad = np.abs(det) < settings.singular_det
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            idx = int(active[j])
            grown = first_step is not None and vnorm[j] > 100.0 * max(1.0, first_step[idx])
            if grown:
                exc = OutOfDomain("momentum lies outside the image of the Legendre map "
                                  "(Newton iterates diverge)")
            else:
                exc = SingularJacobian(f"velocity Hessian is singular (|det|={abs(det[j]):.3e})")
            exc.index = idx
            raise exc
        step = np.linalg.solve(jac, resid[:, active].T[..., None])[..., 0].T
        v[:, active] -= step
        if first_step is None:
            first_step = np.max(np.abs(v), axis=0)
        over = np.max(np.abs(v[:, active]), axis=0) > settings.divergence_cap
        if over.any():
            exc = OutOfDomain("momentum lies outside the image of the Legendre map "
                              "(Newton iterates diverge)")
            exc.index = int(active[np.flatnonzero(over)[0]])
            raise exc
    raise AssertionError("unreachable")


def inverse_legendre(theory: FieldTheory, mpt: RestrictedMomentumPoint,
                     settings: NewtonSettings = NewtonSettings(), v0=None) -> JetPoint:
    v, _ = inverse_legendre_batch(theory, mpt.x[:, None], mpt.u[:, None], mpt.p[..., None],
                                  settings, None if v0 is None else np.asarray(v0)[..., None])
    return JetPoint(mpt.x, mpt.u, v[..., 0])


class Hamiltonian:
    """H(x, u, p), explicit or derived from a regular Lagrangian."""

    def __init__(self, m: int, n: int, expression=None, theory: FieldTheory | None = None,
                 settings: NewtonSettings = NewtonSettings()):
        if (expression is None) == (theory is None):
            raise ValueError("give exactly one of an expression or a theory")
        self.m, self.n = m, n
        self.coords = Coords(m, n)
        self.settings = settings
        self.theory = theory
        self.node = None
        if expression is not None:
            self.node = prepare(expression, self.coords, self.coords.momentum, what="Hamiltonian")
        elif (theory.m, theory.n) != (m, n):
            raise ValueError("theory dimensions do not match")

    @classmethod
    def explicit(cls, m: int, n: int, expression) -> "Hamiltonian":
        return cls(m, n, expression=expression)

    @classmethod
    def derived(cls, theory: FieldTheory, settings: NewtonSettings = NewtonSettings()) -> "Hamiltonian":
        return cls(theory.m, theory.n, theory=theory, settings=settings)

    @property
    def is_derived(self) -> bool:
        return self.theory is not None

    def describe(self) -> str:
        if self.node is not None:
            return ex.to_text(self.node)
        return f"v.p - L at v = Leg^-1(p) for L = {ex.to_text(self.theory.lagrangian)}"

    def values(self, x, u, p, order: int = 1, v0=None):
        """H with gradient (D, N) and Hessian (D, D, N) over (x, u, p)."""
        size = np.shape(x)[-1]
        if self.node is not None:
            return ex.jet(self.node, momentum_columns(self.coords, x, u, p), self.coords.momentum,
                          order, size)
        return self._derived_values(x, u, p, order, v0)

    def _derived_values(self, x, u, p, order, v0):
        m, n = self.m, self.n
        k, nm = m + n, n * m
        size = np.shape(x)[-1]
        settings = self.settings
        if v0 is not None and settings.initial == "zero":
            settings = NewtonSettings(settings.max_iter, settings.tol, "provided",
                                      settings.singular_det, settings.divergence_cap)
        v, _ = inverse_legendre_batch(self.theory, x, u, p, settings, v0)
        lval, lgrad, lhess = self.theory.lagrangian_values(x, u, v, 2 if order == 2 else 1)
        vf = v.reshape(nm, size)
        pf = np.reshape(p, (nm, size))
        val = np.sum(vf * pf, axis=0) - lval
        if order == 0:
            return val, None, None
        grad = np.concatenate([-lgrad[:k], vf], axis=0)
        if order == 1:
            return val, grad, None
        a = np.moveaxis(lhess[k:, k:], -1, 0)
        b = np.moveaxis(lhess[k:, :k], -1, 0)
        c = np.moveaxis(lhess[:k, :k], -1, 0)
        ainv = np.linalg.inv(a)
        ainv = 0.5 * (ainv + np.swapaxes(ainv, 1, 2))
        hpz = -ainv @ b
        hzz = np.swapaxes(b, 1, 2) @ ainv @ b - c
        hzz = 0.5 * (hzz + np.swapaxes(hzz, 1, 2))
        full = np.empty((size, k + nm, k + nm))
        full[:, :k, :k] = hzz
        full[:, k:, :k] = hpz
        full[:, :k, k:] = np.swapaxes(hpz, 1, 2)
        full[:, k:, k:] = ainv
        return val, grad, np.moveaxis(full, 0, -1)

    def __call__(self, mpt: RestrictedMomentumPoint) -> float:
        return hamiltonian(self, mpt)


def hamiltonian(h: Hamiltonian, mpt: RestrictedMomentumPoint) -> float:
    val, _, _ = h.values(mpt.x[:, None], mpt.u[:, None], mpt.p[..., None], 0)
    return float(val[0])
