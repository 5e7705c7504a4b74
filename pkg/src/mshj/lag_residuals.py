"""Lagrangian-side residuals.

A candidate is a jet field ``psi[A][i](x, u)`` assigning velocities to every
configuration.  Together with multivector coefficients
``F[j][i][A](x, u, v)`` (the derivative of ``v[A][i]`` along base direction
``j``) it is checked against:

* the Euler-Lagrange coefficient equations,
* tangency of the multivector field to the image of the jet field,
* isotropy: the pullback of the Cartan (m+1)-form by the jet field vanishes,
* the generating-form equation for ``W[i](x, u)``,
* integrability of the multivector field (reported, not gating).

All restrictions to the image of the jet field substitute ``v = psi(x, u)``.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .errors import InvalidParams
from .jet_core import (BaseField, Coords, ExprFunction, FieldTheory, NotEvaluated, Values,
                       jet_columns, split_columns)


class JetField(BaseField):
    """Velocities ``psi[A][i]`` over (x, u); components given A-major."""

    def __init__(self, m: int, n: int, components, constants=None):
        super().__init__(m, n, components, (n, m), constants, "jet field component")


class GeneratingForm(BaseField):
    """Components ``W[i]`` of the semibasic (m-1)-form ``W^i d^{m-1}x_i``."""

    def __init__(self, m: int, n: int, components, constants=None):
        super().__init__(m, n, components, (m,), constants, "generating form component")


# ------------------------------------------------------------ coefficients


class LagCoefficients:
    """Explicit coefficients ``F[j][i][A]`` over jet coordinates."""

    max_order = 2
    label = "explicit"

    def __init__(self, m: int, n: int, components, constants=None):
        self.m, self.n = m, n
        self.coords = Coords(m, n)
        self.fn = ExprFunction(components, (m, m, n), self.coords, self.coords.jet, constants,
                               "multivector coefficient")

    @classmethod
    def zero(cls, m: int, n: int) -> "LagCoefficients":
        obj = cls(m, n, ["0"] * (m * m * n))
        obj.label = "zero"
        return obj

    def evaluate(self, x, u, v, order: int = 0) -> Values:
        size = np.shape(x)[-1]
        return self.fn.evaluate(jet_columns(self.coords, x, u, v), order, size)


class TangentLagCoefficients:
    """``F[j][k][B] = d psi[B][k] / d x_j``, independent of v."""

    label = "tangent"

    def __init__(self, psi: BaseField):
        self.psi = psi
        self.m, self.n = psi.m, psi.n
        self.max_order = psi.max_order - 1

    def evaluate(self, x, u, v, order: int = 0) -> Values:
        m, n = self.m, self.n
        k = m + n
        pv = self.psi.evaluate(x, u, order + 1)
        # pv.grad[B, k, c] -> F[j=c][k][B]
        val = np.transpose(pv.grad[:, :, :m], (2, 1, 0, 3))
        grad = None
        if order >= 1:
            size = np.shape(x)[-1]
            grad = np.zeros((m, m, n, k + n * m, size))
            grad[..., :k, :] = np.transpose(pv.hess[:, :, :m, :, :], (2, 1, 0, 3, 4))
        return Values(val, grad)


class EulerLagrangeCoefficients:
    """For one base dimension the Euler-Lagrange equations fix F uniquely:
    ``L_vv F = L_u - L_vt - v L_vu``."""

    max_order = 0
    label = "euler-lagrange"
    # the field equations hold by construction, so the suite omits them
    solves_field_equations = True

    def __init__(self, theory: FieldTheory):
        if theory.m != 1:
            raise InvalidParams("Euler-Lagrange coefficients are unique only for one base dimension")
        self.theory = theory
        self.m, self.n = 1, theory.n

    def evaluate(self, x, u, v, order: int = 0) -> Values:
        if order > 0:
            raise ValueError("Euler-Lagrange coefficients carry no derivatives")
        n = self.n
        _, lg, lh = self.theory.lagrangian_values(x, u, v, 2)
        rhs = lg[1:1 + n] - lh[1 + n:, 0] - np.einsum("bN,abN->aN", v[:, 0, :], lh[1 + n:, 1:1 + n])
        a = np.moveaxis(lh[1 + n:, 1 + n:], -1, 0)
        f = np.linalg.solve(a, rhs.T[..., None])[..., 0].T
        return Values(f.reshape(1, 1, n, -1))


def default_lag_coefficients(theory: FieldTheory, psi: BaseField):
    """Euler-Lagrange coefficients for one base dimension, tangent ones otherwise."""
    if theory.m == 1:
        return EulerLagrangeCoefficients(theory)
    return TangentLagCoefficients(psi)


# ---------------------------------------------------------- L derivatives


class _LagrangianBlocks:
    """Named slices of L and its derivatives at a batch of jet points."""

    def __init__(self, theory: FieldTheory, x, u, v, order: int = 2):
        m, n = theory.m, theory.n
        k = m + n
        size = np.shape(x)[-1]
        self.val, g, h = theory.lagrangian_values(x, u, v, order)
        self.Lx = g[:m]
        self.Lu = g[m:k]
        self.Lv = g[k:].reshape(n, m, size)
        if order == 2:
            self.Lvx = h[k:, :m].reshape(n, m, m, size)          # [A][i][j]
            self.Lvu = h[k:, m:k].reshape(n, m, n, size)         # [A][i][B]
            self.Lvv = h[k:, k:].reshape(n, m, n, m, size)       # [A][i][B][j]


# ------------------------------------------------------------- residuals


def el_residual_batch(theory: FieldTheory, F, x, u, v) -> np.ndarray:
    """Euler-Lagrange coefficient residual, shape (n, N)."""
    lb = _LagrangianBlocks(theory, x, u, v)
    f = F.evaluate(x, u, v, 0).val  # [j][k][B]
    return (lb.Lu
            - np.einsum("aiiN->aN", lb.Lvx)
            - np.einsum("biN,aibN->aN", v, lb.Lvu)
            - np.einsum("ikbN,aibkN->aN", f, lb.Lvv))


def el_coefficient_residual(theory: FieldTheory, F, pt) -> np.ndarray:
    return el_residual_batch(theory, F, pt.x[:, None], pt.u[:, None], pt.v[..., None])[:, 0]


def _pairs(m: int) -> list[tuple[int, int]]:
    return list(combinations(range(m), 2))


def integrability_lag_batch(F, theory: FieldTheory, x, u, v):
    """Symmetry family ``F[j][k][A] - F[k][j][A]`` (shape (n, P, N)) and
    bracket family (shape (n, m, P, N)) over pairs j < k."""
    m, n = theory.m, theory.n
    k = m + n
    pairs = _pairs(m)
    size = np.shape(x)[-1]
    if not pairs:
        return np.zeros((n, 0, size)), np.zeros((n, m, 0, size))
    fv = F.evaluate(x, u, v, 1)
    f, fg = fv.val, fv.grad
    fx = fg[..., :m, :]                              # [k][i][A][j]
    fu = fg[..., m:k, :]                             # [k][i][A][B]
    fvv = fg[..., k:, :].reshape(m, m, n, n, m, size)  # [k][i][A][B][l]
    total = (np.transpose(fx, (3, 0, 1, 2, 4))
             + np.einsum("bjN,kiabN->jkiaN", v, fu)
             + np.einsum("jlbN,kiablN->jkiaN", f, fvv))  # D_j F[k][i][A]
    sym = np.stack([f[j, kk] - f[kk, j] for j, kk in pairs], axis=1)           # (n, P, N)
    bracket = np.stack([total[j, kk] - total[kk, j] for j, kk in pairs], axis=2)  # (m, n, P, N)
    return sym, np.transpose(bracket, (1, 0, 2, 3))


def integrability_residual_lag(F, theory: FieldTheory, pt):
    sym, bracket = integrability_lag_batch(F, theory, pt.x[:, None], pt.u[:, None], pt.v[..., None])
    return sym[..., 0], bracket[..., 0]


def _psi_values(psi: BaseField, x, u, order: int) -> Values:
    return psi.evaluate(x, u, order)


def gen_lag_batch(theory: FieldTheory, psi: BaseField, F, x, u, pv: Values | None = None) -> np.ndarray:
    """Tangency residual ``R[j][k][B]``, shape (m, m, n, N)."""
    m = theory.m
    pv = pv or _psi_values(psi, x, u, 1)
    dx = np.transpose(pv.grad[:, :, :m], (2, 1, 0, 3))
    du = np.einsum("ajN,bkaN->jkbN", pv.val, pv.grad[:, :, m:])
    return dx + du - F.evaluate(x, u, pv.val, 0).val


def gen_lag_hj_residual(theory: FieldTheory, psi: BaseField, F, x, u) -> np.ndarray:
    xb, ub = np.asarray(x, float)[:, None], np.asarray(u, float)[:, None]
    return gen_lag_batch(theory, psi, F, xb, ub)[..., 0]


def isotropy_lag_batch(theory: FieldTheory, psi: BaseField, x, u, pv: Values | None = None,
                       form: str = "exact"):
    """Isotropy residual families of the jet field.

    ``form="exact"`` returns the coefficients of the pullback of the Cartan
    (m+1)-form: an antisymmetric family (shape (m, P, N) over pairs A < B)
    and a closure family (shape (n, N)).  ``form="combined"`` returns the
    unsymmetrized family ``L_{v[A][i] u[B]} + L_{v[A][i] v[D][k]} dpsi[D][k]/du[B]``
    (shape (m, n, n, N), indexed [i][A][B]) and the reduced family
    ``L_{v[A][i] v[B][k]} dpsi[B][k]/dx_i - L_{u[A]}`` (shape (n, N)).
    """
    m, n = theory.m, theory.n
    pv = pv or _psi_values(psi, x, u, 1)
    lb = _LagrangianBlocks(theory, x, u, pv.val)
    dpx = pv.grad[:, :, :m]   # [B][k][j]
    dpu = pv.grad[:, :, m:]   # [B][k][C]
    a = lb.Lvu + np.einsum("aidkN,dkbN->aibN", lb.Lvv, dpu)  # [A][i][B]
    b_red = np.einsum("aibkN,bkiN->aN", lb.Lvv, dpx) - lb.Lu
    if form == "combined":
        return np.transpose(a, (1, 0, 2, 3)), b_red
    if form != "exact":
        raise ValueError("form must be 'exact' or 'combined'")
    closure = b_red + np.einsum("aiiN->aN", lb.Lvx) + np.einsum("diN,diaN->aN", pv.val, a)
    pairs = _pairs(n)
    size = np.shape(x)[-1]
    if pairs:
        anti = np.stack([a[al, :, be] - a[be, :, al] for al, be in pairs], axis=1)
    else:
        anti = np.zeros((m, 0, size))
    return anti, closure


def lag_isotropy_residual(theory: FieldTheory, psi: BaseField, x, u, form: str = "exact"):
    xb, ub = np.asarray(x, float)[:, None], np.asarray(u, float)[:, None]
    fa, fb = isotropy_lag_batch(theory, psi, xb, ub, form=form)
    return fa[..., 0], fb[..., 0]


def generating_lag_batch(theory: FieldTheory, psi: BaseField, W: BaseField, x, u,
                         pv: Values | None = None):
    """Scalar generating-form residual (N,) and momentum match (n, m, N)."""
    m = theory.m
    pv = pv or _psi_values(psi, x, u, 0)
    wv = W.evaluate(x, u, 1)
    lb = _LagrangianBlocks(theory, x, u, pv.val, order=1)
    wx = np.einsum("iiN->N", wv.grad[:, :m])
    wu = wv.grad[:, m:]  # [i][A]
    scalar = wx + np.einsum("aiN,iaN->N", pv.val, wu) - lb.val
    match = np.transpose(wu, (1, 0, 2)) - lb.Lv
    return scalar, match


def lag_generating_residual(theory: FieldTheory, psi: BaseField, W: BaseField, x, u):
    xb, ub = np.asarray(x, float)[:, None], np.asarray(u, float)[:, None]
    s, mm = generating_lag_batch(theory, psi, W, xb, ub)
    return float(s[0]), mm[..., 0]


# ----------------------------------------------------------------- suites

MODES = ("generalized", "standard", "classic")


def lagrangian_suite(theory: FieldTheory, psi: BaseField, mode: str = "standard", F=None,
                     W: BaseField | None = None, integrability: bool = False,
                     isotropy_form: str = "exact"):
    """Residual operator for ``grid_report`` plus its informational families.

    generalized: Euler-Lagrange on the image + tangency.  The Euler-Lagrange
                 family is omitted when F was solved from it.
    standard:    generalized + isotropy.
    classic:     generating-form equation + momentum match (needs ``W``).
    Integrability families are informational and never gate the verdict.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "classic" and W is None:
        raise InvalidParams("classic mode needs a generating form")
    F = F if F is not None else default_lag_coefficients(theory, psi)
    c = theory.coords
    info = ("integrability_symmetry", "integrability_bracket") if integrability else ()

    def op(columns, size):
        x, u = split_columns(c, columns, size)
        out: dict[str, object] = {}
        if mode == "classic":
            pv = psi.evaluate(x, u, 0)
            out["hj_scalar"], out["momentum_match"] = generating_lag_batch(theory, psi, W, x, u, pv)
        else:
            pv = psi.evaluate(x, u, 1)
            if not getattr(F, "solves_field_equations", False):
                out["euler_lagrange"] = el_residual_batch(theory, F, x, u, pv.val)
            out["tangency"] = gen_lag_batch(theory, psi, F, x, u, pv)
            if mode == "standard":
                fa, fb = isotropy_lag_batch(theory, psi, x, u, pv, isotropy_form)
                if isotropy_form == "exact":
                    out["isotropy_antisym"], out["isotropy_closure"] = fa, fb
                else:
                    out["isotropy_a"], out["isotropy_b"] = fa, fb
        if integrability:
            if theory.m == 1 or getattr(F, "max_order", 0) >= 1:
                pv0 = psi.evaluate(x, u, 0)
                out["integrability_symmetry"], out["integrability_bracket"] = \
                    integrability_lag_batch(F, theory, x, u, pv0.val)
            else:
                reason = "coefficients carry no derivatives"
                out["integrability_symmetry"] = NotEvaluated(reason)
                out["integrability_bracket"] = NotEvaluated(reason)
        return out

    return op, info
