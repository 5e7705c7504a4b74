"""Hamiltonian-side residuals.

A candidate is a momentum section ``s[A][i](x, u)``.  With multivector
coefficients ``G[A][j][i](x, u, p)`` (the derivative of ``p[A][i]`` along base
direction ``j``) it is checked against the Hamilton-De Donder-Weyl
coefficient equations, tangency to the image of the section, closedness of
the pulled-back Hamiltonian form and the classic Hamilton-Jacobi equation.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .errors import InvalidParams
from .jet_core import (BaseField, Coords, ExprFunction, NotEvaluated, Values,
                       momentum_columns, split_columns)
from .legendre import Hamiltonian


class MomentumSection(BaseField):
    """Momenta ``s[A][i]`` over (x, u); components given A-major."""

    def __init__(self, m: int, n: int, components, constants=None):
        super().__init__(m, n, components, (n, m), constants, "section component")


class HamCoefficients:
    """Explicit coefficients ``G[A][j][i]`` over momentum coordinates."""

    max_order = 2
    label = "explicit"

    def __init__(self, m: int, n: int, components, constants=None):
        self.m, self.n = m, n
        self.coords = Coords(m, n)
        self.fn = ExprFunction(components, (n, m, m), self.coords, self.coords.momentum, constants,
                               "multivector coefficient")

    @classmethod
    def zero(cls, m: int, n: int) -> "HamCoefficients":
        obj = cls(m, n, ["0"] * (n * m * m))
        obj.label = "zero"
        return obj

    def evaluate(self, x, u, p, order: int = 0) -> Values:
        size = np.shape(x)[-1]
        return self.fn.evaluate(momentum_columns(self.coords, x, u, p), order, size)


class TangentHamCoefficients:
    """``G[B][j][k] = d s[B][k] / d x_j``, independent of p."""

    label = "tangent"

    def __init__(self, s: BaseField):
        self.s = s
        self.m, self.n = s.m, s.n
        self.max_order = s.max_order - 1

    def evaluate(self, x, u, p, order: int = 0) -> Values:
        m, n = self.m, self.n
        k = m + n
        sv = self.s.evaluate(x, u, order + 1)
        val = np.transpose(sv.grad[:, :, :m], (0, 2, 1, 3))
        grad = None
        if order >= 1:
            size = np.shape(x)[-1]
            grad = np.zeros((n, m, m, k + n * m, size))
            grad[..., :k, :] = np.transpose(sv.hess[:, :, :m, :, :], (0, 2, 1, 3, 4))
        return Values(val, grad)


class DeDonderWeylCoefficients:
    """For one base dimension the field equations fix ``G[A] = -dH/du[A]``."""

    max_order = 0
    label = "de-donder-weyl"
    # the field equations hold by construction, so the suite omits them
    solves_field_equations = True

    def __init__(self, H: Hamiltonian):
        if H.m != 1:
            raise InvalidParams("De Donder-Weyl coefficients are unique only for one base dimension")
        self.H = H
        self.m, self.n = 1, H.n

    def evaluate(self, x, u, p, order: int = 0) -> Values:
        if order > 0:
            raise ValueError("De Donder-Weyl coefficients carry no derivatives")
        _, grad, _ = self.H.values(x, u, p, 1)
        return Values(-grad[1:1 + self.n].reshape(self.n, 1, 1, -1))


def default_ham_coefficients(H: Hamiltonian, s: BaseField):
    if H.m == 1:
        return DeDonderWeylCoefficients(H)
    return TangentHamCoefficients(s)


class _HamiltonianBlocks:
    def __init__(self, H: Hamiltonian, x, u, p, order: int = 1):
        m, n = H.m, H.n
        k = m + n
        size = np.shape(x)[-1]
        self.val, g, h = H.values(x, u, p, order)
        self.Hx = g[:m]
        self.Hu = g[m:k]
        self.Hp = g[k:].reshape(n, m, size)                      # [A][j]
        if order == 2:
            self.Hpx = h[k:, :m].reshape(n, m, m, size)          # [A][k][j]
            self.Hpu = h[k:, m:k].reshape(n, m, n, size)         # [A][k][B]
            self.Hpp = h[k:, k:].reshape(n, m, n, m, size)       # [A][k][B][l]


# ------------------------------------------------------------- residuals


def hdw_batch(H: Hamiltonian, G, x, u, p) -> np.ndarray:
    """``sum_i G[A][i][i] + dH/du[A]``, shape (n, N)."""
    hb = _HamiltonianBlocks(H, x, u, p, 1)
    g = G.evaluate(x, u, p, 0).val
    return np.einsum("aiiN->aN", g) + hb.Hu


def hdw_residual(H: Hamiltonian, G, mpt) -> np.ndarray:
    return hdw_batch(H, G, mpt.x[:, None], mpt.u[:, None], mpt.p[..., None])[:, 0]


def integrability_ham_batch(H: Hamiltonian, G, x, u, p):
    """Mixed-derivative family (shape (n, P, N)) and bracket family
    (shape (n, m, P, N)) over pairs j < k of base directions."""
    m, n = H.m, H.n
    k = m + n
    pairs = list(combinations(range(m), 2))
    size = np.shape(x)[-1]
    if not pairs:
        return np.zeros((n, 0, size)), np.zeros((n, m, 0, size))
    hb = _HamiltonianBlocks(H, x, u, p, 2)
    gv = G.evaluate(x, u, p, 1)
    g, gg = gv.val, gv.grad
    # D_j Q = dQ/dx_j + H_p[B][j] dQ/du[B] + G[B][j][l] dQ/dp[B][l]
    # family 1 applies D_j to H_p[A][k]
    d1 = (np.transpose(hb.Hpx, (2, 0, 1, 3))
          + np.einsum("bjN,akbN->jakN", hb.Hp, hb.Hpu)
          + np.einsum("bjlN,akblN->jakN", g, hb.Hpp))               # [j][A][k]
    gx = gg[..., :m, :]                                             # [A][k][i][j]
    gu = gg[..., m:k, :]                                            # [A][k][i][B]
    gp = gg[..., k:, :].reshape(n, m, m, n, m, size)                # [A][k][i][B][l]
    d2 = (np.transpose(gx, (3, 0, 1, 2, 4))
          + np.einsum("bjN,akibN->jakiN", hb.Hp, gu)
          + np.einsum("bjlN,akiblN->jakiN", g, gp))                 # [j][A][k][i]
    fam1 = np.stack([d1[j, :, kk] - d1[kk, :, j] for j, kk in pairs], axis=1)       # (n, P, N)
    fam2 = np.stack([d2[j, :, kk] - d2[kk, :, j] for j, kk in pairs], axis=2)       # (n, m, P, N)
    return fam1, fam2


def integrability_residual_ham(H: Hamiltonian, G, mpt):
    f1, f2 = integrability_ham_batch(H, G, mpt.x[:, None], mpt.u[:, None], mpt.p[..., None])
    return f1[..., 0], f2[..., 0]


def gen_ham_batch(H: Hamiltonian, s: BaseField, G, x, u, sv: Values | None = None,
                  hb: _HamiltonianBlocks | None = None) -> np.ndarray:
    """Tangency residual ``R[B][j][k]``, shape (n, m, m, N)."""
    m = H.m
    sv = sv or s.evaluate(x, u, 1)
    hb = hb or _HamiltonianBlocks(H, x, u, sv.val, 1)
    dx = np.transpose(sv.grad[:, :, :m], (0, 2, 1, 3))                  # [B][j][k]
    du = np.einsum("ajN,bkaN->bjkN", hb.Hp, sv.grad[:, :, m:])
    return dx + du - G.evaluate(x, u, sv.val, 0).val


def gen_ham_hj_residual(H: Hamiltonian, s: BaseField, G, x, u) -> np.ndarray:
    xb, ub = np.asarray(x, float)[:, None], np.asarray(u, float)[:, None]
    return gen_ham_batch(H, s, G, xb, ub)[..., 0]


def closedness_batch(H: Hamiltonian, s: BaseField, x, u, sv: Values | None = None,
                     hb: _HamiltonianBlocks | None = None):
    """Closedness families: (n, N) and the full antisymmetric (n, n, m, N)."""
    m = H.m
    sv = sv or s.evaluate(x, u, 1)
    hb = hb or _HamiltonianBlocks(H, x, u, sv.val, 1)
    dsu = sv.grad[:, :, m:]                                           # [A][i][B]
    fam1 = (hb.Hu + np.einsum("bjN,bjaN->aN", hb.Hp, dsu)
            + np.einsum("aiiN->aN", sv.grad[:, :, :m]))
    fam2 = np.transpose(dsu, (0, 2, 1, 3)) - np.transpose(dsu, (2, 0, 1, 3))
    return fam1, fam2


def ham_closedness_residual(H: Hamiltonian, s: BaseField, x, u):
    xb, ub = np.asarray(x, float)[:, None], np.asarray(u, float)[:, None]
    f1, f2 = closedness_batch(H, s, xb, ub)
    return f1[..., 0], f2[..., 0]


def classic_hj_batch(H: Hamiltonian, W: BaseField, x, u) -> np.ndarray:
    """``sum_i dW[i]/dx_i + H(x, u, dW/du)``, shape (N,)."""
    m = H.m
    wv = W.evaluate(x, u, 1)
    p = np.transpose(wv.grad[:, m:], (1, 0, 2))                       # p[A][i] = dW[i]/du[A]
    hval, _, _ = H.values(x, u, p, 0)
    return np.einsum("iiN->N", wv.grad[:, :m]) + hval


def classic_hj_residual(H: Hamiltonian, W: BaseField, x, u) -> float:
    xb, ub = np.asarray(x, float)[:, None], np.asarray(u, float)[:, None]
    return float(classic_hj_batch(H, W, xb, ub)[0])


def _antisym_pairs(fam2: np.ndarray) -> np.ndarray:
    n = fam2.shape[0]
    pairs = list(combinations(range(n), 2))
    if not pairs:
        return np.zeros((0,) + fam2.shape[2:])
    return np.stack([fam2[a, b] for a, b in pairs])


# ----------------------------------------------------------------- suites

MODES = ("generalized", "standard", "classic")


def hamiltonian_suite(H: Hamiltonian, s: BaseField | None, mode: str = "standard", G=None,
                      W: BaseField | None = None, integrability: bool = False, guard=None):
    """Residual operator for ``grid_report`` plus its informational families.

    generalized: De Donder-Weyl on the image + tangency.  The De Donder-Weyl
                 family is omitted when G was solved from it.
    standard:    generalized + closedness.
    classic:     classic Hamilton-Jacobi equation for ``W``.
    ``guard(x, u, p)`` may raise for momenta outside the working domain.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "classic":
        if W is None:
            raise InvalidParams("classic mode needs a generating form")
    elif s is None:
        raise InvalidParams(f"{mode} mode needs a momentum section")
    if s is not None and G is None:
        G = default_ham_coefficients(H, s)
    c = H.coords
    info = ("integrability_mixed", "integrability_bracket") if integrability else ()

    def op(columns, size):
        x, u = split_columns(c, columns, size)
        out: dict[str, object] = {}
        if mode == "classic":
            if guard is not None:
                wv = W.evaluate(x, u, 1)
                guard(x, u, np.transpose(wv.grad[:, H.m:], (1, 0, 2)))
            out["hamilton_jacobi"] = classic_hj_batch(H, W, x, u)
        else:
            sv = s.evaluate(x, u, 1)
            if guard is not None:
                guard(x, u, sv.val)
            hb = _HamiltonianBlocks(H, x, u, sv.val, 1)
            if not getattr(G, "solves_field_equations", False):
                out["de_donder_weyl"] = np.einsum("aiiN->aN", G.evaluate(x, u, sv.val, 0).val) + hb.Hu
            out["tangency"] = gen_ham_batch(H, s, G, x, u, sv, hb)
            if mode == "standard":
                f1, f2 = closedness_batch(H, s, x, u, sv, hb)
                out["closedness"] = f1
                out["closedness_antisym"] = _antisym_pairs(f2)
        if integrability:
            if s is None:
                reason = "no momentum section"
                out["integrability_mixed"] = NotEvaluated(reason)
                out["integrability_bracket"] = NotEvaluated(reason)
            elif H.m == 1 or getattr(G, "max_order", 0) >= 1:
                sv0 = s.evaluate(x, u, 0)
                out["integrability_mixed"], out["integrability_bracket"] = \
                    integrability_ham_batch(H, G, x, u, sv0.val)
            else:
                reason = "coefficients carry no derivatives"
                out["integrability_mixed"] = NotEvaluated(reason)
                out["integrability_bracket"] = NotEvaluated(reason)
        return out

    return op, info
