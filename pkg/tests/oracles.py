"""Hand-written reference formulas and finite-difference helpers.

Nothing here goes through the expression engine, so these serve as
independent checks of the jet-based residuals.
"""

import math

import numpy as np


def central_grad(f, z, h=1e-5):
    z = np.asarray(z, float)
    out = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        out.append((np.asarray(f(z + e)) - np.asarray(f(z - e))) / (2 * h))
    return np.stack(out, axis=-1)


def central_hess(f, z, h=1e-4):
    return central_grad(lambda w: central_grad(f, w, h), z, h)


# minimal surface, m = 2, n = 1


def ms_L(v):
    return math.sqrt(1.0 + v[0] ** 2 + v[1] ** 2)


def ms_Lv(v):
    r = ms_L(v)
    return np.array([v[0] / r, v[1] / r])


def ms_H(p):
    return -math.sqrt(1.0 - p[0] ** 2 - p[1] ** 2)


def ms_Hp(p):
    return np.array(p) / math.sqrt(1.0 - p[0] ** 2 - p[1] ** 2)


def ms_inverse_legendre(p):
    r = math.sqrt(1.0 - p[0] ** 2 - p[1] ** 2)
    return np.array([p[0] / r, p[1] / r])


# Lagrangian with velocity-position coupling, m = 2, n = 1:
# L = 0.5 (v1 - x2 u)^2 + 0.5 (v2 + x1)^2 + 0.5 x1 u^2


def tw_L(x, u, v):
    return 0.5 * (v[0] - x[1] * u) ** 2 + 0.5 * (v[1] + x[0]) ** 2 + 0.5 * x[0] * u ** 2


def tw_Lv(x, u, v):
    return np.array([v[0] - x[1] * u, v[1] + x[0]])


def tw_Lu(x, u, v):
    return -x[1] * (v[0] - x[1] * u) + x[0] * u


TW_TEXT = "0.5*(v1_1 - x2*u1)^2 + 0.5*(v1_2 + x1)^2 + 0.5*x1*u1^2"


def cartan_pullback_oracle(L, Lv, psi, x, u, h=1e-5):
    """Coefficients of d(psi^* Theta_L) for n = 1: returns the du ^ d^m x coefficient.

    psi^* Theta_L = H0 d^m x + P_i du ^ d^{m-1} x_i with H0 = L - psi.L_v and
    P = L_v, all evaluated at v = psi(x, u).  The closure coefficient is
    dH0/du - sum_i dP_i/dx_i.
    """
    def h0(z):
        xx, uu = z[:-1], z[-1]
        v = psi(xx, uu)
        return L(xx, uu, v) - float(np.dot(v, Lv(xx, uu, v)))

    def p(z):
        xx, uu = z[:-1], z[-1]
        return Lv(xx, uu, psi(xx, uu))

    z = np.concatenate([x, [u]])
    dh0 = central_grad(h0, z, h)[-1]
    dp = central_grad(p, z, h)             # [i][k]
    return dh0 - sum(dp[i, i] for i in range(len(x)))


def euler_lagrange_along(L, section, x0, h=1e-4):
    """L_u - sum_i d/dx_i L_v along u = section(x), computed by finite differences.

    ``section(x)`` returns (u, du/dx) for n = 1.
    """
    x0 = np.asarray(x0, float)

    def lv(x):
        u, du = section(x)
        return central_grad(lambda w: L(x, u, w), du, 1e-6)

    u0, du0 = section(x0)
    lu = central_grad(lambda w: L(x0, w[0], du0), np.array([u0]), 1e-6)[0]
    div = 0.0
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        div += (lv(x0 + e)[i] - lv(x0 - e)[i]) / (2 * h)
    return lu - div
