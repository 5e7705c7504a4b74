import numpy as np
import pytest

from mshj.errors import InvalidParams, OutOfDomain
from mshj.ham_residuals import (DeDonderWeylCoefficients, HamCoefficients, MomentumSection,
                                TangentHamCoefficients, classic_hj_residual, closedness_batch,
                                gen_ham_hj_residual, ham_closedness_residual, hamiltonian_suite,
                                hdw_batch, integrability_ham_batch)
from mshj.jet_core import GridSpec, grid_report
from mshj.lag_residuals import GeneratingForm
from mshj.legendre import Hamiltonian

import oracles

MS_H = Hamiltonian.explicit(2, 1, "-sqrt(1-p1_1^2-p1_2^2)")


@pytest.mark.parametrize("n", [1, 2, 3])
def test_one_base_dimension_emits_exactly_n_field_equations(n):
    H = Hamiltonian.explicit(1, n, " + ".join(f"0.5*p{a + 1}_1^2 + 0.5*u{a + 1}^2" for a in range(n)))
    s = MomentumSection(1, n, [f"u{a + 1}" for a in range(n)])
    op, _ = hamiltonian_suite(H, s, "generalized")
    grid = GridSpec([("x1", 0, 1, 3)] + [(f"u{a + 1}", -1, 1, 3) for a in range(n)])
    rep = grid_report(op, grid, 1e-9)
    # G is solved from the field equations, which leaves the n tangency equations
    assert list(rep.families) == ["tangency"]
    assert sum(f.components for f in rep.families.values()) == n


def test_de_donder_weyl_coefficients():
    H = Hamiltonian.explicit(1, 1, "0.5*p^2 + 0.5*q^2")
    G = DeDonderWeylCoefficients(H)
    q = np.linspace(-1, 1, 5)
    g = G.evaluate(np.zeros((1, 5)), q[None], np.ones((1, 1, 5))).val
    assert np.allclose(g[0, 0, 0], -q)
    assert np.allclose(hdw_batch(H, G, np.zeros((1, 5)), q[None], np.ones((1, 1, 5))), 0)
    with pytest.raises(InvalidParams):
        DeDonderWeylCoefficients(MS_H)


def test_closedness_matches_pullback_of_hamiltonian_cartan_form():
    s = MomentumSection(2, 1, [["0.2*sin(x2) + 0.1*u1", "0.3*x1*u1"]])

    def s_np(z):
        x1, x2, u = z
        return np.array([0.2 * np.sin(x2) + 0.1 * u, 0.3 * x1 * u])

    z = np.array([0.4, -0.3, 0.6])
    f1, f2 = ham_closedness_residual(MS_H, s, z[:2], z[2:])
    # d(-H(s) d^2x + s_i du ^ d^1 x_i) has du ^ d^2x coefficient
    # -dH(s)/du - sum_i ds_i/dx_i
    dh = oracles.central_grad(lambda w: oracles.ms_H(s_np(w)), z)
    ds = oracles.central_grad(s_np, z)
    want = -dh[2] - ds[0, 0] - ds[1, 1]
    assert f1[0] == pytest.approx(-want, abs=1e-8)
    assert f2.shape == (1, 1, 2) and np.all(f2 == 0)


def test_closedness_antisymmetric_family_two_fields():
    H = Hamiltonian.explicit(1, 2, "0.5*(p1_1^2 + p2_1^2)")
    s = MomentumSection(1, 2, ["u2", "-u1"])
    _, f2 = closedness_batch(H, s, np.zeros((1, 1)), np.array([[0.1], [0.2]]))
    assert f2[0, 1, 0, 0] == pytest.approx(1 - (-1))
    assert f2[1, 0, 0, 0] == -f2[0, 1, 0, 0]


def test_tangency_with_tangent_coefficients_vanishes_for_base_functions():
    s = MomentumSection(2, 1, [["0.1*x2", "0.1*x1"]])
    r = gen_ham_hj_residual(MS_H, s, TangentHamCoefficients(s), [0.3, -0.5], [0.2])
    assert np.all(r == 0)
    r0 = gen_ham_hj_residual(MS_H, s, HamCoefficients.zero(2, 1), [0.3, -0.5], [0.2])
    assert r0[0, 0, 1] == pytest.approx(0.1) and r0[0, 1, 0] == pytest.approx(0.1)


def test_classic_hamilton_jacobi_values():
    H = Hamiltonian.explicit(1, 1, "0.5*p^2 + 0.5*q^2")
    assert classic_hj_residual(H, GeneratingForm(1, 1, ["q - t"]), [0.2], [0.6]) == pytest.approx(-0.5 + 0.18)
    ms_w = GeneratingForm(2, 1, ["0.3*u1 + sqrt(1 - 0.13)*x1", "-0.2*u1"])
    assert abs(classic_hj_residual(MS_H, ms_w, [0.1, 0.4], [0.7])) < 1e-15


def test_integrability_counts():
    s = MomentumSection(2, 1, [["0.1*x2", "0.1*x1"]])
    p = np.array([[[0.01], [0.02]]])
    f1, f2 = integrability_ham_batch(MS_H, TangentHamCoefficients(s), np.zeros((2, 1)), np.zeros((1, 1)), p)
    assert f1.shape == (1, 1, 1) and f2.shape == (1, 2, 1, 1)


def test_guard_and_domain_failures():
    s = MomentumSection(2, 1, [["0.8", "0.7"]])
    op, _ = hamiltonian_suite(MS_H, s, "standard")
    grid = GridSpec([("x1", -1, 1, 3), ("x2", -1, 1, 3), ("u1", -1, 1, 3)])
    with pytest.raises(Exception) as info:
        grid_report(op, grid, 1e-9)
    assert "sqrt" in str(info.value)

    def guard(x, u, p):
        raise OutOfDomain("outside")

    op, _ = hamiltonian_suite(MS_H, MomentumSection(2, 1, [["0", "0"]]), "standard", guard=guard)
    with pytest.raises(OutOfDomain):
        grid_report(op, grid, 1e-9)


def test_suite_mode_requirements():
    with pytest.raises(InvalidParams):
        hamiltonian_suite(MS_H, None, "standard")
    with pytest.raises(InvalidParams):
        hamiltonian_suite(MS_H, MomentumSection(2, 1, [["0", "0"]]), "classic")
    op, _ = hamiltonian_suite(MS_H, None, "classic", W=GeneratingForm(2, 1, ["x1", "0"]))
    rep = grid_report(op, GridSpec([("x1", 0, 1, 2), ("x2", 0, 1, 2), ("u1", 0, 1, 2)]), 1e-12)
    assert rep.passed and list(rep.families) == ["hamilton_jacobi"]
