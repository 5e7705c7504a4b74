import numpy as np
import pytest

from mshj.equivalence import (CompleteSolutionFamily, PullbackJetField, PushforwardSection,
                              TransportedHamCoefficients, complete_solution_check, equivalence_report,
                              transport_check)
from mshj.errors import DegenerateJacobian, SliceFailure
from mshj.ham_residuals import MomentumSection, TangentHamCoefficients
from mshj.jet_core import FamilyStats, FieldTheory, GridSpec, ResidualReport
from mshj.lag_residuals import JetField, TangentLagCoefficients
from mshj.legendre import Hamiltonian

import oracles

MS = FieldTheory(2, 1, "sqrt(1+v1_1^2+v1_2^2)")
MS_H = Hamiltonian.explicit(2, 1, "-sqrt(1-p1_1^2-p1_2^2)")
GRID = GridSpec([("x1", -1, 1, 7), ("x2", -1, 1, 7), ("u1", -1, 1, 7)])


def _first_derivative_check(field, f_np, z):
    vals = field.evaluate(z[:2, None], z[2:, None], 1)
    fd = oracles.central_grad(lambda w: f_np(w).ravel(), z)
    assert np.allclose(vals.val[..., 0].ravel(), f_np(z).ravel(), atol=1e-12)
    assert np.allclose(vals.grad[..., 0].reshape(fd.shape), fd, atol=1e-8)


def test_pushforward_values_and_derivatives():
    psi = JetField(2, 1, [["sin(x2)*u1", "x1 + u1^2"]])

    def s_np(z):
        x1, x2, u = z
        return oracles.ms_Lv([np.sin(x2) * u, x1 + u * u])

    _first_derivative_check(PushforwardSection(MS, psi), s_np, np.array([0.3, -0.4, 0.5]))


def test_pullback_values_and_derivatives():
    s = MomentumSection(2, 1, [["0.3*sin(x2)*u1", "0.2*x1 + 0.1*u1"]])

    def psi_np(z):
        x1, x2, u = z
        return oracles.ms_inverse_legendre([0.3 * np.sin(x2) * u, 0.2 * x1 + 0.1 * u])

    _first_derivative_check(PullbackJetField(MS, s), psi_np, np.array([0.3, -0.4, 0.5]))


def test_transported_coefficients_match_tangent_coefficients_of_the_image():
    # for a field whose image is a section, the transport of tangent F
    # reproduces the tangent coefficients of the pushed-forward section
    psi = JetField(2, 1, [["0.2*x2", "0.2*x1"]])
    s = PushforwardSection(MS, psi)
    G = TransportedHamCoefficients(MS, TangentLagCoefficients(psi))
    x, u = np.array([[0.3], [-0.2]]), np.array([[0.0]])
    p = s.evaluate(x, u, 0).val
    got = G.evaluate(x, u, p, 0).val
    want = TangentHamCoefficients(s).evaluate(x, u, p, 0).val
    assert np.allclose(got, want, atol=1e-12)


def test_zoo_pair_verdicts():
    ok = equivalence_report(MS, JetField(2, 1, [["0.3", "-0.2"]]), GRID, 1e-9, H=MS_H)
    assert ok.verdict == "pass-pass" and ok.transport.passed
    bad = equivalence_report(MS, JetField(2, 1, [["u1", "0"]]), GRID, 1e-9, H=MS_H, mode="generalized")
    assert bad.verdict == "fail-fail" and bad.transport.passed
    assert bad.lagrangian.max_residual > 1e-2
    ham = equivalence_report(MS, MomentumSection(2, 1, [["0.1*x2", "0.1*x1"]]), GRID, 1e-9, H=MS_H,
                             side="hamiltonian")
    assert ham.verdict == "pass-pass"
    assert any("verdict" in line for line in ham.summary_lines())


def _report(values):
    arr = np.asarray(values, float)
    stats = FamilyStats("f", float(np.max(np.abs(arr))), 0.0, None, None, arr.size, 1)
    return ResidualReport({"f": stats}, arr.size, 1e-9, pointwise={"f": arr})


def test_transport_check_bound():
    src = _report([0.0, 1e-3, 2e-3])
    assert transport_check(src, _report([1e-11, 9e-3, 2e-2])).passed
    chk = transport_check(src, _report([2e-10, 0.0, 0.0]))
    assert not chk.passed and chk.violations == 1


def test_complete_family_of_constants():
    fam = CompleteSolutionFamily("lagrangian", 2, 1, [["lam1", "lam2"]], [(-0.9, 0.9)] * 2,
                                 "lam1^2 + lam2^2 - 0.81")
    lam_grid = GridSpec([("lam1", -0.9, 0.9, 5), ("lam2", -0.9, 0.9, 5)])
    rep = complete_solution_check(fam, lam_grid, GRID, 1e-9, theory=MS, targets=20)
    assert rep.passed and rep.min_abs_det == 1.0
    assert rep.slices == int(np.sum(fam.admissible(np.array(np.meshgrid(
        np.linspace(-0.9, 0.9, 5), np.linspace(-0.9, 0.9, 5))).reshape(2, -1))))


def test_complete_family_failures():
    lam_grid = GridSpec([("lam1", -0.5, 0.5, 3), ("lam2", -0.5, 0.5, 3)])
    wrong = CompleteSolutionFamily("lagrangian", 2, 1, [["lam1*u1", "lam2"]], [(-0.5, 0.5)] * 2)
    with pytest.raises(SliceFailure):
        complete_solution_check(wrong, lam_grid, GRID, 1e-9, theory=MS)
    flat = CompleteSolutionFamily("lagrangian", 2, 1, [["lam1", "lam1"]], [(-0.5, 0.5)] * 2)
    with pytest.raises(DegenerateJacobian):
        complete_solution_check(flat, lam_grid, GRID, 1e-9, theory=MS)
