import numpy as np
import pytest

from mshj.errors import BlowUp, InvalidParams
from mshj.jet_core import FieldTheory
from mshj.lag_residuals import JetField
from mshj.reconstruction import (SectionTrace, el_section_residual, holonomy_residual, integrate_distribution,
                                 path_independence_check, refinement_ratio)

MS = FieldTheory(2, 1, "sqrt(1+v1_1^2+v1_2^2)")
HARMONIC = FieldTheory(1, 1, "0.5*v^2 - 0.5*q^2")


def test_constant_field_gives_a_plane():
    psi = JetField(2, 1, [["0.3", "-0.2"]])
    tr = integrate_distribution(psi, [0.0, 0.0], [0.1], [(-1, 1), (-1, 1)], 40)
    x = tr.mesh()
    assert np.max(np.abs(tr.values[0] - (0.1 + 0.3 * x[0] - 0.2 * x[1]))) < 1e-12


def test_sweeps_both_directions_from_an_interior_start():
    psi = JetField(1, 1, ["u1"])
    tr = integrate_distribution(psi, [0.0], [1.0], [(-1, 1)], 200)
    assert np.max(np.abs(tr.values[0] - np.exp(tr.axes[0]))) < 1e-9


def test_start_must_be_a_node_and_dimensions_must_match():
    psi = JetField(1, 1, ["1"])
    with pytest.raises(InvalidParams):
        integrate_distribution(psi, [0.013], [0.0], [(0, 1)], 10)
    with pytest.raises(InvalidParams):
        integrate_distribution(psi, [0.0, 0.0], [0.0], [(0, 1)], 10)


def test_blow_up_is_reported():
    psi = JetField(1, 1, ["u1^2"])
    with pytest.raises(BlowUp):
        integrate_distribution(psi, [0.0], [1.0], [(0, 2)], 400)


def test_csv_layout():
    psi = JetField(1, 1, ["1"])
    text = integrate_distribution(psi, [0.0], [0.0], [(0, 1)], 2).to_csv_text()
    assert text == "x1,u1\n0.0,0.0\n0.5,0.5\n1.0,1.0\n"


def test_holonomy_and_euler_lagrange_for_harmonic_flow():
    psi = JetField(1, 1, ["sqrt(1 - q^2)"])
    tr = integrate_distribution(psi, [0.0], [0.0], [(0, 1)], 1000)
    assert abs(tr.at([1.0])[0] - np.sin(1.0)) < 1e-6
    assert holonomy_residual(tr, psi).max_abs < 1e-6
    assert el_section_residual(HARMONIC, tr).max_abs < 1e-6


def test_euler_lagrange_residual_detects_a_non_solution():
    tr = SectionTrace.from_function(lambda x: (x[0] ** 2)[None], [(0, 1)], 100)
    assert el_section_residual(HARMONIC, tr).max_abs > 0.1


def test_scherk_section_is_minimal():
    def scherk(x):
        return (np.log(np.cos(x[1])) - np.log(np.cos(x[0])))[None]

    tr = SectionTrace.from_function(scherk, [(-1, 1), (-1, 1)], 400)
    res = el_section_residual(MS, tr)
    assert res.max_abs < 1e-4
    assert set(res.argmax()) == {"x1", "x2"}


def test_path_independence():
    box = [(-1, 1), (-1, 1)]
    assert path_independence_check(JetField(2, 1, [["0.1*x2", "0.1*x1"]]), box, [0.0], 100).passed
    bad = path_independence_check(JetField(2, 1, [["u1", "1"]]), box, [0.0], 100)
    assert not bad.passed and bad.discrepancy > 1e-3


def test_refinement_ratio_is_fourth_order():
    psi = JetField(1, 1, ["sqrt(1 - q^2)"])
    ref = refinement_ratio(psi, [0.0], [0.0], [(0, 1)], 50, exact=lambda x: np.sin(x))
    assert 14 < ref.ratio < 18
    ref8 = refinement_ratio(psi, [0.0], [0.0], [(0, 1)], 50)
    assert ref8.ratio > 8
