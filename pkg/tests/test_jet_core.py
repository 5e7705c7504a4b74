import numpy as np
import pytest

from mshj.errors import CapExceeded, DomainError, InvalidParams
from mshj.jet_core import (Axis, Coords, FieldTheory, GridSpec, JetPoint, NotEvaluated, grid_report,
                           hessian, regularity_check, split_columns)


def test_coordinate_names_are_a_major():
    c = Coords(2, 2)
    assert c.x == ["x1", "x2"] and c.u == ["u1", "u2"]
    assert c.v == ["v1_1", "v1_2", "v2_1", "v2_2"]
    assert c.jet[c.vindex(1, 0)] == "v2_1"


def test_aliases_only_in_one_dimension():
    assert Coords(1, 1).aliases == {"t": "x1", "q": "u1", "v": "v1_1", "p": "p1_1"}
    assert "t" not in Coords(2, 1).aliases
    theory = FieldTheory(1, 1, "0.5*v^2 - 0.5*q^2 + t")
    assert theory.lagrangian_values(np.zeros((1, 1)), np.ones((1, 1)), np.full((1, 1, 1), 2.0), 0)[0][0] == 2.0 - 0.5


def test_undeclared_variables_are_rejected():
    with pytest.raises(InvalidParams, match="x2"):
        FieldTheory(1, 1, "v1_1^2 + x2")
    with pytest.raises(InvalidParams):
        FieldTheory(2, 1, "t*v1_1")


def test_grid_is_row_major_with_midpoint_for_single_samples():
    g = GridSpec([("x1", 0, 1, 3), ("u1", -1, 1, 1)])
    assert g.shape == (3, 1) and g.size == 3
    cols = g.columns()
    assert np.array_equal(cols["x1"], [0.0, 0.5, 1.0])
    assert np.array_equal(cols["u1"], [0.0, 0.0, 0.0])
    g2 = GridSpec([("a", 0, 1, 2), ("b", 0, 1, 3)])
    assert g2.point(4) == {"a": 1.0, "b": 0.5}


def test_grid_validation_and_cap():
    with pytest.raises(InvalidParams):
        Axis("x1", 1, 0, 3)
    with pytest.raises(InvalidParams):
        Axis("x1", 0, 1, 0)
    with pytest.raises(InvalidParams):
        GridSpec([("x1", 0, 1, 2), ("x1", 0, 1, 2)])
    with pytest.raises(CapExceeded):
        GridSpec([("x1", 0, 1, 1000), ("u1", 0, 1, 1000)], cap=10**5).check_cap()
    assert GridSpec([("x1", 0, 1, 3)]).scaled(2).shape == (6,)


def _op(columns, size):
    x = columns["x1"]
    return {"lin": np.stack([x, 2 * x]), "none": NotEvaluated("skip me"), "empty": np.zeros((0, size))}


def test_report_aggregates_max_rms_and_argmax():
    g = GridSpec([("x1", -1, 2, 4)])
    rep = grid_report(_op, g, tol=1.0, informational=("none",), chunk=3)
    lin = rep.families["lin"]
    assert lin.max_abs == 4.0 and lin.component == (1,) and lin.argmax == {"x1": 2.0}
    assert lin.rms == pytest.approx(np.sqrt(np.mean(np.r_[[-1, 0, 1, 2], [-2, 0, 2, 4]] ** 2.0)))
    assert lin.components == 2 and lin.points == 4
    assert not rep.families["none"].evaluated
    assert rep.families["empty"].components == 0
    assert not rep.passed
    assert any("not evaluated" in line for line in rep.summary_lines())


def test_report_is_identical_across_chunking_and_threads():
    g = GridSpec([("x1", -1, 2, 101), ("u1", 0, 1, 7)])

    def op(cols, size):
        return {"f": np.sin(cols["x1"] * cols["u1"])[None]}

    a = grid_report(op, g, 1.0, chunk=50)
    b = grid_report(op, g, 1.0, chunk=13, jobs=4)
    fa, fb = a.families["f"], b.families["f"]
    assert fa.max_abs == fb.max_abs and fa.argmax == fb.argmax
    assert abs(fa.rms - fb.rms) < 1e-13


def test_domain_errors_carry_grid_location_or_are_skipped():
    g = GridSpec([("x1", -1, 1, 5)])

    def op(cols, size):
        from mshj import expr as ex
        val, _, _ = ex.jet(ex.parse("log(x1 + 0.75)"), cols, (), 0, size)
        return {"f": val[None]}

    with pytest.raises(DomainError) as info:
        grid_report(op, g, 1.0)
    assert info.value.location == {"x1": -1.0}
    rep = grid_report(op, g, 10.0, errors="skip")
    assert len(rep.skipped) == 1 and rep.families["f"].points == 4


def test_regularity_of_minimal_surface_and_degenerate_lagrangian():
    ms = FieldTheory(2, 1, "sqrt(1+v1_1^2+v1_2^2)")
    grid = GridSpec([("x1", 0, 0, 1), ("x2", 0, 0, 1), ("u1", 0, 0, 1),
                     ("v1_1", -2, 2, 9), ("v1_2", -2, 2, 9)])
    rep = regularity_check(ms, grid)
    assert rep.regular
    # det = (1+|v|^2)^(-2) is smallest at the corners
    assert rep.min_abs_det == pytest.approx(1 / 81)
    flat = FieldTheory(1, 1, "v1_1")
    assert not regularity_check(flat, GridSpec([("v1_1", -1, 1, 3)])).regular


def test_pointwise_hessian():
    theory = FieldTheory(1, 2, "0.5*v1_1^2 + v1_1*v2_1 + 2*v2_1^2")
    h = hessian(theory, JetPoint([0.0], [0.0, 0.0], [[1.0], [2.0]]))
    assert np.array_equal(h, [[1.0, 1.0], [1.0, 4.0]])


def test_split_columns_fills_missing_axes():
    c = Coords(2, 1)
    x, u = split_columns(c, {"x1": np.arange(3.0), "x2": np.ones(3), "u1": np.zeros(3)}, 3)
    assert x.shape == (2, 3) and u.shape == (1, 3)
