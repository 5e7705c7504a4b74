import io
import textwrap
from pathlib import Path

import pytest

from mshj.cli import main
from mshj.config import parse_config
from mshj.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(args, capsys=None):
    out = io.StringIO()
    code = main(args, out)
    return code, out.getvalue()


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def test_check_theory_minimal_surface():
    code, out = run(["check-theory", "--config", str(CONFIGS / "minimal_surface_zero.ini")])
    assert code == 0 and "regular" in out and "PASS" in out


def test_check_theory_degenerate_and_malformed(capsys):
    assert run(["check-theory", "--config", str(CONFIGS / "degenerate.ini")])[0] == 1
    code, _ = run(["check-theory", "--config", str(CONFIGS / "malformed.ini")])
    assert code == 2
    err = capsys.readouterr().err
    assert "byte 9" in err and "^" in err


def test_verify_exit_codes():
    code, out = run(["verify", "--config", str(CONFIGS / "minimal_surface_zero.ini"),
                     "--side", "lagrangian", "--mode", "standard"])
    assert code == 0
    code, out = run(["verify", "--config", str(CONFIGS / "minimal_surface_linear_u.ini")])
    assert code == 1 and " at x1=" in out
    code, _ = run(["verify", "--config", str(CONFIGS / "minimal_surface_bad_section.ini")])
    assert code == 3


def test_equivalence_exit_codes():
    assert run(["equivalence", "--config", str(CONFIGS / "minimal_surface_zero.ini")])[0] == 0
    code, out = run(["equivalence", "--config", str(CONFIGS / "minimal_surface_linear_u.ini")])
    assert code == 1 and "fail-fail" in out
    assert run(["equivalence", "--config", str(CONFIGS / "minimal_surface_bad_section.ini")])[0] == 2


def test_reconstruct_harmonic(tmp_path):
    csv_path = tmp_path / "trace.csv"
    code, out = run(["reconstruct", "--config", str(CONFIGS / "harmonic.ini"), "--csv", str(csv_path)])
    assert code == 0
    lines = csv_path.read_text().split("\n")
    assert lines[0] == "x1,u1" and len(lines) == 1001 + 2


def test_reconstruct_flags_non_integrable_field(tmp_path):
    cfg = write(tmp_path, """
        [model]
        name = minimal_surface
        [candidates.psi]
        kind = jetfield
        v1_1 = u1
        v1_2 = 1
        [reconstruct]
        u0 = 0
        steps = 50, 50
    """)
    code, out = run(["reconstruct", "--config", cfg, "--csv", str(tmp_path / "t.csv")])
    assert code == 1 and "NOT integrable" in out


def test_reconstruct_blow_up_is_numerical(tmp_path):
    cfg = write(tmp_path, """
        [model]
        m = 1
        n = 1
        lagrangian = 0.5*v^2
        [grid]
        t = 0, 2, 5
        q = -1, 1, 5
        [candidates.psi]
        kind = jetfield
        v = q^2
        [reconstruct]
        u0 = 1
        steps = 400
    """)
    assert run(["reconstruct", "--config", cfg, "--csv", str(tmp_path / "t.csv")])[0] == 3


def test_custom_model_classic_and_csv(tmp_path):
    csv_path = tmp_path / "res.csv"
    code, out = run(["verify", "--config", str(CONFIGS / "custom_free_particle.ini"), "--mode", "classic",
                     "--csv", str(csv_path), "--quiet"])
    assert code == 0 and len(out.strip().split("\n")) == 1
    assert csv_path.read_text().startswith("x1,u1,hj_scalar,momentum_match\n")


def test_grid_scale_and_tolerance_flags():
    code, out = run(["verify", "--config", str(CONFIGS / "minimal_surface_zero.ini"), "--grid-scale", "2",
                     "--tol", "1e-3", "--jobs", "2"])
    assert code == 0 and "74088 points" in out and "tol 1.0e-03" in out


def test_jobs_from_environment(monkeypatch):
    monkeypatch.setenv("MSHJ_JOBS", "x")
    assert run(["verify", "--config", str(CONFIGS / "minimal_surface_zero.ini")])[0] == 2


def test_missing_config_and_usage_errors(tmp_path):
    assert run(["verify", "--config", str(tmp_path / "nope.ini")])[0] == 2
    assert run(["verify"])[0] == 2


@pytest.mark.parametrize("text, message", [
    ("[run]\ntol = 1\n", "missing \\[model\\]"),
    ("[model]\nname = minimal_surface\n[model]\nname = quadratic\n", "already exists"),
    ("[model]\nm = 1\nn = 1\nlagrangian = 0.5*v^2\n", "need a grid"),
    ("[model]\nname = minimal_surface\n[grid.z]\nlo = 0\nhi = 1\ncount = 3\n", "not a coordinate"),
    ("[model]\nname = minimal_surface\n[candidates.a]\nkind = jetfield\nv1_1 = 0\n", "missing component"),
    ("[model]\nname = minimal_surface\n[candidates.a]\nkind = blob\n", "kind must be"),
    ("[model]\nname = minimal_surface\n[mystery]\n", "unknown section"),
])
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_config_candidate_kinds():
    cfg = parse_config(textwrap.dedent("""
        [model]
        name = minimal_surface
        [candidates.F]
        kind = lag_coefficients
        F1_1_2 = 0.5
        [candidates.G]
        kind = ham_coefficients
        G1_2_1 = x1
        [candidates.fam]
        kind = family
        side = lagrangian
        v1_1 = lam1
        v1_2 = lam2
        lam1 = -0.5, 0.5
        lam2 = -0.5, 0.5
        constraint = lam1^2 + lam2^2 - 0.25
        [candidates.member]
        kind = builtin
        family = base_functions
        side = hamiltonian
        f = 0.1*x1
        fbar = 0.1*x2
    """))
    import numpy as np
    F = cfg.candidates["F"].value.evaluate(np.zeros((2, 1)), np.zeros((1, 1)), np.zeros((1, 2, 1))).val
    assert F[1, 0, 0, 0] == 0.5 and np.count_nonzero(F) == 1
    G = cfg.candidates["G"].value.evaluate(np.ones((2, 1)), np.zeros((1, 1)), np.zeros((1, 2, 1))).val
    assert G[0, 0, 1, 0] == 1.0 and np.count_nonzero(G) == 1
    assert cfg.candidates["fam"].value.constraint == "lam1^2 + lam2^2 - 0.25"
    member = cfg.candidates["member"]
    assert member.kind == "section" and member.W is not None
