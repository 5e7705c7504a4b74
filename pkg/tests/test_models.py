import numpy as np
import pytest

from mshj import expr as ex
from mshj.errors import InvalidParams, OutOfDomain, UnknownModel
from mshj.ham_residuals import classic_hj_batch
from mshj.jet_core import hessian_batch
from mshj.lag_residuals import generating_lag_batch
from mshj.legendre import Hamiltonian
from mshj.models import builtin


def test_minimal_surface_bundle():
    b = builtin("minimal_surface")
    assert ex.to_text(b.theory.lagrangian) == "sqrt(1 + v1_1^2 + v1_2^2)"
    assert b.closed_form_H == "-sqrt(1-p1_1^2-p1_2^2)"
    assert b.grid.shape == (21, 21, 21) and b.delta == 0.05
    assert b.classic_hj_form == "W1_x1 + W2_x2 + -sqrt(1 - W1_u1^2 - W2_u1^2) = 0"


def test_quadratic_hamiltonian_is_half_p_squared_plus_half_q_squared():
    b = builtin("quadratic", m=1, n=1, g=1, Gamma=0, V="-0.5*u1^2")
    H = b.hamiltonian
    p, q = np.linspace(-2, 2, 7), np.linspace(-1, 1, 7)
    val, _, _ = H.values(np.zeros((1, 7)), q[None], p[None, None], 0)
    assert np.allclose(val, 0.5 * p ** 2 + 0.5 * q ** 2, atol=1e-15)


def test_nonautonomous_free_particle_classic_form():
    b = builtin("nonautonomous", L="0.5*v1_1^2")
    assert b.classic_hj_form == "W1_x1 + 0.5*W1_u1^2 = 0"
    custom = builtin("nonautonomous", L="0.5*v1_1^2 + t*q")
    assert custom.families == [] and custom.closed_form_H is None
    assert custom.hamiltonian.is_derived


def test_quadratic_hessian_is_the_metric_pointwise():
    g = [["2 + sin(x1)", "0.5*u1"], ["0.5*u1", "3"]]
    b = builtin("quadratic", m=1, n=2, g=g, V="x1*u2")
    rng = np.random.default_rng(0)
    x, u, v = b.sample_jet_points(rng, 50)
    h = hessian_batch(b.theory, x, u, v)
    assert np.allclose(h[:, 0, 0], 2 + np.sin(x[0]), atol=1e-15)
    assert np.allclose(h[:, 0, 1], 0.5 * u[0], atol=1e-15)
    assert np.allclose(h[:, 1, 1], 3.0)
    assert b.closed_form_H is None


def test_quadratic_with_offset_matches_derived_hamiltonian():
    b = builtin("quadratic", m=2, n=1, g=[[[[1, 0.2]], [[0.2, 2]]]], Gamma=[["x2", "0.5"]], V="-x1*u1")
    assert b.closed_form_H is not None
    rng = np.random.default_rng(2)
    x, u, p = b.sample_momenta(rng, 40)
    closed = Hamiltonian.explicit(2, 1, b.closed_form_H).values(x, u, p, 2)
    derived = b.derived_hamiltonian().values(x, u, p, 2)
    for a, c in zip(closed, derived):
        assert np.max(np.abs(a - c)) < 1e-10


@pytest.mark.parametrize("params", [
    {"m": 1, "n": 2, "g": [["1", "0.5"], ["0.4", "1"]]},
    {"m": 1, "n": 2, "g": [["1", "1"], ["1", "1"]]},
    {"m": 2, "n": 2, "g": 1},
    {"m": 1, "n": 1, "g": [1, 2]},
])
def test_invalid_metrics(params):
    with pytest.raises(InvalidParams):
        builtin("quadratic", **params)


def test_unknown_model_and_parameters():
    with pytest.raises(UnknownModel):
        builtin("wave")
    with pytest.raises(InvalidParams):
        builtin("minimal_surface", c=1)
    with pytest.raises(InvalidParams):
        builtin("minimal_surface").family("constants", "hamiltonian").member(c1=0.8, c2=0.7)


def test_momentum_guard():
    b = builtin("minimal_surface")
    b.guard(None, None, np.array([[[0.1], [0.2]]]))
    with pytest.raises(OutOfDomain):
        b.guard(None, None, np.array([[[0.1, 0.8], [0.2, 0.7]]]))


def test_energy_family_generating_form_matches_momenta():
    b = builtin("quadratic", V="-0.5*u1^2")
    for E in (0.5, 1.0, 2.0):
        lag = b.family("energy_level", "lagrangian").member(E=E)
        x, u = np.zeros((1, 9)), np.linspace(-0.9, 0.9, 9)[None]
        s, match = generating_lag_batch(b.theory, lag.field, lag.W, x, u)
        assert np.max(np.abs(s)) < 1e-12 and np.max(np.abs(match)) < 1e-12
        assert np.max(np.abs(classic_hj_batch(b.hamiltonian, lag.W, x, u))) < 1e-12


def test_samples_stay_in_the_working_domain():
    b = builtin("minimal_surface")
    rng = np.random.default_rng(1)
    x, u, p = b.sample_momenta(rng, 500)
    assert np.all(np.sum(p ** 2, axis=(0, 1)) <= 0.81 + 1e-12)
    assert np.all(np.abs(x) <= 1) and np.all(np.abs(u) <= 1)
