"""Built-in models with closed-form Hamiltonians and known solution families.

``builtin(name, **params)`` returns a ``ModelBundle``:

* ``nonautonomous``: one base dimension and a user Lagrangian ``L(t, q, v)``;
  the free particle ``0.5*v1_1^2`` is the default and carries its families.
* ``quadratic``: ``0.5 g (v - Gamma)(v - Gamma) + V`` with metric
  coefficients ``g[A][i][B][j]`` over (x, u), offsets ``Gamma[A][i]`` over x
  and potential ``V`` over (x, u).
* ``minimal_surface``: graphs u(x1, x2) with area Lagrangian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .equivalence import CompleteSolutionFamily
from .errors import InvalidParams, OutOfDomain, UnknownModel
from .ham_residuals import MomentumSection, default_ham_coefficients
from .jet_core import Coords, FieldTheory, GridSpec, prepare
from .lag_residuals import GeneratingForm, JetField, default_lag_coefficients
from .legendre import Hamiltonian, NewtonSettings

log = logging.getLogger(__name__)

MODEL_NAMES = ("nonautonomous", "quadratic", "minimal_surface")


def num(v: float) -> str:
    """Expression text for a real number."""
    v = float(v)
    return repr(v) if v >= 0 else f"(-{repr(-v)})"


@dataclass
class Candidate:
    """One member of a solution family."""

    family: str
    side: str
    params: dict
    field: object
    W: GeneratingForm | None = None

    @property
    def label(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.family}({args})"


@dataclass
class SolutionFamily:
    name: str
    side: str
    build: Callable[..., Candidate]
    samples: list[dict] = field(default_factory=list)
    note: str = ""

    def member(self, **params) -> Candidate:
        return self.build(**params)


@dataclass
class ModelBundle:
    name: str
    theory: FieldTheory
    closed_form_H: str | None
    grid: GridSpec
    tol: float = 1e-9
    families: list[SolutionFamily] = field(default_factory=list)
    complete: list[CompleteSolutionFamily] = field(default_factory=list)
    delta: float | None = None
    velocity_box: float = 2.0
    momentum_radius: float | None = None
    momentum_box: float = 10.0
    settings: NewtonSettings = NewtonSettings()
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.theory.m

    @property
    def n(self) -> int:
        return self.theory.n

    @property
    def hamiltonian(self) -> Hamiltonian:
        if self.closed_form_H is not None:
            return Hamiltonian.explicit(self.m, self.n, self.closed_form_H)
        return Hamiltonian.derived(self.theory, self.settings)

    def derived_hamiltonian(self) -> Hamiltonian:
        return Hamiltonian.derived(self.theory, self.settings)

    def lag_coefficients(self, psi):
        return default_lag_coefficients(self.theory, psi)

    def ham_coefficients(self, s):
        return default_ham_coefficients(self.hamiltonian, s)

    def family(self, name: str, side: str | None = None) -> SolutionFamily:
        for fam in self.families:
            if fam.name == name and (side is None or fam.side == side):
                return fam
        raise KeyError(f"model {self.name} has no family {name!r}")

    def guard(self, x, u, p) -> None:
        """Reject momenta closer than ``delta`` to the edge of the Hamiltonian's domain."""
        if self.delta is None:
            return
        sq = np.sum(np.reshape(p, (self.n * self.m, -1)) ** 2, axis=0)
        bad = sq > 1.0 - self.delta
        if bad.any():
            err = OutOfDomain(f"momentum with |p|^2={sq[bad][0]:.4g} exceeds 1 - {self.delta}")
            err.index = int(np.flatnonzero(bad)[0])
            raise err

    @property
    def classic_hj_form(self) -> str:
        """The classic Hamilton-Jacobi equation written with W derivatives."""
        if self.closed_form_H is None:
            return "sum_i dWi/dxi + H(x, u, dW/du) = 0"
        c = Coords(self.m, self.n)
        node = prepare(self.closed_form_H, c, c.momentum)
        mapping = {f"p{a + 1}_{i + 1}": f"W{i + 1}_u{a + 1}" for a in range(self.n) for i in range(self.m)}
        div = " + ".join(f"W{i + 1}_x{i + 1}" for i in range(self.m))
        return f"{div} + {ex.to_text(ex.rename(node, mapping))} = 0"

    def sample_jet_points(self, rng: np.random.Generator, count: int):
        """Random (x, u, v) in the working domain."""
        x, u = self._sample_base(rng, count)
        v = rng.uniform(-self.velocity_box, self.velocity_box, (self.n, self.m, count))
        return x, u, v

    def sample_momenta(self, rng: np.random.Generator, count: int):
        """Random (x, u, p) in the momentum domain."""
        x, u = self._sample_base(rng, count)
        if self.momentum_radius is None:
            p = rng.uniform(-self.momentum_box, self.momentum_box, (self.n, self.m, count))
        else:
            k = self.n * self.m
            d = rng.normal(size=(k, count))
            d /= np.linalg.norm(d, axis=0)
            r = self.momentum_radius * rng.uniform(0, 1, count) ** (1.0 / k)
            p = (d * r).reshape(self.n, self.m, count)
        return x, u, p

    def _sample_base(self, rng, count):
        c = self.theory.coords
        lo = {a.name: a.lo for a in self.grid.axes}
        hi = {a.name: a.hi for a in self.grid.axes}
        x = np.array([rng.uniform(lo.get(k, 0), hi.get(k, 0), count) for k in c.x])
        u = np.array([rng.uniform(lo.get(k, 0), hi.get(k, 0), count) for k in c.u])
        return x, u


def _box_grid(m: int, n: int, xbox, ubox, count: int) -> GridSpec:
    c = Coords(m, n)
    axes = [(name, xbox[0], xbox[1], count) for name in c.x]
    axes += [(name, ubox[0], ubox[1], count) for name in c.u]
    return GridSpec(axes)


# ---------------------------------------------------------- nonautonomous


def _nonautonomous(L: str = "0.5*v1_1^2", n: int = 1) -> ModelBundle:
    theory = FieldTheory(1, n, L, "nonautonomous")
    free = ex.to_text(theory.lagrangian) == ex.to_text(FieldTheory(1, 1, "0.5*v1_1^2").lagrangian)
    grid = _box_grid(1, n, (0.0, 1.0), (-1.0, 1.0), 21)
    bundle = ModelBundle("nonautonomous", theory, "0.5*p1_1^2" if free else None, grid,
                         params={"L": L, "n": n})
    if not free:
        log.info("custom nonautonomous Lagrangian: no bundled solution families")
        return bundle

    def lag(c: float = 0.0):
        return Candidate("constant_velocity", "lagrangian", {"c": c},
                         JetField(1, 1, [num(c)]), _free_particle_W(c))

    def ham(c: float = 0.0):
        return Candidate("constant_momentum", "hamiltonian", {"c": c},
                         MomentumSection(1, 1, [num(c)]), _free_particle_W(c))

    samples = [{"c": 0.0}, {"c": 1.0}, {"c": -0.5}]
    bundle.families = [SolutionFamily("constant_velocity", "lagrangian", lag, samples),
                       SolutionFamily("constant_momentum", "hamiltonian", ham, samples)]
    bundle.complete = [CompleteSolutionFamily("lagrangian", 1, 1, [["lam1"]], [(-2.0, 2.0)],
                                              name="constant_velocity")]
    return bundle


def _free_particle_W(c: float) -> GeneratingForm:
    return GeneratingForm(1, 1, [f"{num(c)}*u1 - {num(0.5 * c * c)}*x1"])


# --------------------------------------------------------------- quadratic


def _as_nested(value, m: int, n: int, rank: int):
    if rank == 4:
        shape = (n, m, n, m)
    else:
        shape = (n, m)
    arr = np.asarray(value, dtype=object)
    if arr.ndim == 0:
        if rank == 4:
            if m * n == 1:
                return arr.reshape(shape)
            raise InvalidParams("a scalar metric is only accepted for m = n = 1")
        return np.full(shape, arr.item(), dtype=object)
    if arr.size != int(np.prod(shape)):
        raise InvalidParams(f"expected {int(np.prod(shape))} entries, got {arr.size}")
    return arr.reshape(shape)


def _identity_metric(m: int, n: int):
    g = np.full((n, m, n, m), "0", dtype=object)
    for a in range(n):
        for i in range(m):
            g[a, i, a, i] = "1"
    return g


def _constant_value(node) -> float | None:
    if ex.variables(node):
        return None
    return ex.evaluate(node, {})


def _quadratic(m: int = 1, n: int = 1, g=None, Gamma=None, V="0", seed: int = 0) -> ModelBundle:
    c = Coords(m, n)
    g = _identity_metric(m, n) if g is None else _as_nested(g, m, n, 4)
    Gamma = np.full((n, m), "0", dtype=object) if Gamma is None else _as_nested(Gamma, m, n, 2)
    gnodes = np.empty(g.shape, dtype=object)
    for idx in np.ndindex(g.shape):
        gnodes[idx] = prepare(g[idx], c, c.base, what="metric coefficient")
    gam = np.empty(Gamma.shape, dtype=object)
    for idx in np.ndindex(Gamma.shape):
        gam[idx] = prepare(Gamma[idx], c, c.x, what="offset")
    vnode = prepare(V, c, c.base, what="potential")
    grid = _box_grid(m, n, (0.0, 1.0), (-0.9, 0.9), 21 if m + n <= 2 else 9)
    _check_metric(gnodes, c, grid, seed)

    terms = []
    for a, i, b, j in np.ndindex(g.shape):
        cval = _constant_value(gnodes[a, i, b, j])
        if cval == 0.0:
            continue
        ga, gb = ex.to_text(gam[a, i]), ex.to_text(gam[b, j])
        da = f"v{a + 1}_{i + 1}" if ga == "0" else f"(v{a + 1}_{i + 1} - ({ga}))"
        db = f"v{b + 1}_{j + 1}" if gb == "0" else f"(v{b + 1}_{j + 1} - ({gb}))"
        coef = "" if cval == 1.0 else f"({ex.to_text(gnodes[a, i, b, j])})*"
        terms.append(f"{coef}{da}*{db}")
    kinetic = "0.5*(" + " + ".join(terms) + ")" if terms else "0"
    vtext = ex.to_text(vnode)
    L = kinetic if vtext == "0" else f"{kinetic} + ({vtext})"
    theory = FieldTheory(m, n, L, "quadratic")

    H = None
    consts = np.array([[_constant_value(gnodes[idx]) for idx in np.ndindex(g.shape)]], dtype=object)
    if all(v is not None for v in consts.ravel()):
        gmat = np.array(consts, dtype=float).reshape(n * m, n * m)
        ginv = np.linalg.inv(gmat)
        hterms = []
        for r in range(n * m):
            for s in range(n * m):
                if ginv[r, s] != 0.0:
                    coef = "" if ginv[r, s] == 1.0 else f"{num(ginv[r, s])}*"
                    hterms.append(f"{coef}{c.p[r]}*{c.p[s]}")
        H = "0.5*(" + " + ".join(hterms) + ")" if hterms else "0"
        for r in range(n * m):
            gt = ex.to_text(gam.reshape(-1)[r])
            if gt != "0":
                H += f" + {c.p[r]}*({gt})"
        if vtext != "0":
            H += f" - ({vtext})"
    bundle = ModelBundle("quadratic", theory, H, grid, velocity_box=5.0,
                         params={"m": m, "n": n, "g": g.tolist(), "Gamma": Gamma.tolist(), "V": V})
    _attach_quadratic_families(bundle, gnodes, gam, vnode)
    return bundle


def _check_metric(gnodes, c: Coords, grid: GridSpec, seed: int) -> None:
    rng = np.random.default_rng(seed)
    lo = np.array([a.lo for a in grid.axes])
    hi = np.array([a.hi for a in grid.axes])
    n, m = gnodes.shape[:2]
    for _ in range(20):
        env = dict(zip(grid.names, rng.uniform(lo, hi)))
        mat = np.empty((n * m, n * m))
        for a, i, b, j in np.ndindex(gnodes.shape):
            mat[a * m + i, b * m + j] = ex.evaluate(gnodes[a, i, b, j], env)
        if not np.allclose(mat, mat.T, rtol=0, atol=1e-12):
            raise InvalidParams("metric coefficients are not symmetric under (A,i) <-> (B,j)")
        if abs(np.linalg.det(mat)) < 1e-12:
            raise InvalidParams("metric coefficients are singular on the working domain")


def _attach_quadratic_families(bundle: ModelBundle, gnodes, gam, vnode) -> None:
    m, n = bundle.m, bundle.n
    gconst = [_constant_value(gnodes[idx]) for idx in np.ndindex(gnodes.shape)]
    flat_gamma = all(ex.to_text(node) == "0" for node in gam.reshape(-1))
    if any(v is None for v in gconst) or not flat_gamma:
        return
    gmat = np.array(gconst, dtype=float).reshape(n * m, n * m)
    vtext = ex.to_text(vnode)
    if vtext == "0":
        _attach_constant_velocity(bundle, gmat)
        return
    if m == 1 and n == 1:
        k = _harmonic_stiffness(vnode)
        if k is not None and k > 0:
            _attach_energy(bundle, gmat[0, 0], k)


def _attach_constant_velocity(bundle: ModelBundle, gmat) -> None:
    m, n = bundle.m, bundle.n
    k = n * m

    def w_for(cvec):
        p = gmat @ cvec
        energy = 0.5 * float(cvec @ gmat @ cvec)
        comps = []
        for i in range(m):
            terms = [f"{num(p[a * m + i])}*u{a + 1}" for a in range(n)]
            if i == 0:
                terms.append(f"{num(-energy)}*x1")
            comps.append(" + ".join(terms))
        return GeneratingForm(m, n, comps)

    def lag(**params):
        cvec = np.array([float(params.get(f"c{r + 1}", 0.0)) for r in range(k)])
        return Candidate("constant_velocity", "lagrangian", params,
                         JetField(m, n, [num(v) for v in cvec]), w_for(cvec))

    def ham(**params):
        pvec = np.array([float(params.get(f"c{r + 1}", 0.0)) for r in range(k)])
        cvec = np.linalg.solve(gmat, pvec)
        return Candidate("constant_momentum", "hamiltonian", params,
                         MomentumSection(m, n, [num(v) for v in pvec]), w_for(cvec))

    samples = [{f"c{r + 1}": v for r in range(k)} for v in (0.0, 1.0, -0.5)]
    bundle.families += [SolutionFamily("constant_velocity", "lagrangian", lag, samples),
                        SolutionFamily("constant_momentum", "hamiltonian", ham, samples)]
    lam = [[f"lam{a * m + i + 1}" for i in range(m)] for a in range(n)]
    bundle.complete.append(CompleteSolutionFamily("lagrangian", m, n, lam, [(-2.0, 2.0)] * k,
                                                  name="constant_velocity"))


def _harmonic_stiffness(vnode) -> float | None:
    """k when V = -k q^2 / 2 (depending on q only), else None."""
    if not ex.variables(vnode) <= {"u1"}:
        return None
    c = ex.evaluate(vnode, {"u1": 1.0})
    for q in (0.0, 0.5, 2.0, -1.5):
        if not math.isclose(ex.evaluate(vnode, {"u1": q}), c * q * q, rel_tol=1e-12, abs_tol=1e-14):
            return None
    return -2.0 * c


def _attach_energy(bundle: ModelBundle, g0: float, k: float) -> None:
    """Level sets of the energy ``0.5 g0 v^2 + 0.5 k q^2 = E``."""

    def pieces(E: float):
        a2 = 2.0 * E / k
        vel = f"sqrt({num(2.0 * E / g0)} - {num(k / g0)}*u1^2)"
        mom = f"sqrt({num(2.0 * E * g0)} - {num(k * g0)}*u1^2)"
        scale = math.sqrt(g0 * k)
        w = (f"{num(-E)}*x1 + {num(0.5 * scale)}*(u1*sqrt({num(a2)} - u1^2)"
             f" + {num(a2)}*asin(u1/{num(math.sqrt(a2))}))")
        return vel, mom, GeneratingForm(1, 1, [w])

    def lag(E: float = 0.5):
        vel, _, W = pieces(E)
        return Candidate("energy_level", "lagrangian", {"E": E}, JetField(1, 1, [vel]), W)

    def ham(E: float = 0.5):
        _, mom, W = pieces(E)
        return Candidate("energy_level", "hamiltonian", {"E": E}, MomentumSection(1, 1, [mom]), W)

    samples = [{"E": 0.5}, {"E": 1.0}, {"E": 2.0}]
    note = "needs 2E > k q^2 on the grid"
    bundle.families += [SolutionFamily("energy_level", "lagrangian", lag, samples, note),
                        SolutionFamily("energy_level", "hamiltonian", ham, samples, note)]


# --------------------------------------------------------- minimal surface


def _linear_slope(text: str, var: str) -> float | None:
    """a when the expression equals a*var, else None."""
    node = ex.parse(str(text))
    if not ex.variables(node) <= {var}:
        return None
    a = ex.evaluate(node, {var: 1.0})
    for t in (0.0, -0.7, 0.3, 2.0):
        if not math.isclose(ex.evaluate(node, {var: t}), a * t, rel_tol=1e-12, abs_tol=1e-14):
            return None
    return a


def _minimal_surface() -> ModelBundle:
    theory = FieldTheory(2, 1, "sqrt(1+v1_1^2+v1_2^2)", "minimal_surface")
    grid = _box_grid(2, 1, (-1.0, 1.0), (-1.0, 1.0), 21)
    bundle = ModelBundle("minimal_surface", theory, "-sqrt(1-p1_1^2-p1_2^2)", grid, delta=0.05,
                         velocity_box=2.0, momentum_radius=0.9)

    def w_constant(s1: float, s2: float) -> GeneratingForm:
        r = math.sqrt(1.0 - s1 * s1 - s2 * s2)
        return GeneratingForm(2, 1, [f"{num(s1)}*u1 + {num(r)}*x1", f"{num(s2)}*u1"])

    def w_linear(a: float, b: float) -> GeneratingForm:
        # s = (b x2, a x1); W1 integrates sqrt(1 - |s|^2) along x1 from 0
        c2 = f"(1 - {num(b * b)}*x2^2)"
        if a == 0.0:
            area = f"x1*sqrt{c2}"
        else:
            area = (f"0.5*x1*sqrt({c2} - {num(a * a)}*x1^2)"
                    f" + ({c2}/{num(2.0 * a)})*asin({num(a)}*x1/sqrt{c2})")
        return GeneratingForm(2, 1, [f"{num(b)}*x2*u1 + {area}", f"{num(a)}*x1*u1"])

    def lag_constants(c1: float = 0.0, c2: float = 0.0):
        r = math.sqrt(1.0 + c1 * c1 + c2 * c2)
        return Candidate("constants", "lagrangian", {"c1": c1, "c2": c2},
                         JetField(2, 1, [[num(c1), num(c2)]]), w_constant(c1 / r, c2 / r))

    def lag_base(f: str = "0", fbar: str = "0"):
        fnode = prepare(f, Coords(2, 1), ["x1"], what="f(x1)")
        gnode = prepare(fbar, Coords(2, 1), ["x2"], what="fbar(x2)")
        W = None
        cf, cg = _constant_value(fnode), _constant_value(gnode)
        if cf is not None and cg is not None:
            r = math.sqrt(1.0 + cf * cf + cg * cg)
            W = w_constant(cg / r, cf / r)
        return Candidate("base_functions", "lagrangian", {"f": f, "fbar": fbar},
                         JetField(2, 1, [[ex.to_text(gnode), ex.to_text(fnode)]]), W)

    def ham_constants(c1: float = 0.0, c2: float = 0.0):
        if c1 * c1 + c2 * c2 >= 1.0:
            raise InvalidParams("constant momenta need c1^2 + c2^2 < 1")
        return Candidate("constants", "hamiltonian", {"c1": c1, "c2": c2},
                         MomentumSection(2, 1, [[num(c1), num(c2)]]), w_constant(c1, c2))

    def ham_base(f: str = "0", fbar: str = "0"):
        fnode = prepare(f, Coords(2, 1), ["x1"], what="f(x1)")
        gnode = prepare(fbar, Coords(2, 1), ["x2"], what="fbar(x2)")
        a, b = _linear_slope(ex.to_text(fnode), "x1"), _linear_slope(ex.to_text(gnode), "x2")
        W = w_linear(a, b) if a is not None and b is not None else None
        return Candidate("base_functions", "hamiltonian", {"f": f, "fbar": fbar},
                         MomentumSection(2, 1, [[ex.to_text(gnode), ex.to_text(fnode)]]), W)

    def lag_pulled(f: str = "0", fbar: str = "0"):
        hc = ham_base(f, fbar)
        s1, s2 = hc.field.texts
        r = f"sqrt(1 - ({s1})^2 - ({s2})^2)"
        return Candidate("inverse_legendre_base_functions", "lagrangian", {"f": f, "fbar": fbar},
                         JetField(2, 1, [[f"({s1})/{r}", f"({s2})/{r}"]]), hc.W)

    const_samples = [{"c1": 0.0, "c2": 0.0}, {"c1": 0.3, "c2": -0.2}]
    base_samples = [{"f": "0.1*x1", "fbar": "0.1*x2"}]
    bundle.families = [
        SolutionFamily("constants", "lagrangian", lag_constants, const_samples),
        SolutionFamily("base_functions", "lagrangian", lag_base, base_samples,
                       "solves the Lagrangian problem only for constant f, fbar"),
        SolutionFamily("constants", "hamiltonian", ham_constants, const_samples),
        SolutionFamily("base_functions", "hamiltonian", ham_base, base_samples,
                       "generating form known for linear f, fbar"),
        SolutionFamily("inverse_legendre_base_functions", "lagrangian", lag_pulled, base_samples),
    ]
    bundle.complete = [
        CompleteSolutionFamily("lagrangian", 2, 1, [["lam1", "lam2"]], [(-0.9, 0.9)] * 2,
                               "lam1^2 + lam2^2 - 0.81", "constants"),
        CompleteSolutionFamily("hamiltonian", 2, 1, [["lam1", "lam2"]], [(-0.9, 0.9)] * 2,
                               "lam1^2 + lam2^2 - 0.81", "constants"),
    ]
    return bundle


def builtin(name: str, **params) -> ModelBundle:
    """Look up a built-in model by name."""
    if name == "nonautonomous":
        allowed = {"L", "n"}
        build = _nonautonomous
    elif name == "quadratic":
        allowed = {"m", "n", "g", "Gamma", "V", "seed"}
        build = _quadratic
    elif name == "minimal_surface":
        allowed = set()
        build = _minimal_surface
    else:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    extra = set(params) - allowed
    if extra:
        raise InvalidParams(f"model {name} does not take {sorted(extra)}")
    return build(**params)
