"""INI-style run configuration.

Sections::

    [model]            name = <builtin>  or  m, n, lagrangian and/or hamiltonian
    [model.params]     builtin parameters (numbers, expressions or JSON lists)
    [candidates.NAME]  kind = jetfield | section | generating | lag_coefficients
                              | ham_coefficients | family | builtin
    [grid.AXIS]        lo, hi, count     (or a single [grid] with AXIS = lo, hi, count)
    [run]              tol, side, mode, jobs, errors, isotropy_form, candidate,
                       coefficients, generating, csv
    [reconstruct]      candidate, x0, u0, lo, hi, steps, order, csv

Component keys follow the coordinate names: ``vA_i`` for jet fields,
``pA_i`` for sections, ``Wi`` for generating forms, ``FA_i_j`` and ``GA_i_j``
for the derivative of component (A, i) along x_j.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

from .equivalence import CompleteSolutionFamily
from .errors import ConfigError, InputError
from .ham_residuals import HamCoefficients, MomentumSection
from .jet_core import Axis, Coords, FieldTheory, GridSpec
from .lag_residuals import GeneratingForm, JetField, LagCoefficients
from .legendre import Hamiltonian
from .models import Candidate, ModelBundle, builtin

KINDS = ("jetfield", "section", "generating", "lag_coefficients", "ham_coefficients", "family",
         "builtin")
RUN_KEYS = {"tol", "side", "mode", "jobs", "errors", "isotropy_form", "candidate", "coefficients",
            "generating", "csv"}
RECONSTRUCT_KEYS = {"candidate", "x0", "u0", "lo", "hi", "steps", "order", "csv"}
DEFAULT_TOL = 1e-8


@dataclass
class CandidateEntry:
    name: str
    kind: str
    value: object
    side: str | None = None
    W: GeneratingForm | None = None


@dataclass
class ReconstructSettings:
    candidate: str | None = None
    x0: list[float] | None = None
    u0: list[float] | None = None
    lo: list[float] | None = None
    hi: list[float] | None = None
    steps: list[int] | None = None
    order: list[int] | None = None
    csv: str | None = None


@dataclass
class RunConfig:
    m: int
    n: int
    theory: FieldTheory | None
    H: Hamiltonian | None
    grid: GridSpec
    bundle: ModelBundle | None = None
    velocity_axes: list[Axis] = field(default_factory=list)
    candidates: dict[str, CandidateEntry] = field(default_factory=dict)
    tol: float = DEFAULT_TOL
    run: dict[str, str] = field(default_factory=dict)
    reconstruct: ReconstructSettings = field(default_factory=ReconstructSettings)

    @property
    def coords(self) -> Coords:
        return Coords(self.m, self.n)

    def guard(self, x, u, p) -> None:
        if self.bundle is not None:
            self.bundle.guard(x, u, p)

    def candidate(self, kinds: tuple[str, ...], name: str | None = None, side: str | None = None):
        """The named candidate, or the first one of a matching kind."""
        if name is not None:
            if name not in self.candidates:
                raise ConfigError(f"no candidate named {name!r}")
            entry = self.candidates[name]
            if entry.kind not in kinds or (side and entry.side not in (None, side)):
                raise ConfigError(f"candidate {name!r} is a {entry.kind}, expected {' or '.join(kinds)}")
            return entry
        for entry in self.candidates.values():
            if entry.kind in kinds and (side is None or entry.side in (None, side)):
                return entry
        return None


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in str(text).replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def _param_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.strip().startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad list parameter {text!r}: {exc}") from None
    return text


def _axis_name(coords: Coords, name: str) -> str:
    return coords.aliases.get(name, name)


def _read(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cp


def _model(cp) -> tuple[int, int, FieldTheory | None, Hamiltonian | None, ModelBundle | None]:
    if not cp.has_section("model"):
        raise ConfigError("missing [model] section")
    sec = cp["model"]
    params = {k: _param_value(v) for k, v in cp["model.params"].items()} if cp.has_section("model.params") else {}
    if "name" in sec:
        extra = set(sec) - {"name"}
        if extra:
            raise ConfigError(f"[model] with a builtin name takes no {sorted(extra)}; use [model.params]")
        bundle = builtin(sec["name"].strip(), **params)
        return bundle.m, bundle.n, bundle.theory, bundle.hamiltonian, bundle
    if params:
        raise ConfigError("[model.params] only applies to builtin models")
    extra = set(sec) - {"m", "n", "lagrangian", "hamiltonian"}
    if extra:
        raise ConfigError(f"unknown [model] keys {sorted(extra)}")
    try:
        m, n = int(sec["m"]), int(sec["n"])
    except (KeyError, ValueError):
        raise ConfigError("a custom [model] needs integer m and n") from None
    if m < 1 or n < 1:
        raise ConfigError("m and n must be positive")
    if "lagrangian" not in sec and "hamiltonian" not in sec:
        raise ConfigError("a custom [model] needs a lagrangian or a hamiltonian")
    theory = FieldTheory(m, n, sec["lagrangian"], "custom") if "lagrangian" in sec else None
    if "hamiltonian" in sec:
        H = Hamiltonian.explicit(m, n, sec["hamiltonian"])
    else:
        H = Hamiltonian.derived(theory)
    return m, n, theory, H, None


def _grid(cp, coords: Coords, bundle: ModelBundle | None) -> tuple[GridSpec, list[Axis]]:
    raw: dict[str, tuple[float, float, int]] = {}
    if cp.has_section("grid"):
        for name, value in cp["grid"].items():
            parts = _floats(value, f"[grid] {name}")
            if len(parts) != 3:
                raise ConfigError(f"[grid] {name} needs lo, hi, count")
            raw[name] = (parts[0], parts[1], int(parts[2]))
    for sec in cp.sections():
        if sec.startswith("grid."):
            name = sec[5:]
            body = cp[sec]
            try:
                raw[name] = (float(body["lo"]), float(body["hi"]), int(body["count"]))
            except (KeyError, ValueError):
                raise ConfigError(f"[{sec}] needs numeric lo, hi and count") from None
    base, vel = [], []
    for name, (lo, hi, count) in raw.items():
        real = _axis_name(coords, name)
        try:
            axis = Axis(real, lo, hi, count)
        except InputError as exc:
            raise ConfigError(f"grid axis {name}: {exc}") from None
        if real in coords.base:
            base.append(axis)
        elif real in coords.v:
            vel.append(axis)
        else:
            raise ConfigError(f"grid axis {name!r} is not a coordinate of this model")
    if not base:
        if bundle is None:
            raise ConfigError("custom models need a grid over " + ", ".join(coords.base))
        return bundle.grid, vel
    missing = set(coords.base) - {a.name for a in base}
    if missing:
        raise ConfigError(f"grid is missing axes {sorted(missing)}")
    base.sort(key=lambda a: coords.base.index(a.name))
    return GridSpec(base), vel


def _components(body, coords: Coords, names: list[str], what: str, default: str | None = None):
    given = {_axis_name(coords, k) if k in ("v", "p") else k: v for k, v in body.items() if k != "kind"}
    if what == "generating form" and coords.m == 1 and "W" in given:
        given["W1"] = given.pop("W")
    extra = set(given) - set(names)
    if extra:
        raise ConfigError(f"{what} has unknown components {sorted(extra)}; expected {', '.join(names)}")
    out = []
    for name in names:
        if name in given:
            out.append(given[name])
        elif default is not None:
            out.append(default)
        else:
            raise ConfigError(f"{what} is missing component {name}")
    return out


def _candidate(name: str, body, m: int, n: int, bundle: ModelBundle | None) -> CandidateEntry:
    c = Coords(m, n)
    kind = body.get("kind", "").strip()
    if kind not in KINDS:
        raise ConfigError(f"candidate {name!r}: kind must be one of {', '.join(KINDS)}")
    label = f"candidate {name!r}"
    if kind == "jetfield":
        return CandidateEntry(name, kind, JetField(m, n, _components(body, c, c.v, label)), "lagrangian")
    if kind == "section":
        return CandidateEntry(name, kind, MomentumSection(m, n, _components(body, c, c.p, label)),
                              "hamiltonian")
    if kind == "generating":
        names = [f"W{i + 1}" for i in range(m)]
        return CandidateEntry(name, kind, GeneratingForm(m, n, _components(body, c, names, "generating form")))
    if kind in ("lag_coefficients", "ham_coefficients"):
        letter = "F" if kind == "lag_coefficients" else "G"
        keys = {}
        for a in range(n):
            for i in range(m):
                for j in range(m):
                    keys[(a, i, j)] = f"{letter}{a + 1}_{i + 1}_{j + 1}"
        comps = dict(zip(keys, _components(body, c, list(keys.values()), label, "0")))
        if letter == "F":
            flat = [comps[(a, i, j)] for j in range(m) for i in range(m) for a in range(n)]
            return CandidateEntry(name, kind, LagCoefficients(m, n, flat), "lagrangian")
        flat = [comps[(a, i, j)] for a in range(n) for j in range(m) for i in range(m)]
        return CandidateEntry(name, kind, HamCoefficients(m, n, flat), "hamiltonian")
    if kind == "family":
        side = body.get("side", "lagrangian").strip()
        k = m * n
        box = []
        for r in range(k):
            key = f"lam{r + 1}"
            if key not in body:
                raise ConfigError(f"{label} needs a range {key} = lo, hi")
            lo, hi = _floats(body[key], key)
            box.append((lo, hi))
        names = c.v if side == "lagrangian" else c.p
        fields = {k2: v for k2, v in body.items()
                  if k2 not in ("kind", "side", "constraint") and not k2.startswith("lam")}
        comps = _components(fields, c, names, label)
        fam = CompleteSolutionFamily(side, m, n, comps, box, body.get("constraint"), name)
        return CandidateEntry(name, kind, fam, side)
    # builtin family member
    if bundle is None:
        raise ConfigError(f"{label}: builtin members need a builtin model")
    fam_name = body.get("family")
    if fam_name is None:
        raise ConfigError(f"{label}: builtin members need a family name")
    side = body.get("side")
    params = {k2: _param_value(v) for k2, v in body.items() if k2 not in ("kind", "family", "side")}
    try:
        fam = bundle.family(fam_name.strip(), side.strip() if side else None)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    try:
        member: Candidate = fam.member(**params)
    except TypeError as exc:
        raise ConfigError(f"{label}: {exc}") from None
    return CandidateEntry(name, "jetfield" if member.side == "lagrangian" else "section",
                          member.field, member.side, member.W)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = _read(text, source)
    known = {"model", "model.params", "run", "reconstruct", "grid"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith(("candidates.", "grid.")):
            raise ConfigError(f"unknown section [{sec}]")
    m, n, theory, H, bundle = _model(cp)
    coords = Coords(m, n)
    grid, vel = _grid(cp, coords, bundle)
    cands = {}
    for sec in cp.sections():
        if sec.startswith("candidates."):
            name = sec[len("candidates."):]
            cands[name] = _candidate(name, cp[sec], m, n, bundle)
    run = dict(cp["run"]) if cp.has_section("run") else {}
    extra = set(run) - RUN_KEYS
    if extra:
        raise ConfigError(f"unknown [run] keys {sorted(extra)}")
    tol = DEFAULT_TOL
    if "tol" in run:
        try:
            tol = float(run["tol"])
        except ValueError:
            raise ConfigError(f"[run] tol must be a number, got {run['tol']!r}") from None
    rec = ReconstructSettings()
    if cp.has_section("reconstruct"):
        body = cp["reconstruct"]
        extra = set(body) - RECONSTRUCT_KEYS
        if extra:
            raise ConfigError(f"unknown [reconstruct] keys {sorted(extra)}")
        rec.candidate = body.get("candidate")
        rec.csv = body.get("csv")
        for key in ("x0", "u0", "lo", "hi"):
            if key in body:
                setattr(rec, key, _floats(body[key], f"[reconstruct] {key}"))
        for key in ("steps", "order"):
            if key in body:
                setattr(rec, key, [int(v) for v in _floats(body[key], f"[reconstruct] {key}")])
    return RunConfig(m, n, theory, H, grid, bundle, vel, cands, tol, run, rec)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
