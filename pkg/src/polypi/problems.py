"""Problem files: structured TOML in, validated domain objects out.

A problem file declares the plant (exact or as an uncertain family), the
running cost, the design degrees and performance box, the initial
value/policy pair (or "search"), and optionally a learning schedule and an
analytic reference value function.  Validation front-loads every module
precondition so a bad file fails before any solve starts.
"""

from __future__ import annotations

import math

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .poly import Box, parse_poly
from .sim import NoiseSpec
from .systems import CostSpec, PolyFamily, Policy, PolySystem, ValueFn
from . import pi


class ValidationError(ValueError):
    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


# ---------------------------------------------------------------------------
# Analytic reference value functions, by what they solve
# ---------------------------------------------------------------------------

def _scalar_quadratic_drift(params: dict):
    """Closed-form optimal value for xdot = a x^2 + b u with
    q = q2 x^2 + q4 x^4 and effort weight rho."""
    a = float(params["a"])
    b = float(params["b"])
    q2 = float(params["q2"])
    q4 = float(params["q4"])
    rho = float(params.get("rho", 1.0))
    c2 = b * b * q2 / rho
    k = a * a + b * b * q4 / rho

    def V(x) -> float:
        xv = float(np.atleast_1d(x)[0])
        return (2.0 * rho / (b * b)) * (a * xv ** 3 / 3.0
                                        + (k * xv ** 2 + c2) ** 1.5 / (3.0 * k)
                                        - c2 ** 1.5 / (3.0 * k))

    return V


def _scalar_lqr(params: dict):
    """Riccati value alpha x^2 for xdot = a x + b u, q = q2 x^2."""
    a = float(params["a"])
    b = float(params["b"])
    q2 = float(params["q2"])
    rho = float(params.get("rho", 1.0))
    alpha = rho / (b * b) * (a + math.sqrt(a * a + b * b * q2 / rho))

    def V(x) -> float:
        xv = float(np.atleast_1d(x)[0])
        return alpha * xv * xv

    return V


REFERENCES = {
    "scalar_quadratic_drift": _scalar_quadratic_drift,
    "scalar_lqr": _scalar_lqr,
}


# ---------------------------------------------------------------------------
# Problem structure
# ---------------------------------------------------------------------------

@dataclass
class LearningConfig:
    x0: np.ndarray
    window: float
    delta_t: float
    noise: NoiseSpec
    h: float = 1e-3
    max_iter: int = 10
    t_post: float = 10.0
    impulse_t: float | None = None
    impulse_dx: np.ndarray | None = None


@dataclass
class Problem:
    name: str
    source_text: str
    n: int
    m: int
    system: PolySystem | None          # concrete plant (family instantiated)
    family: PolyFamily | None
    cost: CostSpec
    r: int
    d: int
    omega: Box
    eps: float
    max_iter: int
    v0: ValueFn | None                 # None means "search"
    u1: Policy
    learning: LearningConfig | None = None
    reference: object = None           # callable x -> V(x), when declared
    param_true: tuple[float, ...] | None = None

    def plant(self) -> PolySystem:
        if self.system is None:
            raise ValidationError("system.param_true",
                                  "a concrete plant requires true parameters")
        return self.system

    def initial_value(self, opts=None) -> ValueFn:
        """The declared V0, or the robust feasibility search result."""
        if self.v0 is not None:
            return self.v0
        if self.family is None:
            raise ValidationError("init.v0",
                                  "v0 = \"search\" requires a parameter box")
        from .sdp import SolverOptions
        V0, _ = pi.robust_feasible_v0(self.family, self.u1, self.cost, self.r,
                                      opts or SolverOptions())
        return V0


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ValidationError(f"{path}.{key}", "missing required field")
    return table[key]


def _parse_entry(text, n_total, names, path):
    if not isinstance(text, str):
        raise ValidationError(path, f"expected a polynomial string, got "
                                    f"{type(text).__name__}")
    try:
        return parse_poly(text, n_total, names)
    except ValueError as err:
        raise ValidationError(path, str(err)) from err


def load_problem(path) -> Problem:
    path = Path(path)
    text = path.read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ValidationError(str(path), f"not valid TOML: {err}") from err
    return build_problem(doc, name=path.stem, source_text=text)


def build_problem(doc: dict, name: str = "problem",
                  source_text: str = "") -> Problem:
    sys_tbl = _require(doc, "system", name)
    n = int(_require(sys_tbl, "n", "system"))
    m = int(_require(sys_tbl, "m", "system"))
    if n < 1 or m < 1:
        raise ValidationError("system.n", "need n >= 1 and m >= 1")

    k = int(sys_tbl.get("params", 0))
    names = tuple([f"x{i + 1}" for i in range(n)]
                  + [f"b{j + 1}" for j in range(k)])

    f_texts = _require(sys_tbl, "f", "system")
    if len(f_texts) != n:
        raise ValidationError("system.f", f"expected {n} entries, got "
                                          f"{len(f_texts)}")
    g_texts = _require(sys_tbl, "g", "system")
    if len(g_texts) != n or any(len(row) != m for row in g_texts):
        raise ValidationError("system.g", f"expected an {n} x {m} table")
    f_polys = tuple(_parse_entry(t, n + k, names, f"system.f[{i}]")
                    for i, t in enumerate(f_texts))
    g_polys = tuple(tuple(_parse_entry(t, n + k, names, f"system.g[{i}][{j}]")
                          for j, t in enumerate(row))
                    for i, row in enumerate(g_texts))

    family = None
    system = None
    param_true = None
    if k > 0:
        lo = _require(sys_tbl, "param_lo", "system")
        hi = _require(sys_tbl, "param_hi", "system")
        if len(lo) != k or len(hi) != k:
            raise ValidationError("system.param_lo",
                                  f"expected {k} bounds per side")
        try:
            family = PolyFamily(n=n, f=f_polys, g=g_polys,
                                param_box=Box(tuple(lo), tuple(hi)))
        except ValueError as err:
            raise ValidationError("system", str(err)) from err
        if "param_true" in sys_tbl:
            param_true = tuple(float(v) for v in sys_tbl["param_true"])
            if len(param_true) != k:
                raise ValidationError("system.param_true",
                                      f"expected {k} values")
            try:
                system = family.instantiate(param_true)
            except ValueError as err:
                raise ValidationError("system.param_true", str(err)) from err
    else:
        try:
            system = PolySystem(f_polys, g_polys)
        except ValueError as err:
            raise ValidationError("system", str(err)) from err

    cost_tbl = _require(doc, "cost", name)
    q = _parse_entry(_require(cost_tbl, "q", "cost"), n,
                     names[:n], "cost.q")
    R = np.array(_require(cost_tbl, "R", "cost"), dtype=float)
    try:
        cost = CostSpec(q=q, R=R)
    except ValueError as err:
        raise ValidationError("cost", str(err)) from err
    if cost.m != m:
        raise ValidationError("cost.R", f"R is {cost.m} x {cost.m} but the "
                                        f"system has m = {m} inputs")

    design = _require(doc, "design", name)
    r = int(_require(design, "r", "design"))
    if r < 1:
        raise ValidationError("design.r", "need r >= 1")
    omega_lo = _require(design, "omega_lo", "design")
    omega_hi = _require(design, "omega_hi", "design")
    try:
        omega = Box(tuple(omega_lo), tuple(omega_hi))
        omega.require_origin_interior("design.omega")
    except ValueError as err:
        raise ValidationError("design.omega", str(err)) from err
    if omega.n != n:
        raise ValidationError("design.omega", f"box has {omega.n} axes, "
                                              f"expected {n}")
    probe = system if system is not None else \
        family.instantiate(family.param_box.lo)
    d_default = pi.degree_bound(probe, cost, r)
    d = int(design.get("d", d_default))
    if d < d_default:
        raise ValidationError("design.d",
                              f"d = {d} below the degree bound {d_default}")
    eps = float(design.get("eps", 1e-3))
    max_iter = int(design.get("max_iter", 10))

    init = _require(doc, "init", name)
    u1_texts = _require(init, "u1", "init")
    if len(u1_texts) != m:
        raise ValidationError("init.u1", f"expected {m} entries")
    u1_polys = [_parse_entry(t, n, names[:n], f"init.u1[{j}]")
                for j, t in enumerate(u1_texts)]
    try:
        u1 = Policy.from_polynomials(u1_polys, d)
    except ValueError as err:
        raise ValidationError("init.u1", str(err)) from err

    v0_text = _require(init, "v0", "init")
    v0 = None
    if v0_text != "search":
        v0_poly = _parse_entry(v0_text, n, names[:n], "init.v0")
        try:
            v0 = ValueFn.from_polynomial(v0_poly, r)
        except ValueError as err:
            raise ValidationError("init.v0", str(err)) from err
    elif family is None:
        raise ValidationError("init.v0",
                              "v0 = \"search\" requires system.params")

    learning = None
    if "learning" in doc:
        lt = doc["learning"]
        x0 = np.array(_require(lt, "x0", "learning"), dtype=float)
        if x0.shape != (n,):
            raise ValidationError("learning.x0", f"expected {n} entries")
        raw_noise = _require(lt, "noise", "learning")
        if len(raw_noise) != m:
            raise ValidationError("learning.noise",
                                  f"expected one channel list per input "
                                  f"({m}), got {len(raw_noise)}")
        try:
            noise = NoiseSpec(
                channels=tuple(tuple((float(a), float(w), float(ph))
                                     for a, w, ph in ch) for ch in raw_noise),
                t_off=float(lt.get("t_noise_off", math.inf)))
        except (TypeError, ValueError) as err:
            raise ValidationError("learning.noise",
                                  f"each term must be [amplitude, angular "
                                  f"frequency, phase]: {err}") from err
        window = float(_require(lt, "window", "learning"))
        delta_t = float(_require(lt, "dt", "learning"))
        h = float(lt.get("h", 1e-3))
        if window <= 0 or delta_t <= 0:
            raise ValidationError("learning.window", "must be positive")
        if delta_t / h != round(delta_t / h):
            raise ValidationError("learning.dt",
                                  "dt must be a multiple of the step h")
        impulse_t = impulse_dx = None
        if "impulse" in lt:
            impulse_t = float(_require(lt["impulse"], "t", "learning.impulse"))
            impulse_dx = np.array(_require(lt["impulse"], "dx",
                                           "learning.impulse"), dtype=float)
            if impulse_dx.shape != (n,):
                raise ValidationError("learning.impulse.dx",
                                      f"expected {n} entries")
        learning = LearningConfig(x0=x0, window=window, delta_t=delta_t,
                                  noise=noise, h=h,
                                  max_iter=int(lt.get("max_iter", max_iter)),
                                  t_post=float(lt.get("t_post", 10.0)),
                                  impulse_t=impulse_t, impulse_dx=impulse_dx)

    reference = None
    if "reference" in doc:
        ref_tbl = doc["reference"]
        ref_name = _require(ref_tbl, "name", "reference")
        if ref_name not in REFERENCES:
            raise ValidationError("reference.name",
                                  f"unknown reference {ref_name!r}; have "
                                  f"{sorted(REFERENCES)}")
        reference = REFERENCES[ref_name](ref_tbl.get("params", {}))

    return Problem(name=name, source_text=source_text, n=n, m=m,
                   system=system, family=family, cost=cost, r=r, d=d,
                   omega=omega, eps=eps, max_iter=max_iter, v0=v0, u1=u1,
                   learning=learning, reference=reference,
                   param_true=param_true)
