"""Scenario configuration files.

Grammar (one entry per line)::

    # comment
    section.key = value        # trailing comment

A value is a number, a word, a comma separated list of numbers or words, or
a table ``t0:v0, t1:v1, ...``.  Keys are checked against :data:`SCHEMA`;
unknown keys, duplicates and malformed values are rejected with the line and
column of the offending text.  Time-dependent loads are spatially uniform
and given either as polynomial coefficients in ``t`` (constant term first) or
as a table interpolated linearly in time.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .assembly import ProblemContext
from .constitutive import Constitutive, ConstitutiveError, isotropic_tensor
from .geometry import SIDES, MeshError, build_rect_mesh
from .kernels import constant_kernel, exp_kernel
from .monotone import MonotoneGraph, NON_PENETRATION, UNIT_INTERVAL, SmoothFunction
from .state import ConfigError, SolverConfig, TimeGrid
from .stepper import InitialData, Loads

_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_NUM = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|[+-]?inf$")


class ParseError(ConfigError):
    def __init__(self, line: int, col: int, message: str):
        super().__init__("parse", f"line {line}, column {col}: {message}")
        self.line, self.col = line, col


# type, default
SCHEMA: dict[str, tuple[str, Any]] = {
    "name": ("word", "scenario"),
    "mesh.nx": ("int", 8),
    "mesh.ny": ("int", 8),
    "mesh.width": ("float", 1.0),
    "mesh.height": ("float", 1.0),
    "mesh.contact": ("word", "bottom"),
    "mesh.dirichlet": ("words", ("left",)),
    "material.kappa0": ("float", 1.0),
    "material.kappa1": ("float", 1.0),
    "material.mu": ("float", 2.0),
    "material.k": ("floats", (1.0, 0.0, 1.0)),
    "material.C_k": ("float", 1.0),
    "material.s_k": ("float", 2.0),
    "material.lambda": ("floats", (0.0, 0.5)),
    "material.delta": ("float", 0.0),
    "material.gamma": ("floats", (0.0625, -0.25, 0.25)),
    "material.nu": ("float", 0.0),
    "material.elastic.lambda": ("float", 1.0),
    "material.elastic.mu": ("float", 1.0),
    "material.viscous.lambda": ("float", 0.5),
    "material.viscous.mu": ("float", 0.5),
    "graphs.eta": ("word", "nonpenetration"),
    "graphs.beta": ("word", "unit-interval"),
    "kernel.type": ("word", "exp"),
    "kernel.amplitude": ("float", 0.5),
    "kernel.length": ("float", 0.3),
    "init.theta": ("float", 1.0),
    "init.theta.slope": ("float", 0.0),
    "init.theta_s": ("float", 1.0),
    "init.chi": ("float", 1.0),
    "init.chi.slope": ("float", 0.0),
    "init.theta_star": ("float", None),
    "init.theta_s_star": ("float", None),
    "init.noise": ("float", 0.0),
    "time.T": ("float", 1.0),
    "time.K": ("int", 32),
    "solver.rho": ("float", 0.01),
    "solver.varsigma": ("float", 0.1),
    "solver.omega": ("float", 6.0),
    "solver.eps": ("float", 0.0),
    "solver.M": ("float", math.inf),
    "solver.damping": ("float", 0.7),
    "solver.tol": ("float", 1e-10),
    "solver.max_iter": ("int", 200),
    "solver.newton_check": ("bool", False),
    "solver.max_halvings": ("int", 3),
    "solver.frozen": ("words", ()),
    "output.dump_times": ("floats", ()),
    "output.fields": ("words", ("theta", "u", "theta_s", "chi")),
    "output.nu": ("float", 0.9),
    "output.ps": ("floats", (2.0, 4.0, 8.0)),
}
for _f in ("h", "ell", "f.x", "f.y", "g.x", "g.y"):
    SCHEMA[f"load.{_f}"] = ("floats", (0.0,))
    SCHEMA[f"load.{_f}.table"] = ("table", None)
SCHEMA["load.g.sides"] = ("words", ())

FIELD_NAMES = ("theta", "u", "theta_s", "chi")
_N_SAMPLES = 101


# ---------------------------------------------------------------------------
# lexing

def _strip_comment(s: str) -> str:
    i = s.find("#")
    return s if i < 0 else s[:i]


def _number(tok: str, line: int, col: int) -> float:
    if not _NUM.match(tok):
        raise ParseError(line, col, f"expected a number, got {tok!r}")
    return float(tok)


def _items(raw: str, line: int, col0: int):
    """Split a comma list and yield ``(token, column)``."""
    pos = 0
    for part in raw.split(","):
        lead = len(part) - len(part.lstrip())
        tok = part.strip()
        if not tok:
            raise ParseError(line, col0 + pos, "empty list item")
        yield tok, col0 + pos + lead
        pos += len(part) + 1


def _convert(kind: str, raw: str, line: int, col: int):
    if kind == "float":
        return _number(raw.strip(), line, col)
    if kind == "int":
        v = _number(raw.strip(), line, col)
        if v != int(v) or math.isinf(v):
            raise ParseError(line, col, f"expected an integer, got {raw.strip()!r}")
        return int(v)
    if kind == "bool":
        t = raw.strip().lower()
        if t in ("true", "yes", "1"):
            return True
        if t in ("false", "no", "0"):
            return False
        raise ParseError(line, col, f"expected true or false, got {raw.strip()!r}")
    if kind == "word":
        t = raw.strip()
        if not re.match(r"[A-Za-z0-9_\-]+$", t):
            raise ParseError(line, col, f"expected a single word, got {t!r}")
        return t
    if kind == "words":
        return tuple(t for t, _ in _items(raw, line, col))
    if kind == "floats":
        return tuple(_number(t, line, c) for t, c in _items(raw, line, col))
    if kind == "table":
        rows = []
        for t, c in _items(raw, line, col):
            if t.count(":") != 1:
                raise ParseError(line, c, f"expected 'time:value', got {t!r}")
            a, b = t.split(":")
            rows.append((_number(a.strip(), line, c), _number(b.strip(), line, c + len(a) + 1)))
        ts = [r[0] for r in rows]
        if len(rows) < 2 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ParseError(line, col, "a table needs at least two rows with increasing times")
        return tuple(rows)
    raise AssertionError(kind)


def parse_entries(text: str) -> dict:
    """Lex a config document into ``{key: value}`` (no semantic checks)."""
    out: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ParseError(ln, col, "expected 'key = value'")
        k, v = body.split("=", 1)
        key = k.strip()
        kcol = len(k) - len(k.lstrip()) + 1
        if not _KEY.match(key):
            raise ParseError(ln, kcol, f"malformed key {key!r}")
        if key not in SCHEMA:
            raise ParseError(ln, kcol, f"unknown key {key!r}")
        if key in out:
            raise ParseError(ln, kcol, f"duplicate key {key!r}")
        vcol = len(k) + 2 + (len(v) - len(v.lstrip()))
        if not v.strip():
            raise ParseError(ln, vcol, f"missing value for {key!r}")
        out[key] = _convert(SCHEMA[key][0], v, ln, vcol)
    return out


# ---------------------------------------------------------------------------
# scenario

@dataclass(frozen=True)
class TimeFunction:
    """Spatially uniform load component: polynomial in ``t`` or a time table."""

    coeffs: tuple = (0.0,)
    table: Optional[tuple] = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.table is not None:
            ts, vs = zip(*self.table)
            return np.interp(t, ts, vs)
        return np.polynomial.polynomial.polyval(t, np.asarray(self.coeffs, dtype=float))

    @property
    def is_zero(self) -> bool:
        if self.table is not None:
            return all(v == 0 for _, v in self.table)
        return all(c == 0 for c in self.coeffs)


@dataclass(eq=False)
class Scenario:
    """A validated configuration; :meth:`build` yields the problem objects."""

    values: dict
    text_hash: str
    problem: Any = field(default=None, repr=False)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def name(self) -> str:
        return self.values["name"]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self["time.T"], self["time.K"])

    def solver_config(self) -> SolverConfig:
        v = self.values
        return SolverConfig(rho=v["solver.rho"], varsigma=v["solver.varsigma"], omega=v["solver.omega"],
                            eps=v["solver.eps"], M=v["solver.M"], damping=v["solver.damping"],
                            tol=v["solver.tol"], max_iter=v["solver.max_iter"],
                            newton_check=v["solver.newton_check"], max_halvings=v["solver.max_halvings"])

    def load(self, name: str) -> TimeFunction:
        tab = self.values.get(f"load.{name}.table")
        return TimeFunction(self.values[f"load.{name}"], tab)

    def with_values(self, **kw) -> "Scenario":
        """Copy with some entries replaced (keys use ``__`` for dots)."""
        v = dict(self.values)
        for k, x in kw.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError("parse", f"unknown key {key!r}")
            v[key] = x
        return build_scenario(v)

    def build(self, seed: int = 0):
        """Assemble meshes, materials, loads and initial data."""
        from .scenarios import Problem
        v = self.values
        spec = {s: "neumann" for s in SIDES}
        for s in v["mesh.dirichlet"]:
            spec[s] = "dirichlet"
        spec[v["mesh.contact"]] = "contact"
        try:
            bulk, surf = build_rect_mesh(v["mesh.nx"], v["mesh.ny"], v["mesh.width"], v["mesh.height"], spec)
        except MeshError as e:
            raise ConfigError("ass-domain", str(e)) from None
        c = _constitutive(v)
        kt = v["kernel.type"]
        kernel = (None if kt == "none" else constant_kernel(v["kernel.amplitude"]) if kt == "constant"
                  else exp_kernel(v["kernel.amplitude"], v["kernel.length"]))
        ctx = ProblemContext.build(bulk, surf, c, kernel, frozen=v["solver.frozen"])
        x = bulk.nodes[:, 0]
        xs = surf.positions
        rng = np.random.default_rng(seed)
        noise = v["init.noise"]
        theta = v["init.theta"] + v["init.theta.slope"] * x + noise * rng.uniform(0, 1, ctx.N)
        theta_s = v["init.theta_s"] + noise * rng.uniform(0, 1, ctx.S)
        chi = v["init.chi"] + v["init.chi.slope"] * (xs - xs[0])
        init = InitialData(theta, np.zeros((ctx.N, 2)), theta_s, chi,
                           v["init.theta_star"], v["init.theta_s_star"])
        init.validate(ctx)
        loads = self._loads(bulk)
        return Problem(ctx, init, self.grid, loads, self.solver_config(), {"name": self.name})

    def _loads(self, bulk) -> Loads:
        h, ell = self.load("h"), self.load("ell")
        fx, fy, gx, gy = (self.load(n) for n in ("f.x", "f.y", "g.x", "g.y"))
        sides = self.values["load.g.sides"]
        if sides:
            tol = 1e-9 * max(bulk.width, bulk.height)
            on = {"bottom": lambda p: p[:, 1] < tol, "top": lambda p: p[:, 1] > bulk.height - tol,
                  "left": lambda p: p[:, 0] < tol, "right": lambda p: p[:, 0] > bulk.width - tol}

            def mask(p):
                m = np.zeros(len(p), dtype=bool)
                for s in sides:
                    m |= on[s](p)
                return m.astype(float)
        else:
            def mask(p):
                return np.ones(len(p))

        def vec(a, b, m=None):
            def fn(p, t):
                w = np.ones(len(p)) if m is None else m(p)
                return np.stack([a(t) * w, b(t) * w], axis=1)
            return fn

        return Loads(
            h=None if h.is_zero else (lambda p, t: np.full(len(p), float(h(t)))),
            ell=None if ell.is_zero else (lambda p, t: np.full(len(p), float(ell(t)))),
            f=None if fx.is_zero and fy.is_zero else vec(fx, fy),
            g=None if gx.is_zero and gy.is_zero else vec(gx, gy, mask),
        )


def _poly(coeffs, label) -> SmoothFunction:
    return SmoothFunction.polynomial(list(coeffs), label)


def _graph(word: str, which: str) -> MonotoneGraph:
    table = {"eta": {"nonpenetration": NON_PENETRATION, "none": MonotoneGraph.interval(-math.inf, math.inf)},
             "beta": {"unit-interval": UNIT_INTERVAL, "none": MonotoneGraph.interval(-math.inf, math.inf)}}
    try:
        return table[which][word]
    except KeyError:
        raise ConfigError("parse", f"graphs.{which} must be one of {sorted(table[which])}, got {word!r}") from None


def _constitutive(v: dict) -> Constitutive:
    c = Constitutive(
        kappa0=v["material.kappa0"], kappa1=v["material.kappa1"], mu=v["material.mu"],
        k=_poly(v["material.k"], "k"), C_k=v["material.C_k"], s_k=v["material.s_k"],
        lam=_poly(v["material.lambda"], "lambda"), delta=v["material.delta"],
        gam=_poly(v["material.gamma"], "gamma"), nu=v["material.nu"],
        beta=_graph(v["graphs.beta"], "beta"), eta=_graph(v["graphs.eta"], "eta"),
        elastic=isotropic_tensor(v["material.elastic.lambda"], v["material.elastic.mu"]),
        viscous=isotropic_tensor(v["material.viscous.lambda"], v["material.viscous.mu"]),
    )
    bad = c.check_hypotheses()
    if bad:
        raise ConfigError(*bad[0])
    return c


def _canonical(values: dict) -> str:
    def fmt(x):
        if isinstance(x, tuple):
            return ",".join(fmt(y) for y in x)
        if isinstance(x, float):
            return repr(x)
        return str(x)
    return "\n".join(f"{k}={fmt(values[k])}" for k in sorted(values)) + "\n"


def config_hash(values: dict) -> str:
    """SHA-256 of the canonical ``key=value`` listing (comments and layout ignored)."""
    return hashlib.sha256(_canonical(values).encode()).hexdigest()


def _check_semantics(v: dict):
    if v["mesh.contact"] not in SIDES:
        raise ConfigError("ass-domain", f"mesh.contact must be one of {SIDES}")
    for s in v["mesh.dirichlet"]:
        if s not in SIDES:
            raise ConfigError("ass-domain", f"unknown side {s!r} in mesh.dirichlet")
    if v["mesh.contact"] in v["mesh.dirichlet"]:
        raise ConfigError("ass-domain", "the contact side cannot also be a Dirichlet side")
    if not v["mesh.dirichlet"]:
        raise ConfigError("ass-domain", "at least one Dirichlet side is required")
    for s in v["load.g.sides"]:
        if s not in SIDES:
            raise ConfigError("cond-bf-f", f"unknown side {s!r} in load.g.sides")
    if v["kernel.type"] not in ("none", "constant", "exp"):
        raise ConfigError("ass-j", "kernel.type must be none, constant or exp")
    if v["kernel.type"] != "none" and v["kernel.amplitude"] < 0:
        raise ConfigError("ass-j", "the kernel must be nonnegative")
    if v["kernel.type"] == "exp" and not v["kernel.length"] > 0:
        raise ConfigError("ass-j", "kernel.length must be positive")
    for f in v["solver.frozen"]:
        if f not in FIELD_NAMES:
            raise ConfigError("parse", f"unknown field {f!r} in solver.frozen")
    for f in v["output.fields"]:
        if f not in FIELD_NAMES:
            raise ConfigError("parse", f"unknown field {f!r} in output.fields")
    if not 0 < v["output.nu"] < 1:
        raise ConfigError("parse", "output.nu must lie in (0, 1)")
    T = v["time.T"]
    if not T > 0 or v["time.K"] < 1:
        raise ConfigError("time-grid", "need time.T > 0 and time.K >= 1")
    for t in v["output.dump_times"]:
        if not 0 <= t <= T:
            raise ConfigError("parse", f"dump time {t} outside [0, {T}]")
    ts = np.linspace(0.0, T, _N_SAMPLES)
    for name, tag in (("h", "cond-h"), ("ell", "cond-ell")):
        tab = v.get(f"load.{name}.table")
        vals = TimeFunction(v[f"load.{name}"], tab)(ts)
        if tab is not None:
            vals = np.concatenate([vals, [r[1] for r in tab]])
        if np.any(vals < 0):
            raise ConfigError(tag, f"heat source {name} must be nonnegative, min {vals.min():.6g}")
    for name in ("h", "ell", "f.x", "f.y", "g.x", "g.y"):
        tab = v.get(f"load.{name}.table")
        if tab is not None and v[f"load.{name}"] != SCHEMA[f"load.{name}"][1]:
            raise ConfigError("parse", f"load.{name} given both as coefficients and as a table")
        if tab is not None and (tab[0][0] > 0 or tab[-1][0] < T):
            raise ConfigError("cond-data", f"table for load.{name} does not cover [0, {T}]")


def build_scenario(values: dict) -> Scenario:
    v = {k: d for k, (_, d) in SCHEMA.items()}
    v.update(values)
    _check_semantics(v)
    sc = Scenario(v, config_hash(v))
    sc.solver_config()
    try:
        sc.problem = sc.build()
    except ConstitutiveError as e:
        raise ConfigError(e.tag, str(e).split(": ", 1)[-1]) from None
    return sc


def parse_config(text: str) -> Scenario:
    """Parse and fully validate a configuration document."""
    return build_scenario(parse_entries(text))


def load_config(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
