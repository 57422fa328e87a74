"""Scenario builders shared by the test suite, the scripts and the CLI."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import ProblemContext
from .constitutive import Constitutive, isotropic_tensor
from .geometry import build_rect_mesh
from .kernels import exp_kernel
from .monotone import SmoothFunction
from .state import SolverConfig, TimeGrid
from .stepper import InitialData, Loads


@dataclass
class Problem:
    ctx: ProblemContext
    init: InitialData
    grid: TimeGrid
    loads: Loads
    cfg: SolverConfig
    params: dict


def _latent(L: float, b: float) -> SmoothFunction:
    """``L r + b sin r``; concave after subtracting ``|b| r^2 / 2``."""
    return SmoothFunction(lambda r: L * r + b * np.sin(r), lambda r: L + b * np.cos(r),
                          lambda r: -b * np.sin(r), f"{L}r+{b}sin(r)")


def _adhesion_potential(a: float, c: float) -> SmoothFunction:
    """``a (r - 1/2)^2 + c (cos r - 1)``; convex after adding ``|c| r^2 / 2``."""
    return SmoothFunction(lambda r: a * (r - 0.5) ** 2 + c * (np.cos(r) - 1.0),
                          lambda r: 2 * a * (r - 0.5) - c * np.sin(r),
                          lambda r: 2 * a - c * np.cos(r) + 0 * r, f"{a}(r-1/2)^2+{c}(cos r-1)")


def random_constitutive(rng: np.random.Generator) -> tuple[Constitutive, dict]:
    p = dict(
        kappa0=rng.uniform(0.5, 2.0), kappa1=rng.uniform(0.2, 1.5), mu=rng.uniform(1.5, 3.0),
        Ck=rng.uniform(0.2, 2.0), L=rng.uniform(-1.0, 1.0), b=rng.uniform(-0.3, 0.3),
        a=rng.uniform(0.0, 1.0), c=rng.uniform(-0.3, 0.3),
        Elam=rng.uniform(0.5, 2.0), Emu=rng.uniform(0.5, 2.0),
        Vlam=rng.uniform(0.1, 1.0), Vmu=rng.uniform(0.1, 1.0),
    )
    c = Constitutive(
        kappa0=p["kappa0"], kappa1=p["kappa1"], mu=p["mu"],
        k=SmoothFunction.polynomial([p["Ck"], 0.0, p["Ck"]]), C_k=p["Ck"], s_k=2.0,
        lam=_latent(p["L"], p["b"]), delta=abs(p["b"]),
        gam=_adhesion_potential(p["a"], p["c"]), nu=abs(p["c"]),
        elastic=isotropic_tensor(p["Elam"], p["Emu"]), viscous=isotropic_tensor(p["Vlam"], p["Vmu"]),
    )
    return c, p


def random_problem(seed: int, nx: int = 8, ny: int = 8, K: int = 32, T: float = 1.0) -> Problem:
    """Randomized full-coupling scenario with positive initial temperatures
    (lower bounds at least 0.1) and nonnegative heat sources."""
    rng = np.random.default_rng(seed)
    c, p = random_constitutive(rng)
    bulk, surf = build_rect_mesh(nx, ny, 1.0, 1.0, {"bottom": "contact", "left": "dirichlet"})
    amp, length = rng.uniform(0.0, 1.0), rng.uniform(0.1, 1.0)
    ctx = ProblemContext.build(bulk, surf, c, exp_kernel(amp, length))
    th_star, ts_star = rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)
    init = InitialData(th_star + rng.uniform(0, 1, ctx.N), np.zeros((ctx.N, 2)),
                       ts_star + rng.uniform(0, 1, ctx.S), rng.uniform(0, 1, ctx.S),
                       theta_star=th_star, theta_s_star=ts_star)
    h0, h1, l0 = rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)
    fx, fy = rng.uniform(-2, 2, 2)
    gx, gy = rng.uniform(-1, 1, 2)
    loads = Loads(
        h=lambda x, t: h0 * (1 + h1 * t) * (1 + 0.5 * np.sin(math.pi * x[:, 0])),
        ell=lambda x, t: l0 * (1 + t) * np.ones(len(x)),
        f=lambda x, t: np.array([fx, fy]) * (1 + t),
        g=lambda x, t: np.array([gx, gy]) * np.sin(math.pi * t),
    )
    cfg = SolverConfig(rho=10 ** rng.uniform(-3, -1), varsigma=10 ** rng.uniform(-1.7, -0.3))
    p.update(kernel_amp=amp, kernel_length=length, theta_star=th_star, theta_s_star=ts_star,
             h0=h0, h1=h1, l0=l0, f=(fx, fy), g=(gx, gy), rho=cfg.rho, varsigma=cfg.varsigma)
    return Problem(ctx, init, TimeGrid(T, K), loads, cfg, p)


def manufactured_heat(nx: int, K: int, T: float = 1.0, ny: int = 1) -> Problem:
    """Decoupled linear heat problem with exact solution ``cos(pi x) exp(-t)``.

    Displacement and adhesion are frozen, the exchange coefficient and the
    kernel vanish and the conductivity is identically one, so the bulk
    temperature solves ``theta_t - Laplace theta = h`` with homogeneous
    Neumann data.
    """
    c = Constitutive(kappa0=1.0, kappa1=0.0, k=SmoothFunction.zero(), lam=SmoothFunction.zero(),
                     gam=SmoothFunction.zero())
    bulk, surf = build_rect_mesh(nx, ny, 1.0, 1.0 / ny if ny > 1 else 1.0 / nx,
                                 {"bottom": "contact", "left": "dirichlet"})
    ctx = ProblemContext.build(bulk, surf, c, None, frozen=("u", "chi"))
    x = bulk.nodes[:, 0]
    init = InitialData(np.cos(math.pi * x), np.zeros((ctx.N, 2)), np.ones(ctx.S), np.zeros(ctx.S))
    pi2 = math.pi ** 2
    loads = Loads(h=lambda p, t: (pi2 - 1.0) * np.cos(math.pi * p[:, 0]) * math.exp(-t))
    cfg = SolverConfig(rho=0.0, varsigma=0.1)
    return Problem(ctx, init, TimeGrid(T, K), loads, cfg, {})


def manufactured_exact(ctx: ProblemContext, t: float) -> np.ndarray:
    return np.cos(math.pi * ctx.bulk.nodes[:, 0]) * math.exp(-t)


def reference_problem(K: int = 32, nx: int = 8, ny: int = 8, rho: float = 0.01, varsigma: float = 0.1,
                      T: float = 1.0) -> Problem:
    """Smooth full-coupling scenario used for the a priori and sweep studies.

    Adhesive at rest, compressed and sheared by a traction on the top side,
    heated in the bulk and on the contact side.
    """
    c = Constitutive()
    bulk, surf = build_rect_mesh(nx, ny, 1.0, 1.0, {"bottom": "contact", "left": "dirichlet"})
    ctx = ProblemContext.build(bulk, surf, c, exp_kernel(0.5, 0.3))
    xs = surf.positions
    init = InitialData(np.full(ctx.N, 1.0), np.zeros((ctx.N, 2)), np.full(ctx.S, 0.8),
                       0.9 - 0.2 * xs)
    loads = Loads(
        h=lambda x, t: 1.0 + 0.0 * x[:, 0],
        ell=lambda x, t: 0.5 + 0.0 * x[:, 0],
        f=lambda x, t: np.array([0.0, 0.0]),
        g=lambda x, t: np.stack([2.0 * t * (x[:, 1] > 0.999), -1.0 * t * (x[:, 1] > 0.999)], axis=1),
    )
    cfg = SolverConfig(rho=rho, varsigma=varsigma)
    return Problem(ctx, init, TimeGrid(T, K), loads, cfg, {})
