import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tvadhesion.constitutive import (Constitutive, ConstitutiveError, alpha_double_hat,
                                     alpha_double_hat_M, alpha_hat, bilinear_e, bilinear_v,
                                     coercivity_constant, hat_doublehat_constants, isotropic_tensor,
                                     potential_W, tensor_symmetry_defect, truncated_alpha_hat)
from tvadhesion.geometry import build_rect_mesh
from tvadhesion.monotone import SmoothFunction

from oracles import elem_strain_basis, mandel_iso, p1_element

C = Constitutive()


def _tags(c):
    return {t for t, _ in c.check_hypotheses()}


def test_default_set_satisfies_every_hypothesis():
    assert C.check_hypotheses() == []
    assert C.validate() is C


@pytest.mark.parametrize("kw,tag", [
    (dict(kappa0=0.0), "hyp-alpha"),
    (dict(mu=1.0), "hyp-alpha"),
    (dict(k=SmoothFunction.polynomial([-0.1, 0.0, 1.0])), "hyp-kappa"),
    (dict(k=SmoothFunction.polynomial([0.0, 0.0, 0.0, 1.0])), "hyp-kappa"),
    (dict(s_k=1.0), "hyp-kappa"),
    (dict(lam=SmoothFunction.polynomial([0.0, 0.0, 1.0])), "hyp-lambda"),
    (dict(delta=-1.0), "hyp-lambda"),
    (dict(gam=SmoothFunction.polynomial([0.0, 0.0, -1.0])), "hyp-W"),
    (dict(nu=-0.5), "hyp-W"),
    (dict(elastic=isotropic_tensor(1.0, -1.0)), "ass-K"),
])
def test_violations_name_their_hypothesis(kw, tag):
    c = Constitutive(**kw)
    assert tag in _tags(c)
    with pytest.raises(ConstitutiveError):
        c.validate()


def test_lambda_concavity_repaired_by_delta():
    c = Constitutive(lam=SmoothFunction.polynomial([0.0, 0.0, 1.0]), delta=2.0)
    assert "hyp-lambda" not in _tags(c)


def test_broken_tensor_symmetry_detected():
    E = isotropic_tensor(1.0, 1.0).copy()
    E[0, 1, 0, 0] += 0.3
    assert tensor_symmetry_defect(E) > 0.1
    assert "ass-K" in _tags(Constitutive(elastic=E))


def test_alpha_primitives():
    assert alpha_hat(C, 0.0) == 0.0
    assert alpha_hat(C, 1.0) == pytest.approx(4 / 3)
    assert alpha_double_hat(C, 1.0) == pytest.approx(7 / 12)
    with pytest.raises(ConstitutiveError):
        alpha_hat(C, -0.1)


def test_alpha_primitives_by_quadrature():
    c = Constitutive(alpha_fn=lambda t: 1 + t ** 2, alpha_prime_fn=lambda t: 2 * t)
    assert float(alpha_hat(c, 1.0)) == pytest.approx(4 / 3, abs=1e-12)
    assert float(alpha_double_hat(c, 1.0)) == pytest.approx(7 / 12, abs=1e-12)


def test_truncated_double_primitive():
    # linear continuation past M with slope alpha_hat(M)
    assert float(alpha_double_hat_M(C, 1.0, 3.0)) == pytest.approx(7 / 12 + 2 * 4 / 3)
    assert float(alpha_double_hat_M(C, math.inf, 2.0)) == pytest.approx(float(alpha_double_hat(C, 2.0)))


@given(r=st.floats(0, 30))
def test_growth_of_primitive(r):
    c = Constitutive(kappa0=0.5, kappa1=2.0, mu=2.5)
    g = r + r ** (c.mu + 1) / (c.mu + 1)
    a = float(alpha_hat(c, r))
    assert c.c0 * g * (1 - 1e-12) <= a <= c.c1 * g * (1 + 1e-12)


def test_primitives_monotone_and_convex():
    r = np.linspace(0, 20, 4001)
    a = alpha_hat(C, r)
    assert np.all(np.diff(a) > 0)
    d2 = np.diff(alpha_double_hat(C, r), 2)
    assert np.all(d2 >= -1e-12 * np.abs(alpha_double_hat(C, r)).max())


@given(r=st.floats(-5, 200), M=st.floats(1, 100))
def test_hat_doublehat_control(r, M):
    c = Constitutive(kappa0=0.5, kappa1=2.0, mu=2.5)
    C1, C2 = hat_doublehat_constants(c)
    lhs = float(truncated_alpha_hat(c, M, r))
    rhs = C1 * float(alpha_double_hat_M(c, M, max(r, 0.0))) + C2
    assert lhs <= rhs * (1 + 1e-12)


def test_potential_W_examples():
    c0 = Constitutive(gam=SmoothFunction.zero())
    assert float(potential_W(c0, 0.1, 0.5)) == 0.0
    assert float(potential_W(c0, 0.1, 1.2)) == pytest.approx(0.2)
    c2 = Constitutive(gam=SmoothFunction.polynomial([0.0, 0.0, 1.0]))
    assert float(potential_W(c2, 0.05, -0.1)) == pytest.approx(0.11)


@given(x=st.floats(-10, 10), s=st.floats(1e-3, 1))
def test_W_bounded_below(x, s):
    assert float(potential_W(C, s, x)) >= -C.C_W - 1e-12


def _dense_form(bulk, D, u, w):
    out = 0.0
    for tri in bulk.triangles:
        area, G = p1_element(bulk.nodes[tri])
        B = elem_strain_basis(G)
        dofs = np.ravel([[2 * a, 2 * a + 1] for a in tri])
        out += area * (B @ u.ravel()[dofs]) @ D @ (B @ w.ravel()[dofs])
    return out


def test_constant_strain_on_two_triangles():
    bulk, _ = build_rect_mesh(1, 1)
    lam, mu = 1.3, 0.7
    c = Constitutive(elastic=isotropic_tensor(lam, mu))
    u = bulk.nodes.copy()  # strain diag(1, 1)
    val = bilinear_e(c, bulk, u, u, strict=False)
    assert val == pytest.approx(_dense_form(bulk, mandel_iso(lam, mu), u, u), rel=1e-13)
    assert val == pytest.approx(4 * lam + 4 * mu, rel=1e-13)


def test_forms_zero_symmetric_and_checked(rng):
    bulk, _ = build_rect_mesh(3, 2)
    N = bulk.n_nodes
    u, w = rng.normal(size=(N, 2)), rng.normal(size=(N, 2))
    u[bulk.dirichlet_nodes] = 0
    w[bulk.dirichlet_nodes] = 0
    assert bilinear_e(C, bulk, np.zeros((N, 2)), w) == 0.0
    for form, D in ((bilinear_e, mandel_iso(1.0, 1.0)), (bilinear_v, mandel_iso(0.5, 0.5))):
        assert form(C, bulk, u, w) == pytest.approx(form(C, bulk, w, u), rel=1e-12)
        assert form(C, bulk, u, w) == pytest.approx(_dense_form(bulk, D, u, w), rel=1e-11)
    u[bulk.dirichlet_nodes[0]] = 1.0
    with pytest.raises(ConstitutiveError):
        bilinear_e(C, bulk, u, w)


def test_discrete_korn_constant_positive():
    bulk, _ = build_rect_mesh(4, 3)
    ce = coercivity_constant(C, bulk, "e")
    cv = coercivity_constant(C, bulk, "v")
    assert ce > 0 and cv > 0
    # both tensors are isotropic with (lambda, mu) scaled by 1/2
    assert cv == pytest.approx(0.5 * ce, rel=1e-10)


@given(seed=st.integers(0, 2 ** 31))
def test_ellipticity_constants(seed):
    xi = np.random.default_rng(seed).normal(size=3)
    for D, lo in ((C.D_elastic, C.eps0), (C.D_viscous, C.nu0)):
        assert xi @ D @ xi >= lo * (xi @ xi) * (1 - 1e-12)
