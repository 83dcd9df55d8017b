import math

import numpy as np
import pytest
from scipy import integrate

from burgers_galerkin.errors import ValidationError
from burgers_galerkin.model import build_model
from burgers_galerkin.nonlinearity import (
    CouplingTensor,
    apply_B_pairing,
    assemble_coupling,
    coupling_operator_norm,
    drift_eval,
    drift_jacobian_trace,
    validate_gamma,
)

PI = math.pi
SQ2 = math.sqrt(2)

MODELS = [
    ("dirichlet_laplacian", {}),
    ("neumann_hyperviscous", {"theta": 1.5}),
    ("elliptic_divform", {"a": "sine"}),
    ("regional_fractional", {"gamma": 1.5}),
]


def quad(f):
    return integrate.quad(f, 0, 1, epsabs=1e-12, epsrel=1e-10, limit=200)[0]


def test_dirichlet_examples():
    T = assemble_coupling(build_model("dirichlet_laplacian", 4))
    B = T.entries
    assert B[0, 0, 1] == pytest.approx(SQ2 * PI)
    assert B[1, 0, 0] == pytest.approx(-PI / SQ2)
    assert np.all(np.einsum("kkk->k", B) == 0)


def test_dirichlet_matches_unintegrated_quad_oracle():
    T = assemble_coupling(build_model("dirichlet_laplacian", 5))
    s = lambda k, x: SQ2 * math.sin(k * PI * x)  # noqa: E731
    ds = lambda k, x: SQ2 * k * PI * math.cos(k * PI * x)  # noqa: E731
    for k, l, m in [(1, 1, 2), (2, 1, 1), (2, 3, 5), (3, 5, 2), (1, 4, 4), (2, 2, 3)]:
        oracle = quad(lambda x: (ds(k, x) * s(l, x) + s(k, x) * ds(l, x)) * s(m, x))
        assert T.entries[k - 1, l - 1, m - 1] == pytest.approx(oracle, abs=1e-10)


def test_neumann_matches_quad_oracle_with_boundary_term():
    T = assemble_coupling(build_model("neumann_hyperviscous", 5, {"theta": 1.5}))
    c = lambda k, x: 1.0 if k == 0 else SQ2 * math.cos(k * PI * x)  # noqa: E731
    dc = lambda k, x: 0.0 if k == 0 else -SQ2 * k * PI * math.sin(k * PI * x)  # noqa: E731
    for k, l, m in [(0, 0, 0), (0, 1, 2), (1, 1, 1), (1, 2, 4), (3, 3, 0), (2, 4, 1)]:
        bulk = quad(lambda x: (dc(k, x) * c(l, x) + c(k, x) * dc(l, x)) * c(m, x))
        bnd = c(k, 1) * c(l, 1) * c(m, 1) - c(k, 0) * c(l, 0) * c(m, 0)
        assert T.entries[k, l, m] == pytest.approx(bulk - 2 / 3 * bnd, abs=1e-10)


@pytest.mark.parametrize("kind,params", MODELS)
def test_closed_form_matches_quadrature(kind, params):
    m = build_model(kind, 16, params)
    a = assemble_coupling(m, method="closed_form").entries
    b = assemble_coupling(m, method="quadrature").entries
    assert np.abs(a - b).max() <= 1e-8


@pytest.mark.parametrize("kind,params", MODELS)
def test_structural_identities(kind, params, rng):
    T = assemble_coupling(build_model(kind, 12, params))
    assert T.symmetry_error() <= 1e-10
    assert np.abs(T.circular_defect()).max() <= 1e-8
    assert T.null_form_error(rng, 1000) <= 1e-8


def test_circular_identity_up_to_32():
    T = assemble_coupling(build_model("neumann_hyperviscous", 32, {"theta": 1.2}))
    assert np.abs(T.circular_defect()).max() <= 1e-8
    T = assemble_coupling(build_model("dirichlet_laplacian", 32))
    assert np.abs(T.circular_defect()).max() <= 1e-12


def test_drift_examples():
    T = assemble_coupling(build_model("dirichlet_laplacian", 4))
    B = T.entries
    np.testing.assert_allclose(drift_eval(T, np.zeros(4), 3), -np.einsum("llk->k", B[:3, :3, :3]))
    np.testing.assert_allclose(drift_eval(T, np.array([1.0, 0.0]), 2), [0.0, 0.0], atol=1e-14)
    with pytest.raises(IndexError):
        drift_eval(T, np.zeros(5), 5)


def test_drift_matches_direct_sum(rng):
    T = assemble_coupling(build_model("elliptic_divform", 6, {"a": "sine"}))
    u = rng.standard_normal((7, 6))
    for N in (3, 6):
        B = T.entries[:N, :N, :N]
        direct = np.einsum("il,im,lmk->ik", u[:, :N], u[:, :N], B) - np.einsum("llk->k", B)
        np.testing.assert_allclose(drift_eval(T, u, N), direct, atol=1e-10)


@pytest.mark.parametrize("kind,params", MODELS)
def test_gaussian_divergence_free(kind, params, rng):
    M = 10
    T = assemble_coupling(build_model(kind, M, params))
    u = rng.standard_normal((200, M))
    for N in range(1, M + 1):
        G = drift_eval(T, u, N)
        div = drift_jacobian_trace(T, u, N) - np.einsum("ik,ik->i", u[:, :N], G)
        scale = 1 + np.abs(T.entries).max() * np.linalg.norm(u, axis=1) ** 3
        assert np.max(np.abs(div) / scale) <= 1e-8


def test_jacobian_trace_matches_finite_difference(rng):
    T = assemble_coupling(build_model("neumann_hyperviscous", 5, {"theta": 1.5}))
    u = rng.standard_normal(5)
    h = 1e-6
    fd = sum(
        (drift_eval(T, u + h * np.eye(5)[k])[k] - drift_eval(T, u - h * np.eye(5)[k])[k]) / (2 * h)
        for k in range(5)
    )
    assert drift_jacobian_trace(T, u) == pytest.approx(fd, rel=1e-6)


def test_pairing_examples(rng):
    T = assemble_coupling(build_model("dirichlet_laplacian", 4))
    e = np.eye(4)
    assert apply_B_pairing(T, np.outer(e[0], e[0]), e[1]) == pytest.approx(SQ2 * PI)
    assert apply_B_pairing(T, np.zeros((4, 4)), e[1]) == 0
    for k in range(4):
        assert apply_B_pairing(T, np.outer(e[k], e[k]), e[k]) == 0
    f = rng.standard_normal(4)
    assert apply_B_pairing(T, np.outer(f, f), f) == pytest.approx(0, abs=1e-10)
    phi1, phi2 = rng.standard_normal((2, 4, 4))
    lin = apply_B_pairing(T, 2 * phi1 + phi2, f)
    assert lin == pytest.approx(2 * apply_B_pairing(T, phi1, f) + apply_B_pairing(T, phi2, f))


def test_gamma_validation():
    with pytest.raises(ValidationError, match="symmetric"):
        validate_gamma(np.arange(8.0).reshape(2, 2, 2), 2)
    with pytest.raises(ValidationError):
        validate_gamma(None, 2)
    with pytest.raises(ValidationError):
        validate_gamma(np.ones((3, 3, 3)), 2)


def test_multicomponent_null_form(rng):
    d = 2
    G = rng.standard_normal((d, d, d))
    G = sum(G.transpose(p) for p in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6
    m = build_model("dirichlet_laplacian", 6, components=d)
    T = assemble_coupling(m, G)
    assert T.size == 12
    assert T.symmetry_error() <= 1e-12
    assert T.null_form_error(rng) <= 1e-10
    assert np.abs(T.circular_defect()).max() <= 1e-10
    # component block (j, j', i) equals Gamma[i, j, j'] times the scalar tensor
    b = assemble_coupling(build_model("dirichlet_laplacian", 6)).entries
    np.testing.assert_allclose(T.entries[0:6, 6:12, 6:12], G[1, 0, 1] * b)
    u = rng.standard_normal((5, 12))
    div = drift_jacobian_trace(T, u, 4) - np.einsum("ik,ik->i", u[:, T.active_indices(4)], drift_eval(T, u, 4))
    assert np.abs(div).max() <= 1e-8


def test_csv_roundtrip():
    T = assemble_coupling(build_model("dirichlet_laplacian", 5))
    text = T.to_csv()
    assert text.splitlines()[0] == "k,l,m,value"
    back = CouplingTensor.from_csv(text, 5)
    assert np.array_equal(back.entries, T.entries)
    # only O(M^2) nonzeros for the sine closed form
    assert len(text.splitlines()) - 1 <= 2 * 5 * 5


def test_operator_norm_domain_gram_matches_brute_force(rng):
    m = build_model("elliptic_divform", 4, {"a": "sine"})
    T = assemble_coupling(m)
    n = 4
    Gd = m.vdot_gram()
    GV = np.eye(n) + Gd
    best = 0.0
    for _ in range(4000):
        phi = rng.standard_normal((n, n))
        phi = phi + phi.T
        b = np.einsum("kl,klm->m", phi, T.entries)
        ratio = math.sqrt(b @ np.linalg.solve(Gd, b) / np.trace(phi.T @ GV @ phi))
        best = max(best, ratio)
    val = coupling_operator_norm(T)
    assert best <= val * (1 + 1e-9)
    assert best >= 0.5 * val


def test_b_boundedness_trend():
    ratios = [coupling_operator_norm(assemble_coupling(build_model("dirichlet_laplacian", M))) for M in (8, 16, 32)]
    assert max(ratios[i + 1] / ratios[i] for i in range(2)) < 1.2
