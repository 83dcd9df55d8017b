from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import hermite_e

from burgers_galerkin import wick
from burgers_galerkin.errors import CapacityError, ValidationError
from burgers_galerkin.wick import (
    GaussianPolynomial,
    PolyVector,
    apply_spectral_function,
    chaos_decompose,
    chaos_project,
    constant,
    expectation,
    malliavin_derivative,
    number_operator,
    random_polynomial,
    random_polyvector,
    skorokhod,
    variable,
)

from conftest import gauss_hermite_expectation


def eta(k, m=3):
    return variable(k, m)


# --- construction and ring structure -------------------------------------------


def test_zero_coefficients_dropped():
    P = GaussianPolynomial(2, {(1, 0): 1, (0, 1): 0})
    assert len(P) == 1
    assert (eta(0, 2) - eta(0, 2)).is_zero()


def test_duplicate_keys_merge_and_canonical_equality():
    a = GaussianPolynomial(2, {(1, 0): 1, (0, 1): 2})
    b = GaussianPolynomial(2, {(0, 1): 2, (1, 0): 1})
    assert a == b and hash(a) == hash(b)


def test_mode_count_mismatch_rejected():
    with pytest.raises(ValidationError):
        GaussianPolynomial(2, {(1, 0, 0): 1})
    with pytest.raises(ValidationError):
        eta(0, 2) + eta(0, 3)


def test_degree():
    assert (eta(0) * eta(1) ** 2 + 1).degree == 3
    assert wick.zero(3).degree == -1


poly_strategy = st.builds(
    lambda seed, deg: random_polynomial(np.random.default_rng(seed), 3, deg, n_terms=4),
    st.integers(0, 2**32 - 1),
    st.integers(0, 3),
)


@settings(max_examples=40, deadline=None)
@given(poly_strategy, poly_strategy, poly_strategy)
def test_ring_axioms(a, b, c):
    assert a + b == b + a
    assert a * b == b * a
    assert (a + b) + c == a + (b + c)
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c


@settings(max_examples=30, deadline=None)
@given(poly_strategy, st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_evaluate_is_ring_homomorphism(a, u):
    b = a * a + 3
    assert np.isclose(b.evaluate(u), a.evaluate(u) ** 2 + 3, rtol=1e-10, atol=1e-10)


def test_evaluate_vectorized():
    P = eta(0, 2) * eta(1, 2) + 2
    u = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(P.evaluate(u), [4.0, -1.0])


def test_float_mode_coefficients():
    with wick.arithmetic("float"):
        P = GaussianPolynomial(1, {(2,): Fraction(1, 3)})
        assert isinstance(P.coefficient((2,)), float)
        assert isinstance(expectation(P), float)


def test_capacity_error_exact():
    wick.set_capacity(64)
    try:
        with pytest.raises(CapacityError):
            constant(Fraction(3, 7), 1) ** 40
    finally:
        wick.set_capacity(1 << 16)


def test_capacity_error_float_overflow():
    with wick.arithmetic("float"):
        with pytest.raises(CapacityError):
            constant(1e200, 1) * 1e200


def test_unknown_mode():
    with pytest.raises(ValidationError):
        wick.set_arithmetic("quad")


# --- expectation --------------------------------------------------------------


def test_expectation_examples():
    e1, e2 = eta(0, 2), eta(1, 2)
    assert expectation(e1) == 0
    assert expectation(e1**4) == 3
    assert expectation(e1**2 * e2**2 - e1 * e2) == 1


def test_expectation_is_exact_fraction():
    val = expectation(constant(Fraction(1, 3), 2) * eta(0, 2) ** 6)
    assert val == Fraction(15, 3) and isinstance(val, Fraction)


def test_expectation_matches_gauss_hermite(rng):
    for _ in range(10):
        P = random_polynomial(rng, 2, 5, n_terms=6)
        assert float(expectation(P)) == pytest.approx(gauss_hermite_expectation(P), abs=1e-9)


# --- Malliavin derivative and Skorokhod integral ------------------------------


def test_malliavin_examples():
    e1, e2 = eta(0), eta(1)
    assert malliavin_derivative(e1 * e2) == PolyVector([e2, e1, wick.zero(3)])
    assert malliavin_derivative(e1**2 - 1) == PolyVector([2 * e1, wick.zero(3), wick.zero(3)])
    assert all(c.is_zero() for c in malliavin_derivative(constant(5, 3)))


def test_malliavin_is_derivation(rng):
    for _ in range(20):
        P, Q = random_polynomial(rng, 3, 3), random_polynomial(rng, 3, 3)
        lhs = malliavin_derivative(P * Q)
        rhs = malliavin_derivative(Q).mul(P) + malliavin_derivative(P).mul(Q)
        assert lhs == rhs


def test_skorokhod_examples():
    m = 3
    one = constant(1, m)
    z = wick.zero(m)
    assert skorokhod(PolyVector([one, z, z])) == eta(0)
    # delta(e_1 delta(e_2)) = eta_1 eta_2 and delta(e_1 delta(e_1)) = eta_1^2 - 1
    assert skorokhod(PolyVector([eta(1), z, z])) == eta(0) * eta(1)
    assert skorokhod(PolyVector([eta(0), z, z])) == eta(0) ** 2 - 1


def test_skorokhod_adjoint_exact(rng):
    for _ in range(60):
        m = int(rng.integers(1, 7))
        V = random_polyvector(rng, m, 4, n_terms=3)
        G = random_polynomial(rng, m, 4)
        lhs = expectation(skorokhod(V) * G)
        rhs = expectation(V.inner(malliavin_derivative(G)))
        assert lhs == rhs


def test_skorokhod_adjoint_gauss_hermite(rng):
    V = random_polyvector(rng, 2, 3, n_terms=3)
    G = random_polynomial(rng, 2, 3)
    rhs = gauss_hermite_expectation(V.inner(malliavin_derivative(G)))
    assert float(expectation(skorokhod(V) * G)) == pytest.approx(rhs, abs=1e-9)


def test_multiplication_formula(rng):
    # F eta_k = delta(F e_k) + dF/deta_k
    for _ in range(40):
        m = int(rng.integers(1, 6))
        F = random_polynomial(rng, m, 5)
        for k in range(m):
            lhs = F.mul_var(k)
            rhs = skorokhod(PolyVector.basis(k, m, m, F)) + F.diff(k)
            assert lhs == rhs


def test_generalized_multiplication_formula(rng):
    # F delta(phi) = delta(F phi) + <DF, phi>
    for _ in range(30):
        m = int(rng.integers(1, 5))
        F = random_polynomial(rng, m, 3)
        phi = random_polyvector(rng, m, 3, n_terms=2)
        lhs = F * skorokhod(phi)
        rhs = skorokhod(phi.mul(F)) + malliavin_derivative(F).inner(phi)
        assert lhs == rhs


# --- number operator and chaos -------------------------------------------------


def test_number_operator_examples():
    e1 = eta(0)
    assert number_operator(e1) == e1
    assert number_operator(e1**2 - 1) == 2 * (e1**2 - 1)
    assert number_operator(constant(1, 3)).is_zero()


def test_hermite_matches_numpy():
    for n in range(9):
        ours = [float(c) for c in wick.hermite_1d(n)]
        ref = hermite_e.herme2poly([0] * n + [1])
        np.testing.assert_allclose(ours, ref, atol=0)


def test_number_operator_eigen_on_hermite_products():
    for exps in [(1, 0, 2), (3, 1, 0), (2, 2, 0), (0, 0, 4)]:
        H = wick.from_hermite(3, {exps: 1})
        assert number_operator(H) == H * sum(exps)


def test_chaos_examples():
    e1, e2 = eta(0), eta(1)
    assert chaos_project(e1**2, 0) == constant(1, 3)
    assert chaos_project(e1**2, 2) == e1**2 - 1
    assert chaos_project(e1 * e2, 1).is_zero()


def test_chaos_sum_and_orthogonality(rng):
    for _ in range(25):
        P = random_polynomial(rng, 3, 4)
        Q = random_polynomial(rng, 3, 4)
        parts_p = chaos_decompose(P)
        parts_q = chaos_decompose(Q)
        assert sum(parts_p.values(), wick.zero(3)) == P
        for n, Pn in parts_p.items():
            assert number_operator(Pn) == Pn * n
            for m_, Qm in parts_q.items():
                if m_ != n:
                    assert expectation(Pn * Qm) == 0


def test_hermite_roundtrip(rng):
    for _ in range(20):
        P = random_polynomial(rng, 3, 5)
        assert wick.from_hermite(3, wick.to_hermite(P)) == P


def test_spectral_function_examples(rng):
    e1 = eta(0)
    P = random_polynomial(rng, 3, 4)
    assert apply_spectral_function(P, lambda n: 1) == P
    inv = apply_spectral_function(P, lambda n: Fraction(1, 1 + n))
    assert apply_spectral_function(inv, lambda n: 1 + n) == P
    assert apply_spectral_function(P, lambda n: n) == number_operator(P)
    with wick.arithmetic("float"):
        out = apply_spectral_function(
            (e1**2 - 1).to_float(), lambda n: np.sqrt(n - 1) if n >= 1 else 0.0
        )
        assert out.allclose(e1**2 - 1, atol=1e-14)


def test_n_calculus(rng):
    # N d_k = d_k (N - 1) 1_{N>=1} and N delta = delta (N + 1)
    shift_down = lambda n: n - 1 if n >= 1 else 0  # noqa: E731
    for _ in range(40):
        m = int(rng.integers(1, 6))
        F = random_polynomial(rng, m, 4)
        for k in range(m):
            lhs = number_operator(F.diff(k))
            rhs = apply_spectral_function(F, shift_down).diff(k)
            assert lhs == rhs
        V = random_polyvector(rng, m, 3, n_terms=3)
        lhs = number_operator(skorokhod(V))
        rhs = skorokhod(PolyVector(apply_spectral_function(c, lambda n: n + 1) for c in V))
        assert lhs == rhs


def test_polyvector_helpers():
    m = 2
    V = PolyVector([eta(0, m), eta(1, m)])
    assert V.dot([2, 3]) == 2 * eta(0, m) + 3 * eta(1, m)
    W = V.apply_matrix([[0, 1], [1, 0]])
    assert W == PolyVector([eta(1, m), eta(0, m)])
    assert V.inner(V, [1, 2]) == eta(0, m) ** 2 + 2 * eta(1, m) ** 2
    with pytest.raises(ValidationError):
        PolyVector([eta(0, 2), eta(0, 3)])
