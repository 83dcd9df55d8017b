"""Polynomial cylinder functions of independent standard Gaussians.

A :class:`GaussianPolynomial` is a sparse multivariate polynomial in the
coordinates ``eta_0, ..., eta_{M-1}``.  Coefficients are either exact
``Fraction`` objects or doubles, selected by a module-level arithmetic mode.
On top of the ring operations the module provides the Gaussian calculus:
expectations, the Malliavin derivative ``D``, the Skorokhod integral
``delta`` (the adjoint of ``D``), the number operator ``N = delta D`` and
the Wiener chaos decomposition via Hermite polynomials.

Indices are 0-based throughout: ``variable(0, M)`` is the first coordinate.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from fractions import Fraction
from functools import lru_cache
from numbers import Integral, Rational
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import CapacityError, ValidationError

__all__ = [
    "GaussianPolynomial",
    "PolyVector",
    "set_arithmetic",
    "get_arithmetic",
    "arithmetic",
    "set_capacity",
    "constant",
    "variable",
    "zero",
    "expectation",
    "malliavin_derivative",
    "skorokhod",
    "number_operator",
    "hermite_1d",
    "to_hermite",
    "from_hermite",
    "chaos_decompose",
    "chaos_project",
    "apply_spectral_function",
    "random_polynomial",
    "random_polyvector",
]

_MODES = ("exact", "float")
_mode = "exact"
_capacity_bits = 1 << 16


def set_arithmetic(mode: str) -> None:
    """Select coefficient arithmetic, ``"exact"`` (Fraction) or ``"float"``."""
    global _mode
    if mode not in _MODES:
        raise ValidationError(f"arithmetic mode must be one of {_MODES}, got {mode!r}")
    _mode = mode


def get_arithmetic() -> str:
    return _mode


@contextlib.contextmanager
def arithmetic(mode: str) -> Iterator[None]:
    """Temporarily switch the arithmetic mode."""
    previous = _mode
    set_arithmetic(mode)
    try:
        yield
    finally:
        set_arithmetic(previous)


def set_capacity(bits: int) -> None:
    """Bound on numerator plus denominator bit length of exact coefficients."""
    global _capacity_bits
    _capacity_bits = int(bits)


def _coerce(c):
    if _mode == "exact":
        if isinstance(c, Fraction):
            q = c
        elif isinstance(c, Integral):
            q = Fraction(int(c))
        elif isinstance(c, Rational):
            q = Fraction(c.numerator, c.denominator)
        else:
            c = float(c)
            if not math.isfinite(c):
                raise CapacityError("non-finite coefficient in exact mode")
            q = Fraction(c)
        if q.numerator.bit_length() + q.denominator.bit_length() > _capacity_bits:
            raise CapacityError(
                f"exact coefficient exceeds {_capacity_bits} bits; use float arithmetic"
            )
        return q
    x = float(c)
    if not math.isfinite(x):
        raise CapacityError("coefficient overflowed to a non-finite double")
    return x


def _double_factorial_odd(n: int) -> int:
    """(n-1)!! for even n, i.e. E[eta^n]."""
    out = 1
    for j in range(n - 1, 0, -2):
        out *= j
    return out


class GaussianPolynomial:
    """Sparse polynomial in ``mode_count`` Gaussian coordinates.

    Parameters
    ----------
    mode_count : int
        Number of coordinates ``M``.
    terms : mapping, optional
        Exponent tuples of length ``M`` mapped to coefficients.  Zero
        coefficients are dropped and the remaining terms are stored in
        canonical (sorted) order, so equality is structural.
    """

    __slots__ = ("_m", "_terms", "_hash")

    def __init__(self, mode_count: int, terms: Mapping[Sequence[int], object] | None = None):
        m = int(mode_count)
        if m < 0:
            raise ValidationError("mode_count must be nonnegative")
        acc: dict[tuple[int, ...], object] = {}
        for exps, c in (terms or {}).items():
            key = tuple(int(e) for e in exps)
            if len(key) != m:
                raise ValidationError(f"exponent vector {key} has length != mode_count {m}")
            if any(e < 0 for e in key):
                raise ValidationError(f"negative exponent in {key}")
            c = _coerce(c)
            if key in acc:
                acc[key] = _coerce(acc[key] + c)
            else:
                acc[key] = c
        self._m = m
        self._terms = {k: acc[k] for k in sorted(acc) if acc[k] != 0}
        self._hash = None

    @classmethod
    def _raw(cls, m: int, acc: dict) -> "GaussianPolynomial":
        obj = cls.__new__(cls)
        obj._m = m
        obj._terms = {k: _coerce(acc[k]) for k in sorted(acc) if acc[k] != 0}
        obj._terms = {k: v for k, v in obj._terms.items() if v != 0}
        obj._hash = None
        return obj

    @property
    def mode_count(self) -> int:
        return self._m

    @property
    def terms(self) -> dict:
        """Copy of the term map."""
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    @property
    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((sum(k) for k in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient(self, exps: Sequence[int]):
        return self._terms.get(tuple(exps), 0)

    def _check(self, other: "GaussianPolynomial") -> None:
        if other._m != self._m:
            raise ValidationError(f"mode_count mismatch: {self._m} vs {other._m}")

    def _lift(self, other) -> "GaussianPolynomial":
        if isinstance(other, GaussianPolynomial):
            self._check(other)
            return other
        return constant(other, self._m)

    def __add__(self, other):
        other = self._lift(other)
        acc = dict(self._terms)
        for k, c in other._terms.items():
            acc[k] = acc[k] + c if k in acc else c
        return GaussianPolynomial._raw(self._m, acc)

    __radd__ = __add__

    def __neg__(self):
        return GaussianPolynomial._raw(self._m, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, GaussianPolynomial):
            s = _coerce(other)
            return GaussianPolynomial._raw(self._m, {k: c * s for k, c in self._terms.items()})
        self._check(other)
        acc: dict = {}
        for k1, c1 in self._terms.items():
            for k2, c2 in other._terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                p = c1 * c2
                acc[k] = acc[k] + p if k in acc else p
        return GaussianPolynomial._raw(self._m, acc)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValidationError("negative powers are not polynomials")
        out = constant(1, self._m)
        for _ in range(n):
            out = out * self
        return out

    def diff(self, k: int) -> "GaussianPolynomial":
        """Partial derivative with respect to coordinate ``k``."""
        acc: dict = {}
        for exps, c in self._terms.items():
            e = exps[k]
            if e:
                key = exps[:k] + (e - 1,) + exps[k + 1 :]
                acc[key] = c * e
        return GaussianPolynomial._raw(self._m, acc)

    def mul_var(self, k: int) -> "GaussianPolynomial":
        """Multiply by coordinate ``k``."""
        acc = {exps[:k] + (exps[k] + 1,) + exps[k + 1 :]: c for exps, c in self._terms.items()}
        return GaussianPolynomial._raw(self._m, acc)

    def extend(self, mode_count: int) -> "GaussianPolynomial":
        """Embed into a space with more coordinates."""
        if mode_count < self._m:
            raise ValidationError("cannot shrink mode_count")
        pad = (0,) * (mode_count - self._m)
        return GaussianPolynomial._raw(mode_count, {k + pad: c for k, c in self._terms.items()})

    def to_float(self) -> "GaussianPolynomial":
        with arithmetic("float"):
            return GaussianPolynomial._raw(self._m, dict(self._terms))

    def evaluate(self, u) -> np.ndarray:
        """Evaluate at points ``u`` of shape ``(..., M)``."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self._m:
            raise ValidationError(f"last axis of u must have length {self._m}")
        out = np.zeros(u.shape[:-1])
        for exps, c in self._terms.items():
            term = np.full(u.shape[:-1], float(c))
            for i, e in enumerate(exps):
                if e:
                    term = term * u[..., i] ** e
            out = out + term
        return out

    def allclose(self, other, atol: float = 1e-10) -> bool:
        diff = self - self._lift(other)
        return all(abs(float(c)) <= atol for _, c in diff.items())

    def __eq__(self, other):
        if isinstance(other, GaussianPolynomial):
            return self._m == other._m and self._terms == other._terms
        if isinstance(other, (int, float, Fraction)):
            return self == constant(other, self._m)
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._m, frozenset(self._terms.items())))
        return self._hash

    def __repr__(self) -> str:
        if not self._terms:
            return f"GaussianPolynomial(M={self._m}, 0)"
        parts = []
        for exps, c in self._terms.items():
            mono = "*".join(
                f"eta{i}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(exps) if e
            )
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return f"GaussianPolynomial(M={self._m}, " + " + ".join(parts) + ")"


def constant(c, mode_count: int) -> GaussianPolynomial:
    return GaussianPolynomial(mode_count, {(0,) * mode_count: c})


def zero(mode_count: int) -> GaussianPolynomial:
    return GaussianPolynomial(mode_count)


def variable(k: int, mode_count: int) -> GaussianPolynomial:
    """The coordinate ``eta_k``."""
    if not 0 <= k < mode_count:
        raise ValidationError(f"variable index {k} out of range for M={mode_count}")
    exps = [0] * mode_count
    exps[k] = 1
    return GaussianPolynomial(mode_count, {tuple(exps): 1})


class PolyVector:
    """An H-valued polynomial: one :class:`GaussianPolynomial` per direction."""

    __slots__ = ("_c",)

    def __init__(self, components: Iterable[GaussianPolynomial]):
        comps = tuple(components)
        if comps:
            m = comps[0].mode_count
            if any(c.mode_count != m for c in comps):
                raise ValidationError("PolyVector components must share mode_count")
        self._c = comps

    @classmethod
    def zeros(cls, length: int, mode_count: int) -> "PolyVector":
        return cls(zero(mode_count) for _ in range(length))

    @classmethod
    def basis(cls, k: int, length: int, mode_count: int, coeff=None) -> "PolyVector":
        """``coeff * e_k`` with ``coeff`` a polynomial (default 1)."""
        c = constant(1, mode_count) if coeff is None else coeff
        return cls(c if i == k else zero(mode_count) for i in range(length))

    @property
    def components(self) -> tuple:
        return self._c

    @property
    def mode_count(self) -> int:
        return self._c[0].mode_count if self._c else 0

    def __len__(self) -> int:
        return len(self._c)

    def __getitem__(self, k: int) -> GaussianPolynomial:
        return self._c[k]

    def __iter__(self):
        return iter(self._c)

    def __add__(self, other: "PolyVector") -> "PolyVector":
        return PolyVector(a + b for a, b in zip(self._c, other._c, strict=True))

    def __sub__(self, other: "PolyVector") -> "PolyVector":
        return PolyVector(a - b for a, b in zip(self._c, other._c, strict=True))

    def __neg__(self) -> "PolyVector":
        return PolyVector(-a for a in self._c)

    def mul(self, other) -> "PolyVector":
        """Multiply every component by a scalar or polynomial."""
        return PolyVector(a * other for a in self._c)

    __mul__ = mul
    __rmul__ = mul

    def dot(self, weights: Sequence) -> GaussianPolynomial:
        """``sum_k weights[k] * V_k``."""
        out = zero(self.mode_count)
        for w, c in zip(weights, self._c, strict=True):
            if w != 0:
                out = out + c * w
        return out

    def inner(self, other: "PolyVector", weights: Sequence | None = None) -> GaussianPolynomial:
        """Pointwise ``sum_k w_k V_k W_k`` (plain H inner product if ``weights`` is None)."""
        out = zero(self.mode_count)
        for k, (a, b) in enumerate(zip(self._c, other._c, strict=True)):
            w = 1 if weights is None else weights[k]
            if w != 0 and not a.is_zero() and not b.is_zero():
                out = out + a * b * w
        return out

    def apply_matrix(self, A) -> "PolyVector":
        """Components ``sum_l A[k, l] V_l``."""
        n = len(self._c)
        return PolyVector(self.dot([A[k][l] for l in range(n)]) for k in range(len(A)))

    def __eq__(self, other):
        if not isinstance(other, PolyVector):
            return NotImplemented
        return self._c == other._c

    def __hash__(self):
        return hash(self._c)

    def __repr__(self) -> str:
        return f"PolyVector({list(self._c)!r})"


def expectation(P: GaussianPolynomial):
    """Exact Gaussian expectation ``E[P(eta)]``, eta i.i.d. standard normal."""
    total = _coerce(0)
    for exps, c in P.items():
        if any(e % 2 for e in exps):
            continue
        mom = 1
        for e in exps:
            if e:
                mom *= _double_factorial_odd(e)
        total = total + c * mom
    return _coerce(total)


def malliavin_derivative(P: GaussianPolynomial) -> PolyVector:
    """Gradient ``(dP/deta_0, ..., dP/deta_{M-1})``."""
    return PolyVector(P.diff(k) for k in range(P.mode_count))


def skorokhod(V: PolyVector) -> GaussianPolynomial:
    """``delta(sum_k F_k e_k) = sum_k (F_k eta_k - dF_k/deta_k)``."""
    m = V.mode_count
    if len(V) > m:
        raise ValidationError("PolyVector longer than mode_count")
    out = zero(m)
    for k, F in enumerate(V):
        if not F.is_zero():
            out = out + F.mul_var(k) - F.diff(k)
    return out


def number_operator(P: GaussianPolynomial) -> GaussianPolynomial:
    """``N P = delta(D P)``."""
    return skorokhod(malliavin_derivative(P))


@lru_cache(maxsize=None)
def _hermite_exact(n: int) -> tuple:
    """Monomial coefficients of the monic Hermite polynomial He_n.

    Built by Gram-Schmidt of ``x^n`` against He_0..He_{n-1} in L2 of the
    standard Gaussian, using only exact moments.
    """
    if n == 0:
        return (Fraction(1),)
    coeffs = [Fraction(0)] * n + [Fraction(1)]
    for j in range(n):
        hj = _hermite_exact(j)
        num = sum(c * _gauss_moment(n + i) for i, c in enumerate(hj))
        den = sum(
            a * b * _gauss_moment(i + l) for i, a in enumerate(hj) for l, b in enumerate(hj)
        )
        r = num / den
        for i, c in enumerate(hj):
            coeffs[i] -= r * c
    return tuple(coeffs)


def _gauss_moment(n: int) -> int:
    return 0 if n % 2 else _double_factorial_odd(n)


def hermite_1d(n: int) -> tuple:
    """Monomial coefficients ``(c_0, ..., c_n)`` of the probabilists' He_n."""
    if n < 0:
        raise ValidationError("Hermite degree must be nonnegative")
    return _hermite_exact(n)


@lru_cache(maxsize=None)
def _monomial_in_hermite(n: int) -> tuple:
    """Coefficients ``a_j`` with ``x^n = sum_j a_j He_j(x)``, ``a_j = E[x^n He_j]/j!``."""
    out = []
    for j in range(n + 1):
        hj = _hermite_exact(j)
        num = sum(c * _gauss_moment(n + i) for i, c in enumerate(hj))
        out.append(num / math.factorial(j))
    return tuple(out)


def to_hermite(P: GaussianPolynomial) -> dict:
    """Coefficients of ``P`` in the tensor Hermite basis ``prod_i He_{n_i}(eta_i)``."""
    acc: dict = {}
    for exps, c in P.items():
        factors = [
            [(j, a) for j, a in enumerate(_monomial_in_hermite(e)) if a != 0] for e in exps
        ]
        for combo in itertools.product(*factors):
            key = tuple(j for j, _ in combo)
            coef = c
            for _, a in combo:
                if a != 1:
                    coef = coef * _coerce(a)
            acc[key] = acc[key] + coef if key in acc else coef
    return {k: _coerce(v) for k, v in sorted(acc.items()) if v != 0}


def from_hermite(mode_count: int, coeffs: Mapping[Sequence[int], object]) -> GaussianPolynomial:
    """Inverse of :func:`to_hermite`."""
    acc: dict = {}
    for hexps, c in coeffs.items():
        factors = [
            [(i, a) for i, a in enumerate(_hermite_exact(int(n))) if a != 0] for n in hexps
        ]
        for combo in itertools.product(*factors):
            key = tuple(i for i, _ in combo)
            coef = _coerce(c)
            for _, a in combo:
                if a != 1:
                    coef = coef * _coerce(a)
            acc[key] = acc[key] + coef if key in acc else coef
    return GaussianPolynomial._raw(mode_count, acc)


def chaos_decompose(P: GaussianPolynomial) -> dict[int, GaussianPolynomial]:
    """Split ``P`` into homogeneous Wiener chaos components keyed by degree."""
    by_deg: dict[int, dict] = {}
    for hexps, c in to_hermite(P).items():
        by_deg.setdefault(sum(hexps), {})[hexps] = c
    return {n: from_hermite(P.mode_count, h) for n, h in sorted(by_deg.items())}


def chaos_project(P: GaussianPolynomial, n: int) -> GaussianPolynomial:
    """Component of ``P`` in the ``n``-th homogeneous chaos."""
    if n < 0:
        raise ValidationError("chaos degree must be nonnegative")
    return chaos_decompose(P).get(n, zero(P.mode_count))


def apply_spectral_function(P: GaussianPolynomial, f: Callable[[int], object]) -> GaussianPolynomial:
    """Functional calculus of the number operator: ``sum_n f(n) Pi_n P``."""
    out = zero(P.mode_count)
    for n, Pn in chaos_decompose(P).items():
        v = f(n)
        if v != 0:
            out = out + Pn * v
    return out


def random_polynomial(
    rng: np.random.Generator,
    mode_count: int,
    max_degree: int,
    n_terms: int = 6,
    max_numerator: int = 5,
    max_denominator: int = 4,
) -> GaussianPolynomial:
    """Random polynomial with small rational coefficients (exact mode friendly)."""
    terms: dict = {}
    for _ in range(n_terms):
        deg = int(rng.integers(0, max_degree + 1))
        exps = [0] * mode_count
        for _ in range(deg):
            exps[int(rng.integers(mode_count))] += 1
        num = int(rng.integers(-max_numerator, max_numerator + 1))
        den = int(rng.integers(1, max_denominator + 1))
        key = tuple(exps)
        terms[key] = terms.get(key, 0) + Fraction(num, den)
    return GaussianPolynomial(mode_count, terms)


def random_polyvector(
    rng: np.random.Generator, mode_count: int, max_degree: int, n_terms: int = 4
) -> PolyVector:
    return PolyVector(
        random_polynomial(rng, mode_count, max_degree, n_terms) for _ in range(mode_count)
    )
