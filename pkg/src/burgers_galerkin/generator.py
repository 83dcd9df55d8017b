"""The generator ``L0 + G`` on polynomial cylinder functions.

``L0`` is the Ornstein-Uhlenbeck part

    L0 F = sum_k lambda_k (d_kk F - eta_k d_k F),

and ``G^rho`` is the renormalized transport part built from the conjugated
tensor ``B^rho[k, l, m] = <B(rho e_k, rho e_l), rho e_m>``:

    G F   = sum_m d_m F * sum_{k,l} (eta_k eta_l - delta_kl) B^rho[k, l, m],
    G+ F  = sum_{k,l} delta(e_l delta(e_k sum_m B^rho[k, l, m] d_m F)),
    G- F  = 2 sum_{k,l} delta(e_k sum_m B^rho[k, l, m] d_m d_l F).

Sobolev scales, dual norms and the Galerkin resolvent solve live on a
:class:`CylinderSpaceBasis` of tensor Hermite polynomials.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError
from .model import SpectralModel
from .nonlinearity import CouplingTensor, conjugate_tensor
from .wick import (
    GaussianPolynomial,
    _coerce,
    apply_spectral_function,
    arithmetic,
    expectation,
    from_hermite,
    to_hermite,
    zero,
)

__all__ = [
    "l0_apply",
    "rho_conjugated",
    "g_apply",
    "CylinderSpaceBasis",
    "h1_norm",
    "hminus1_norm",
    "ResolventResult",
    "resolvent_solve",
    "second_malliavin_sides",
    "l0_form_bounds",
    "g_bound_ratios",
]

SPLITS = ("full", "plus", "minus")
COND_LIMIT = 1e14


def _eigenvalues(model) -> list:
    if isinstance(model, SpectralModel):
        return list(model.eigenvalues_full)
    return list(np.asarray(model, dtype=object).ravel())


def _vdot_weights(model) -> np.ndarray:
    """Gram matrix of ``||.||_Vdot`` over all components, or ``diag(lambda)`` for raw eigenvalues."""
    if isinstance(model, SpectralModel):
        return np.kron(np.eye(model.components), model.vdot_gram())
    lam = np.asarray(model, dtype=object).ravel()
    W = np.zeros((lam.size, lam.size), dtype=object)
    W[:] = 0
    for k, v in enumerate(lam):
        W[k, k] = v
    return W


def l0_apply(F: GaussianPolynomial, model) -> GaussianPolynomial:
    """``sum_k lambda_k (d_kk F - eta_k d_k F)``.

    ``model`` is a :class:`SpectralModel` or a sequence of eigenvalues (which
    may be ``Fraction`` objects for exact checks).
    """
    lam = _eigenvalues(model)
    if F.mode_count > len(lam):
        raise ValidationError(f"F has {F.mode_count} modes but only {len(lam)} eigenvalues are available")
    out = zero(F.mode_count)
    for k in range(F.mode_count):
        dk = F.diff(k)
        if dk.is_zero():
            continue
        out = out + (dk.diff(k) - dk.mul_var(k)) * lam[k]
    return out


def rho_conjugated(tensor, rho=None) -> np.ndarray:
    """``B^rho[k,l,m] = sum R[a,k] R[b,l] R[c,m] B[a,b,c]`` with ``R = rho.matrix``."""
    B = tensor.entries if isinstance(tensor, CouplingTensor) else np.asarray(tensor)
    if rho is None:
        return B
    R = getattr(rho, "matrix", rho)
    R = np.asarray(R)
    if R.shape != (B.shape[0], B.shape[0]):
        raise ValidationError(f"rho matrix shape {R.shape} does not match tensor size {B.shape[0]}")
    return conjugate_tensor(B, R)


def _wick_pairs(Br: np.ndarray) -> list:
    """``Q_m = sum_{k,l} (eta_k eta_l - delta_kl) B^rho[k, l, m]`` for every ``m``."""
    n = Br.shape[0]
    out = []
    for m in range(n):
        terms: dict = {}
        const = 0
        for k in range(n):
            for l in range(n):
                c = Br[k, l, m]
                if c == 0:
                    continue
                e = [0] * n
                e[k] += 1
                e[l] += 1
                key = tuple(e)
                terms[key] = terms[key] + c if key in terms else c
                if k == l:
                    const = const - c
        if const != 0:
            terms[(0,) * n] = const
        out.append(GaussianPolynomial(n, terms))
    return out


def _delta_e(P: GaussianPolynomial, k: int) -> GaussianPolynomial:
    """``delta(P e_k) = eta_k P - d_k P``."""
    return P.mul_var(k) - P.diff(k)


def g_apply(F: GaussianPolynomial, tensor, rho=None, split: str = "full") -> GaussianPolynomial:
    """Apply ``G^rho`` (``split="full"``) or one of its parts ``G+``/``G-``.

    Parameters
    ----------
    F : GaussianPolynomial
        Input with ``F.mode_count <= n``; it is embedded into the ``n``
        coordinates of the tensor.
    tensor : CouplingTensor or array
        Coupling entries ``B[k, l, m]``; object arrays of ``Fraction`` keep
        the computation exact.
    rho : RhoOperator, array or None
        Regularizing operator; ``None`` is the identity.
    split : {"full", "plus", "minus"}
    """
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    Br = rho_conjugated(tensor, rho)
    n = Br.shape[0]
    if F.mode_count > n:
        raise ValidationError(f"F has {F.mode_count} modes but the tensor has size {n}")
    if F.mode_count < n:
        F = F.extend(n)
    dF = [F.diff(m) for m in range(n)]
    out = zero(n)
    if split == "full":
        for m, Q in enumerate(_wick_pairs(Br)):
            if not dF[m].is_zero() and not Q.is_zero():
                out = out + dF[m] * Q
        return out
    if split == "plus":
        for k in range(n):
            for l in range(n):
                inner = zero(n)
                for m in range(n):
                    c = Br[k, l, m]
                    if c != 0 and not dF[m].is_zero():
                        inner = inner + dF[m] * c
                if not inner.is_zero():
                    out = out + _delta_e(_delta_e(inner, k), l)
        return out
    ddF = [[dF[m].diff(l) for l in range(n)] for m in range(n)]
    for k in range(n):
        for l in range(n):
            inner = zero(n)
            for m in range(n):
                c = Br[k, l, m]
                if c != 0 and not ddF[m][l].is_zero():
                    inner = inner + ddF[m][l] * c
            if not inner.is_zero():
                out = out + _delta_e(inner, k)
    return out * 2


# --- norms -----------------------------------------------------------------------


def _energy(P: GaussianPolynomial, Q: GaussianPolynomial, W) -> object:
    """``E[sum_{k,l} W[k,l] d_k P d_l Q]``."""
    n = P.mode_count
    dP = [P.diff(k) for k in range(n)]
    dQ = [Q.diff(k) for k in range(n)]
    total = _coerce(0)
    for k in range(n):
        if dP[k].is_zero():
            continue
        for l in range(n):
            w = W[k][l]
            if w != 0 and not dQ[l].is_zero():
                total = total + expectation(dP[k] * dQ[l]) * _coerce(w)
    return total


def h1_norm(
    F: GaussianPolynomial,
    alpha: int = 0,
    model=None,
    homogeneous: bool = False,
    squared: bool = False,
):
    """``||F||_{H^1_alpha}`` with ``||F||^2 = E[((1+N)^a F)^2] + E[|D (1+N)^a F|^2_Vdot]``.

    ``model`` supplies the ``Vdot`` Gram matrix; a sequence of eigenvalues
    means ``diag(lambda)``.  ``homogeneous`` drops the ``L^2`` term.  With
    ``squared`` the exact squared value is returned (a ``Fraction`` in exact
    mode); otherwise a float.
    """
    if alpha not in (0, 1):
        raise ValidationError("alpha must be 0 or 1")
    if model is None:
        raise ValidationError("h1_norm needs a model or eigenvalues")
    W = _vdot_weights(model)
    if F.mode_count > W.shape[0]:
        raise ValidationError("F has more modes than the model")
    G = F if alpha == 0 else apply_spectral_function(F, lambda n: 1 + n)
    val = _energy(G, G, W)
    if not homogeneous:
        val = val + expectation(G * G)
    return val if squared else math.sqrt(float(val))


def second_malliavin_sides(F: GaussianPolynomial, model) -> tuple:
    """Both sides of ``E[|D^2 F|^2_{Vdot (x) H}] = |1_{N>=1} (N-1)^{1/2} F|^2_{Hdot^1_0}``.

    The left side contracts ``d_k d_l F`` with the ``Vdot`` Gram on the first
    slot.  The right side is evaluated in the polarized form
    ``E[<DF, W D h(N) F>]`` with ``h(n) = (n - 1) 1_{n >= 1}``, which equals
    the squared norm because ``delta W D`` commutes with ``N``; this keeps it
    rational.
    """
    W = _vdot_weights(model)
    n = F.mode_count
    lhs = _coerce(0)
    for j in range(n):
        Fj = F.diff(j)
        if not Fj.is_zero():
            lhs = lhs + _energy(Fj, Fj, W)
    hF = apply_spectral_function(F, lambda m: m - 1 if m >= 1 else 0)
    rhs = _energy(F, hF, W)
    return lhs, rhs


# --- truncated cylinder space ----------------------------------------------------


def _multi_indices(M: int, d: int) -> list:
    out = []
    for deg in range(d + 1):
        level = [a for a in itertools.product(range(deg + 1), repeat=M) if sum(a) == deg]
        out.extend(sorted(level, reverse=True))
    return out


def _mfact(a) -> int:
    return math.prod(math.factorial(e) for e in a)


@dataclass
class CylinderSpaceBasis:
    """Tensor Hermite polynomials ``H_a = prod_i He_{a_i}(eta_i)`` with ``|a| <= d``.

    Parameters
    ----------
    model : SpectralModel or sequence
        Supplies the eigenvalues ``lambda`` of ``A`` (for the ``L0`` form) and
        the ``Vdot`` Gram (for the ``H^1_0`` norm).  A plain sequence of
        eigenvalues uses ``diag(lambda)`` for both.
    mode_count : int
        Number of coordinates ``M`` (at most the model's mode count).
    max_degree : int
        Maximal total degree ``d``.
    """

    model: object
    mode_count: int
    max_degree: int
    indices: list = field(init=False)
    index_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        lam = _eigenvalues(self.model)
        if not 1 <= self.mode_count <= len(lam):
            raise ValidationError(f"mode_count must lie in [1, {len(lam)}]")
        if self.max_degree < 0:
            raise ValidationError("max_degree must be nonnegative")
        self.indices = _multi_indices(self.mode_count, self.max_degree)
        self.index_of = {a: i for i, a in enumerate(self.indices)}
        self._lam = np.array([float(v) for v in lam[: self.mode_count]])
        W = _vdot_weights(self.model)[: self.mode_count, : self.mode_count]
        self._W = np.array(W, dtype=float)
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([sum(a) for a in self.indices])

    def polynomial(self, i: int) -> GaussianPolynomial:
        return from_hermite(self.mode_count, {self.indices[i]: 1})

    @property
    def polynomials(self) -> list:
        return [self.polynomial(i) for i in range(len(self))]

    def combine(self, coeffs) -> GaussianPolynomial:
        """``sum_i c_i H_i``."""
        return from_hermite(self.mode_count, {a: c for a, c in zip(self.indices, coeffs) if c != 0})

    def coefficients(self, F: GaussianPolynomial) -> np.ndarray:
        """Hermite coefficients of ``F`` in the basis; raises if ``F`` is outside the truncation."""
        if F.mode_count > self.mode_count:
            extra = [a for a, c in to_hermite(F).items() if any(a[self.mode_count :])]
            if extra:
                raise ValidationError("F involves coordinates outside the truncation")
        c = np.zeros(len(self))
        for a, v in to_hermite(F).items():
            key = tuple(a[: self.mode_count]) + (0,) * (self.mode_count - len(a))
            if key not in self.index_of:
                raise ValidationError(f"F has a chaos component {key} outside the truncation")
            c[self.index_of[key]] = float(v)
        return c

    def pairing(self, F: GaussianPolynomial) -> np.ndarray:
        """``b_i = E[F H_i]``."""
        return self.coefficients(F) * self.l2_diag

    @property
    def l2_diag(self) -> np.ndarray:
        return np.array([float(_mfact(a)) for a in self.indices])

    @property
    def l2_gram(self) -> np.ndarray:
        return np.diag(self.l2_diag)

    @property
    def form_gram(self) -> np.ndarray:
        """``E[<A D H_i, D H_j>]`` with ``A = diag(lambda)``; diagonal."""
        if "form" not in self._cache:
            d = [sum(self._lam[k] * a[k] for k in range(self.mode_count)) * _mfact(a) for a in self.indices]
            self._cache["form"] = np.diag(np.array(d, float))
        return self._cache["form"]

    @property
    def hdot_gram(self) -> np.ndarray:
        """``E[<D H_i, D H_j>_Vdot]`` from ``E[d_k H_a d_l H_b] = a_k b_l (a - e_k)! 1{a - e_k = b - e_l}``."""
        if "hdot" not in self._cache:
            n = len(self)
            G = np.zeros((n, n))
            M = self.mode_count
            for i, a in enumerate(self.indices):
                for k in range(M):
                    if a[k] == 0:
                        continue
                    g = list(a)
                    g[k] -= 1
                    gf = _mfact(g)
                    for l in range(M):
                        w = self._W[k, l]
                        if w == 0:
                            continue
                        b = list(g)
                        b[l] += 1
                        j = self.index_of.get(tuple(b))
                        if j is not None:
                            G[i, j] += w * a[k] * b[l] * gf
            self._cache["hdot"] = G
        return self._cache["hdot"]

    @property
    def h1_gram(self) -> np.ndarray:
        return self.l2_gram + self.hdot_gram

    def dual_norm(self, b) -> float:
        """``sqrt(b^T G^{-1} b)`` with ``G`` the ``H^1_0`` Gram."""
        G = self.h1_gram
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise NumericalError(f"H^1_0 Gram matrix is singular (condition number {cond:.3e})")
        b = np.asarray(b, float)
        return math.sqrt(max(float(b @ linalg.solve(G, b, assume_a="pos")), 0.0))

    def g_matrix(self, tensor, rho=None, chaos_cutoff: int | None = None) -> np.ndarray:
        """``Gm[i, j] = E[(G^N H_j) H_i]`` with the chaos cutoff ``1_{N <= Nc} G 1_{N <= Nc}``.

        Components of ``G H_j`` outside the truncation are dropped, which is the
        orthogonal projection onto the basis.
        """
        Nc = self.max_degree if chaos_cutoff is None else int(chaos_cutoff)
        Br = np.asarray(rho_conjugated(tensor, rho), float)
        n_t = Br.shape[0]
        if n_t < self.mode_count:
            raise ValidationError("tensor has fewer modes than the basis")
        deg = self.degrees
        n = len(self)
        Gm = np.zeros((n, n))
        M = self.mode_count
        with arithmetic("float"):
            for j, a in enumerate(self.indices):
                if deg[j] > Nc:
                    continue
                P = g_apply(self.polynomial(j), Br)
                for key, c in to_hermite(P).items():
                    if sum(key) > Nc or any(key[M:]):
                        continue
                    i = self.index_of.get(tuple(key[:M]))
                    if i is not None:
                        Gm[i, j] = float(c) * _mfact(key)
        return Gm


def hminus1_norm(F: GaussianPolynomial, basis: CylinderSpaceBasis) -> float:
    """Dual norm of ``F`` relative to ``H^1_0`` on the truncation: ``sqrt(b^T G^{-1} b)``."""
    return basis.dual_norm(basis.pairing(F))


def l0_form_bounds(basis: CylinderSpaceBasis) -> tuple:
    """Range of ``<(1 - L0) F, F> / ||F||^2_{H^1_0}`` over the truncation."""
    K = basis.l2_gram + basis.form_gram
    ev = linalg.eigh(K, basis.h1_gram, eigvals_only=True)
    return float(ev.min()), float(ev.max())


def g_bound_ratios(
    basis: CylinderSpaceBasis, tensor, rng: np.random.Generator, n_samples: int = 100, rho=None
) -> np.ndarray:
    """``||G F||_{H^-1_0} / ||F||_{H^1_1}`` for random ``F`` of degree below ``max_degree``."""
    Gm = basis.g_matrix(tensor, rho, chaos_cutoff=basis.max_degree)
    deg = basis.degrees
    mask = deg < basis.max_degree
    H1 = basis.h1_gram
    out = []
    for _ in range(n_samples):
        c = np.where(mask, rng.standard_normal(len(basis)), 0.0)
        c1 = (1.0 + deg) * c
        out.append(basis.dual_norm(Gm @ c) / math.sqrt(c1 @ H1 @ c1))
    return np.array(out)


# --- resolvent --------------------------------------------------------------------


@dataclass
class ResolventResult:
    """Solution of ``(1 - L0 - G^N) F = F#`` on a truncation."""

    F: GaussianPolynomial
    coefficients: np.ndarray
    chaos_cutoff: int
    coercivity_ratio: np.ndarray
    coercivity_min: float
    coercivity_max: float
    residual: float
    h1_norm: float
    rhs_hminus1_norm: float
    condition_number: float
    basis_size: int

    def to_dict(self) -> dict:
        return {
            "chaos_cutoff": self.chaos_cutoff,
            "basis_size": self.basis_size,
            "coercivity_ratio_min_basis": float(self.coercivity_ratio.min()),
            "coercivity_ratio_max_basis": float(self.coercivity_ratio.max()),
            "coercivity_min": self.coercivity_min,
            "coercivity_max": self.coercivity_max,
            "residual_hminus1": self.residual,
            "solution_h1_norm": self.h1_norm,
            "rhs_hminus1_norm": self.rhs_hminus1_norm,
            "condition_number": self.condition_number,
            "coefficients": [float(c) for c in self.coefficients],
        }


def resolvent_solve(
    F_sharp: GaussianPolynomial,
    basis: CylinderSpaceBasis,
    tensor,
    chaos_cutoff: int | None = None,
    rho=None,
) -> ResolventResult:
    """Galerkin solve of the resolvent equation with the chaos-truncated ``G^N``.

    Assembles ``K(F, G) = E[FG] + E[<A DF, DG>] - E[(G^N F) G]`` on the basis
    and solves ``K c = b`` with ``b_i = E[F# H_i]``.  The coercivity ratio
    ``K(F, F) / ||F||^2_{H^1_0}`` is reported for every basis function and as
    the range of the generalized eigenvalues of the symmetric part.
    """
    Nc = basis.max_degree if chaos_cutoff is None else int(chaos_cutoff)
    if not 0 <= Nc <= basis.max_degree:
        raise ValidationError(f"chaos cutoff must lie in [0, {basis.max_degree}]")
    b = basis.pairing(F_sharp)
    Gm = basis.g_matrix(tensor, rho, Nc)
    K = basis.l2_gram + basis.form_gram - Gm
    H1 = basis.h1_gram
    cond = float(np.linalg.cond(K))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(f"resolvent system is not invertible (condition number {cond:.3e})")
    c = linalg.solve(K, b)
    ratio = np.diag(K) / np.diag(H1)
    ev = linalg.eigh(0.5 * (K + K.T), H1, eigvals_only=True)
    r = K @ c - b
    return ResolventResult(
        F=basis.combine(c),
        coefficients=c,
        chaos_cutoff=Nc,
        coercivity_ratio=ratio,
        coercivity_min=float(ev.min()),
        coercivity_max=float(ev.max()),
        residual=basis.dual_norm(r),
        h1_norm=math.sqrt(float(c @ H1 @ c)),
        rhs_hminus1_norm=basis.dual_norm(b),
        condition_number=cond,
        basis_size=len(basis),
    )
