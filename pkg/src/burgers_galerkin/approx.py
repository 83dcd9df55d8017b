"""Regularizing operators ``rho_N`` and their approximation rates.

``moving_average`` is the one-sided window average

    rho_N h(x) = N int_{I_x} h(y) dy,   I_x = (x, x + 1/N) if x + 2/N < 1 else (x - 1/N, x),

materialized as a matrix ``R[a, k] = <rho_N e_k, e_a>`` in the model basis.
``spectral_projection`` keeps the first ``N`` coefficients.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from .errors import ValidationError
from .model import SpectralModel, build_model, operator_norm_estimate, sobolev_gram
from .nonlinearity import CouplingTensor
from .quadrature import composite_gauss_legendre

__all__ = [
    "RhoOperator",
    "build_rho",
    "moving_average_sine_matrix",
    "apply_function",
    "RateFit",
    "rate_fit",
    "rho_h_to_v_norm",
    "uniform_bounds",
    "b_approx_error",
    "tensorization_check",
    "fit_slope",
]

RHO_KINDS = ("moving_average", "spectral_projection")


def _window_split(N: int) -> float:
    return 1.0 - 2.0 / N


def _antiderivative(kind: str, k: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Antiderivatives ``P_k(y)`` of the trigonometric basis functions."""
    k = np.asarray(k, float)
    arg = np.multiply.outer(y, k * np.pi)
    safe = np.where(k == 0, 1.0, k) * np.pi
    if kind == "sine":
        return -math.sqrt(2.0) * np.cos(arg) / safe
    out = math.sqrt(2.0) * np.sin(arg) / safe
    return np.where(k == 0, y[:, None], out)


def _rho_values(kind: str, k: np.ndarray, N: int, x: np.ndarray) -> np.ndarray:
    """Exact values ``(rho_N b_k)(x)`` for sine or cosine basis functions ``b_k``."""
    left = (x + 2.0 / N) < 1.0
    lo = np.where(left, x, x - 1.0 / N)
    return N * (_antiderivative(kind, k, lo + 1.0 / N) - _antiderivative(kind, k, lo))


def _rho_grid(N: int, K: int):
    return composite_gauss_legendre([0.0, _window_split(N), 1.0], max(16, 2 * K))


def moving_average_sine_matrix(N: int, K: int, K_out: int | None = None) -> np.ndarray:
    """``R[a, k] = <rho_N s_k, s_a>`` for sine modes ``k = 1..K``, ``a = 1..K_out``."""
    K_out = K if K_out is None else K_out
    x, w = _rho_grid(N, max(K, K_out))
    vals = _rho_values("sine", np.arange(1, K + 1), N, x)
    S = math.sqrt(2.0) * np.sin(np.outer(x, np.arange(1, K_out + 1) * np.pi))
    return S.T @ (w[:, None] * vals)


def _moving_average_cosine_matrix(N: int, M: int) -> np.ndarray:
    x, w = _rho_grid(N, M)
    k = np.arange(M)
    vals = _rho_values("cosine", k, N, x)
    C = np.where(k == 0, 1.0, math.sqrt(2.0)) * np.cos(np.outer(x, k * np.pi))
    return C.T @ (w[:, None] * vals)


@dataclass(frozen=True)
class RhoOperator:
    """A regularizing operator with its matrix in the model basis."""

    kind: str
    N: int
    matrix: np.ndarray
    model: SpectralModel = field(repr=False)
    nonstandard: bool = False

    def apply(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, float)

    def tensorize(self, phi) -> np.ndarray:
        """``rho^{(x)2} phi`` in matrix form, ``R phi R^T``."""
        R = self.matrix
        return R @ np.asarray(phi, float) @ R.T


def build_rho(model: SpectralModel, kind: str, N: int) -> RhoOperator:
    """Build ``rho_N`` on ``model``.

    ``moving_average`` requires ``N >= 2``; on the Neumann model it is allowed
    but flagged as nonstandard with a warning.  ``spectral_projection``
    requires ``N <= M``.
    """
    if kind not in RHO_KINDS:
        raise ValidationError(f"unknown rho kind {kind!r}")
    N = int(N)
    M = model.mode_count
    if kind == "spectral_projection":
        if not 1 <= N <= M:
            raise ValidationError(f"spectral projection needs 1 <= N <= M={M}")
        R = np.diag((np.arange(M) < N).astype(float))
        return RhoOperator(kind, N, R, model)
    if N < 2:
        raise ValidationError("moving average needs N >= 2")
    if model.kind == "neumann_hyperviscous":
        warnings.warn(
            "moving_average on the Neumann cosine model is nonstandard; spectral_projection is the usual choice",
            UserWarning,
            stacklevel=2,
        )
        return RhoOperator(kind, N, _moving_average_cosine_matrix(N, M), model, nonstandard=True)
    V = model.sine_coefficients
    Rs = moving_average_sine_matrix(N, V.shape[0])
    return RhoOperator(kind, N, V.T @ Rs @ V, model)


def apply_function(rho: RhoOperator, func, x=None, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``rho`` to a callable ``func`` and sample the result at ``x``.

    For the moving average the window integral is done with an ``order``-point
    Gauss-Legendre rule on each window, so polynomials of degree below
    ``2 * order`` are reproduced exactly.
    """
    if x is None:
        x, _ = rho.model.quadrature_grid()
    x = np.asarray(x, float)
    if rho.kind == "moving_average":
        N = rho.N
        left = (x + 2.0 / N) < 1.0
        lo = np.where(left, x, x - 1.0 / N)
        g, w = leggauss(order)
        y = lo[:, None] + (g[None, :] + 1.0) / (2.0 * N)
        return x, (func(y) * w[None, :]).sum(axis=1) / 2.0
    xq, wq = rho.model.quadrature_grid()
    E = rho.model.basis_matrix(xq)
    coeffs = E.T @ (wq * func(xq))
    return x, rho.model.basis_matrix(x) @ (rho.matrix @ coeffs)


# --- rates ----------------------------------------------------------------------


def fit_slope(N, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(N)``; ``nan`` if degenerate."""
    N = np.asarray(N, float)
    v = np.asarray(values, float)
    if np.any(v <= 0) or v.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(N), np.log(v), 1)[0])


@dataclass
class RateFit:
    """Errors ``e(N)`` and growth factors ``g(N)`` with fitted log-log slopes."""

    alpha: float
    beta: float
    N: list
    errors: list
    growth: list
    slope_error: float
    slope_growth: float
    kind: str = "moving_average"
    mode: str = "operator"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["N", "error", "norm", "slope", "slope_norm", "alpha", "beta"])
        for n, e, g in zip(self.N, self.errors, self.growth):
            wr.writerow(
                [n, f"{e:.12e}", f"{g:.12e}", f"{self.slope_error:.6f}", f"{self.slope_growth:.6f}", self.alpha, self.beta]
            )
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "kind": self.kind,
            "mode": self.mode,
            "N": list(self.N),
            "errors": list(self.errors),
            "growth": list(self.growth),
            "slope_error": self.slope_error,
            "slope_growth": self.slope_growth,
        }


def rate_fit(
    model: SpectralModel,
    kind: str = "moving_average",
    v=None,
    alpha: float = 0.0,
    beta: float = 1.0,
    N_grid=(8, 16, 32, 64, 128),
    truncation: int | None = None,
) -> RateFit:
    """Approximation errors of ``rho_N`` in spectral Sobolev norms.

    With an HVector ``v`` the errors are ``|rho_N v - v|_{H^alpha} / |v|_{H^beta}``
    and the growth factors ``|rho_N v|_{H^beta} / |v|_{H^alpha}``.  With
    ``v = None`` the operator norms ``|rho_N - I|_{L(H^beta, H^alpha)}`` and
    ``|rho_N|_{L(H^alpha, H^beta)}`` are used instead, which probe the worst
    case over the truncation.  Norms are computed on a sine (or cosine)
    truncation of ``truncation`` modes (default ``max(M, 512)``).
    """
    if not 0.0 <= alpha <= beta <= 1.0:
        raise ValidationError("rate_fit needs 0 <= alpha <= beta <= 1")
    N_grid = [int(n) for n in N_grid]
    if len(N_grid) < 4:
        raise ValidationError("N_grid needs at least 4 points")
    K = max(model.mode_count, 512) if truncation is None else int(truncation)
    if model.kind == "neumann_hyperviscous":
        big = build_model("neumann_hyperviscous", K, model.params)
    else:
        big = build_model("dirichlet_laplacian", K)
    Ga, Gb = sobolev_gram(big, alpha), sobolev_gram(big, beta)
    if v is not None:
        v = np.asarray(v, float)
        if model.kind == "neumann_hyperviscous":
            vb = np.zeros(K)
            vb[: v.size] = v
        else:
            vb = np.zeros(K)
            Vs = model.sine_coefficients @ v
            vb[: Vs.size] = Vs
        nb = math.sqrt(vb @ Gb @ vb)
        na = math.sqrt(vb @ Ga @ vb)
        if nb == 0.0:
            raise ValidationError("v has zero H^beta norm")
    errors, growth = [], []
    for N in N_grid:
        if kind == "spectral_projection" and N > K:
            raise ValidationError("spectral projection N exceeds truncation")
        R = build_rho(big, kind, N).matrix if not (
            kind == "moving_average" and big.kind == "neumann_hyperviscous"
        ) else _moving_average_cosine_matrix(N, K)
        if v is None:
            errors.append(operator_norm_estimate(R - np.eye(K), Gb, Ga))
            growth.append(operator_norm_estimate(R, Ga, Gb))
        else:
            d = R @ vb - vb
            errors.append(math.sqrt(max(d @ Ga @ d, 0.0)) / nb)
            rv = R @ vb
            growth.append(math.sqrt(max(rv @ Gb @ rv, 0.0)) / na)
    return RateFit(
        alpha,
        beta,
        N_grid,
        errors,
        growth,
        fit_slope(N_grid, errors),
        fit_slope(N_grid, growth),
        kind,
        "operator" if v is None else "vector",
    )


def rho_h_to_v_norm(N: int, K: int = 256, grid_panels: int | None = None) -> float:
    """``|rho_N|_{L(H, V)}`` for the moving average with the piecewise derivative.

    ``rho_N v`` jumps at ``x = 1 - 2/N``; on each side its derivative is
    ``N (v(x + 1/N) - v(x))`` or ``N (v(x) - v(x - 1/N))``.  The ``V`` norm
    used here is ``|w|_{L2}^2 + |w'|_{L2}^2`` with ``w'`` taken piecewise,
    and the supremum runs over ``v`` in the span of ``K`` sine modes.
    """
    x, w = composite_gauss_legendre([0.0, _window_split(N), 1.0], grid_panels or max(16, 2 * K))
    k = np.arange(1, K + 1)
    s = lambda y: math.sqrt(2.0) * np.sin(np.outer(y, k * np.pi))  # noqa: E731
    # accumulate the K x K normal matrix over grid chunks to bound memory
    S = np.zeros((K, K))
    for a in range(0, x.size, 4096):
        xc, wc = x[a : a + 4096], w[a : a + 4096]
        vals = _rho_values("sine", k, N, xc)
        left = (xc + 2.0 / N) < 1.0
        deriv = np.where(left[:, None], N * (s(xc + 1.0 / N) - s(xc)), N * (s(xc) - s(xc - 1.0 / N)))
        S += (wc[:, None] * vals).T @ vals + (wc[:, None] * deriv).T @ deriv
    return float(math.sqrt(max(linalg.eigvalsh(0.5 * (S + S.T))[-1], 0.0)))


def uniform_bounds(N_grid=(8, 16, 32, 64, 128, 256), K: int = 512) -> dict:
    """Moving-average norms in ``L(H, H)``, ``L(Vdot, Vdot)`` and ``L(H, V)`` over ``N``."""
    big = build_model("dirichlet_laplacian", K)
    H = np.eye(K)
    Vd = big.vdot_gram()
    out = {"N": [], "H_H": [], "Vdot_Vdot": [], "H_V": []}
    for N in N_grid:
        R = moving_average_sine_matrix(N, K)
        out["N"].append(int(N))
        out["H_H"].append(operator_norm_estimate(R, H, H))
        out["Vdot_Vdot"].append(operator_norm_estimate(R, Vd, Vd))
        out["H_V"].append(rho_h_to_v_norm(N, K))
    out["slope_H_V"] = fit_slope(out["N"], out["H_V"])
    return out


def b_approx_error(tensor: CouplingTensor, rho: RhoOperator, phi, f) -> float:
    """``|<B(rho^{(x)2} phi) - B(phi), f>|`` with ``rho^{(x)2} phi = R phi R^T``."""
    phi = np.asarray(phi, float)
    f = np.asarray(f, float)
    diff = rho.tensorize(phi) - phi
    return float(abs(np.einsum("kl,m,klm->", diff, f, tensor.entries.astype(float))))


def tensorization_check(rho: RhoOperator, rng: np.random.Generator, n_samples: int = 200) -> dict:
    """Compare ``|rho^{(x)2} phi|_{V(x)H}`` with ``|rho|_{L(V,V)} |rho|_{L(H,H)} |phi|_{V(x)H}``.

    The ``V (x) H`` norm of a coefficient matrix is ``tr(phi^T G_V phi)``.
    """
    model = rho.model
    M = model.mode_count
    GV = np.eye(M) + model.vdot_gram()
    R = rho.matrix
    nVV = operator_norm_estimate(R, GV, GV)
    nHH = operator_norm_estimate(R, np.eye(M), np.eye(M))
    worst = 0.0
    for _ in range(n_samples):
        phi = rng.standard_normal((M, M))
        phi = 0.5 * (phi + phi.T)
        rp = R @ phi @ R.T
        lhs = math.sqrt(np.trace(rp.T @ GV @ rp))
        rhs = math.sqrt(np.trace(phi.T @ GV @ phi))
        worst = max(worst, lhs / rhs)
    return {"max_ratio": worst, "bound": nVV * nHH, "norm_V_V": nVV, "norm_H_H": nHH}
