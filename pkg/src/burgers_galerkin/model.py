"""Spectral models of the linear operator ``A`` on ``D = (0, 1)``.

Four model kinds are supported:

``dirichlet_laplacian``
    ``e_k = sqrt(2) sin(k pi x)``, ``lambda_k = (k pi)^2`` for ``k = 1..M``.
``neumann_hyperviscous``
    ``e_0 = 1``, ``e_k = sqrt(2) cos(k pi x)``, ``lambda_k = (1 + (k pi)^2)^theta``
    for ``k = 0..M-1``.
``elliptic_divform``
    ``A = -d/dx (a d/dx)`` with Dirichlet conditions; the form
    ``Q_kl = int a s_k' s_l'`` is assembled in the sine basis ``s_k`` and
    diagonalized.
``regional_fractional``
    The regional fractional Laplacian of order ``gamma``; the form
    ``(c/2) iint (s_k(y)-s_k(x))(s_l(y)-s_l(x)) / |y-x|^(1+gamma)`` is
    assembled in the sine basis and diagonalized.

Coefficient vectors (``HVector``) are indexed 0-based in the model basis.
For the numerical models the eigenfunctions are ``e_j = sum_i V[i, j] s_i``
with ``V = model.sine_coefficients``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import AccuracyError, ValidationError
from .quadrature import composite_gauss_legendre, radial_rule

__all__ = [
    "KINDS",
    "SpectralModel",
    "NormEstimate",
    "build_model",
    "model_from_dict",
    "model_from_json",
    "sobolev_gram",
    "sobolev_norm",
    "trace_apply",
    "trace_operator_norm",
    "neumann_derivative_matrix",
    "neumann_derivative_coeffs",
    "neumann_derivative_norm",
    "operator_norm_estimate",
    "form_bounds",
    "sine_basis",
    "cosine_basis",
]

KINDS = (
    "dirichlet_laplacian",
    "elliptic_divform",
    "neumann_hyperviscous",
    "regional_fractional",
)

QUAD_TOL = 1e-6
SQRT2 = math.sqrt(2.0)


def sine_basis(k, x, derivative: int = 0) -> np.ndarray:
    """``sqrt(2) sin(k pi x)`` or its first derivative, broadcast over ``k`` and ``x``."""
    arg = np.multiply.outer(np.asarray(x, float), np.asarray(k, float) * np.pi)
    if derivative == 0:
        return SQRT2 * np.sin(arg)
    if derivative == 1:
        return SQRT2 * np.pi * np.asarray(k, float) * np.cos(arg)
    raise ValidationError("only derivative orders 0 and 1 are supported")


def cosine_basis(k, x, derivative: int = 0) -> np.ndarray:
    """Normalized Neumann basis: ``1`` for ``k = 0``, ``sqrt(2) cos(k pi x)`` otherwise."""
    k = np.asarray(k, float)
    norm = np.where(k == 0, 1.0, SQRT2)
    arg = np.multiply.outer(np.asarray(x, float), k * np.pi)
    if derivative == 0:
        return norm * np.cos(arg)
    if derivative == 1:
        return -norm * np.pi * k * np.sin(arg)
    raise ValidationError("only derivative orders 0 and 1 are supported")


# --- elliptic coefficients ------------------------------------------------------


def _elliptic_coefficient(params: dict) -> tuple[Callable, list, dict]:
    """Return ``(a, breakpoints, canonical_params)`` for the divergence-form coefficient."""
    spec = params.get("a", "constant")
    if isinstance(spec, dict):
        xs = np.asarray(spec.get("x"), float)
        vals = np.asarray(spec.get("values"), float)
        if xs.ndim != 1 or xs.shape != vals.shape or xs.size < 2:
            raise ValidationError("tabulated coefficient needs matching 1-d 'x' and 'values'")
        if np.any(np.diff(xs) <= 0) or xs[0] > 0 or xs[-1] < 1:
            raise ValidationError("tabulated 'x' must be increasing and cover [0, 1]")
        canon = {"a": {"x": xs.tolist(), "values": vals.tolist()}}
        return (lambda x: np.interp(x, xs, vals)), [0.0, *xs[(xs > 0) & (xs < 1)], 1.0], canon
    if spec == "constant":
        value = float(params.get("a_value", 1.0))
        return (lambda x: np.full_like(np.asarray(x, float), value)), [0.0, 1.0], {
            "a": "constant",
            "a_value": value,
        }
    if spec == "sine":
        return (lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * np.asarray(x, float))), [0.0, 1.0], {
            "a": "sine"
        }
    if spec == "two_phase":
        lo, hi = (float(v) for v in params.get("a_values", (1.0, 2.0)))
        x0 = float(params.get("interface", 0.5))
        if not 0.0 < x0 < 1.0:
            raise ValidationError("two_phase interface must lie in (0, 1)")
        return (lambda x: np.where(np.asarray(x, float) < x0, lo, hi)), [0.0, x0, 1.0], {
            "a": "two_phase",
            "a_values": [lo, hi],
            "interface": x0,
        }
    raise ValidationError(f"unknown elliptic coefficient {spec!r}")


def _assemble_elliptic(K: int, a: Callable, breaks, panels_per_unit: int) -> np.ndarray:
    x, w = composite_gauss_legendre(breaks, panels_per_unit)
    d = sine_basis(np.arange(1, K + 1), x, derivative=1)
    return d.T @ ((w * a(x))[:, None] * d)


# --- regional fractional form ---------------------------------------------------


def _cos_integral(n: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """``int_lo^hi cos(n pi y) dy`` for integer ``n`` (broadcast)."""
    n = np.asarray(n, float)
    safe = np.where(n == 0, 1.0, n)
    val = (np.sin(safe * np.pi * hi) - np.sin(safe * np.pi * lo)) / (safe * np.pi)
    return np.where(n == 0, hi - lo, val)


def _assemble_fractional(K: int, gamma: float, c: float, panels: int, order: int = 8) -> np.ndarray:
    """Sine-basis matrix of ``(c/2) iint (s_k(y)-s_k(x))(s_l(y)-s_l(x)) |y-x|^(-1-gamma)``.

    With ``r = y - x`` the inner ``x`` integral is done in closed form:
    ``(s_k(x+r)-s_k(x))(s_l(x+r)-s_l(x)) = 8 sin(k pi r/2) sin(l pi r/2)
    cos(k pi z) cos(l pi z)`` with ``z = x + r/2 in (r/2, 1-r/2)``.  The remaining
    radial integrand is ``r^(1-gamma)`` times a smooth function, handled by a
    Gauss-Jacobi first panel.
    """
    k = np.arange(1, K + 1)
    r, w = radial_rule(1.0 - gamma, panels, order)
    # sin(k pi r / 2) / r
    S = (k[None, :] * np.pi / 2) * np.sinc(np.outer(r, k) / 2)
    n = np.arange(0, 2 * K + 1)
    table = _cos_integral(n[None, :], (r / 2)[:, None], (1 - r / 2)[:, None])
    dif = np.abs(k[:, None] - k[None, :])
    tot = k[:, None] + k[None, :]
    Q = np.zeros((K, K))
    for p in range(r.size):
        C = 0.5 * (table[p][dif] + table[p][tot])
        Q += (8.0 * w[p]) * np.outer(S[p], S[p]) * C
    return c * Q


# --- model ----------------------------------------------------------------------


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (deterministic eigenvectors)."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


class SpectralModel:
    """A truncated Gelfand-triple instance; see :func:`build_model`.

    Attributes
    ----------
    kind : str
    mode_count : int
        Number of retained eigenpairs ``M`` per component.
    components : int
        Number of equation components ``d``; ``A`` is block diagonal.
    eigenvalues : ndarray, shape (M,)
    params : dict
        Canonical, JSON-serializable parameters.
    wavenumbers : ndarray or None
        Trigonometric frequency of each basis function for the explicit models.
    sine_coefficients : ndarray, shape (K, M)
        Expansion of ``e_j`` in ``s_i = sqrt(2) sin(i pi x)``, ``i = 1..K``
        (identity for Dirichlet, ``None`` for Neumann).
    sine_form : ndarray or None
        Assembled form matrix ``Q`` in the sine basis for the numerical models.
    quadrature_error : float
        Panel-doubling estimate of the relative assembly error.
    """

    def __init__(
        self,
        kind: str,
        mode_count: int,
        eigenvalues,
        params: dict,
        components: int = 1,
        sine_coefficients=None,
        sine_form=None,
        quadrature_error: float = 0.0,
        coefficient: Callable | None = None,
    ):
        self.kind = kind
        self.mode_count = int(mode_count)
        self.components = int(components)
        self.params = dict(params)
        self.eigenvalues = np.asarray(eigenvalues, float)
        self.eigenvalues.setflags(write=False)
        if kind == "dirichlet_laplacian":
            self.wavenumbers = np.arange(1, self.mode_count + 1)
        elif kind == "neumann_hyperviscous":
            self.wavenumbers = np.arange(0, self.mode_count)
        else:
            self.wavenumbers = None
        if sine_coefficients is not None:
            sine_coefficients = np.asarray(sine_coefficients, float)
            sine_coefficients.setflags(write=False)
        self.sine_coefficients = sine_coefficients
        self.sine_form = sine_form
        self.quadrature_error = float(quadrature_error)
        self.coefficient = coefficient

    # basic shape information

    @property
    def is_trigonometric(self) -> bool:
        return self.wavenumbers is not None

    @property
    def total_modes(self) -> int:
        return self.mode_count * self.components

    @property
    def eigenvalues_full(self) -> np.ndarray:
        """Eigenvalues for all components, component-major."""
        return np.tile(self.eigenvalues, self.components)

    @property
    def max_frequency(self) -> int:
        if self.sine_coefficients is not None:
            return self.sine_coefficients.shape[0]
        return int(self.wavenumbers[-1])

    # basis evaluation

    def basis_matrix(self, x, derivative: int = 0) -> np.ndarray:
        """Values ``e_k(x_i)`` (or derivatives) with shape ``(len(x), M)``."""
        x = np.atleast_1d(np.asarray(x, float))
        if self.kind == "neumann_hyperviscous":
            return cosine_basis(self.wavenumbers, x, derivative)
        if self.kind == "dirichlet_laplacian":
            return sine_basis(self.wavenumbers, x, derivative)
        K = self.sine_coefficients.shape[0]
        return sine_basis(np.arange(1, K + 1), x, derivative) @ self.sine_coefficients

    def basis_eval(self, k: int, x) -> np.ndarray:
        """``e_k(x)`` for a single 0-based index ``k``."""
        if not 0 <= k < self.mode_count:
            raise IndexError(f"basis index {k} out of range")
        return self.basis_matrix(x)[:, k]

    def evaluate(self, coeffs, x) -> np.ndarray:
        """Evaluate an HVector (single component) at ``x``."""
        return self.basis_matrix(x) @ np.asarray(coeffs, float)

    def quadrature_grid(self, panels_per_unit: int | None = None):
        """Gauss-Legendre grid resolving triple products of basis functions."""
        if panels_per_unit is None:
            panels_per_unit = max(16, 2 * self.max_frequency)
        return composite_gauss_legendre([0.0, 1.0], panels_per_unit)

    # quadratic forms

    def form_matrix(self) -> np.ndarray:
        """``<A e_k, e_l>`` in the model basis (diagonal by construction)."""
        return np.diag(self.eigenvalues)

    def vdot_gram(self) -> np.ndarray:
        """Gram matrix of the homogeneous energy norm ``||.||_Vdot`` on one component."""
        if self.kind == "dirichlet_laplacian":
            g = np.diag((self.wavenumbers * np.pi) ** 2.0)
        elif self.kind == "neumann_hyperviscous":
            theta = self.params["theta"]
            g = np.diag(2.0 * (1.0 + self.wavenumbers**2.0) ** theta - 1.0)
        elif self.kind == "elliptic_divform":
            K = self.sine_coefficients.shape[0]
            w = (np.arange(1, K + 1) * np.pi) ** 2
            g = self.sine_coefficients.T @ (w[:, None] * self.sine_coefficients)
        else:
            g = np.diag(2.0 / self.params["c"] * self.eigenvalues)
        return g

    # serialization

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mode_count": self.mode_count,
            "components": self.components,
            "params": self.params,
            "eigenvalues": self.eigenvalues.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def __repr__(self) -> str:
        return f"SpectralModel(kind={self.kind!r}, M={self.mode_count}, d={self.components}, params={self.params})"


def _check_domain(domain) -> None:
    lo, hi = (float(v) for v in domain)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValidationError("unbounded domain unsupported: only D = (0, 1) has discrete spectrum here")
    if (lo, hi) != (0.0, 1.0):
        raise ValidationError("only the domain D = (0, 1) is supported")


def build_model(
    kind: str,
    M: int,
    params: dict | None = None,
    components: int = 1,
    domain=(0.0, 1.0),
) -> SpectralModel:
    """Construct a :class:`SpectralModel`.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    M : int
        Number of modes per component.
    params : dict, optional
        ``theta`` (neumann, in (1, 2]); ``gamma`` (fractional, in [3/2, 2)) and
        ``c`` (default 1); ``a`` (elliptic: ``"constant"`` with ``a_value``,
        ``"sine"``, ``"two_phase"`` with ``a_values``/``interface``, or a
        table ``{"x": [...], "values": [...]}``) with ``epsilon`` bounds;
        ``basis_size`` (numerical models, sine modes used, default ``M``).
    components : int
        Number of equation components ``d``.
    domain : tuple
        Must be ``(0, 1)``; unbounded domains are rejected.

    Raises
    ------
    ValidationError
        Parameters outside their admissible ranges.
    AccuracyError
        Panel-doubling error estimate of a quadrature assembly above 1e-6.
    """
    _check_domain(domain)
    params = dict(params or {})
    if kind not in KINDS:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise ValidationError(f"mode count M must be a positive integer, got {M!r}")
    M = int(M)
    if int(components) < 1:
        raise ValidationError("components must be >= 1")

    if kind == "dirichlet_laplacian":
        _reject_extra(params, set())
        lam = (np.arange(1, M + 1) * np.pi) ** 2
        return SpectralModel(kind, M, lam, {}, components, sine_coefficients=np.eye(M))

    if kind == "neumann_hyperviscous":
        _reject_extra(params, {"theta"})
        theta = float(params.get("theta", 1.5))
        if not 1.0 < theta <= 2.0:
            raise ValidationError(f"theta out of (1, 2]: {theta}")
        lam = (1.0 + (np.arange(0, M) * np.pi) ** 2) ** theta
        return SpectralModel(kind, M, lam, {"theta": theta}, components)

    K = int(params.get("basis_size", M))
    if K < M:
        raise ValidationError("basis_size must be >= M")

    if kind == "elliptic_divform":
        _reject_extra(params, {"a", "a_value", "a_values", "interface", "epsilon", "basis_size"})
        a, breaks, canon = _elliptic_coefficient(params)
        eps = float(params.get("epsilon", 0.01))
        if not 0.0 < eps <= 1.0:
            raise ValidationError("epsilon must lie in (0, 1]")
        ppu = max(16, 2 * K)
        x, _ = composite_gauss_legendre(breaks, ppu)
        vals = a(x)
        if vals.min() < eps or vals.max() > 1.0 / eps:
            raise ValidationError(
                f"coefficient a ranges over [{vals.min():.3g}, {vals.max():.3g}], outside [{eps}, {1 / eps}]"
            )
        Q1 = _assemble_elliptic(K, a, breaks, ppu)
        Q2 = _assemble_elliptic(K, a, breaks, 2 * ppu)
        canon.update({"epsilon": eps, "basis_size": K})
    else:
        _reject_extra(params, {"gamma", "c", "basis_size"})
        gamma = float(params.get("gamma", 1.5))
        if not 1.5 <= gamma < 2.0:
            raise ValidationError(f"γ out of [1.5,2): gamma={gamma}")
        c = float(params.get("c", 1.0))
        if not c > 0:
            raise ValidationError("fractional constant c must be positive")
        panels = max(32, 2 * K)
        Q1 = _assemble_fractional(K, gamma, c, panels)
        Q2 = _assemble_fractional(K, gamma, c, 2 * panels)
        canon = {"gamma": gamma, "c": c, "basis_size": K}
        a = None

    Q = 0.5 * (Q2 + Q2.T)
    err = float(np.abs(Q1 - Q2).max() / max(1.0, np.abs(Q2).max()))
    if err > QUAD_TOL:
        raise AccuracyError(f"form assembly did not converge: estimated relative error {err:.2e}")
    lam, V = linalg.eigh(Q)
    V = _fix_signs(V[:, :M])
    return SpectralModel(
        kind,
        M,
        lam[:M],
        canon,
        components,
        sine_coefficients=V,
        sine_form=Q,
        quadrature_error=err,
        coefficient=a,
    )


def _reject_extra(params: dict, allowed: set) -> None:
    extra = set(params) - allowed
    if extra:
        raise ValidationError(f"unknown model parameter(s): {sorted(extra)}")


def model_from_dict(doc: dict, check: bool = True) -> SpectralModel:
    """Rebuild a model from :meth:`SpectralModel.to_dict` output.

    With ``check`` the stored eigenvalues must match the rebuilt ones.
    """
    try:
        model = build_model(doc["kind"], doc["mode_count"], doc.get("params"), doc.get("components", 1))
    except KeyError as exc:
        raise ValidationError(f"model descriptor missing field {exc}") from None
    if check and "eigenvalues" in doc:
        stored = np.asarray(doc["eigenvalues"], float)
        if stored.shape != model.eigenvalues.shape or not np.allclose(
            stored, model.eigenvalues, rtol=1e-9, atol=0
        ):
            raise ValidationError("stored eigenvalues do not match the rebuilt model")
    return model


def model_from_json(text: str, check: bool = True) -> SpectralModel:
    return model_from_dict(json.loads(text), check)


# --- Sobolev norms --------------------------------------------------------------


def _sine_weights(K: int, alpha: float, homogeneous: bool) -> np.ndarray:
    w = (np.arange(1, K + 1) * np.pi) ** (2.0 * alpha)
    return w if homogeneous else 1.0 + w


def sobolev_gram(model: SpectralModel, alpha: float, homogeneous: bool = False) -> np.ndarray:
    """Gram matrix of the spectral ``H^alpha`` norm in the model basis.

    Sine based models use weights ``(k pi)^(2 alpha)`` plus ``1`` unless
    homogeneous.  Neumann uses ``2 (1 + k^2)^alpha`` and the homogeneous version
    subtracts the ``L^2`` part, matching ``||.||_Vdot^2 = ||.||_V^2 - ||.||_H^2``.
    """
    if model.kind == "neumann_hyperviscous":
        w = 2.0 * (1.0 + model.wavenumbers**2.0) ** alpha
        return np.diag(w - 1.0 if homogeneous else w)
    V = model.sine_coefficients
    w = _sine_weights(V.shape[0], alpha, homogeneous)
    return V.T @ (w[:, None] * V)


def sobolev_norm(
    model: SpectralModel,
    v,
    alpha: float,
    flavor: str = "spectral",
    homogeneous: bool = False,
    squared: bool = False,
    exponent: float | None = None,
    panels: int | None = None,
) -> float:
    """``H^alpha`` norm of the HVector ``v``.

    Parameters
    ----------
    flavor : {"spectral", "slobodeckij"}
        ``spectral`` uses :func:`sobolev_gram`.  ``slobodeckij`` uses
        ``||v||_{L2}^2 + iint |v(x)-v(y)|^2 / |x-y|^exponent`` with
        ``exponent = 1 + 2 alpha`` by default; ``alpha = 1`` uses
        ``||v'||_{L2}^2`` and ``alpha = 0`` reduces to the ``L2`` norm.
    homogeneous : bool
        Drop the ``L2`` term.
    squared : bool
        Return the squared norm.
    """
    v = np.asarray(v, float)
    if v.shape != (model.mode_count,):
        raise ValidationError(f"HVector must have shape ({model.mode_count},)")
    if flavor == "spectral":
        if alpha < 0:
            raise ValidationError("spectral alpha must be nonnegative")
        val = float(v @ sobolev_gram(model, alpha, homogeneous) @ v)
    elif flavor == "slobodeckij":
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError(f"slobodeckij alpha must lie in [0, 1], got {alpha}")
        val = _slobodeckij_sq(model, v, alpha, homogeneous, exponent, panels)
    else:
        raise ValidationError(f"unknown Sobolev flavor {flavor!r}")
    val = max(val, 0.0)
    return val if squared else math.sqrt(val)


def _slobodeckij_sq(model, v, alpha, homogeneous, exponent, panels) -> float:
    x, w = model.quadrature_grid()
    l2 = float(w @ model.evaluate(v, x) ** 2)
    if alpha == 0.0 and exponent is None:
        return l2
    if alpha == 1.0 and exponent is None:
        semi = float(w @ (model.basis_matrix(x, 1) @ v) ** 2)
        return semi if homogeneous else l2 + semi
    s = 1.0 + 2.0 * alpha if exponent is None else float(exponent)
    if not 1.0 < s < 3.0:
        raise ValidationError("slobodeckij exponent must lie in (1, 3)")
    panels = panels or max(32, 2 * model.max_frequency)
    # iint = 2 int_0^1 r^(2-s) [inner(r) / r^2] dr, inner(r) = int_0^{1-r} (v(x+r)-v(x))^2 dx
    r, wr = radial_rule(2.0 - s, panels)
    xi, wi = model.quadrature_grid()
    inner = np.empty(r.size)
    for p, rp in enumerate(r):
        xs = (1.0 - rp) * xi
        diff = model.evaluate(v, xs + rp) - model.evaluate(v, xs)
        inner[p] = (1.0 - rp) * (wi @ diff**2)
    semi = 2.0 * float(wr @ (inner / r**2))
    return semi if homogeneous else l2 + semi


# --- trace operator -------------------------------------------------------------


def trace_apply(phi, model: SpectralModel, x=None):
    """Trace ``x -> sum_kl phi[k, l] e_k(x) e_l(x)`` sampled on the quadrature grid.

    Returns
    -------
    x, values : ndarray
    """
    phi = np.asarray(phi, float)
    if phi.shape != (model.mode_count, model.mode_count):
        raise ValidationError("TensorMatrix shape does not match the model")
    if x is None:
        x, _ = model.quadrature_grid()
    E = model.basis_matrix(x)
    return x, np.einsum("ik,kl,il->i", E, phi, E)


def _sym_parametrization(M: int):
    ks, ls = np.triu_indices(M)
    mult = np.where(ks == ls, 1.0, 2.0)
    return ks, ls, mult


def trace_operator_norm(M: int, s: float) -> float:
    """Norm of the trace ``T: H^s((0,1)^2) -> H^(s-1/2)(0,1)`` on symmetric sine tensors.

    The domain uses weights ``(1 + (k pi)^2 + (l pi)^2)^s`` on
    ``e_k (x) e_l``; ``T phi`` is an exact cosine polynomial of frequency at
    most ``2M``, measured with weights ``(1 + (j pi)^2)^(s - 1/2)``.
    """
    ks, ls, mult = _sym_parametrization(M)
    k, l = ks + 1, ls + 1
    w_in = mult * (1.0 + (k * np.pi) ** 2 + (l * np.pi) ** 2) ** s
    # 2 sin(k pi x) sin(l pi x) = cos((k-l) pi x) - cos((k+l) pi x); cos(j pi x) = e_j / sqrt(2) for j > 0
    T = np.zeros((2 * M + 1, k.size))
    cols = np.arange(k.size)
    d, t = np.abs(k - l), k + l
    np.add.at(T, (d, cols), mult * np.where(d == 0, 1.0, 1.0 / SQRT2))
    np.add.at(T, (t, cols), -mult / SQRT2)
    j = np.arange(2 * M + 1)
    w_out = (1.0 + (j * np.pi) ** 2) ** (s - 0.5)
    return operator_norm_estimate(T, np.diag(w_in), np.diag(w_out))


# --- Neumann derivative ---------------------------------------------------------


def neumann_derivative_matrix(M: int, output_modes: int | None = None) -> np.ndarray:
    """Matrix ``D[k, l] = <d/dx e_l, e_k>`` in the normalized Neumann basis.

    ``<-sqrt(2) l pi sin(l pi x), sqrt(2) cos(k pi x)> = -2 l^2 (1-(-1)^(k+l)) / (l^2-k^2)``
    for ``k >= 1`` (zero when ``k = l``) and ``-sqrt(2) (1-(-1)^l)`` for ``k = 0``.
    """
    Mout = M if output_modes is None else int(output_modes)
    k = np.arange(Mout)[:, None].astype(float)
    l = np.arange(M)[None, :].astype(float)
    parity = 1.0 - (-1.0) ** (k + l)
    denom = np.where(k == l, 1.0, l**2 - k**2)
    D = np.where(k == l, 0.0, -2.0 * l**2 * parity / denom)
    D[0, :] = -SQRT2 * (1.0 - (-1.0) ** l[0])
    return D


def neumann_derivative_coeffs(h, model: SpectralModel | None = None, output_modes: int | None = None):
    """Neumann-basis coefficients of ``d/dx h`` (truncated to ``output_modes``)."""
    if model is not None and model.kind != "neumann_hyperviscous":
        raise ValidationError("neumann_derivative_coeffs requires a neumann_hyperviscous model")
    h = np.asarray(h, float)
    return neumann_derivative_matrix(h.size, output_modes) @ h


def neumann_derivative_norm(M: int, theta: float, delta: float, output_modes: int | None = None) -> float:
    """Norm of ``d/dx: H^theta -> H^(theta-delta)`` on the first ``M`` Neumann modes."""
    Mout = 4 * M if output_modes is None else int(output_modes)
    D = neumann_derivative_matrix(M, Mout)
    w_in = 2.0 * (1.0 + np.arange(M) ** 2.0) ** theta
    w_out = 2.0 * (1.0 + np.arange(Mout) ** 2.0) ** (theta - delta)
    return operator_norm_estimate(D, np.diag(w_in), np.diag(w_out))


# --- operator norms -------------------------------------------------------------


@dataclass(frozen=True)
class NormEstimate:
    value: float
    kernel_dim: int
    iterations: int
    converged: bool


def operator_norm_estimate(
    R,
    domain_gram,
    codomain_gram,
    tol: float = 1e-8,
    maxiter: int = 500,
    return_info: bool = False,
):
    """Largest generalized singular value ``sup |R v|_cod / |v|_dom``.

    Both norms are given by positive semidefinite Gram matrices.  A singular
    domain Gram is restricted to the orthogonal complement of its kernel,
    whose dimension is reported with ``return_info``.  Power iteration on the
    normal equations runs to relative change ``tol``; if it stalls, the value
    is taken from a dense symmetric eigensolve instead.
    """
    R = np.asarray(R, float)
    Gd = np.asarray(domain_gram, float)
    Gc = np.asarray(codomain_gram, float)
    if Gd.shape != (R.shape[1], R.shape[1]) or Gc.shape != (R.shape[0], R.shape[0]):
        raise ValidationError("Gram matrix shapes do not match the operator")
    Lc = _gram_sqrt(Gc)
    if _is_diag(Gd):
        d = np.diag(Gd)
        keep = d > tol * max(d.max(), 0.0) if d.size else d > 0
        kernel = int((~keep).sum())
        B = Lc @ (R[:, keep] / np.sqrt(d[keep]))
    else:
        lam, U = linalg.eigh(0.5 * (Gd + Gd.T))
        keep = lam > tol * max(lam.max(), 0.0)
        kernel = int((~keep).sum())
        B = Lc @ (R @ (U[:, keep] / np.sqrt(lam[keep])))
    if B.shape[1] == 0:
        info = NormEstimate(0.0, kernel, 0, True)
        return info if return_info else 0.0
    S = B.T @ B
    x = np.ones(S.shape[0]) / math.sqrt(S.shape[0])
    val, converged, it = 0.0, False, 0
    for it in range(1, maxiter + 1):
        y = S @ x
        new = float(np.linalg.norm(y))
        if new == 0.0:
            val, converged = 0.0, True
            break
        x = y / new
        if abs(new - val) <= tol * new:
            val, converged = new, True
            break
        val = new
    if not converged:
        val = float(linalg.eigvalsh(S)[-1])
    info = NormEstimate(math.sqrt(max(val, 0.0)), kernel, it, converged)
    return info if return_info else info.value


def _is_diag(G: np.ndarray) -> bool:
    return np.count_nonzero(G - np.diag(np.diag(G))) == 0


def _gram_sqrt(G: np.ndarray) -> np.ndarray:
    """A matrix ``L`` with ``L^T L = G``."""
    if _is_diag(G):
        return np.diag(np.sqrt(np.clip(np.diag(G), 0.0, None)))
    lam, U = linalg.eigh(0.5 * (G + G.T))
    return (U * np.sqrt(np.clip(lam, 0.0, None))).T


def form_bounds(model: SpectralModel, rng: np.random.Generator, n_pairs: int = 1000) -> dict:
    """Empirical constants of ``|<Af,g>| <= C |f||g|`` and ``<Af,f> >= c |f|^2`` in ``Vdot``.

    Besides the sampled ratios, the exact extreme generalized eigenvalues of
    the form with respect to the ``Vdot`` Gram on the truncation are returned.
    """
    A = model.form_matrix()
    G = model.vdot_gram()
    L = _gram_sqrt(G)
    f = rng.standard_normal((n_pairs, model.mode_count))
    g = rng.standard_normal((n_pairs, model.mode_count))
    nf = np.linalg.norm(f @ L.T, axis=1)
    ng = np.linalg.norm(g @ L.T, axis=1)
    upper = np.abs(np.einsum("ik,kl,il->i", f, A, g)) / (nf * ng)
    lower = np.einsum("ik,kl,il->i", f, A, f) / nf**2
    gev = linalg.eigh(A, G, eigvals_only=True)
    sym_err = float(np.abs(A - A.T).max())
    return {
        "c_empirical": float(lower.min()),
        "C_empirical": float(upper.max()),
        "c_exact": float(gev.min()),
        "C_exact": float(gev.max()),
        "symmetry_error": sym_err,
    }
