"""Coupling tensors ``B[k, l, m] = <B(e_k, e_l), e_m>`` of the Burgers nonlinearity.

For the sine based models ``B(f, g) = d/dx (f g)`` and, after integration by
parts, ``B[k, l, m] = -int e_k e_l e_m'``.  For the Neumann model the
boundary renormalization is included:
``B[k, l, m] = int (e_k e_l)' e_m - (2/3) [e_k e_l e_m]_0^1``.

With ``d > 1`` components the flattened index is ``i * M + k`` (component
major) and ``B[(j,k), (j',l), (i,m)] = Gamma[i, j, j'] * b[k, l, m]``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from fractions import Fraction

import numpy as np

from .errors import ValidationError
from .model import SpectralModel, operator_norm_estimate

__all__ = [
    "CouplingTensor",
    "assemble_coupling",
    "sine_coupling",
    "neumann_coupling",
    "drift_eval",
    "drift_jacobian_trace",
    "apply_B_pairing",
    "coupling_operator_norm",
    "validate_gamma",
    "conjugate_tensor",
    "random_null_tensor",
]


def sine_coupling(K: int) -> np.ndarray:
    """Closed form ``-int s_k s_l s_m'`` for ``s_k = sqrt(2) sin(k pi x)``, ``k = 1..K``.

    Equals ``(m pi / sqrt(2)) (delta_{k+l,m} - delta_{|k-l|,m})`` (1-based).
    """
    k = np.arange(1, K + 1)
    kk, ll, mm = np.meshgrid(k, k, k, indexing="ij")
    return (mm * np.pi / math.sqrt(2.0)) * ((kk + ll == mm).astype(float) - (np.abs(kk - ll) == mm))


def _sin_cos_integral(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``int_0^1 cos(a pi x) sin(m pi x) dx`` for integers ``a`` and ``m >= 0``."""
    a = np.abs(a).astype(float)
    m = np.asarray(m, float)
    denom = np.where(a == m, 1.0, m**2 - a**2)
    val = m * (1.0 - (-1.0) ** (a + m)) / (np.pi * denom)
    return np.where(a == m, 0.0, val)


def neumann_coupling(M: int) -> np.ndarray:
    """Closed form of the boundary-renormalized Neumann tensor on ``e_0..e_{M-1}``.

    ``B = (1/3)[e_k e_l e_m]_0^1 + n_k n_l n_m (m pi / 2) (S(k-l, m) + S(k+l, m))``
    with ``S(a, m) = int cos(a pi x) sin(m pi x) dx`` and ``n_0 = 1``,
    ``n_k = sqrt(2)``.
    """
    k = np.arange(M)
    kk, ll, mm = np.meshgrid(k, k, k, indexing="ij")
    n = np.where(k == 0, 1.0, math.sqrt(2.0))
    nnn = n[kk] * n[ll] * n[mm]
    boundary = nnn * ((-1.0) ** (kk + ll + mm) - 1.0) / 3.0
    bulk = nnn * (mm * np.pi / 2.0) * (_sin_cos_integral(kk - ll, mm) + _sin_cos_integral(kk + ll, mm))
    return boundary + bulk


def _quadrature_coupling(model: SpectralModel) -> np.ndarray:
    x, w = model.quadrature_grid()
    E = model.basis_matrix(x)
    dE = model.basis_matrix(x, 1)
    if model.kind == "neumann_hyperviscous":
        # int (e_k e_l)' e_m - (2/3) [e_k e_l e_m]_0^1, without integrating by parts
        bulk = np.einsum("x,xk,xl,xm->klm", w, dE, E, E)
        bulk = bulk + bulk.transpose(1, 0, 2)
        e1, e0 = model.basis_matrix([1.0])[0], model.basis_matrix([0.0])[0]
        bnd = np.einsum("k,l,m->klm", e1, e1, e1) - np.einsum("k,l,m->klm", e0, e0, e0)
        return bulk - 2.0 / 3.0 * bnd
    return -np.einsum("x,xk,xl,xm->klm", w, E, E, dE)


def conjugate_tensor(B: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``sum_ijk V[i,a] V[j,b] V[k,c] B[i,j,k]`` (works for object arrays of Fractions)."""
    out = np.tensordot(V.T, B, axes=(1, 0))
    out = np.tensordot(out, V, axes=(1, 0)).transpose(0, 2, 1)
    return np.tensordot(out, V, axes=(2, 0))


def validate_gamma(gamma, components: int, atol: float = 1e-12) -> np.ndarray:
    """Check that ``Gamma`` has shape ``(d, d, d)`` and is fully symmetric."""
    if gamma is None:
        if components != 1:
            raise ValidationError("Gamma tensor required when components > 1")
        return np.ones((1, 1, 1))
    G = np.asarray(gamma, float)
    if G.ndim == 0:
        G = G.reshape(1, 1, 1)
    if G.shape != (components,) * 3:
        raise ValidationError(f"Gamma must have shape {(components,) * 3}, got {G.shape}")
    for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0), (1, 2, 0), (2, 0, 1)]:
        if np.abs(G - G.transpose(perm)).max() > atol:
            raise ValidationError("Gamma is not fully symmetric in (i, j, k)")
    return G


def random_null_tensor(rng: np.random.Generator, n: int, exact: bool = True, scale: int = 3) -> np.ndarray:
    """Random tensor symmetric in its first two slots with vanishing cyclic sums.

    ``B = T - Sym(T)`` where ``T`` is symmetric in ``(k, l)`` and
    ``Sym(T)[k,l,m] = (T[k,l,m] + T[l,m,k] + T[m,k,l]) / 3``.  With
    ``exact`` the entries are ``Fraction`` objects.
    """
    S = rng.integers(-scale, scale + 1, size=(n, n, n))
    T = (S + S.transpose(1, 0, 2)).astype(object)
    if exact:
        T = np.vectorize(Fraction, otypes=[object])(T)
    else:
        T = T.astype(float)
    sym = (T + T.transpose(1, 2, 0) + T.transpose(2, 0, 1)) / 3
    return T - sym


class CouplingTensor:
    """Trilinear coupling array with its model and symmetry tensor.

    ``entries[k, l, m] = <B(e_k, e_l), e_m>`` with flattened component indices.
    Storage is dense; :meth:`triplets` gives the sparse view.
    """

    def __init__(self, entries, model: SpectralModel | None = None, gamma=None, method: str = "custom"):
        B = np.asarray(entries)
        if B.ndim != 3 or len(set(B.shape)) != 1:
            raise ValidationError("coupling entries must be a cubic 3-d array")
        self.entries = B
        self.model = model
        self.gamma = gamma
        self.method = method
        self._pairs = None

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def zeros(cls, n: int, model: SpectralModel | None = None) -> "CouplingTensor":
        return cls(np.zeros((n, n, n)), model, method="zero")

    def symmetry_error(self) -> float:
        B = self.entries.astype(float)
        return float(np.abs(B - B.transpose(1, 0, 2)).max())

    def circular_defect(self) -> np.ndarray:
        """``B[k,l,m] + B[m,k,l] + B[l,m,k]`` for every triple."""
        B = self.entries
        return B + B.transpose(2, 0, 1) + B.transpose(1, 2, 0)

    def null_form_error(self, rng: np.random.Generator, n_samples: int = 1000) -> float:
        """Max over random ``f`` of ``|sum f_k f_l f_m B[k,l,m]| / |f|^3``."""
        B = self.entries.astype(float)
        f = rng.standard_normal((n_samples, self.size))
        vals = np.einsum("ik,il,im,klm->i", f, f, f, B)
        return float(np.max(np.abs(vals) / np.linalg.norm(f, axis=1) ** 3))

    def renormalization(self, idx=None) -> np.ndarray:
        """``r_k = sum_l B[l, l, k]`` over the active index set."""
        B = self.entries if idx is None else self.entries[np.ix_(idx, idx, idx)]
        return np.einsum("llk->k", B)

    def triplets(self, atol: float = 0.0):
        """Nonzero entries as ``(k, l, m, value)`` tuples (0-based)."""
        B = self.entries.astype(float)
        ks, ls, ms = np.nonzero(np.abs(B) > atol)
        return [(int(k), int(l), int(m), float(B[k, l, m])) for k, l, m in zip(ks, ls, ms)]

    def to_csv(self, path=None, atol: float = 0.0) -> str:
        """Sparse triplet CSV with header ``k,l,m,value``; written atomically if ``path`` is given."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["k", "l", "m", "value"])
        for k, l, m, v in self.triplets(atol):
            wr.writerow([k, l, m, f"{v:.17g}"])
        text = buf.getvalue()
        if path is not None:
            tmp = f"{path}.tmp"
            with open(tmp, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        return text

    @classmethod
    def from_csv(cls, text: str, n: int, model: SpectralModel | None = None) -> "CouplingTensor":
        B = np.zeros((n, n, n))
        for row in csv.DictReader(io.StringIO(text)):
            B[int(row["k"]), int(row["l"]), int(row["m"])] = float(row["value"])
        return cls(B, model, method="csv")

    def active_indices(self, N: int) -> np.ndarray:
        """Flattened indices of the first ``N`` modes of every component."""
        if self.model is None:
            if N > self.size:
                raise IndexError(f"N={N} exceeds tensor size {self.size}")
            return np.arange(N)
        M, d = self.model.mode_count, self.model.components
        if N > M:
            raise IndexError(f"N={N} exceeds mode count M={M}")
        return (np.arange(d)[:, None] * M + np.arange(N)[None, :]).ravel()

    def _pair_data(self, N: int):
        if self._pairs is None:
            self._pairs = {}
        if N not in self._pairs:
            idx = self.active_indices(N)
            B = self.entries[np.ix_(idx, idx, idx)].astype(float)
            n = idx.size
            ks, ls = np.triu_indices(n)
            mult = np.where(ks == ls, 1.0, 2.0)
            W = mult[:, None] * B[ks, ls, :]
            self._pairs[N] = (ks, ls, W, np.einsum("llk->k", B))
        return self._pairs[N]

    def __repr__(self) -> str:
        return f"CouplingTensor(size={self.size}, method={self.method!r})"


def assemble_coupling(model: SpectralModel, gamma=None, method: str = "closed_form") -> CouplingTensor:
    """Assemble the coupling tensor of ``model``.

    Parameters
    ----------
    method : {"closed_form", "quadrature"}
        ``closed_form`` uses the sine formula (Dirichlet, and conjugated by
        the eigenvector matrix for the elliptic and fractional models) or the
        Neumann formula.  ``quadrature`` integrates the basis functions on the
        model grid.
    """
    G = validate_gamma(gamma, model.components)
    if method == "closed_form":
        if model.kind == "neumann_hyperviscous":
            b = neumann_coupling(model.mode_count)
        else:
            V = model.sine_coefficients
            b = conjugate_tensor(sine_coupling(V.shape[0]), V)
    elif method == "quadrature":
        b = _quadrature_coupling(model)
    else:
        raise ValidationError(f"unknown assembly method {method!r}")
    if model.components == 1:
        B = G[0, 0, 0] * b
    else:
        # B[(j,k),(j',l),(i,m)] = Gamma[i,j,j'] b[k,l,m]
        d, M = model.components, model.mode_count
        B = np.einsum("ijh,klm->jkhlim", G, b).reshape(d * M, d * M, d * M)
    return CouplingTensor(B, model, G, method)


def drift_eval(T: CouplingTensor, u, N: int | None = None) -> np.ndarray:
    """Renormalized drift ``G_k(u) = sum_{l,m} (u_l u_m - delta_lm) B[l, m, k]``.

    ``u`` has shape ``(..., n)`` with ``n >= len(active set)``; only the
    active coordinates (first ``N`` modes of every component) are used and the
    result has one entry per active coordinate.
    """
    N = (T.size if T.model is None else T.model.mode_count) if N is None else N
    ks, ls, W, r = T._pair_data(N)
    u = np.asarray(u, float)
    n = r.size
    if u.shape[-1] < n:
        raise ValidationError(f"state has {u.shape[-1]} coordinates, need {n}")
    ua = u[..., :n] if T.model is None or T.model.components == 1 else u[..., T.active_indices(N)]
    return (ua[..., ks] * ua[..., ls]) @ W - r


def drift_jacobian_trace(T: CouplingTensor, u, N: int | None = None) -> np.ndarray:
    """``sum_k dG_k/du_k = 2 sum_{k,m} u_m B[k, m, k]`` (analytic)."""
    N = (T.size if T.model is None else T.model.mode_count) if N is None else N
    idx = T.active_indices(N)
    B = T.entries[np.ix_(idx, idx, idx)].astype(float)
    u = np.asarray(u, float)[..., : idx.size] if T.model is None or T.model.components == 1 else np.asarray(u, float)[..., idx]
    return 2.0 * u @ np.einsum("kmk->m", B)


def apply_B_pairing(T: CouplingTensor, phi, f) -> float:
    """``sum_{k,l,m} phi[k, l] f[m] B[k, l, m]``."""
    phi = np.asarray(phi, float)
    f = np.asarray(f, float)
    n = T.size
    if phi.shape != (n, n) or f.shape != (n,):
        raise ValidationError("phi must be (n, n) and f must be (n,) for the tensor size")
    return float(np.einsum("kl,m,klm->", phi, f, T.entries.astype(float)))


def coupling_operator_norm(T: CouplingTensor) -> float:
    """Norm of ``phi -> B(phi)`` from ``V (x)_s H`` to ``Vdot*`` on symmetric tensors.

    The domain norm is ``tr(phi G_V phi)`` with ``G_V = I + G_Vdot``; the dual
    norm of ``b = B(phi)`` is ``sqrt(b^T G_Vdot^{-1} b)``.
    """
    if T.model is None:
        raise ValidationError("coupling_operator_norm needs the tensor's model")
    Gd = T.model.vdot_gram()
    if T.model.components > 1:
        Gd = np.kron(np.eye(T.model.components), Gd)
    n = T.size
    GV = np.eye(n) + Gd
    ks, ls = np.triu_indices(n)
    B = T.entries.astype(float)
    # columns: symmetric basis tensors E_kl + E_lk (k < l) or E_kk
    R = np.where((ks == ls)[None, :], 1.0, 2.0) * B[ks, ls, :].T
    # Gram of the symmetric basis under tr(phi G_V phi)
    P = len(ks)
    dom = np.zeros((P, P))
    same_l = ls[:, None] == ls[None, :]
    same_k = ks[:, None] == ks[None, :]
    kl = ks[:, None] == ls[None, :]
    lk = ls[:, None] == ks[None, :]
    g = GV
    dom += np.where(same_l, g[ks][:, ks], 0.0)
    dom += np.where(same_k, g[ls][:, ls], 0.0) * ((ks != ls)[:, None] & (ks != ls)[None, :])
    dom += np.where(kl, g[ls][:, ks], 0.0) * ((ks != ls)[:, None])
    dom += np.where(lk, g[ks][:, ls], 0.0) * ((ks != ls)[None, :])
    cod = np.linalg.inv(Gd)
    return operator_norm_estimate(R, dom, 0.5 * (cod + cod.T))
