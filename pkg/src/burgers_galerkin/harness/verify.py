"""Verification suites aggregated into a pass/fail matrix keyed by lemma names.

Identity suites run on random polynomials with ``M <= 5`` and degree ``<= 4``.
In exact arithmetic every identity must hold with zero defect; in float
arithmetic the defect is compared against a relative tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .. import approx, generator, model as model_mod, nonlinearity, wick
from ..errors import BurgersGalerkinError
from ..generator import CylinderSpaceBasis, g_apply, l0_apply, resolvent_solve, second_malliavin_sides
from ..model import SpectralModel, build_model
from ..nonlinearity import CouplingTensor, assemble_coupling, random_null_tensor
from ..wick import (
    PolyVector,
    apply_spectral_function,
    expectation,
    malliavin_derivative,
    number_operator,
    random_polynomial,
    random_polyvector,
    skorokhod,
)

__all__ = ["SuiteResult", "VerificationReport", "identity_suites", "model_suites", "verify_all", "IDENTITY_SUITES"]

FLOAT_TOL = 1e-9


@dataclass
class SuiteResult:
    """Outcome of one suite; ``passed`` is ``None`` for trend-only reports."""

    key: str
    passed: bool | None
    value: object = None
    detail: str = ""
    instances: int = 0
    trend_only: bool = False
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "trend_only": self.trend_only,
            "value": self.value,
            "detail": self.detail,
            "instances": self.instances,
            "seconds": round(self.seconds, 3),
        }


@dataclass
class VerificationReport:
    suites: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, res: SuiteResult) -> None:
        self.suites[res.key] = res

    @property
    def failed(self) -> list:
        return [k for k, r in self.suites.items() if r.passed is False]

    @property
    def all_passed(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "all_passed": self.all_passed,
            "failed": self.failed,
            "suites": {k: r.to_dict() for k, r in self.suites.items()},
        }

    def matrix_lines(self) -> list:
        out = []
        for k, r in self.suites.items():
            flag = "TREND" if r.passed is None else ("PASS" if r.passed else "FAIL")
            out.append(f"{flag:5s} {k}: {r.detail}")
        return out


# --- identity suites --------------------------------------------------------------


def _defect(P, Q) -> float:
    """Largest coefficient of ``P - Q`` relative to the coefficient scale."""
    if isinstance(P, PolyVector):
        return max((_defect(a, b) for a, b in zip(P, Q)), default=0.0)
    if not isinstance(P, wick.GaussianPolynomial):
        d = abs(P - Q)
        if wick.get_arithmetic() == "exact":
            return float(d)
        return float(d) / max(1.0, abs(float(P)), abs(float(Q)))
    diff = P - Q
    if diff.is_zero():
        return 0.0
    worst = max(abs(float(c)) for _, c in diff.items())
    if wick.get_arithmetic() == "exact":
        return worst
    scale = max([1.0] + [abs(float(c)) for _, c in P.items()] + [abs(float(c)) for _, c in Q.items()])
    return worst / scale


def _rational_eigenvalues(rng, m):
    return [Fraction(int(rng.integers(1, 40)), int(rng.integers(1, 5))) for _ in range(m)]


def _rational_matrix(rng, m):
    return np.vectorize(Fraction, otypes=[object])(rng.integers(-2, 3, (m, m)))


def _coerce_array(A):
    if wick.get_arithmetic() == "exact":
        return A
    return np.asarray(A, float)


def _case_multiplication(rng):
    m = int(rng.integers(1, 6))
    F = random_polynomial(rng, m, 3)
    phi = random_polyvector(rng, m, 2, n_terms=2)
    lhs = F * skorokhod(phi)
    rhs = skorokhod(phi.mul(F)) + malliavin_derivative(F).inner(phi)
    return _defect(lhs, rhs)


def _case_l0_skorokhod(rng):
    m = int(rng.integers(1, 6))
    lam = _rational_eigenvalues(rng, m)
    F = random_polynomial(rng, m, 4)
    ADF = PolyVector(c * (-l) for c, l in zip(malliavin_derivative(F), lam))
    return _defect(l0_apply(F, lam), skorokhod(ADF))


def _case_l0_commutes(rng):
    m = int(rng.integers(1, 6))
    lam = _rational_eigenvalues(rng, m)
    F = random_polynomial(rng, m, 4)
    return _defect(l0_apply(number_operator(F), lam), number_operator(l0_apply(F, lam)))


def _g_setup(rng):
    m = int(rng.integers(2, 5))
    B = _coerce_array(random_null_tensor(rng, m))
    R = _coerce_array(_rational_matrix(rng, m))
    return m, B, R


def _case_g_split(rng):
    m, B, R = _g_setup(rng)
    F = random_polynomial(rng, m, 4)
    return _defect(g_apply(F, B, R), g_apply(F, B, R, "plus") + g_apply(F, B, R, "minus"))


def _case_g_antisymmetry(rng):
    m, B, R = _g_setup(rng)
    F, G = random_polynomial(rng, m, 3), random_polynomial(rng, m, 3)
    d1 = _defect(expectation(g_apply(F, B, R, "plus") * G), -expectation(F * g_apply(G, B, R, "minus")))
    d2 = _defect(expectation(g_apply(F, B, R) * G), -expectation(F * g_apply(G, B, R)))
    return max(d1, d2)


def _case_n_shift(rng):
    m, B, R = _g_setup(rng)
    F = random_polynomial(rng, m, 4)
    NF = number_operator(F)
    Gp, Gm = g_apply(F, B, R, "plus"), g_apply(F, B, R, "minus")
    d1 = _defect(number_operator(Gp), g_apply(NF, B, R, "plus") + Gp)
    d2 = _defect(number_operator(Gm) - g_apply(NF, B, R, "minus"), -Gm)
    return max(d1, d2)


def _case_n_calculus(rng):
    m = int(rng.integers(1, 6))
    F = random_polynomial(rng, m, 4)
    k = int(rng.integers(m))
    d1 = _defect(number_operator(F.diff(k)), apply_spectral_function(F, lambda n: n - 1 if n >= 1 else 0).diff(k))
    V = random_polyvector(rng, m, 3, n_terms=2)
    d2 = _defect(
        number_operator(skorokhod(V)),
        skorokhod(PolyVector(apply_spectral_function(c, lambda n: n + 1) for c in V)),
    )
    return max(d1, d2)


def _case_second_malliavin(rng):
    m = int(rng.integers(1, 6))
    lam = _rational_eigenvalues(rng, m)
    lhs, rhs = second_malliavin_sides(random_polynomial(rng, m, 4), lam)
    return _defect(lhs, rhs)


def _case_circular(rng):
    """A symmetric tensor with vanishing cubic form satisfies the circular identity."""
    m = int(rng.integers(2, 6))
    if rng.random() < 0.5:
        B = random_null_tensor(rng, m)
    else:
        # sine tensor in units of pi / sqrt(2): m (delta_{k+l,m} - delta_{|k-l|,m})
        k = np.arange(1, m + 1)
        kk, ll, mm = np.meshgrid(k, k, k, indexing="ij")
        B = (mm * ((kk + ll == mm).astype(int) - (np.abs(kk - ll) == mm))).astype(object)
    B = _coerce_array(B)
    worst = 0.0
    for _ in range(3):
        f = _coerce_array(np.vectorize(Fraction, otypes=[object])(rng.integers(-4, 5, m)))
        cubic = np.einsum("k,l,m,klm->", f, f, f, B) if B.dtype != object else sum(
            f[a] * f[b] * f[c] * B[a, b, c] for a in range(m) for b in range(m) for c in range(m)
        )
        worst = max(worst, abs(float(cubic)))
    if worst > (0 if wick.get_arithmetic() == "exact" else FLOAT_TOL):
        return float("inf")  # hypothesis violated: generator error
    circ = B + B.transpose(2, 0, 1) + B.transpose(1, 2, 0)
    return max(abs(float(c)) for c in circ.ravel())


IDENTITY_SUITES = {
    "multiplication_formula_skorokhod": _case_multiplication,
    "L0_equals_skorokhod_of_minus_ADF": _case_l0_skorokhod,
    "L0_commutes_with_N": _case_l0_commutes,
    "G_equals_G_plus_plus_G_minus": _case_g_split,
    "G_plus_G_minus_antisymmetry": _case_g_antisymmetry,
    "N_shift_of_G_plus_and_G_minus": _case_n_shift,
    "N_calculus": _case_n_calculus,
    "second_Malliavin_identity": _case_second_malliavin,
    "circular_identity_B": _case_circular,
}


def identity_suites(n_instances: int = 100, seed: int = 0, arithmetic: str = "exact", keys=None) -> list:
    """Run the randomized identity suites; each gets its own child seed."""
    out = []
    keys = list(IDENTITY_SUITES) if keys is None else list(keys)
    tol = 0.0 if arithmetic == "exact" else FLOAT_TOL
    with wick.arithmetic(arithmetic):
        for j, key in enumerate(keys):
            rng = np.random.default_rng([seed, j])
            t0 = time.perf_counter()
            worst = 0.0
            for _ in range(n_instances):
                worst = max(worst, IDENTITY_SUITES[key](rng))
            passed = worst <= tol
            detail = f"{n_instances} instances, max defect {worst:.3g} ({arithmetic})"
            out.append(SuiteResult(key, passed, worst, detail, n_instances, seconds=time.perf_counter() - t0))
    return out


# --- model suites -----------------------------------------------------------------


def _timed(key, fn, trend_only=False) -> SuiteResult:
    t0 = time.perf_counter()
    try:
        passed, value, detail = fn()
    except BurgersGalerkinError as exc:
        passed, value, detail = False, None, f"error: {exc}"
    if trend_only:
        passed = None
    return SuiteResult(key, passed, value, detail, trend_only=trend_only, seconds=time.perf_counter() - t0)


def _resize(model: SpectralModel, M: int) -> SpectralModel:
    params = {k: v for k, v in model.params.items() if k != "basis_size"}
    return build_model(model.kind, M, params, model.components)


def model_suites(
    model: SpectralModel,
    tensor: CouplingTensor | None = None,
    rho=None,
    seed: int = 0,
    thorough: bool = True,
) -> list:
    """Assumption, tensor, rho_N, generator and resolvent checks for one model."""
    rng = np.random.default_rng([seed, 1000])
    tensor = assemble_coupling(model) if tensor is None else tensor
    kind = model.kind
    sine_based = kind != "neumann_hyperviscous"
    out = []

    def form_symmetry():
        if model.sine_form is None:
            err = float(np.abs(model.form_matrix() - model.form_matrix().T).max())
        else:
            V, Q = model.sine_coefficients, model.sine_form
            err = max(
                float(np.abs(Q - Q.T).max()),
                float(np.abs(V.T @ Q @ V - np.diag(model.eigenvalues)).max() / model.eigenvalues.max()),
            )
        return err <= 1e-10, err, f"form symmetry / diagonalization error {err:.2e}"

    def coercivity():
        fb = model_mod.form_bounds(model, rng, 500)
        ok = fb["c_exact"] > 0 and np.isfinite(fb["C_exact"]) and fb["c_empirical"] >= fb["c_exact"] * (1 - 1e-9)
        return ok, fb, f"c = {fb['c_exact']:.4g}, C = {fb['C_exact']:.4g} on Vdot"

    def closed_vs_quad():
        m16 = model if model.mode_count <= 16 else _resize(model, 16)
        a = assemble_coupling(m16, tensor.gamma, "closed_form").entries
        b = assemble_coupling(m16, tensor.gamma, "quadrature").entries
        err = float(np.abs(a - b).max())
        return err <= 1e-8, err, f"max |closed form - quadrature| = {err:.2e} at M = {m16.mode_count}"

    def null_form():
        err = tensor.null_form_error(rng, 500)
        return err <= 1e-8, err, f"max |<B(f,f),f>| / |f|^3 = {err:.2e}"

    def circular_model():
        err = float(np.abs(tensor.circular_defect()).max())
        return err <= 1e-8, err, f"max circular defect {err:.2e}"

    def divergence():
        u = rng.standard_normal((100, tensor.size))
        worst = 0.0
        for N in range(1, model.mode_count + 1):
            idx = tensor.active_indices(N)
            G = nonlinearity.drift_eval(tensor, u, N)
            div = nonlinearity.drift_jacobian_trace(tensor, u, N) - np.einsum("ik,ik->i", u[:, idx], G)
            scale = 1 + np.abs(tensor.entries).max() * np.linalg.norm(u, axis=1) ** 3
            worst = max(worst, float(np.max(np.abs(div) / scale)))
        return worst <= 1e-8, worst, f"relative Gaussian divergence {worst:.2e}"

    def b_bound():
        Ms = (8, 16, 32)
        vals = [
            nonlinearity.coupling_operator_norm(assemble_coupling(_resize(model, M), tensor.gamma)) for M in Ms
        ]
        growth = max(vals[i + 1] / vals[i] for i in range(len(vals) - 1))
        return growth < 1.2, vals, f"norms {', '.join(f'{v:.4g}' for v in vals)} at M = {Ms}"

    out.append(_timed("assumption_1_quadratic_form_symmetry", form_symmetry))
    out.append(_timed("assumption_1_coercivity", coercivity))
    out.append(_timed("coupling_tensor_closed_form_vs_quadrature", closed_vs_quad))
    null_key = "boundary_renormalized_null_form" if kind == "neumann_hyperviscous" else "null_form_B"
    out.append(_timed(null_key, null_form))
    out.append(_timed("circular_identity_B_model", circular_model))
    out.append(_timed("gaussian_divergence_free_drift", divergence))
    out.append(_timed("B_boundedness", b_bound, trend_only=(kind == "regional_fractional")))

    def rho_bounds():
        ub = approx.uniform_bounds(N_grid=(8, 16, 32, 64), K=256)
        hh = max(ub["H_H"])
        ok = hh <= 2.05 and abs(ub["slope_H_V"] - 1) <= 0.2
        return ok, ub, f"max |rho_N|_(H,H) = {hh:.4f}, H->V slope {ub['slope_H_V']:.3f}"

    def tensorization():
        r = rho if rho is not None else approx.build_rho(model, "moving_average", max(2, model.mode_count // 2))
        res = approx.tensorization_check(r, rng, 100)
        return res["max_ratio"] <= res["bound"] * (1 + 1e-10), res, (
            f"max ratio {res['max_ratio']:.4g} <= bound {res['bound']:.4g}"
        )

    if sine_based:
        out.append(_timed("rho_N_bounds", rho_bounds))
        out.append(_timed("tensor_operator_bound", tensorization))

    if thorough:

        def trace_bound():
            Ms = (16, 32, 64)
            vals = [model_mod.trace_operator_norm(M, 1.0) for M in Ms]
            growth = max(vals[i + 1] / vals[i] for i in range(len(vals) - 1))
            return growth < 1.1, vals, f"norms {', '.join(f'{v:.4g}' for v in vals)} at M = {Ms}"

        out.append(_timed("trace_operator_bound", trace_bound))
        if kind == "neumann_hyperviscous":

            def neumann_derivative():
                theta = model.params["theta"]
                Ms = (16, 32, 64)
                # bounded H^theta -> H^(theta - delta) needs delta > 3/2
                vals = [model_mod.neumann_derivative_norm(M, theta, 1.6) for M in Ms]
                growth = max(vals[i + 1] / vals[i] for i in range(len(vals) - 1))
                return growth < 1.1, vals, f"norms {', '.join(f'{v:.4g}' for v in vals)} at M = {Ms}"

            out.append(_timed("neumann_derivative_regularity", neumann_derivative))

    Mb = min(model.total_modes, 4)
    basis = CylinderSpaceBasis(model, Mb, 3)

    def l0_bounds():
        lo, hi = generator.l0_form_bounds(basis)
        if kind == "dirichlet_laplacian":
            ok = lo >= 1 - 1e-8 and hi <= 1 + 1e-8
        else:
            ok = lo > 0
        return ok, [lo, hi], f"<(1-L0)F,F> / |F|^2_H1 in [{lo:.6g}, {hi:.6g}]"

    def g_bounds():
        vals = []
        for M in (4, 8):
            mm = _resize(model, M)
            b = CylinderSpaceBasis(mm, min(mm.total_modes, 4), 2)
            vals.append(float(generator.g_bound_ratios(b, assemble_coupling(mm, tensor.gamma), rng, 20).max()))
        return True, vals, f"max |GF|_H-1 / |F|_H1_1 = {', '.join(f'{v:.4g}' for v in vals)} at M = (4, 8)"

    def resolvent():
        F_sharp = wick.variable(0, Mb) * wick.variable(Mb - 1, Mb) + wick.variable(1 % Mb, Mb)
        worst_ratio, worst_bound, worst_res = 0.0, 0.0, 0.0
        ok = True
        for Nc in (1, 2, 3):
            res = resolvent_solve(F_sharp, basis, tensor, Nc)
            c = res.coercivity_min
            worst_res = max(worst_res, res.residual)
            worst_bound = max(worst_bound, res.h1_norm * c / res.rhs_hminus1_norm)
            if kind == "dirichlet_laplacian":
                dev = float(np.abs(res.coercivity_ratio - 1).max())
                worst_ratio = max(worst_ratio, dev)
                ok &= dev <= 1e-8
            ok &= c > 0 and res.residual < 1e-8 and res.h1_norm <= (1 + 1e-6) * res.rhs_hminus1_norm / c
        detail = f"residual {worst_res:.2e}, |F|c/|F#| <= {worst_bound:.6f}"
        if kind == "dirichlet_laplacian":
            detail += f", coercivity deviation {worst_ratio:.2e}"
        return bool(ok), {"residual": worst_res, "bound_ratio": worst_bound}, detail

    out.append(_timed("L0_bounds", l0_bounds))
    out.append(_timed("G_bounds", g_bounds, trend_only=True))
    out.append(_timed("resolvent_lax_milgram", resolvent))
    return out


def monte_carlo_suite(model, tensor, seed=0, N=None, dt=1e-3, T=2.0, ensemble=4096, threads=1) -> SuiteResult:
    from ..sim import SimConfig, ensemble_stats

    N = min(model.mode_count, 8) if N is None else N
    # 0.08 at 4096 trajectories, scaled like the Monte Carlo standard error below that
    tol = 0.08 * max(1.0, math.sqrt(4096 / ensemble))

    def run():
        st = ensemble_stats(SimConfig(model, tensor, N, dt, T, ensemble, seed=seed, threads=threads))
        dev, ks = st.max_covariance_deviation, float(st.ks[-1].max())
        ok = dev <= tol and ks < st.ks_critical
        return ok, {"max_covariance_deviation": dev, "max_ks": ks, "blowups": st.blowups}, (
            f"max |C - I| = {dev:.4f} (tolerance {tol:.3f}), max KS = {ks:.4f} (critical {st.ks_critical:.4f}), blowups {st.blowups}"
        )

    return _timed("invariance_of_mu_N", run)


def verify_all(
    model: SpectralModel,
    tensor: CouplingTensor | None = None,
    rho=None,
    arithmetic: str = "exact",
    n_instances: int = 100,
    seed: int = 0,
    monte_carlo: bool = False,
    thorough: bool = True,
    threads: int = 1,
) -> VerificationReport:
    """Run every suite for ``model`` and collect a pass/fail matrix."""
    rep = VerificationReport(meta={"model": model.kind, "mode_count": model.mode_count, "arithmetic": arithmetic,
                                   "n_instances": n_instances, "seed": seed, "params": dict(model.params)})
    t0 = time.perf_counter()
    for res in identity_suites(n_instances, seed, arithmetic):
        rep.add(res)
    tensor = assemble_coupling(model) if tensor is None else tensor
    for res in model_suites(model, tensor, rho, seed, thorough):
        rep.add(res)
    if monte_carlo:
        rep.add(monte_carlo_suite(model, tensor, seed, threads=threads))
    rep.meta["seconds"] = round(time.perf_counter() - t0, 3)
    return rep
