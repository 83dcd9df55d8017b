import json
import math

import numpy as np
import pytest
from scipy import stats

from burgers_galerkin.approx import build_rho
from burgers_galerkin.errors import ValidationError
from burgers_galerkin.generator import CylinderSpaceBasis
from burgers_galerkin.model import build_model
from burgers_galerkin.nonlinearity import CouplingTensor, assemble_coupling, drift_eval
from burgers_galerkin.sim import (
    SimConfig,
    _Stepper,
    drift_difference_observable,
    energy_estimate_diag,
    ensemble_stats,
    integrate,
    ito_trick_diag,
    ks_critical_value,
    occupation_pvar,
    ou_integral_second_moment,
    ou_substep,
    ou_weighted_integral_second_moment,
    p_variation,
    trajectory_rng,
)
from burgers_galerkin.wick import constant, variable

PI = math.pi


@pytest.fixture(scope="module")
def dirichlet():
    m = build_model("dirichlet_laplacian", 8)
    return m, assemble_coupling(m)


def zero_tensor(m):
    return CouplingTensor(np.zeros((m.total_modes,) * 3), m)


def test_ou_substep_preserves_standard_gaussian():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(100_000)
    for lam_h in (1e-3, 0.3, 5.0):
        d = math.exp(-lam_h)
        y = ou_substep(x, d, math.sqrt(1 - d * d), rng.standard_normal(x.size))
        assert stats.kstest(y, "norm").statistic < ks_critical_value(x.size)


def test_stepper_drift_matches_nonlinearity(dirichlet, rng):
    m, T = dirichlet
    cfg = SimConfig(m, T, 5, 1e-3, 1e-3)
    u = rng.standard_normal((4, 5))
    np.testing.assert_allclose(_Stepper(cfg).drift(u), drift_eval(T, u, 5), atol=1e-12)
    np.testing.assert_allclose(_Stepper(cfg).drift(np.zeros((1, 5)))[0], -T.renormalization(np.arange(5)), atol=1e-12)


def test_config_validation(dirichlet):
    m, T = dirichlet
    with pytest.raises(ValidationError):
        SimConfig(m, T, 8, 0.0, 1.0)
    with pytest.raises(ValidationError):
        SimConfig(m, T, 8, 0.1, 0.05)
    with pytest.raises(ValidationError):
        SimConfig(m, T, 8, 0.1, 1.0, ensemble=0)
    with pytest.raises(ValidationError):
        SimConfig(m, T, 9, 0.1, 1.0)
    with pytest.raises(ValidationError):
        SimConfig(m, T, 8, 0.1, 1.0, integrator="leapfrog")
    with pytest.raises(ValidationError):
        SimConfig(m, T, 2, 0.1, 1.0, initial={"mean": [0, 0], "covariance": [[1, 2], [0, 1]]})


def test_pure_ou_keeps_identity_covariance(dirichlet):
    m, _ = dirichlet
    cfg = SimConfig(m, zero_tensor(m), 8, 1e-2, 0.5, ensemble=2048, seed=11, save_every=10)
    st = ensemble_stats(cfg)
    assert st.covariance.shape == (6, 8, 8)
    for C in st.covariance:
        assert np.abs(C - np.eye(8)).max() <= 0.1
    assert st.ks.max() < ks_critical_value(2048)
    assert st.blowups == 0


def test_ou_autocovariance(dirichlet):
    m = build_model("neumann_hyperviscous", 2, {"theta": 1.5})
    lam = m.eigenvalues[1]
    cfg = SimConfig(m, zero_tensor(m), 2, 0.01, 0.3, ensemble=4096, seed=2, save_every=5)
    tr = integrate(cfg)
    u = tr.paths[:, :, 1]
    acov = (u[:, :1] * u).mean(axis=0)
    se = (u[:, :1] * u).std(axis=0) / math.sqrt(u.shape[0])
    assert np.all(np.abs(acov - np.exp(-lam * tr.times)) <= 4 * se + 1e-12)


def test_reproducible_and_thread_invariant(dirichlet):
    m, T = dirichlet
    base = dict(model=m, tensor=T, N=6, dt=1e-3, T=0.05, ensemble=300, seed=42)
    a = ensemble_stats(SimConfig(**base))
    b = ensemble_stats(SimConfig(**base))
    c = ensemble_stats(SimConfig(**base, threads=3))
    assert a.to_json() == b.to_json() == c.to_json()
    d = ensemble_stats(SimConfig(**{**base, "seed": 43}))
    assert a.to_json() != d.to_json()


def test_trajectory_streams_are_independent_of_batching():
    g1, g2 = trajectory_rng(7, 3), trajectory_rng(7, 3)
    x = g1.standard_normal((5, 2, 3))
    y = np.concatenate([g2.standard_normal((2, 2, 3)), g2.standard_normal((3, 2, 3))])
    assert np.array_equal(x, y)


def test_blowup_fraction_small_without_taming(dirichlet):
    m, T = dirichlet
    st = ensemble_stats(SimConfig(m, T, 8, 1e-3, 2.0, ensemble=256, seed=9))
    assert st.blowups / 256 < 0.01


def test_blowups_are_counted_and_excluded():
    m = build_model("dirichlet_laplacian", 4)
    T = assemble_coupling(m)
    wide = {"mean": [0.0] * 4, "covariance": (25 * np.eye(4)).tolist()}
    st = ensemble_stats(SimConfig(m, T, 4, 0.05, 0.5, ensemble=40, seed=1, initial=wide))
    assert 0 < st.blowups < 40 and st.n_used + st.blowups == 40


def test_euler_maruyama_cross_check(dirichlet):
    m, T = dirichlet
    st = ensemble_stats(SimConfig(m, T, 4, 2e-4, 0.2, ensemble=1024, seed=5, integrator="euler_maruyama"))
    assert st.max_covariance_deviation <= 0.15


def test_custom_initial_law(dirichlet):
    m, _ = dirichlet
    init = {"mean": [1.0, -1.0], "covariance": [[0.5, 0.1], [0.1, 0.3]]}
    tr = integrate(SimConfig(m, zero_tensor(m), 2, 1e-3, 1e-3, ensemble=4000, seed=3, initial=init))
    x0 = tr.paths[:, 0]
    np.testing.assert_allclose(x0.mean(axis=0), init["mean"], atol=0.05)
    np.testing.assert_allclose(np.cov(x0.T), init["covariance"], atol=0.05)


def test_ou_oracles_closed_form():
    lam, T = 3.0, 0.7
    s = np.linspace(0, T, 20001)
    # E[(int eta)^2] = 2 int_0^T (T - s) e^{-lam s} ds
    direct = 2 * np.trapezoid((T - s) * np.exp(-lam * s), s)
    assert ou_integral_second_moment(lam, T) == pytest.approx(direct, rel=1e-7)
    assert ou_weighted_integral_second_moment(lam, T) == pytest.approx(lam**2 * direct, rel=1e-7)


def test_ito_trick_pure_ou_matches_oracle():
    m = build_model("dirichlet_laplacian", 2)
    cfg = SimConfig(m, zero_tensor(m), 2, 1e-3, 1.0, ensemble=2000, seed=17)
    tab = ito_trick_diag(cfg, [1.0, 0.0], (0.25, 0.5, 1.0))
    oracle = ou_weighted_integral_second_moment(PI**2, tab.T)
    assert np.all(np.abs(tab.final - oracle) <= 3 * tab.final_se)
    assert np.all(tab.ratio <= 16)
    assert np.all(tab.lhs >= tab.final)
    assert tab.to_csv().splitlines()[0].startswith("T,lhs_sup")


def test_energy_estimate_constant_and_consistency():
    m = build_model("dirichlet_laplacian", 3)
    T = assemble_coupling(m)
    basis = CylinderSpaceBasis(m, 3, 2)
    cfg = SimConfig(m, T, 3, 1e-3, 0.5, ensemble=50, seed=8)
    Tg = np.array([0.25, 0.5])
    one = energy_estimate_diag(cfg, constant(1, 3), basis, Tg)
    np.testing.assert_allclose(one.lhs, Tg**2, rtol=1e-12)
    np.testing.assert_allclose(one.ratio, Tg**2 / (Tg + Tg**2), rtol=1e-12)
    lam1 = PI**2
    e = energy_estimate_diag(cfg, variable(0, 3) * lam1, basis, Tg)
    i = ito_trick_diag(cfg, [1.0, 0.0, 0.0], Tg)
    np.testing.assert_allclose(e.lhs, i.lhs, rtol=1e-10)


def test_t_grid_validation(dirichlet):
    m, T = dirichlet
    cfg = SimConfig(m, T, 2, 0.1, 1.0)
    with pytest.raises(ValidationError):
        ito_trick_diag(cfg, [1.0, 0.0], (0.25,))
    with pytest.raises(ValidationError):
        ito_trick_diag(cfg, [1.0, 0.0], (2.0,))


def test_p_variation_examples():
    t = np.linspace(0, 2, 65)
    for p in (1.0, 1.5, 1.9):
        assert p_variation(3 * t, p) == pytest.approx(6.0)
    x = np.array([0.0, 1.0, 0.0, 1.0])
    assert p_variation(x, 1.0) == pytest.approx(3.0)
    assert p_variation(x, 2.0) == pytest.approx(math.sqrt(3.0))


def test_occupation_pvar_constant_and_total_variation():
    m = build_model("dirichlet_laplacian", 3)
    T = assemble_coupling(m)
    cfg = SimConfig(m, T, 3, 1 / 256, 1.0, ensemble=3, seed=1)
    res = occupation_pvar(cfg, constant(2, 3), (1.5, 1.9), depth=6)
    assert res["estimates"]["1.5"] == pytest.approx(2.0)
    res = occupation_pvar(cfg, variable(0, 3), (1.0, 1.5, 1.9), depth=8)
    for p in ("1.0", "1.5", "1.9"):
        assert np.all(np.diff(res["per_depth"][p]) >= -1e-12)
    # p = 1: total variation equals int |F| up to the sampling resolution
    tr = integrate(SimConfig(m, T, 3, 1 / 256, 1.0, ensemble=3, seed=1, save_every=1))
    u0 = tr.paths[:, :, 0]
    tv = np.mean(np.sum(np.abs(0.5 * (u0[:, 1:] + u0[:, :-1])), axis=1) / 256)
    assert res["estimates"]["1.0"] == pytest.approx(tv, rel=0.05)


def test_occupation_pvar_validation():
    m = build_model("dirichlet_laplacian", 2)
    cfg = SimConfig(m, zero_tensor(m), 2, 0.01, 1.0)
    with pytest.raises(ValidationError):
        occupation_pvar(cfg, constant(1, 2), depth=15)
    with pytest.raises(ValidationError):
        occupation_pvar(cfg, constant(1, 2), depth=3)
    with pytest.raises(ValidationError):
        occupation_pvar(SimConfig(m, zero_tensor(m), 2, 1 / 64, 1.0), constant(1, 2), (2.5,), depth=3)


def test_drift_difference_observable_matches_direct_sum(rng):
    m = build_model("dirichlet_laplacian", 6)
    T = assemble_coupling(m)
    r1, r2 = build_rho(m, "moving_average", 4), build_rho(m, "spectral_projection", 3)
    f = rng.standard_normal(6)
    u = rng.standard_normal((3, 6))
    B = T.entries

    def direct(R, x):
        v = R @ x
        return np.einsum("k,l,klm,m->", v, v, B, f) - np.einsum("ak,bk,abm,m->", R, R, B, f)

    want = [direct(r1.matrix, x) - direct(r2.matrix, x) for x in u]
    np.testing.assert_allclose(drift_difference_observable(T, r1, r2, f)(u), want, atol=1e-10)


def test_drift_difference_pvar_decreases():
    # the pointwise observable does not converge under white noise; its time integral does
    m = build_model("dirichlet_laplacian", 16)
    T = assemble_coupling(m)
    f = np.eye(16)[1]
    cfg = SimConfig(m, zero_tensor(m), 16, 1 / 1024, 1.0, ensemble=16, seed=1)
    est = []
    for n1 in (2, 4, 8):
        obs = drift_difference_observable(
            T, build_rho(m, "spectral_projection", n1), build_rho(m, "spectral_projection", 2 * n1), f
        )
        est.append(occupation_pvar(cfg, obs, (1.5,), depth=6)["estimates"]["1.5"])
    assert est[0] > est[1] > est[2]


def test_outputs(tmp_path, dirichlet):
    m, T = dirichlet
    st = ensemble_stats(SimConfig(m, T, 3, 1e-2, 0.1, ensemble=20, seed=1))
    data = json.loads(st.to_json(tmp_path / "stats.json"))
    assert data["config"]["dt_model_time"] == 1e-2 and "Philox" in data["config"]["rng"]
    csv = st.covariance_csv(tmp_path / "cov.csv").splitlines()
    assert csv[0] == "k,l,covariance,deviation,se,band3" and len(csv) == 1 + 6
    tr = integrate(SimConfig(m, T, 2, 1e-2, 0.02, ensemble=2, seed=1, save_every=1))
    assert tr.to_csv().splitlines()[0] == "t,trajectory,u0,u1"
    assert (tmp_path / "stats.json").exists() and not (tmp_path / "stats.json.tmp").exists()
