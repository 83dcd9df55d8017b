"""Ensemble simulation of the projected Galerkin SDE and its diagnostics.

On the active coordinates ``u_k`` (first ``N`` modes of every component)

    du_k = (-lambda_k u_k + G_k(u)) dt + sqrt(2 lambda_k) dW^k,

with the renormalized drift ``G_k(u) = sum_{l,m} (u_l u_m - delta_lm) B[l, m, k]``.
The standard Gaussian ``N(0, I)`` is invariant.

Random streams: trajectory ``i`` uses
``Generator(Philox(SeedSequence(seed, spawn_key=(i,))))`` and draws its
initial state first, then the step noise in time order.  Trajectories are
processed in fixed-size batches and merged in batch order, so results do not
depend on the thread count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import RunError, ValidationError
from .model import SpectralModel
from .nonlinearity import CouplingTensor
from .wick import GaussianPolynomial

__all__ = [
    "SimConfig",
    "SimStats",
    "Trajectory",
    "RNG_ALGORITHM",
    "trajectory_rng",
    "ou_substep",
    "integrate",
    "ensemble_stats",
    "ito_trick_diag",
    "energy_estimate_diag",
    "occupation_pvar",
    "p_variation",
    "drift_difference_observable",
    "ou_integral_second_moment",
    "ou_weighted_integral_second_moment",
    "ks_critical_value",
]

RNG_ALGORITHM = "numpy.Philox(SeedSequence(seed, spawn_key=(trajectory,)))"
INTEGRATORS = ("strang_ou_rk4", "euler_maruyama")
BATCH = 128
CHUNK = 256
BLOWUP_LEVEL = 1e8


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def ks_critical_value(n: int) -> float:
    """Asymptotic 0.1% Kolmogorov-Smirnov critical value ``1.95 / sqrt(n)``."""
    return 1.95 / math.sqrt(n)


@dataclass
class SimConfig:
    """Settings of one ensemble run.

    ``initial`` is ``"stationary_gaussian"`` or a dict with ``mean`` and
    ``covariance`` over the active coordinates.  ``save_every`` sets the
    checkpoint spacing in steps.
    """

    model: SpectralModel
    tensor: CouplingTensor
    N: int
    dt: float
    T: float
    ensemble: int = 1
    seed: int = 0
    integrator: str = "strang_ou_rk4"
    taming: bool = False
    initial: object = "stationary_gaussian"
    save_every: int | None = None
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.T >= self.dt:
            raise ValidationError("T must be at least dt")
        if self.ensemble < 1:
            raise ValidationError("ensemble must be at least 1")
        if self.integrator not in INTEGRATORS:
            raise ValidationError(f"integrator must be one of {INTEGRATORS}")
        if not 1 <= self.N <= self.model.mode_count:
            raise ValidationError(f"N must lie in [1, {self.model.mode_count}]")
        if self.tensor.size != self.model.total_modes:
            raise ValidationError("tensor and model sizes differ")
        if self.threads < 1:
            raise ValidationError("threads must be at least 1")
        n = self.active.size
        if self.initial != "stationary_gaussian":
            if not isinstance(self.initial, dict) or set(self.initial) != {"mean", "covariance"}:
                raise ValidationError("initial must be 'stationary_gaussian' or {'mean', 'covariance'}")
            mean = np.asarray(self.initial["mean"], float)
            cov = np.asarray(self.initial["covariance"], float)
            if mean.shape != (n,) or cov.shape != (n, n):
                raise ValidationError(f"initial mean/covariance must have sizes {n} and {(n, n)}")
            if np.abs(cov - cov.T).max() > 1e-12 or np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ValidationError("initial covariance must be symmetric positive semidefinite")

    @property
    def active(self) -> np.ndarray:
        return self.tensor.active_indices(self.N) if self.tensor.model is not None else np.arange(self.N)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.asarray(self.model.eigenvalues_full, float)[self.active]

    def describe(self) -> dict:
        return {
            "model": self.model.kind,
            "mode_count": self.model.mode_count,
            "N": self.N,
            "dt_model_time": self.dt,
            "T_model_time": self.T,
            "steps": self.steps,
            "ensemble": self.ensemble,
            "seed": self.seed,
            "integrator": self.integrator,
            "taming": self.taming,
            "initial": self.initial if isinstance(self.initial, str) else "custom",
            "rng": RNG_ALGORITHM,
        }


class _Stepper:
    """Vectorized one-step maps on a batch of states."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        ks, ls, W, r = cfg.tensor._pair_data(cfg.N)
        self.ks, self.ls, self.W, self.r = ks, ls, W, r
        lam = cfg.eigenvalues
        dt = cfg.dt
        self.lam = lam
        self.decay_half = np.exp(-lam * dt / 2.0)
        self.noise_half = np.sqrt(-np.expm1(-lam * dt))
        self.em_noise = np.sqrt(2.0 * lam * dt)
        self.n_noise = 2 if cfg.integrator == "strang_ou_rk4" else 1

    def drift(self, u: np.ndarray) -> np.ndarray:
        G = (u[:, self.ks] * u[:, self.ls]) @ self.W - self.r
        if self.cfg.taming:
            G = G / (1.0 + self.cfg.dt * np.linalg.norm(G, axis=1, keepdims=True))
        return G

    def step(self, u: np.ndarray, xi: np.ndarray) -> np.ndarray:
        dt = self.cfg.dt
        if self.cfg.integrator == "euler_maruyama":
            return u + dt * (-self.lam * u + self.drift(u)) + self.em_noise * xi[:, 0]
        u = ou_substep(u, self.decay_half, self.noise_half, xi[:, 0])
        k1 = self.drift(u)
        k2 = self.drift(u + 0.5 * dt * k1)
        k3 = self.drift(u + 0.5 * dt * k2)
        k4 = self.drift(u + dt * k3)
        u = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return ou_substep(u, self.decay_half, self.noise_half, xi[:, 1])


def ou_substep(u, decay, noise_scale, xi) -> np.ndarray:
    """Exact Ornstein-Uhlenbeck map over time ``h``: ``e^{-lambda h} u + sqrt(1 - e^{-2 lambda h}) xi``.

    Here ``decay = e^{-lambda h}`` and ``noise_scale = sqrt(1 - decay^2)``;
    ``N(0, I)`` is preserved exactly.
    """
    return decay * u + noise_scale * xi


def _initial_state(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.active.size
    z = rng.standard_normal(n)
    if cfg.initial == "stationary_gaussian":
        return z
    mean = np.asarray(cfg.initial["mean"], float)
    cov = np.asarray(cfg.initial["covariance"], float)
    w, V = np.linalg.eigh(cov)
    return mean + V @ (np.sqrt(np.clip(w, 0, None)) * z)


def _run_batch(cfg: SimConfig, start: int, stop: int, observables=(), record_every: int | None = None):
    """Integrate trajectories ``start..stop-1``.

    Returns the states at every ``record_every``-th step (including time 0),
    the running time integrals of ``observables`` (trapezoid rule) at the same
    record times, and the blow-up mask.
    """
    stepper = _Stepper(cfg)
    rngs = [trajectory_rng(cfg.seed, i) for i in range(start, stop)]
    u = np.stack([_initial_state(cfg, g) for g in rngs])
    B, n = u.shape
    steps = cfg.steps
    rec = steps if record_every is None else record_every
    blown = np.zeros(B, bool)
    states = [u.copy()]
    obs_prev = [np.asarray(f(u), float) for f in observables]
    integrals = np.zeros((len(observables), B))
    ints = [integrals.copy()]
    done = 0
    while done < steps:
        chunk = min(CHUNK, steps - done)
        xi = np.stack([g.standard_normal((chunk, stepper.n_noise, n)) for g in rngs], axis=1)
        for s in range(chunk):
            u = stepper.step(u, xi[s])
            bad = ~np.all(np.isfinite(u), axis=1) | (np.abs(u).max(axis=1) > BLOWUP_LEVEL)
            if bad.any():
                blown |= bad
                u[bad] = 0.0
            if observables:
                for j, f in enumerate(observables):
                    cur = np.asarray(f(u), float)
                    integrals[j] += 0.5 * cfg.dt * (obs_prev[j] + cur)
                    obs_prev[j] = cur
            done += 1
            if done % rec == 0:
                states.append(u.copy())
                ints.append(integrals.copy())
    return np.stack(states, axis=1), np.stack(ints, axis=2), blown


def _batches(cfg: SimConfig):
    return [(s, min(s + BATCH, cfg.ensemble)) for s in range(0, cfg.ensemble, BATCH)]


def _map_batches(cfg: SimConfig, fn):
    jobs = _batches(cfg)
    if cfg.threads == 1 or len(jobs) == 1:
        return [fn(a, b) for a, b in jobs]
    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        return list(ex.map(lambda ab: fn(*ab), jobs))


@dataclass
class Trajectory:
    """Coefficient paths ``paths[trajectory, save index, coordinate]``."""

    times: np.ndarray
    paths: np.ndarray
    blown_up: np.ndarray

    def to_csv(self, path=None) -> str:
        n = self.paths.shape[2]
        lines = ["t,trajectory," + ",".join(f"u{k}" for k in range(n))]
        for i in range(self.paths.shape[0]):
            for j, t in enumerate(self.times):
                vals = ",".join(f"{v:.12e}" for v in self.paths[i, j])
                lines.append(f"{t:.12e},{i},{vals}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            _atomic_write(path, text)
        return text


def integrate(cfg: SimConfig) -> Trajectory:
    """Run the ensemble and keep the states every ``save_every`` steps."""
    every = cfg.save_every or cfg.steps
    parts = _map_batches(cfg, lambda a, b: _run_batch(cfg, a, b, record_every=every))
    paths = np.concatenate([p[0] for p in parts])
    blown = np.concatenate([p[2] for p in parts])
    times = cfg.dt * every * np.arange(paths.shape[1])
    return Trajectory(times, paths, blown)


@dataclass
class SimStats:
    """Moments and marginal KS statistics at the checkpoints of an ensemble run."""

    times: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    covariance_se: np.ndarray
    fourth_moment: np.ndarray
    ks: np.ndarray
    ks_pvalue: np.ndarray
    n_used: int
    blowups: int
    config: dict = field(default_factory=dict)

    @property
    def final_covariance(self) -> np.ndarray:
        return self.covariance[-1]

    @property
    def max_covariance_deviation(self) -> float:
        C = self.covariance[-1]
        return float(np.abs(C - np.eye(C.shape[0])).max())

    @property
    def ks_critical(self) -> float:
        return ks_critical_value(self.n_used)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "times": [float(t) for t in self.times],
            "n_used": self.n_used,
            "blowups": self.blowups,
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "covariance_se": self.covariance_se.tolist(),
            "fourth_moment": self.fourth_moment.tolist(),
            "ks": self.ks.tolist(),
            "ks_pvalue": self.ks_pvalue.tolist(),
            "ks_critical": self.ks_critical,
            "max_covariance_deviation": self.max_covariance_deviation,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            _atomic_write(path, text)
        return text

    def covariance_csv(self, path=None) -> str:
        """Final-time table ``k,l,covariance,deviation,se,band3`` with the 3 sigma band."""
        C, S = self.covariance[-1], self.covariance_se[-1]
        lines = ["k,l,covariance,deviation,se,band3"]
        n = C.shape[0]
        for k in range(n):
            for l in range(k, n):
                dev = C[k, l] - (k == l)
                lines.append(f"{k},{l},{C[k, l]:.12e},{dev:.12e},{S[k, l]:.12e},{3 * S[k, l]:.12e}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            _atomic_write(path, text)
        return text


def ensemble_stats(cfg: SimConfig) -> SimStats:
    """Mean, covariance (with Monte Carlo standard errors), fourth moments and KS statistics.

    Checkpoints are every ``save_every`` steps (default: only the final time).
    Blown-up trajectories are excluded and counted.
    """
    every = cfg.save_every or cfg.steps
    parts = _map_batches(cfg, lambda a, b: _run_batch(cfg, a, b, record_every=every))
    states = np.concatenate([p[0] for p in parts])
    blown = np.concatenate([p[2] for p in parts])
    keep = states[~blown]
    n_used = keep.shape[0]
    if n_used == 0:
        raise RunError("all trajectories blew up")
    if n_used < 2:
        raise RunError("need at least two surviving trajectories for statistics")
    times = cfg.dt * every * np.arange(states.shape[1])
    means, covs, ses, m4s, kss, pvs = [], [], [], [], [], []
    for j in range(states.shape[1]):
        X = keep[:, j, :]
        prod = X[:, :, None] * X[:, None, :]
        means.append(X.mean(axis=0))
        covs.append(prod.mean(axis=0))
        ses.append(prod.std(axis=0, ddof=1) / math.sqrt(n_used))
        m4s.append((X**4).mean(axis=0))
        res = [stats.kstest(X[:, k], "norm") for k in range(X.shape[1])]
        kss.append([r.statistic for r in res])
        pvs.append([r.pvalue for r in res])
    return SimStats(
        times=times,
        mean=np.array(means),
        covariance=np.array(covs),
        covariance_se=np.array(ses),
        fourth_moment=np.array(m4s),
        ks=np.array(kss),
        ks_pvalue=np.array(pvs),
        n_used=n_used,
        blowups=int(blown.sum()),
        config=cfg.describe(),
    )


# --- time-integral diagnostics ----------------------------------------------------


def ou_integral_second_moment(lam: float, T):
    """``E[(int_0^T eta_s ds)^2]`` for a stationary OU process with rate ``lam``."""
    T = np.asarray(T, float)
    return 2.0 * (T / lam + np.expm1(-lam * T) / lam**2)


def ou_weighted_integral_second_moment(lam: float, T):
    """``E[(int_0^T lam eta_s ds)^2] = 2 lam T - 2 (1 - e^{-lam T})``."""
    T = np.asarray(T, float)
    return 2.0 * lam * T + 2.0 * np.expm1(-lam * T)


def _grid_steps(cfg: SimConfig, T_grid) -> np.ndarray:
    T_grid = np.asarray(T_grid, float)
    idx = np.rint(T_grid / cfg.dt).astype(int)
    if np.any(np.abs(idx * cfg.dt - T_grid) > 1e-9 * np.maximum(T_grid, 1)) or np.any(idx < 1):
        raise ValidationError("every T in T_grid must be a positive multiple of dt")
    if idx.max() > cfg.steps:
        raise ValidationError("T_grid exceeds the configured horizon")
    return idx


def _sup_integrals(cfg: SimConfig, func, T_grid):
    """Per-trajectory ``sup_{t <= T} |int_0^t F|^2`` and ``|int_0^T F|^2`` for each ``T``."""
    idx = _grid_steps(cfg, T_grid)

    def run(a, b):
        states, ints, blown = _run_batch(cfg, a, b, observables=(func,), record_every=1)
        I = ints[0]
        sup = np.maximum.accumulate(I**2, axis=1)
        return sup[:, idx], I[:, idx] ** 2, blown

    parts = _map_batches(cfg, run)
    sup = np.concatenate([p[0] for p in parts])
    fin = np.concatenate([p[1] for p in parts])
    blown = np.concatenate([p[2] for p in parts])
    if blown.all():
        raise RunError("all trajectories blew up")
    return sup[~blown], fin[~blown], int(blown.sum())


@dataclass
class DiagnosticTable:
    """Monte Carlo left sides against reference right sides on a time grid."""

    name: str
    T: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    final: np.ndarray
    final_se: np.ndarray
    rhs: np.ndarray
    ratio: np.ndarray
    slope: float
    blowups: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "T": self.T.tolist(),
            "lhs_sup": self.lhs.tolist(),
            "lhs_sup_se": self.lhs_se.tolist(),
            "final_second_moment": self.final.tolist(),
            "final_second_moment_se": self.final_se.tolist(),
            "rhs": self.rhs.tolist(),
            "ratio": self.ratio.tolist(),
            "slope": self.slope,
            "blowups": self.blowups,
        }

    def to_csv(self, path=None) -> str:
        lines = ["T,lhs_sup,lhs_sup_se,final_second_moment,final_se,rhs,ratio,slope"]
        for row in zip(self.T, self.lhs, self.lhs_se, self.final, self.final_se, self.rhs, self.ratio):
            lines.append(",".join(f"{v:.12e}" for v in row) + f",{self.slope:.6f}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            _atomic_write(path, text)
        return text


def _table(name, T_grid, sup, fin, rhs, blowups) -> DiagnosticTable:
    n = sup.shape[0]
    T = np.asarray(T_grid, float)
    lhs = sup.mean(axis=0)
    se = sup.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(T.size, np.nan)
    fse = fin.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(T.size, np.nan)
    slope = float(np.polyfit(np.log(T), np.log(lhs), 1)[0]) if T.size > 1 and np.all(lhs > 0) else float("nan")
    return DiagnosticTable(name, T, lhs, se, fin.mean(axis=0), fse, np.asarray(rhs, float), lhs / rhs, slope, blowups)


def ito_trick_diag(cfg: SimConfig, f, T_grid=(0.25, 0.5, 1.0, 2.0)) -> DiagnosticTable:
    """``E[sup_{t<=T} |int_0^t u_s(A Pi_N f) ds|^2]`` against ``T sum_k lambda_k f_k^2``.

    ``f`` holds coefficients on the active coordinates.
    """
    lam = cfg.eigenvalues
    f = np.asarray(f, float)
    if f.shape != lam.shape:
        raise ValidationError(f"f must have {lam.size} active coefficients")
    w = lam * f
    sup, fin, blown = _sup_integrals(cfg, lambda u: u @ w, T_grid)
    rhs = np.asarray(T_grid, float) * float(np.sum(lam * f**2))
    return _table("ito_trick", T_grid, sup, fin, rhs, blown)


def energy_estimate_diag(cfg: SimConfig, F: GaussianPolynomial, basis, T_grid=(0.25, 0.5, 1.0, 2.0)) -> DiagnosticTable:
    """``E[sup_{t<=T} |int_0^t F(u_s) ds|^2]`` against ``(T + T^2) ||F||^2_{H^-1_0}``.

    ``F`` is a polynomial in the active coordinates and must lie in ``basis``
    (a :class:`~burgers_galerkin.generator.CylinderSpaceBasis`).
    """
    from .generator import hminus1_norm

    n = cfg.active.size
    if F.mode_count > n:
        raise ValidationError("F has more coordinates than the active set")
    Fn = F.to_float()
    norm = hminus1_norm(F, basis)
    T = np.asarray(T_grid, float)
    sup, fin, blown = _sup_integrals(cfg, lambda u: Fn.evaluate(u[:, : F.mode_count]), T_grid)
    return _table("energy_estimate", T_grid, sup, fin, (T + T**2) * norm**2, blown)


# --- p-variation ------------------------------------------------------------------


def p_variation(x, p: float) -> float:
    """Exact p-variation of the discrete path ``x`` over all subpartitions of its index set."""
    x = np.asarray(x, float)
    if not 1 <= p:
        raise ValidationError("p must be at least 1")
    V = np.zeros(x.size)
    for j in range(1, x.size):
        V[j] = np.max(V[:j] + np.abs(x[j] - x[:j]) ** p)
    return float(V[-1] ** (1.0 / p))


def drift_difference_observable(tensor: CouplingTensor, rho1, rho2, f):
    """``u -> <:Bt^{rho1}(u,u): - :Bt^{rho2}(u,u):, f>`` with ``Bt^rho[k,l,m] = sum R[a,k] R[b,l] B[a,b,m]``."""
    B = tensor.entries.astype(float)
    f = np.asarray(f, float)

    def tilde(rho):
        R = getattr(rho, "matrix", rho)
        return np.einsum("ak,bl,abm,m->kl", R, R, B, f)

    D = tilde(rho1) - tilde(rho2)
    tr = float(np.trace(D))
    return lambda u: np.einsum("ik,kl,il->i", u, D, u) - tr


def occupation_pvar(cfg: SimConfig, F, p_grid=(1.5, 1.75, 1.9), depth: int = 10) -> dict:
    """p-variation of ``t -> int_0^t F(u_s) ds`` on dyadic partitions of ``[0, T]``.

    ``F`` is a :class:`GaussianPolynomial` or a callable on state batches.  For
    each depth ``j <= depth`` the path is sampled at ``i T / 2^j`` and the exact
    p-variation over that point set is computed; values are nondecreasing in
    ``j`` and the last one is the reported estimate.  Results are averaged over
    the surviving trajectories.
    """
    if not 0 <= depth <= 14:
        raise ValidationError("dyadic depth must lie in [0, 14]")
    if cfg.steps % (2**depth):
        raise ValidationError(f"number of steps {cfg.steps} must be divisible by 2^depth")
    for p in p_grid:
        if not 1 <= p <= 2:
            raise ValidationError("p must lie in [1, 2]")
    if isinstance(F, GaussianPolynomial):
        Fn = F.to_float()
        func = lambda u: Fn.evaluate(u[:, : Fn.mode_count])  # noqa: E731
    else:
        func = F
    every = cfg.steps // 2**depth
    parts = _map_batches(cfg, lambda a, b: _run_batch(cfg, a, b, observables=(func,), record_every=every))
    I = np.concatenate([p[1][0] for p in parts])
    blown = np.concatenate([p[2] for p in parts])
    I = I[~blown]
    if I.shape[0] == 0:
        raise RunError("all trajectories blew up")
    out = {"p": list(p_grid), "depths": list(range(depth + 1)), "estimates": {}, "per_depth": {}}
    for p in p_grid:
        per_depth = []
        for j in range(depth + 1):
            stride = 2 ** (depth - j)
            per_depth.append(float(np.mean([p_variation(path[::stride], p) for path in I])))
        out["per_depth"][str(p)] = per_depth
        out["estimates"][str(p)] = per_depth[-1]
    out["blowups"] = int(blown.sum())
    return out


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
