"""Scenario configuration: JSON parsing, schema validation and semantic checks."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from ..errors import ValidationError

__all__ = ["Scenario", "load_schema", "parse_config", "load_config", "config_hash"]

SIM_DEFAULTS = {
    "ensemble": 1,
    "integrator": "strang_ou_rk4",
    "taming": False,
    "initial": "stationary_gaussian",
}
REFERENCE_ENSEMBLE = 4096
REFERENCE_DEVIATION = 0.08
DIAG_DEFAULTS = {
    "ito_trick": False,
    "energy_estimate": False,
    "occupation_pvar": False,
    "T_grid_model_time": [0.25, 0.5, 1.0, 2.0],
    "p_grid": [1.5, 1.75, 1.9],
    "pvar_depth": 10,
    "ratio_bound": 16.0,
}
RATES_DEFAULTS = {
    "kind": "moving_average",
    "pairs": [[0.0, 1.0], [0.0, 0.5], [0.5, 1.0]],
    "N_grid": [8, 16, 32, 64, 128],
    "truncation": 512,
    "slope_tolerance": 0.15,
}
RESOLVENT_DEFAULTS = {
    "chaos_cutoffs": [1, 2, 3],
    "rhs": [
        {"coefficient": 1.0, "exponents": [1, 1]},
        {"coefficient": 1.0, "exponents": [1]},
    ],
}


def _default_degree(res: dict) -> int:
    cuts = res.get("chaos_cutoffs", RESOLVENT_DEFAULTS["chaos_cutoffs"])
    rhs = res.get("rhs", RESOLVENT_DEFAULTS["rhs"])
    return max(max(cuts), max(sum(t["exponents"]) for t in rhs))


def load_schema() -> dict:
    """The published JSON schema for scenario files."""
    text = resources.files("burgers_galerkin.harness").joinpath("schema.json").read_text()
    return json.loads(text)


def _location(path) -> str:
    parts = [f"[{p}]" if isinstance(p, int) else f".{p}" for p in path]
    return "config" + "".join(parts)


def _semantic_checks(doc: dict) -> None:
    model = doc["model"]
    kind, M = model["kind"], model["mode_count"]
    params = model.get("params", {})
    allowed = {
        "dirichlet_laplacian": set(),
        "neumann_hyperviscous": {"theta"},
        "regional_fractional": {"gamma", "c", "basis_size"},
        "elliptic_divform": {"a", "a_value", "a_values", "interface", "epsilon", "basis_size"},
    }[kind]
    extra = sorted(set(params) - allowed)
    if extra:
        raise ValidationError(f"config.model.params: parameter(s) {extra} not valid for {kind}")
    if "gamma" in params and not 1.5 <= params["gamma"] < 2.0:
        raise ValidationError(f"config.model.params.gamma: γ out of [1.5,2): gamma={params['gamma']}")
    if "theta" in params and not 1.0 < params["theta"] <= 2.0:
        raise ValidationError(f"config.model.params.theta: theta out of (1, 2]: {params['theta']}")
    if "basis_size" in params and params["basis_size"] < M:
        raise ValidationError("config.model.params.basis_size: must be >= mode_count")
    rho = doc.get("rho")
    if rho is not None:
        N = rho.get("N", M)
        if rho["kind"] == "spectral_projection" and N > M:
            raise ValidationError(f"config.rho.N: spectral projection needs N <= mode_count={M}")
        if rho["kind"] == "moving_average" and N < 2:
            raise ValidationError("config.rho.N: moving average needs N >= 2")
    sim = doc.get("simulation")
    if sim is not None:
        N = sim.get("N", M)
        if N > M:
            raise ValidationError(f"config.simulation.N: N={N} exceeds mode_count={M}")
        dt, T = sim["dt_model_time"], sim["T_model_time"]
        if T < dt:
            raise ValidationError("config.simulation.T_model_time: must be at least dt_model_time")
        diag = doc.get("diagnostics", {})
        for t in diag.get("T_grid_model_time", []):
            if t > T * (1 + 1e-12):
                raise ValidationError(f"config.diagnostics.T_grid_model_time: {t} exceeds T_model_time={T}")
            if abs(t / dt - round(t / dt)) > 1e-9:
                raise ValidationError(f"config.diagnostics.T_grid_model_time: {t} is not a multiple of dt")
        if diag.get("occupation_pvar"):
            depth = diag.get("pvar_depth", DIAG_DEFAULTS["pvar_depth"])
            steps = int(round(T / dt))
            if steps % 2**depth:
                raise ValidationError(
                    f"config.diagnostics.pvar_depth: {steps} steps not divisible by 2^{depth}"
                )
    diag = doc.get("diagnostics")
    if diag and any(diag.get(k) for k in ("ito_trick", "energy_estimate", "occupation_pvar")) and sim is None:
        raise ValidationError("config.diagnostics: diagnostics need a simulation section")
    rates = doc.get("rates")
    if rates is not None:
        for a, b in rates.get("pairs", []):
            if not 0 <= a <= b <= 1:
                raise ValidationError(f"config.rates.pairs: need 0 <= alpha <= beta <= 1, got ({a}, {b})")
    res = doc.get("resolvent")
    if res is not None:
        m = res.get("mode_count", min(M * model.get("components", 1), 4))
        if m > M * model.get("components", 1):
            raise ValidationError("config.resolvent.mode_count: exceeds the model size")
        cuts = res.get("chaos_cutoffs", RESOLVENT_DEFAULTS["chaos_cutoffs"])
        deg = res.get("max_degree", _default_degree(res))
        if max(cuts) > deg:
            raise ValidationError("config.resolvent.chaos_cutoffs: cutoff above max_degree")
        for term in res.get("rhs", []):
            if len(term["exponents"]) > m:
                raise ValidationError("config.resolvent.rhs: exponent vector longer than mode_count")
            if sum(term["exponents"]) > deg:
                raise ValidationError("config.resolvent.rhs: term degree above max_degree")


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate a scenario document.

    Raises
    ------
    ValidationError
        JSON syntax errors (with line and column), schema violations (with
        the offending field path; unknown keys are named) and parameter
        values outside their admissible ranges.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = errors[0]
        loc = _location(err.path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            raise ValidationError(f"{source}: {loc}: unknown key(s) {extra}")
        if err.validator == "oneOf" and err.context:
            err = min(err.context, key=lambda e: len(e.path))
        raise ValidationError(f"{source}: {loc}: {err.message}")
    _semantic_checks(doc)
    return doc


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def config_hash(doc: dict) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _merged(defaults: dict, given: dict | None) -> dict:
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given or {}))
    return out


@dataclass
class Scenario:
    """A validated scenario with defaults filled in."""

    name: str
    model: dict
    tensor: dict = field(default_factory=dict)
    rho: dict | None = None
    verify: list = field(default_factory=list)
    verify_options: dict = field(default_factory=dict)
    simulation: dict | None = None
    diagnostics: dict | None = None
    rates: dict | None = None
    resolvent: dict | None = None
    seed: int = 0
    arithmetic: str = "exact"
    threads: int = 1
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, doc: dict, overrides: dict | None = None) -> "Scenario":
        """Build from a validated document; ``overrides`` (seed, out, threads, arithmetic) win."""
        o = {k: v for k, v in (overrides or {}).items() if v is not None}
        model = copy.deepcopy(doc["model"])
        model.setdefault("components", 1)
        model.setdefault("params", {})
        M = model["mode_count"]
        sim = None
        if "simulation" in doc:
            sim = _merged(SIM_DEFAULTS, doc["simulation"])
            sim.setdefault("N", M)
            # the reference tolerance scales with the Monte Carlo standard error
            sim.setdefault(
                "max_covariance_deviation",
                REFERENCE_DEVIATION * max(1.0, (REFERENCE_ENSEMBLE / sim["ensemble"]) ** 0.5),
            )
        diag = _merged(DIAG_DEFAULTS, doc["diagnostics"]) if "diagnostics" in doc else None
        rates = _merged(RATES_DEFAULTS, doc["rates"]) if "rates" in doc else None
        res = None
        if "resolvent" in doc:
            res = _merged(RESOLVENT_DEFAULTS, doc["resolvent"])
            res.setdefault("mode_count", min(M * model["components"], 4))
            res.setdefault("max_degree", _default_degree(res))
        rho = copy.deepcopy(doc.get("rho"))
        if rho is not None:
            rho.setdefault("N", M if rho["kind"] != "moving_average" else max(2, M // 2))
        sc = cls(
            name=doc.get("name", "scenario"),
            model=model,
            tensor=_merged({"method": "closed_form", "write_csv": False}, doc.get("tensor")),
            rho=rho,
            verify=list(doc.get("verify", [])),
            verify_options=_merged({"n_instances": 100, "thorough": True}, doc.get("verify_options")),
            simulation=sim,
            diagnostics=diag,
            rates=rates,
            resolvent=res,
            seed=int(o.get("seed", doc.get("seed", 0))),
            arithmetic=o.get("arithmetic", doc.get("arithmetic", "exact")),
            threads=int(o.get("threads", doc.get("threads", 1))),
            output_dir=o.get("out", doc.get("output_dir", "results")),
        )
        if sc.threads < 1:
            raise ValidationError("--threads must be at least 1")
        if sc.seed < 0:
            raise ValidationError("--seed must be nonnegative")
        if sc.arithmetic not in ("exact", "float"):
            raise ValidationError("--arithmetic must be 'exact' or 'float'")
        return sc

    def effective(self) -> dict:
        """Fully resolved configuration; hashed into the manifest.

        ``threads`` is left out since results do not depend on it.
        """
        return {
            "name": self.name,
            "model": self.model,
            "tensor": self.tensor,
            "rho": self.rho,
            "verify": self.verify,
            "verify_options": self.verify_options,
            "simulation": self.simulation,
            "diagnostics": self.diagnostics,
            "rates": self.rates,
            "resolvent": self.resolvent,
            "seed": self.seed,
            "arithmetic": self.arithmetic,
        }
