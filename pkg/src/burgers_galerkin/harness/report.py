"""Human-readable summary and plot-ready CSVs from a results directory."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

__all__ = ["Report", "report"]

SUMMARY = "summary.md"


@dataclass
class Report:
    """Sections of the summary, warnings about missing or corrupt inputs, and files written."""

    directory: str
    sections: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    corrupt: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def text(self) -> str:
        lines = [f"# Results summary: {os.path.basename(os.path.abspath(self.directory))}", ""]
        lines.append(f"sections: {len(self.sections)}")
        lines.append("")
        for w in self.warnings:
            lines.append(f"WARNING: {w}")
        if self.warnings:
            lines.append("")
        for title, body in self.sections:
            lines.append(f"## {title}")
            lines.append("")
            lines.extend(body)
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"


def _load(directory, name, rep: Report):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        return None
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        rep.corrupt.append(name)
        rep.warnings.append(f"corrupt input {name}: {exc}")
        return None


def _fmt(v) -> str:
    return f"{v:.12e}"


def _manifest(doc, rep: Report) -> None:
    body = [
        f"- config hash: `{doc.get('config_hash')}`",
        f"- version: {doc.get('version')}",
        f"- rng: {doc.get('rng')}",
        f"- all suites passed: {doc.get('all_passed')}",
    ]
    failed = [k for k, v in doc.get("suites", {}).items() if v is False]
    if failed:
        body.append(f"- failed: {', '.join(failed)}")
    rep.sections.append(("Manifest", body))


def _verification(doc, rep: Report) -> None:
    body = ["| suite | status | detail |", "|---|---|---|"]
    for k, r in doc["suites"].items():
        status = "TREND" if r["passed"] is None else ("PASS" if r["passed"] else "FAIL")
        body.append(f"| {k} | {status} | {r.get('detail', '')} |")
    rep.sections.append(("Operator verification", body))


def _invariance(doc, rep: Report) -> None:
    C, S = doc["covariance"][-1], doc["covariance_se"][-1]
    n = len(C)
    lines = ["k,l,deviation,band3,within_band"]
    body = [
        f"- trajectories used: {doc['n_used']}, blow-ups: {doc['blowups']}",
        f"- max |C - I|: {doc['max_covariance_deviation']:.4f}",
        f"- max KS: {max(doc['ks'][-1]):.4f} (critical {doc['ks_critical']:.4f})",
        "",
        "| k | l | deviation | 3 sigma |",
        "|---|---|---|---|",
    ]
    for k in range(n):
        for l in range(k, n):
            dev = C[k][l] - (k == l)
            band = 3 * S[k][l]
            lines.append(f"{k},{l},{_fmt(dev)},{_fmt(band)},{int(abs(dev) <= band)}")
            body.append(f"| {k} | {l} | {dev:+.4f} | {band:.4f} |")
    rep.files["figure_invariance_bands.csv"] = "\n".join(lines) + "\n"
    rep.sections.append(("Invariance of the Gaussian measure", body))


def _diagnostics(doc, rep: Report) -> None:
    body = []
    for name in ("ito_trick", "energy_estimate"):
        t = doc.get(name)
        if not t:
            continue
        lines = ["T,lhs,rhs,ratio"]
        body.append(f"- {name}: ratios {', '.join(f'{r:.3f}' for r in t['ratio'])}, slope {t['slope']:.3f}")
        for row in zip(t["T"], t["lhs_sup"], t["rhs"], t["ratio"]):
            lines.append(",".join(_fmt(v) for v in row))
        rep.files[f"figure_{name}_ratios.csv"] = "\n".join(lines) + "\n"
    pv = doc.get("occupation_pvar")
    if pv:
        for p, v in pv["estimates"].items():
            body.append(f"- p-variation (p={p}): {v:.4f}")
    rep.sections.append(("Trajectory diagnostics", body))


def _rates(doc, rep: Report) -> None:
    body = ["| alpha | beta | slope | target |", "|---|---|---|---|"]
    for f in doc["fits"]:
        a, b = f["alpha"], f["beta"]
        body.append(f"| {a} | {b} | {f['slope_error']:.3f} | {f['target_slope']:.3f} |")
        lines = ["N,error,slope"]
        for n, e in zip(f["N"], f["errors"]):
            lines.append(f"{n},{_fmt(e)},{f['slope_error']:.6f}")
        rep.files[f"figure_rates_alpha{a}_beta{b}.csv"] = "\n".join(lines) + "\n"
    ub = doc.get("uniform_bounds")
    if ub:
        body.append("")
        body.append(f"- max |rho_N|_(H,H): {max(ub['H_H']):.4f}; H->V growth slope {ub['slope_H_V']:.3f}")
    rep.sections.append(("Approximation rates", body))


def _resolvent(doc, rep: Report) -> None:
    body = ["| cutoff | coercivity min | residual | |F|_H1 / |F#|_H-1 |", "|---|---|---|---|"]
    for r in doc["results"]:
        q = r["solution_h1_norm"] / r["rhs_hminus1_norm"] if r["rhs_hminus1_norm"] else float("nan")
        body.append(f"| {r['chaos_cutoff']} | {r['coercivity_min']:.6f} | {r['residual_hminus1']:.2e} | {q:.6f} |")
    rep.sections.append(("Resolvent equation", body))


_SECTIONS = (
    ("manifest.json", _manifest),
    ("verification.json", _verification),
    ("sim_stats.json", _invariance),
    ("diagnostics.json", _diagnostics),
    ("rates.json", _rates),
    ("resolvent.json", _resolvent),
)


def report(directory, write: bool = True) -> Report:
    """Summarize the result files found in ``directory``.

    Missing files are skipped; unreadable or malformed ones are listed as
    warnings and the summary is produced from the rest.  With ``write`` the
    summary (``summary.md``) and the ``figure_*.csv`` tables are written into
    ``directory``.
    """
    rep = Report(str(directory))
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"results directory {directory} does not exist")
    for name, fn in _SECTIONS:
        doc = _load(directory, name, rep)
        if doc is None:
            continue
        try:
            fn(doc, rep)
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            rep.corrupt.append(name)
            rep.warnings.append(f"corrupt input {name}: missing or malformed field {exc}")
    if not rep.sections and not rep.corrupt:
        rep.warnings.append("no result files found")
    rep.files[SUMMARY] = rep.text()
    if write:
        for name, text in rep.files.items():
            tmp = os.path.join(directory, f".{name}.tmp")
            with open(tmp, "w") as fh:
                fh.write(text)
            os.replace(tmp, os.path.join(directory, name))
    return rep
