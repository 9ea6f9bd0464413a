"""Human-readable fit tables: proportions and counts by risk group and age,
prevalence by risk group and age, and age-specific and overall prevalence.
Counts are in thousands (one decimal), percentages have two decimals."""

from __future__ import annotations

import numpy as np

from prevsynth.diagnostics import format_table
from prevsynth.inference import PosteriorSummary
from prevsynth.strata import AGE_GROUPS, CensusTable

GROUPS = (("cur", "Current IDU"), ("ex", "Ex-IDU"), ("non", "Non-IDU"), ("ever", "Ever-IDU"))


def _stats(x) -> dict:
    x = np.asarray(x, dtype=float).ravel()
    lo, hi = np.percentile(x, [2.5, 97.5])
    return {"mean": float(x.mean()), "p2_5": float(lo), "p97_5": float(hi)}


def _pct(s):
    return f"{100 * s['mean']:.2f} ({100 * s['p2_5']:.2f} - {100 * s['p97_5']:.2f})"


def _k(s):
    return f"{s['mean'] / 1000:.1f} ({s['p2_5'] / 1000:.1f} - {s['p97_5'] / 1000:.1f})"


def fit_tables(summary: PosteriorSummary, census: CensusTable) -> dict:
    """Posterior summaries of proportions, counts and prevalences."""
    N = census.N
    col = summary.column
    out = {"by_age": {}, "total": {}}
    tot_people = {g: 0.0 for g, _ in GROUPS}
    tot_inf = {g: 0.0 for g, _ in GROUPS}
    all_inf = 0.0
    for a, band in enumerate(AGE_GROUPS):
        row = {"population": float(N[a])}
        inf_a = 0.0
        for g, _ in GROUPS:
            rho = col(f"rho_{g}[{band.label}]")
            pi = col(f"pi_{g}[{band.label}]")
            people = N[a] * rho
            infected = people * pi
            row[g] = {
                "rho": _stats(rho),
                "count": _stats(people),
                "pi": _stats(pi),
                "infected": _stats(infected),
            }
            tot_people[g] = tot_people[g] + people
            tot_inf[g] = tot_inf[g] + infected
            if g != "ever":
                inf_a = inf_a + infected
        row["pi_age"] = _stats(col(f"pi_age[{band.label}]"))
        row["infected"] = _stats(inf_a)
        all_inf = all_inf + inf_a
        out["by_age"][band.label] = row
    for g, _ in GROUPS:
        out["total"][g] = {
            "rho": _stats(col(f"rho_{g}")),
            "count": _stats(tot_people[g]),
            "pi": _stats(col(f"pi_{g}")),
            "infected": _stats(tot_inf[g]),
        }
    out["total"]["population"] = float(N.sum())
    out["total"]["pi"] = _stats(col("pi"))
    out["total"]["infected"] = _stats(all_inf)
    return out


def format_fit_tables(tables: dict) -> str:
    ages = list(tables["by_age"])
    parts = []

    rows = [["Age", "Population (k)"] + [f"{name} % (k)" for _, name in GROUPS]]
    for a in ages:
        r = tables["by_age"][a]
        rows.append([a, f"{r['population'] / 1000:.1f}"] + [f"{_pct(r[g]['rho'])} [{_k(r[g]['count'])}]" for g, _ in GROUPS])
    t = tables["total"]
    rows.append(["20-59", f"{t['population'] / 1000:.1f}"] + [f"{_pct(t[g]['rho'])} [{_k(t[g]['count'])}]" for g, _ in GROUPS])
    parts.append("Risk-group proportions and sizes\n" + format_table(rows))

    rows = [["Age"] + [f"{name} prevalence %" for _, name in GROUPS]]
    for a in ages:
        r = tables["by_age"][a]
        rows.append([a] + [_pct(r[g]["pi"]) for g, _ in GROUPS])
    rows.append(["20-59"] + [_pct(t[g]["pi"]) for g, _ in GROUPS])
    parts.append("Prevalence by risk group\n" + format_table(rows))

    rows = [["Age", "Prevalence %", "Infected (k)"]]
    for a in ages:
        r = tables["by_age"][a]
        rows.append([a, _pct(r["pi_age"]), _k(r["infected"])])
    rows.append(["20-59", _pct(t["pi"]), _k(t["infected"])])
    parts.append("Prevalence by age\n" + format_table(rows))
    return "\n\n".join(parts) + "\n"


def convergence_table(summary: PosteriorSummary) -> str:
    rows = [["Quantity", "Mean", "2.5%", "97.5%", "R-hat", ""]]
    for n in summary.headline():
        q = summary[n]
        rh = "nan" if np.isnan(q.rhat) else f"{q.rhat:.3f}"
        rows.append([n, f"{q.mean:.5f}", f"{q.p2_5:.5f}", f"{q.p97_5:.5f}", rh, "" if q.converged else "*"])
    return format_table(rows)


def deviance_table(summary: PosteriorSummary) -> str:
    rows = [["Source", "Mean deviance", "MC se"]]
    for s in summary.source_ids:
        q = summary[f"deviance[{s}]"]
        rows.append([s, f"{q.mean:,.2f}", f"{q.mcse:.2f}"])
    rows.append(["Total", f"{sum(summary.source_deviance.values()):,.2f}", ""])
    return format_table(rows)
