"""Posterior mean deviance, bias-structure comparison and
leave-one-source-out cross-validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from prevsynth import kernels
from prevsynth.inference import PosteriorSummary, SamplerConfig, run
from prevsynth.model import PriorSpec
from prevsynth.observation import BiasStructure, ObservationSet, validate
from prevsynth.strata import CensusTable


def deviance_binomial(y, n, p) -> float:
    """Saturated-vs-fitted binomial deviance summed over observations.
    ``inf`` when a prediction of 0 or 1 contradicts the counts."""
    y = np.ascontiguousarray(np.atleast_1d(y), dtype=float)
    n = np.ascontiguousarray(np.atleast_1d(n), dtype=float)
    p = np.ascontiguousarray(np.atleast_1d(p), dtype=float)
    return float(kernels.binomial_deviance(y, n, p).sum())


def deviance_multinomial(counts, probs) -> float:
    z = np.asarray(counts, dtype=float)
    p = np.asarray(probs, dtype=float)
    zhat = z.sum() * p
    pos = z > 0
    if np.any(zhat[pos] <= 0):
        return float("inf")
    return float(2.0 * np.sum(z[pos] * np.log(z[pos] / zhat[pos])))


def biased_sources(obs: ObservationSet) -> list[str]:
    """Sources with at least one observation flagged as biased."""
    return sorted({o.source_id for o in obs.binomial if o.biased})


@dataclass
class DevianceReport:
    per_source: dict
    reference: tuple  # sources whose deviance forms the "biased" share

    @property
    def model(self) -> float:
        return float(sum(self.per_source.values()))

    @property
    def unbiased(self) -> float:
        return float(sum(v for k, v in self.per_source.items() if k not in self.reference))

    @property
    def biased(self) -> float:
        return float(sum(v for k, v in self.per_source.items() if k in self.reference))

    def to_dict(self) -> dict:
        return {
            "per_source": dict(self.per_source),
            "reference": list(self.reference),
            "model": self.model,
            "unbiased": self.unbiased,
            "biased": self.biased,
        }


def posterior_mean_deviance(summary: PosteriorSummary, reference=()) -> DevianceReport:
    return DevianceReport(dict(summary.source_deviance), tuple(sorted(reference)))


def deviance_mcse(summary: PosteriorSummary) -> float:
    """Monte Carlo standard error of the posterior mean model deviance."""
    from prevsynth.inference import batch_mcse

    cols = [summary.names.index(f"deviance[{s}]") for s in summary.source_ids]
    if not cols:
        return 0.0
    total = summary.draws[:, :, cols].sum(axis=2)
    return batch_mcse(total)


KEY_QUANTITIES = ("pi_cur", "pi_ex", "pi_non", "pi")


@dataclass
class VariantResult:
    structure: str
    deviance: DevianceReport | None
    mcse: float
    quantities: dict
    converged: bool
    error: str | None = None


@dataclass
class SweepReport:
    variants: dict = field(default_factory=dict)

    def best(self) -> str:
        ok = {k: v for k, v in self.variants.items() if v.deviance is not None}
        return min(ok, key=lambda k: ok[k].deviance.model)

    def worst(self) -> str:
        ok = {k: v for k, v in self.variants.items() if v.deviance is not None}
        return max(ok, key=lambda k: ok[k].deviance.model)

    def to_dict(self) -> dict:
        return {
            k: {
                "structure": v.structure,
                "description": BiasStructure.parse(k).description,
                "deviance": v.deviance.to_dict() if v.deviance else None,
                "deviance_mcse": v.mcse,
                "quantities": v.quantities,
                "converged": v.converged,
                "error": v.error,
            }
            for k, v in self.variants.items()
        }

    def deviance_table(self) -> str:
        rows = [["Model", "Bias formulation", "Dev(model)", "Dev(unbiased)", "Dev(biased)", "MC se"]]
        for k, v in self.variants.items():
            name = k.upper() + ("" if v.converged else "*")
            if v.deviance is None:
                rows.append([name, BiasStructure.parse(k).description, "n/a", "n/a", "n/a", v.error or ""])
                continue
            d = v.deviance
            rows.append([name, BiasStructure.parse(k).description, f"{d.model:,.1f}", f"{d.unbiased:,.1f}", f"{d.biased:,.1f}", f"{v.mcse:.2f}"])
        return format_table(rows)

    def quantity_table(self) -> str:
        rows = [["Model"] + [label_of(q) for q in KEY_QUANTITIES]]
        for k, v in self.variants.items():
            if not v.quantities:
                continue
            rows.append([k.upper() + ("" if v.converged else "*")] + [fmt_interval(v.quantities[q]) for q in KEY_QUANTITIES])
        return format_table(rows)


def _qdict(summary: PosteriorSummary, names) -> dict:
    out = {}
    for n in names:
        q = summary[n]
        out[n] = {"mean": q.mean, "sd": q.sd, "p2_5": q.p2_5, "p97_5": q.p97_5, "rhat": None if np.isnan(q.rhat) else q.rhat, "converged": q.converged}
    return out


def bias_sweep(
    obs: ObservationSet,
    census: CensusTable,
    config: SamplerConfig,
    structures=tuple(BiasStructure),
    reference=None,
    prior: PriorSpec = PriorSpec(),
    progress=None,
) -> SweepReport:
    """Fit every bias structure with the same data, sampler settings and seed."""
    reference = biased_sources(obs) if reference is None else list(reference)
    report = SweepReport()
    for s in structures:
        s = BiasStructure.parse(s)
        problems = validate(obs, s)
        if problems:
            report.variants[s.value] = VariantResult(s.value, None, float("nan"), {}, False, "; ".join(problems))
            continue
        summ = run(obs, census, s, config, prior)
        report.variants[s.value] = VariantResult(
            s.value,
            posterior_mean_deviance(summ, reference),
            deviance_mcse(summ),
            _qdict(summ, [n for n in summ.headline() if "[" not in n]),
            summ.converged,
        )
        if progress:
            progress(s.value, report.variants[s.value])
    return report


@dataclass
class CvRow:
    removed: str  # "None" for the full model
    deviance: dict
    deviance_mcse: dict
    quantities: dict
    family_converged: dict

    @property
    def converged(self) -> bool:
        return all(self.family_converged.values())


@dataclass
class CvReport:
    rows: dict = field(default_factory=dict)
    conflicts: list = field(default_factory=list)

    @property
    def full(self) -> CvRow:
        return self.rows["None"]

    def shifts(self, removed: str) -> dict:
        """Change in posterior mean, in full-model posterior sd units."""
        full, row = self.full.quantities, self.rows[removed].quantities
        return {k: (row[k]["mean"] - full[k]["mean"]) / full[k]["sd"] for k in full if k in row and full[k]["sd"] > 0}

    def to_dict(self) -> dict:
        return {
            "rows": {
                k: {
                    "deviance": r.deviance,
                    "deviance_mcse": r.deviance_mcse,
                    "quantities": r.quantities,
                    "family_converged": r.family_converged,
                }
                for k, r in self.rows.items()
            },
            "conflicts": [{"source": j, "removed": k, "drop": d} for j, k, d in self.conflicts],
        }

    def deviance_table(self) -> str:
        sources = list(self.full.deviance)
        rows = [["Removed"] + sources]
        for k, r in self.rows.items():
            name = ("All" if k == "None" else k) + ("" if r.converged else "*")
            rows.append([name] + [("-" if s not in r.deviance else f"{r.deviance[s]:,.1f}") for s in sources])
        return format_table(rows)

    def quantity_table(self) -> str:
        rows = [["Removed"] + [label_of(q) for q in KEY_QUANTITIES]]
        for k, r in self.rows.items():
            name = "None" if k == "None" else k
            cells = []
            for q in KEY_QUANTITIES:
                fam = "pi_non" if q == "pi_non" else "pi_idu"
                star = "" if r.family_converged.get(fam, True) and r.quantities[q]["converged"] else "*"
                cells.append(fmt_interval(r.quantities[q]) + star)
            rows.append([name] + cells)
        return format_table(rows)


def _cv_row(removed: str, summ: PosteriorSummary) -> CvRow:
    mcse = {s: summ[f"deviance[{s}]"].mcse for s in summ.source_ids}
    names = [n for n in summ.headline()]
    return CvRow(removed, dict(summ.source_deviance), mcse, _qdict(summ, names), summ.convergence)


def lodo_cv(
    obs: ObservationSet,
    census: CensusTable,
    structure=BiasStructure.B5,
    config: SamplerConfig = SamplerConfig(),
    prior: PriorSpec = PriorSpec(),
    sources=None,
    progress=None,
) -> CvReport:
    """Refit with each source removed in turn. A source ``j`` whose deviance
    falls by more than two Monte Carlo standard errors when ``k`` is removed
    is reported as potentially conflicting with ``k``."""
    ids = obs.source_ids
    if len(ids) < 2:
        raise ValueError("cross-validation needs at least two sources")
    report = CvReport()
    report.rows["None"] = _cv_row("None", run(obs, census, structure, config, prior))
    for k in sources or ids:
        reduced = obs.without_source(k)
        summ = run(reduced, census, structure, config, prior, check_identifiability=False)
        report.rows[k] = _cv_row(k, summ)
        if progress:
            progress(k, report.rows[k])
    full = report.full
    for k, row in report.rows.items():
        if k == "None":
            continue
        for j, d in row.deviance.items():
            margin = 2.0 * np.hypot(full.deviance_mcse.get(j, 0.0), row.deviance_mcse.get(j, 0.0))
            drop = full.deviance[j] - d
            if drop > margin:
                report.conflicts.append((j, k, float(drop)))
    return report


# --- table formatting ---------------------------------------------------------------


def label_of(name: str) -> str:
    return {"pi_cur": "Current IDU", "pi_ex": "Ex-IDU", "pi_non": "Non-IDU", "pi": "All"}.get(name, name)


def fmt_pct(x: float) -> str:
    return f"{100 * x:.2f}"


def fmt_interval(q: dict) -> str:
    return f"{fmt_pct(q['mean'])} ({fmt_pct(q['p2_5'])} - {fmt_pct(q['p97_5'])})"


def format_table(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        cells = [str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))
