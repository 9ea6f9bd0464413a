"""Synthetic populations and survey data with known truth.

The career simulator is a brute-force check on the snapshot adjustments:
it never touches the analytic kernels. Each simulated ever-IDU draws an
injecting duration, a time since starting and an age at first use
independently from the yearly pmfs; age at the snapshot is their implied
sum and careers are kept by rejection when that age falls in the band.
A career has ended (ex-IDU) exactly when its duration is shorter than the
time since starting.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit

from prevsynth.errors import DegenerateStratumError
from prevsynth.observation import (
    BiasStructure,
    BinomialObservation,
    DataSourceMeta,
    MultinomialObservation,
    ObservationSet,
    TargetSpec,
    expected_probability,
    predict_history_kind,
)
from prevsynth.quantities import (
    DrugHistory,
    RegressionParams,
    aggregates,
    compute_quantities,
)
from prevsynth.strata import (
    AGE_GROUPS,
    DURATION,
    TSS,
    CensusTable,
    NYC_CENSUS_2010,
    parse_age_span,
    year_to_category,
)

# --- career microsimulation -------------------------------------------------


@dataclass
class CareerRecords:
    """Column-oriented career records. ``duration`` is -1 for current IDUs."""

    age: np.ndarray
    aafu: np.ndarray
    tss: np.ndarray
    duration: np.ndarray
    ex: np.ndarray
    hcv: np.ndarray | None = None

    def __len__(self):
        return self.age.size

    @property
    def status(self) -> np.ndarray:
        return np.where(self.ex, "ex", "current")


def _draw(rng, pmf, size):
    cdf = np.cumsum(pmf)
    cdf /= cdf[-1]
    return np.searchsorted(cdf, rng.random(size), side="right")


def _cell_prevalence_direct(params: RegressionParams, band: int, d_years, t_years):
    # logistic model evaluated record by record, independent of the lattice code
    top = int(max(d_years.max(initial=0), t_years.max(initial=0))) + 1
    dc = np.array([year_to_category(t, DURATION) for t in range(top)])
    tc = np.array([year_to_category(t, TSS) for t in range(top)])
    logit = (
        params.delta0
        + np.append(params.delta1, 0.0)[band]
        + np.append(params.delta2, 0.0)[dc[d_years]]
        + np.append(params.delta3, 0.0)[tc[t_years]]
    )
    return expit(logit)


def simulate_careers(
    n: int,
    history: DrugHistory,
    band: int,
    seed,
    params: RegressionParams | None = None,
    batch: int = 250_000,
) -> CareerRecords:
    """``n`` ever-IDU careers whose snapshot age lies in age band ``band``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = AGE_GROUPS[band]
    fD, fT, fA = history.d_year, history.tss_year, history.aafu_year
    u = np.flatnonzero(fA > 0)
    t = np.flatnonzero(fT > 0)
    ages = u[:, None] + t[None, :]
    if not np.any((ages >= g.lower) & (ages <= g.upper)):
        raise DegenerateStratumError(f"no feasible careers in age band {g.label}")
    rng = np.random.default_rng(seed)
    cols = {k: [] for k in ("age", "aafu", "tss", "duration")}
    have = 0
    while have < n:
        A = _draw(rng, fA, batch)
        T = _draw(rng, fT, batch)
        D = _draw(rng, fD, batch)
        age = A + T
        keep = (age >= g.lower) & (age <= g.upper)
        take = np.flatnonzero(keep)[: n - have]
        cols["age"].append(age[take])
        cols["aafu"].append(A[take])
        cols["tss"].append(T[take])
        cols["duration"].append(D[take])
        have += take.size
    age, aafu, tss, dur = (np.concatenate(cols[k]) for k in ("age", "aafu", "tss", "duration"))
    ex = dur < tss
    hcv = None
    if params is not None:
        # duration so far equals time since starting for a current IDU
        d_eff = np.where(ex, dur, tss)
        p = _cell_prevalence_direct(params, band, d_eff, tss)
        hcv = rng.random(age.size) < p
    return CareerRecords(age=age, aafu=aafu, tss=tss, duration=np.where(ex, dur, -1), ex=ex, hcv=hcv)


def _tab(values, length):
    return np.bincount(values, minlength=length)[:length] / values.size


def empirical_conditionals(records: CareerRecords, n_years: int = 46, n_aafu: int = 56) -> dict:
    """Frequency tabulations by status. Classes with no records are absent."""
    out = {"n": len(records)}
    ex = records.ex
    k = float(ex.mean())
    out["kappa"] = k
    out["kappa_se"] = float(np.sqrt(k * (1 - k) / len(records)))
    out["tss_ever"] = _tab(records.tss, n_years)
    out["aafu_ever"] = _tab(records.aafu, n_aafu)
    for name, mask in (("cur", ~ex), ("ex", ex)):
        m = int(mask.sum())
        out[f"n_{name}"] = m
        if m == 0:
            continue
        out[f"tss_{name}"] = _tab(records.tss[mask], n_years)
        out[f"aafu_{name}"] = _tab(records.aafu[mask], n_aafu)
        if name == "ex":
            out["d_ex"] = _tab(records.duration[mask], n_years)
        if records.hcv is not None:
            h = records.hcv[mask]
            p = float(h.mean())
            out[f"pi_{name}"] = p
            out[f"pi_{name}_se"] = float(np.sqrt(max(p * (1 - p), 1e-12) / m))
    return out


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = max(p.size, q.size)
    p = np.pad(p, (0, m - p.size))
    q = np.pad(q, (0, m - q.size))
    return float(0.5 * np.abs(p - q).sum())


# --- scenarios and survey generation ------------------------------------------


@dataclass(frozen=True)
class DesignItem:
    """One planned observation. ``kind`` is a binomial or multinomial target."""

    source_id: str
    kind: str
    ages: str = "20-59"
    n: int = 100
    biased: bool = False
    d_cat: int | None = None
    tss_cat: int | None = None

    @property
    def is_multinomial(self) -> bool:
        return self.kind.startswith("f_")


@dataclass
class TrueScenario:
    params: RegressionParams
    history: DrugHistory
    census: CensusTable
    biases: dict  # (source, group) -> true log-odds bias
    design: list
    sources: dict = field(default_factory=dict)
    name: str = "scenario"

    def quantities(self):
        return compute_quantities(self.params, self.history, want_aafu=True)

    def truth(self) -> dict:
        """True value of every tracked proportion and prevalence."""
        qs = self.quantities()
        ag = aggregates(qs, self.census)
        out = {}
        for g, short in (("current", "cur"), ("ex", "ex"), ("non", "non"), ("ever", "ever")):
            for a, band in enumerate(AGE_GROUPS):
                out[f"rho_{short}[{band.label}]"] = float(qs.rho(g)[a])
                out[f"pi_{short}[{band.label}]"] = float(qs.pi(g)[a])
            out[f"rho_{short}"] = ag.rho_g[g]
            out[f"pi_{short}"] = ag.pi_g[g]
        for a, band in enumerate(AGE_GROUPS):
            out[f"kappa[{band.label}]"] = float(qs.kappa[a])
            out[f"pi_age[{band.label}]"] = float(ag.pi_a[a])
        out["pi"] = ag.pi
        for (s, g), b in sorted(self.biases.items()):
            out[f"beta[{s}:{g}]"] = float(b)
        return out

    def validate(self) -> None:
        obs = generate_observations(self, seed=0)
        from prevsynth.observation import require_valid

        require_valid(obs, BiasStructure.B5)

    # serialisation

    def to_dict(self) -> dict:
        p = self.params
        return {
            "name": self.name,
            "regression": {n: np.atleast_1d(getattr(p, n)).tolist() for n, _ in RegressionParams.LAYOUT},
            "history": {
                "f_D": self.history.f_D.tolist(),
                "f_TSS": self.history.f_TSS.tolist(),
                "f_AAFU": self.history.f_AAFU.tolist(),
            },
            "census": list(self.census.counts),
            "biases": [{"source": s, "group": g, "beta": float(b)} for (s, g), b in sorted(self.biases.items())],
            "sources": [
                {
                    "id": m.id,
                    "description": m.description,
                    "level": m.level,
                    "group_multipliers": dict(m.group_multipliers),
                    "age_multipliers": dict(m.age_multipliers),
                }
                for m in self.sources.values()
            ],
            "design": [{k: v for k, v in d.__dict__.items() if v is not None} for d in self.design],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrueScenario":
        reg = {}
        for name, k in RegressionParams.LAYOUT:
            v = d["regression"][name]
            reg[name] = float(v[0] if isinstance(v, list) else v) if k == 1 else np.asarray(v, dtype=float)
        h = d["history"]
        sources = {}
        for s in d.get("sources", []):
            m = DataSourceMeta(
                s["id"],
                s.get("description", ""),
                s.get("level", "city"),
                dict(s.get("group_multipliers") or {}),
                dict(s.get("age_multipliers") or {}),
            )
            sources[m.id] = m
        return cls(
            params=RegressionParams(**reg),
            history=DrugHistory(h["f_D"], h["f_TSS"], h["f_AAFU"]),
            census=CensusTable(tuple(float(x) for x in d["census"])),
            biases={(b["source"], b["group"]): float(b["beta"]) for b in d.get("biases", [])},
            design=[DesignItem(**x) for x in d["design"]],
            sources=sources,
            name=d.get("name", "scenario"),
        )

    def to_yaml(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path) -> "TrueScenario":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def _binomial_obs(item: DesignItem, y, obs_id) -> BinomialObservation:
    target = TargetSpec(item.kind, parse_age_span(item.ages), item.d_cat, item.tss_cat)
    return BinomialObservation(item.source_id, y, item.n, target, item.biased, obs_id)


def generate_observations(scenario: TrueScenario, seed) -> ObservationSet:
    """Draw one synthetic data set. Metro/national sources report the
    un-scaled proportion, so their multipliers recover the city level."""
    rng = np.random.default_rng(seed)
    qs = scenario.quantities()
    binom, multi = [], []
    counters = {}
    for item in scenario.design:
        counters[item.source_id] = counters.get(item.source_id, 0) + 1
        obs_id = f"{item.source_id}-{counters[item.source_id]}"
        if item.is_multinomial:
            ages = parse_age_span(item.ages)
            probs = predict_history_kind(item.kind, ages, qs, scenario.history, scenario.census)
            probs = np.clip(probs, 0.0, None)
            counts = rng.multinomial(item.n, probs / probs.sum())
            multi.append(MultinomialObservation(item.source_id, tuple(int(c) for c in counts), item.kind, ages, obs_id))
            continue
        draft = _binomial_obs(item, 0, obs_id)
        p = expected_probability(draft, qs, scenario.biases, scenario.census, BiasStructure.B5)
        meta = scenario.sources.get(item.source_id)
        if meta is not None and meta.level != "city":
            m = meta.group_multipliers.get(draft.target.group, 1.0) * meta.age_multipliers.get(draft.target.age_label, 1.0)
            p = p / m
            if p > 1:
                raise ValueError(f"{obs_id}: multipliers imply a proportion above 1")
        y = int(rng.binomial(item.n, p))
        binom.append(_binomial_obs(item, y, obs_id))
    return ObservationSet(binom, multi, dict(scenario.sources))


# --- the ten-source facsimile -------------------------------------------------

_SOURCES = (
    DataSourceMeta("CHC", "city community health survey"),
    DataSourceMeta("CHS", "small city household survey"),
    DataSourceMeta("HANES", "city health and nutrition examination survey"),
    DataSourceMeta("HONE", "city hepatitis outreach survey"),
    DataSourceMeta("JAILS", "city jail intake screening"),
    DataSourceMeta("NDRI", "metro-area drug-use estimates", "metro", {"current": 0.8}, {"20-59": 0.9}),
    DataSourceMeta("NHBS", "behavioural surveillance of current injectors"),
    DataSourceMeta("NSDUH", "national drug-use household survey", "national", {"current": 0.6, "ex": 0.7}, {"30-49": 0.9}),
    DataSourceMeta("RISK", "cohort study of injecting drug users"),
    DataSourceMeta("STD", "sexually transmitted disease clinic testing"),
)

_TRUE_BIASES = {
    ("CHC", "ever"): -0.3,
    ("CHC", "non"): -0.25,
    ("HONE", "ever"): 0.45,
    ("HONE", "non"): 0.3,
    ("JAILS", "ever"): 1.6,
    ("JAILS", "non"): 1.2,
    ("NHBS", "current"): 0.5,
    ("RISK", "current"): -0.5,
    ("RISK", "ex"): 0.6,
    ("RISK", "non"): 0.8,
    ("STD", "ever"): 0.9,
    ("STD", "current"): 0.45,
    ("STD", "ex"): -0.4,
    ("STD", "non"): 0.7,
}


def _facsimile_design() -> list:
    D = DesignItem
    bands = [g.label for g in AGE_GROUPS]
    out = []
    for b in bands:
        out.append(D("CHC", "rho_ever", b, 2500, True))
        out.append(D("CHC", "pi_non", b, 2000, True))
    for b in bands:
        out.append(D("CHS", "rho_ever", b, 250, False))
    for b in bands:
        out.append(D("HANES", "rho_ever", b, 1500, False))
        out.append(D("HANES", "pi_non", b, 2500, False))
    for b in bands:
        out.append(D("HONE", "rho_ever", b, 1500, True))
        out.append(D("HONE", "pi_non", b, 1500, True))
    out.append(D("JAILS", "rho_ever", "30-39", 3000, True))
    out.append(D("JAILS", "pi_non", "30-39", 2500, True))
    out.append(D("NDRI", "rho_cur", "20-59", 40000, False))
    for b in bands:
        for t in (1, 2, 3, 4, 5):
            out.append(D("NHBS", "pi_cur_tss", b, 60, True, tss_cat=t))
    out.append(D("NSDUH", "rho_cur", "30-49", 40000, False))
    out.append(D("NSDUH", "rho_ex", "30-49", 40000, False))
    out.append(D("NSDUH", "f_tss_cur", "20-59", 400))
    out.append(D("NSDUH", "f_aafu_cur", "20-59", 400))
    for b in bands:
        out.append(D("RISK", "rho_cur", b, 1500, True))
        out.append(D("RISK", "rho_ex", b, 1500, True))
        out.append(D("RISK", "pi_non", b, 800, True))
    for a, b in enumerate(bands):
        for t in range(len(TSS)):
            for d in range(t + 1):
                out.append(D("RISK", "pi_ever_cell", b, 30, False, d_cat=d, tss_cat=t))
    out.append(D("RISK", "f_d_ex", "20-59", 600))
    out.append(D("RISK", "f_tss_ex", "20-59", 600))
    out.append(D("RISK", "f_aafu_ex", "20-59", 600))
    for b in bands:
        out.append(D("STD", "rho_ever", b, 2000, True))
        out.append(D("STD", "pi_cur", b, 150, True))
        out.append(D("STD", "pi_ex", b, 150, True))
        out.append(D("STD", "pi_non", b, 2000, True))
    return out


def facsimile_params() -> RegressionParams:
    return RegressionParams(
        alpha0=float(np.log(0.042 / 0.958)),
        alpha1=np.array([-0.7, -0.3, 0.25]),
        gamma0=float(np.log(0.013 / 0.987)),
        gamma1=np.array([-1.1, -0.5, -0.1]),
        delta0=0.9,
        delta1=np.array([-0.8, -0.4, -0.1]),
        delta2=np.array([-1.4, -1.0, -0.6, -0.35, -0.2, -0.1]),
        delta3=np.array([-1.2, -0.8, -0.5, -0.3, -0.15, -0.05]),
    )


def facsimile_history() -> DrugHistory:
    return DrugHistory(
        [0.08, 0.22, 0.22, 0.16, 0.12, 0.12, 0.08],
        [0.03, 0.10, 0.15, 0.17, 0.17, 0.22, 0.16],
        [0.02, 0.12, 0.25, 0.22, 0.15, 0.10, 0.07, 0.04, 0.02, 0.01],
    )


def facsimile_scenario(zero_bias: bool = False) -> TrueScenario:
    """Ten sources informing the same targets, with the same bias flags,
    as the design used for the New York City analysis; all data synthetic."""
    biases = {k: (0.0 if zero_bias else v) for k, v in _TRUE_BIASES.items()}
    return TrueScenario(
        params=facsimile_params(),
        history=facsimile_history(),
        census=NYC_CENSUS_2010,
        biases=biases,
        design=_facsimile_design(),
        sources={m.id: m for m in _SOURCES},
        name="facsimile-zero-bias" if zero_bias else "facsimile",
    )


def without_sources(scenario: TrueScenario, drop) -> TrueScenario:
    drop = set(drop)
    return TrueScenario(
        scenario.params,
        scenario.history,
        scenario.census,
        {k: v for k, v in scenario.biases.items() if k[0] not in drop},
        [d for d in scenario.design if d.source_id not in drop],
        {k: v for k, v in scenario.sources.items() if k not in drop},
        scenario.name,
    )


# --- writers -------------------------------------------------------------------


def write_corpus(scenario: TrueScenario, obs: ObservationSet, out_dir, seed: int, sampler: dict | None = None) -> Path:
    """Write observations, source metadata, census, truth and a run manifest."""
    from prevsynth import dataio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_observations(obs, out / "observations.csv")
    dataio.write_sources(obs.sources, out / "sources.yaml")
    scenario.census.to_csv(out / "census.csv")
    with open(out / "truth.json", "w") as fh:
        json.dump(scenario.truth(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    scenario.to_yaml(out / "scenario.yaml")
    manifest = {
        "census": "census.csv",
        "observations": "observations.csv",
        "sources": "sources.yaml",
        "bias_structure": "b5",
        "seed": int(seed),
        "sampler": sampler or {"chains": 2, "iterations": 6000, "burn_in": 4000},
    }
    with open(out / "manifest.yaml", "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return out


def write_truth_csv(truth: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        for k in sorted(truth):
            w.writerow([k, repr(truth[k])])
