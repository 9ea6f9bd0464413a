"""How data sources inform model quantities.

Binomial observations target a proportion or prevalence, optionally through a
logit-additive bias term and/or a census-weighted mixture across age bands
(or, for ever-IDU prevalence, across current and ex-IDUs). Multinomial
observations target a drug-use-history distribution and are never biased.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln, logit

from prevsynth.errors import ValidationError
from prevsynth.quantities import StratifiedQuantitySet, aafu_categories
from prevsynth.strata import (
    AAFU,
    AGE_GROUPS,
    DURATION,
    N_AGES,
    TSS,
    CensusTable,
    aggregate_to_categories,
)

LEVELS = ("city", "metro", "national")

# kind -> (risk-group tag, family)
BINOMIAL_KINDS = {
    "rho_ever": ("ever", "rho"),
    "rho_cur": ("current", "rho"),
    "rho_ex": ("ex", "rho"),
    "rho_non": ("non", "rho"),
    "pi_non": ("non", "pi_non"),
    "pi_cur": ("current", "pi_idu"),
    "pi_ex": ("ex", "pi_idu"),
    "pi_ever": ("ever", "pi_idu"),
    "pi_ever_cell": ("ever", "pi_idu"),
    "pi_cur_tss": ("current", "pi_idu"),
}
FAMILIES = ("rho", "pi_non", "pi_idu")
FAMILY_LABELS = {
    "rho": "IDU proportions (rho_ever/rho_cur/rho_ex)",
    "pi_non": "non-IDU prevalence (pi_non)",
    "pi_idu": "IDU prevalence (pi_cur/pi_ex/pi_ever)",
}

# kind -> (scheme, conditioning group or None for the ever-IDU parameter)
MULTINOMIAL_KINDS = {
    "f_d_ever": (DURATION, None),
    "f_tss_ever": (TSS, None),
    "f_aafu_ever": (AAFU, None),
    "f_d_ex": (DURATION, "ex"),
    "f_tss_cur": (TSS, "current"),
    "f_tss_ex": (TSS, "ex"),
    "f_aafu_cur": (AAFU, "current"),
    "f_aafu_ex": (AAFU, "ex"),
}


@dataclass(frozen=True)
class DataSourceMeta:
    id: str
    description: str = ""
    level: str = "city"
    group_multipliers: dict = field(default_factory=dict)
    age_multipliers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"source {self.id}: level must be one of {LEVELS}")
        has = bool(self.group_multipliers or self.age_multipliers)
        if has != (self.level != "city"):
            raise ValueError(f"source {self.id}: multipliers are required for, and only for, non-city sources")
        for m in list(self.group_multipliers.values()) + list(self.age_multipliers.values()):
            if not 0 < m <= 1:
                raise ValueError(f"source {self.id}: multipliers must lie in (0, 1]")


def apply_level_multipliers(estimate: float, meta: DataSourceMeta, group: str, age_label: str) -> float:
    """Scale a metro/national proportion to the city level."""
    if meta.level == "city":
        raise ValueError(f"source {meta.id} is city-level; it has no multipliers")
    out = estimate * meta.group_multipliers.get(group, 1.0) * meta.age_multipliers.get(age_label, 1.0)
    if out > 1:
        raise ValueError(f"source {meta.id}: multipliers push {group} {age_label} estimate above 1 ({out:.4g})")
    return out


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    ages: tuple[int, ...]
    d_cat: int | None = None
    tss_cat: int | None = None

    def __post_init__(self):
        if self.kind not in BINOMIAL_KINDS:
            raise ValueError(f"unknown binomial target {self.kind!r}")
        if not self.ages or any(not 0 <= a < N_AGES for a in self.ages):
            raise ValueError("target needs at least one valid age band")
        if self.kind == "pi_ever_cell":
            if self.d_cat is None or self.tss_cat is None:
                raise ValueError("pi_ever_cell needs duration and tss categories")
        if self.kind == "pi_cur_tss" and self.tss_cat is None:
            raise ValueError("pi_cur_tss needs a tss category")
        if self.kind in ("pi_ever_cell", "pi_cur_tss") and len(self.ages) != 1:
            raise ValueError(f"{self.kind} cannot mix age bands")

    @property
    def group(self) -> str:
        return BINOMIAL_KINDS[self.kind][0]

    @property
    def family(self) -> str:
        return BINOMIAL_KINDS[self.kind][1]

    @property
    def age_label(self) -> str:
        return f"{AGE_GROUPS[self.ages[0]].lower}-{AGE_GROUPS[self.ages[-1]].upper}"

    @property
    def is_mixture(self) -> bool:
        return len(self.ages) > 1 or self.kind == "pi_ever"

    def describe(self) -> str:
        s = f"{self.kind}[{self.age_label}"
        if self.d_cat is not None:
            s += f", d={DURATION.labels[self.d_cat]}"
        if self.tss_cat is not None:
            s += f", tss={TSS.labels[self.tss_cat]}"
        return s + "]"


@dataclass(frozen=True)
class BinomialObservation:
    source_id: str
    y: float
    n: float
    target: TargetSpec
    biased: bool = False
    obs_id: str = ""

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError(f"{self.obs_id or self.source_id}: n must be positive")
        if not 0 <= self.y <= self.n:
            raise ValueError(f"{self.obs_id or self.source_id}: need 0 <= y <= n (y={self.y}, n={self.n})")


@dataclass(frozen=True)
class MultinomialObservation:
    source_id: str
    counts: tuple[float, ...]
    kind: str
    ages: tuple[int, ...] = tuple(range(N_AGES))
    obs_id: str = ""

    def __post_init__(self):
        if self.kind not in MULTINOMIAL_KINDS:
            raise ValueError(f"unknown multinomial target {self.kind!r}")
        scheme = MULTINOMIAL_KINDS[self.kind][0]
        if len(self.counts) != len(scheme):
            raise ValueError(f"{self.obs_id or self.source_id}: {self.kind} needs {len(scheme)} counts")
        if any(c < 0 for c in self.counts):
            raise ValueError(f"{self.obs_id or self.source_id}: negative count")

    @property
    def scheme(self):
        return MULTINOMIAL_KINDS[self.kind][0]

    @property
    def group(self):
        return MULTINOMIAL_KINDS[self.kind][1]


class BiasStructure(enum.Enum):
    B1 = "b1"  # no bias
    B2 = "b2"  # current-IDU information unbiased
    B3 = "b3"  # ex-IDU information unbiased
    B4 = "b4"  # non-IDU information unbiased
    B5 = "b5"  # per source and risk group
    B6 = "b6"  # per risk group, shared across sources
    B7 = "b7"  # per source, shared across risk groups

    @classmethod
    def parse(cls, s) -> "BiasStructure":
        if isinstance(s, cls):
            return s
        return cls(str(s).lower())

    @property
    def description(self) -> str:
        return {
            "b1": "no bias terms",
            "b2": "biases except current IDUs",
            "b3": "biases except ex-IDUs",
            "b4": "biases except non-IDUs",
            "b5": "bias per source and group",
            "b6": "bias per group",
            "b7": "bias per source",
        }[self.value]

    def key(self, source_id: str, group: str, biased: bool):
        """Bias key for an observation, or None when it is treated as unbiased."""
        if not biased or self is BiasStructure.B1:
            return None
        pinned = {BiasStructure.B2: "current", BiasStructure.B3: "ex", BiasStructure.B4: "non"}
        if pinned.get(self) == group:
            return None
        if self is BiasStructure.B6:
            return ("*", group)
        if self is BiasStructure.B7:
            return (source_id, "*")
        return (source_id, group)


def format_key(key) -> str:
    return f"{key[0]}:{key[1]}"


@dataclass
class ObservationSet:
    binomial: list = field(default_factory=list)
    multinomial: list = field(default_factory=list)
    sources: dict = field(default_factory=dict)
    city_level: bool = False  # metro/national counts already scaled

    @property
    def source_ids(self) -> list[str]:
        ids = {o.source_id for o in self.binomial} | {o.source_id for o in self.multinomial}
        return sorted(ids | set(self.sources))

    def __len__(self):
        return len(self.binomial) + len(self.multinomial)

    def without_source(self, source_id: str) -> "ObservationSet":
        return ObservationSet(
            [o for o in self.binomial if o.source_id != source_id],
            [o for o in self.multinomial if o.source_id != source_id],
            {k: v for k, v in self.sources.items() if k != source_id},
            self.city_level,
        )

    def bias_keys(self, structure: BiasStructure) -> list:
        """Exactly the keys referenced by biased observations under ``structure``."""
        keys = {structure.key(o.source_id, o.target.group, o.biased) for o in self.binomial}
        keys.discard(None)
        return sorted(keys)

    def identifiability_problems(self, structure: BiasStructure) -> list[str]:
        """Families lacking any observation treated as unbiased."""
        unbiased = {f: 0 for f in FAMILIES}
        for o in self.binomial:
            if structure.key(o.source_id, o.target.group, o.biased) is None:
                unbiased[o.target.family] += 1
        return [
            f"identifiability: no unbiased information for {FAMILY_LABELS[f]}"
            for f in FAMILIES
            if unbiased[f] == 0
        ]

    def adjusted_to_city(self) -> "ObservationSet":
        """Apply metro/national multipliers to the observed proportions.
        Idempotent: an already adjusted set is returned unchanged."""
        if self.city_level:
            return self
        out = []
        for o in self.binomial:
            meta = self.sources.get(o.source_id)
            if meta is None or meta.level == "city":
                out.append(o)
                continue
            p = apply_level_multipliers(o.y / o.n, meta, o.target.group, o.target.age_label)
            out.append(replace(o, y=p * o.n))
        return ObservationSet(out, list(self.multinomial), dict(self.sources), True)

    def table1(self) -> list[dict]:
        """Per-source listing of informed targets and bias flags."""
        rows = {}
        for o in self.binomial:
            r = rows.setdefault(o.source_id, {"source": o.source_id, "biased": set(), "unbiased": set(), "history": set()})
            r["biased" if o.biased else "unbiased"].add(f"{o.target.kind}[{o.target.age_label}]")
        for o in self.multinomial:
            r = rows.setdefault(o.source_id, {"source": o.source_id, "biased": set(), "unbiased": set(), "history": set()})
            r["history"].add(o.kind)
        out = []
        for sid in sorted(rows):
            r = rows[sid]
            meta = self.sources.get(sid)
            kind = "Both" if r["biased"] and r["unbiased"] else ("Biased" if r["biased"] else "Unbiased")
            out.append(
                {
                    "source": sid,
                    "level": meta.level if meta else "city",
                    "information": kind,
                    "biased": sorted(r["biased"]),
                    "unbiased": sorted(r["unbiased"]),
                    "history": sorted(r["history"]),
                }
            )
        return out


def target_components(target: TargetSpec, census: CensusTable):
    """Mixture components as ``(scale, weight_name, value_name)`` triples.

    The target value is ``sum(scale * q[weight] * q[value]) / sum(scale * q[weight])``
    where ``q["one"] == 1``. Proportions mix over bands with census weights;
    prevalences mix with census-times-proportion weights (persons in the
    group), which reduces to census weights for a single band.
    """
    N = census.N
    k = target.kind
    if k == "pi_ever_cell":
        a = target.ages[0]
        return [(1.0, "one", ("cell", a, target.d_cat, target.tss_cat))]
    if k == "pi_cur_tss":
        a = target.ages[0]
        return [(1.0, "one", ("cell", a, target.tss_cat, target.tss_cat))]
    if k.startswith("rho_"):
        return [(N[a], "one", (k, a)) for a in target.ages]
    if k == "pi_ever":
        return [(N[a], (f"rho_{g}", a), (f"pi_{g}", a)) for a in target.ages for g in ("cur", "ex")]
    g = k.split("_")[1]
    if len(target.ages) == 1:
        return [(1.0, "one", (k, target.ages[0]))]
    return [(N[a], (f"rho_{g}", a), (k, a)) for a in target.ages]


def _lookup(qs: StratifiedQuantitySet, name):
    if name == "one":
        return 1.0
    if name[0] == "cell":
        _, a, d, t = name
        return float(qs.pi_ever_cell[a, d, t])
    kind, a = name
    return float(getattr(qs, kind)[a])


def _biased(p, beta):
    return float(expit(logit(p) + beta))


def expected_probability(
    obs: BinomialObservation,
    qs: StratifiedQuantitySet,
    biases: dict,
    census: CensusTable,
    structure: BiasStructure = BiasStructure.B5,
    mix_then_bias: bool = True,
) -> float:
    """Probability the source reports for one observation."""
    key = structure.key(obs.source_id, obs.target.group, obs.biased)
    if key is not None and key not in biases:
        raise KeyError(f"missing bias term {format_key(key)} for {obs.obs_id or obs.source_id}")
    beta = 0.0 if key is None else float(biases[key])
    comps = target_components(obs.target, census)
    num = den = 0.0
    for s, wname, vname in comps:
        w = s * _lookup(qs, wname)
        v = _lookup(qs, vname)
        if key is not None and not mix_then_bias:
            v = _biased(v, beta)
        num += w * v
        den += w
    p = num / den
    if key is not None and mix_then_bias:
        p = _biased(p, beta)
    return p


def loglik_binomial(obs: BinomialObservation, p: float) -> float:
    y, n = obs.y, obs.n
    if (p <= 0 and y > 0) or (p >= 1 and y < n):
        return -np.inf
    logc = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    out = logc
    if y > 0:
        out += y * np.log(p)
    if n - y > 0:
        out += (n - y) * np.log1p(-p)
    return float(out)


def loglik_multinomial(counts, probs) -> float:
    z = np.asarray(counts, dtype=float)
    p = np.asarray(probs, dtype=float)
    if np.any((p <= 0) & (z > 0)):
        return -np.inf
    coef = gammaln(z.sum() + 1) - gammaln(z + 1).sum()
    with np.errstate(divide="ignore"):
        terms = np.where(z > 0, z * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(coef + terms.sum())


def predicted_history(obs: MultinomialObservation, qs: StratifiedQuantitySet, history, census: CensusTable) -> np.ndarray:
    """Predicted category probabilities for a history observation."""
    return predict_history_kind(obs.kind, obs.ages, qs, history, census)


def predict_history_kind(kind, ages, qs, history, census) -> np.ndarray:
    scheme, group = MULTINOMIAL_KINDS[kind]
    if group is None:
        return {"f_d_ever": history.f_D, "f_tss_ever": history.f_TSS, "f_aafu_ever": history.f_AAFU}[kind]
    adj = qs.adjustment
    field_name = {"f_d_ex": "d_ex", "f_tss_cur": "tss_cur", "f_tss_ex": "tss_ex", "f_aafu_cur": "aafu_cur", "f_aafu_ex": "aafu_ex"}[kind]
    yearly = getattr(adj, field_name)
    if yearly.size == 0:
        raise ValueError("quantities were computed without AAFU adjustments")
    ages = list(ages)
    rho = qs.rho_ex if group == "ex" else qs.rho_cur
    w = census.N[ages] * rho[ages]
    mix = (w[:, None] * yearly[ages]).sum(axis=0) / w.sum()
    if scheme is AAFU:
        return aafu_categories(mix)
    return aggregate_to_categories(mix, scheme)


def validate(obs: ObservationSet, structure: BiasStructure, allow_prior_only: bool = False) -> list[str]:
    """Schema-independent checks: source metadata and identifiability."""
    problems = []
    for sid in {o.source_id for o in obs.binomial} | {o.source_id for o in obs.multinomial}:
        if obs.sources and sid not in obs.sources:
            problems.append(f"source {sid}: no metadata entry")
    if not allow_prior_only:
        problems += obs.identifiability_problems(structure)
    return problems


def require_valid(obs: ObservationSet, structure: BiasStructure, allow_prior_only: bool = False) -> None:
    problems = validate(obs, structure, allow_prior_only)
    if problems:
        raise ValidationError(problems)
