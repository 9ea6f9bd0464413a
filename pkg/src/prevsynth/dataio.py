"""File formats: observation CSV, source metadata YAML and run manifests.

Observation CSV columns::

    obs_id, source_id, kind, age_group, duration_cat, tss_cat, y, n,
    bias_flag, z_1 .. z_10

Binomial rows fill ``y`` and ``n``; multinomial rows (kinds starting with
``f_``) fill ``z_1..z_k`` for the k categories of their scheme. Categories
may be given by label (``"5-9"``) or by 0-based index. ``bias_flag`` is
``biased`` or ``unbiased``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from prevsynth.errors import ValidationError
from prevsynth.observation import (
    BINOMIAL_KINDS,
    MULTINOMIAL_KINDS,
    BinomialObservation,
    DataSourceMeta,
    MultinomialObservation,
    ObservationSet,
    TargetSpec,
)
from prevsynth.strata import AGE_GROUPS, DURATION, TSS, CensusTable, parse_age_span

MAX_CATEGORIES = 10
COLUMNS = [
    "obs_id", "source_id", "kind", "age_group", "duration_cat", "tss_cat",
    "y", "n", "bias_flag",
] + [f"z_{i}" for i in range(1, MAX_CATEGORIES + 1)]
_FLAGS = {"biased": True, "unbiased": False, "1": True, "0": False, "true": True, "false": False}


def _num(s: str) -> float:
    v = float(s)
    return int(v) if v.is_integer() else v


def _age_label(ages) -> str:
    return f"{AGE_GROUPS[ages[0]].lower}-{AGE_GROUPS[ages[-1]].upper}"


def parse_observation_row(row: dict, where: str):
    """One CSV row to an observation; raises ValueError with context."""
    kind = (row.get("kind") or "").strip()
    src = (row.get("source_id") or "").strip()
    if not src:
        raise ValueError(f"{where}: missing source_id")
    obs_id = (row.get("obs_id") or "").strip() or where
    ages = parse_age_span(row.get("age_group") or "20-59")
    if kind in MULTINOMIAL_KINDS:
        scheme = MULTINOMIAL_KINDS[kind][0]
        counts = []
        for i in range(1, len(scheme) + 1):
            v = (row.get(f"z_{i}") or "").strip()
            if v == "":
                raise ValueError(f"{where}: {kind} needs z_1..z_{len(scheme)}")
            counts.append(_num(v))
        extra = [i for i in range(len(scheme) + 1, MAX_CATEGORIES + 1) if (row.get(f"z_{i}") or "").strip()]
        if extra:
            raise ValueError(f"{where}: {kind} has {len(scheme)} categories but z_{extra[0]} is filled")
        try:
            return MultinomialObservation(src, tuple(counts), kind, ages, obs_id)
        except ValueError as e:
            raise ValueError(f"{where}: {e}") from None
    if kind not in BINOMIAL_KINDS:
        raise ValueError(f"{where}: unknown kind {kind!r}")
    d = (row.get("duration_cat") or "").strip()
    t = (row.get("tss_cat") or "").strip()
    flag = (row.get("bias_flag") or "unbiased").strip().lower()
    if flag not in _FLAGS:
        raise ValueError(f"{where}: bias_flag must be 'biased' or 'unbiased'")
    try:
        y = _num(row["y"])
        n = _num(row["n"])
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"{where}: y and n must be numbers") from None
    if y > n:
        raise ValueError(f"{where}: y={y} exceeds n={n}")
    try:
        target = TargetSpec(
            kind,
            ages,
            DURATION.index_of(d) if d else None,
            TSS.index_of(t) if t else None,
        )
        return BinomialObservation(src, y, n, target, _FLAGS[flag], obs_id)
    except ValueError as e:
        raise ValueError(f"{where}: {e}") from None


def read_observations(path, sources: dict | None = None) -> ObservationSet:
    """Parse every row, collecting all problems before raising."""
    path = Path(path)
    binom, multi, problems = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"source_id", "kind"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValidationError([f"{path}: header must include {sorted(need)}"])
        for line, row in enumerate(reader, start=2):
            try:
                o = parse_observation_row(row, f"{path.name}:{line}")
            except ValueError as e:
                problems.append(str(e))
                continue
            (multi if isinstance(o, MultinomialObservation) else binom).append(o)
    if problems:
        raise ValidationError(problems)
    return ObservationSet(binom, multi, dict(sources or {}))


def write_observations(obs: ObservationSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for o in obs.binomial:
            t = o.target
            w.writerow(
                {
                    "obs_id": o.obs_id,
                    "source_id": o.source_id,
                    "kind": t.kind,
                    "age_group": t.age_label,
                    "duration_cat": DURATION.labels[t.d_cat] if t.d_cat is not None else "",
                    "tss_cat": TSS.labels[t.tss_cat] if t.tss_cat is not None else "",
                    "y": o.y,
                    "n": o.n,
                    "bias_flag": "biased" if o.biased else "unbiased",
                }
            )
        for o in obs.multinomial:
            row = {
                "obs_id": o.obs_id,
                "source_id": o.source_id,
                "kind": o.kind,
                "age_group": _age_label(o.ages),
                "bias_flag": "unbiased",
            }
            for i, c in enumerate(o.counts, start=1):
                row[f"z_{i}"] = c
            w.writerow(row)


def read_sources(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    items = doc.get("sources", doc) if isinstance(doc, dict) else doc
    out, problems = {}, []
    for i, s in enumerate(items or []):
        try:
            m = DataSourceMeta(
                str(s["id"]),
                str(s.get("description", "")),
                str(s.get("level", "city")),
                {str(k): float(v) for k, v in (s.get("group_multipliers") or {}).items()},
                {str(k): float(v) for k, v in (s.get("age_multipliers") or {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            problems.append(f"{Path(path).name}: source entry {i + 1}: {e}")
            continue
        if m.id in out:
            problems.append(f"{Path(path).name}: duplicate source {m.id}")
        out[m.id] = m
    if problems:
        raise ValidationError(problems)
    return out


def write_sources(sources: dict, path) -> None:
    doc = {
        "sources": [
            {
                "id": m.id,
                "description": m.description,
                "level": m.level,
                **({"group_multipliers": dict(m.group_multipliers)} if m.group_multipliers else {}),
                **({"age_multipliers": dict(m.age_multipliers)} if m.age_multipliers else {}),
            }
            for m in sources.values()
        ]
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


@dataclass
class RunManifest:
    """Paths and settings for one analysis; relative paths resolve against
    the manifest's directory."""

    census: Path
    observations: Path | None
    sources: Path | None
    bias_structure: str = "b5"
    seed: int = 0
    sampler: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    reference_sources: list | None = None
    base: Path = Path(".")

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if not path.exists():
            raise ValidationError([f"manifest {path} not found"])
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        base = path.parent
        problems = []

        def resolve(key, required):
            v = doc.get(key)
            if v is None:
                if required:
                    problems.append(f"manifest: missing '{key}'")
                return None
            p = (base / v).resolve()
            if not p.exists():
                problems.append(f"manifest: {key} file {p} does not exist")
            return p

        m = cls(
            census=resolve("census", True),
            observations=resolve("observations", False),
            sources=resolve("sources", False),
            bias_structure=str(doc.get("bias_structure", "b5")).lower(),
            seed=int(doc.get("seed", 0)),
            sampler=dict(doc.get("sampler") or {}),
            prior=dict(doc.get("prior") or {}),
            reference_sources=doc.get("reference_sources"),
            base=base,
        )
        if problems:
            raise ValidationError(problems)
        return m

    def load_inputs(self):
        """Census table and raw (not yet city-scaled) observation set."""
        problems = []
        try:
            census = CensusTable.from_csv(self.census)
        except ValueError as e:
            problems.append(str(e))
            census = None
        sources = {}
        if self.sources is not None:
            try:
                sources = read_sources(self.sources)
            except ValidationError as e:
                problems += e.problems
        obs = ObservationSet(sources=sources)
        if self.observations is not None:
            try:
                obs = read_observations(self.observations, sources)
            except ValidationError as e:
                problems += e.problems
        if problems:
            raise ValidationError(problems)
        return census, obs
