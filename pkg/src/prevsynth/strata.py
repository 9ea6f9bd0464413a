"""Stratification lattice: age bands, IDU risk groups, drug-history time
categories, the yearly grid and census weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RISK_GROUPS = ("current", "ex", "non")
# "ever" is current + ex; it labels observations and targets, never a stratum.
TARGET_GROUPS = RISK_GROUPS + ("ever",)


@dataclass(frozen=True)
class AgeGroup:
    index: int
    lower: int
    upper: int

    @property
    def label(self) -> str:
        return f"{self.lower}-{self.upper}"

    @property
    def width(self) -> int:
        return self.upper - self.lower + 1


AGE_GROUPS = (
    AgeGroup(0, 20, 29),
    AgeGroup(1, 30, 39),
    AgeGroup(2, 40, 49),
    AgeGroup(3, 50, 59),
)
N_AGES = len(AGE_GROUPS)
BASELINE_AGE = 3


def parse_age_span(label: str) -> tuple[int, ...]:
    """Map an age label such as ``"30-39"`` or ``"30-49"`` to the indices of
    the bands it covers. The span must align with band edges."""
    try:
        lo, hi = (int(x) for x in label.strip().split("-"))
    except ValueError:
        raise ValueError(f"bad age group label {label!r}") from None
    idx = tuple(g.index for g in AGE_GROUPS if g.lower >= lo and g.upper <= hi)
    if not idx or AGE_GROUPS[idx[0]].lower != lo or AGE_GROUPS[idx[-1]].upper != hi:
        raise ValueError(f"age span {label!r} does not align with the 10-year bands")
    return idx


@dataclass(frozen=True)
class TimeCategoryScheme:
    """Ordered, disjoint integer-year intervals (inclusive bounds)."""

    kind: str
    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        prev_hi = None
        for lo, hi in self.bounds:
            if lo > hi or (prev_hi is not None and lo <= prev_hi):
                raise ValueError(f"{self.kind}: categories must be ordered and disjoint")
            prev_hi = hi

    def __len__(self) -> int:
        return len(self.bounds)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple("<1" if (lo, hi) == (0, 0) else f"{lo}-{hi}" for lo, hi in self.bounds)

    @property
    def min_year(self) -> int:
        return self.bounds[0][0]

    @property
    def max_year(self) -> int:
        return self.bounds[-1][1]

    def index_of(self, label: str) -> int:
        label = label.strip()
        if label.isdigit() and label not in self.labels:
            i = int(label)
            if 0 <= i < len(self):
                return i
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"unknown {self.kind} category {label!r}") from None


DURATION = TimeCategoryScheme(
    "duration", ((0, 0), (1, 4), (5, 9), (10, 14), (15, 19), (20, 29), (30, 45))
)
TSS = TimeCategoryScheme("tss", DURATION.bounds)
AAFU = TimeCategoryScheme(
    "aafu",
    ((8, 9), (10, 14), (15, 19), (20, 24), (25, 29), (30, 34), (35, 39), (40, 44), (45, 50), (51, 55)),
)
SCHEMES = {"duration": DURATION, "tss": TSS, "aafu": AAFU}


@dataclass(frozen=True)
class YearGrid:
    t_max: int = 45

    def __post_init__(self):
        if self.t_max < DURATION.max_year:
            raise ValueError(f"t_max must be >= {DURATION.max_year}")

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.t_max + 1)


DEFAULT_GRID = YearGrid()


def year_to_category(t: int, scheme: TimeCategoryScheme) -> int:
    """Category containing year ``t``; years past the last bound map to the
    last (baseline) category."""
    if t < 0:
        raise ValueError("negative year")
    if t < scheme.min_year:
        raise ValueError(f"year {t} precedes the first {scheme.kind} category")
    for i, (lo, hi) in enumerate(scheme.bounds):
        if lo <= t <= hi:
            return i
    if t > scheme.max_year:
        return len(scheme) - 1
    raise ValueError(f"year {t} falls in a gap of the {scheme.kind} scheme")


def category_of_years(scheme: TimeCategoryScheme, n_years: int) -> np.ndarray:
    """Vector of category indices for years ``0..n_years-1`` (-1 below support)."""
    out = np.full(n_years, -1, dtype=np.intp)
    for t in range(scheme.min_year, n_years):
        out[t] = year_to_category(t, scheme)
    return out


def _grid_length(scheme: TimeCategoryScheme, grid: YearGrid) -> int:
    return max(grid.t_max, scheme.max_year) + 1


def expand_to_yearly(mass, scheme: TimeCategoryScheme, grid: YearGrid = DEFAULT_GRID) -> np.ndarray:
    """Spread category mass uniformly over each category's integer years.

    The result is indexed by year, from 0 up to ``max(t_max, last bound)``.
    """
    mass = np.asarray(mass, dtype=float)
    if mass.shape != (len(scheme),):
        raise ValueError(f"expected {len(scheme)} {scheme.kind} categories, got {mass.shape}")
    if np.any(mass < 0):
        raise ValueError("negative mass")
    if abs(mass.sum() - 1.0) > 1e-12:
        raise ValueError(f"mass sums to {mass.sum()!r}, not 1")
    pmf = np.zeros(_grid_length(scheme, grid))
    for m, (lo, hi) in zip(mass, scheme.bounds):
        pmf[lo : hi + 1] = m / (hi - lo + 1)
    return pmf


def yearly_spread_matrix(scheme: TimeCategoryScheme, grid: YearGrid = DEFAULT_GRID) -> np.ndarray:
    """Matrix ``E`` with ``expand_to_yearly(m) == m @ E`` (no validation)."""
    E = np.zeros((len(scheme), _grid_length(scheme, grid)))
    for i, (lo, hi) in enumerate(scheme.bounds):
        E[i, lo : hi + 1] = 1.0 / (hi - lo + 1)
    return E


def aggregate_to_categories(pmf, scheme: TimeCategoryScheme) -> np.ndarray:
    """Sum a yearly pmf back into the scheme's categories. Years past the last
    bound fold into the last category."""
    pmf = np.asarray(pmf, dtype=float)
    out = np.zeros(len(scheme))
    for i, (lo, hi) in enumerate(scheme.bounds):
        out[i] = pmf[lo : hi + 1].sum()
    out[-1] += pmf[scheme.max_year + 1 :].sum()
    return out


@dataclass(frozen=True)
class CensusTable:
    counts: tuple[float, ...]
    bands: tuple[AgeGroup, ...] = field(default=AGE_GROUPS)

    def __post_init__(self):
        if len(self.counts) != N_AGES:
            raise ValueError(f"census needs {N_AGES} age groups")
        if any(not (c > 0) for c in self.counts):
            raise ValueError("census counts must be positive")

    @property
    def N(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)

    @property
    def total(self) -> float:
        return float(sum(self.counts))

    def weights(self, ages) -> np.ndarray:
        """Census weights of the listed bands, normalised to sum to one."""
        n = self.N[list(ages)]
        return n / n.sum()

    @classmethod
    def from_csv(cls, path) -> "CensusTable":
        rows = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"age_group_lower", "age_group_upper", "population"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise ValueError(f"{path}: census CSV needs columns {sorted(need)}")
            for line, row in enumerate(reader, start=2):
                lo, hi = int(row["age_group_lower"]), int(row["age_group_upper"])
                match = [g for g in AGE_GROUPS if (g.lower, g.upper) == (lo, hi)]
                if not match:
                    raise ValueError(f"{path}:{line}: unknown age band {lo}-{hi}")
                rows[match[0].index] = float(row["population"])
        if sorted(rows) != list(range(N_AGES)):
            raise ValueError(f"{path}: census must list every age band exactly once")
        return cls(tuple(rows[i] for i in range(N_AGES)))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["age_group_lower", "age_group_upper", "population"])
            for g, c in zip(self.bands, self.counts):
                w.writerow([g.lower, g.upper, repr(float(c))])


# NYC 2010 census, ages 20-59, in persons.
NYC_CENSUS_2010 = CensusTable((1_372_775.0, 1_249_662.0, 1_132_972.0, 1_017_219.0))
