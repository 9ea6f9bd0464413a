"""Deterministic map from model parameters to every proportion and
prevalence on the (risk group x age band) lattice.

Logistic regressions give the data-rich quantities (ever-IDU proportion,
ever-IDU prevalence by duration/time-since-start cell, non-IDU prevalence).
The drug-use-history distributions then split ever-IDUs into current and
ex-IDUs and correct the snapshot (length) bias of group-specific histories.

Conventions: every cdf is ``F(t) = P(X <= t)`` on integer years and
``F(t-) = P(X < t) = F(t - 1)``. Ex-IDU status at the snapshot means the
injecting duration is strictly shorter than the time since starting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from prevsynth import kernels
from prevsynth.errors import DegenerateStratumError, InconsistentHistoryError
from prevsynth.strata import (
    AAFU,
    AGE_GROUPS,
    DEFAULT_GRID,
    DURATION,
    N_AGES,
    TSS,
    CensusTable,
    YearGrid,
    aggregate_to_categories,
    category_of_years,
    expand_to_yearly,
)

# Bounds that make the AAFU window identically one.
_NO_WINDOW = (-(10**6), 10**6)


@dataclass(frozen=True)
class RegressionParams:
    """Logistic-regression coefficients. Age effects are log-odds ratios
    against 50-59; duration and time-since-start effects against 30-45 years."""

    alpha0: float = 0.0
    alpha1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gamma0: float = 0.0
    gamma1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta0: float = 0.0
    delta1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta2: np.ndarray = field(default_factory=lambda: np.zeros(6))
    delta3: np.ndarray = field(default_factory=lambda: np.zeros(6))

    LAYOUT = (
        ("alpha0", 1),
        ("alpha1", 3),
        ("gamma0", 1),
        ("gamma1", 3),
        ("delta0", 1),
        ("delta1", 3),
        ("delta2", 6),
        ("delta3", 6),
    )
    SIZE = 24

    def __post_init__(self):
        for name, k in self.LAYOUT:
            v = np.asarray(getattr(self, name), dtype=float)
            if k == 1:
                v = float(v)
                ok = np.isfinite(v)
            else:
                if v.shape != (k,):
                    raise ValueError(f"{name} must have length {k}")
                ok = np.all(np.isfinite(v))
            if not ok:
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(getattr(self, n)) for n, _ in self.LAYOUT])

    @classmethod
    def from_vector(cls, v) -> "RegressionParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (cls.SIZE,):
            raise ValueError(f"expected {cls.SIZE} regression coefficients")
        kw, i = {}, 0
        for name, k in cls.LAYOUT:
            kw[name] = v[i] if k == 1 else v[i : i + k].copy()
            i += k
        return cls(**kw)


def _with_baseline(v) -> np.ndarray:
    return np.append(np.asarray(v, dtype=float), 0.0)


def rho_ever_logits(params: RegressionParams) -> np.ndarray:
    return params.alpha0 + _with_baseline(params.alpha1)


def pi_non_logits(params: RegressionParams) -> np.ndarray:
    return params.gamma0 + _with_baseline(params.gamma1)


def pi_ever_logits(params: RegressionParams) -> np.ndarray:
    """Cell logits indexed ``[age, duration category, tss category]``."""
    return (
        params.delta0
        + _with_baseline(params.delta1)[:, None, None]
        + _with_baseline(params.delta2)[None, :, None]
        + _with_baseline(params.delta3)[None, None, :]
    )


def rho_ever(a: int, params: RegressionParams) -> float:
    return float(expit(rho_ever_logits(params)[a]))


def pi_non(a: int, params: RegressionParams) -> float:
    return float(expit(pi_non_logits(params)[a]))


def pi_ever_cell(d_cat: int, tss_cat: int, a: int, params: RegressionParams) -> float:
    if not (0 <= d_cat < len(DURATION) and 0 <= tss_cat < len(TSS) and 0 <= a < N_AGES):
        raise IndexError("category index out of range")
    return float(expit(pi_ever_logits(params)[a, d_cat, tss_cat]))


class DrugHistory:
    """Ever-IDU category distributions of injecting duration, time since
    starting and age at first use, with their yearly expansions.

    The three variables are taken as independent and age-invariant.
    """

    __slots__ = ("f_D", "f_TSS", "f_AAFU", "grid", "d_year", "tss_year", "aafu_year")

    def __init__(self, f_D, f_TSS, f_AAFU, grid: YearGrid = DEFAULT_GRID):
        self.grid = grid
        self.f_D = np.asarray(f_D, dtype=float)
        self.f_TSS = np.asarray(f_TSS, dtype=float)
        self.f_AAFU = np.asarray(f_AAFU, dtype=float)
        self.d_year = expand_to_yearly(self.f_D, DURATION, grid)
        self.tss_year = expand_to_yearly(self.f_TSS, TSS, grid)
        self.aafu_year = expand_to_yearly(self.f_AAFU, AAFU, grid)

    @classmethod
    def _trusted(cls, f_D, f_TSS, f_AAFU, d_year, tss_year, aafu_year, grid=DEFAULT_GRID):
        # skip validation on the sampler's hot path
        self = cls.__new__(cls)
        self.grid = grid
        self.f_D, self.f_TSS, self.f_AAFU = f_D, f_TSS, f_AAFU
        self.d_year, self.tss_year, self.aafu_year = d_year, tss_year, aafu_year
        return self

    def __repr__(self):
        return f"DrugHistory(f_D={self.f_D!r}, f_TSS={self.f_TSS!r}, f_AAFU={self.f_AAFU!r})"


def _bounds(ages):
    if ages is None:
        return [_NO_WINDOW[0]], [_NO_WINDOW[1]]
    return [AGE_GROUPS[a].lower for a in ages], [AGE_GROUPS[a].upper for a in ages]


@dataclass(frozen=True)
class SnapshotAdjustment:
    """Kernel output for a set of age bands (rows). Yearly arrays; NaN where
    a conditional is undefined."""

    Z: np.ndarray
    kappa: np.ndarray
    tss_ever: np.ndarray
    tss_cur: np.ndarray
    tss_ex: np.ndarray
    d_ex: np.ndarray
    aafu_ever: np.ndarray
    aafu_cur: np.ndarray
    aafu_ex: np.ndarray


def snapshot_adjustment(d_year, tss_year, aafu_year, age_lo, age_hi, want_aafu=True) -> SnapshotAdjustment:
    """Cessation probability and group-conditional history pmfs on yearly
    arrays, one row per ``[age_lo[i], age_hi[i]]`` band."""
    d_year = np.ascontiguousarray(d_year, dtype=float)
    tss_year = np.ascontiguousarray(tss_year, dtype=float)
    if d_year.shape != tss_year.shape:
        raise ValueError("duration and tss pmfs must share the year grid")
    out = kernels.history_kernel(
        d_year,
        tss_year,
        np.ascontiguousarray(aafu_year, dtype=float),
        list(age_lo),
        list(age_hi),
        bool(want_aafu),
    )
    return SnapshotAdjustment(*out)


def _adjust(history: DrugHistory, ages, want_aafu=True) -> SnapshotAdjustment:
    lo, hi = _bounds(ages)
    return snapshot_adjustment(history.d_year, history.tss_year, history.aafu_year, lo, hi, want_aafu)


def kappa_ex(a, history: DrugHistory) -> float:
    """Probability an ever-IDU in age band ``a`` has stopped injecting.

    ``a=None`` drops the age-at-first-use window (all ages pooled).
    """
    adj = _adjust(history, None if a is None else [a], want_aafu=False)
    if not adj.Z[0] > 0:
        raise DegenerateStratumError(f"no feasible injecting careers in age band {a}")
    return float(adj.kappa[0])


def split_proportions(rho_ever_a, kappa_a):
    """Return ``(rho_ex, rho_cur, rho_non)`` for one age band."""
    rho_ex = rho_ever_a * kappa_a
    rho_cur = rho_ever_a * (1.0 - kappa_a)
    rho_non = 1.0 - rho_ever_a
    return rho_ex, rho_cur, rho_non


_HISTORY_CONDITIONALS = ("d_ex", "tss_cur", "tss_ex")
_AAFU_CONDITIONALS = ("aafu_cur", "aafu_ex")


def _require(adj, kappa, name, a):
    needs_ex = name.endswith("_ex")
    if not adj.Z[0] > 0:
        raise DegenerateStratumError(f"no feasible injecting careers in age band {a}")
    if (needs_ex and not kappa > 0) or (not needs_ex and not kappa < 1):
        raise DegenerateStratumError(f"{name} undefined in age band {a}: cessation probability is {kappa}")
    return getattr(adj, name)[0]


def conditional_history(history: DrugHistory, a, which=_HISTORY_CONDITIONALS) -> dict:
    """Yearly duration pmf of ex-IDUs and time-since-start pmfs of current
    and ex-IDUs in band ``a`` (``None`` for the window-free version).

    Only the requested conditionals are checked for degeneracy.
    """
    adj = _adjust(history, None if a is None else [a], want_aafu=False)
    k = adj.kappa[0]
    return {name: _require(adj, k, name, a) for name in which}


def conditional_aafu(history: DrugHistory, a: int, which=_AAFU_CONDITIONALS) -> dict:
    """Yearly age-at-first-use pmfs of current and ex-IDUs in band ``a``,
    obtained by summing the single-age adjustment over the band's ages."""
    adj = _adjust(history, [a], want_aafu=True)
    k = adj.kappa[0]
    out = {name: _require(adj, k, name, a) for name in which}
    return out


def pi_year_matrix(cell_pi, n_years: int) -> np.ndarray:
    """Expand ``cell_pi[a, d_cat, tss_cat]`` to ``[a, duration year, tss year]``."""
    dc = category_of_years(DURATION, n_years)
    tc = category_of_years(TSS, n_years)
    return np.ascontiguousarray(cell_pi[:, dc[:, None], tc[None, :]])


def group_prevalence(pi_year, d_year, tss_cur, tss_ex):
    """Prevalence among current and ex-IDUs for each band row, from yearly
    pmfs. Raises on ex-IDU weight that has no shorter duration to draw on."""
    pi_cur, pi_ex = kernels.prevalence_kernel(
        np.ascontiguousarray(pi_year, dtype=float),
        np.ascontiguousarray(d_year, dtype=float),
        np.ascontiguousarray(np.atleast_2d(tss_cur), dtype=float),
        np.ascontiguousarray(np.atleast_2d(tss_ex), dtype=float),
    )
    return pi_cur, pi_ex


def pi_current(a: int, params: RegressionParams, history: DrugHistory) -> float:
    cond = conditional_history(history, a, which=("tss_cur",))
    cells = expit(pi_ever_logits(params))[a : a + 1]
    py = pi_year_matrix(cells, history.tss_year.shape[0])
    zeros = np.zeros_like(cond["tss_cur"])
    pc, _ = group_prevalence(py, history.d_year, cond["tss_cur"], zeros)
    return float(pc[0])


def pi_ex(a: int, params: RegressionParams, history: DrugHistory) -> float:
    cond = conditional_history(history, a, which=("tss_ex",))
    cells = expit(pi_ever_logits(params))[a : a + 1]
    py = pi_year_matrix(cells, history.tss_year.shape[0])
    zeros = np.zeros_like(cond["tss_ex"])
    _, pe = group_prevalence(py, history.d_year, zeros, cond["tss_ex"])
    if np.isnan(pe[0]):
        raise InconsistentHistoryError(f"ex-IDU weight without shorter durations in age band {a}")
    return float(pe[0])


_SHORT = {"current": "cur"}


@dataclass
class StratifiedQuantitySet:
    """All cell-level quantities; arrays indexed by age band."""

    rho_ever: np.ndarray
    rho_cur: np.ndarray
    rho_ex: np.ndarray
    rho_non: np.ndarray
    pi_cur: np.ndarray
    pi_ex: np.ndarray
    pi_non: np.ndarray
    kappa: np.ndarray
    pi_ever_cell: np.ndarray
    adjustment: SnapshotAdjustment | None = None

    def rho(self, group: str) -> np.ndarray:
        return getattr(self, f"rho_{_SHORT.get(group, group)}")

    def pi(self, group: str) -> np.ndarray:
        group = _SHORT.get(group, group)
        if group == "ever":
            with np.errstate(invalid="ignore", divide="ignore"):
                return (self.rho_cur * self.pi_cur + self.rho_ex * self.pi_ex) / self.rho_ever
        return getattr(self, f"pi_{group}")


_AGE_LO = [g.lower for g in AGE_GROUPS]
_AGE_HI = [g.upper for g in AGE_GROUPS]
_N_YEARS = DEFAULT_GRID.t_max + 1
_DC = category_of_years(DURATION, _N_YEARS)
_TC = category_of_years(TSS, _N_YEARS)


def compute_quantities(params: RegressionParams, history: DrugHistory, want_aafu: bool = False) -> StratifiedQuantitySet:
    """Evaluate every stratified quantity for one parameter draw."""
    rho_ever_v = expit(rho_ever_logits(params))
    pi_non_v = expit(pi_non_logits(params))
    cells = expit(pi_ever_logits(params))
    adj = _adjust(history, range(N_AGES), want_aafu=want_aafu)
    if not np.all(adj.Z > 0):
        bad = [AGE_GROUPS[a].label for a in np.flatnonzero(~(adj.Z > 0))]
        raise DegenerateStratumError(f"no feasible injecting careers in age band(s) {bad}")
    kappa = adj.kappa
    rho_ex_v, rho_cur_v, rho_non_v = split_proportions(rho_ever_v, kappa)
    # a degenerate kappa leaves the matching conditional NaN; its group is empty
    tc = np.where(np.isnan(adj.tss_cur), 0.0, adj.tss_cur)
    te = np.where(np.isnan(adj.tss_ex), 0.0, adj.tss_ex)
    n = history.tss_year.shape[0]
    if n == _N_YEARS:
        pc, pe = kernels.cell_prevalence_kernel(cells, _DC, _TC, history.d_year, tc, te)
    else:
        pc, pe = group_prevalence(pi_year_matrix(cells, n), history.d_year, tc, te)
    return StratifiedQuantitySet(
        rho_ever=rho_ever_v,
        rho_cur=rho_cur_v,
        rho_ex=rho_ex_v,
        rho_non=rho_non_v,
        pi_cur=pc,
        pi_ex=pe,
        pi_non=pi_non_v,
        kappa=kappa,
        pi_ever_cell=cells,
        adjustment=adj,
    )


@dataclass(frozen=True)
class Aggregates:
    pi_a: np.ndarray
    rho_g: dict
    pi_g: dict
    pi: float


def aggregates(qs: StratifiedQuantitySet, census: CensusTable) -> Aggregates:
    """Age-specific prevalence, population-wide group proportions and group
    prevalences, and overall prevalence, all weighted by census counts."""
    N = census.N
    groups = ("current", "ex", "non")
    rho = {"current": qs.rho_cur, "ex": qs.rho_ex, "non": qs.rho_non}
    pi = {"current": qs.pi_cur, "ex": qs.pi_ex, "non": qs.pi_non}
    pi_a = sum(rho[g] * pi[g] for g in groups)
    rho_g = {g: float(N @ rho[g] / N.sum()) for g in groups}
    rho_g["ever"] = rho_g["current"] + rho_g["ex"]
    pi_g = {g: float(N @ (rho[g] * pi[g]) / (N @ rho[g])) for g in groups}
    ever_num = N @ (rho["current"] * pi["current"] + rho["ex"] * pi["ex"])
    pi_g["ever"] = float(ever_num / (N @ qs.rho_ever))
    overall = float(N @ pi_a / N.sum())
    return Aggregates(pi_a=pi_a, rho_g=rho_g, pi_g=pi_g, pi=overall)


def aafu_categories(pmf) -> np.ndarray:
    return aggregate_to_categories(pmf, AAFU)
