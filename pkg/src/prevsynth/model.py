"""Joint posterior over regression, bias and drug-history parameters.

The observation set is compiled once into flat arrays so a posterior
evaluation is a handful of vectorised gathers plus the two hot kernels.
States cache every intermediate, and a block update recomputes only what
depends on the block that moved.

Simplexes are sampled as additive log-ratios against their last category,
``p = softmax([z, 0])``. The Jacobian of that map is ``prod(p)``, so a
Dirichlet(alpha) prior has log-density ``sum(alpha * log p)`` in ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from prevsynth import kernels
from prevsynth.errors import ImpossibleDataError
from prevsynth.observation import (
    MULTINOMIAL_KINDS,
    BiasStructure,
    ObservationSet,
    format_key,
    target_components,
)
from prevsynth.quantities import DrugHistory, RegressionParams
from prevsynth.strata import (
    AAFU,
    AGE_GROUPS,
    DEFAULT_GRID,
    DURATION,
    N_AGES,
    TSS,
    CensusTable,
    category_of_years,
    yearly_spread_matrix,
)

N_REG = RegressionParams.SIZE
HISTORY_SIZES = (("D", len(DURATION)), ("TSS", len(TSS)), ("AAFU", len(AAFU)))
_LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Normal(0, variance) on regression and bias terms; symmetric
    Dirichlet on each history simplex."""

    variance: float = 100.0
    dirichlet_alpha: float = 1.0

    def __post_init__(self):
        if not self.variance > 0 or not self.dirichlet_alpha > 0:
            raise ValueError("prior variance and Dirichlet concentration must be positive")


def simplex_to_alr(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("ALR transform needs a strictly positive simplex")
    return np.log(p[:-1] / p[-1])


def alr_to_simplex(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    m = max(0.0, float(z.max())) if z.size else 0.0
    e = np.exp(np.append(z, 0.0) - m)
    return e / e.sum()


@dataclass(frozen=True)
class Block:
    name: str
    idx: np.ndarray
    kind: str  # alpha | gamma | delta | bias | history

    @property
    def size(self) -> int:
        return self.idx.size


class ParameterLayout:
    """Position of every sampled coordinate in the flat parameter vector."""

    def __init__(self, bias_keys=(), bias_families=None):
        self.bias_keys = tuple(bias_keys)
        K = len(self.bias_keys)
        self.bias = slice(N_REG, N_REG + K)
        off = N_REG + K
        self.hist = {}
        for name, k in HISTORY_SIZES:
            self.hist[name] = slice(off, off + k - 1)
            off += k - 1
        self.size = off
        self.bias_families = dict(bias_families or {})

    @property
    def names(self) -> list[str]:
        out = []
        for name, k in RegressionParams.LAYOUT:
            if k == 1:
                out.append(name)
            elif name in ("alpha1", "gamma1", "delta1"):
                out += [f"{name}[{AGE_GROUPS[i].label}]" for i in range(k)]
            else:
                scheme = DURATION if name == "delta2" else TSS
                out += [f"{name}[{scheme.labels[i]}]" for i in range(k)]
        out += [f"beta[{format_key(k)}]" for k in self.bias_keys]
        for name, k in HISTORY_SIZES:
            out += [f"z{name}[{i}]" for i in range(k - 1)]
        return out

    def blocks(self) -> list[Block]:
        ar = np.arange
        out = [
            Block("alpha", ar(0, 4), "alpha"),
            Block("gamma", ar(4, 8), "gamma"),
            Block("delta_age", ar(8, 12), "delta"),
            Block("delta_duration", ar(12, 18), "delta"),
            Block("delta_tss", ar(18, 24), "delta"),
        ]
        fams = {}
        for i, key in enumerate(self.bias_keys):
            fams.setdefault(self.bias_families.get(key, "bias"), []).append(N_REG + i)
        for fam in sorted(fams):
            out.append(Block(f"beta_{fam}", np.array(fams[fam]), "bias"))
        for name, _ in HISTORY_SIZES:
            s = self.hist[name]
            out.append(Block(f"f_{name}", ar(s.start, s.stop), "history"))
        return out

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        params = RegressionParams.from_vector(theta[:N_REG])
        biases = {k: float(theta[N_REG + i]) for i, k in enumerate(self.bias_keys)}
        history = DrugHistory(*(alr_to_simplex(theta[self.hist[n]]) for n, _ in HISTORY_SIZES))
        return params, biases, history

    def pack(self, params: RegressionParams, biases: dict, history: DrugHistory) -> np.ndarray:
        theta = np.empty(self.size)
        theta[:N_REG] = params.to_vector()
        for i, k in enumerate(self.bias_keys):
            theta[N_REG + i] = biases.get(k, 0.0)
        for (name, _), p in zip(HISTORY_SIZES, (history.f_D, history.f_TSS, history.f_AAFU)):
            theta[self.hist[name]] = simplex_to_alr(p)
        return theta


# Layout of the quantity vector used to resolve observation targets.
_Q_BASE = {
    "rho_ever": 0,
    "rho_cur": 4,
    "rho_ex": 8,
    "rho_non": 12,
    "pi_non": 16,
    "pi_cur": 20,
    "pi_ex": 24,
}
_Q_CELLS = 28
_Q_ONE = _Q_CELLS + N_AGES * len(DURATION) * len(TSS)
_Q_SIZE = _Q_ONE + 1


def _qindex(name) -> int:
    if name == "one":
        return _Q_ONE
    if name[0] == "cell":
        _, a, d, t = name
        return _Q_CELLS + (a * len(DURATION) + d) * len(TSS) + t
    kind, a = name
    return _Q_BASE[kind] + a


class State:
    """Cached evaluation of one parameter vector."""

    __slots__ = (
        "theta", "rho_ever", "rho_non", "pi_non", "cells", "hist", "adj", "kappa",
        "rho_cur", "rho_ex", "pc", "pe", "p_bin", "ll_bin", "mult_probs",
        "ll_mult", "lp_hist", "valid", "log_prior", "log_post",
    )

    def copy(self) -> "State":
        s = State.__new__(State)
        for k in State.__slots__:
            setattr(s, k, getattr(self, k))
        return s


_HIST_FIELDS = {"f_d_ex": 5, "f_tss_cur": 3, "f_tss_ex": 4, "f_aafu_cur": 7, "f_aafu_ex": 8}


class Posterior:
    """Compiled log-posterior for one observation set and bias structure."""

    def __init__(
        self,
        obs: ObservationSet,
        census: CensusTable,
        structure=BiasStructure.B5,
        prior: PriorSpec = PriorSpec(),
        mix_then_bias: bool = True,
        grid=DEFAULT_GRID,
    ):
        self.structure = BiasStructure.parse(structure)
        self.obs = obs.adjusted_to_city()
        self.census = census
        self.prior = prior
        self.mix_then_bias = mix_then_bias
        self.grid = grid
        keys = self.obs.bias_keys(self.structure)
        families = {}
        for o in self.obs.binomial:
            k = self.structure.key(o.source_id, o.target.group, o.biased)
            if k is not None:
                families.setdefault(k, o.target.family)
        self.layout = ParameterLayout(keys, families)
        self._compile_binomial()
        self._compile_multinomial()
        n_years = grid.t_max + 1
        self._E = [yearly_spread_matrix(s, grid) for s in (DURATION, TSS, AAFU)]
        self._DC = category_of_years(DURATION, n_years)
        self._TC = category_of_years(TSS, n_years)
        self._lo = [g.lower for g in AGE_GROUPS]
        self._hi = [g.upper for g in AGE_GROUPS]
        self._N = census.N
        self.source_ids = self.obs.source_ids
        sidx = {s: i for i, s in enumerate(self.source_ids)}
        self._bin_src = np.array([sidx[o.source_id] for o in self.obs.binomial], dtype=np.intp)
        self._mult_src = np.array([sidx[o.source_id] for o in self.obs.multinomial], dtype=np.intp)
        self._n_normal = N_REG + len(self.layout.bias_keys)
        self._norm_const = -0.5 * self._n_normal * (_LOG2PI + np.log(prior.variance))
        a = prior.dirichlet_alpha
        self._dir_const = float(sum(gammaln(k * a) - k * gammaln(a) for _, k in HISTORY_SIZES))

    # compilation

    def _compile_binomial(self):
        obs = self.obs.binomial
        key_pos = {k: i for i, k in enumerate(self.layout.bias_keys)}
        scale, wcol, vcol, starts, bias_idx, comp_row = [], [], [], [], [], []
        for j, o in enumerate(obs):
            starts.append(len(scale))
            for s, w, v in target_components(o.target, self.census):
                scale.append(s)
                wcol.append(_qindex(w))
                vcol.append(_qindex(v))
                comp_row.append(j)
            k = self.structure.key(o.source_id, o.target.group, o.biased)
            bias_idx.append(-1 if k is None else key_pos[k])
        self._scale = np.array(scale, dtype=float)
        self._wcol = np.array(wcol, dtype=np.intp)
        self._vcol = np.array(vcol, dtype=np.intp)
        self._starts = np.array(starts, dtype=np.intp)
        self._bias_idx = np.array(bias_idx, dtype=np.intp)
        self._biased_rows = np.flatnonzero(self._bias_idx >= 0)
        comp_bias = self._bias_idx[np.array(comp_row, dtype=np.intp)] if comp_row else np.zeros(0, np.intp)
        self._biased_comps = np.flatnonzero(comp_bias >= 0)
        self._comp_bias = comp_bias
        self._y = np.array([o.y for o in obs], dtype=float)
        self._n = np.array([o.n for o in obs], dtype=float)
        self._logc = gammaln(self._n + 1) - gammaln(self._y + 1) - gammaln(self._n - self._y + 1)
        self._single = bool(len(scale) == len(obs))

    def _compile_multinomial(self):
        self._mult = []
        self.want_aafu = False
        for o in self.obs.multinomial:
            scheme, group = MULTINOMIAL_KINDS[o.kind]
            z = np.asarray(o.counts, dtype=float)
            coef = float(gammaln(z.sum() + 1) - gammaln(z + 1).sum())
            pos = np.flatnonzero(z > 0)
            if group is None:
                which = {"f_d_ever": 0, "f_tss_ever": 1, "f_aafu_ever": 2}[o.kind]
                self._mult.append((which, None, None, None, z, pos, coef))
                continue
            if scheme is AAFU:
                self.want_aafu = True
            ages = np.array(o.ages, dtype=np.intp)
            n_years = (self.grid.t_max if scheme is not AAFU else max(self.grid.t_max, AAFU.max_year)) + 1
            G = np.zeros((n_years, len(scheme)))
            cat = category_of_years(scheme, n_years)
            G[np.arange(n_years)[cat >= 0], cat[cat >= 0]] = 1.0
            self._mult.append((_HIST_FIELDS[o.kind], group, ages, G, z, pos, coef))

    # evaluation pieces

    def _history(self, theta):
        L = self.layout
        fD = alr_to_simplex(theta[L.hist["D"]])
        fT = alr_to_simplex(theta[L.hist["TSS"]])
        fA = alr_to_simplex(theta[L.hist["AAFU"]])
        return fD, fT, fA, fD @ self._E[0], fT @ self._E[1], fA @ self._E[2]

    def _adjust(self, st):
        h = st.hist
        st.adj = kernels.history_kernel(h[3], h[4], h[5], self._lo, self._hi, self.want_aafu)
        st.kappa = st.adj[1]

    def _split(self, st):
        st.rho_ex = st.rho_ever * st.kappa
        st.rho_cur = st.rho_ever * (1.0 - st.kappa)

    def _prevalence(self, st):
        tc = st.adj[3]
        te = st.adj[4]
        if np.isnan(tc).any():
            tc = np.nan_to_num(tc)
        if np.isnan(te).any():
            te = np.nan_to_num(te)
        st.pc, st.pe = kernels.cell_prevalence_kernel(st.cells, self._DC, self._TC, st.hist[3], tc, te)
        st.valid = not (np.isnan(st.pc).any() or np.isnan(st.pe).any() or not np.all(st.adj[0] > 0))

    @staticmethod
    def _cells(theta):
        x = (
            theta[8]
            + np.append(theta[9:12], 0.0)[:, None, None]
            + np.append(theta[12:18], 0.0)[None, :, None]
            + np.append(theta[18:24], 0.0)[None, None, :]
        )
        return expit(x)

    @staticmethod
    def _expit4(c, v):
        return expit(c + np.append(v, 0.0))

    def _binomial(self, st):
        if not self._y.size:
            st.p_bin = np.zeros(0)
            st.ll_bin = np.zeros(0)
            return
        q = np.empty(_Q_SIZE)
        q[0:4] = st.rho_ever
        q[4:8] = st.rho_cur
        q[8:12] = st.rho_ex
        q[12:16] = st.rho_non
        q[16:20] = st.pi_non
        q[20:24] = st.pc
        q[24:28] = st.pe
        q[_Q_CELLS:_Q_ONE] = st.cells.ravel()
        q[_Q_ONE] = 1.0
        beta = st.theta[self.layout.bias]
        v = q[self._vcol]
        if self._single:
            p = v
        else:
            w = self._scale * q[self._wcol]
            if not self.mix_then_bias and self._biased_comps.size:
                bc = self._biased_comps
                v = v.copy()
                v[bc] = _shift(v[bc], beta[self._comp_bias[bc]])
            p = np.add.reduceat(w * v, self._starts) / np.add.reduceat(w, self._starts)
        if self._biased_rows.size and (self.mix_then_bias or self._single):
            p = p.copy()
            br = self._biased_rows
            p[br] = _shift(p[br], beta[self._bias_idx[br]])
        st.p_bin = p
        st.ll_bin = kernels.binomial_loglik(self._y, self._n, p, self._logc)

    def _predict_mult(self, st, item):
        which, group, ages, G, z, pos, coef = item
        if group is None:
            return st.hist[which]
        yearly = st.adj[which][ages]
        rho = st.rho_ex if group == "ex" else st.rho_cur
        w = self._N[ages] * rho[ages]
        mix = (w @ yearly) / w.sum()
        return mix[: G.shape[0]] @ G

    def _multinomial(self, st):
        probs, ll = [], np.empty(len(self._mult))
        for i, item in enumerate(self._mult):
            p = self._predict_mult(st, item)
            z, pos, coef = item[4], item[5], item[6]
            pp = p[pos]
            if np.any(~(pp > 0)):
                ll[i] = -np.inf
            else:
                ll[i] = coef + float(z[pos] @ np.log(pp))
            probs.append(p)
        st.mult_probs = probs
        st.ll_mult = ll

    def _history_prior(self, st):
        a = self.prior.dirichlet_alpha
        st.lp_hist = self._dir_const + a * float(
            np.log(st.hist[0]).sum() + np.log(st.hist[1]).sum() + np.log(st.hist[2]).sum()
        )

    def _log_prior(self, st):
        th = st.theta[: self._n_normal]
        st.log_prior = self._norm_const - 0.5 * float(th @ th) / self.prior.variance + st.lp_hist

    def _total(self, st):
        if not st.valid:
            st.log_post = -np.inf
            return st
        ll = st.ll_bin.sum() + st.ll_mult.sum()
        st.log_post = float(st.log_prior + ll) if np.isfinite(ll) else -np.inf
        return st

    # public API

    def evaluate(self, theta) -> State:
        st = State()
        st.theta = np.array(theta, dtype=float)
        th = st.theta
        st.rho_ever = self._expit4(th[0], th[1:4])
        st.rho_non = self._expit4(-th[0], -th[1:4])
        st.pi_non = self._expit4(th[4], th[5:8])
        st.cells = self._cells(th)
        st.hist = self._history(th)
        self._adjust(st)
        self._split(st)
        self._prevalence(st)
        self._binomial(st)
        self._multinomial(st)
        self._history_prior(st)
        self._log_prior(st)
        return self._total(st)

    def update(self, st: State, block: Block, theta) -> State:
        """Re-evaluate after only ``block`` coordinates changed."""
        new = st.copy()
        new.theta = theta
        kind = block.kind
        if kind == "alpha":
            new.rho_ever = self._expit4(theta[0], theta[1:4])
            new.rho_non = self._expit4(-theta[0], -theta[1:4])
            self._split(new)
            self._binomial(new)
            self._multinomial(new)
        elif kind == "gamma":
            new.pi_non = self._expit4(theta[4], theta[5:8])
            self._binomial(new)
        elif kind == "delta":
            new.cells = self._cells(theta)
            self._prevalence(new)
            self._binomial(new)
        elif kind == "bias":
            self._binomial(new)
        else:
            new.hist = self._history(theta)
            self._adjust(new)
            self._split(new)
            self._prevalence(new)
            self._binomial(new)
            self._multinomial(new)
            self._history_prior(new)
        self._log_prior(new)
        return self._total(new)

    def log_posterior(self, theta) -> float:
        return self.evaluate(theta).log_post

    def impossible_observations(self, st: State) -> list[str]:
        ids = [self._obs_label(o) for o, v in zip(self.obs.binomial, st.ll_bin) if not np.isfinite(v)]
        ids += [self._obs_label(o) for o, v in zip(self.obs.multinomial, st.ll_mult) if not np.isfinite(v)]
        return ids

    def require_possible(self, st: State) -> None:
        bad = self.impossible_observations(st)
        if bad:
            raise ImpossibleDataError(f"zero likelihood for observation(s) {', '.join(bad)}", bad)

    @staticmethod
    def _obs_label(o):
        return o.obs_id or o.source_id

    def source_deviance(self, st: State) -> np.ndarray:
        out = np.zeros(len(self.source_ids))
        if self._y.size:
            d = kernels.binomial_deviance(self._y, self._n, st.p_bin)
            out += np.bincount(self._bin_src, weights=d, minlength=out.size)
        for i, (item, p) in enumerate(zip(self._mult, st.mult_probs)):
            z, pos = item[4], item[5]
            zhat = z.sum() * p[pos]
            with np.errstate(divide="ignore"):
                out[self._mult_src[i]] += 2.0 * float(z[pos] @ np.log(z[pos] / zhat))
        return out

    # tracked quantities

    @property
    def tracked_names(self) -> list[str]:
        names = []
        for kind in ("rho", "pi"):
            for g in ("cur", "ex", "non", "ever"):
                names += [f"{kind}_{g}[{ag.label}]" for ag in AGE_GROUPS]
        names += [f"kappa[{ag.label}]" for ag in AGE_GROUPS]
        names += [f"pi_age[{ag.label}]" for ag in AGE_GROUPS]
        names += [f"rho_{g}" for g in ("cur", "ex", "non", "ever")]
        names += [f"pi_{g}" for g in ("cur", "ex", "non", "ever")]
        names += ["pi"]
        names += [f"beta[{format_key(k)}]" for k in self.layout.bias_keys]
        names += [f"deviance[{s}]" for s in self.source_ids]
        return names

    def tracked(self, st: State) -> np.ndarray:
        N = self._N
        rc, rx, re = st.rho_cur, st.rho_ex, st.rho_ever
        rn = st.rho_non
        pc, pe, pn = st.pc, st.pe, st.pi_non
        with np.errstate(invalid="ignore", divide="ignore"):
            pev = (rc * pc + rx * pe) / re
        pa = rc * pc + rx * pe + rn * pn
        tot = N.sum()
        rg = [N @ rc / tot, N @ rx / tot, N @ rn / tot, N @ re / tot]
        with np.errstate(invalid="ignore", divide="ignore"):
            pg = [
                N @ (rc * pc) / (N @ rc),
                N @ (rx * pe) / (N @ rx),
                N @ (rn * pn) / (N @ rn),
                N @ (rc * pc + rx * pe) / (N @ re),
            ]
        return np.concatenate(
            [
                rc, rx, rn, re, pc, pe, pn, pev, st.kappa, pa,
                rg, pg, [N @ pa / tot],
                st.theta[self.layout.bias],
                self.source_deviance(st),
            ]
        )


def _shift(p, beta):
    # invlogit(logit(p) + beta), written to stay exact at p in {0, 1}
    e = np.exp(beta)
    return p * e / (1.0 - p + p * e)


def log_posterior(theta, obs: ObservationSet, census: CensusTable, structure=BiasStructure.B5, prior: PriorSpec = PriorSpec()) -> float:
    """Log joint density of ``theta`` (see ``ParameterLayout``). Raises
    ``ImpossibleDataError`` naming the observations with zero likelihood."""
    post = Posterior(obs, census, structure, prior)
    st = post.evaluate(theta)
    post.require_possible(st)
    return st.log_post
