"""Blockwise adaptive random-walk Metropolis over the joint posterior.

Each block gets a Gaussian random-walk proposal whose shape follows the
block's running covariance and whose scale follows a Robbins-Monro rule
toward the target acceptance rate. Both freeze at the end of burn-in, so the
retained draws come from a fixed, reversible kernel.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from prevsynth.errors import ImpossibleDataError
from prevsynth.model import Block, Posterior, PriorSpec
from prevsynth.observation import BiasStructure, ObservationSet, require_valid
from prevsynth.strata import CensusTable

RHAT_THRESHOLD = 1.05


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 2
    iterations: int = 46_000
    burn_in: int = 4_000
    seed: int = 0
    target_scalar: float = 0.44
    target_multi: float = 0.234
    adapt_start: int = 200  # updates before the empirical covariance is used
    init_sd: float = 1.0  # spread of the overdispersed starting values
    thin: int = 1
    mix_then_bias: bool = True
    scalar_regression: bool = False  # one-coordinate blocks for the regression terms

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


class BlockAdapter:
    """Proposal for one block: ``x + scale * L @ N(0, I)``."""

    def __init__(self, dim: int, target: float, adapt_start: int, init_step: float = 0.1):
        self.dim = dim
        self.target = target
        self.adapt_start = adapt_start
        self.log_scale = np.log(2.38 / np.sqrt(dim))
        self.chol = np.eye(dim) * init_step / (2.38 / np.sqrt(dim))
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))
        self.accepted = 0
        self.tried = 0

    def step(self, rng) -> np.ndarray:
        return np.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.dim))

    def adapt(self, accepted: bool, x) -> None:
        self.n += 1
        self.log_scale += (self.n + 1) ** -0.6 * (float(accepted) - self.target)
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += np.outer(d, x - self.mean)
        if self.n >= self.adapt_start and self.n % 50 == 0:
            cov = self.m2 / (self.n - 1)
            cov += np.eye(self.dim) * (1e-10 + 1e-6 * np.trace(cov) / self.dim)
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass

    def record(self, accepted: bool) -> None:
        self.tried += 1
        self.accepted += int(accepted)

    @property
    def acceptance(self) -> float:
        return self.accepted / self.tried if self.tried else float("nan")


def build_blocks(post: Posterior, config: SamplerConfig) -> list[Block]:
    blocks = post.layout.blocks()
    if not config.scalar_regression:
        return blocks
    out = []
    names = post.layout.names
    for b in blocks:
        if b.kind in ("alpha", "gamma", "delta"):
            out += [Block(names[i], np.array([i]), b.kind) for i in b.idx]
        else:
            out.append(b)
    return out


def mcmc_step(post: Posterior, state, block: Block, adapter: BlockAdapter, rng, adapting: bool):
    """One Metropolis update of ``block``; returns ``(state, accepted)``."""
    prop = state.theta.copy()
    prop[block.idx] += adapter.step(rng)
    new = post.update(state, block, prop)
    log_u = np.log(rng.random())
    accepted = new.log_post > -np.inf and log_u < new.log_post - state.log_post
    if accepted:
        state = new
    if adapting:
        adapter.adapt(accepted, state.theta[block.idx])
    else:
        adapter.record(accepted)
    return state, accepted


def initial_state(post: Posterior, rng, init_sd: float, tries: int = 200):
    first = None
    for _ in range(tries):
        theta = rng.normal(0.0, init_sd, size=post.layout.size)
        st = post.evaluate(theta)
        if first is None:
            first = st
        if np.isfinite(st.log_post):
            return st
    post.require_possible(first)
    raise ImpossibleDataError("no starting point with positive posterior density")


def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(chain)])


def run_chain(post: Posterior, config: SamplerConfig, chain: int):
    """Returns ``(tracked draws, parameter draws, acceptance per block)``."""
    rng = np.random.default_rng(chain_seed(config.seed, chain))
    blocks = build_blocks(post, config)
    adapters = [
        BlockAdapter(b.size, config.target_scalar if b.size == 1 else config.target_multi, config.adapt_start)
        for b in blocks
    ]
    state = initial_state(post, rng, config.init_sd)
    n_keep = config.retained
    tracked = np.empty((n_keep, len(post.tracked_names)))
    thetas = np.empty((n_keep, post.layout.size))
    k = 0
    for it in range(config.iterations):
        adapting = it < config.burn_in
        for b, ad in zip(blocks, adapters):
            state, _ = mcmc_step(post, state, b, ad, rng, adapting)
        if not adapting and (it - config.burn_in) % config.thin == 0:
            tracked[k] = post.tracked(state)
            thetas[k] = state.theta
            k += 1
    return tracked, thetas, {b.name: ad.acceptance for b, ad in zip(blocks, adapters)}


def gelman_rubin(draws) -> float:
    """Potential scale reduction for an ``(m chains, n draws)`` array.

    NaN when every chain has zero variance (indeterminate).
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 10:
        raise ValueError("need at least 2 chains of at least 10 draws")
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if not W > 0:
        return float("nan")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def batch_mcse(draws, n_batches: int = 20) -> float:
    """Monte Carlo standard error of the pooled mean via batch means."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1]
    b = max(1, min(n_batches, n))
    size = n // b
    if size < 1:
        return float("nan")
    means = x[:, : b * size].reshape(x.shape[0], b, size).mean(axis=2).ravel()
    if means.size < 2:
        return float("nan")
    return float(means.std(ddof=1) / np.sqrt(means.size))


@dataclass
class QuantitySummary:
    mean: float
    sd: float
    p2_5: float
    p97_5: float
    mcse: float
    rhat: float
    converged: bool

    @property
    def indeterminate(self) -> bool:
        return bool(np.isnan(self.rhat))


def summarize(draws) -> QuantitySummary:
    """Summary over pooled chains for an ``(m, n)`` array of one quantity."""
    x = np.asarray(draws, dtype=float)
    pooled = x.ravel()
    if x.shape[0] >= 2 and x.shape[1] >= 10:
        rhat = gelman_rubin(x)
    else:
        rhat = float("nan")
    lo, hi = np.percentile(pooled, [2.5, 97.5])
    return QuantitySummary(
        mean=float(pooled.mean()),
        sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
        p2_5=float(lo),
        p97_5=float(hi),
        mcse=batch_mcse(x),
        rhat=rhat,
        converged=bool(rhat < RHAT_THRESHOLD),
    )


# Quantity families for convergence flags, matched by name prefix.
FAMILY_PREFIXES = {
    "rho": ("rho_", "kappa["),
    "pi_non": ("pi_non",),
    "pi_idu": ("pi_cur", "pi_ex", "pi_ever"),
}
HEADLINE_PREFIXES = ("rho_", "pi_", "kappa[", "pi")


def family_of(name: str) -> str | None:
    for fam, prefixes in FAMILY_PREFIXES.items():
        if name.startswith(prefixes):
            return fam
    return None


@dataclass
class PosteriorSummary:
    names: list
    draws: np.ndarray  # (chains, retained, quantities)
    theta_names: list
    theta: np.ndarray  # (chains, retained, parameters)
    acceptance: dict
    source_ids: list
    bias_keys: list
    structure: str
    config: SamplerConfig
    elapsed: float = 0.0
    quantities: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.quantities:
            self.quantities = {n: summarize(self.draws[:, :, i]) for i, n in enumerate(self.names)}

    def __getitem__(self, name) -> QuantitySummary:
        return self.quantities[name]

    def column(self, name) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    @property
    def source_deviance(self) -> dict:
        return {s: self.quantities[f"deviance[{s}]"].mean for s in self.source_ids}

    def headline(self) -> list[str]:
        return [n for n in self.names if n.startswith(HEADLINE_PREFIXES)]

    def family_converged(self, family: str) -> bool:
        names = [n for n in self.names if family_of(n) == family]
        return all(self.quantities[n].converged for n in names)

    @property
    def convergence(self) -> dict:
        return {fam: self.family_converged(fam) for fam in FAMILY_PREFIXES}

    @property
    def converged(self) -> bool:
        return all(self.quantities[n].converged for n in self.headline())

    def to_dict(self) -> dict:
        return {
            "structure": self.structure,
            "config": asdict(self.config),
            "converged": self.converged,
            "family_converged": self.convergence,
            "acceptance": self.acceptance,
            "source_deviance": self.source_deviance,
            "quantities": {
                n: {k: _clean(v) for k, v in asdict(q).items()} for n, q in self.quantities.items()
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_trace(self, path) -> None:
        """Retained draws, one row per (chain, iteration)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw"] + list(self.theta_names) + list(self.names))
            for c in range(self.draws.shape[0]):
                for i in range(self.draws.shape[1]):
                    w.writerow([c, i] + [repr(float(v)) for v in self.theta[c, i]] + [repr(float(v)) for v in self.draws[c, i]])


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def run(
    obs: ObservationSet,
    census: CensusTable,
    structure=BiasStructure.B5,
    config: SamplerConfig = SamplerConfig(),
    prior: PriorSpec = PriorSpec(),
    check_identifiability: bool = True,
) -> PosteriorSummary:
    """Fit the model; chains run in sequence, each on its own seeded stream."""
    structure = BiasStructure.parse(structure)
    require_valid(obs, structure, allow_prior_only=not check_identifiability)
    post = Posterior(obs, census, structure, prior, mix_then_bias=config.mix_then_bias)
    t0 = time.perf_counter()
    results = [run_chain(post, config, c) for c in range(config.chains)]
    elapsed = time.perf_counter() - t0
    acc = {}
    for _, _, a in results:
        for k, v in a.items():
            acc.setdefault(k, []).append(v)
    return PosteriorSummary(
        names=post.tracked_names,
        draws=np.stack([r[0] for r in results]),
        theta_names=post.layout.names,
        theta=np.stack([r[1] for r in results]),
        acceptance={k: float(np.mean(v)) for k, v in acc.items()},
        source_ids=list(post.source_ids),
        bias_keys=[f"{a}:{b}" for a, b in post.layout.bias_keys],
        structure=structure.value,
        config=config,
        elapsed=elapsed,
    )
