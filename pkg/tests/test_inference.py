import json

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from prevsynth import synthgen
from prevsynth.inference import (
    BlockAdapter,
    SamplerConfig,
    batch_mcse,
    build_blocks,
    chain_seed,
    gelman_rubin,
    run,
    run_chain,
    summarize,
)
from prevsynth.model import Posterior
from prevsynth.observation import BiasStructure, ObservationSet
from prevsynth.strata import NYC_CENSUS_2010
from toy_posteriors import BetaBinomialPosterior


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(chains=0)
    with pytest.raises(ValueError):
        SamplerConfig(iterations=100, burn_in=100)
    with pytest.raises(ValueError):
        SamplerConfig(thin=0)
    assert SamplerConfig(iterations=100, burn_in=10, thin=3).retained == 30


def test_chain_seeds_differ_and_repeat():
    a = np.random.default_rng(chain_seed(3, 0)).random(5)
    b = np.random.default_rng(chain_seed(3, 1)).random(5)
    c = np.random.default_rng(chain_seed(3, 0)).random(5)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)


@pytest.mark.parametrize("joint", [False, True])
def test_conjugate_marginals(joint):
    post = BetaBinomialPosterior([7, 30], [20, 40], a=2.0, b=3.0, joint=joint)
    cfg = SamplerConfig(chains=1, iterations=21_000, burn_in=1_000, seed=4)
    tracked, _, acc = run_chain(post, cfg, 0)
    a1, b1 = post.posterior_params()
    for i in range(2):
        x = tracked[:, i]
        ks = stats.kstest(x, stats.beta(a1[i], b1[i]).cdf).statistic
        assert ks < 0.05
        assert abs(x.mean() - a1[i] / (a1[i] + b1[i])) < 4 * batch_mcse(x)
    target = 0.234 if joint else 0.44
    for v in acc.values():
        assert abs(v - target) < 0.1


def test_adapter_scale_tracks_target():
    rng = np.random.default_rng(0)
    ad = BlockAdapter(1, 0.44, adapt_start=50)
    post = BetaBinomialPosterior([50], [100])
    from prevsynth.inference import mcmc_step

    st = post.evaluate(np.zeros(1))
    block = post.layout.blocks()[0]
    for _ in range(3000):
        st, _ = mcmc_step(post, st, block, ad, rng, adapting=True)
    # optimal scalar step is about 2.4 posterior sd on the logit scale (sd ~ 0.2)
    step = np.exp(ad.log_scale) * ad.chol[0, 0]
    assert 0.2 < step < 1.2
    frozen = (ad.log_scale, ad.chol.copy())
    for _ in range(200):
        st, _ = mcmc_step(post, st, block, ad, rng, adapting=False)
    assert ad.log_scale == frozen[0]
    np.testing.assert_array_equal(ad.chol, frozen[1])
    assert ad.tried == 200


def test_gelman_rubin_identical_chains():
    x = np.random.default_rng(0).normal(size=500)
    n = x.size
    assert gelman_rubin(np.vstack([x, x])) == pytest.approx(np.sqrt((n - 1) / n))


def test_gelman_rubin_same_and_offset():
    rng = np.random.default_rng(1)
    same = rng.normal(size=(2, 5000))
    assert gelman_rubin(same) < 1.05
    off = same + np.array([[0.0], [3.0]])
    assert gelman_rubin(off) > 1.2


def test_gelman_rubin_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 40)) + rng.normal(size=(3, 1))
    m, n = x.shape
    chain_means = x.mean(axis=1)
    B = n / (m - 1) * np.sum((chain_means - chain_means.mean()) ** 2)
    W = np.mean([np.sum((c - c.mean()) ** 2) / (n - 1) for c in x])
    want = np.sqrt(((n - 1) / n * W + B / n) / W)
    assert gelman_rubin(x) == pytest.approx(want, rel=1e-12)


def test_gelman_rubin_constant_is_nan_and_rejects_short():
    assert np.isnan(gelman_rubin(np.ones((2, 50))))
    with pytest.raises(ValueError):
        gelman_rubin(np.ones((1, 50)))
    s = summarize(np.ones((2, 50)))
    assert s.indeterminate and not s.converged


def test_batch_mcse_iid():
    rng = np.random.default_rng(3)
    errs = [batch_mcse(rng.normal(size=(2, 4000))) for _ in range(200)]
    # iid: se of the mean is 1/sqrt(8000)
    assert np.mean(errs) == pytest.approx(1 / np.sqrt(8000), rel=0.1)


def test_batch_mcse_ar1_inflated():
    rng = np.random.default_rng(4)
    phi, n = 0.9, 40_000
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    # long-run variance of AR(1): 1 / (1 - phi)^2
    want = np.sqrt(1 / (1 - phi) ** 2 / n)
    assert batch_mcse(x) == pytest.approx(want, rel=0.35)


def test_scalar_regression_blocks():
    post = Posterior(ObservationSet(), NYC_CENSUS_2010)
    joint = build_blocks(post, SamplerConfig())
    single = build_blocks(post, SamplerConfig(scalar_regression=True))
    n_regression = sum(b.kind in ("alpha", "gamma", "delta") for b in joint)
    assert n_regression == 5
    assert len(single) == len(joint) - n_regression + 24
    assert sorted(np.concatenate([b.idx for b in single])) == list(range(post.layout.size))


@pytest.fixture(scope="module")
def short_fit():
    sc = synthgen.facsimile_scenario()
    obs = synthgen.generate_observations(sc, 1)
    cfg = SamplerConfig(chains=2, iterations=300, burn_in=100, seed=9)
    return obs, sc, cfg, run(obs, sc.census, BiasStructure.B5, cfg)


def test_fixed_seed_is_byte_identical(short_fit, tmp_path):
    obs, sc, cfg, first = short_fit
    again = run(obs, sc.census, BiasStructure.B5, cfg)
    assert first.to_json() == again.to_json()
    first.write_trace(tmp_path / "a.csv")
    again.write_trace(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    other = run(obs, sc.census, BiasStructure.B5, SamplerConfig(chains=2, iterations=300, burn_in=100, seed=10))
    assert other.to_json() != first.to_json()


def test_summary_shape_and_json(short_fit):
    obs, sc, cfg, summ = short_fit
    assert summ.draws.shape == (2, 200, len(summ.names))
    assert summ.theta.shape[2] == len(summ.theta_names)
    d = json.loads(summ.to_json())
    assert set(d["family_converged"]) == {"rho", "pi_non", "pi_idu"}
    assert set(summ.source_deviance) == set(obs.source_ids)
    assert all(v >= 0 for v in summ.source_deviance.values())
    q = summ["pi"]
    assert q.p2_5 <= q.mean <= q.p97_5


def test_run_refuses_unidentifiable():
    from prevsynth.errors import ValidationError

    with pytest.raises(ValidationError):
        run(ObservationSet(), NYC_CENSUS_2010, config=SamplerConfig(iterations=20, burn_in=10))


def test_prior_predictive_median_of_baseline():
    z = np.random.default_rng(0).normal(0, 10, 200_000)
    assert np.median(expit(z)) == pytest.approx(0.5, abs=0.01)


@pytest.mark.slow
def test_prior_only_dirichlet_is_uniform():
    cfg = SamplerConfig(chains=2, iterations=4000, burn_in=1000, seed=2, scalar_regression=True)
    summ = run(ObservationSet(), NYC_CENSUS_2010, config=cfg, check_identifiability=False)
    L = Posterior(ObservationSet(), NYC_CENSUS_2010).layout
    from prevsynth.model import alr_to_simplex

    for name in ("D", "TSS"):
        z = summ.theta[:, :, L.hist[name]]
        p = np.apply_along_axis(alr_to_simplex, 2, z)
        k = p.shape[2]
        for j in (0, k // 2, k - 1):
            x = p[:, :, j]
            assert abs(x.mean() - 1 / k) < 4 * batch_mcse(x) + 1e-3


@pytest.mark.slow
def test_two_seeds_agree():
    sc = synthgen.facsimile_scenario()
    obs = synthgen.generate_observations(sc, 3)
    fits = [run(obs, sc.census, BiasStructure.B5, SamplerConfig(chains=2, iterations=3000, burn_in=1500, seed=s)) for s in (21, 22)]
    for n in ("pi", "pi_cur", "pi_non", "rho_ever"):
        a, b = fits[0][n], fits[1][n]
        assert abs(a.mean - b.mean) < 3 * np.hypot(a.mcse, b.mcse) + 0.05 * a.sd
