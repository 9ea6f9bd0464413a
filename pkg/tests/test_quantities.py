import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from prevsynth.errors import DegenerateStratumError
from prevsynth.quantities import (
    DrugHistory,
    RegressionParams,
    aafu_categories,
    aggregates,
    compute_quantities,
    conditional_aafu,
    conditional_history,
    kappa_ex,
    pi_current,
    pi_ever_cell,
    pi_ex,
    pi_non,
    rho_ever,
    split_proportions,
)
from prevsynth.strata import NYC_CENSUS_2010

seeds = st.integers(0, 2**32 - 1)


def random_history(seed) -> DrugHistory:
    rng = np.random.default_rng(seed)
    return DrugHistory(rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(10)))


def random_params(seed, scale=1.0) -> RegressionParams:
    return RegressionParams.from_vector(np.random.default_rng(seed).normal(0, scale, RegressionParams.SIZE))


def test_invlogit_oracle_values():
    p = RegressionParams(alpha0=-3.8, alpha1=np.array([0.0, 0.0, 0.0]), gamma0=-0.1)
    assert rho_ever(3, p) == pytest.approx(0.0218813, abs=1e-7)
    assert pi_non(3, p) == pytest.approx(0.4750208, abs=1e-7)


def test_baselines_are_last_categories():
    p = RegressionParams(alpha0=-2.0, alpha1=np.array([1.0, 0.5, 0.2]), delta0=0.3, delta1=np.array([0.1, 0.2, 0.3]),
                         delta2=np.arange(6) * 0.1, delta3=np.arange(6) * -0.1)
    assert rho_ever(3, p) == pytest.approx(expit(-2.0))
    assert rho_ever(0, p) == pytest.approx(expit(-1.0))
    assert pi_ever_cell(6, 6, 3, p) == pytest.approx(expit(0.3))
    assert pi_ever_cell(2, 4, 1, p) == pytest.approx(expit(0.3 + 0.2 + 0.2 - 0.4))
    with pytest.raises(IndexError):
        pi_ever_cell(7, 0, 0, p)


@given(seeds)
def test_params_vector_roundtrip(seed):
    p = random_params(seed)
    q = RegressionParams.from_vector(p.to_vector())
    np.testing.assert_array_equal(p.to_vector(), q.to_vector())


def test_params_validation():
    with pytest.raises(ValueError):
        RegressionParams(alpha1=np.zeros(2))
    with pytest.raises(ValueError):
        RegressionParams(alpha0=np.nan)


@given(st.floats(0, 1), st.floats(0, 1))
def test_split_proportions_sum(r, k):
    ex, cur, non = split_proportions(r, k)
    assert ex + cur + non == pytest.approx(1.0)
    assert min(ex, cur, non) >= -1e-15


@given(seeds)
def test_conditionals_are_distributions(seed):
    h = random_history(seed)
    for a in range(4):
        k = kappa_ex(a, h)
        assert 0 <= k <= 1
        c = conditional_history(h, a)
        for v in c.values():
            assert v.sum() == pytest.approx(1.0)
            assert np.all(v >= -1e-15)
        # ex-IDUs need a duration strictly below the time since starting
        assert c["tss_ex"][0] == 0.0
        aa = conditional_aafu(h, a)
        for v in aa.values():
            assert v.sum() == pytest.approx(1.0)
            assert aafu_categories(v).sum() == pytest.approx(1.0)


@given(seeds)
def test_kappa_mixes_conditionals(seed):
    # the ever-IDU tss distribution is the kappa mixture of ex and current
    h = random_history(seed)
    qs = compute_quantities(random_params(seed), h, want_aafu=True)
    adj = qs.adjustment
    for a in range(4):
        k = qs.kappa[a]
        mix = k * adj.tss_ex[a] + (1 - k) * adj.tss_cur[a]
        np.testing.assert_allclose(mix, adj.tss_ever[a], atol=1e-12)


def test_window_free_kappa():
    h = random_history(5)
    fD, fT = h.d_year, h.tss_year
    FDm = np.concatenate(([0.0], np.cumsum(fD)[:-1]))
    assert kappa_ex(None, h) == pytest.approx(float(FDm @ fT), rel=1e-12)


@given(seeds, st.floats(0.001, 0.999))
def test_constant_prevalence_collapse(seed, c):
    h = random_history(seed)
    p = random_params(seed)
    lc = np.log(c / (1 - c))
    p = RegressionParams(p.alpha0, p.alpha1, p.gamma0, p.gamma1, lc, np.zeros(3), np.zeros(6), np.zeros(6))
    qs = compute_quantities(p, h)
    np.testing.assert_allclose(qs.pi_cur, c, atol=1e-10)
    np.testing.assert_allclose(qs.pi_ex, c, atol=1e-10)


@given(seeds)
def test_single_band_helpers_match_lattice(seed):
    h = random_history(seed)
    p = random_params(seed)
    qs = compute_quantities(p, h)
    for a in range(4):
        assert pi_current(a, p, h) == pytest.approx(qs.pi_cur[a], rel=1e-10)
        assert pi_ex(a, p, h) == pytest.approx(qs.pi_ex[a], rel=1e-10)


@given(seeds)
def test_quantity_identities(seed):
    h = random_history(seed)
    qs = compute_quantities(random_params(seed), h)
    np.testing.assert_allclose(qs.rho_cur + qs.rho_ex + qs.rho_non, 1.0, atol=1e-12)
    np.testing.assert_allclose(qs.rho_ever * qs.pi("ever"), qs.rho_cur * qs.pi_cur + qs.rho_ex * qs.pi_ex, atol=1e-14)
    assert np.array_equal(qs.rho("current"), qs.rho_cur)
    for name in ("pi_cur", "pi_ex", "pi_non"):
        v = getattr(qs, name)
        assert np.all((v >= 0) & (v <= 1))
    ag = aggregates(qs, NYC_CENSUS_2010)
    assert ag.rho_g["current"] + ag.rho_g["ex"] + ag.rho_g["non"] == pytest.approx(1.0)
    total = sum(ag.rho_g[g] * ag.pi_g[g] for g in ("current", "ex", "non"))
    assert ag.pi == pytest.approx(total, rel=1e-12)
    N = NYC_CENSUS_2010.N
    assert ag.pi == pytest.approx(float(N @ ag.pi_a / N.sum()), rel=1e-12)


def test_degenerate_band():
    # everyone starts at 51-55 and has injected under a year: only ages 51-55 exist
    f_D = np.eye(7)[0]
    f_T = np.eye(7)[0]
    f_A = np.eye(10)[9]
    h = DrugHistory(f_D, f_T, f_A)
    with pytest.raises(DegenerateStratumError):
        kappa_ex(0, h)
    with pytest.raises(DegenerateStratumError):
        compute_quantities(RegressionParams(), h)
    assert kappa_ex(3, h) == 0.0
    with pytest.raises(DegenerateStratumError):
        conditional_history(h, 3, which=("tss_ex",))


def test_history_validation():
    with pytest.raises(ValueError):
        DrugHistory(np.ones(7), np.ones(7) / 7, np.ones(10) / 10)
    with pytest.raises(ValueError):
        DrugHistory(np.ones(6) / 6, np.ones(7) / 7, np.ones(10) / 10)
