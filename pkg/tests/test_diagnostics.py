import json

import numpy as np
import pytest
from scipy import stats

from prevsynth import synthgen
from prevsynth.diagnostics import (
    CvReport,
    CvRow,
    DevianceReport,
    SweepReport,
    VariantResult,
    biased_sources,
    bias_sweep,
    deviance_binomial,
    deviance_multinomial,
    dump_json,
    format_table,
)
from prevsynth.inference import SamplerConfig
from prevsynth.observation import BiasStructure


def test_binomial_deviance_unit_values():
    assert deviance_binomial(5, 10, 0.25) == pytest.approx(2.8768, abs=1e-4)
    assert deviance_binomial([0, 10, 3], [10, 10, 10], [0.0, 1.0, 0.3]) == pytest.approx(0.0, abs=1e-12)
    assert deviance_binomial(1, 10, 0.0) == np.inf


def test_binomial_deviance_is_likelihood_ratio():
    y, n, p = 7, 30, 0.4
    want = 2 * (stats.binom.logpmf(y, n, y / n) - stats.binom.logpmf(y, n, p))
    assert deviance_binomial(y, n, p) == pytest.approx(want)


def test_multinomial_deviance():
    z = np.array([4, 0, 6])
    assert deviance_multinomial(z, z / z.sum()) == pytest.approx(0.0)
    p = np.array([0.3, 0.3, 0.4])
    want = 2 * (stats.multinomial.logpmf(z, 10, z / 10) - stats.multinomial.logpmf(z, 10, p))
    assert deviance_multinomial(z, p) == pytest.approx(want)
    assert deviance_multinomial(z, [0.5, 0.5, 0.0]) == np.inf


def test_deviance_calibration():
    # under the true p, mean deviance per binomial observation is about 1
    rng = np.random.default_rng(0)
    n, p = 400, 0.2
    d = [deviance_binomial(y, n, p) for y in rng.binomial(n, p, 4000)]
    assert np.mean(d) == pytest.approx(1.0, abs=0.08)


def test_decomposition_is_additive():
    r = DevianceReport({"A": 10.0, "B": 2.5, "C": 4.0}, ("B",))
    assert r.model == r.unbiased + r.biased == 16.5
    assert r.to_dict()["biased"] == 2.5


def test_biased_sources():
    obs = synthgen.generate_observations(synthgen.facsimile_scenario(), 0)
    assert biased_sources(obs) == ["CHC", "HONE", "JAILS", "NHBS", "RISK", "STD"]


def test_sweep_report_ordering():
    def v(k, d):
        return VariantResult(k, DevianceReport({"A": d}, ()), 0.1, {}, True)

    rep = SweepReport({"b1": v("b1", 30.0), "b2": v("b2", 5.0), "b3": VariantResult("b3", None, np.nan, {}, False, "x")})
    assert rep.best() == "b2" and rep.worst() == "b1"
    assert "n/a" in rep.deviance_table()


def test_cv_shifts():
    full = CvRow("None", {}, {}, {"pi": {"mean": 0.03, "sd": 0.002}}, {})
    less = CvRow("X", {}, {}, {"pi": {"mean": 0.034, "sd": 0.003}}, {})
    rep = CvReport({"None": full, "X": less})
    assert rep.shifts("X")["pi"] == pytest.approx(2.0)


def test_format_table_and_json(tmp_path):
    t = format_table([["a", "bb"], ["ccc", "1"]])
    assert t.splitlines()[1].startswith("---")
    dump_json({"x": np.float64(1.5), "y": np.bool_(True), "z": np.int64(2)}, tmp_path / "o.json")
    assert json.loads((tmp_path / "o.json").read_text()) == {"x": 1.5, "y": True, "z": 2}


def test_sweep_skips_unidentifiable_variant():
    sc = synthgen.facsimile_scenario()
    obs = synthgen.generate_observations(sc, 0).without_source("HANES").without_source("CHS")
    cfg = SamplerConfig(chains=2, iterations=60, burn_in=30, seed=1)
    rep = bias_sweep(obs, sc.census, cfg, structures=[BiasStructure.B1, BiasStructure.B5])
    assert rep.variants["b5"].deviance is None
    assert "identifiability" in rep.variants["b5"].error
    assert rep.variants["b1"].deviance is not None
