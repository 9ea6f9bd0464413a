import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prevsynth.strata import (
    AAFU,
    AGE_GROUPS,
    DURATION,
    NYC_CENSUS_2010,
    TSS,
    CensusTable,
    TimeCategoryScheme,
    YearGrid,
    aggregate_to_categories,
    category_of_years,
    expand_to_yearly,
    parse_age_span,
    year_to_category,
    yearly_spread_matrix,
)


def simplex(k):
    return st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k).filter(lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


def test_age_bands():
    assert [g.label for g in AGE_GROUPS] == ["20-29", "30-39", "40-49", "50-59"]
    assert all(g.width == 10 for g in AGE_GROUPS)


@pytest.mark.parametrize("label,idx", [("20-29", (0,)), ("30-49", (1, 2)), ("20-59", (0, 1, 2, 3)), ("50-59", (3,))])
def test_parse_age_span(label, idx):
    assert parse_age_span(label) == idx


@pytest.mark.parametrize("label", ["25-34", "20-30", "abc", "60-69"])
def test_parse_age_span_rejects(label):
    with pytest.raises(ValueError):
        parse_age_span(label)


def test_scheme_labels_and_lookup():
    assert DURATION.labels == ("<1", "1-4", "5-9", "10-14", "15-19", "20-29", "30-45")
    assert DURATION.index_of("5-9") == 2
    assert DURATION.index_of("6") == 6
    assert AAFU.labels[0] == "8-9" and len(AAFU) == 10
    with pytest.raises(ValueError):
        DURATION.index_of("7-8")


def test_scheme_must_be_disjoint():
    with pytest.raises(ValueError):
        TimeCategoryScheme("x", ((0, 3), (3, 5)))


def test_year_to_category_edges():
    assert year_to_category(0, DURATION) == 0
    assert year_to_category(1, DURATION) == 1
    assert year_to_category(4, DURATION) == 1
    assert year_to_category(5, DURATION) == 2
    assert year_to_category(45, DURATION) == 6
    assert year_to_category(60, DURATION) == 6  # past the last bound: baseline
    with pytest.raises(ValueError):
        year_to_category(7, AAFU)
    with pytest.raises(ValueError):
        year_to_category(-1, TSS)


def test_category_of_years_matches_scalar():
    cat = category_of_years(AAFU, 56)
    assert np.all(cat[:8] == -1)
    assert all(cat[t] == year_to_category(t, AAFU) for t in range(8, 56))


def test_grid_minimum():
    with pytest.raises(ValueError):
        YearGrid(30)


@given(simplex(7))
def test_expand_aggregate_roundtrip(m):
    y = expand_to_yearly(m, DURATION)
    assert y.shape == (46,)
    assert np.isclose(y.sum(), 1.0)
    np.testing.assert_allclose(aggregate_to_categories(y, DURATION), m, atol=1e-12)
    np.testing.assert_allclose(m @ yearly_spread_matrix(DURATION), y, atol=1e-15)


@given(simplex(10))
def test_aafu_expansion_uniform_within_category(m):
    y = expand_to_yearly(m, AAFU)
    assert y.shape == (56,)
    assert np.all(y[:8] == 0)
    for mass, (lo, hi) in zip(m, AAFU.bounds):
        np.testing.assert_allclose(y[lo : hi + 1], mass / (hi - lo + 1))


def test_expand_rejects_bad_mass():
    with pytest.raises(ValueError):
        expand_to_yearly(np.full(7, 0.2), DURATION)
    with pytest.raises(ValueError):
        expand_to_yearly(np.ones(6) / 6, DURATION)
    with pytest.raises(ValueError):
        expand_to_yearly(np.array([1.2, -0.2, 0, 0, 0, 0, 0]), DURATION)


def test_census(tmp_path):
    c = NYC_CENSUS_2010
    assert c.total == pytest.approx(4_772_628)
    np.testing.assert_allclose(c.weights((1, 2)).sum(), 1.0)
    p = tmp_path / "c.csv"
    c.to_csv(p)
    assert CensusTable.from_csv(p) == c
    with pytest.raises(ValueError):
        CensusTable((1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        CensusTable((1.0, 2.0, 0.0, 4.0))


def test_census_csv_validation(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("age_group_lower,age_group_upper,population\n20,29,10\n30,39,10\n40,49,10\n")
    with pytest.raises(ValueError, match="every age band"):
        CensusTable.from_csv(p)
    p.write_text("age_group_lower,age_group_upper,population\n20,24,10\n")
    with pytest.raises(ValueError, match="unknown age band"):
        CensusTable.from_csv(p)
