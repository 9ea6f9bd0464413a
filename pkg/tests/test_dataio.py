import pytest
import yaml

from prevsynth import synthgen
from prevsynth.dataio import (
    COLUMNS,
    RunManifest,
    read_observations,
    read_sources,
    write_observations,
    write_sources,
)
from prevsynth.errors import ValidationError

HEADER = ",".join(COLUMNS)


def _csv(tmp_path, *rows):
    p = tmp_path / "obs.csv"
    p.write_text("\n".join([HEADER, *rows]) + "\n")
    return p


def test_roundtrip(tmp_path):
    sc = synthgen.facsimile_scenario()
    obs = synthgen.generate_observations(sc, 0)
    write_observations(obs, tmp_path / "o.csv")
    write_sources(obs.sources, tmp_path / "s.yaml")
    sources = read_sources(tmp_path / "s.yaml")
    back = read_observations(tmp_path / "o.csv", sources)
    assert back.binomial == obs.binomial
    assert back.multinomial == obs.multinomial
    assert back.sources == obs.sources


def test_y_above_n_reports_line(tmp_path):
    p = _csv(
        tmp_path,
        "a,S,rho_ever,20-29,,,3,10,unbiased" + "," * 10,
        "b,S,rho_ever,30-39,,,12,10,unbiased" + "," * 10,
    )
    with pytest.raises(ValidationError) as e:
        read_observations(p)
    assert e.value.problems == ["obs.csv:3: y=12 exceeds n=10"]


def test_collects_every_problem(tmp_path):
    p = _csv(
        tmp_path,
        "a,S,nonsense,20-29,,,3,10,unbiased" + "," * 10,
        "b,S,rho_ever,20-29,,,x,10,unbiased" + "," * 10,
        "c,S,rho_ever,20-29,,,1,10,maybe" + "," * 10,
        "d,S,f_tss_cur,20-59,,,,,,1,2,3" + "," * 7,
    )
    with pytest.raises(ValidationError) as e:
        read_observations(p)
    lines = [s.split(":")[1] for s in e.value.problems]
    assert lines == ["2", "3", "4", "5"]


def test_category_by_label_or_index(tmp_path):
    p = _csv(
        tmp_path,
        "a,S,pi_cur_tss,20-29,,5-9,3,10,biased" + "," * 10,
        "b,S,pi_cur_tss,20-29,,2,3,10,biased" + "," * 10,
    )
    obs = read_observations(p)
    assert obs.binomial[0].target == obs.binomial[1].target
    assert obs.binomial[0].target.tss_cat == 2


def test_missing_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y,n\n1,2\n")
    with pytest.raises(ValidationError):
        read_observations(p)


def test_sources_duplicates(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump({"sources": [{"id": "A"}, {"id": "A"}]}))
    with pytest.raises(ValidationError, match="duplicate"):
        read_sources(p)


def test_manifest_resolution(tmp_path):
    sc = synthgen.facsimile_scenario()
    synthgen.write_corpus(sc, synthgen.generate_observations(sc, 0), tmp_path, 3)
    m = RunManifest.load(tmp_path / "manifest.yaml")
    assert m.seed == 3 and m.bias_structure == "b5"
    census, obs = m.load_inputs()
    assert len(obs) == 198
    assert census.N.sum() == pytest.approx(sc.census.N.sum())


def test_manifest_missing_files(tmp_path):
    (tmp_path / "m.yaml").write_text(yaml.safe_dump({"observations": "nope.csv"}))
    with pytest.raises(ValidationError) as e:
        RunManifest.load(tmp_path / "m.yaml")
    assert any("census" in p for p in e.value.problems)
    assert any("nope.csv" in p for p in e.value.problems)
    with pytest.raises(ValidationError):
        RunManifest.load(tmp_path / "absent.yaml")
