import json
import shutil

import pytest
import yaml

from prevsynth.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["simulate", "--out", str(out), "--seed", "3"]) == EXIT_OK
    return out


def _manifest(corpus, tmp_path, **changes):
    doc = yaml.safe_load((corpus / "manifest.yaml").read_text())
    for k in ("census", "observations", "sources"):
        doc[k] = str(corpus / doc[k])
    doc.update(changes)
    p = tmp_path / "manifest.yaml"
    p.write_text(yaml.safe_dump(doc))
    return p


def test_simulate_is_stable(corpus, tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "again"), "--seed", "3"]) == EXIT_OK
    for f in ("observations.csv", "truth.json", "manifest.yaml"):
        assert (tmp_path / "again" / f).read_bytes() == (corpus / f).read_bytes()


def test_validate_ok(corpus, capsys):
    assert main(["validate", "--manifest", str(corpus / "manifest.yaml")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ok: 198 observations" in out
    assert "NHBS" in out


def test_validate_line_numbered_error(corpus, tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    lines = (corpus / "observations.csv").read_text().splitlines()
    parts = lines[1].split(",")
    parts[6] = str(int(parts[7]) + 1)  # y above n
    lines[1] = ",".join(parts)
    obs.write_text("\n".join(lines) + "\n")
    m = _manifest(corpus, tmp_path, observations=str(obs))
    assert main(["validate", "--manifest", str(m)]) == EXIT_INVALID
    assert "obs.csv:2:" in capsys.readouterr().out


def test_identifiability_names_family(corpus, tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    lines = (corpus / "observations.csv").read_text().splitlines()
    keep = [lines[0]] + [l for l in lines[1:] if not (l.split(",")[1] == "HANES" and l.split(",")[2] == "pi_non")]
    obs.write_text("\n".join(keep) + "\n")
    m = _manifest(corpus, tmp_path, observations=str(obs))
    assert main(["fit", "--manifest", str(m), "--out", str(tmp_path / "fit")]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "identifiability" in err and "pi_non" in err


def test_unknown_sampler_option(corpus, tmp_path):
    m = _manifest(corpus, tmp_path, sampler={"chains": 2, "speed": "fast"})
    assert main(["fit", "--manifest", str(m), "--out", str(tmp_path / "x")]) == EXIT_INVALID


def test_fit_outputs_and_determinism(corpus, tmp_path):
    args = ["fit", "--manifest", str(corpus / "manifest.yaml"), "--iters", "200", "--burnin", "100", "--trace"]
    rc1 = main(args + ["--out", str(tmp_path / "a")])
    rc2 = main(args + ["--out", str(tmp_path / "b")])
    assert rc1 == rc2 and rc1 in (EXIT_OK, EXIT_NOT_CONVERGED)
    for f in ("summary.json", "tables.json", "deviance.json", "report.txt", "trace.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    tables = json.loads((tmp_path / "a" / "tables.json").read_text())
    total = tables["total"]
    # counts add up across age bands and groups
    by_age = sum(r["infected"]["mean"] for r in tables["by_age"].values())
    assert by_age == pytest.approx(total["infected"]["mean"], rel=1e-9)
    groups = sum(total[g]["infected"]["mean"] for g in ("cur", "ex", "non"))
    assert groups == pytest.approx(total["infected"]["mean"], rel=1e-9)
    assert total["pi"]["mean"] == pytest.approx(total["infected"]["mean"] / total["population"], rel=1e-9)
    dev = json.loads((tmp_path / "a" / "deviance.json").read_text())
    assert dev["model"] == pytest.approx(dev["unbiased"] + dev["biased"])


def test_prior_only_needs_flag(tmp_path, corpus, capsys):
    census = tmp_path / "census.csv"
    shutil.copy(corpus / "census.csv", census)
    m = tmp_path / "m.yaml"
    m.write_text(yaml.safe_dump({"census": "census.csv"}))
    assert main(["validate", "--manifest", str(m)]) == EXIT_INVALID
    assert "allow-prior-only" in capsys.readouterr().out
    rc = main(["fit", "--manifest", str(m), "--out", str(tmp_path / "p"), "--allow-prior-only", "--iters", "200", "--burnin", "100"])
    assert rc in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert (tmp_path / "p" / "summary.json").exists()


def test_sweep_and_cv_write_reports(corpus, tmp_path):
    base = ["--manifest", str(corpus / "manifest.yaml"), "--iters", "40", "--burnin", "20"]
    assert main(["sweep", *base, "--out", str(tmp_path / "s")]) == EXIT_OK
    sweep = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert set(sweep) == {f"b{i}" for i in range(1, 8)}
    assert main(["cv", *base, "--out", str(tmp_path / "c")]) == EXIT_OK
    cv = json.loads((tmp_path / "c" / "cv.json").read_text())
    assert len(cv["rows"]) == 11


def test_simulate_from_scenario_yaml(corpus, tmp_path):
    assert main(["simulate", "--scenario", str(corpus / "scenario.yaml"), "--out", str(tmp_path / "y"), "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "y" / "observations.csv").read_bytes() == (corpus / "observations.csv").read_bytes()
    assert main(["simulate", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "z")]) == EXIT_INVALID
