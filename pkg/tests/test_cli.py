import json

import pytest

from gridrisk import caseio
from gridrisk.cli import main
from gridrisk.engine import MANIFEST_FILE, RESULTS_FILE, enumerate_scenarios

from cases import three_bus_toy

IEEE = str(caseio.bundled_case_path("ieee118.json"))


@pytest.fixture
def toy_path(tmp_path):
    p = tmp_path / "toy.json"
    p.write_text(caseio.serialize_native_case(three_bus_toy()))
    return p


def test_validate_ieee118(capsys):
    assert main(["validate", IEEE]) == 0
    out = capsys.readouterr().out
    assert "buses=118 lines=175 transformers=11 generators=53" in out


def test_validate_matpower(capsys):
    assert main(["validate", str(caseio.bundled_case_path("ieee118.m"))]) == 0
    assert "lines=175" in capsys.readouterr().out


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.json")]) == 3


def test_two_slack_buses_rejected(tmp_path, capsys):
    doc = json.loads(caseio.serialize_native_case(three_bus_toy()))
    doc["buses"][1]["kind"] = "Slack"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert main(["validate", str(p)]) == 2
    err = capsys.readouterr().err
    assert "slack" in err and "0" in err and "1" in err


def test_malformed_json_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["validate", str(p)]) == 2


def test_bad_arguments():
    assert main(["run", "--case", IEEE]) == 2
    assert main(["run", "--case", IEEE, "--out", "x", "--workers", "0"]) == 2


def test_run_and_rank_toy(tmp_path, toy_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--case", str(toy_path), "--out", str(out), "--workers", "2"]) == 0
    text = capsys.readouterr().out
    assert "total=10" in text
    assert len((out / RESULTS_FILE).read_text().splitlines()) == 10
    assert main(["rank", "--results", str(out), "--case", str(toy_path), "--top", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert (out / "ranking.csv").exists() and (out / "plotdata.csv").exists()


def test_rank_refuses_other_case(tmp_path, toy_path):
    out = tmp_path / "run"
    assert main(["run", "--case", str(toy_path), "--out", str(out), "--order", "1"]) == 0
    other = tmp_path / "other.json"
    doc = json.loads(toy_path.read_text())
    doc["buses"][2]["load_p"] = 61.0
    other.write_text(json.dumps(doc))
    assert main(["rank", "--results", str(out), "--case", str(other)]) == 2


def test_rank_without_manifest(tmp_path, toy_path):
    out = tmp_path / "run"
    main(["run", "--case", str(toy_path), "--out", str(out), "--order", "1"])
    (out / MANIFEST_FILE).unlink()
    assert main(["rank", "--results", str(out / RESULTS_FILE), "--case", str(toy_path)]) == 2


def _synthetic_run(tmp_path, severe):
    grid = caseio.load_case(IEEE)
    out = tmp_path / "syn"
    out.mkdir()
    with open(out / RESULTS_FILE, "w") as fh:
        for s in enumerate_scenarios(grid.grid):
            sev = severe and bool(s.outages)
            fh.write(json.dumps({"id": s.id, "outages": [str(o) for o in s.outages], "pf_converged": True,
                                 "island_count": 1, "spectral_abscissa": -0.1, "severity": int(sev),
                                 "reason": ["islanding"] if sev else [], "runtime_ms": 0.0}) + "\n")
    manifest = {"case_checksum": grid.checksum, "source_case_checksum": grid.checksum,
                "config": {"max_order": 2, "include_base": True},
                "components": {"line": 175, "transformer": 11, "generator": 53},
                "totals": {"base": 1, "n1": 239, "n2": 56882, "total": 57122}, "evaluated": 57122}
    (out / MANIFEST_FILE).write_text(json.dumps(manifest))
    return out


def test_rank_all_severe_ieee118(tmp_path, capsys):
    out = _synthetic_run(tmp_path, True)
    assert main(["rank", "--results", str(out), "--case", IEEE, "--top", "20"]) == 0
    text = capsys.readouterr().out
    # generators carry the highest rate, so they fill the combined top 20
    assert len(text.splitlines()) == 21
    assert "2.934000" in text
    for kind, expected in (("line", 1.472), ("transformer", 0.59), ("generator", 2.934)):
        rows = (out / f"ranking_{kind}.csv").read_text().splitlines()[1:]
        assert len(rows) == min(20, {"line": 175, "transformer": 11, "generator": 53}[kind])
        assert float(rows[0].split(",")[-1]) == pytest.approx(expected, abs=1e-9)


def test_rank_none_severe_keeps_universe_order(tmp_path, capsys):
    out = _synthetic_run(tmp_path, False)
    assert main(["rank", "--results", str(out), "--case", IEEE, "--top", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "line:0 " in lines[1] and "line:1 " in lines[2]
