import json

import numpy as np
import pytest

from polystab.cli import main, parse_perturbation, resolve_spec
from polystab.errors import MalformedDocument


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("spec,code", [("p1", 0), ("interval_w01e", 20), ("trapezium_l2", 10)])
def test_analyze_exit_codes(spec, code, tmp_path, capsys):
    got, out, _ = _run(["analyze", spec, "--out", str(tmp_path)], capsys)
    assert got == code
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["verdict"] in out
    assert len(report["input"]["spec_sha256"]) == 64
    assert report["seeds"]["seed"] == 42
    lines = (tmp_path / "phi.csv").read_text().splitlines()
    assert lines[0].endswith("phi,B")


def test_analyze_problem_override(tmp_path, capsys):
    code, _, _ = _run(["analyze", "interval_w01", "--problem", "relative", "--resolution", "32",
                       "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads((tmp_path / "report.json").read_text())["problem"] == "relative"


def test_analyze_reads_user_file(tmp_path, capsys):
    spec = tmp_path / "tri.json"
    spec.write_text(json.dumps({"dim": 1, "facets": [{"normal": [1], "offset": 0, "sigma_weight": "1/2"},
                                                      {"normal": [-1], "offset": -2}]}))
    code, _, _ = _run(["analyze", str(spec), "--resolution", "16", "--out", str(tmp_path)], capsys)
    assert code == 20


def test_errors_are_json_on_stderr(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, _, err = _run(["analyze", str(bad), "--out", str(tmp_path)], capsys)
    assert code == 1
    assert json.loads(err)["error"] == "malformed_document"
    code, _, err = _run(["analyze", "no_such_spec", "--out", str(tmp_path)], capsys)
    assert code == 1 and json.loads(err)["error"] == "malformed_document"


def test_decompose_octagon(tmp_path, capsys):
    code, out, _ = _run(["decompose", "octagon_two_plane", "--out", str(tmp_path)], capsys)
    assert code == 0
    dec = json.loads((tmp_path / "decomposition.json").read_text())
    assert len(dec["pieces"]) == 2
    assert dec["concavity_ok"] is True
    owners = np.loadtxt(tmp_path / "nodes.csv", delimiter=",", skiprows=1)[:, -1]
    assert set(owners.astype(int)) == {0, 1}


def test_decompose_stable_is_an_error(tmp_path, capsys):
    code, _, err = _run(["decompose", "p1", "--out", str(tmp_path)], capsys)
    assert code == 1
    assert json.loads(err)["error"] == "not_unstable"


def test_flow_writes_series_and_plot(tmp_path, capsys):
    code, out, _ = _run(["flow", "p1", "--resolution", "32", "--t-end", "0.2",
                         "--perturb", "0.5*x*(1-x)", "--plot", "--out", str(tmp_path)], capsys)
    assert code == 0
    data = np.loadtxt(tmp_path / "flow.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 7
    assert np.all(np.diff(data[:, 1]) <= 1e-10)
    assert (tmp_path / "flow.svg").read_text().lstrip().startswith("<?xml")
    assert json.loads((tmp_path / "flow.json").read_text())["flow"]["stopped"] == "t_end"


def test_flow_zero_weight_error(tmp_path, capsys):
    code, _, err = _run(["flow", "interval_w01", "--out", str(tmp_path)], capsys)
    assert code == 1
    assert json.loads(err)["error"] == "zero_weight_endpoint"


def test_sweep_records_failures_and_continues(tmp_path, capsys):
    code, out, _ = _run(["sweep", "trapezium", "--values", "0,1/2", "--out", str(tmp_path)], capsys)
    assert code == 0
    index = json.loads((tmp_path / "index.json").read_text())
    assert index["items"][0]["error"]["error"] == "empty_interior"
    assert index["items"][1]["verdicts"]["relative"] == "semistable_strict"
    assert (tmp_path / index["items"][1]["report"]).exists()


def test_sweep_unknown_family(tmp_path, capsys):
    code, _, err = _run(["sweep", "hexagon", "--out", str(tmp_path)], capsys)
    assert code == 1


def test_perturbation_parser_is_restricted():
    f = parse_perturbation("0.5*x*(1-x) + sin(x)")
    assert f(np.array([0.5]))[0] == pytest.approx(0.125 + np.sin(0.5))
    assert parse_perturbation(None) is None
    with pytest.raises(MalformedDocument):
        parse_perturbation("__import__('os').system('true')")


def test_shipped_specs_resolve():
    assert resolve_spec("p1").name == "p1.json"
    assert resolve_spec("square.json").exists()
