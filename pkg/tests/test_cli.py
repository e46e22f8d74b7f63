import csv
import io
import json
from importlib import resources

import jsonschema
import pytest

from dpmac.cli import main, parse_range
from dpmac.private import PrivateReviewProtocol, analyze_private
from dpmac.public import PublicReviewProtocol
from dpmac.stats import IdleTestConfig, idle_error_probs


def _schema(name):
    return json.loads(resources.files("dpmac").joinpath("schemas", name).read_text())


def _run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, _schema("output.schema.json"))
    return doc, out


def _run_csv(capsys, argv):
    assert main(argv) == 0
    text = capsys.readouterr().out
    first, rest = text.split("\n", 1)
    assert first.startswith("# manifest: ")
    manifest = json.loads(first[len("# manifest: "):])
    return manifest, list(csv.DictReader(io.StringIO(rest)))


def test_design_table_point(capsys):
    doc, _ = _run_json(capsys, ["design", "--signal", "private", "--n", "5", "--b", "0.04",
                                "--ns-budget", "256", "--pd", "0.8"])
    res = doc["results"]
    assert (res["protocol"]["L"], res["protocol"]["M"]) == (23, 90)
    assert res["efficiency_loss_4dp"] == 0.0479
    assert doc["manifest"]["subcommand"] == "design"


def test_analyze_matches_library(capsys):
    doc, _ = _run_json(capsys, ["analyze", "--b", "0.04", "--l", "23", "--m", "90", "--pd", "0.7"])
    a = analyze_private(PrivateReviewProtocol(0.04, 23, 90), 0.7)
    assert doc["results"]["efficiency_loss"] == a.efficiency_loss
    assert doc["results"]["n_states"] == 225


def test_analyze_public_infinite_m_min_is_null(capsys):
    doc, _ = _run_json(capsys, ["analyze", "--signal", "public", "--b", "0.1", "--l", "10", "--m", "5",
                                "--pd", "1"])
    assert doc["results"]["m_min"] is None and doc["results"]["is_dp"] is False


def test_sweep_public_pf_matches_library(capsys):
    manifest, rows = _run_csv(capsys, ["sweep", "--signal", "public", "--quantity", "pf", "--b", "0.1",
                                       "--l", "1..2000", "--n", "5"])
    assert manifest["subcommand"] == "sweep"
    assert len(rows) == 2000 and list(rows[0]) == ["signal", "B", "L", "pf"]
    for row in rows[::97]:
        exact = idle_error_probs(IdleTestConfig(0.1, int(row["L"]))).false_punishment
        assert float(row["pf"]) == pytest.approx(exact, rel=1e-11, abs=1e-300)


@pytest.mark.parametrize("quantity, columns", [
    ("pm", ["signal", "B", "L", "p_d", "pm"]),
    ("mmin", ["signal", "B", "L", "p_d", "g", "m_min", "m_min_ceil"]),
    ("loss", ["signal", "B", "L", "p_d", "M", "efficiency_loss", "is_dp"]),
])
def test_sweep_columns(capsys, quantity, columns):
    _, rows = _run_csv(capsys, ["sweep", "--quantity", quantity, "--b", "0.02..0.06:0.02", "--l", "5,23",
                                "--pd", "0.7"])
    assert list(rows[0]) == columns and len(rows) == 6


def test_sweep_requires_pd(capsys):
    assert main(["sweep", "--quantity", "pm", "--b", "0.04", "--l", "10"]) == 1


def test_construct_public(capsys):
    doc, _ = _run_json(capsys, ["construct", "--signal", "public", "--epsilon", "0.05", "--delta", "0.05"])
    res = doc["results"]
    assert res["lower_bounds"]["margin_L"] == 2_560_000
    assert res["protocol"]["L"] == 2_560_000 and res["protocol"]["M"] == 12_800_000


def test_construct_private_single_pd(capsys):
    doc, _ = _run_json(capsys, ["construct", "--epsilon", "0.01", "--delta", "0.05", "--pd", "0.7",
                                "--b", "0.04"])
    assert doc["results"]["efficiency_loss"] <= 0.05


def test_construct_cap_exhaustion_exit_code(capsys):
    assert main(["construct", "--epsilon", "0.01", "--delta", "1e-9", "--pd", "0.7", "--b", "0.06",
                 "--l-cap", "400"]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_design_infeasible_exit_code(capsys):
    assert main(["design", "--b", "0.04", "--ns-budget", "3", "--pd", "0.8"]) == 2


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["design", "--b", "0.04", "--pd", "0.8"],
    ["analyze", "--b", "0.04", "--l", "23", "--m", "90", "--pd", "0.1"],
    ["analyze", "--b", "0.5", "--l", "23", "--m", "90", "--pd", "0.8"],
    ["design", "--signal", "public", "--b", "0.04", "--ns-budget", "256", "--pd", "0.8"],
    ["sweep", "--quantity", "pf", "--b", "x..y", "--l", "10"],
    ["simulate", "--b", "0.04", "--l", "23"],
    ["simulate", "--b", "0.04", "--l", "23", "--m", "9", "--deviant", "sneaky:0:1"],
    ["analyze", "--b", "0.04", "--l", "23", "--m", "90", "--pd", "0.8", "--unknown"],
])
def test_usage_errors_exit_one(capsys, argv):
    assert main(argv) == 1


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["design", "--b", "0.04", "--ns-budget", "256", "--pd", "0.8",
                 "--out", str(blocker / "out.json")]) == 1


def test_output_dir_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DPMAC_OUTPUT_DIR", str(tmp_path))
    assert main(["design", "--b", "0.04", "--ns-budget", "256", "--pd", "0.7", "--out", "t2/d.json"]) == 0
    doc = json.loads((tmp_path / "t2" / "d.json").read_text())
    assert doc["manifest"]["outputs"] == [str(tmp_path / "t2" / "d.json")]
    assert doc["results"]["protocol"]["M"] == 94


SIM = ["simulate", "--signal", "public", "--b", "0.1", "--l", "50", "--m", "125", "--epochs", "20000",
       "--seed", "42"]


def test_simulate_is_byte_identical(capsys):
    _, first = _run_json(capsys, SIM)
    _, second = _run_json(capsys, SIM)
    assert first == second
    doc = json.loads(first)
    assert doc["manifest"]["master_seed"] == 42
    assert doc["results"]["comparison"]["passed"] is True


def test_simulate_with_deviant_and_config(tmp_path, capsys):
    _, direct = _run_json(capsys, SIM + ["--deviant", "constant:0:1.0", "--epochs", "5000"])
    cfg = {"signal": "public", "protocol": {"B": 0.1, "L": 50, "M": 125, "N": 5},
           "deviants": [{"node": 0, "kind": "constant", "p_d": 1.0}], "epochs": 5000, "master_seed": 42}
    jsonschema.validate(cfg, _schema("simconfig.schema.json"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    _, via_file = _run_json(capsys, ["simulate", "--config", str(path)])
    assert json.loads(direct)["results"] == json.loads(via_file)["results"]


def test_simulate_private_smart_deviant(capsys):
    doc, _ = _run_json(capsys, ["simulate", "--b", "0.04", "--l", "23", "--m", "90", "--epochs", "2000",
                                "--deviant", "punish_aware:1:1.0:1.0:reciprocation"])
    # closed forms assume a review-phase deviator, so the comparison is skipped
    assert "skipped" in doc["results"]["comparison"]
    assert doc["results"]["report"]["deviant_nodes"] == [1]


def test_simulate_best_response(capsys):
    doc, _ = _run_json(capsys, ["simulate", "--signal", "public", "--b", "0.1", "--l", "20", "--m", "60",
                                "--epochs", "1000", "--deviant", "best_response:3"])
    assert doc["manifest"]["parameters"]["deviants"][0]["kind"] == "best_response"


def test_config_document_round_trip():
    from dpmac.simulator import DeviantSpec, SimConfig
    cfg = SimConfig(PublicReviewProtocol(0.1, 50, 125), (DeviantSpec.punish_aware(1, 0.9),), epochs=10)
    jsonschema.validate(cfg.to_dict(), _schema("simconfig.schema.json"))


@pytest.mark.parametrize("text, integer, expected", [
    ("1..5", True, [1, 2, 3, 4, 5]),
    ("10..20:5", True, [10, 15, 20]),
    ("0.02..0.06:0.02", False, [0.02, 0.04, 0.06]),
    ("0.04", False, [0.04]),
    ("0.01,0.04", False, [0.01, 0.04]),
])
def test_parse_range(text, integer, expected):
    assert parse_range(text, integer) == expected
