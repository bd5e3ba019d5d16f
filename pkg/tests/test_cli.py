import json

import pandas as pd
import pytest

from factorial_platform.cli import build_parser, main
from factorial_platform.commands import plot_points
from conftest import write_rows


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("FACTORIAL_ALPHA", "FACTORIAL_SEED", "FACTORIAL_WORKERS", "FACTORIAL_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_parser_lists_every_command():
    parser = build_parser()
    args = parser.parse_args(["analyze", "--summary", "x.csv", "--estimand", "logfe"])
    assert args.command == "analyze"
    assert args.estimand == ["logfe"]


def test_analyze_writes_json_and_csv(capsys, tmp_path, lawyer_summary_csv):
    json_out = tmp_path / "result.json"
    csv_out = tmp_path / "result.csv"
    code, out, _ = run(
        capsys,
        "analyze",
        "--summary", lawyer_summary_csv,
        "--factors", "R,G,I",
        "--estimand", "logfe",
        "--estimand", "logitfe",
        "--json-out", str(json_out),
        "--csv-out", str(csv_out),
    )
    assert code == 0
    assert "R×G×I" in out
    payload = json.loads(json_out.read_text(encoding="utf-8"))
    assert payload["config"]["factors"] == ["R", "G", "I"]
    race = payload["linear"]["effects"][0]
    assert race["effect"] == "R"
    assert race["estimate"] == 0.1875
    assert race["p_raw"] == pytest.approx(0.0409, abs=5e-4)
    assert payload["logfe"]["effects"][0]["estimate"] == pytest.approx(0.6314, abs=5e-4)
    assert payload["logitfe"]["effects"][0]["estimate"] == pytest.approx(0.9109, abs=5e-4)
    table = pd.read_csv(csv_out)
    assert set(table["estimand"]) == {"linear", "logfe", "logitfe"}
    assert len(table) == 21


def test_analyze_unit_level_input(capsys, lawyer_units_csv):
    code, out, _ = run(capsys, "analyze", "--input", lawyer_units_csv, "--correction", "bonferroni")
    assert code == 0
    assert "race×gender" in out


def test_one_sided_json_has_null_endpoint(capsys, tmp_path, lawyer_summary_csv):
    json_out = tmp_path / "result.json"
    code, _, _ = run(
        capsys, "analyze", "--summary", lawyer_summary_csv, "--alternative", "greater",
        "--json-out", str(json_out),
    )
    assert code == 0
    race = json.loads(json_out.read_text(encoding="utf-8"))["linear"]["effects"][0]
    assert race["upper"] is None


def test_plot_points(lawyer_summary):
    frame = plot_points(lawyer_summary)
    main_r = frame[(frame["plot"] == "main") & (frame["factors"] == "R")]
    assert main_r["mean"].tolist() == pytest.approx([0.1875, 0.375])
    gi = frame[(frame["plot"] == "interaction") & (frame["factors"] == "G,I")]
    assert gi["levels"].tolist() == ["00", "01", "10", "11"]
    assert gi["mean"].tolist() == pytest.approx([7 / 24, 1 / 6, 7 / 24, 0.375])
    assert len(frame) == 3 * 2 + 3 * 4


def test_plot_data_command(capsys, lawyer_summary_csv):
    code, out, _ = run(capsys, "plot-data", "--summary", lawyer_summary_csv, "--factors", "R,G,I")
    assert code == 0
    assert "interaction" in out


def test_power_curve_command(capsys, tmp_path, lawyer_summary_csv):
    json_out = tmp_path / "curve.json"
    code, out, _ = run(
        capsys,
        "power-curve",
        "--summary", lawyer_summary_csv,
        "--factors", "R,G,I",
        "--effects", "R=0.1875,G=0.1042,GxI=0.1042",
        "--n-grid", "16:1600:8",
        "--json-out", str(json_out),
    )
    assert code == 0
    assert "Smallest N with joint power >= 0.8: 768" in out
    payload = json.loads(json_out.read_text(encoding="utf-8"))
    assert payload["smallest_n"] == 768
    assert [spec["effect"] for spec in payload["specs"]] == ["R", "G", "G×I"]


def test_family_applies_to_every_table(capsys, tmp_path, lawyer_summary_csv):
    analysis = tmp_path / "analysis.json"
    code, _, _ = run(
        capsys,
        "analyze",
        "--summary", lawyer_summary_csv,
        "--factors", "R,G,I",
        "--correction", "bonferroni",
        "--family", "R,G,GxI",
        "--estimand", "logfe",
        "--estimand", "logitfe",
        "--json-out", str(analysis),
    )
    assert code == 0
    payload = json.loads(analysis.read_text(encoding="utf-8"))
    assert [payload[name]["family_size"] for name in ("linear", "logfe", "logitfe")] == [3, 3, 3]

    curve = tmp_path / "curve.json"
    code, _, _ = run(
        capsys,
        "power-curve",
        "--summary", lawyer_summary_csv,
        "--factors", "R,G,I",
        "--effects", "R=0.1875",
        "--correction", "bonferroni",
        "--family", "R,G,GxI",
        "--n-grid", "96:192:96",
        "--json-out", str(curve),
    )
    assert code == 0
    assert json.loads(curve.read_text(encoding="utf-8"))["specs"][0]["groups"] == 3


def test_sample_size_command(capsys, lawyer_summary_csv):
    code, out, _ = run(
        capsys,
        "sample-size",
        "--summary", lawyer_summary_csv,
        "--tau-star", "0.1",
        "--target-power", "0.9",
        "--alternative", "greater",
    )
    assert code == 0
    assert "690.9" in out
    assert "Rounded up: 691" in out


def test_allocate_command(capsys, tmp_path):
    json_out = tmp_path / "plan.json"
    code, _, _ = run(
        capsys,
        "allocate",
        "--proportions", "0.1,0.1,0.1,0.1,0.5,0.5,0.5,0.5",
        "--criterion", "a",
        "--n", "120",
        "--json-out", str(json_out),
    )
    assert code == 0
    payload = json.loads(json_out.read_text(encoding="utf-8"))
    plan = payload["plan"]
    assert plan["N"] == 120
    assert plan["counts"] == [11] * 4 + [19] * 4
    # S~² carries the N/(N-1) factor for the allocated population
    assert payload["arms"][0]["variance_guess"] == pytest.approx(120 / 119 * 0.09)
    assert payload["arms"][7]["variance_guess"] == pytest.approx(120 / 119 * 0.25)


def test_enumerate_command(capsys, tmp_path):
    population = write_rows(tmp_path / "pop.csv", ("Y1", "Y2"), [(1, 1), (1, 0), (0, 1), (0, 0)])
    json_out = tmp_path / "enum.json"
    code, out, _ = run(capsys, "enumerate", "--population", population, "--json-out", str(json_out))
    assert code == 0
    assert "6 assignments" in out
    enumeration = json.loads(json_out.read_text(encoding="utf-8"))["enumeration"]
    assert enumeration["var_tau"]["A"] == "1/6"


def test_simulate_population_command(capsys, tmp_path):
    rows = [(1, 0)] * 10 + [(0, 1)] * 10 + [(1, 1)] * 10 + [(0, 0)] * 10
    population = write_rows(tmp_path / "pop.csv", ("Y1", "Y2"), rows)
    code, out, _ = run(capsys, "simulate", "--population", population, "--draws", "200", "--seed", "4")
    assert code == 0
    assert "200 draws (seed 4)" in out


def test_simulate_protocol_command(capsys, lawyer_summary_csv):
    code, out, _ = run(
        capsys,
        "simulate",
        "--summary", lawyer_summary_csv,
        "--factors", "R,G,I",
        "--effects", "R=0.1875,G=0.1042,GxI=0.1042",
        "--n", "96",
        "--populations", "2",
        "--draws", "50",
    )
    assert code == 0
    assert "Mean joint power at N = 96" in out


def test_input_error_exit_code(capsys, tmp_path):
    path = write_rows(tmp_path / "bad.csv", ("treatment", "n", "n1"), [(1, 3, 5), (2, 3, 1)])
    code, _, err = run(capsys, "analyze", "--summary", path)
    assert code == 2
    assert "row 1 (line 2)" in err


def test_invalid_utf8_exit_code(capsys, tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"treatment,n,n1\n1,12,2\n2,12,\xff\n")
    code, _, err = run(capsys, "analyze", "--summary", str(path))
    assert code == 2
    assert "not valid UTF-8" in err


def test_missing_data_exit_code(capsys):
    code, _, err = run(capsys, "analyze")
    assert code == 2
    assert "--summary" in err


def test_degenerate_exit_code(capsys, tmp_path):
    path = write_rows(tmp_path / "flat.csv", ("treatment", "n", "n1"), [(1, 3, 0), (2, 3, 3)])
    code, _, err = run(capsys, "analyze", "--summary", path)
    assert code == 3
    assert "degenerate" in err


def test_undefined_logfe_exit_code(capsys, tmp_path):
    path = write_rows(tmp_path / "zero.csv", ("treatment", "n", "n1"), [(1, 4, 0), (2, 4, 2)])
    code, _, err = run(capsys, "analyze", "--summary", path, "--estimand", "logfe")
    assert code == 3
    assert "--haldane" in err
    code, _, _ = run(capsys, "analyze", "--summary", path, "--estimand", "logfe", "--haldane")
    assert code == 0


def test_infeasible_exit_code(capsys, lawyer_summary_csv):
    code, _, err = run(capsys, "allocate", "--summary", lawyer_summary_csv, "--n", "100")
    assert code == 4
    assert "96 or 104" in err


def test_unwritable_output(capsys, tmp_path, lawyer_summary_csv):
    target = tmp_path / "missing" / "out.json"
    code, _, err = run(capsys, "analyze", "--summary", lawyer_summary_csv, "--json-out", str(target))
    assert code == 2
    assert "cannot write output" in err
