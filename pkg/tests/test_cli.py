import csv
import json

import pytest

from conftest import G
from main import main
from services.equipartition_service import EquipartitionService
from services.report_writer import REPORT_COLUMNS, VOLUME_COLUMNS, format_number


def _data_rows(text):
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    reader = csv.DictReader(lines)
    return reader.fieldnames, list(reader)


def _header_lines(text):
    return [line for line in text.splitlines() if line.startswith("#")]


def test_format_number_round_trips():
    value = 0.1 + 0.2
    assert float(format_number(value)) == value
    assert format_number(None) == ""
    assert format_number(True) == "true"


def test_scan_oscillator_single_row(tmp_path):
    out = tmp_path / "scan.csv"
    code = main(["scan", "--model", "ho1d", "--fields", "f22", "--e-min", "1", "--e-max", "1",
                 "--points", "1", "--periods", "5", "--seed", "7", "--out", str(out)])
    assert code == 0
    text = out.read_text()
    columns, rows = _data_rows(text)
    assert tuple(columns) == REPORT_COLUMNS
    assert len(rows) == 1
    assert float(rows[0]["kT"]) == pytest.approx(1.0, rel=1e-9)
    assert rows[0]["status"] == "ok"
    assert rows[0]["smooth"] == "true"
    header = _header_lines(text)
    assert header[0].startswith("# equipartition-lab")
    assert header[1] == "# seed: 7"
    assert json.loads(header[2][len("# config: "):])["model"] == "ho1d"


def test_scan_is_reproducible(tmp_path):
    args = ["scan", "--model", "pendulum", "--fields", "f11,f22", f"--energies=-5,{G},20",
            "--periods", "2", "--seed", "3"]
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(first)]) == 0
    assert main(args + ["--out", str(second)]) == 0
    data_a = [l for l in first.read_text().splitlines() if not l.startswith("#")]
    data_b = [l for l in second.read_text().splitlines() if not l.startswith("#")]
    assert data_a == data_b
    _, rows = _data_rows(first.read_text())
    assert [r["status"] for r in rows] == ["ok", "skipped", "ok"] * 2
    seam_rows = [r for r in rows if r["field"] == "f11" and r["status"] == "ok"]
    assert seam_rows[0]["rhs_seam"] == "" and seam_rows[1]["smooth"] == "false"


def test_scan_is_independent_of_worker_count(tmp_path):
    args = ["scan", "--model", "pendulum", "--fields", "pcubed", "--energies", "5,20",
            "--periods", "2", "--seed", "3"]
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
    assert main(args + ["--jobs", "1", "--out", str(serial)]) == 0
    assert main(args + ["--jobs", "2", "--out", str(parallel)]) == 0
    data_serial = [l for l in serial.read_text().splitlines() if not l.startswith("#")]
    data_parallel = [l for l in parallel.read_text().splitlines() if not l.startswith("#")]
    assert data_serial == data_parallel


def test_scan_to_stdout_as_json(capsys):
    code = main(["scan", "--model", "ho1d", "--fields", "f11", "--energies", "2", "--periods", "2",
                 "--format", "json", "--out", "-"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["header"]["config"]["model"] == "ho1d"
    assert payload["rows"][0]["kT"] == pytest.approx(2.0, rel=1e-9)


def test_volumes_oscillator(tmp_path):
    out = tmp_path / "volumes.csv"
    assert main(["volumes", "--model", "ho1d", "--energies", "0.5,1,2", "--samples", "100000",
                 "--out", str(out)]) == 0
    columns, rows = _data_rows(out.read_text())
    assert tuple(columns) == VOLUME_COLUMNS
    for row in rows:
        assert float(row["kT"]) == pytest.approx(float(row["E"]), rel=1e-9)
        assert row["flag"] == "ok"


def test_volumes_flag_separatrix(tmp_path):
    out = tmp_path / "volumes.csv"
    assert main(["volumes", "--model", "pendulum", "--energies", f"0,{G},20", "--samples", "100000",
                 "--out", str(out)]) == 0
    _, rows = _data_rows(out.read_text())
    assert [r["flag"] for r in rows] == ["ok", "guard_band", "ok"]
    assert rows[1]["vol_sigma"] == ""


def test_correction_command(tmp_path):
    out = tmp_path / "correction.json"
    assert main(["correction", "--energy", "15", "--delta-e", "1", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["data"]["relative_gap"] <= 0.01
    assert payload["header"]["seed"] == payload["header"]["config"]["seed"]


def test_correction_below_separatrix_fails(tmp_path):
    assert main(["correction", "--energy", "5", "--delta-e", "1", "--out", str(tmp_path / "c.json")]) == 1


def test_orbit_at_ground_state_is_constant(tmp_path):
    out = tmp_path / "orbit.csv"
    assert main(["orbit", "--model", "pendulum", f"--energy={-G}", "--h-divisor", "100",
                 "--out", str(out)]) == 0
    text = out.read_text()
    _, rows = _data_rows(text)
    assert len(rows) == 101
    assert all(float(r["q"]) == 0.0 and float(r["p"]) == 0.0 for r in rows)
    assert any(line.startswith("# drift:") for line in _header_lines(text))


def test_orbit_rotation_sweeps_circle(tmp_path):
    out = tmp_path / "orbit.csv"
    assert main(["orbit", "--energy", "20", "--component", "rotation_pos", "--h-divisor", "500",
                 "--out", str(out)]) == 0
    _, rows = _data_rows(out.read_text())
    q = [float(r["q"]) for r in rows]
    assert all(float(r["p"]) > 0.0 for r in rows)
    assert min(q) < -3.0 and max(q) > 3.0
    assert all(float(r["H"]) == pytest.approx(20.0, rel=1e-3) for r in rows)


def test_counterexample_command(tmp_path):
    out = tmp_path / "table.json"
    assert main(["counterexample", "--omega1", "1", "--omega2", "1", "--energy", "1",
                 "--samples", "200000", "--shell", "0.01", "--out", str(out)]) == 0
    data = json.loads(out.read_text())["data"]
    assert data["table"][0][1]["value"] == pytest.approx(0.5, abs=0.05)
    assert main(["counterexample", "--omega1", "-1", "--out", str(tmp_path / "bad.json")]) == 1


def test_config_file_with_flag_override(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"model": "ho1d", "fields": ["f22"], "grid": {"energies": [2.0]},
                                  "dynamics": {"periods": 2}, "seed": 1}))
    out = tmp_path / "scan.csv"
    assert main(["scan", "--config", str(config), "--seed", "5", "--out", str(out)]) == 0
    text = out.read_text()
    assert "# seed: 5" in _header_lines(text)
    _, rows = _data_rows(text)
    assert float(rows[0]["E"]) == 2.0


def test_invalid_inputs_exit_nonzero(tmp_path):
    out = str(tmp_path / "x.csv")
    assert main(["scan", "--model", "pendulum", "--fields", "f99", "--energies", "1", "--out", out]) == 1
    assert main(["scan", "--model", "rotor", "--energies", "1", "--out", out]) == 1
    assert main(["scan", "--model", "ho1d", "--out", out]) == 1
    assert main(["volumes", "--model", "ho1d", "--energies", "1", "--samples", "10", "--out", out]) == 1


def test_unknown_field_fails_before_scanning(tmp_path, monkeypatch):
    def no_scan(*args, **kwargs):
        raise AssertionError("scan started before every field token was resolved")

    monkeypatch.setattr(EquipartitionService, "scan_energies", no_scan)
    out = tmp_path / "scan.csv"
    assert main(["scan", "--model", "pendulum", "--fields", "f22,f99", "--energies", "5",
                 "--out", str(out)]) == 1
    assert not out.exists()
