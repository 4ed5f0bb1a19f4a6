import json

import pytest

from firstreturn import __version__
from firstreturn.cli import main
from firstreturn.lattice_model import dump_model, lazy_simple_walk, simple_walk
from suite import drifted


@pytest.fixture
def models(tmp_path):
    paths = {}
    for name, law in [("lazy", lazy_simple_walk(3)), ("srw3", simple_walk(3)),
                      ("srw2", simple_walk(2)), ("drift", drifted())]:
        paths[name] = tmp_path / f"{name}.json"
        dump_model(law, paths[name])
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 1, "family": "finite-atoms", "atoms": [[1, 0.8], [-1, 0.3]]}')
    paths["bad"] = bad
    return paths


def read_rows(path):
    lines = path.read_text().splitlines()
    meta = dict(line[2:].split("=", 1) for line in lines if line.startswith("# "))
    body = [line.split(",") for line in lines if not line.startswith("#")]
    return meta, body[0], body[1:]


def test_validate(models, capsys):
    assert main(["model", "validate", "--model", str(models["lazy"])]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["aperiodic"] and report["transient"]
    assert main(["model", "validate", "--model", str(models["srw3"])]) == 0
    report = json.loads(capsys.readouterr().out)
    assert not report["aperiodic"] and "lazify" in report["hint"]


def test_malformed_model(models, capsys):
    assert main(["model", "validate", "--model", str(models["bad"])]) == 2
    assert "atoms" in capsys.readouterr().err


def test_missing_model(tmp_path, capsys):
    assert main(["compute", "--model", str(tmp_path / "nope.json"), "--n-max", "4"]) == 2


def test_compute_rational(models, tmp_path):
    out = tmp_path / "run"
    assert main(["compute", "--model", str(models["lazy"]), "--n-max", "64", "--mode", "rational",
                 "--out", str(out)]) == 0
    meta, header, rows = read_rows(out / "u.csv")
    assert header == ["n", "u_n", "e_n"]
    assert rows[2][:2] == ["2", "7/24"]
    assert meta["version"] == __version__
    assert meta["mode"] == "rational"
    assert meta["fingerprint"] == lazy_simple_walk(3).fingerprint
    _, header, prow = read_rows(out / "p.csv")
    assert header == ["n", "p_n", "P_n"]
    assert prow[1][:2] == ["2", "1/24"]
    summary = json.loads((out / "summary.json").read_text())
    for key in ("p", "interval", "defect", "method", "fingerprint", "version", "mode", "seed"):
        assert key in summary


def test_compute_float_seventeen_digits(models, tmp_path):
    out = tmp_path / "run"
    assert main(["compute", "--model", str(models["lazy"]), "--n-max", "64", "--out", str(out)]) == 0
    _, _, rows = read_rows(out / "u.csv")
    assert float(rows[2][1]) == pytest.approx(7 / 24, abs=1e-16)
    assert len(rows[2][1].replace("0.", "").lstrip("0")) >= 16


def test_compute_drift_closed_form(models, tmp_path):
    out = tmp_path / "run"
    assert main(["compute", "--model", str(models["drift"]), "--n-max", "2000", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["p"] == pytest.approx(0.4, abs=1e-6)
    lo, hi = summary["interval"]
    assert lo <= 0.4 <= hi


def test_compute_rejects_zero_horizon(models, capsys):
    assert main(["compute", "--model", str(models["lazy"]), "--n-max", "0"]) == 2
    assert "horizon" in capsys.readouterr().err


def test_verify_refusals(models, tmp_path, capsys):
    assert main(["verify", "--model", str(models["srw2"]), "--n-max", "64", "--out", str(tmp_path)]) == 2
    assert "recurrent (η = 1)" in capsys.readouterr().err
    assert main(["verify", "--model", str(models["drift"]), "--n-max", "64", "--out", str(tmp_path)]) == 2
    assert "nonzero drift" in capsys.readouterr().err


def test_verify_lazy_walk(models, tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--model", str(models["lazy"]), "--n-max", "512", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["ratio_gap"] <= 0.02
    assert report["passed"]
    _, header, rows = read_rows(out / "verify.csv")
    assert header == ["n", "u_n", "p_n", "C_n_u_n", "rho_n", "predicted_p_n"]
    assert len(rows) == 512


def test_verify_tolerance_failure(models, tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--model", str(models["lazy"]), "--n-max", "64", "--tolerance", "1e-9",
                 "--out", str(out)]) == 1


def test_oracle_matrix(models, tmp_path):
    out = tmp_path / "o"
    assert main(["oracle", "--model", str(models["lazy"]), "--n-max", "16", "--mode", "rational",
                 "--trials", "20000", "--out", str(out)]) == 0
    report = json.loads((out / "oracle.json").read_text())
    assert report["chains_agree"]
    assert all(row["agree"] for row in report["rows"])
    assert report["rows"][1]["u_n_enum"] == "7/24"


def test_oracle_cap_refusal(models, tmp_path, capsys):
    assert main(["oracle", "--model", str(models["lazy"]), "--n-max", "30", "--mode", "rational",
                 "--out", str(tmp_path)]) == 2
    assert "n <= 16" in capsys.readouterr().err


def test_reruns_byte_identical(models, tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["compute", "--model", str(models["lazy"]), "--n-max", "32", "--out", str(out)]) == 0
        assert main(["simulate", "--model", str(models["lazy"]), "--n-max", "20", "--trials", "5000",
                     "--seed", "7", "--out", str(out)]) == 0
        outputs.append({f: (out / f).read_bytes() for f in ("u.csv", "p.csv", "summary.json", "mc.csv")})
    assert outputs[0] == outputs[1]
    meta, _, _ = read_rows(tmp_path / "a" / "mc.csv")
    assert meta["seed"] == "7"


def test_memory_cap_is_input_error(models, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FIRSTRETURN_MEM_CAP", "1000")
    assert main(["compute", "--model", str(models["lazy"]), "--n-max", "32", "--out", str(tmp_path)]) == 2
    assert "cap" in capsys.readouterr().err
