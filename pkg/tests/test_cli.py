import json
import subprocess
import sys

import numpy as np
import pytest

from qdpairs.cli import main
from qdpairs.polarization import loads_density


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def summary(out):
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line)


@pytest.fixture(scope="module")
def fig2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2")
    code = main(["simulate", "--seed", "7", "--out", str(out), "--duration-s", "0.002",
                 "--settings", "fig2", "--param", "p_exc=0.5"])
    assert code == 0
    return out


def test_simulate_writes_twelve_streams(fig2_run):
    files = sorted(p.name for p in (fig2_run / "streams").iterdir())
    assert len(files) == 12
    manifest = json.loads((fig2_run / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert [s["label"] for s in manifest["settings"]][:4] == ["LR", "LL", "RR", "RL"]
    assert len({s["seed"] for s in manifest["settings"]}) == 12
    first = (fig2_run / "streams" / "LR.tsv").read_text().splitlines()[0]
    ch, t = first.split("\t")
    assert ch in {"0", "1", "2"} and int(t) >= 0


def test_simulate_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(["simulate", "--seed", 3, "--out", tmp_path / name, "--duration-s", 0.001,
                          "--settings", "LR,0/45"], capsys)
        assert code == 0
    for f in ("LR.tsv", "0_45.tsv"):
        assert (tmp_path / "a" / "streams" / f).read_bytes() == (tmp_path / "b" / "streams" / f).read_bytes()


def test_simulate_workers_match_serial(tmp_path, capsys):
    args = ["simulate", "--seed", 4, "--duration-s", 0.001, "--settings", "bases"]
    assert run(args + ["--out", tmp_path / "s"], capsys)[0] == 0
    assert run(args + ["--out", tmp_path / "p", "--workers", 2], capsys)[0] == 0
    for f in ("LR.tsv", "HH.tsv", "DD.tsv"):
        assert (tmp_path / "s" / "streams" / f).read_bytes() == (tmp_path / "p" / "streams" / f).read_bytes()


def test_simulate_rejects_zero_duration(tmp_path, capsys):
    code, _, err = run(["simulate", "--seed", 1, "--out", tmp_path, "--duration-s", 0], capsys)
    assert code == 2
    assert "error kind=config" in err and "duration" in err


def test_simulate_rejects_bad_param(tmp_path, capsys):
    code, _, err = run(["simulate", "--seed", 1, "--out", tmp_path, "--param", "p_exc=2"], capsys)
    assert code == 2 and "p_exc" in err


def test_simulate_needs_seed(tmp_path, capsys):
    code, _, err = run(["simulate", "--out", tmp_path], capsys)
    assert code == 2 and "seed" in err


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 5\nduration_s = 0.001\nsettings = LR\np_exc = 0.2\n")
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "o", "--seed", 6], capsys)[0] == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 6
    assert float(manifest["params"]["p_exc"]) == 0.2


def test_analyze_fig2(fig2_run, capsys):
    code, out, _ = run(["analyze", "--manifest", fig2_run], capsys)
    assert code == 0
    values = summary(out)
    doc = json.loads((fig2_run / "analysis" / "analysis.json").read_text())
    for key in ("C_RL", "C_HV", "C_DA"):
        assert 0.6 < doc[key] < 0.85
        assert float(values[key]) == pytest.approx(doc[key], rel=1e-5)
    assert doc["fidelity"] == pytest.approx((1 + doc["C_RL"] + doc["C_HV"] + doc["C_DA"]) / 4)
    hist = (fig2_run / "analysis" / "histograms" / "LR_co.csv").read_text().splitlines()
    assert hist[0] == "delay_ps,counts"
    assert len(doc["inputs"]) == 12 and all(len(i["sha256"]) == 64 for i in doc["inputs"])


def test_analyze_missing_setting(fig2_run, capsys):
    code, _, err = run(["analyze", "--manifest", fig2_run, "--settings", "LR,HD", "--out", fig2_run / "x"], capsys)
    assert code == 1 and "HD" in err


def test_analyze_missing_manifest(tmp_path, capsys):
    code, _, err = run(["analyze", "--manifest", tmp_path], capsys)
    assert code == 1 and "manifest" in err


def test_tomo_from_state(tmp_path, capsys):
    code, out, _ = run(["tomo", "--state", "werner:0.8133", "--seed", 3, "--out", tmp_path], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "density.json").read_text())
    rho = loads_density(json.dumps(doc))
    assert np.linalg.eigvalsh(rho).min() >= -1e-9
    assert doc["summary"]["min_pt_eigenvalue"] == pytest.approx(-0.36, abs=0.01)
    assert doc["basis"] == "RR,RL,LR,LL"
    assert np.array(doc["sign_im"]).shape == (4, 4)
    assert float(summary(out)["fidelity"]) == pytest.approx(0.86, abs=0.01)


def test_tomo_counts_file_and_report(tmp_path, capsys):
    assert run(["tomo", "--state", "bell", "--exact", "--shots", 1000, "--out", tmp_path / "gen"], capsys)[0] == 0
    counts = tmp_path / "gen" / "counts.csv"
    code, _, _ = run(["tomo", "--counts", counts, "--out", tmp_path / "fit", "--bootstrap", 3, "--seed", 1], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "fit" / "density.json").read_text())
    assert doc["summary"]["fidelity"] == pytest.approx(1.0, abs=1e-6)
    assert doc["bootstrap"]["resamples"] == 3
    code, out, _ = run(["report", "--tomo", tmp_path / "fit", "--out", tmp_path / "rep"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert rep["tomo_fidelity"] == pytest.approx(1.0, abs=1e-6)
    assert rep["sources"][0]["inputs"][0]["file"].endswith("counts.csv")


def test_tomo_rejects_35_rows(tmp_path, capsys):
    assert run(["tomo", "--state", "bell", "--exact", "--shots", 100, "--out", tmp_path], capsys)[0] == 0
    lines = (tmp_path / "counts.csv").read_text().splitlines()
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(line for line in lines if not line.startswith("H,V")) + "\n")
    code, _, err = run(["tomo", "--counts", bad, "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert "HV" in err
    assert not (tmp_path / "o" / "density.json").exists()


def test_tomo_needs_input(tmp_path, capsys):
    code, _, err = run(["tomo", "--out", tmp_path], capsys)
    assert code == 2 and "counts" in err


def test_full_pipeline_report(fig2_run, tmp_path, capsys):
    assert run(["analyze", "--manifest", fig2_run, "--out", tmp_path / "an"], capsys)[0] == 0
    assert run(["tomo", "--state", "werner:0.8", "--seed", 2, "--out", tmp_path / "tm"], capsys)[0] == 0
    code, out, _ = run(["report", "--analysis", tmp_path / "an", "--tomo", tmp_path / "tm",
                        "--out", tmp_path / "r.json"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert "measured_fidelity" in rep and "tomo_concurrence" in rep
    assert {s["kind"] for s in rep["sources"]} == {"analysis", "tomo"}


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "qdpairs", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
