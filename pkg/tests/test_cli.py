import json

import numpy as np
import pytest

from helmfmm.cli import main
from helmfmm.kernel import read_particles
from helmfmm.report import efficiency, load_records, relative_errors, render_reports


def test_gen_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["gen", "--geometry", "planar-grid:8", "-o", str(a)]) == 0
    assert main(["gen", "--geometry", "planar-grid:8", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_particles(a)) == 1024
    assert main(["gen", "--geometry", "sphere-surface:2", "-o", str(b)]) == 0
    assert "# count" in b.read_text()


def test_verify_reports_errors(tmp_path, capsys):
    f = tmp_path / "g.txt"
    main(["gen", "--geometry", "planar-grid:4:0.125", "--intensities", "random-seeded",
          "-o", str(f)])
    errs = {}
    for d in ("2", "4"):
        assert main(["verify", str(f), "--digits", d, "--ranks", "2"]) == 0
        out = capsys.readouterr().out
        errs[d] = float(out.split("relative RMS error")[1].split()[0])
    assert errs["4"] <= errs["2"] <= 1e-3
    assert main(["verify", str(f), "--limit", "10"]) == 2
    assert "guard" in capsys.readouterr().err


def test_verify_zero_intensities(tmp_path, capsys):
    f = tmp_path / "z.txt"
    f.write_text("".join(f"{x} 0 0 0 0\n" for x in np.arange(20) * 0.25))
    assert main(["verify", str(f)]) == 0
    assert "relative RMS error 0.000e+00" in capsys.readouterr().out


def test_eval_writes_ledger(tmp_path, capsys):
    f = tmp_path / "g.txt"
    main(["gen", "--geometry", "planar-grid:4", "-o", str(f)])
    capsys.readouterr()
    assert main(["eval", str(f), "--ranks", "3", "--buffer-bytes", "4096",
                 "--ledger", str(tmp_path / "l.json"), "--output", str(tmp_path / "p.txt")]) == 0
    assert capsys.readouterr().out.startswith("run_id,N_p,phase")
    assert json.loads((tmp_path / "l.json").read_text())["n_ranks"] == 3
    assert np.loadtxt(tmp_path / "p.txt").shape == (256, 2)


def test_efficiency_formula():
    assert round(efficiency((128, 18.55), (2048, 2.38)), 2) == 0.49
    assert efficiency((1, 3.0), (1, 3.0)) == 1.0
    with pytest.raises(ValueError):
        efficiency((0, 1.0), (2, 1.0))


def test_relative_errors_zero_reference():
    assert relative_errors(np.zeros(3), np.zeros(3)) == (0.0, 0.0)


def test_scale_study_and_regeneration(tmp_path, capsys):
    study = {"geometries": ["planar-grid:6", "planar-grid:7"], "ranks": [1, 2, 8],
             "output": str(tmp_path / "out")}
    (tmp_path / "study.json").write_text(json.dumps(study))
    assert main(["scale", str(tmp_path / "study.json")]) == 0
    out = tmp_path / "out"
    before = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    assert main(["report", str(out)]) == 0
    assert before == {p.name: p.read_bytes() for p in out.glob("*.csv")}
    scaling = (out / "scaling.csv").read_text().splitlines()
    assert scaling[1].endswith("1.0000,1.0000")
    for line in (out / "alignment.csv").read_text().splitlines()[1:]:
        assert int(line.split(",")[-1]) <= 0
    run_ids = {r["run_id"] for r in load_records(out)}
    for line in (out / "phases.csv").read_text().splitlines()[1:]:
        assert line.split(",")[0] in run_ids
    assert set(render_reports(load_records(out))) == {p.name for p in out.glob("*.csv")}


def test_failed_cell_is_recorded(tmp_path, capsys):
    # 64 ranks exceed the 36 leaves of a 6x6 grid
    assert main(["scale", "--geometry", "planar-grid:1.5", "--ranks", "1", "64",
                 "--alignment", "aligned", "--output", str(tmp_path / "o")]) == 1
    assert "exceed" in (tmp_path / "o" / "failures.csv").read_text()


def test_predict_outputs_json(capsys):
    assert main(["predict", "--n-s", "4096", "--p", "4", "--d", "2", "--levels", "7"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["m2m"]["C"] == 372736 and data["m2m"]["B"] == data["l2l"]["B"]
