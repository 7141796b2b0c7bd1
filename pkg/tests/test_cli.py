import csv
import json

import numpy as np
import pytest

from holopf import artifact_io
from holopf.cli import main
from holopf.mdhem import ScaleAssignment, run
from holopf.network import bundled_case


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def art_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "a4.bin"
    assert main(["solve", "--case", "case4", "--order", "12", "--tol", "1e-8", "--out", str(path)]) == 0
    return path


def test_germ_human_and_json(capsys):
    assert main(["germ", "--case", "ieee14"]) == 0
    out = capsys.readouterr().out
    assert "residual pq_injection" in out
    assert main(["germ", "--case", "ieee14", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert max(doc["residuals"].values()) <= 1e-10
    assert len(doc["V0"]) == 14


def test_germ_disconnected(tmp_path, capsys):
    case = bundled_case("case3").to_dict()
    case["branches"] = case["branches"][:1]
    p = tmp_path / "c.json"
    p.write_text(json.dumps(case))
    assert main(["germ", "--case", str(p)]) == 3
    assert "singular" in capsys.readouterr().err


def test_bad_case_file(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"buses": [')
    assert main(["germ", "--case", str(p)]) == 2
    assert "line" in capsys.readouterr().err


def test_solve_matches_in_process(art_path, capsys):
    case = bundled_case("case4")
    ref = run(case, ScaleAssignment.per_bus(case), M_max=12, tol=1e-8)
    loaded = artifact_io.load_artifact(art_path)
    assert loaded.tails[-1] < 1e-8
    assert artifact_io.to_bytes(loaded) == artifact_io.to_bytes(ref)


def test_solve_dims1_and_germ_only(tmp_path):
    p = tmp_path / "one.json"
    assert main(["solve", "--case", "case4", "--dims", "1", "--out", str(p)]) == 0
    assert artifact_io.load_artifact(p).D == 1
    assert main(["sweep", "--artifact", str(p), "--grid", "0:2:0.25",
                 "--out", str(tmp_path / "nose.csv")]) == 0
    rows = read_csv(tmp_path / "nose.csv")
    assert [float(r["s1"]) for r in rows] == [0.25 * k for k in range(9)]
    vm = [float(r["vm_3"]) for r in rows]
    assert all(a > b for a, b in zip(vm, vm[1:]))
    g = tmp_path / "g.json"
    assert main(["solve", "--case", "case4", "--order", "0", "--out", str(g)]) == 0
    assert artifact_io.load_artifact(g).M == 0


def test_solve_scale_forms(tmp_path):
    spec = '{"p": [[2, "P"], [3, "P"]], "q": [[2, "Q"], [3, "Q"]]}'
    f = tmp_path / "scales.json"
    f.write_text(spec)
    for arg in (spec, str(f)):
        out = tmp_path / "x.bin"
        assert main(["solve", "--case", "case4", "--scales", arg, "--out", str(out)]) == 0
        assert artifact_io.load_artifact(out).scales.names == ("p", "q")
    assert main(["solve", "--case", "case4", "--scales", '{"p": [[2, "P"]]}']) == 2


def test_eval_zero_is_germ(art_path, tmp_path):
    out = tmp_path / "e.csv"
    assert main(["eval", "--artifact", str(art_path), "--s", "0,0", "--out", str(out)]) == 0
    row = read_csv(out)[0]
    germ = artifact_io.load_artifact(art_path).germ
    assert float(row["vm_2"]) == abs(germ.V0[1])
    assert float(row["va_4"]) == float(np.angle(germ.V0[3]))


def test_eval_batch_order_preserved(art_path, tmp_path, rng):
    pts = rng.uniform(0, 2, (1000, 2))
    src = tmp_path / "pts.csv"
    with open(src, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s1", "s2"])
        w.writerows([[format(a, ".17g") for a in p] for p in pts])
    out = tmp_path / "e.csv"
    assert main(["eval", "--artifact", str(art_path), "--points", str(src), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 1000
    assert np.array_equal([[float(r["s1"]), float(r["s2"])] for r in rows], pts)


def test_sweep_and_compare(art_path, tmp_path, capsys):
    sweep = tmp_path / "s.csv"
    assert main(["sweep", "--artifact", str(art_path), "--grid", "0:2:0.1,0:2:0.1",
                 "--out", str(sweep)]) == 0
    rows = read_csv(sweep)
    assert len(rows) == 441
    assert list(rows[0])[:4] == ["s1", "s2", "vm_1", "va_1"] and "q_4" in rows[0]
    cmp_ = tmp_path / "c.csv"
    assert main(["compare", "--artifact", str(art_path), "--grid", "0:2:0.1",
                 "--out", str(cmp_)]) == 0
    err = capsys.readouterr().err
    assert "max error" in err
    crow = read_csv(cmp_)
    assert len(crow) == 441 and {"nr_converged", "nr_vm_3", "err_3", "max_err"} <= set(crow[0])
    assert max(float(r["max_err"]) for r in crow if r["nr_converged"] == "1") <= 1e-3
    # a compare row at the base point reports exactly what eval reports
    base = next(r for r in crow if r["s1"] == "1" and r["s2"] == "1")
    ev = tmp_path / "e.csv"
    main(["eval", "--artifact", str(art_path), "--s", "1,1", "--out", str(ev)])
    erow = read_csv(ev)[0]
    assert all(base[k] == erow[k] for k in erow)


def test_compare_threads_env(art_path, tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["compare", "--artifact", str(art_path), "--grid", "0:2:0.5", "--out", str(a)])
    monkeypatch.setenv("HOLOPF_THREADS", "3")
    main(["compare", "--artifact", str(art_path), "--grid", "0:2:0.5", "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_grid_errors(art_path):
    assert main(["sweep", "--artifact", str(art_path), "--grid", "0:1:0"]) == 2
    assert main(["sweep", "--artifact", str(art_path), "--grid", "0:1:0.5,0:1:0.5,0:1:1"]) == 2
    assert main(["sweep", "--artifact", str(art_path), "--grid", "0:1"]) == 2


def test_limits_reports(tmp_path, art_path):
    out = tmp_path / "l.csv"
    # infinite limits: nothing to report over a grid
    assert main(["limits", "--artifact", str(art_path), "--grid", "0:2:0.1", "--out", str(out)]) == 0
    assert read_csv(out) == []
    art = tmp_path / "q.bin"
    assert main(["solve", "--case", "case4_qlim", "--out", str(art)]) == 0
    assert main(["limits", "--artifact", str(art), "--grid", "0:2:0.1", "--out", str(out)]) == 0
    rows = read_csv(out)
    boundary = [r for r in rows if r["boundary"] == "1"]
    assert boundary and all(r["bus"] == "4" for r in rows)
    # each flagged boundary point has a neighbour across the q_max crossing
    for r in boundary:
        assert abs(float(r["q_gen"]) - 1.0) < 0.1
    assert main(["limits", "--artifact", str(art), "--s", "1.5,1.5", "--out", str(out)]) == 0
    (row,) = read_csv(out)
    assert row["violation"] == "max" and float(row["margin_max"]) < 0


def test_solve_with_target(tmp_path, capsys):
    out = tmp_path / "t.json"
    assert main(["solve", "--case", "case4_qlim", "--target-s", "1.5,1.5", "--out", str(out)]) == 0
    assert "converted bus 4" in capsys.readouterr().out
    assert artifact_io.load_artifact(out).conversions[0]["bus"] == 4


def test_info(capsys):
    assert main(["info", "--dims", "2", "--order", "12", "--counts", "1,2,1", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["conv_multiplies"] == 7800 and doc["lhs_dim"] == 11
    assert main(["info", "--dims", "4", "--order", "11", "--case", "ieee14"]) == 0
    assert "1365" in capsys.readouterr().out


def test_helm(capsys):
    assert main(["helm", "--case", "ieee14", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["converged"] and len(doc["V"]) == 14
