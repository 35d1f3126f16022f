from nomsim.cli import main
from nomsim.sim import StatsReport
from nomsim.workload import load_trace


def write_cfg(path, **kw):
    body = {"count": 80, "preset": "fileCopy60", **kw}
    path.write_text("".join(f"{k} = {v}\n" for k, v in body.items()))
    return path


def test_generate_simulate_compare(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    assert main(["generate", "--preset", "fileCopy60", "--count", "80", "--out", str(trace)]) == 0
    assert len(load_trace(trace)) == 80

    nom = write_cfg(tmp_path / "nom.cfg")
    out = tmp_path / "nom.report"
    assert main(["simulate", "--config", str(nom), "--trace", str(trace), "--out", str(out)]) == 0
    rep = StatsReport.from_text(out.read_text())
    assert rep["config"] == "nom" and rep["requests_completed"] == 80
    assert "drain_cycles" in capsys.readouterr().out

    rc = write_cfg(tmp_path / "rc.cfg", mechanism="rowclone")
    assert main(["compare", "--configs", f"{nom},{rc}", "--trace", str(trace)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["config", "drain_cycles", "speedup"]
    assert [line.split()[0] for line in table.splitlines()[1:]] == ["nom", "rc"]


def test_seed_override_changes_generated_workload(tmp_path):
    cfg = write_cfg(tmp_path / "a.cfg")
    a, b = tmp_path / "a.out", tmp_path / "b.out"
    main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(a)])
    main(["simulate", "--config", str(cfg), "--seed", "2", "--out", str(b)])
    assert a.read_text() != b.read_text()


def test_incomplete_run_exit_code(tmp_path):
    cfg = write_cfg(tmp_path / "cap.cfg", cycle_cap=50)
    assert main(["simulate", "--config", str(cfg)]) == 2


def test_errors_are_reported(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("wobble = 1\n")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "unknown key" in capsys.readouterr().err
    trace = tmp_path / "bad.trace"
    trace.write_text("0 READ 0x0 64\n1 READ 0x40\n")
    good = write_cfg(tmp_path / "ok.cfg")
    assert main(["simulate", "--config", str(good), "--trace", str(trace)]) == 1
    assert ":2:" in capsys.readouterr().err
    other = write_cfg(tmp_path / "other.cfg", seed=3)
    assert main(["compare", "--configs", f"{good},{other}", "--trace", str(tmp_path / "missing")]) == 1
