import numpy as np
import pytest
import yaml

from odtables.benchmark import benchmark, bench_size, linear_fit, write_timings
from odtables.cli import main
from odtables.core import ConstraintSet, ContingencyTable, is_admissible
from odtables.engine import (ConfigError, Problem, RunConfig, check_problem, evaluate,
                             member_streams, run_gensit)
from odtables.io import read_stream, write_matrix
from odtables.synthetic import equilibrium_attraction, generate_sim_problem, generate_synthetic

SIM = generate_sim_problem(5, 4, 200, seed=3)


def _problem(constraints=None):
    c = constraints if constraints is not None else ConstraintSet.from_table(SIM.table, total=False)
    return Problem(SIM.cost, SIM.y, c, SIM.dist_origin, SIM.table)


def _cfg(tmp_path, name="run", **kw):
    base = dict(N=30, burnin=5, thin=5, scheme="joint", hidden=4, hw={"kappa": SIM.kappa},
                solver={"dt": 0.01}, output_dir=str(tmp_path / name))
    base.update(kw)
    return RunConfig(**base)


def _records(run_dir, stream, fmt="jsonl"):
    return list(read_stream(run_dir / "samples" / f"{stream}.{fmt}"))


def test_run_is_deterministic(tmp_path):
    a = run_gensit(_cfg(tmp_path, "a", N=5, E=1), _problem())
    b = run_gensit(_cfg(tmp_path, "b", N=5, E=1), _problem())
    for s in ("theta", "x", "table", "intensity"):
        assert (a.run_dir / "samples" / f"{s}.jsonl").read_bytes() == \
            (b.run_dir / "samples" / f"{s}.jsonl").read_bytes()


def test_persisted_tables_are_admissible(tmp_path):
    prob = _problem()
    res = run_gensit(_cfg(tmp_path), prob)
    assert res.ok
    recs = _records(res.run_dir, "table")
    assert [r[0] for r in recs] == [10, 15, 20, 25, 30]
    for _, _, v in recs:
        assert is_admissible(ContingencyTable(v.reshape(5, 4)), prob.constraints)
    assert len(_records(res.run_dir, "theta")) == 30
    resolved = yaml.safe_load((res.run_dir / "config.resolved").read_text())
    assert resolved["constraint_tag"] == "rows+cols" and resolved["shape"] == [5, 4]


def test_disjoint_total_only(tmp_path):
    res = run_gensit(_cfg(tmp_path, scheme="disjoint", thin=1, format="csv"),
                     _problem(ConstraintSet(total=200)))
    for _, _, v in _records(res.run_dir, "table", "csv"):
        assert v.sum() == 200


def test_parallel_matches_serial(tmp_path):
    prob = _problem()
    kw = dict(E=4, N=10, thin=1, hw={"kappa": SIM.kappa, "sigma": "low"})
    a = run_gensit(_cfg(tmp_path, "serial", workers=1, **kw), prob)
    b = run_gensit(_cfg(tmp_path, "parallel", workers=2, **kw), prob)
    for s in ("theta", "x", "table", "intensity"):
        raw = (a.run_dir / "samples" / f"{s}.jsonl").read_bytes()
        assert raw == (b.run_dir / "samples" / f"{s}.jsonl").read_bytes()
    assert [r[1] for r in _records(a.run_dir, "theta")] == [0] * 10 + [1] * 10 + [2] * 10 + [3] * 10
    assert not (a.run_dir / "samples" / "member_0000").exists()


def test_member_streams_are_independent():
    a = [g.random() for g in member_streams(1, 0)]
    b = [g.random() for g in member_streams(1, 1)]
    assert len(set(a + b)) == 6
    assert a == [g.random() for g in member_streams(1, 0)]


def test_failed_member_is_reported(tmp_path, monkeypatch):
    import odtables.engine as eng
    real = eng.run_member

    def flaky(cfg, prob, member, sink):
        if member == 1:
            raise FloatingPointError("boom")
        real(cfg, prob, member, sink)

    monkeypatch.setattr(eng, "run_member", flaky)
    res = run_gensit(_cfg(tmp_path, E=2, N=6), _problem())
    assert list(res.failures) == [1]
    assert "boom" in (res.run_dir / "errors.log").read_text()
    assert {r[1] for r in _records(res.run_dir, "theta")} == {0}


def _fake_run(tmp_path, tables, fmt="jsonl"):
    from odtables.io import StreamWriter
    run = tmp_path / "fake"
    (run / "samples").mkdir(parents=True)
    shape = tables[0].shape
    (run / "config.resolved").write_text(yaml.safe_dump(
        {"shape": list(shape), "format": fmt, "constraint_tag": "rows"}))
    for s in ("table", "intensity"):
        with StreamWriter(run / "samples" / f"{s}.{fmt}", fmt) as w:
            for n, t in enumerate(tables, 1):
                w.write(n, 0, t)
    return run


def test_evaluate_on_truth_copies(tmp_path):
    T = SIM.table.cells
    run = _fake_run(tmp_path, [T] * 10)
    rep = evaluate(run, T)
    assert rep[("table", "srmse")] == 0
    assert rep[("table", "ssi")] == 1
    assert rep[("table", "cp99")] == 1
    assert rep[("intensity", "n")] == 10
    lines = (run / "metrics.csv").read_text().splitlines()
    assert lines[0] == "run_id,constraint,space,metric,value"
    assert lines[1].startswith("fake,rows,table,srmse,")


def test_evaluate_burnin_thin_and_q(tmp_path):
    rng = np.random.default_rng(0)
    T = SIM.table.cells
    run = _fake_run(tmp_path, list(rng.poisson(T + 1, (300, 5, 4))))
    assert evaluate(run, T, burnin=100, thin=4, write=False)[("table", "n")] == 50
    cp50 = evaluate(run, T, q=50, write=False)[("table", "cp50")]
    cp99 = evaluate(run, T, q=99, write=False)[("table", "cp99")]
    assert cp99 >= cp50
    with pytest.raises(ValueError):
        evaluate(run, T, burnin=1000, write=False)
    with pytest.raises(ValueError):
        evaluate(run, np.ones((2, 2)), write=False)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(N=0)
    with pytest.raises(ConfigError):
        RunConfig(scheme="both")
    with pytest.raises(ConfigError):
        RunConfig(hw={"sigma": "medium"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"iterations": 5})
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.yaml")
    assert RunConfig(hw={"sigma": "high"}).hw["sigma"] == 0.141
    prob = _problem(ConstraintSet(total=200))
    with pytest.raises(ConfigError, match="row sums"):
        check_problem(RunConfig(intensity="singly"), prob)
    with pytest.raises(ConfigError):
        check_problem(RunConfig(), Problem(SIM.cost, SIM.y[:3], prob.constraints))
    with pytest.raises(ConfigError):
        check_problem(RunConfig(), Problem(SIM.cost, SIM.y, ConstraintSet(row_sums=[1, 2])))


def test_generate_synthetic():
    lam, T = generate_synthetic(6, 7, 500, seed=1)
    assert T.total == 500 and lam.values.sum() == pytest.approx(500)
    lam2, T2 = generate_synthetic(6, 7, 500, seed=1)
    assert np.array_equal(T.cells, T2.cells) and np.array_equal(lam.values, lam2.values)
    lam, T = generate_synthetic(1, 1, 9, seed=0)
    assert T.cells.tolist() == [[9]] and lam.values.item() == pytest.approx(9)
    with pytest.raises(ValueError):
        generate_synthetic(2, 2, 0)


def test_sim_problem_is_at_equilibrium():
    col = SIM.lam.sum(axis=0)
    assert np.allclose(col, SIM.kappa * np.exp(SIM.y), rtol=1e-10)
    assert SIM.table.total == 200
    with pytest.raises(ValueError):
        equilibrium_attraction(SIM.cost, 1.2, 1.0, 200, 50)


def test_benchmark_small(tmp_path):
    assert benchmark([]) == []
    assert linear_fit([]) is None
    t = bench_size(6, 5, N=3, A=1000)
    assert t.cells == 30 and t.table_seconds > 0 and t.intensity_seconds > 0
    write_timings(tmp_path / "t.csv", [t, bench_size(8, 8, N=3, A=1000)])
    assert "table fit" in (tmp_path / "t.csv").read_text()


def test_cli_end_to_end(tmp_path, capsys):
    d = tmp_path / "prob"
    assert main(["generate", "--rows", "4", "--cols", "3", "--total", "100", "--out", str(d), "--sim"]) == 0
    cfg = yaml.safe_load((d / "config.yaml").read_text())
    cfg.update(N=20, burnin=0, thin=2, hidden=3)
    (d / "config.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["run", "--config", str(d / "config.yaml"), "--format", "csv"]) == 0
    assert (d / "run" / "samples" / "table.csv").exists()
    assert main(["evaluate", str(d / "run")]) == 0
    assert "table.srmse" in capsys.readouterr().out
    assert (d / "run" / "metrics.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run"]) == 1  # missing --config
    assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1
    (tmp_path / "bad.yaml").write_text("N: 0\n")
    assert main(["run", "--config", str(tmp_path / "bad.yaml")]) == 1
    assert main(["benchmark", "--sizes", "3by3"]) == 1
    # a run dir whose stream is empty is a runtime error
    run = _fake_run(tmp_path, [np.ones((2, 2), dtype=int)])
    assert main(["evaluate", str(run)]) == 1  # no ground truth anywhere
    write_matrix(tmp_path / "truth.csv", np.ones((2, 2), dtype=int))
    assert main(["evaluate", str(run), "--truth", str(tmp_path / "truth.csv"), "--burnin", "5"]) == 2
    assert main(["--help"]) == 0


def test_cli_enumerate(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("row_sums: [2, 1]\ncol_sums: [1, 2]\n")
    assert main(["enumerate", "--constraints", str(tmp_path / "c.yaml"), "--count"]) == 0
    assert capsys.readouterr().out.strip() == "2"
    assert main(["enumerate", "--constraints", str(tmp_path / "c.yaml")]) == 0
    out = sorted(capsys.readouterr().out.split())
    assert out == ["0,2;1,0", "1,1;0,1"]
    (tmp_path / "big.yaml").write_text("row_sums: [50, 50, 50]\ncol_sums: [50, 50, 50]\n")
    assert main(["enumerate", "--constraints", str(tmp_path / "big.yaml"), "--max-size", "10"]) == 2
