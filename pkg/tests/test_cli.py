import json
import os

import pytest

from coupledopt.cli import EXIT_DIVERGENCE, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main


def _csvs(d):
    return sorted(f for f in os.listdir(d) if f.endswith(".csv"))


def test_run_case2_layout(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run-case", "2", "--max-iters", "300", "--record-every", "100", "--out", str(out)]) == EXIT_OK
    files = _csvs(out)
    assert len(files) == 12
    for topo in ("cycle", "random_p0.05", "random_p0.1", "random_p0.3"):
        for alg in ("idea", "edea", "unaug-idea"):
            assert f"case2_{topo}_{alg}.csv" in files
    summary = (out / "summary.txt").read_text().splitlines()
    assert len(summary) == 13 and "cum_scalars" in summary[0]
    rows = {(l.split()[0], l.split()[1]): int(l.split()[-1]) for l in summary[1:]}
    for topo in ("cycle", "random_p0.3"):
        assert 2 * rows[(topo, "idea")] == rows[(topo, "edea")]
    lines = (out / "case2_cycle_idea.csv").read_text().splitlines()
    assert lines[0] == "iter,relative_gap,consensus_error,violation,z_sum,lyapunov,msgs_scalars"
    assert len(lines) == 1 + 4


def test_run_case4_digraph_set(tmp_path):
    out = tmp_path / "r"
    assert main(["run-case", "4", "--algorithms", "idea", "--max-iters", "50", "--out", str(out)]) == EXIT_OK
    assert _csvs(out) == sorted(f"case4_{t}_idea.csv" for t in
                                ("directed_cycle", "exponential_e2", "exponential_e4", "exponential_e6"))


def test_run_case1_subset(tmp_path):
    out = tmp_path / "r"
    assert main(["run-case", "1", "--algorithms", "proj-idea", "--max-iters", "20", "--out", str(out)]) == EXIT_OK
    assert len(_csvs(out)) == 4 and all(f.endswith("_proj-idea.csv") for f in _csvs(out))


def test_same_command_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        main(["run-case", "3", "--algorithms", "proj-idea", "--max-iters", "200", "--seed", "4", "--out", str(d)])
    for f in _csvs(a):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_unknown_algorithm(tmp_path, capsys):
    assert main(["run-case", "2", "--algorithms", "idea,foo", "--out", str(tmp_path / "r")]) == EXIT_VALIDATION
    assert "foo" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["run-case", "9"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["tune", "2"])
    assert e.value.code == EXIT_USAGE


def test_divergence_exit(tmp_path, capsys):
    rc = main(["run-case", "4", "--algorithms", "idea", "--delta", "1000", "--max-iters", "2000",
               "--out", str(tmp_path / "r")])
    assert rc == EXIT_DIVERGENCE
    assert "diverged" in capsys.readouterr().err


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


def test_run_config_matches_run_case(tmp_path):
    a = tmp_path / "a"
    main(["run-case", "3", "--algorithms", "proj-idea", "--max-iters", "300", "--seed", "2", "--out", str(a)])
    b = tmp_path / "b"
    cfg = {"case_id": 3, "seed": 2, "graph": {"kind": "exponential", "e": 4}, "algorithm": "proj-idea",
           "run": {"max_iters": 300, "out": str(b)}}
    assert main(["run-config", _write(tmp_path, cfg)]) == EXIT_OK
    assert (a / "case3_exponential_e4_proj-idea.csv").read_bytes() == (b / "case3_exponential_e4_proj-idea.csv").read_bytes()


def test_run_config_warns_below_bound(tmp_path, capsys):
    cfg = {"case_id": 3, "graph": {"kind": "exponential", "e": 2}, "algorithm": ["proj-idea"],
           "params": {"alpha": 0.5, "theorem": 3}, "run": {"max_iters": 50, "out": str(tmp_path / "o")}}
    assert main(["run-config", _write(tmp_path, cfg)]) == EXIT_OK
    err = capsys.readouterr().err
    assert "do not satisfy theorem 3" in err and "'alpha': -" in err


@pytest.mark.parametrize("doc,needle", [
    ("{not json", "not valid JSON"),
    ({"case_id": 3}, "'algorithm' is a required property"),
    ({"case_id": 3, "algorithm": "idea", "params": {"alpha": -1}}, "params.alpha"),
    ({"case_id": 7, "algorithm": "idea"}, "case_id"),
    ({"case_id": 3, "algorithm": "idea", "run": {"max_iters": 0}}, "run.max_iters"),
    ({"case_id": 3, "algorithm": "idea", "colour": 1}, "colour"),
])
def test_run_config_malformed(tmp_path, capsys, doc, needle):
    out = tmp_path / "never"
    if isinstance(doc, dict):
        doc.setdefault("run", {})["out"] = str(out)
    rc = main(["run-config", _write(tmp_path, doc)])
    assert rc == EXIT_VALIDATION
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_run_config_instance_file(tmp_path):
    from coupledopt.problem import generate_case, save_instance
    save_instance(generate_case(4, 1), tmp_path / "inst.json")
    cfg = {"instance": "inst.json", "algorithm": "edea", "params": {"alpha": 3, "beta": 20, "delta": 0.001},
           "run": {"max_iters": 100, "record_every": 50, "out": str(tmp_path / "o")}}
    assert main(["run-config", _write(tmp_path, cfg)]) == EXIT_OK
    assert _csvs(tmp_path / "o") == ["custom_directed_cycle_edea.csv"]


def test_tune_reports(capsys):
    assert main(["tune", "2", "--theorem", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    for key in ("mu =", "l =", "sigma =", "eta2_hat =", "phi =", "alpha =", "beta =", "delta =", "margin[alpha]"):
        assert key in out
    assert main(["tune", "4", "--theorem", "4"]) == EXIT_OK
    assert "A_i = I detected" in capsys.readouterr().out
    assert main(["tune", "3", "--theorem", "6"]) == EXIT_OK


def test_tune_hypothesis_failures(capsys):
    assert main(["tune", "1", "--theorem", "2"]) == EXIT_VALIDATION
    assert "mu = 0" in capsys.readouterr().err
    assert main(["tune", "3", "--theorem", "4"]) == EXIT_VALIDATION
    assert "A_i = I" in capsys.readouterr().err


def test_tune_from_config(tmp_path, capsys):
    cfg = {"case_id": 3, "graph": {"kind": "exponential", "e": 4}, "algorithm": "proj-idea"}
    assert main(["tune", _write(tmp_path, cfg), "--theorem", "6"]) == EXIT_OK
    assert "exponential_e4" in capsys.readouterr().out
