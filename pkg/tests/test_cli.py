import json

import pytest

from fracminimax.cli import main


def run(tmp_path, *argv, config=None):
    args = list(argv)
    if config is not None:
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(config) if not isinstance(config, str) else config)
        args += ["--config", str(cfg)]
    out = tmp_path / "out"
    return main(args + ["--out", str(out)]), out


def report(out):
    return json.loads((out / "report.json").read_text())


def test_list_fixtures(capsys):
    assert main(["list-fixtures"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert {"drift", "nonlinear", "zero-hamiltonian", "norm-terminal"} <= set(data["results"]["fixtures"])


def test_level_count_echoed(tmp_path):
    code, out = run(tmp_path, "lyapunov-check", "--alpha", "0.3", "--grid-n", "200", config={"paths": 3})
    assert code == 0
    rep = report(out)
    assert rep["params"]["m"] == 2 and rep["params"]["alpha"] == 0.3
    assert (out / "timing.json").exists()


@pytest.mark.parametrize(
    "config",
    [
        "{not json",
        {"no_such_key": 1},
        {"alpha": 1.5},
        {"N": "many"},
        {"budget": {"J": 0}},
    ],
)
def test_bad_config_exits_2_and_writes_nothing(tmp_path, config):
    code, out = run(tmp_path, "stability", config=config)
    assert code == 2
    assert not out.exists()


def test_report_is_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    cfg = {"configs": 2, "N": 100, "budget": {"J": 3, "K": 3}}
    c1, o1 = run(a, "stability", "--seed", "4", config=cfg)
    c2, o2 = run(b, "stability", "--seed", "4", config=cfg)
    assert c1 == c2 == 0
    assert (o1 / "report.json").read_bytes() == (o2 / "report.json").read_bytes()


def test_memory_blind_on_trap_history_fails(tmp_path):
    cfg = {"candidate": "memory-blind", "history": "trap", "configs": 1, "eps": 1e-3, "budget": {"J": 4, "K": 3}}
    code, out = run(tmp_path, "stability", config=cfg)
    assert code == 1
    rep = report(out)
    assert rep["passed"] is False


def test_candidate_expression(tmp_path):
    expr = tmp_path / "cand.txt"
    expr.write_text("w[-1] * 0 + 1.0\n")
    cfg = {"candidate_file": str(expr), "configs": 1, "fixture": "zero-hamiltonian", "s": [0.0], "N": 60,
           "budget": {"J": 2, "K": 2}}
    code, _ = run(tmp_path, "stability", config=cfg)
    assert code == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["fracops", "--grid-n", "400"],
        ["metric", "--grid-n", "100", "--seed", "1"],
        ["characteristics", "--grid-n", "100"],
        ["value", "--grid-n", "60"],
        ["witness", "--grid-n", "100"],
        ["verify", "--suite", "pathspace"],
    ],
)
def test_subcommands_pass(tmp_path, argv):
    code, out = run(tmp_path, *argv)
    assert code == 0
    assert report(out)["passed"] is True


def test_characteristics_writes_csv(tmp_path):
    code, out = run(tmp_path, "characteristics", "--grid-n", "50")
    assert code == 0
    csvs = list(out.glob("*.csv"))
    assert csvs and csvs[0].read_text().startswith("t,")


def test_unknown_suite(tmp_path):
    code, out = run(tmp_path, "verify", "--suite", "nope")
    assert code == 2 and not out.exists()
