import json

import pytest

from ncl.cli import main


@pytest.fixture(autouse=True)
def pinned_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def run(*args):
    try:
        return main([str(a) for a in args])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


def test_rates_outputs(tmp_path):
    assert run("rates", "--measure", "beta:0.5", "--bmax", 30, "--kernel-c", 1, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "rates_report.json").read_text())
    assert rep["max_recursion_violation"] <= 1e-12
    assert rep["manifest"]["timestamp"] == "2023-11-14T22:13:20Z"
    lines = (tmp_path / "rates.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest: ") and lines[1].startswith("b,lambda_b,k2")
    assert (tmp_path / "kernel.csv").exists()


def test_solve_and_codes(tmp_path):
    assert run("solve", "--measure", "beta:0.5", "--c", 1, "--n", 128, "--out", tmp_path) == 0
    out = json.loads((tmp_path / "solve.json").read_text())
    assert out["converged"] and len(out["p"]) == 128
    assert out["diagnostics"]["pgf_residual_max"] < 1e-8
    assert run("solve", "--measure", "beta:0.5", "--c", 3, "--assert-finite-mean",
               "--out", tmp_path) == 3
    assert run("solve", "--measure", "beta:0.5", "--c", 3, "--max-iter", 10, "--n", 64,
               "--out", tmp_path / "x") == 5
    assert run("solve", "--measure", "beta:0.5", "--out", tmp_path) == 2
    assert run("solve", "--measure", "nonsense", "--c", 1, "--out", tmp_path) == 2


def test_infinity_encoded_as_string(tmp_path):
    m = '{"kind":"atomic","atoms":[[1,0.3],[0.5,0.7]]}'
    assert run("solve", "--measure", m, "--c", 0.5, "--from", "inf", "--n", 64, "--out", tmp_path) == 0
    out = json.loads((tmp_path / "solve.json").read_text())
    assert out["mean"] == "inf" and abs(out["p_inf"] - 0.4) < 1e-8


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"measure": "beta:0.5", "c": 1, "n": 64}))
    assert run("solve", "--config", cfg, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "solve.json").read_text())["N"] == 64
    assert run("solve", "--config", cfg, "--n", 32, "--out", tmp_path) == 0  # flag wins
    assert json.loads((tmp_path / "solve.json").read_text())["N"] == 32
    cfg.write_text(json.dumps({"measure": "beta:0.5", "c": 1, "bogus": 2}))
    assert run("solve", "--config", cfg, "--out", tmp_path) == 2


def test_simulate_reference_mismatch(tmp_path):
    assert run("solve", "--measure", "beta:0.5", "--c", 1, "--n", 64, "--out", tmp_path) == 0
    ref = tmp_path / "solve.json"
    assert run("simulate", "--measure", "beta:0.5", "--c", 2, "--s", 10, "--reps", 10,
               "--compare-to", ref, "--out", tmp_path) == 4
    assert run("simulate", "--measure", "beta:0.5", "--c", 1, "--s", "10,20", "--reps", 50,
               "--compare-to", ref, "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "simulate.json").read_text())
    assert set(summary["tv_by_s"]) == {"10", "20"}
    assert (tmp_path / "simulate_s20.csv").exists()


def test_sibuya_modes(tmp_path):
    assert run("sibuya", "--gamma-only", "--alpha", 0.5, "--nmax", 100000, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "gamma.json").read_text())["relative_error"] < 0.01
    assert run("sibuya", "--measure", "beta:0.5", "--c", 1.5, "--out", tmp_path) == 3
    assert run("sibuya", "--measure", "beta:0.5", "--c", 1, "--a", 0.125, "--eps", 0.4,
               "--k", 2, "--out", tmp_path) == 0


@pytest.mark.parametrize("args", [
    ("rates", "--measure", "beta:0.5", "--bmax", 20),
    ("solve", "--measure", "beta:0.5", "--c", 1, "--n", 64),
    ("simulate", "--measure", "beta:0.5", "--c", 1, "--s", 30, "--reps", 200, "--seed", 4),
    ("sibuya", "--gamma-only", "--alpha", 0.3, "--nmax", 1000),
])
def test_reruns_are_byte_identical(tmp_path, args):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*args, "--out", a) == 0
    assert run(*args, "--out", b) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir()) and names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
