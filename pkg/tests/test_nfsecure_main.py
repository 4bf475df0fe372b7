import os

import pandas as pd
import pytest

from conftest import SHIPPED_CONFIG
import nfsecure_main
from nfsecure_main import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, EXIT_SOLVER, exit_code_for, main


def _status_line(out):
    lines = [l for l in out.splitlines() if l.startswith("STATUS ")]
    assert len(lines) == 1
    return lines[0]


def test_exit_codes():
    assert exit_code_for("optimal") == EXIT_OK
    assert exit_code_for("infeasible") == EXIT_INFEASIBLE
    assert exit_code_for("not_converged") == EXIT_SOLVER
    assert exit_code_for("solver_failure") == EXIT_SOLVER


def test_unknown_mode(tmp_path, capsys):
    code = main(["--config", SHIPPED_CONFIG, "--mode", "train", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "exit=4" in _status_line(capsys.readouterr().out)


def test_missing_config(tmp_path, capsys):
    code = main(["--config", str(tmp_path / "missing.toml")])
    assert code == EXIT_CONFIG
    assert "status=config_error" in _status_line(capsys.readouterr().out)


def test_range_outside_pareto_mode(tmp_path, capsys):
    code = main(["--config", SHIPPED_CONFIG, "--mode", "gbd", "--gamma1", "0:2", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "key=gamma1" in _status_line(capsys.readouterr().out)


def test_overrides_take_precedence():
    args = nfsecure_main.build_parser().parse_args(
        ["--mode", "pareto", "--gamma1", "0:2", "--gamma2", "0.1,0.5", "--seed", "9", "--workers", "2"])
    run = nfsecure_main.ConfigManager(SHIPPED_CONFIG).build_run_config()
    run = nfsecure_main.apply_overrides(run, args)
    assert run.mode == "pareto"
    assert run.gamma1_range == [0, 1, 2]
    assert run.gamma2_range == [0.1, 0.5]
    assert run.seed == 9 and run.workers == 2


@pytest.mark.slow
def test_gbd_run_writes_design(tmp_path, capsys):
    code = main(["--config", SHIPPED_CONFIG, "--mode", "gbd", "--gamma1", "1", "--gamma2", "0.15",
                 "--seed", "0", "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_INFEASIBLE)
    line = _status_line(capsys.readouterr().out)
    assert f"exit={code}" in line
    design = pd.read_csv(os.path.join(str(tmp_path), "gbd_seed0_g1-1_g2-0.15.csv"))
    assert design.loc[0, 'mode'] == "gbd"
    assert os.path.exists(os.path.join(str(tmp_path), "gbd_trace_seed0_g1-1_g2-0.15.csv"))


@pytest.mark.slow
def test_same_seed_same_bytes(tmp_path):
    args = ["--config", SHIPPED_CONFIG, "--mode", "episode", "--policy", "correlation_baseline",
            "--gamma1", "1", "--slots", "2", "--seed", "3"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    name = "episode_seed3_g1-1_g2-0.15.csv"
    with open(tmp_path / "a" / name, 'rb') as first, open(tmp_path / "b" / name, 'rb') as second:
        assert first.read() == second.read()
