import subprocess
import sys

import pytest

from rlfec.cli import main

FAST = ["--rounds", "2"]


def small_scenario(tmp_path, name="tiny"):
    p = tmp_path / f"{name}.cfg"
    p.write_text(f"[scenario]\nname = {name}\nfile_size = 3000000\nseed = 42\ntrain_seed = 7\n"
                 "train_rounds = 2\n[agent]\nhidden = 32\n")
    return str(p)


def test_unknown_flag_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["eval", "--out", "x", "--frobnicate"])
    assert ei.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_dump_config_lists_every_section(capsys):
    assert main(["dump-config"]) == 0
    out = capsys.readouterr().out
    for sec in ("[scenario]", "[loss]", "[link]", "[ltp]", "[fec]", "[policy]", "[agent]"):
        assert sec in out


def test_eval_requires_checkpoint_for_rl(tmp_path):
    with pytest.raises(SystemExit):
        main(["eval", "--scenario", small_scenario(tmp_path), "--policy", "rl", "--out", str(tmp_path / "o")])


def test_train_eval_report_round_trip(tmp_path, capsys):
    sc = small_scenario(tmp_path)
    run = tmp_path / "run"
    res = tmp_path / "res"
    assert main(["train", "--scenario", sc, "--out", str(run)] + FAST) == 0
    ck = run / "checkpoint.npz"
    assert ck.is_file() and (run / "tiny_reward_curve.csv").is_file()
    assert main(["eval", "--scenario", sc, "--policy", "rl", "--checkpoint", str(ck), "--out", str(res),
                 "--traces"] + FAST) == 0
    assert main(["eval", "--scenario", sc, "--policy", "feedback", "--out", str(res)] + FAST) == 0
    assert (res / "traces" / "rl_r001_decisions.csv").is_file()
    assert main(["report", "--in", str(res), "--out", str(tmp_path / "tables")]) == 0
    table = (tmp_path / "tables" / "summary.txt").read_text()
    assert "RL-Based" in table and "Feedback-Based" in table


def test_repeated_commands_are_byte_identical(tmp_path):
    sc = small_scenario(tmp_path)
    files = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        main(["train", "--scenario", sc, "--seed", "3", "--out", str(out)] + FAST)
        main(["eval", "--scenario", sc, "--policy", "rl", "--checkpoint", str(out / "checkpoint.npz"),
              "--seed", "11", "--out", str(out)] + FAST)
        files.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()})
    assert files[0] == files[1]


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "rlfec.cli", "dump-config", "--scenario", "moon_oracle"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "fixed_rc = 0.77" in r.stdout
