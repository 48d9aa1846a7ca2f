from __future__ import annotations

import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from onpg.cli import main
from onpg.config import build_env, build_run_config, parse_config
from onpg.env import dumps_env, load_env, make_random_tabular
from onpg.kvtext import ParseError
from onpg.rng import StreamRegistry

MINIMAL = """\
env.generator = random_tabular
env.S = 3
env.A = 2
env.H = 3
env.seed = 2
K = 6
N = 30
m = 2
eta = 0.05
num_seeds = 3
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_one_row_per_iteration_and_seed(tmp_path):
    out = tmp_path / "run.csv"
    assert main(["run", "--config", write(tmp_path, MINIMAL), "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out)
    assert rows[0] == ["k", "t_k", "vbar1", "vpik", "subopt", "mean_bonus_h1", "mean_bonus_h2", "mean_bonus_h3",
                       "opt_violations", "seed"]
    assert len(rows) - 1 == 6 * 3
    assert sorted({r[-1] for r in rows[1:]}) == ["0", "1", "2"]
    assert [int(r[0]) for r in rows[1:7]] == [1, 2, 3, 4, 5, 6]


def test_run_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--config", cfg, "--out", str(a), "--quiet"])
    main(["run", "--config", cfg, "--out", str(b), "--quiet"])
    assert a.read_bytes() == b.read_bytes()


def test_seed_override(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--config", cfg, "--out", str(a), "--quiet"])
    main(["run", "--config", cfg, "--out", str(b), "--quiet", "--seed", "100"])
    assert sorted({r[-1] for r in read_csv(b)[1:]}) == ["100", "101", "102"]
    assert a.read_bytes() != b.read_bytes()


def test_worker_pool_gives_identical_output(tmp_path, monkeypatch):
    cfg = write(tmp_path, MINIMAL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("ONPG_THREADS", "1")
    main(["run", "--config", cfg, "--out", str(a), "--quiet"])
    monkeypatch.setenv("ONPG_THREADS", "2")
    main(["run", "--config", cfg, "--out", str(b), "--quiet"])
    assert a.read_bytes() == b.read_bytes()


def test_unknown_key_exits_2_without_output(tmp_path, capsys):
    out = tmp_path / "never.csv"
    code = main(["run", "--config", write(tmp_path, MINIMAL + "colour = blue\n"), "--out", str(out)])
    assert code == 2
    assert not out.exists()
    assert "colour" in capsys.readouterr().err


@pytest.mark.parametrize(
    "extra, key",
    [
        ("sweep = N\ngrid[3] = 4 2 8\n", "grid"),
        ("sweep = N\n", "grid"),
        ("sweep = sideways\ngrid[1] = 3\n", "sweep"),
        ("ope = magic\n", "ope"),
        ("truncation = sometimes\n", "truncation"),
        ("record_invariants = 3\n", "record_invariants"),
    ],
)
def test_invalid_values_are_parse_errors(tmp_path, capsys, extra, key):
    assert main(["run", "--config", write(tmp_path, MINIMAL + extra)]) == 2
    assert key in capsys.readouterr().err


def test_num_seeds_must_be_positive(tmp_path):
    assert main(["run", "--config", write(tmp_path, MINIMAL.replace("num_seeds = 3", "num_seeds = 0"))]) == 2


def test_missing_required_key(tmp_path, capsys):
    assert main(["run", "--config", write(tmp_path, MINIMAL.replace("K = 6\n", ""))]) == 2
    assert "'K'" in capsys.readouterr().err


def test_unreadable_config_is_a_parse_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_runtime_error_exits_3(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert main(["run", "--config", write(tmp_path, MINIMAL.replace("N = 30", "N = 2")), "--out", str(out)]) == 3
    assert "N = 2" in capsys.readouterr().err
    assert not out.exists()


def test_missing_env_file_exits_3(tmp_path):
    text = "env.file = " + str(tmp_path / "missing.env") + "\nK = 1\nN = 3\nm = 1\neta = 0.1\n"
    assert main(["run", "--config", write(tmp_path, text)]) == 3


def test_gen_env_then_run_from_file(tmp_path):
    env_path = tmp_path / "model.env"
    assert main(["gen-env", "--config", write(tmp_path, MINIMAL), "--out", str(env_path)]) == 0
    env = load_env(env_path)
    assert (env.S, env.A, env.H) == (3, 2, 3)
    text = f"env.file = {env_path}\nK = 3\nN = 30\nm = 1\neta = 0.1\n"
    out = tmp_path / "r.csv"
    assert main(["run", "--config", write(tmp_path, text, "file.cfg"), "--out", str(out), "--quiet"]) == 0
    assert len(read_csv(out)) == 4


def test_generated_env_matches_builder(tmp_path):
    exp = parse_config(MINIMAL)
    env_path = tmp_path / "model.env"
    main(["gen-env", "--config", write(tmp_path, MINIMAL), "--out", str(env_path)])
    assert env_path.read_text() == dumps_env(build_env(exp.env))


def test_inline_environment():
    env = make_random_tabular(2, 2, 2, StreamRegistry(0).stream("inline"))
    text = "\n".join("env." + line if line and not line.startswith(" ") and "=" in line else line
                     for line in dumps_env(env).splitlines())
    exp = parse_config(text + "\nK = 2\nN = 4\nm = 1\neta = 0.1\n")
    built = build_env(exp.env)
    np.testing.assert_array_equal(built.P, env.P)


def test_epsilon_fills_schedule():
    exp = parse_config("env.generator = gap_tabular\nepsilon = 0.1\nc_N = 0.0003\nalpha_scale = 0.1\n")
    env = build_env(exp.env)
    rc = build_run_config(exp, env)
    assert (rc.K, rc.N, rc.m) == (8899, 3105, 30)
    assert rc.alpha_scale == 0.1


def test_sweep_rows_and_rate(tmp_path):
    text = MINIMAL.replace("num_seeds = 3", "num_seeds = 20").replace("K = 6", "K = 1")
    text += "alpha = 1.0\nsweep = N\ngrid[3] = 256 1024 4096\n"
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out)
    assert rows[0] == ["axis_value", "seed", "final_subopt", "mean_bonus_overall", "episodes_used"]
    body = rows[1:]
    assert len(body) == 60
    grid = [256, 1024, 4096]
    means = [np.mean([float(r[3]) for r in body if int(r[0]) == n]) for n in grid]
    slope = np.polyfit(np.log(grid), np.log(means), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_sweep_over_period_tracks_episode_ratio(tmp_path):
    text = MINIMAL.replace("K = 6", "K = 30").replace("num_seeds = 3", "num_seeds = 1")
    text = text.replace("eta = 0.05", "eta = 0.001") + "sweep = m\ngrid[2] = 1 30\n"
    out = tmp_path / "m.csv"
    assert main(["sweep", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == 0
    used = {int(r[0]): int(r[4]) for r in read_csv(out)[1:]}
    assert used[1] / used[30] == 30


def test_sweep_needs_axis(tmp_path):
    assert main(["sweep", "--config", write(tmp_path, MINIMAL)]) == 2


def test_general_evaluation_from_cli(tmp_path):
    text = MINIMAL.replace("random_tabular", "deterministic_tabular") + "ope = general\nclass.size = 5\n"
    out = tmp_path / "g.csv"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == 0
    assert all(r[-2] == "0" for r in read_csv(out)[1:])


def test_ope_flag_overrides_config(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--config", cfg, "--out", str(a), "--quiet"])
    main(["run", "--config", cfg, "--out", str(b), "--quiet", "--ope", "linear"])
    assert a.read_bytes() != b.read_bytes()


def test_check_rejects_unknown_keys(tmp_path):
    assert main(["check", "--config", write(tmp_path, "colour = 1\n")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "onpg", "run", "--config", write(tmp_path, MINIMAL), "--quiet"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert len(proc.stdout.strip().splitlines()) == 1 + 18


def test_check_passes_and_mutation_fails(tmp_path, capsys):
    report = tmp_path / "report.txt"
    assert main(["check", "--out", str(report), "--quiet"]) == 0
    text = report.read_text()
    assert text.count("[PASS]") == 9 and "[FAIL]" not in text
    line = next(x for x in text.splitlines() if "policy-difference" in x)
    assert float(line.split("= ")[1].split(" ")[0]) <= 1e-9

    assert main(["check", "--alpha-scale", "0.05", "--quiet"]) == 1
    out = capsys.readouterr().out
    bad = next(x for x in out.splitlines() if x.startswith("[FAIL] optimism (tabular)"))
    assert float(bad.split("= ")[1].split(" ")[0]) > 0.05
