import os
import subprocess
import sys

import pytest

from fujitalab.cli import run_cli
from fujitalab.config import KEYS, ConfigError, parse_config, read_pairs

SMALL = ["--L", "200", "--cells", "801"]


def write(path, text):
    path.write_text(text)
    return str(path)


def csvs(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f.endswith(".csv")}


def test_exponent_example(tmp_path, capsys):
    out = tmp_path / "exp"
    code = run_cli(["exponent", "--p", "2", "--q", "2", "--r", "0", "--s", "0", "--N", "1",
                    "--alpha", "0", "--case", "A", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "verdict = NoGlobal" in text and "gamma1 = 1.0" in text
    assert sorted(os.listdir(out)) == ["exponents.csv", "fujita_curve.csv", "manifest.cfg"]


def test_missing_pq_invariant(tmp_path, capsys):
    cfg = write(tmp_path / "run.cfg", "p = 0.5\nq = 1.5\n")
    assert run_cli(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "pq > 1" in err and "run.cfg:1" in err
    assert not (tmp_path / "o").exists()


def test_missing_required_key(tmp_path, capsys):
    cfg = write(tmp_path / "run.cfg", "# only p\np=2\n")
    assert run_cli(["simulate", "--config", cfg]) == 2
    assert "missing required key 'q'" in capsys.readouterr().err


def test_duplicate_key_names_line(tmp_path):
    cfg = write(tmp_path / "dup.cfg", "p=2\nq=2\n\np=3\n")
    with pytest.raises(ConfigError, match=r"dup.cfg:4: duplicate key 'p' \(first set on line 1\)"):
        read_pairs(cfg)
    assert run_cli(["exponent", "--config", cfg]) == 2


def test_alpha_out_of_range_case_b(tmp_path, capsys):
    cfg = write(tmp_path / "b.cfg", "p=2\nq=2\nalpha=1.5\ncase=B\n")
    assert run_cli(["exponent", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "condition (B)" in err and "[0, 1)" in err and "b.cfg:3" in err


@pytest.mark.parametrize("text,fragment", [
    ("p=2\nq=2\nbogus=1\n", "unknown key 'bogus'"),
    ("p=2\nq=2\njust words\n", "expected key=value"),
    ("p=two\nq=2\n", "bad value for 'p'"),
    ("p=2\nq=2\ncells=400\n", "cells must be odd"),
    ("p=2\nq=2\nN=3\n", "N in {1, 2}"),
    ("p=2\nq=2\nr=-1\n", "r > -1"),
])
def test_config_errors(tmp_path, text, fragment):
    cfg = write(tmp_path / "c.cfg", text)
    with pytest.raises(ConfigError, match=fragment.replace("(", r"\(").replace("{", r"\{")):
        parse_config(cfg, "simulate")


def test_minimal_file_gets_defaults(tmp_path):
    cfg = parse_config(write(tmp_path / "m.cfg", "p=2\nq=2\n"), "simulate")
    for key, (_, default, _) in KEYS.items():
        if key not in ("p", "q", "command"):
            assert cfg[key] == default
    manifest = cfg.manifest()
    assert all(f"\n{k}=" in manifest for k in KEYS)


def test_unknown_subcommand(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run_cli([]) == 2


def test_runtime_failure_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "small"
    code = run_cli(["smallness", "--p", "4", "--q", "4", "--L", "50", "--cells", "201",
                    "--T_max", "1", "--samples_per_decade", "2", "--c_start", "1",
                    "--max_expand", "1", "--out", str(out)])
    assert code == 1
    assert "no Global verdict" in capsys.readouterr().err
    assert not out.exists()
    assert [p for p in tmp_path.iterdir() if p.name.startswith(".fujitalab")] == []


def test_simulate_outputs_and_manifest_roundtrip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--p", "2", "--q", "2", "--scale", "1", "--T_max", "100",
            "--dump_snapshots", "true"] + SMALL
    assert run_cli(args + ["--out", str(a)]) == 0
    files = set(os.listdir(a))
    assert {"manifest.cfg", "trajectory.csv", "verdict.csv", "plot_norms.csv",
            "necessary_condition.csv", "snapshots"} <= files
    verdict = (a / "verdict.csv").read_text()
    assert "verdict,Blowup" in verdict
    assert run_cli(["simulate", "--config", str(a / "manifest.cfg"), "--out", str(b)]) == 0
    assert csvs(a) == csvs(b)
    assert csvs(a / "snapshots") == csvs(b / "snapshots")
    ma = (a / "manifest.cfg").read_text().replace(str(a), "X")
    mb = (b / "manifest.cfg").read_text().replace(str(b), "X")
    assert ma == mb


def test_rerun_overwrites_directory(tmp_path):
    out = tmp_path / "o"
    for p in ("2", "3"):
        assert run_cli(["exponent", "--p", p, "--q", "2", "--out", str(out)]) == 0
    assert "p=3.0" in (out / "manifest.cfg").read_text()


def test_sweep_config(tmp_path):
    cfg = write(tmp_path / "sweep.cfg",
                "p_values = 2, 4\nq_values = 4\nscales = 0.05, 1\nL = 500\ncells = 1001\nT_max = 300\n")
    out = tmp_path / "sw"
    assert run_cli(["sweep", "--config", cfg, "--out", str(out)]) == 0
    assert {"manifest.cfg", "sweep.csv", "sweep_plot.csv", "fujita_curve.csv",
            "sweep_summary.csv"} <= set(os.listdir(out))
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    assert rows[0].startswith("p,q,r,s,alpha,N,scale,verdict,t_blowup")


def test_empty_sweep_succeeds(tmp_path):
    out = tmp_path / "e"
    assert run_cli(["sweep", "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text().count("\n") == 1


def test_kernel_probe_and_picard(tmp_path):
    k = tmp_path / "k"
    assert run_cli(["kernel-probe", "--L", "10", "--cells", "401", "--probe_steps", "100",
                    "--out", str(k)]) == 0
    header = (k / "kernel_plot.csv").read_text().splitlines()[0]
    assert header == "t,sup_norm,predicted_slope_line"
    pc = tmp_path / "pc"
    assert run_cli(["picard", "--p", "2", "--q", "2", "--scale", "1", "--L", "20", "--cells", "201",
                    "--out", str(pc)]) == 0
    summary = (pc / "picard_summary.csv").read_text()
    assert "status,Converged" in summary and "monotone,true" in summary


def test_smallness_success(tmp_path):
    out = tmp_path / "s"
    assert run_cli(["smallness", "--p", "4", "--q", "4", "--shape", "gaussian", "--bisections", "2",
                    "--out", str(out)]) == 0
    assert "ok,true" in (out / "smallness.csv").read_text()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fujitalab", "exponent", "--p", "4", "--q", "4",
                          "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0 and "GlobalPossible" in res.stdout
