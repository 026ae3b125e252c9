import csv
import json
import os
import subprocess
import sys

import pytest

from hypokit.cli import main

SUBCOMMANDS = ["certificate", "exact", "pde", "langevin", "verify-ops"]


def run_cli(*args, env=None):
    full_env = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "hypokit.cli", *args], capture_output=True, text=True, env=full_env)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_exits_zero(sub):
    r = run_cli(sub, "--help")
    assert r.returncode == 0
    assert "--out" in r.stdout


def test_top_level_help():
    r = run_cli("--help")
    assert r.returncode == 0
    for sub in SUBCOMMANDS:
        assert sub in r.stdout


@pytest.mark.parametrize(
    "args",
    [
        ["certificate", "--big-m", "1"],
        ["certificate", "--k", "1", "--big-m", "1", "--bogus"],
        ["exact"],
        ["pde", "--potential", "cubic"],
        ["langevin", "--beta", "1"],
    ],
)
def test_invalid_flags_exit_two(args, tmp_path):
    r = run_cli(*args, "--out", str(tmp_path))
    assert r.returncode == 2


def test_certificate_outputs(tmp_path, capsys):
    assert main(["certificate", "--k", "2", "--big-m", "1", "--kappa", "1", "--out", str(tmp_path)]) == 0
    hyp = json.loads((tmp_path / "hypocoercivity_certificate.json").read_text())
    her = json.loads((tmp_path / "herau_certificate.json").read_text())
    assert len(hyp["levels"]) == 2 and len(her["levels"]) == 2
    m = manifest(tmp_path)
    assert m["status"] == "ok" and m["subcommand"] == "certificate"
    assert m["parameters"]["k"] == 2
    assert {"version", "git_describe", "wall_time", "artifacts", "rng"} <= set(m)


def test_parameter_error_exits_two_with_manifest(tmp_path):
    assert main(["certificate", "--k", "1", "--big-m", "0.5", "--kappa", "1", "--out", str(tmp_path)]) == 2
    assert manifest(tmp_path)["status"] == "invalid"


def test_jordan_case_rejected(tmp_path):
    assert main(["exact", "--omega0", "0.5", "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_one_json(tmp_path):
    r = run_cli("verify-ops", "--k", "1", "--n", "64", "--n-tests", "1", "--tol", "1e-30", "--out", str(tmp_path))
    assert r.returncode == 1
    err = json.loads(r.stderr.strip().splitlines()[-1])
    assert {"error", "message"} <= set(err)
    assert manifest(tmp_path)["status"] == "failed"


def test_exact_covariance_csv(tmp_path):
    assert main(["exact", "--omega0", "1", "--t-max", "1", "--n-times", "5", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "covariance.csv").open()))
    assert len(rows) == 6


def test_langevin_determinism(tmp_path):
    args = ["langevin", "--beta", "0.3", "--coupling", "1", "--particles", "16", "--replicas", "8", "--seed", "7", "--t-final", "2"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert (a / "magnetization.csv").read_bytes() == (b / "magnetization.csv").read_bytes()


def test_threads_env(tmp_path):
    r = run_cli("certificate", "--k", "0", "--big-m", "1", "--out", str(tmp_path), env={"HYPOKIT_THREADS": "1"})
    assert r.returncode == 0
    assert manifest(tmp_path)["threads"] == "1"
    r = run_cli("certificate", "--k", "0", "--big-m", "1", "--out", str(tmp_path), env={"HYPOKIT_THREADS": "many"})
    assert r.returncode == 2


@pytest.mark.slow
def test_pde_pipeline(tmp_path):
    assert main(["pde", "--potential", "doublewell", "--beta", "1", "--k", "1", "--t-final", "2", "--n-x", "64", "--n-v", "64", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["rate_ok"]
    assert (tmp_path / "norms.csv").exists()
