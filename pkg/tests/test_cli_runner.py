import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nsteady import cli_runner
from nsteady.cli_runner import (
    EXIT_CONFIG,
    EXIT_GUARD,
    EXIT_NONCONVERGENCE,
    EXIT_OK,
    EXIT_PRECONDITION,
    EXIT_USAGE,
    ConfigError,
    load_config,
    run,
)
from nsteady.snapshot import read_snapshot
from nsteady.spectral_core import fft_workers

SHIPPED = Path(cli_runner.__file__).with_name("configs") / "theorem2_annulus.cfg"

# frozen from a reference run of ``nsteady solve`` on the shipped config
GOLDEN_NORMS = {
    ("U", "weak(3)"): 2.45888544425704,
    ("U", "lebesgue(2)"): 7.219022313144963,
    ("U0", "weak(3)"): 2.5176907756123352,
    ("U0", "lebesgue(2)"): 7.1030352829625425,
    ("force", "weak(3)"): 8.659933144616595,
    ("force", "lebesgue(2)"): 23.136381228187197,
}
GOLDEN_PICARD = {"iterations": 20, "contraction_rate": 0.33990945585997934, "max_growth": 1.014407612566358}

SMALL = """
[run]
name = small
[grid]
n = 16
L = 10.0
[force]
kind = fourier_annulus
amplitude = {amp}
k_inner = 0.7
k_outer = 2.0
[solver]
max_iters = {iters}
tol_rel = 1e-10
{extra}
"""


def write_cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def small_cfg(tmp_path, amp=1.0, iters=40, extra=""):
    return write_cfg(tmp_path, SMALL.format(amp=amp, iters=iters, extra=extra))


@pytest.fixture(scope="module")
def golden_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("golden")
    outs = []
    for i in range(2):
        out = base / f"r{i}"
        assert run(["solve", "--config", str(SHIPPED), "--output", str(out)]) == EXIT_OK
        outs.append(out)
    return outs


class TestConfig:
    def test_shipped_loads(self):
        cfg = load_config(SHIPPED)
        assert cfg.grid.n == 64 and cfg.seed == 1

    def test_seed_override(self):
        assert load_config(SHIPPED, seed=99).seed == 99

    @pytest.mark.parametrize(
        "text",
        [
            "[grid\nn=16",
            "[grid]\nn = 16\nL = 10\n",
            "[grid]\nn = 16\nL = 10\n[force]\nkind = fourier_annulus\nbogus = 1\n",
            "[grid]\nn = sixteen\nL = 10\n[force]\nkind = dirac\n",
            "[grid]\nn = 16\nL = 10\n[force]\nkind = dirac\n[weird]\na = 1\n",
            "[grid]\nn = 16\nL = 10\n[force]\nkind = nonsense\n",
        ],
    )
    def test_malformed(self, tmp_path, text):
        with pytest.raises(ConfigError):
            load_config(write_cfg(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


class TestExitCodes:
    @pytest.mark.parametrize("text", ["[grid\n", "[grid]\nn = 16\nL = 10\n[force]\nkind = dirac\nextra = 2\n"])
    def test_config_error_leaves_nothing(self, tmp_path, text):
        out = tmp_path / "out"
        assert run(["solve", "--config", write_cfg(tmp_path, text), "--output", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    def test_precondition_at_load(self, tmp_path):
        out = tmp_path / "out"
        text = Path(small_cfg(tmp_path)).read_text().replace("k_outer = 2.0", "k_outer = 50.0")
        code = run(["solve", "--config", write_cfg(tmp_path, text, "p.cfg"), "--output", str(out)])
        assert code == EXIT_PRECONDITION and not out.exists()

    def test_nonconvergence(self, tmp_path):
        out = tmp_path / "out"
        code = run(["solve", "--config", small_cfg(tmp_path, amp=1.0, iters=2), "--output", str(out)])
        assert code == EXIT_NONCONVERGENCE
        m = json.loads((out / "manifest.json").read_text())
        assert m["status"] == "error" and m["error"]["exit_code"] == EXIT_NONCONVERGENCE

    def test_zero_force(self, tmp_path):
        out = tmp_path / "out"
        text = SMALL.format(amp=1.0, iters=40, extra="").replace("fourier_annulus", "zero")
        cfg = write_cfg(tmp_path, text.replace("k_inner = 0.7\nk_outer = 2.0\n", ""))
        assert run(["solve", "--config", cfg, "--output", str(out)]) == EXIT_OK
        m = json.loads((out / "manifest.json").read_text())
        assert m["status"] == "ok" and all(r["value"] == 0.0 for r in m["norms"])
        assert run(["analyze", "--config", cfg, "--output", str(tmp_path / "a")]) == EXIT_GUARD

    @pytest.mark.parametrize(
        "argv",
        [[], ["bogus"], ["solve"], ["solve", "--config", "x.cfg", "--seed", str(2**64)], ["solve", "--config", "x", "--seed", "-1"]],
    )
    def test_usage(self, argv):
        assert run(argv) == EXIT_USAGE

    def test_unknown_experiment(self, tmp_path):
        assert run(["experiment", "nope", "--output", str(tmp_path / "e")]) == EXIT_USAGE
        assert not (tmp_path / "e").exists()

    def test_console_script(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "nsteady.cli_runner", "solve", "--config", str(tmp_path / "missing.cfg")],
            capture_output=True, text=True,
        )
        assert proc.returncode == EXIT_CONFIG and "config error" in proc.stderr


class TestArtifacts:
    def test_golden_values(self, golden_runs):
        m = json.loads((golden_runs[0] / "manifest.json").read_text())
        got = {(r["field"], r["space"]): r["value"] for r in m["norms"]}
        for key, ref in GOLDEN_NORMS.items():
            assert got[key] == pytest.approx(ref, rel=1e-9), key
        assert got[("residual", "lebesgue(2)")] <= 1e-9
        pic = m["results"]["picard"]
        assert pic["converged"] and pic["iterations"] == GOLDEN_PICARD["iterations"]
        for k in ("contraction_rate", "max_growth"):
            assert pic[k] == pytest.approx(GOLDEN_PICARD[k], rel=1e-6)

    def test_bit_identical_reruns(self, golden_runs):
        a, b = golden_runs
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        for name in ("U.nsf1", "U0.nsf1", "force.nsf1", "picard_trace.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_manifest_contents(self, golden_runs):
        out = golden_runs[0]
        m = json.loads((out / "manifest.json").read_text())
        assert m["format_version"] == 1 and m["command"] == "solve"
        assert set(m["versions"]) >= {"nsteady", "numpy", "scipy", "python"}
        assert "wall" not in json.dumps(m) and "seconds" not in json.dumps(m)
        assert set(m["artifacts"]) == {"U.nsf1", "U0.nsf1", "force.nsf1", "picard_trace.csv"}
        t = json.loads((out / "timings.json").read_text())
        assert t and all(v >= 0 for v in _flatten_numbers(t))
        assert not list(out.glob("*.tmp"))

    def test_snapshot_fields(self, golden_runs):
        U = read_snapshot(golden_runs[0] / "U.nsf1")
        assert U.grid.n == 64 and U.hermitian_defect() <= 1e-12

    def test_seed_changes_hash(self, tmp_path):
        cfg = small_cfg(tmp_path)
        run(["solve", "--config", cfg, "--output", str(tmp_path / "a"), "--seed", "1"])
        run(["solve", "--config", cfg, "--output", str(tmp_path / "b"), "--seed", "2"])
        ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["run_hash"]
        hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["run_hash"]
        assert ha != hb

    def test_chained_custom_snapshot(self, tmp_path):
        first = tmp_path / "first"
        assert run(["solve", "--config", small_cfg(tmp_path), "--output", str(first)]) == EXIT_OK
        text = SMALL.format(amp=1.0, iters=40, extra="").replace(
            "kind = fourier_annulus", f"kind = custom_snapshot\npath = {first / 'force.nsf1'}"
        ).replace("k_inner = 0.7\nk_outer = 2.0\n", "")
        second = tmp_path / "second"
        assert run(["solve", "--config", write_cfg(tmp_path, text, "chain.cfg"), "--output", str(second)]) == EXIT_OK
        a = read_snapshot(first / "U.nsf1").coeffs
        b = read_snapshot(second / "U.nsf1").coeffs
        assert np.abs(a - b).max() <= 1e-13 * np.abs(a).max()

    def test_missing_snapshot_is_precondition(self, tmp_path):
        text = SMALL.format(amp=1.0, iters=40, extra="").replace(
            "kind = fourier_annulus", f"kind = custom_snapshot\npath = {tmp_path / 'none.nsf1'}"
        ).replace("k_inner = 0.7\nk_outer = 2.0\n", "")
        assert run(["solve", "--config", write_cfg(tmp_path, text), "--output", str(tmp_path / "o")]) == EXIT_PRECONDITION

    def test_norms_and_evolve(self, tmp_path):
        extra = "[evolution]\ndt = 0.1\nt_final = 0.3\nsnapshot_times = 0.1, 0.3\nsave_snapshots = true\n"
        cfg = small_cfg(tmp_path, extra=extra)
        assert run(["norms", "--config", cfg, "--output", str(tmp_path / "n")]) == EXIT_OK
        rows = (tmp_path / "n" / "norms.csv").read_text().splitlines()
        assert rows[0] == "field,space,p,q,value" and len(rows) > 5
        assert run(["evolve", "--config", cfg, "--output", str(tmp_path / "e")]) == EXIT_OK
        e = tmp_path / "e"
        assert (e / "trajectory.csv").exists() and len(list(e.glob("snapshot_*.nsf1"))) == 2


class TestThreads:
    def test_cap(self, monkeypatch):
        monkeypatch.setenv("NSTEADY_THREADS", "1")
        assert fft_workers() == 1
        monkeypatch.setenv("NSTEADY_THREADS", "100000")
        assert fft_workers() == (os.cpu_count() or 1)
        monkeypatch.delenv("NSTEADY_THREADS")
        assert fft_workers() == (os.cpu_count() or 1)

    def test_thread_count_does_not_change_results(self, tmp_path, monkeypatch, golden_runs):
        monkeypatch.setenv("NSTEADY_THREADS", "1")
        out = tmp_path / "t1"
        assert run(["solve", "--config", str(SHIPPED), "--output", str(out)]) == EXIT_OK
        assert (out / "U.nsf1").read_bytes() == (golden_runs[0] / "U.nsf1").read_bytes()


def _flatten_numbers(obj):
    if isinstance(obj, dict):
        for v in obj.values():
            yield from _flatten_numbers(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _flatten_numbers(v)
    elif isinstance(obj, (int, float)):
        yield obj
