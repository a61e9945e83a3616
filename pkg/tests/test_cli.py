"""Tests for the sd-uscb command line."""
import csv
import hashlib
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from sduscb import cli
from sduscb.cli import build_parser, main, sweep_trends

DATA = Path(__file__).resolve().parent.parent / "data"
TINY = str(DATA / "tiny_ckm.toml")
DESK = str(DATA / "desk_scenario.toml")


def _run(tmp_path, *argv):
    return main([argv[0], *argv[1:], "--report-dir", str(tmp_path / "reports")])


class TestParser:
    """Test suite for argument handling and exit codes."""

    def test_no_command_lists_commands_and_fails(self, capsys):
        assert main([]) == 2
        captured = capsys.readouterr()
        assert "error: usage: a command is required" in captured.err
        out = captured.out
        for cmd in ("build-ckm", "simulate", "verify-theorem1", "bench-bf", "sweep"):
            assert cmd in out

    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        assert _run(tmp_path, "simulate", "--out", str(tmp_path)) == 2
        assert "error: usage:" in capsys.readouterr().err

    def test_unknown_baseline(self, tmp_path):
        assert _run(tmp_path, "simulate", "--config", TINY, "--baseline", "mmse") == 2
        assert _run(tmp_path, "sweep", "--config", TINY, "--baselines", "sd-uscb,mmse") == 2

    def test_bad_scenario_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[network]\nt_d = 0.5\n")
        assert _run(tmp_path, "simulate", "--config", str(bad), "--out", str(tmp_path)) == 2
        assert "invalid-scenario" in capsys.readouterr().err

    def test_zero_draws(self, tmp_path, capsys):
        assert _run(tmp_path, "verify-theorem1", "--draws", "0", "--out", str(tmp_path)) == 2
        assert "invalid-theorem-input" in capsys.readouterr().err

    def test_sweep_defaults(self):
        args = build_parser().parse_args(["sweep", "--config", TINY])
        assert args.seeds == 5
        assert args.c_bars == [0.01, 1.0, 10.0]


class TestCommands:
    """Test suite for each command on the tiny scenario."""

    def test_simulate(self, tmp_path):
        out = tmp_path / "sim"
        assert _run(tmp_path, "simulate", "--config", TINY, "--out", str(out)) == 0
        assert (out / "trace.csv").is_file()
        assert json.loads((out / "summary.json").read_text())["epochs"] == 2
        assert (out / "pfr_curve.csv").is_file()
        assert list((tmp_path / "reports").glob("sd-uscb_simulate_*.md"))

    def test_simulate_overrides(self, tmp_path):
        out = tmp_path / "sim"
        assert _run(tmp_path, "simulate", "--config", TINY, "--out", str(out), "--epochs", "1",
                    "--baseline", "zero-leakage", "--sensing-threshold", "5") == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["epochs"] == 1
        assert summary["baseline"] == "zero-leakage"
        assert summary["c_bar"] == 5.0

    def test_build_ckm_is_reproducible(self, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert _run(tmp_path, "build-ckm", "--config", TINY, "--out", str(out)) == 0
            files = sorted(out.glob("ckm_bs*.bin"))
            assert len(files) == 2
            digests.append([hashlib.sha256(f.read_bytes()).hexdigest() for f in files])
            report = json.loads((out / "ckm_report.json").read_text())
            assert [r["bs"] for r in report] == [0, 1]
        assert digests[0] == digests[1]

    def test_verify_theorem1(self, tmp_path):
        assert _run(tmp_path, "verify-theorem1", "--M", "4", "--s", "2", "3",
                    "--draws", "500", "--out", str(tmp_path)) == 0
        result = json.loads((tmp_path / "theorem1.json").read_text())
        assert [c["s_size"] for c in result["configurations"]] == [2, 3]
        for c in result["configurations"]:
            assert c["bounds_hold"] is True
            assert isinstance(c["salinr_tighter"], bool)
            assert isinstance(c["mean_abs_err_salinr"], float)

    def test_verify_theorem1_violated_bounds_exit_nonzero(self, tmp_path, monkeypatch, capsys):
        real = cli.theorem1_mc

        def zero_bound(*args, **kwargs):
            return replace(real(*args, **kwargs), bound_salinr=0.0)

        monkeypatch.setattr(cli, "theorem1_mc", zero_bound)
        assert _run(tmp_path, "verify-theorem1", "--M", "4", "--s", "2",
                    "--draws", "200", "--out", str(tmp_path)) == 1
        assert "error: bounds-violated" in capsys.readouterr().err
        result = json.loads((tmp_path / "theorem1.json").read_text())
        assert result["configurations"][0]["bounds_hold"] is False

    def test_bench_bf(self, tmp_path):
        assert _run(tmp_path, "bench-bf", "--config", TINY, "--out", str(tmp_path)) == 0
        with open(tmp_path / "timing.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 4
        assert {r["woodbury"] for r in rows} == {"0", "1"}
        assert all(float(r["rel_diff"]) < 1e-8 for r in rows)

    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep"
        assert _run(tmp_path, "sweep", "--config", TINY, "--out", str(out), "--seeds", "1",
                    "--epochs", "1") == 0
        with open(out / "sweep.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 5
        assert {r["baseline"] for r in rows} == {"sd-uscb", "zero-leakage", "slinr"}
        assert "trends" in json.loads((out / "sweep_summary.json").read_text())


class TestSweepTrends:
    """Test suite for the per-seed comparison."""

    def test_counts_wins(self):
        rows = [
            dict(seed=0, baseline="sd-uscb", c_bar=1.0, mean_pfr=2.0, median_pfr=2.0),
            dict(seed=0, baseline="sd-uscb", c_bar=10.0, mean_pfr=1.0, median_pfr=3.0),
            dict(seed=0, baseline="zero-leakage", c_bar=1.0, mean_pfr=1.5, median_pfr=1.5),
            dict(seed=1, baseline="sd-uscb", c_bar=1.0, mean_pfr=1.0, median_pfr=1.0),
            dict(seed=1, baseline="zero-leakage", c_bar=1.0, mean_pfr=1.5, median_pfr=1.5),
        ]
        trends = sweep_trends(rows)
        assert trends["seeds"] == 2
        assert trends["sd_uscb_wins"] == {"zero-leakage": 1}
        assert trends["best_c_bar_by_median"] == {"10.0": 1}

    def test_unmatched_c_bar_not_counted(self):
        rows = [
            dict(seed=0, baseline="sd-uscb", c_bar=1.0, mean_pfr=2.0, median_pfr=2.0),
            dict(seed=0, baseline="slinr", c_bar=5.0, mean_pfr=0.1, median_pfr=0.1),
        ]
        assert sweep_trends(rows)["sd_uscb_wins"] == {}

    def test_empty(self):
        assert sweep_trends([])["seeds"] == 0


@pytest.mark.slow
class TestDeskSweep:
    """Five-seed sweep on the three-cell desk scenario."""

    def test_salinr_beats_both_baselines(self, tmp_path):
        out = tmp_path / "desk"
        assert _run(tmp_path, "sweep", "--config", DESK, "--seeds", "5", "--out", str(out)) == 0
        trends = json.loads((out / "sweep_summary.json").read_text())["trends"]
        assert trends["seeds"] == 5
        wins = trends["sd_uscb_wins"]
        assert wins["zero-leakage"] >= 4, f"SD-USCB beat zero-leakage on {wins['zero-leakage']}/5 seeds"
        assert wins["slinr"] >= 4, f"SD-USCB beat SLINR on {wins['slinr']}/5 seeds"
        # The c_bar trend is reported for inspection only.
        assert sum(trends["best_c_bar_by_median"].values()) == 5


@pytest.mark.slow
class TestBenchScaling:
    """Per-user update cost when N_t doubles from 32 to 64."""

    @staticmethod
    def _per_user(n_tx, rounds=3):
        best = {}
        for r in range(rounds):
            for row in cli.bench_update(n_tx, 32, 50, np.random.default_rng(r)):
                key = bool(row["woodbury"])
                best[key] = min(best.get(key, math.inf), row["per_user_s"])
        return best

    def test_woodbury_scales_quadratically(self):
        small, large = self._per_user(32), self._per_user(64)
        woodbury = large[True] / small[True]
        direct = large[False] / small[False]
        assert woodbury <= 5.0, f"Woodbury ratio {woodbury:.2f}"
        assert direct >= 6.0, f"direct ratio {direct:.2f}"
