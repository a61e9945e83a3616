"""Tests for the self-contained demo."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'demo'))
from run_demo import ckm_cell, leakage_check, main, short_simulation


class TestLeakageCheck:
    """Test suite for the SALINR vs SLINR demo step."""

    def test_deterministic_output(self):
        """Same seed should produce identical results."""
        assert leakage_check(n_draws=2000) == leakage_check(n_draws=2000)

    def test_default_draw_count(self):
        assert leakage_check()["draws"] == 20000

    def test_verdict(self):
        result = leakage_check(n_draws=5000)
        assert result["verdict"] in ("SALINR TIGHTER", "SLINR TIGHTER")
        assert float(result["salinr_error"]) >= 0.0


class TestCkmCell:
    """Test suite for the one-cell CKM demo step."""

    def test_support_near_user(self):
        cell = ckm_cell(n_tx=16)
        assert 1 <= cell["paths"] <= 4
        nearest = min(abs(float(s) - float(cell["user_angle"])) for s in cell["support"])
        assert nearest < 20.0, f"no recovered path near the user direction {cell['user_angle']}"


class TestShortSimulation:
    """Test suite for the two-cell demo run."""

    def test_pfr_curve_length(self):
        summary = short_simulation(epochs=2)
        assert len(summary["pfr_curve"]) == 2
        assert summary["bytes_locations"] > 0

    def test_main_returns_zero(self, capsys):
        assert main() == 0
        assert "Demo complete" in capsys.readouterr().out
