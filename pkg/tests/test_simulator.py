"""Tests for the epoch loop, backhaul accounting and output files."""
import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from sduscb import simulator
from sduscb.config import load_scenario
from sduscb.errors import SdUscbError

DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def tiny():
    return load_scenario(DATA / "tiny_ckm.toml")


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestNoiseCalibration:
    """Test suite for sigma_c^2 from the SNR target."""

    def test_plugs_back_into_snr(self):
        rng = np.random.default_rng(0)
        channels = [[rng.normal(size=(8, 3)) + 0j for _ in range(2)] for _ in range(2)]
        sigma2 = simulator.noise_from_channels(channels, 4.0, 8, 15.0)
        mean_gain = np.mean([np.sum(np.abs(H) ** 2, axis=0) for row in channels for H in row])
        assert 4.0 * mean_gain / (8 * sigma2) == pytest.approx(10 ** 1.5)

    def test_scales_with_channel_power(self):
        rng = np.random.default_rng(1)
        channels = [[rng.normal(size=(4, 2)) + 0j]]
        doubled = [[2 * channels[0][0]]]
        a = simulator.noise_from_channels(channels, 1.0, 4, 10.0)
        assert simulator.noise_from_channels(doubled, 1.0, 4, 10.0) == pytest.approx(4 * a)

    def test_zero_channels_raise(self):
        with pytest.raises(SdUscbError):
            simulator.noise_from_channels([[np.zeros((4, 2), dtype=complex)]], 1.0, 4, 10.0)

    def test_rsrp_noise_is_calibrated_noise_power(self, tiny):
        state = simulator.prepare(tiny.with_overrides({"simulation": {"csi_source": "oracle"}}))
        assert tiny.ckm.noisy
        assert simulator.rsrp_noise(state) == state.sigma_c2
        quiet = simulator.prepare(tiny.with_overrides({"simulation": {"csi_source": "oracle"},
                                                       "ckm": {"noisy": False}}))
        assert simulator.rsrp_noise(quiet) == 0.0

    def test_calibrate_from_scenario(self, tiny):
        assert simulator.calibrate_noise(tiny, np.random.default_rng(2)) > 0.0


class TestBackhaul:
    """Test suite for the backhaul graph and byte accounting."""

    def test_full_mesh(self):
        g = simulator.backhaul_graph(3)
        assert g.number_of_edges() == 3
        assert all(d["bytes"] == 0 for _, _, d in g.edges(data=True))

    def test_explicit_links(self):
        g = simulator.backhaul_graph(3, [(0, 1)])
        assert list(g.neighbors(2)) == []
        assert g.has_edge(1, 0)

    def test_csi_bytes(self):
        assert simulator.bytes_per_csi(32) == 512
        assert simulator.BYTES_PER_LOCATION / simulator.bytes_per_csi(32) == pytest.approx(1 / 32)


class TestRun:
    """Test suite for full runs of small scenarios."""

    def test_tiny_run_writes_outputs(self, tiny, tmp_path):
        result = simulator.run(tiny)
        paths = simulator.write_outputs(result, tmp_path)
        rows = _rows(paths["trace"])
        assert len(rows) == tiny.simulation.epochs * 2 * tiny.network.users_per_cell
        assert list(rows[0]) == list(simulator.TRACE_COLUMNS)
        summary = json.loads(paths["summary"].read_text())
        assert summary["epochs"] == 2
        assert len(summary["pfr_curve"]) == 2
        assert len(_rows(paths["pfr_curve"])) == 2

    def test_same_seed_same_trace(self, tiny, tmp_path):
        a = simulator.write_trace(simulator.run(tiny).traces, tmp_path / "a.csv").read_bytes()
        b = simulator.write_trace(simulator.run(tiny, threads=2).traces, tmp_path / "b.csv").read_bytes()
        assert a == b

    def test_rates_only_for_scheduled_users(self, tiny):
        for t in simulator.run(tiny).traces:
            for l, rates in enumerate(t.rates):
                idle = [u for u in range(len(rates)) if u not in t.schedules[l]]
                assert not np.any(rates[idle])

    def test_zero_epochs(self, tiny, tmp_path):
        result = simulator.run(tiny.with_overrides({"simulation": {"epochs": 0}}))
        assert result.traces == []
        assert result.summary["final_pfr"] is None
        paths = simulator.write_outputs(result, tmp_path)
        assert _rows(paths["trace"]) == []

    def test_location_overhead_is_one_over_antennas(self, tiny):
        result = simulator.run(tiny)
        first = result.traces[0]
        assert first.bytes_locations > 0
        assert first.overhead_ratio == pytest.approx(1 / tiny.network.n_tx)
        assert result.summary["overhead_ratio"] == pytest.approx(1 / tiny.network.n_tx)
        assert math.isnan(result.traces[-1].overhead_ratio), "nothing is sent after the last epoch"

    def test_single_cell_sends_nothing(self, tiny):
        single = tiny.with_overrides({"network": {"bs_positions": [[0.0, 0.0]]}}).validate()
        result = simulator.run(single)
        assert result.summary["bytes_locations"] == 0
        assert result.summary["overhead_ratio"] is None

    def test_oracle_csi(self, tiny):
        result = simulator.run(tiny.with_overrides({"simulation": {"csi_source": "oracle"}}))
        assert result.summary["ckm_misses"] == 0
        assert result.summary["csi_source"] == "oracle"

    def test_long_mobility_run_keeps_users_visible(self, tiny):
        sc = tiny.with_overrides({"simulation": {"epochs": 150, "csi_source": "oracle"}})
        result = simulator.run(sc)
        assert len(result.traces) == 150
        bss = sc.base_stations()
        for t in (result.traces[0], result.traces[-1]):
            for bs, positions in zip(bss, t.positions):
                for xy in positions:
                    assert abs(bs.relative(xy)[1]) < math.pi / 2

    def test_fixed_scheduler_keeps_first_set(self, tiny):
        sc = tiny.with_overrides({"scheduler": {"variant": "fixed"}, "simulation": {"epochs": 3}})
        traces = simulator.run(sc).traces
        assert all(t.schedules == traces[0].schedules for t in traces)

    def test_schedule_all(self, tiny):
        sc = tiny.with_overrides({"scheduler": {"variant": "all"}})
        for t in simulator.run(sc).traces:
            assert all(len(s) == 2 for s in t.schedules)

    def test_rate_record_matches_trace(self, tiny):
        for t in simulator.run(tiny).traces:
            record = t.rate_record
            assert record.epoch == t.epoch
            assert record.pfr == pytest.approx(t.pfr)
            assert record.rates.size == sum(len(r) for r in t.rates)

    def test_link_bytes_add_up(self, tiny):
        result = simulator.run(tiny)
        assert sum(result.summary["link_bytes"].values()) == result.summary["bytes_locations"]


class TestCausality:
    """Test suite for the one-epoch design delay."""

    def test_design_ignores_future_channels(self, tiny):
        state = simulator.bootstrap(simulator.prepare(tiny))
        state, _ = simulator.run_epoch(state, 1)
        other = simulator.clone(state)
        other.rngs["channel"] = np.random.default_rng(12345)

        state, trace_a = simulator.run_epoch(state, 2, last=True)
        other, trace_b = simulator.run_epoch(other, 2, last=True)
        assert trace_a.schedules == trace_b.schedules
        assert all(np.array_equal(a, b) for a, b in zip(state.beamformers, other.beamformers))
        assert not all(np.array_equal(a, b) for a, b in zip(trace_a.rates, trace_b.rates))

    def test_clone_is_independent(self, tiny):
        state = simulator.bootstrap(simulator.prepare(tiny))
        other = simulator.clone(state)
        simulator.run_epoch(other, 1)
        assert state.pf[0].epochs == 0


@pytest.mark.slow
class TestDeskTrends:
    """Longer runs on the three-cell desk scenario."""

    @pytest.fixture
    def desk(self):
        return load_scenario(DATA / "desk_scenario.toml")

    def test_all_baselines_run(self, desk):
        for baseline in ("sd-uscb", "zero-leakage", "slinr"):
            result = simulator.run(desk.with_overrides({"solver": {"baseline": baseline}}))
            assert np.isfinite(result.summary["final_pfr"])
            assert result.summary["overhead_ratio"] == pytest.approx(1 / desk.network.n_tx)

    def test_pfr_grows_once_everyone_is_served(self, desk):
        curve = simulator.run(desk).summary["pfr_curve"]
        assert curve[-1] > curve[0]

    def test_sensed_locations_are_finite(self, desk):
        result = simulator.run(desk)
        assert np.isfinite(result.summary["mean_location_error_m"])
        assert result.summary["sensing_failures"] == 0
