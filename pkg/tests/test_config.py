"""Tests for scenario loading and validation."""
import math
from pathlib import Path

import numpy as np
import pytest

from sduscb import config
from sduscb.channel import UserKinematics
from sduscb.config import ScenarioConfig, load_scenario
from sduscb.errors import ScenarioError

DATA = Path(__file__).resolve().parent.parent / "data"


class TestLoadScenario:
    """Test suite for TOML scenario files."""

    def test_desk_scenario(self):
        scenario = load_scenario(DATA / "desk_scenario.toml")
        assert scenario.network.n_cells == 3
        assert scenario.network.users_per_cell == 10
        assert scenario.network.d_range == (20.0, 80.0), "arrays are frozen to tuples"
        assert scenario.scheduler.cap == 4
        assert scenario.scheduler.t_s == 5

    def test_tiny_scenario_tables(self):
        scenario = load_scenario(DATA / "tiny_ckm.toml")
        assert scenario.bench.n_tx == (8, 16)
        assert scenario.theorem1.s_sizes == (2,)

    def test_defaults_without_file(self):
        scenario = load_scenario()
        assert scenario.network.power == pytest.approx(10 ** 3.6 / 1000)
        assert scenario.sensing_config().kappa == pytest.approx(math.sqrt(32 * 16))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "nope.toml")

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[network\nn_tx = 8\n")
        with pytest.raises(ScenarioError):
            load_scenario(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "typo.toml"
        path.write_text("[network]\nn_txx = 8\n")
        with pytest.raises(ScenarioError, match="n_txx"):
            load_scenario(path)

    def test_unknown_table(self):
        with pytest.raises(ScenarioError):
            ScenarioConfig.from_dict({"radio": {}})

    def test_overrides(self):
        scenario = load_scenario(DATA / "desk_scenario.toml",
                                 {"simulation": {"seed": 9}, "solver": {"baseline": "slinr"}})
        assert scenario.simulation.seed == 9
        assert scenario.solver_config().leakage == "slinr"
        with pytest.raises(ScenarioError):
            scenario.with_overrides({"simulation": {"sead": 1}})


class TestValidate:
    """Test suite for scenario validation."""

    @pytest.mark.parametrize("overrides", [
        {"network": {"t_d": 0.02}},
        {"network": {"t_d": 0.03}},
        {"network": {"bs_positions": []}},
        {"network": {"boresights": [0.0]}},
        {"network": {"backhaul": [[0, 0]]}},
        {"network": {"psi_max": 2.0}},
        {"scheduler": {"variant": "round-robin"}},
        {"solver": {"baseline": "mmse"}},
        {"simulation": {"csi_source": "genie"}},
        {"simulation": {"epochs": -1}},
        {"sensing": {"c_bar": 0.0}},
        {"sensing": {"a_theta": -0.1}},
        {"ckm": {"n_beams": 4}},
    ])
    def test_rejects(self, overrides):
        with pytest.raises(ScenarioError):
            ScenarioConfig().with_overrides(overrides).validate()

    def test_defaults_are_valid(self):
        assert ScenarioConfig().validate() is not None

    def test_round_trip_dict(self):
        scenario = load_scenario(DATA / "tiny_ckm.toml")
        again = ScenarioConfig.from_dict(scenario.to_dict())
        assert again == scenario


class TestLibraryViews:
    """Test suite for the library objects a scenario builds."""

    def test_boresights_face_centroid(self):
        scenario = ScenarioConfig.from_dict({"network": {"bs_positions": [[0.0, 0.0], [60.0, 0.0]]}})
        a, b = scenario.base_stations()
        assert a.boresight == pytest.approx(0.0)
        assert abs(b.boresight) == pytest.approx(math.pi)

    def test_single_cell_faces_y(self):
        scenario = ScenarioConfig.from_dict({"network": {"bs_positions": [[0.0, 0.0]]}})
        assert scenario.base_stations()[0].boresight == pytest.approx(math.pi / 2)

    def test_users_in_front_of_serving_bs(self):
        scenario = load_scenario(DATA / "desk_scenario.toml")
        cells = scenario.place_users(np.random.default_rng(0))
        bss = scenario.base_stations()
        assert len(cells) == 3
        for bs, users in zip(bss, cells):
            assert len(users) == 10
            for kin in users:
                d, psi = bs.relative(kin.position)
                assert 20.0 - 1e-9 <= d <= 80.0 + 1e-9
                assert abs(psi) <= scenario.network.psi_max + 1e-9

    def test_tracks_stay_in_front_for_long_runs(self):
        scenario = load_scenario(DATA / "tiny_ckm.toml", {"simulation": {"epochs": 500}})
        cells = scenario.place_users(np.random.default_rng(3))
        scenario.check_tracks(cells)
        for bs, users in zip(scenario.base_stations(), cells):
            for kin in users:
                assert kin.stays_visible(bs, scenario.track_duration)

    def test_track_leaving_the_array_rejected(self):
        scenario = load_scenario(DATA / "tiny_ckm.toml", {"simulation": {"epochs": 150}})
        # BS 0 faces +x; this user walks straight at it from 25 m.
        leaving = UserKinematics((25.0, 0.0), speed=20.0, heading=math.pi)
        staying = UserKinematics((25.0, 0.0), speed=20.0, heading=0.0)
        other = UserKinematics((35.0, 0.0), speed=20.0, heading=math.pi)
        scenario.check_tracks([[staying], [other]])
        with pytest.raises(ScenarioError, match="leaves the front"):
            scenario.check_tracks([[leaving], [other]])

    def test_library_configs(self):
        scenario = load_scenario(DATA / "desk_scenario.toml")
        assert scenario.channel_config().alpha0 == pytest.approx(1e-6)
        assert scenario.ckm_config().grid.n_bins == 64
        assert scenario.solver_config().leakage == "salinr"

    def test_process_settings(self):
        assert config.THREADS >= 1
        assert set(config.LEAKAGE_FOR_BASELINE) == set(config.BASELINES)
