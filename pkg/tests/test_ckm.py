"""Tests for channel knowledge map construction, recovery and storage."""
import hashlib

import numpy as np
import pytest

from sduscb import ckm
from sduscb.channel import (
    BaseStation,
    ChannelGenConfig,
    InterCellGeometry,
    UserKinematics,
    gen_inter_channel,
    inter_paths,
    steer,
)
from sduscb.errors import CkmFormatError, CkmVersionError, CoverageError, SdUscbError
from sduscb.simulator import noise_from_channels

P_T = 10 ** 3.6 / 1000


def _separated_bins(rng, n_bins, count, gap):
    while True:
        bins = np.sort(rng.choice(n_bins, size=count, replace=False))
        if np.all(np.diff(bins) >= gap):
            return bins


def _tiny_map(threads=1, seed=0):
    cfg = ChannelGenConfig(n_tx=8)
    bs = BaseStation((0.0, 0.0))
    geometry = InterCellGeometry.draw(cfg, np.random.default_rng(1))

    def oracle(xy, rng):
        return gen_inter_channel(UserKinematics((float(xy[0]), float(xy[1]))), bs, cfg, rng, geometry)

    ckm_cfg = ckm.CkmConfig(n_beams=16, grid=ckm.AngularGrid(n_bins=32), n_measurements=3)
    return ckm.build_with_report(bs, (10.0, 14.0, 30.0, 34.0), 1.0, oracle, ckm_cfg,
                                 n_tx=8, seed=seed, threads=threads)


class TestCodebook:
    """Test suite for the DFT codebook and RSRP model."""

    def test_unit_norm_columns(self):
        cb = ckm.dft_codebook(8, 16)
        assert cb.W.shape == (8, 16)
        assert np.allclose(np.linalg.norm(cb.W, axis=0), 1.0)

    def test_too_few_beams(self):
        with pytest.raises(SdUscbError):
            ckm.dft_codebook(8, 4)

    def test_rsrp_matches_sensing_matrix_on_grid(self):
        grid = ckm.AngularGrid(n_bins=64)
        cb = ckm.dft_codebook(16, 32)
        M = ckm.sensing_matrix(grid, cb, P_T)
        h = np.sqrt(2.5e-7) * np.exp(1j * 0.7) * steer(grid.centers[10], 16)
        r = ckm.measure_rsrp(h, cb, P_T, 0.0, np.random.default_rng(0))
        assert np.allclose(r, 2.5e-7 * M[:, 10], rtol=1e-10, atol=0)

    def test_noisy_rsrp_is_nonnegative(self):
        cb = ckm.dft_codebook(8, 16)
        r = ckm.measure_rsrp(np.zeros(8), cb, P_T, 1.0, np.random.default_rng(0))
        assert np.all(r >= 0.0)

    def test_noise_power_adds_a_floor(self):
        cb = ckm.dft_codebook(8, 16)
        h = np.sqrt(1e-9) * steer(0.3, 8)
        clean = ckm.measure_rsrp(h, cb, P_T, 0.0, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        noisy = np.mean([ckm.measure_rsrp(h, cb, P_T, 1e-11, rng) for _ in range(20000)], axis=0)
        assert np.allclose(noisy, clean + 1e-11 / np.sqrt(8), rtol=0.05, atol=0)

    def test_negative_noise_rejected(self):
        with pytest.raises(SdUscbError):
            ckm.measure_rsrp(np.zeros(8), ckm.dft_codebook(8, 16), P_T, -1.0, np.random.default_rng(0))


class TestRecoverAps:
    """Test suite for greedy nonnegative OLS recovery."""

    def test_exact_recovery_on_grid(self):
        rng = np.random.default_rng(2024)
        grid = ckm.AngularGrid(n_bins=128)
        cb = ckm.dft_codebook(32, 64)
        M = ckm.sensing_matrix(grid, cb, P_T)
        for trial in range(100):
            n_p = int(rng.integers(1, 5))
            bins = _separated_bins(rng, grid.n_bins, n_p, 24)
            x = np.zeros(grid.n_bins)
            x[bins] = rng.uniform(0.5, 1.0, size=n_p)
            aps = ckm.recover_aps(M @ x, grid, cb, 4, P_T, matrix=M)
            assert set(aps.support) == set(bins), f"trial {trial}: support {aps.support} != {bins}"
            err = np.max(np.abs(aps.values[bins] - x[bins]) / x[bins])
            assert err <= 1e-6, f"trial {trial}: amplitude error {err}"

    def test_support_never_exceeds_paths(self):
        rng = np.random.default_rng(3)
        grid = ckm.AngularGrid(n_bins=64)
        cb = ckm.dft_codebook(8, 16)
        aps = ckm.recover_aps(rng.uniform(0, 1, size=16), grid, cb, 2, P_T)
        assert len(aps.support) <= 2

    def test_zero_rsrp_gives_empty_aps(self):
        grid = ckm.AngularGrid(n_bins=32)
        cb = ckm.dft_codebook(8, 16)
        aps = ckm.recover_aps(np.zeros(16), grid, cb, 4, P_T)
        assert not np.any(aps.values)

    def test_wrong_length_rejected(self):
        grid = ckm.AngularGrid(n_bins=32)
        cb = ckm.dft_codebook(8, 16)
        with pytest.raises(SdUscbError):
            ckm.recover_aps(np.ones(15), grid, cb, 4, P_T)

    def test_reconstruct_single_bin(self):
        grid = ckm.AngularGrid(n_bins=16)
        values = np.zeros(16)
        values[5] = 4.0
        h = ckm.reconstruct(ckm.ApsVector(values), grid, 8)
        assert np.allclose(h, 2.0 * steer(grid.centers[5], 8))

    @pytest.mark.parametrize("calibrated", [False, True])
    def test_noisy_cells_match_expected_aps(self, calibrated):
        """Averaged RSRP of spatially consistent channels recovers the cluster direction."""
        rng = np.random.default_rng(11)
        cfg = ChannelGenConfig(n_tx=32)
        bs = BaseStation((0.0, 0.0))
        grid = ckm.AngularGrid(n_bins=128)
        cb = ckm.dft_codebook(32, 64)
        M = ckm.sensing_matrix(grid, cb, P_T)
        sims = []
        for _ in range(100):
            geometry = InterCellGeometry.draw(cfg, rng)
            kin = UserKinematics(tuple(bs.point_at(rng.uniform(30, 80), rng.uniform(-0.7, 0.7))))
            draws = [gen_inter_channel(kin, bs, cfg, rng, geometry) for _ in range(20)]
            # Receiver noise at the 15 dB SNR target of the simulator.
            noise = noise_from_channels([[np.stack(draws, axis=1)]], P_T, 32, 15.0) if calibrated else 0.0
            r_bar = np.mean([ckm.measure_rsrp(h, cb, P_T, noise, rng) for h in draws], axis=0)
            h_hat = ckm.reconstruct(ckm.recover_aps(r_bar, grid, cb, 4, P_T, matrix=M), grid, 32)
            truth = sum(np.sqrt(p.gain) * steer(p.aod, 32) for p in inter_paths(kin, bs, cfg, rng, geometry))
            sims.append(abs(h_hat.conj() @ truth) / (np.linalg.norm(h_hat) * np.linalg.norm(truth)))
        assert np.median(sims) >= 0.9, f"median cosine similarity {np.median(sims):.3f}"


class TestSpatialGrid:
    """Test suite for map cells and coverage."""

    def test_from_area(self):
        g = ckm.SpatialGrid.from_area((0.0, 4.0, 0.0, 2.0), 0.4)
        assert g.shape == (10, 5)

    def test_locate_and_clamp(self):
        g = ckm.SpatialGrid.from_area((0.0, 4.0, 0.0, 4.0), 1.0)
        assert g.locate((0.5, 3.5)) == (0, 3)
        assert g.locate((4.0, 4.0)) == (3, 3), "upper boundary belongs to the last cell"

    def test_outside_raises(self):
        g = ckm.SpatialGrid.from_area((0.0, 4.0, 0.0, 4.0), 1.0)
        with pytest.raises(CoverageError):
            g.locate((4.5, 1.0))

    def test_cells_near(self):
        g = ckm.SpatialGrid.from_area((0.0, 10.0, 0.0, 10.0), 1.0)
        cells = g.cells_near([(5.0, 5.0)], 1.0)
        assert (4, 4) in cells and (5, 5) in cells
        assert (0, 0) not in cells


class TestCkmMap:
    """Test suite for building, querying and storing maps."""

    def test_tiny_build(self):
        m, report = _tiny_map()
        assert len(m) == 16
        assert report.summary()["n_cells"] == 16
        h = m.query((11.2, 32.9))
        assert h.shape == (8,)
        assert m.aps_at((11.2, 32.9)).values.shape == (32,)

    def test_thread_count_does_not_change_result(self):
        m1, _ = _tiny_map(threads=1)
        m4, _ = _tiny_map(threads=4)
        assert np.array_equal(m1.channels, m4.channels)

    def test_unpopulated_cell_raises(self):
        cfg = ChannelGenConfig(n_tx=8)
        bs = BaseStation((0.0, 0.0))
        m = ckm.build(bs, (0.0, 3.0, 20.0, 23.0), 1.0,
                      lambda xy, rng: gen_inter_channel(UserKinematics(tuple(xy)), bs, cfg, rng),
                      ckm.CkmConfig(n_beams=8, grid=ckm.AngularGrid(n_bins=16), n_measurements=1),
                      n_tx=8, cells=[(0, 0)])
        assert len(m) == 1
        with pytest.raises(CoverageError):
            m.query((2.5, 22.5))

    def test_arrays_are_read_only(self):
        m, _ = _tiny_map()
        with pytest.raises(ValueError):
            m.channels[0, 0] = 0.0

    def test_save_load(self, tmp_path):
        m, _ = _tiny_map()
        path = ckm.save(m, tmp_path / "map.bin")
        loaded = ckm.load(path)
        assert np.array_equal(loaded.channels, m.channels)
        assert np.array_equal(loaded.aps, m.aps)
        assert np.array_equal(loaded.query((11.2, 32.9)), m.query((11.2, 32.9)))
        assert loaded.bs == m.bs

    def test_same_seed_same_file(self, tmp_path):
        a = ckm.save(_tiny_map(seed=3)[0], tmp_path / "a.bin").read_bytes()
        b = ckm.save(_tiny_map(seed=3)[0], tmp_path / "b.bin").read_bytes()
        assert hashlib.sha256(a).hexdigest() == hashlib.sha256(b).hexdigest()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOT-A-CKM-FILE")
        with pytest.raises(CkmFormatError):
            ckm.load(path)

    def test_version_mismatch(self, tmp_path):
        m, _ = _tiny_map()
        data = bytearray(ckm.save(m, tmp_path / "map.bin").read_bytes())
        data[len(ckm.MAGIC)] = ckm.FORMAT_VERSION + 1
        (tmp_path / "v2.bin").write_bytes(bytes(data))
        with pytest.raises(CkmVersionError):
            ckm.load(tmp_path / "v2.bin")

    def test_truncated(self, tmp_path):
        m, _ = _tiny_map()
        data = ckm.save(m, tmp_path / "map.bin").read_bytes()
        (tmp_path / "cut.bin").write_bytes(data[:-5])
        with pytest.raises(CkmFormatError):
            ckm.load(tmp_path / "cut.bin")
