"""
Scenario configuration.

Defaults live here as module constants; environment variables (and a
``.env`` file, through python-dotenv) override the process-level ones, and
TOML scenario files override the per-run tables. Every scenario goes through
``ScenarioConfig.validate()`` before anything runs.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from .beamforming import SolverConfig
from .channel import ArrayGeometry, BaseStation, ChannelGenConfig, UserKinematics
from .ckm import AngularGrid, CkmConfig
from .errors import ScenarioError
from .sensing import SensingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

load_dotenv()

# --- Configuration ---
OUTPUT_DIR = Path(os.environ.get("SDUSCB_OUTPUT_DIR", "./out"))
REPORT_DIR = Path(os.environ.get("SDUSCB_REPORT_DIR", "./reports"))
THREADS = int(os.environ.get("SDUSCB_THREADS", "0")) or (os.cpu_count() or 1)
LOG_LEVEL = os.environ.get("SDUSCB_LOG_LEVEL", "INFO").upper()

BASELINES = ("sd-uscb", "zero-leakage", "slinr")
SCHEDULERS = ("pfzfg", "all", "fixed")
CSI_SOURCES = ("ckm", "oracle")

# Baseline name -> beamforming leakage mode.
LEAKAGE_FOR_BASELINE = {"sd-uscb": "salinr", "zero-leakage": "none", "slinr": "slinr"}


@dataclass(frozen=True)
class NetworkConfig:
    bs_positions: Tuple[Tuple[float, float], ...] = ((0.0, 0.0), (180.0, 0.0), (90.0, 155.9))
    # None points every array at the network centroid.
    boresights: Optional[Tuple[float, ...]] = None
    users_per_cell: int = 40
    n_tx: int = 32
    n_rx: int = 16
    power_dbm: float = 36.0
    f_c: float = 28e9
    dt: float = 0.020
    t_d: float = 0.005
    speed: float = 20.0
    # Users start at distance U(d_range) and broadside angle U(-psi_max, psi_max).
    d_range: Tuple[float, float] = (20.0, 80.0)
    psi_max: float = math.pi / 4
    # Backhaul links as BS index pairs; None is a full mesh.
    backhaul: Optional[Tuple[Tuple[int, int], ...]] = None

    @property
    def n_cells(self) -> int:
        return len(self.bs_positions)

    @property
    def power(self) -> float:
        """Per-BS power budget in watts."""
        return 10 ** (self.power_dbm / 10) / 1000


@dataclass(frozen=True)
class ChannelTable:
    alpha0_db: float = -60.0
    eta: float = 2.0
    n_paths: int = 4
    nlos_ratio_range: Tuple[float, float] = (4.0, 9.0)
    inter_aod_spread: float = 0.15
    # False redraws inter-cell AoDs uniformly every epoch.
    spatially_consistent: bool = True


@dataclass(frozen=True)
class SensingTable:
    a_tau: float = 6.7e-7
    a_mu: float = 0.1
    a_theta: float = 0.1
    gain: float = 10.0
    sigma_z2: float = 1e-5
    eta_rcs: float = 1.0
    c_bar: float = 1.0
    noise: bool = True


@dataclass(frozen=True)
class SchedulerTable:
    variant: str = "pfzfg"
    cap: int = 18
    t_s: int = 5
    r_init: float = 1e-3


@dataclass(frozen=True)
class SolverTable:
    baseline: str = "sd-uscb"
    max_outer: int = 25
    tol_outer: float = 1e-5
    max_inner: int = 200
    tol_inner: float = 1e-5
    step_lambda: float = 0.5
    step_mu: float = 0.5
    woodbury: bool = True


@dataclass(frozen=True)
class CkmTable:
    n_beams: int = 64
    n_bins: int = 128
    theta_min: float = -math.pi / 3
    theta_max: float = math.pi / 3
    cell_size: float = 0.4
    n_measurements: int = 20
    # Corridor half-width around each foreign track, in meters.
    margin: float = 2.0
    ckm_dir: str = ""
    noisy: bool = True


@dataclass(frozen=True)
class SimulationTable:
    epochs: int = 20
    seed: int = 0
    snr_target_db: float = 15.0
    csi_source: str = "ckm"
    csi_error_var: float = 0.0


@dataclass(frozen=True)
class BenchTable:
    n_tx: Tuple[int, ...] = (16, 32, 64, 128)
    n_users: int = 4
    repeats: int = 50


@dataclass(frozen=True)
class Theorem1Table:
    M: int = 20
    s_sizes: Tuple[int, ...] = (2, 5, 10)
    P: float = 1.0
    sigma_c2: float = 1.0
    draws: int = 100_000


TABLES = {
    "network": NetworkConfig,
    "channel": ChannelTable,
    "sensing": SensingTable,
    "scheduler": SchedulerTable,
    "solver": SolverTable,
    "ckm": CkmTable,
    "simulation": SimulationTable,
    "bench": BenchTable,
    "theorem1": Theorem1Table,
}


def _freeze(value):
    """TOML arrays become tuples so the tables stay hashable."""
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _table(cls, name: str, values: Mapping[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ScenarioError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    return cls(**{k: _freeze(v) for k, v in values.items()})


@dataclass(frozen=True)
class ScenarioConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    channel: ChannelTable = field(default_factory=ChannelTable)
    sensing: SensingTable = field(default_factory=SensingTable)
    scheduler: SchedulerTable = field(default_factory=SchedulerTable)
    solver: SolverTable = field(default_factory=SolverTable)
    ckm: CkmTable = field(default_factory=CkmTable)
    simulation: SimulationTable = field(default_factory=SimulationTable)
    bench: BenchTable = field(default_factory=BenchTable)
    theorem1: Theorem1Table = field(default_factory=Theorem1Table)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        unknown = sorted(set(data) - set(TABLES))
        if unknown:
            raise ScenarioError(f"unknown table(s): {', '.join(unknown)}")
        try:
            tables = {name: _table(TABLES[name], name, data.get(name, {})) for name in TABLES}
        except TypeError as e:
            raise ScenarioError(str(e)) from e
        return cls(**tables)

    def to_dict(self) -> Dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in TABLES}

    def with_overrides(self, overrides: Optional[Mapping[str, Mapping[str, Any]]]) -> "ScenarioConfig":
        """Replace individual keys, e.g. ``{"simulation": {"seed": 3}}``."""
        if not overrides:
            return self
        updated = {}
        for name, values in overrides.items():
            if name not in TABLES:
                raise ScenarioError(f"unknown table {name!r}")
            current = asdict(getattr(self, name))
            current.update(values)
            updated[name] = _table(TABLES[name], name, current)
        return replace(self, **updated)

    def validate(self) -> "ScenarioConfig":
        net, sim = self.network, self.simulation
        if net.n_cells < 1:
            raise ScenarioError("at least one base station is required")
        if net.boresights is not None and len(net.boresights) != net.n_cells:
            raise ScenarioError("one boresight per base station is required")
        if net.users_per_cell < 1 or net.n_tx < 1 or net.n_rx < 1:
            raise ScenarioError("users_per_cell, n_tx and n_rx must be positive")
        if not 0 <= net.t_d < net.dt:
            raise ScenarioError(f"backhaul delay t_d={net.t_d} must satisfy 0 <= t_d < dt={net.dt}")
        if net.f_c <= 0 or net.speed < 0:
            raise ScenarioError("f_c must be > 0 and speed >= 0")
        lo, hi = net.d_range
        if not 0 < lo <= hi:
            raise ScenarioError(f"bad d_range {net.d_range}")
        if not 0 <= net.psi_max < math.pi / 2:
            raise ScenarioError("psi_max must keep users in front of their serving array")
        if net.backhaul is not None:
            for a, b in net.backhaul:
                if not (0 <= a < net.n_cells and 0 <= b < net.n_cells) or a == b:
                    raise ScenarioError(f"bad backhaul link ({a}, {b})")
        if self.scheduler.cap < 1 or self.scheduler.t_s < 1 or self.scheduler.r_init <= 0:
            raise ScenarioError("cap and t_s must be >= 1 and r_init > 0")
        if self.scheduler.variant not in SCHEDULERS:
            raise ScenarioError(f"scheduler must be one of {SCHEDULERS}")
        if not self.sensing.c_bar > 0:
            raise ScenarioError(f"c_bar must be > 0, got {self.sensing.c_bar}")
        if self.solver.baseline not in BASELINES:
            raise ScenarioError(f"baseline must be one of {BASELINES}")
        if sim.epochs < 0:
            raise ScenarioError("epochs must be >= 0")
        if sim.csi_source not in CSI_SOURCES:
            raise ScenarioError(f"csi_source must be one of {CSI_SOURCES}")
        if sim.csi_error_var < 0:
            raise ScenarioError("csi_error_var must be >= 0")
        if self.ckm.n_beams < net.n_tx:
            raise ScenarioError(f"ckm.n_beams={self.ckm.n_beams} must be >= n_tx={net.n_tx}")
        if self.ckm.cell_size <= 0 or self.ckm.n_bins < 1 or self.ckm.n_measurements < 1:
            raise ScenarioError("ckm cell_size, n_bins and n_measurements must be positive")
        if self.channel.n_paths < 1:
            raise ScenarioError("channel.n_paths must be >= 1")
        # The library constructors carry the remaining range checks.
        try:
            self.channel_config()
            self.sensing_config()
            self.solver_config()
            self.ckm_config()
        except ScenarioError:
            raise
        except Exception as e:
            raise ScenarioError(str(e)) from e
        return self

    # --- library views ---

    def base_stations(self) -> Tuple[BaseStation, ...]:
        net = self.network
        pos = np.asarray(net.bs_positions, dtype=float)
        if net.boresights is not None:
            bores = net.boresights
        elif net.n_cells == 1:
            bores = (math.pi / 2,)
        else:
            centroid = pos.mean(axis=0)
            bores = tuple(math.atan2(*(centroid - p)[::-1]) for p in pos)
        return tuple(BaseStation((float(p[0]), float(p[1])), float(b)) for p, b in zip(pos, bores))

    def array(self) -> ArrayGeometry:
        return ArrayGeometry(self.network.n_tx, self.network.n_rx)

    def channel_config(self) -> ChannelGenConfig:
        ch = self.channel
        return ChannelGenConfig(
            n_tx=self.network.n_tx,
            alpha0=10 ** (ch.alpha0_db / 10),
            eta=ch.eta,
            n_paths=ch.n_paths,
            nlos_ratio_range=tuple(ch.nlos_ratio_range),
            inter_aod_spread=ch.inter_aod_spread,
        )

    def sensing_config(self) -> SensingConfig:
        s = self.sensing
        return SensingConfig.for_array(
            self.array(),
            a_tau=s.a_tau,
            a_mu=s.a_mu,
            a_theta=s.a_theta,
            gain=s.gain,
            sigma_z2=s.sigma_z2,
            eta_rcs=s.eta_rcs,
            f_c=self.network.f_c,
        )

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(
            max_outer=s.max_outer,
            tol_outer=s.tol_outer,
            max_inner=s.max_inner,
            tol_inner=s.tol_inner,
            step_lambda=s.step_lambda,
            step_mu=s.step_mu,
            woodbury=s.woodbury,
            leakage=LEAKAGE_FOR_BASELINE[s.baseline],
        )

    def ckm_config(self, noise_var: float = 0.0) -> CkmConfig:
        c = self.ckm
        return CkmConfig(
            n_beams=c.n_beams,
            grid=AngularGrid(c.theta_min, c.theta_max, c.n_bins),
            n_paths=self.channel.n_paths,
            n_measurements=c.n_measurements,
            p_t=self.network.power,
            noise_var=noise_var,
            cell_size=c.cell_size,
        )

    @property
    def track_duration(self) -> float:
        """Seconds between the first and the last epoch's positions."""
        return max(self.simulation.epochs - 1, 0) * self.network.dt

    def place_users(self, rng: np.random.Generator) -> Tuple[Tuple[UserKinematics, ...], ...]:
        """Initial positions and headings, per cell, in front of the serving BS.

        Headings are uniform over the directions whose straight track stays in
        front of the serving array for the whole run. Any heading with a
        nonnegative broadside component qualifies, so the redraw loop ends.
        """
        net = self.network
        duration = self.track_duration
        cells = []
        for bs in self.base_stations():
            users = []
            for _ in range(net.users_per_cell):
                d = float(rng.uniform(*net.d_range))
                psi = float(rng.uniform(-net.psi_max, net.psi_max))
                xy = bs.point_at(d, psi)
                while True:
                    heading = float(rng.uniform(-math.pi, math.pi))
                    kin = UserKinematics((float(xy[0]), float(xy[1])), net.speed, heading)
                    if kin.stays_visible(bs, duration):
                        break
                users.append(kin)
            cells.append(tuple(users))
        return tuple(cells)

    def check_tracks(self, users) -> None:
        """Reject user tracks that leave the front of their serving array during the run."""
        duration = self.track_duration
        for l, (bs, cell) in enumerate(zip(self.base_stations(), users)):
            for u, kin in enumerate(cell):
                if not kin.stays_visible(bs, duration):
                    raise ScenarioError(
                        f"user {u} of cell {l} leaves the front of its array within "
                        f"{self.simulation.epochs} epochs (start {kin.position}, heading {kin.heading:.3f})"
                    )


def load_scenario(path=None, overrides: Optional[Mapping[str, Mapping[str, Any]]] = None) -> ScenarioConfig:
    """Read a TOML scenario (defaults when ``path`` is None), apply overrides, validate."""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ScenarioError(f"scenario file not found: {path}")
        try:
            with path.open("rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ScenarioError(f"{path}: {e}") from e
    return ScenarioConfig.from_dict(data).with_overrides(overrides).validate()
