"""
SD-USCB epoch loop.

Every epoch n each BS

  I.   senses the users it serves in epoch n through the echoes of the
       beamformers it applies in epoch n;
  II.  schedules epoch n+1 with PFZFG on its intra-cell CSI;
  III. sends the sensed locations of its next scheduled users to its backhaul
       neighbours and queries its CKM at the foreign locations it receives;
  IV.  solves DualOpt for epoch n+1.

The beamformers are applied one epoch later against channels advanced by
mobility, and rates are accounted in the epoch where they are applied.
Epoch 1 is bootstrapped with PFZFG on true CSI, matched filters and
ground-truth locations.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from tqdm import tqdm

from . import ckm as ckm_mod
from .beamforming import BfProblem, BfSolution, solve
from .channel import (
    BaseStation,
    ChannelGenConfig,
    InterCellGeometry,
    UserKinematics,
    advance,
    gen_inter_channel,
    gen_intra_channel,
    gen_rayleigh,
)
from .config import ScenarioConfig
from .errors import CoverageError, SdUscbError, StarvationOverflowError
from .metrics import RateRecord, rate, sinr_matrix
from .scheduling import PfState, ScheduleSet, pfzfg, schedule_all, starving_users
from .sensing import KinematicEstimate, kin_to_radar, locate, sense

logger = logging.getLogger(__name__)

BYTES_PER_LOCATION = 2 * 8  # two float64 coordinates


def bytes_per_csi(n_tx: int) -> int:
    """One complex128 channel vector."""
    return n_tx * 2 * 8


@dataclass
class EpochTrace:
    epoch: int
    schedules: Tuple[Tuple[int, ...], ...]
    rates: List[np.ndarray]
    avg_rates: List[np.ndarray]
    true_sinr: List[np.ndarray]
    design_sinr: List[np.ndarray]
    location_error: List[np.ndarray]
    positions: List[np.ndarray]
    pfr: float
    solver_iterations: List[int] = field(default_factory=list)
    bytes_locations: int = 0
    bytes_full_csi: int = 0
    infeasible_cells: Tuple[int, ...] = ()
    ckm_misses: int = 0
    sensing_failures: int = 0
    starvation_truncated: int = 0

    @property
    def overhead_ratio(self) -> float:
        return self.bytes_locations / self.bytes_full_csi if self.bytes_full_csi else math.nan

    @property
    def rate_record(self) -> RateRecord:
        return RateRecord.from_cells(self.epoch, self.rates, self.avg_rates)


@dataclass
class SimulationState:
    scenario: ScenarioConfig
    bss: Tuple[BaseStation, ...]
    channel_cfg: ChannelGenConfig
    geometries: Tuple[InterCellGeometry, ...]
    graph: nx.Graph
    users: List[List[UserKinematics]]
    pf: List[PfState]
    rngs: Dict[str, np.random.Generator]
    sigma_c2: float = math.nan
    ckms: Optional[List[ckm_mod.Ckm]] = None
    channels: Optional[list] = None
    # what is applied in the current epoch
    schedules: List[ScheduleSet] = field(default_factory=list)
    beamformers: List[np.ndarray] = field(default_factory=list)
    design_sinr: List[np.ndarray] = field(default_factory=list)
    # per cell: user -> last known location / sensed (theta, beta)
    locations: List[Dict[int, np.ndarray]] = field(default_factory=list)
    echoes: List[Dict[int, Tuple[float, complex]]] = field(default_factory=list)
    fixed_schedules: Optional[List[ScheduleSet]] = None
    threads: int = 1

    @property
    def n_cells(self) -> int:
        return len(self.bss)

    @property
    def users_per_cell(self) -> List[int]:
        return [len(u) for u in self.users]


@dataclass
class SimulationResult:
    traces: List[EpochTrace]
    summary: dict


# --- network setup -----------------------------------------------------------

def backhaul_graph(n_cells: int, links: Optional[Sequence[Tuple[int, int]]] = None) -> nx.Graph:
    """Full mesh unless an explicit link list is given."""
    if links is None:
        g = nx.complete_graph(n_cells)
    else:
        g = nx.Graph()
        g.add_nodes_from(range(n_cells))
        g.add_edges_from((int(a), int(b)) for a, b in links)
    nx.set_edge_attributes(g, 0, "bytes")
    return g


def draw_channels(users, bss, cfg: ChannelGenConfig, geometries, rng: np.random.Generator,
                  spatially_consistent: bool = True) -> list:
    """channels[m][l]: (N_t, U_l) matrix from BS m to the users of cell l."""
    out = []
    for m, bs in enumerate(bss):
        row = []
        for l, cell_users in enumerate(users):
            H = np.empty((cfg.n_tx, len(cell_users)), dtype=complex)
            for u, kin in enumerate(cell_users):
                if m == l:
                    H[:, u] = gen_intra_channel(kin, bs, cfg, rng)
                else:
                    geometry = geometries[m] if spatially_consistent else None
                    H[:, u] = gen_inter_channel(kin, bs, cfg, rng, geometry)
            row.append(H)
        out.append(row)
    return out


def noise_from_channels(channels, power: float, n_tx: int, snr_db: float) -> float:
    """sigma_c^2 such that P * mean ||h||^2 / (N_t sigma^2) hits the target SNR.

    The mean runs over every (BS, user) pair of the network.
    """
    total, count = 0.0, 0
    for row in channels:
        for H in row:
            total += float(np.sum(np.abs(H) ** 2))
            count += H.shape[1]
    if count == 0 or total <= 0.0:
        raise SdUscbError("cannot calibrate noise on all-zero channels")
    return power * (total / count) / (n_tx * 10 ** (snr_db / 10))


def calibrate_noise(scenario: ScenarioConfig, rng: np.random.Generator) -> float:
    """Place users, draw one epoch of channels and solve the SNR equation for sigma_c^2."""
    state = _initial_state(scenario, rng, threads=1)
    channels = draw_channels(
        state.users, state.bss, state.channel_cfg, state.geometries,
        state.rngs["channel"], scenario.channel.spatially_consistent,
    )
    net = scenario.network
    return noise_from_channels(channels, net.power, net.n_tx, scenario.simulation.snr_target_db)


def _initial_state(scenario: ScenarioConfig, seed_or_rng, threads: int) -> SimulationState:
    if isinstance(seed_or_rng, np.random.Generator):
        root = np.random.SeedSequence(int(seed_or_rng.integers(2 ** 63)))
    else:
        root = np.random.SeedSequence(int(seed_or_rng))
    names = ("placement", "geometry", "channel", "sensing", "csi", "ckm")
    rngs = {name: np.random.default_rng(s) for name, s in zip(names, root.spawn(len(names)))}
    bss = scenario.base_stations()
    ccfg = scenario.channel_config()
    geometries = tuple(InterCellGeometry.draw(ccfg, rngs["geometry"]) for _ in bss)
    users = [list(cell) for cell in scenario.place_users(rngs["placement"])]
    scenario.check_tracks(users)
    sched = scenario.scheduler
    return SimulationState(
        scenario=scenario,
        bss=bss,
        channel_cfg=ccfg,
        geometries=geometries,
        graph=backhaul_graph(len(bss), scenario.network.backhaul),
        users=users,
        pf=[PfState.fresh(len(u), sched.t_s, sched.r_init) for u in users],
        rngs=rngs,
        threads=max(1, threads),
    )


def track(kin: UserKinematics, epochs: int, dt: float) -> List[np.ndarray]:
    """Positions of a user over the run, one per epoch."""
    points = []
    for _ in range(max(epochs, 1)):
        points.append(np.asarray(kin.position, dtype=float))
        kin = advance(kin, dt)
    return points


def ckm_coverage(state: SimulationState, m: int, epochs: int, margin: float,
                 cell_size: float) -> Tuple[Tuple[float, float, float, float], List[Tuple[int, int]]]:
    """Area and populated cells of BS m's map: corridors around the foreign tracks."""
    dt = state.scenario.network.dt
    points = [
        p
        for l, cell_users in enumerate(state.users) if l != m
        for kin in cell_users
        for p in _densify(track(kin, epochs, dt), cell_size / 2)
    ]
    if not points:
        return (0.0, cell_size, 0.0, cell_size), []
    pts = np.array(points)
    area = (
        float(pts[:, 0].min() - margin), float(pts[:, 0].max() + margin),
        float(pts[:, 1].min() - margin), float(pts[:, 1].max() + margin),
    )
    grid = ckm_mod.SpatialGrid.from_area(area, cell_size)
    return area, grid.cells_near(points, margin)


def _densify(points: List[np.ndarray], step: float) -> List[np.ndarray]:
    out = [points[0]]
    for a, b in zip(points, points[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
        out.extend(a + (b - a) * (i / n) for i in range(1, n + 1))
    return out


def rsrp_noise(state: SimulationState) -> float:
    """RSRP measurement noise power: the calibrated sigma_c^2, or 0 for noiseless maps."""
    return state.sigma_c2 if state.scenario.ckm.noisy else 0.0


def build_ckms(state: SimulationState, *, progress: bool = False):
    """One CKM per BS over the foreign users' corridors. Returns (ckms, reports)."""
    sc = state.scenario
    cfg = sc.ckm_config(rsrp_noise(state))
    seeds = state.rngs["ckm"].integers(2 ** 63, size=state.n_cells)
    ckms, reports = [], []
    for m, bs in enumerate(state.bss):
        area, cells = ckm_coverage(state, m, sc.simulation.epochs, sc.ckm.margin, cfg.cell_size)
        geometry = state.geometries[m] if sc.channel.spatially_consistent else None

        def oracle(xy, rng, bs=bs, geometry=geometry):
            kin = UserKinematics((float(xy[0]), float(xy[1])))
            return gen_inter_channel(kin, bs, state.channel_cfg, rng, geometry)

        ckm, report = ckm_mod.build_with_report(
            bs, area, cfg.cell_size, oracle, cfg,
            n_tx=sc.network.n_tx, seed=int(seeds[m]), cells=cells,
            threads=state.threads, progress=progress,
        )
        ckms.append(ckm)
        reports.append(report)
    return ckms, reports


def ckm_path(directory, m: int) -> Path:
    return Path(directory) / f"ckm_bs{m}.bin"


def load_ckms(directory, n_cells: int) -> Optional[List[ckm_mod.Ckm]]:
    paths = [ckm_path(directory, m) for m in range(n_cells)]
    if not all(p.is_file() for p in paths):
        return None
    return [ckm_mod.load(p) for p in paths]


def prepare(scenario: ScenarioConfig, *, threads: int = 1, progress: bool = False,
            ckms: Optional[List[ckm_mod.Ckm]] = None) -> SimulationState:
    """Initial state: users placed, epoch-1 channels drawn, noise calibrated, maps ready."""
    state = _initial_state(scenario, scenario.simulation.seed, threads)
    state.channels = draw_channels(
        state.users, state.bss, state.channel_cfg, state.geometries,
        state.rngs["channel"], scenario.channel.spatially_consistent,
    )
    net = scenario.network
    state.sigma_c2 = noise_from_channels(state.channels, net.power, net.n_tx,
                                         scenario.simulation.snr_target_db)
    if scenario.simulation.csi_source == "ckm" and state.n_cells > 1:
        if ckms is None and scenario.ckm.ckm_dir:
            ckms = load_ckms(scenario.ckm.ckm_dir, state.n_cells)
            if ckms is not None:
                logger.info("loaded %d CKMs from %s", len(ckms), scenario.ckm.ckm_dir)
        state.ckms = ckms if ckms is not None else build_ckms(state, progress=progress)[0]
    return state


# --- stages ------------------------------------------------------------------

def _schedule(state: SimulationState, l: int, H_est: np.ndarray, epoch: int) -> Tuple[ScheduleSet, int]:
    """Stage II for one cell. Returns (schedule, number of starving users dropped)."""
    sc = state.scenario
    users = list(range(len(state.users[l])))
    if sc.scheduler.variant == "all":
        return schedule_all(users), 0
    if sc.scheduler.variant == "fixed" and state.fixed_schedules is not None:
        return state.fixed_schedules[l], 0
    pf = state.pf[l]
    kw = dict(epoch=epoch, noise_var=state.sigma_c2, p_total=sc.network.power)
    try:
        return pfzfg(users, H_est, pf, sc.scheduler.cap, **kw), 0
    except StarvationOverflowError as e:
        limit = min(sc.scheduler.cap, H_est.shape[0])
        starving = starving_users(pf, epoch, users)
        logger.warning("cell %d: %s; keeping the %d longest starved", l, e, limit)
        return pfzfg(users, H_est, pf, sc.scheduler.cap, forced=starving[:limit], **kw), len(starving) - limit


def _intra_estimate(state: SimulationState, l: int) -> np.ndarray:
    H = state.channels[l][l]
    var = state.scenario.simulation.csi_error_var
    if var <= 0:
        return H
    scale = np.sqrt(var * np.sum(np.abs(H) ** 2, axis=0) / H.shape[0])
    return H + gen_rayleigh(H.shape[1], state.rngs["csi"], size=(H.shape[0],)) * scale[None, :]


def _matched_filters(H: np.ndarray, power: float) -> np.ndarray:
    if H.shape[1] == 0:
        return np.zeros((H.shape[0], 0), dtype=complex)
    norms = np.linalg.norm(H, axis=0)
    norms[norms == 0] = 1.0
    return H / norms[None, :] * math.sqrt(power / H.shape[1])


def _sense_cell(state: SimulationState, l: int) -> Tuple[np.ndarray, int]:
    """Stage I for one cell; updates locations and echoes, returns (errors, failures)."""
    sc = state.scenario
    cfg = sc.sensing_config()
    bs = state.bss[l]
    errors = np.full(len(state.users[l]), np.nan)
    failures = 0
    schedule = list(state.schedules[l])
    for u in schedule:
        kin = state.users[l][u]
        if sc.sensing.noise:
            est = sense(kin, bs, state.beamformers[l], schedule, u, cfg, state.rngs["sensing"])
        else:
            d, psi = bs.relative(kin.position)
            radar = kin_to_radar(d, psi, kin.radial_speed(bs), cfg)
            est = KinematicEstimate(psi, d, kin.radial_speed(bs), radar.tau)
        if est.failed:
            failures += 1
            continue
        loc = locate(bs, est)
        state.locations[l][u] = loc
        state.echoes[l][u] = (est.theta_hat, est.beta_hat(cfg))
        errors[u] = float(np.linalg.norm(loc - np.asarray(kin.position)))
    return errors, failures


def _echo_of(state: SimulationState, l: int, u: int) -> Tuple[float, complex]:
    if u in state.echoes[l]:
        return state.echoes[l][u]
    d, psi = state.bss[l].relative(state.locations[l][u])
    cfg = state.scenario.sensing_config()
    return psi, kin_to_radar(max(d, 0.1), psi, 0.0, cfg).beta


def _leakage(state: SimulationState, l: int, next_schedules: Sequence[ScheduleSet]) -> Tuple[np.ndarray, int]:
    """Stage III at BS l: sum of h h^H over the neighbours' next scheduled users."""
    n_tx = state.scenario.network.n_tx
    R = np.zeros((n_tx, n_tx), dtype=complex)
    misses = 0
    oracle = state.scenario.simulation.csi_source == "oracle"
    for m in state.graph.neighbors(l):
        for u in next_schedules[m]:
            if oracle:
                h = state.channels[l][m][:, u]
            else:
                try:
                    h = state.ckms[l].query(state.locations[m][u])
                except CoverageError:
                    misses += 1
                    continue
            R += np.outer(h, h.conj())
    return R, misses


def _solve_cell(state: SimulationState, l: int, schedule: ScheduleSet, H_est: np.ndarray,
                leak_sum: np.ndarray) -> Optional[BfSolution]:
    """Stage IV for one cell."""
    users = list(schedule)
    if not users or not np.any(H_est[:, users]):
        return None
    sc = state.scenario
    echoes = [_echo_of(state, l, u) for u in users]
    problem = BfProblem(
        h=H_est[:, users],
        leak_sum=leak_sum,
        avg_rate=state.pf[l].effective_rate()[users],
        power=sc.network.power,
        noise=state.sigma_c2,
        theta_hat=np.array([e[0] for e in echoes]),
        beta_hat=np.array([e[1] for e in echoes], dtype=complex),
        sensing=sc.sensing_config(),
        c_bar=sc.sensing.c_bar,
    )
    return solve(problem, sc.solver_config())


def _full_beamformers(n_tx: int, n_sched: int, solution: Optional[BfSolution]) -> np.ndarray:
    V = np.zeros((n_tx, n_sched), dtype=complex)
    if solution is not None:
        V[:, list(solution.users)] = solution.beamformers
    return V


def _design_sinr(n_users: int, schedule: ScheduleSet, solution: Optional[BfSolution]) -> np.ndarray:
    out = np.full(n_users, np.nan)
    if solution is not None:
        users = list(schedule)
        for k, s in zip(solution.users, solution.design_sinr):
            out[users[k]] = s
    return out


def bootstrap(state: SimulationState) -> SimulationState:
    """Epoch-1 schedule and beamformers from true CSI and true locations."""
    sc = state.scenario
    state.locations = [{u: np.asarray(k.position, dtype=float) for u, k in enumerate(cell)} for cell in state.users]
    state.echoes = [{} for _ in state.users]
    state.schedules, state.beamformers, state.design_sinr = [], [], []
    for l in range(state.n_cells):
        H = state.channels[l][l]
        S, _ = _schedule(state, l, H, 1)
        state.schedules.append(S)
        state.beamformers.append(_matched_filters(H[:, list(S)], sc.network.power))
        state.design_sinr.append(np.full(len(state.users[l]), np.nan))
    if sc.scheduler.variant == "fixed":
        state.fixed_schedules = list(state.schedules)
    return state


def run_epoch(state: SimulationState, n: int, *, last: bool = False) -> Tuple[SimulationState, EpochTrace]:
    """Apply epoch n's beamformers, then sense, schedule, exchange and design for n+1."""
    sc = state.scenario
    L = state.n_cells
    n_tx = sc.network.n_tx
    if n > 1:
        state.users = [[advance(k, sc.network.dt) for k in cell] for cell in state.users]
        state.channels = draw_channels(
            state.users, state.bss, state.channel_cfg, state.geometries,
            state.rngs["channel"], sc.channel.spatially_consistent,
        )

    schedules = [tuple(S) for S in state.schedules]
    sinr = sinr_matrix(state.beamformers, schedules, state.channels, state.sigma_c2, state.users_per_cell)
    rates = [rate(s) for s in sinr]
    for l in range(L):
        state.pf[l].record(rates[l], schedules[l], n)
    avg_rates = [pf.avg_rate.copy() for pf in state.pf]
    positions = [np.array([k.position for k in cell], dtype=float) for cell in state.users]

    # Stage I
    errors, failures = [], 0
    for l in range(L):
        e, f = _sense_cell(state, l)
        errors.append(e)
        failures += f

    trace = EpochTrace(
        epoch=n,
        schedules=tuple(schedules),
        rates=rates,
        avg_rates=avg_rates,
        true_sinr=sinr,
        design_sinr=list(state.design_sinr),
        location_error=errors,
        positions=positions,
        pfr=RateRecord.from_cells(n, rates, avg_rates).pfr,
        sensing_failures=failures,
    )
    if last:
        return state, trace

    # Stage II
    H_est = [_intra_estimate(state, l) for l in range(L)]
    with ThreadPoolExecutor(max_workers=min(state.threads, L)) as pool:
        scheduled = list(pool.map(lambda l: _schedule(state, l, H_est[l], n + 1), range(L)))
    next_schedules = [s for s, _ in scheduled]
    trace.starvation_truncated = sum(t for _, t in scheduled)

    # Stage III
    for l in range(L):
        if state.graph.degree(l) == 0:
            continue
        sent = BYTES_PER_LOCATION * len(next_schedules[l])
        trace.bytes_locations += sent
        trace.bytes_full_csi += bytes_per_csi(n_tx) * len(next_schedules[l])
        for m in state.graph.neighbors(l):
            state.graph.edges[l, m]["bytes"] += sent
    leakage = [_leakage(state, l, next_schedules) for l in range(L)]
    trace.ckm_misses = sum(miss for _, miss in leakage)

    # Stage IV
    with ThreadPoolExecutor(max_workers=min(state.threads, L)) as pool:
        solutions = list(pool.map(
            lambda l: _solve_cell(state, l, next_schedules[l], H_est[l], leakage[l][0]), range(L)
        ))

    infeasible = []
    beamformers, design = [], []
    for l, (S, sol) in enumerate(zip(next_schedules, solutions)):
        V = _full_beamformers(n_tx, len(S), sol)
        if sol is not None and not sol.feasible:
            infeasible.append(l)
            if tuple(S) == tuple(state.schedules[l]):
                V = state.beamformers[l]
            logger.warning("epoch %d cell %d: sensing constraints not met (%s)", n, l, sol.status)
        beamformers.append(V)
        design.append(_design_sinr(len(state.users[l]), S, sol))
        trace.solver_iterations.append(sol.outer_iterations if sol is not None else 0)
    trace.infeasible_cells = tuple(infeasible)

    state.schedules = next_schedules
    state.beamformers = beamformers
    state.design_sinr = design
    logger.info(
        "epoch %d: PFR %.4f, scheduled %s, mean location error %.3g m",
        n, trace.pfr, [len(s) for s in schedules], _nanmean(np.concatenate(errors)),
    )
    return state, trace


def _nanmean(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else math.nan


def summarize(state: SimulationState, traces: List[EpochTrace], runtime: float) -> dict:
    sc = state.scenario
    errors = np.concatenate([e for t in traces for e in t.location_error]) if traces else np.zeros(0)
    loc_bytes = sum(t.bytes_locations for t in traces)
    csi_bytes = sum(t.bytes_full_csi for t in traces)
    iterations = [i for t in traces for i in t.solver_iterations]
    return {
        "epochs": len(traces),
        "n_cells": state.n_cells,
        "users_per_cell": state.users_per_cell,
        "sigma_c2": state.sigma_c2,
        "baseline": sc.solver.baseline,
        "scheduler": sc.scheduler.variant,
        "csi_source": sc.simulation.csi_source,
        "c_bar": sc.sensing.c_bar,
        "seed": sc.simulation.seed,
        "final_pfr": traces[-1].pfr if traces else None,
        "pfr_curve": [t.pfr for t in traces],
        "mean_location_error_m": _nanmean(errors),
        "bytes_locations": loc_bytes,
        "bytes_full_csi": csi_bytes,
        "overhead_ratio": loc_bytes / csi_bytes if csi_bytes else None,
        "link_bytes": {f"{a}-{b}": int(d["bytes"]) for a, b, d in state.graph.edges(data=True)},
        "mean_outer_iterations": float(np.mean(iterations)) if iterations else None,
        "infeasible_epochs": sum(1 for t in traces if t.infeasible_cells),
        "ckm_misses": sum(t.ckm_misses for t in traces),
        "sensing_failures": sum(t.sensing_failures for t in traces),
        "starvation_truncated": sum(t.starvation_truncated for t in traces),
        "runtime_s": runtime,
    }


def run(scenario: ScenarioConfig, *, threads: int = 1, progress: bool = False,
        ckms: Optional[List[ckm_mod.Ckm]] = None) -> SimulationResult:
    """Run ``scenario.simulation.epochs`` epochs and summarize them."""
    start = time.perf_counter()
    N = scenario.simulation.epochs
    state = prepare(scenario, threads=threads, progress=progress, ckms=ckms)
    traces: List[EpochTrace] = []
    if N > 0:
        bootstrap(state)
        for n in tqdm(range(1, N + 1), disable=not progress, desc="epochs"):
            state, trace = run_epoch(state, n, last=(n == N))
            traces.append(trace)
    return SimulationResult(traces, summarize(state, traces, time.perf_counter() - start))


def clone(state: SimulationState) -> SimulationState:
    """Independent copy, generators included."""
    return copy.deepcopy(state)


# --- output ------------------------------------------------------------------

TRACE_COLUMNS = (
    "epoch", "cell", "user", "scheduled", "x", "y", "rate", "avg_rate",
    "true_sinr", "design_sinr", "location_error",
)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_trace(traces: Sequence[EpochTrace], path) -> Path:
    """One row per user per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for t in traces:
            for l, rates in enumerate(t.rates):
                scheduled = set(t.schedules[l])
                for u in range(len(rates)):
                    w.writerow([
                        _fmt(t.epoch), _fmt(l), _fmt(u), _fmt(int(u in scheduled)),
                        _fmt(t.positions[l][u, 0]), _fmt(t.positions[l][u, 1]),
                        _fmt(rates[u]), _fmt(t.avg_rates[l][u]), _fmt(t.true_sinr[l][u]),
                        _fmt(t.design_sinr[l][u]), _fmt(t.location_error[l][u]),
                    ])
    return path


def write_pfr_curve(traces: Sequence[EpochTrace], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("epoch", "pfr", "bytes_locations", "bytes_full_csi"))
        for t in traces:
            w.writerow([_fmt(t.epoch), _fmt(t.pfr), _fmt(t.bytes_locations), _fmt(t.bytes_full_csi)])
    return path


def write_outputs(result: SimulationResult, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(result.summary, indent=2, default=float))
    return {
        "trace": write_trace(result.traces, out / "trace.csv"),
        "summary": summary_path,
        "pfr_curve": write_pfr_curve(result.traces, out / "pfr_curve.csv"),
    }
