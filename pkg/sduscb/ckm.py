"""
Channel knowledge maps.

Each BS keeps a map from spatial grid cell to a statistical channel estimate
of the foreign users located there. The map is built offline from RSRP
reports over a DFT codebook: the expected RSRP of a cell is a nonnegative
mixture of the angular power spectrum (APS), which is recovered by greedy
nonnegative orthogonal least squares and turned back into a channel with
zero phases.

File format (all little-endian)::

    magic  b"SDUSCB-CKM"   10 bytes
    version                u8
    blocks                 u64 byte length + payload, in this order:
        meta       bs_x bs_y boresight cell_size origin_x origin_y
                   theta_min theta_max (f8) nx ny n_tx n_bins (u32)
        cells      int64  (n, 2)
        aps        float64 (n, n_bins)
        channels   float64 (n, n_tx, 2)   real/imag interleaved
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls
from tqdm import tqdm

from .channel import BaseStation, gen_rayleigh, steer_matrix
from .errors import CkmFormatError, CkmVersionError, CoverageError, SdUscbError

logger = logging.getLogger(__name__)

MAGIC = b"SDUSCB-CKM"
FORMAT_VERSION = 1
_META = struct.Struct("<8d4I")
_LEN = struct.Struct("<Q")

ChannelOracle = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class AngularGrid:
    theta_min: float = -math.pi / 3
    theta_max: float = math.pi / 3
    n_bins: int = 128

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise SdUscbError(f"empty angular span [{self.theta_min}, {self.theta_max}]")
        if self.n_bins < 1:
            raise SdUscbError(f"n_bins must be >= 1, got {self.n_bins}")

    @property
    def spacing(self) -> float:
        return (self.theta_max - self.theta_min) / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return self.theta_min + (np.arange(self.n_bins) + 0.5) * self.spacing

    def nearest(self, theta: float) -> int:
        return int(np.argmin(np.abs(self.centers - theta)))


@dataclass(frozen=True)
class Codebook:
    W: np.ndarray

    @property
    def n_tx(self) -> int:
        return self.W.shape[0]

    @property
    def n_beams(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class ApsVector:
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise SdUscbError("APS values must be nonnegative")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values)


@dataclass(frozen=True)
class CkmConfig:
    n_beams: int = 64
    grid: AngularGrid = field(default_factory=AngularGrid)
    n_paths: int = 4
    n_measurements: int = 20
    p_t: float = 10 ** (36 / 10) / 1000
    noise_var: float = 0.0
    cell_size: float = 0.4

    def __post_init__(self):
        if self.cell_size <= 0:
            raise SdUscbError(f"cell size must be > 0, got {self.cell_size}")
        if self.n_measurements < 1 or self.n_paths < 1:
            raise SdUscbError("n_measurements and n_paths must be >= 1")


@dataclass(frozen=True)
class SpatialGrid:
    """Axis-aligned grid of square cells; cell (i, j) is centered at origin + (i+.5, j+.5) * size."""

    origin: Tuple[float, float]
    cell_size: float
    shape: Tuple[int, int]

    @classmethod
    def from_area(cls, area: Sequence[float], cell_size: float) -> "SpatialGrid":
        xmin, xmax, ymin, ymax = area
        if cell_size <= 0:
            raise SdUscbError(f"cell size must be > 0, got {cell_size}")
        if not (xmax > xmin and ymax > ymin):
            raise SdUscbError(f"empty area {tuple(area)}")
        nx = max(1, int(math.ceil((xmax - xmin) / cell_size - 1e-9)))
        ny = max(1, int(math.ceil((ymax - ymin) / cell_size - 1e-9)))
        return cls((float(xmin), float(ymin)), float(cell_size), (nx, ny))

    def center(self, ix: int, iy: int) -> np.ndarray:
        return np.array(
            [self.origin[0] + (ix + 0.5) * self.cell_size, self.origin[1] + (iy + 0.5) * self.cell_size]
        )

    def locate(self, xy: Sequence[float]) -> Tuple[int, int]:
        """Index of the cell whose center is nearest to ``xy``."""
        nx, ny = self.shape
        fx = (xy[0] - self.origin[0]) / self.cell_size
        fy = (xy[1] - self.origin[1]) / self.cell_size
        if not (0.0 <= fx <= nx and 0.0 <= fy <= ny):
            raise CoverageError(f"location ({xy[0]:.2f}, {xy[1]:.2f}) is outside the map")
        return min(int(fx), nx - 1), min(int(fy), ny - 1)

    def all_cells(self) -> List[Tuple[int, int]]:
        nx, ny = self.shape
        return [(i, j) for i in range(nx) for j in range(ny)]

    def cells_near(self, points: Iterable[Sequence[float]], margin: float) -> List[Tuple[int, int]]:
        """Cells whose centers lie within ``margin`` of any point, sorted."""
        nx, ny = self.shape
        r = int(math.ceil(margin / self.cell_size))
        chosen = set()
        for p in points:
            fx = (p[0] - self.origin[0]) / self.cell_size
            fy = (p[1] - self.origin[1]) / self.cell_size
            cx, cy = int(math.floor(fx)), int(math.floor(fy))
            for i in range(max(cx - r, 0), min(cx + r + 1, nx)):
                for j in range(max(cy - r, 0), min(cy + r + 1, ny)):
                    c = self.center(i, j)
                    if math.hypot(c[0] - p[0], c[1] - p[1]) <= margin:
                        chosen.add((i, j))
        return sorted(chosen)


@dataclass(frozen=True)
class BuildReport:
    n_cells: int
    residuals: np.ndarray
    support_sizes: np.ndarray

    def summary(self) -> dict:
        res = self.residuals if self.residuals.size else np.zeros(1)
        hist = np.bincount(self.support_sizes) if self.support_sizes.size else np.zeros(1, dtype=int)
        return {
            "n_cells": self.n_cells,
            "residual_mean": float(res.mean()),
            "residual_median": float(np.median(res)),
            "residual_max": float(res.max()),
            "support_histogram": {str(k): int(v) for k, v in enumerate(hist) if v},
        }


class Ckm:
    """Immutable location -> channel map of one BS."""

    def __init__(self, bs: BaseStation, grid: SpatialGrid, angles: AngularGrid,
                 cells: np.ndarray, aps: np.ndarray, channels: np.ndarray):
        cells = np.array(cells, dtype=np.int64).reshape(-1, 2)
        aps = np.array(aps, dtype=float).reshape(len(cells), angles.n_bins)
        channels = np.array(channels, dtype=complex)
        if channels.ndim != 2 or channels.shape[0] != len(cells):
            raise SdUscbError("one channel per populated cell is required")
        self.bs = bs
        self.grid = grid
        self.angles = angles
        self.cells = cells
        self.aps = aps
        self.channels = channels
        self._index = np.full(grid.shape, -1, dtype=np.int64)
        for row, (i, j) in enumerate(cells):
            self._index[i, j] = row
        for arr in (self.cells, self.aps, self.channels, self._index):
            arr.setflags(write=False)

    @property
    def n_tx(self) -> int:
        return self.channels.shape[1]

    def __len__(self) -> int:
        return len(self.cells)

    def query(self, xy: Sequence[float]) -> np.ndarray:
        i, j = self.grid.locate(xy)
        row = self._index[i, j]
        if row < 0:
            raise CoverageError(f"cell ({i}, {j}) of the map is not populated")
        return self.channels[row].copy()

    def aps_at(self, xy: Sequence[float]) -> ApsVector:
        i, j = self.grid.locate(xy)
        row = self._index[i, j]
        if row < 0:
            raise CoverageError(f"cell ({i}, {j}) of the map is not populated")
        return ApsVector(self.aps[row].copy())


def query(ckm: Ckm, xy: Sequence[float]) -> np.ndarray:
    return ckm.query(xy)


def dft_codebook(n_tx: int, n_beams: int) -> Codebook:
    if n_beams < n_tx:
        raise SdUscbError(f"n_beams={n_beams} must be >= n_tx={n_tx}")
    m = np.arange(n_tx)[:, None]
    b = np.arange(n_beams)[None, :]
    return Codebook(np.exp(2j * np.pi * m * b / n_beams) / math.sqrt(n_tx))


def measure_rsrp(h: np.ndarray, cb: Codebook, p_t: float, noise_var: float,
                 rng: np.random.Generator) -> np.ndarray:
    """One RSRP report per beam: |sqrt(P_T) w_b^H h + n_b|^2 / sqrt(N_t).

    ``noise_var`` is the power of the CN(0, noise_var) receiver noise on each
    reference-signal sample; 0 gives P_T |w_b^H h|^2 / sqrt(N_t) exactly.
    """
    h = np.asarray(h)
    if h.shape != (cb.n_tx,):
        raise SdUscbError(f"channel of shape {h.shape} does not match codebook with {cb.n_tx} rows")
    if noise_var < 0:
        raise SdUscbError(f"noise power must be >= 0, got {noise_var}")
    y = math.sqrt(p_t) * (cb.W.conj().T @ h)
    if noise_var > 0:
        y = y + math.sqrt(noise_var) * gen_rayleigh(cb.n_beams, rng)
    return np.abs(y) ** 2 / math.sqrt(cb.n_tx)


def sensing_matrix(grid: AngularGrid, cb: Codebook, p_t: float) -> np.ndarray:
    """RSRP per unit path power: (N_b, N_theta), same 1/sqrt(N_t) factor as measure_rsrp."""
    A = steer_matrix(grid.centers, cb.n_tx)
    return p_t * np.abs(cb.W.conj().T @ A) ** 2 / math.sqrt(cb.n_tx)


def recover_aps(r_bar: np.ndarray, grid: AngularGrid, cb: Codebook, n_p: int, p_t: float,
                *, matrix: Optional[np.ndarray] = None, shortlist: int = 8) -> ApsVector:
    """Greedy nonnegative OLS.

    Each step scores every unused atom by the residual reduction it would give
    after orthogonalisation against the current support, refits the best
    ``shortlist`` candidates with NNLS and keeps the one with the smallest
    residual. Atoms refit to zero are pruned. Stops at ``n_p`` atoms or when
    the residual no longer drops.
    """
    r = np.asarray(r_bar, dtype=float)
    if r.shape != (cb.n_beams,):
        raise SdUscbError(f"RSRP vector of shape {r.shape} does not match {cb.n_beams} beams")
    M = sensing_matrix(grid, cb, p_t) if matrix is None else matrix
    values = np.zeros(grid.n_bins)
    if not np.any(r > 0):
        return ApsVector(values)

    support: List[int] = []
    coef = np.zeros(0)
    res_norm = float(np.linalg.norm(r))
    floor = 1e-13 * res_norm
    for _ in range(n_p):
        if support:
            Q, _ = np.linalg.qr(M[:, support])
            M_perp = M - Q @ (Q.T @ M)
            r_perp = r - Q @ (Q.T @ r)
        else:
            M_perp, r_perp = M, r
        corr = M_perp.T @ r_perp
        norms = np.einsum("ij,ij->j", M_perp, M_perp)
        usable = (corr > 0) & (norms > 1e-24 * max(norms.max(), 1e-300))
        usable[support] = False
        if not np.any(usable):
            break
        scores = np.where(usable, corr ** 2 / np.where(usable, norms, 1.0), -np.inf)
        order = np.argsort(-scores, kind="stable")[:shortlist]
        best = None
        for c in order:
            if not np.isfinite(scores[c]):
                break
            trial = support + [int(c)]
            x, res = nnls(M[:, trial], r)
            if best is None or res < best[2] - 1e-15 * res_norm:
                best = (trial, x, res)
        if best is None or best[2] >= res_norm - floor:
            break
        trial, x, res = best
        keep = x > 0
        support = [a for a, k in zip(trial, keep) if k]
        coef = x[keep]
        res_norm = res
        if res_norm <= floor:
            break
    values[support] = coef
    return ApsVector(values)


def reconstruct(aps: ApsVector, grid: AngularGrid, n_tx: int) -> np.ndarray:
    """h_hat = sum over bins of sqrt(alpha) a(theta), phases discarded."""
    return steer_matrix(grid.centers, n_tx) @ np.sqrt(aps.values)


def _cell_rng(seed: int, cell: Tuple[int, int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(int(cell[0]), int(cell[1]))))


def build_with_report(
    bs: BaseStation,
    area: Sequence[float],
    cell_size: float,
    channel_oracle: ChannelOracle,
    cfg: CkmConfig,
    *,
    n_tx: int,
    seed: int = 0,
    cells: Optional[Sequence[Tuple[int, int]]] = None,
    threads: int = 1,
    progress: bool = False,
) -> Tuple[Ckm, BuildReport]:
    grid = SpatialGrid.from_area(area, cell_size)
    todo = grid.all_cells() if cells is None else sorted(set(map(tuple, cells)))
    cb = dft_codebook(n_tx, cfg.n_beams)
    M = sensing_matrix(cfg.grid, cb, cfg.p_t)

    def one(cell):
        rng = _cell_rng(seed, cell)
        center = grid.center(*cell)
        r_bar = np.zeros(cb.n_beams)
        for _ in range(cfg.n_measurements):
            r_bar += measure_rsrp(channel_oracle(center, rng), cb, cfg.p_t, cfg.noise_var, rng)
        r_bar /= cfg.n_measurements
        aps = recover_aps(r_bar, cfg.grid, cb, cfg.n_paths, cfg.p_t, matrix=M)
        norm = np.linalg.norm(r_bar)
        residual = np.linalg.norm(r_bar - M @ aps.values) / norm if norm > 0 else 0.0
        return aps.values, reconstruct(aps, cfg.grid, n_tx), residual

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(tqdm(pool.map(one, todo), total=len(todo), disable=not progress,
                            desc=f"CKM {bs.position}", leave=False))

    aps = np.array([r[0] for r in results]).reshape(len(todo), cfg.grid.n_bins)
    channels = np.array([r[1] for r in results], dtype=complex).reshape(len(todo), n_tx)
    residuals = np.array([r[2] for r in results], dtype=float)
    supports = np.array([np.count_nonzero(r[0]) for r in results], dtype=int)
    ckm = Ckm(bs, grid, cfg.grid, np.array(todo, dtype=np.int64).reshape(-1, 2), aps, channels)
    logger.info("built CKM for BS at %s: %d cells, median residual %.3g",
                bs.position, len(todo), float(np.median(residuals)) if len(todo) else 0.0)
    return ckm, BuildReport(len(todo), residuals, supports)


def build(bs, area, cell_size, channel_oracle, cfg, **kwargs) -> Ckm:
    """Populate every (or every listed) grid cell of ``area`` around ``bs``."""
    return build_with_report(bs, area, cell_size, channel_oracle, cfg, **kwargs)[0]


def _block(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload


def save(ckm: Ckm, path) -> Path:
    path = Path(path)
    meta = _META.pack(
        ckm.bs.position[0], ckm.bs.position[1], ckm.bs.boresight, ckm.grid.cell_size,
        ckm.grid.origin[0], ckm.grid.origin[1], ckm.angles.theta_min, ckm.angles.theta_max,
        ckm.grid.shape[0], ckm.grid.shape[1], ckm.n_tx, ckm.angles.n_bins,
    )
    channels = np.ascontiguousarray(ckm.channels, dtype="<c16")
    body = b"".join(
        _block(p)
        for p in (
            meta,
            np.ascontiguousarray(ckm.cells, dtype="<i8").tobytes(),
            np.ascontiguousarray(ckm.aps, dtype="<f8").tobytes(),
            channels.view("<f8").tobytes(),
        )
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + bytes([FORMAT_VERSION]) + body)
    return path


def _read_blocks(data: bytes, offset: int, count: int) -> List[bytes]:
    blocks = []
    for _ in range(count):
        if offset + _LEN.size > len(data):
            raise CkmFormatError("truncated CKM file (block header)")
        (n,) = _LEN.unpack_from(data, offset)
        offset += _LEN.size
        if offset + n > len(data):
            raise CkmFormatError("truncated CKM file (block payload)")
        blocks.append(data[offset:offset + n])
        offset += n
    if offset != len(data):
        raise CkmFormatError(f"{len(data) - offset} trailing bytes in CKM file")
    return blocks


def load(path) -> Ckm:
    data = Path(path).read_bytes()
    head = len(MAGIC) + 1
    if len(data) < head or data[:len(MAGIC)] != MAGIC:
        raise CkmFormatError(f"{path} is not a CKM file")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CkmVersionError(f"CKM format version {version}, expected {FORMAT_VERSION}")
    meta, cells_b, aps_b, ch_b = _read_blocks(data, head, 4)
    if len(meta) != _META.size:
        raise CkmFormatError("bad CKM meta block")
    (bx, by, boresight, cell_size, ox, oy, tmin, tmax, nx, ny, n_tx, n_bins) = _META.unpack(meta)
    cells = np.frombuffer(cells_b, dtype="<i8")
    if cells.size % 2:
        raise CkmFormatError("bad CKM cell block")
    n = cells.size // 2
    aps = np.frombuffer(aps_b, dtype="<f8")
    ch = np.frombuffer(ch_b, dtype="<f8")
    if aps.size != n * n_bins or ch.size != 2 * n * n_tx:
        raise CkmFormatError("CKM block sizes disagree with its header")
    return Ckm(
        BaseStation((bx, by), boresight),
        SpatialGrid((ox, oy), cell_size, (nx, ny)),
        AngularGrid(tmin, tmax, n_bins),
        cells.reshape(n, 2).astype(np.int64),
        aps.reshape(n, n_bins).astype(float),
        ch.view("<c16").reshape(n, n_tx).astype(complex),
    )
