"""
Ground-truth mmWave channels for the SD-USCB simulator.

Intra-cell channels carry one LoS path plus N_p - 1 NLoS paths; inter-cell
channels carry N_p NLoS paths only. Small-scale terms (phases, intra-cell
NLoS angles) are redrawn every epoch, large-scale geometry (distance, angle,
the inter-cell scattering cluster of each BS) is fixed by position.

Angles are measured from the array broadside, positive toward the array's
right-hand side. With the broadside pointing along +y a user at (d, psi)
sits at ``bs + d * (sin psi, cos psi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ChannelDomainError

# Phases of the inter-cell NLoS paths are Gaussian with this std (radians).
INTER_PHASE_STD = math.pi / 5


@dataclass(frozen=True)
class ArrayGeometry:
    """Half-wavelength ULA at the BS: N_t transmit and N_r receive elements."""

    n_tx: int = 32
    n_rx: int = 16
    spacing: float = 0.5

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ChannelDomainError(
                f"array needs at least one element, got n_tx={self.n_tx} n_rx={self.n_rx}"
            )

    @property
    def kappa(self) -> float:
        return math.sqrt(self.n_tx * self.n_rx)


@dataclass(frozen=True)
class BaseStation:
    """BS site: position in meters and broadside direction in the global frame."""

    position: Tuple[float, float]
    boresight: float = math.pi / 2

    @property
    def broadside(self) -> np.ndarray:
        return np.array([math.cos(self.boresight), math.sin(self.boresight)])

    @property
    def right(self) -> np.ndarray:
        return np.array([math.sin(self.boresight), -math.cos(self.boresight)])

    def relative(self, xy: Sequence[float]) -> Tuple[float, float]:
        """Distance and broadside angle of a point, angle in (-pi, pi]."""
        delta = np.asarray(xy, dtype=float) - np.asarray(self.position, dtype=float)
        d = float(np.hypot(delta[0], delta[1]))
        psi = math.atan2(float(delta @ self.right), float(delta @ self.broadside))
        return d, psi

    def point_at(self, d: float, psi: float) -> np.ndarray:
        return (
            np.asarray(self.position, dtype=float)
            + d * (math.sin(psi) * self.right + math.cos(psi) * self.broadside)
        )


@dataclass(frozen=True)
class UserKinematics:
    position: Tuple[float, float]
    speed: float = 20.0
    heading: float = 0.0

    def distance(self, bs: BaseStation) -> float:
        return bs.relative(self.position)[0]

    def angle(self, bs: BaseStation) -> float:
        return bs.relative(self.position)[1]

    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def radial_speed(self, bs: BaseStation) -> float:
        """Range rate w.r.t. ``bs``; positive when moving away."""
        delta = np.asarray(self.position, dtype=float) - np.asarray(bs.position, dtype=float)
        norm = float(np.hypot(delta[0], delta[1]))
        if norm == 0.0:
            return 0.0
        return float(self.velocity() @ delta) / norm

    def check_visible(self, bs: BaseStation) -> Tuple[float, float]:
        """Return (d, psi), raising if the user is not in front of the array."""
        d, psi = bs.relative(self.position)
        if d <= 0.0:
            raise ChannelDomainError(f"user at {self.position} coincides with BS")
        if not -math.pi / 2 < psi < math.pi / 2:
            raise ChannelDomainError(
                f"user at {self.position} is behind the array (psi={psi:.3f} rad)"
            )
        return d, psi

    def stays_visible(self, bs: BaseStation, duration: float) -> bool:
        """True if the straight track over ``duration`` seconds never leaves the front half-plane."""
        start = np.asarray(self.position, dtype=float) - np.asarray(bs.position, dtype=float)
        end = start + self.velocity() * duration
        # A segment stays in an open half-plane iff both endpoints do.
        return bool(start @ bs.broadside > 0.0 and end @ bs.broadside > 0.0)


@dataclass(frozen=True)
class PathParams:
    gain: float
    phase: float
    aod: float

    def __post_init__(self):
        if self.gain < 0:
            raise ChannelDomainError(f"path gain must be >= 0, got {self.gain}")


@dataclass(frozen=True)
class ChannelGenConfig:
    n_tx: int = 32
    alpha0: float = 1e-6
    eta: float = 2.0
    n_paths: int = 4
    nlos_ratio_range: Tuple[float, float] = (4.0, 9.0)
    inter_phase_std: float = INTER_PHASE_STD
    # None means "same as n_paths"; 0 gives an empty inter-cell channel.
    n_inter_paths: Optional[int] = None
    # Std of the per-BS cluster offsets around the user direction (radians).
    inter_aod_spread: float = 0.15

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ChannelDomainError(f"alpha0 must be > 0, got {self.alpha0}")
        if self.eta < 0:
            raise ChannelDomainError(f"eta must be >= 0, got {self.eta}")
        if self.n_paths < 1:
            raise ChannelDomainError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.n_inter_paths is not None and self.n_inter_paths < 0:
            raise ChannelDomainError(f"n_inter_paths must be >= 0, got {self.n_inter_paths}")
        lo, hi = self.nlos_ratio_range
        if not 0 < lo <= hi:
            raise ChannelDomainError(f"bad nlos_ratio_range {self.nlos_ratio_range}")

    @property
    def inter_paths(self) -> int:
        return self.n_paths if self.n_inter_paths is None else self.n_inter_paths


@dataclass(frozen=True)
class InterCellGeometry:
    """Large-scale NLoS cluster of one BS toward foreign users.

    Path q leaves the array at ``psi + aod_offsets[q]`` with power
    ``path_loss(d) / power_ratios[q]``.
    """

    aod_offsets: Tuple[float, ...]
    power_ratios: Tuple[float, ...]

    @classmethod
    def draw(cls, cfg: ChannelGenConfig, rng: np.random.Generator) -> "InterCellGeometry":
        n = cfg.inter_paths
        offsets = rng.normal(0.0, cfg.inter_aod_spread, size=n)
        ratios = rng.uniform(*cfg.nlos_ratio_range, size=n)
        return cls(tuple(float(o) for o in offsets), tuple(float(r) for r in ratios))


def steer(theta: float, n: int) -> np.ndarray:
    """ULA steering vector (1/sqrt(n)) exp(j pi m sin theta), m = 0..n-1."""
    if n < 1:
        raise ChannelDomainError(f"antenna count must be >= 1, got {n}")
    m = np.arange(n)
    return np.exp(1j * np.pi * m * np.sin(theta)) / math.sqrt(n)


def steer_matrix(thetas: Sequence[float], n: int) -> np.ndarray:
    """Stack of steering vectors as columns, shape (n, len(thetas))."""
    if n < 1:
        raise ChannelDomainError(f"antenna count must be >= 1, got {n}")
    thetas = np.asarray(thetas, dtype=float)
    m = np.arange(n)[:, None]
    return np.exp(1j * np.pi * m * np.sin(thetas)[None, :]) / math.sqrt(n)


def path_loss(d: float, cfg: ChannelGenConfig) -> float:
    if d <= 0:
        raise ChannelDomainError(f"distance must be > 0, got {d}")
    return cfg.alpha0 * d ** (-cfg.eta)


def channel_from_paths(paths: Sequence[PathParams], n: int) -> np.ndarray:
    h = np.zeros(n, dtype=complex)
    for p in paths:
        h += math.sqrt(p.gain) * np.exp(1j * p.phase) * steer(p.aod, n)
    return h


def intra_paths(
    kin: UserKinematics, bs: BaseStation, cfg: ChannelGenConfig, rng: np.random.Generator
) -> List[PathParams]:
    d, psi = kin.check_visible(bs)
    alpha_los = path_loss(d, cfg)
    paths = [PathParams(alpha_los, float(rng.uniform(-math.pi, math.pi)), psi)]
    for _ in range(cfg.n_paths - 1):
        aod = float(rng.uniform(-math.pi, math.pi))
        ratio = float(rng.uniform(*cfg.nlos_ratio_range))
        phase = float(rng.uniform(-math.pi, math.pi))
        paths.append(PathParams(alpha_los / ratio, phase, aod))
    return paths


def inter_paths(
    kin: UserKinematics,
    bs: BaseStation,
    cfg: ChannelGenConfig,
    rng: np.random.Generator,
    geometry: Optional[InterCellGeometry] = None,
) -> List[PathParams]:
    d, psi = bs.relative(kin.position)
    base = path_loss(d, cfg)
    paths = []
    for q in range(cfg.inter_paths):
        if geometry is None:
            aod = float(rng.uniform(-math.pi, math.pi))
            ratio = float(rng.uniform(*cfg.nlos_ratio_range))
        else:
            aod = psi + geometry.aod_offsets[q]
            ratio = geometry.power_ratios[q]
        phase = float(rng.normal(0.0, cfg.inter_phase_std))
        paths.append(PathParams(base / ratio, phase, aod))
    return paths


def gen_intra_channel(
    kin: UserKinematics, bs: BaseStation, cfg: ChannelGenConfig, rng: np.random.Generator
) -> np.ndarray:
    """Serving-cell channel: LoS at psi plus N_p - 1 uniformly scattered NLoS paths."""
    return channel_from_paths(intra_paths(kin, bs, cfg, rng), cfg.n_tx)


def gen_inter_channel(
    kin: UserKinematics,
    bs: BaseStation,
    cfg: ChannelGenConfig,
    rng: np.random.Generator,
    geometry: Optional[InterCellGeometry] = None,
) -> np.ndarray:
    """Channel from a non-serving BS: N_p NLoS paths, Gaussian phases.

    Without ``geometry`` the AoDs are uniform on (-pi, pi) and the power
    ratios are redrawn; with it the cluster is tied to the user's direction.
    """
    return channel_from_paths(inter_paths(kin, bs, cfg, rng, geometry), cfg.n_tx)


def gen_rayleigh(n: int, rng: np.random.Generator, size: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """CN(0, I_n) draws; ``size`` prepends batch dimensions."""
    shape = (n,) if size is None else tuple(size) + (n,)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def advance(kin: UserKinematics, dt: float) -> UserKinematics:
    step = kin.velocity() * dt
    x, y = kin.position
    return replace(kin, position=(x + float(step[0]), y + float(step[1])))
