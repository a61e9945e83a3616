"""
Parameter-level ISAC sensing.

The echo processing chain is abstracted to additive Gaussian errors on the
delay, Doppler and angle estimates, with variances inversely proportional to
the sensing SINR produced by last epoch's beamformers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy import constants

from .channel import ArrayGeometry, BaseStation, UserKinematics, steer, steer_matrix
from .errors import NotScheduledError, SdUscbError

logger = logging.getLogger(__name__)

PARAMS = ("tau", "mu", "theta")
MIN_RANGE = 0.1  # meters; d_hat is clamped above this


@dataclass(frozen=True)
class SensingConfig:
    a_tau: float = 6.7e-7
    a_mu: float = 0.1
    a_theta: float = 0.1
    gain: float = 10.0
    kappa: float = math.sqrt(32 * 16)
    sigma_z2: float = 1e-5
    eta_rcs: complex = 1.0
    f_c: float = 28e9
    c: float = constants.c

    def __post_init__(self):
        for name in ("a_tau", "a_mu", "a_theta"):
            if getattr(self, name) < 0:
                raise SdUscbError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("gain", "kappa", "sigma_z2", "f_c", "c"):
            if getattr(self, name) <= 0:
                raise SdUscbError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.eta_rcs == 0:
            raise SdUscbError("eta_rcs must be nonzero")

    @classmethod
    def for_array(cls, array: ArrayGeometry, **kwargs) -> "SensingConfig":
        return cls(kappa=array.kappa, **kwargs)

    def a(self, param: str) -> float:
        if param not in PARAMS:
            raise SdUscbError(f"unknown radar parameter {param!r}")
        return getattr(self, f"a_{param}")

    @property
    def binding_param(self) -> str:
        """Parameter with the largest estimator constant (first on ties)."""
        values = [self.a(p) for p in PARAMS]
        return PARAMS[int(np.argmax(values))]

    @property
    def a_bar(self) -> float:
        return self.a(self.binding_param)

    def echo_gain(self, beta: complex) -> float:
        """G * kappa^2 * |beta|^2."""
        return self.gain * self.kappa ** 2 * abs(beta) ** 2


@dataclass(frozen=True)
class RadarParams:
    tau: float
    mu: float
    beta: complex

    def __post_init__(self):
        if self.tau <= 0:
            raise SdUscbError(f"round-trip delay must be > 0, got {self.tau}")


@dataclass(frozen=True)
class KinematicEstimate:
    theta_hat: float
    d_hat: float
    v_hat: float
    tau_hat: float
    variances: Dict[str, float] = field(default_factory=dict)
    failed: bool = False

    def beta_hat(self, cfg: SensingConfig) -> complex:
        return cfg.eta_rcs / (self.tau_hat * cfg.c)


def kin_to_radar(d: float, psi: float, v_radial: float, cfg: SensingConfig) -> RadarParams:
    """Delay, Doppler and reflection coefficient of a point target at range d."""
    tau = 2.0 * d / cfg.c
    mu = 2.0 * v_radial * cfg.f_c / cfg.c
    return RadarParams(tau=tau, mu=mu, beta=cfg.eta_rcs / (tau * cfg.c))


def _column(schedule_prev: Sequence[int], user: int) -> int:
    try:
        return list(schedule_prev).index(user)
    except ValueError:
        raise NotScheduledError(f"user {user} had no beam last epoch") from None


def error_variance(
    param: str,
    user: int,
    V_prev: np.ndarray,
    schedule_prev: Sequence[int],
    theta_true: float,
    beta_true: complex,
    cfg: SensingConfig,
) -> float:
    """Estimation error variance of one radar parameter for one user.

    V_prev holds last epoch's beamformers as columns, ordered like
    ``schedule_prev``. The interference sum uses the sensed user's own angle
    and reflection coefficient for every interfering beam. Returns ``inf``
    when the user's own beam puts no power on it.
    """
    k = _column(schedule_prev, user)
    a = steer(theta_true, V_prev.shape[0])
    gains = np.abs(a.conj() @ V_prev) ** 2
    g = cfg.echo_gain(beta_true)
    signal = g * gains[k]
    if signal <= 0.0:
        return math.inf
    interference = g * (gains.sum() - gains[k])
    return cfg.a(param) ** 2 * (interference + cfg.sigma_z2) / signal


def error_variances(
    V: np.ndarray, thetas: Sequence[float], betas: Sequence[complex], cfg: SensingConfig
) -> np.ndarray:
    """All users of a scheduled set at once, shape (|S|, 3) in PARAMS order."""
    A = steer_matrix(thetas, V.shape[0])
    gains = np.abs(A.conj().T @ V) ** 2  # [k, j] = |a(theta_k)^H v_j|^2
    g = cfg.gain * cfg.kappa ** 2 * np.abs(np.asarray(betas)) ** 2
    own = np.diag(gains)
    cross = gains.sum(axis=1) - own
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(own > 0, (g * cross + cfg.sigma_z2) / (g * own), np.inf)
    a2 = np.array([cfg.a(p) ** 2 for p in PARAMS])
    return base[:, None] * a2[None, :]


def sense(
    true_kin: UserKinematics,
    bs: BaseStation,
    V_prev: np.ndarray,
    schedule_prev: Sequence[int],
    user: int,
    cfg: SensingConfig,
    rng: np.random.Generator,
) -> KinematicEstimate:
    d, psi = bs.relative(true_kin.position)
    radar = kin_to_radar(d, psi, true_kin.radial_speed(bs), cfg)
    variances = {
        p: error_variance(p, user, V_prev, schedule_prev, psi, radar.beta, cfg) for p in PARAMS
    }
    if any(math.isinf(v) for v in variances.values()):
        logger.debug("sensing failure for user %d: no echo power", user)
        return KinematicEstimate(
            math.nan, math.nan, math.nan, math.nan, variances=variances, failed=True
        )
    noise = {p: float(rng.normal(0.0, math.sqrt(variances[p]))) for p in PARAMS}
    tau_hat = radar.tau + noise["tau"]
    mu_hat = radar.mu + noise["mu"]
    d_hat = max(tau_hat * cfg.c / 2.0, MIN_RANGE)
    return KinematicEstimate(
        theta_hat=psi + noise["theta"],
        d_hat=d_hat,
        v_hat=mu_hat * cfg.c / (2.0 * cfg.f_c),
        tau_hat=2.0 * d_hat / cfg.c,
        variances=variances,
    )


def locate(bs: BaseStation, est: KinematicEstimate) -> np.ndarray:
    """Position implied by range and broadside angle."""
    return bs.point_at(est.d_hat, est.theta_hat)
