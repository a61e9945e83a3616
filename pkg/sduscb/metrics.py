"""
Ground-truth communication metrics and the leakage-approximation verifier.

Rates are in bits/s/Hz (log2). The verifier works in nats, matching the
Lipschitz constant of ln(1 + s / (x + sigma^2)) that its bounds use.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .channel import gen_rayleigh
from .errors import TheoremInputError

logger = logging.getLogger(__name__)

PFR_FLOOR = 1e-3  # bits/s/Hz; average rates below this are floored inside the log


@dataclass(frozen=True)
class RateRecord:
    """Network-wide rates of one epoch, users of all cells concatenated in cell order."""

    epoch: int
    rates: np.ndarray
    avg_rates: np.ndarray
    pfr: float

    def __post_init__(self):
        if np.any(np.asarray(self.rates) < 0) or np.any(np.asarray(self.avg_rates) < 0):
            raise ValueError(f"epoch {self.epoch}: rates must be nonnegative")

    @classmethod
    def from_cells(cls, epoch: int, rates: Sequence[np.ndarray], avg_rates: Sequence[np.ndarray],
                   floor: float = PFR_FLOOR) -> "RateRecord":
        return cls(
            epoch=epoch,
            rates=np.concatenate([np.asarray(r, dtype=float) for r in rates]) if rates else np.zeros(0),
            avg_rates=np.concatenate([np.asarray(r, dtype=float) for r in avg_rates]) if avg_rates else np.zeros(0),
            pfr=network_pfr(avg_rates, floor),
        )


def rate(sinr):
    """log2(1 + sinr), elementwise."""
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def update_avg_rate(avg_prev, new_rate, n: int):
    """Running mean after the n-th epoch: ((n-1) avg_prev + new_rate) / n."""
    if n < 1:
        raise ValueError(f"epoch count must be >= 1, got {n}")
    return ((n - 1) * np.asarray(avg_prev, dtype=float) + np.asarray(new_rate, dtype=float)) / n


def network_pfr(avg_rates: Sequence[np.ndarray], floor: float = PFR_FLOOR) -> float:
    """Sum over cells and users of log(R_hat)."""
    total = 0.0
    for cell in avg_rates:
        total += float(np.sum(np.log(np.maximum(np.asarray(cell, dtype=float), floor))))
    return total


def _received(channels, m, cell, user, beams):
    """|h^{m, user}^H v|^2 for every column v of ``beams``."""
    h = channels[m][cell][:, user]
    return np.abs(h.conj() @ beams) ** 2


def true_sinr(
    cell: int,
    user: int,
    beamformers: Sequence[np.ndarray],
    schedules: Sequence[Sequence[int]],
    channels,
    sigma_c2: float,
) -> float:
    """SINR of one user against every cell's applied beamformers.

    ``channels[m][l]`` is the (N_t, U_l) matrix of channels from BS m to the
    users of cell l; ``beamformers[l]`` has one column per user in
    ``schedules[l]``. Unscheduled users get 0.
    """
    schedule = list(schedules[cell])
    if user not in schedule:
        return 0.0
    k = schedule.index(user)
    own = _received(channels, cell, cell, user, beamformers[cell])
    signal = own[k]
    intra = own.sum() - signal
    inter = 0.0
    for m in range(len(beamformers)):
        if m == cell or beamformers[m].shape[1] == 0:
            continue
        inter += _received(channels, m, cell, user, beamformers[m]).sum()
    return float(signal / (intra + inter + sigma_c2))


def sinr_matrix(
    beamformers: Sequence[np.ndarray],
    schedules: Sequence[Sequence[int]],
    channels,
    sigma_c2: float,
    users_per_cell: Sequence[int],
) -> list:
    """Per-cell arrays of true SINR for every user (0 when unscheduled)."""
    L = len(beamformers)
    out = []
    for cell in range(L):
        sinr = np.zeros(users_per_cell[cell])
        schedule = list(schedules[cell])
        if schedule:
            H_own = channels[cell][cell][:, schedule]
            own = np.abs(H_own.conj().T @ beamformers[cell]) ** 2
            signal = np.diag(own)
            interference = own.sum(axis=1) - signal
            for m in range(L):
                if m == cell or beamformers[m].shape[1] == 0:
                    continue
                H_cross = channels[m][cell][:, schedule]
                interference = interference + (np.abs(H_cross.conj().T @ beamformers[m]) ** 2).sum(axis=1)
            sinr[schedule] = signal / (interference + sigma_c2)
        out.append(sinr)
    return out


@dataclass(frozen=True)
class Theorem1Report:
    M: int
    s_size: int
    P: float
    sigma_c2: float
    n_draws: int
    n_tx: int
    z_bar: float
    mean_abs_err_slinr: float
    mean_abs_err_salinr: float
    mean_abs_err_salinr_gamma: float
    bound_slinr: float
    bound_salinr: float
    mean_ici: float
    var_ici: float
    mse_ici_slinr: float
    mse_ici_salinr: float
    mse_ici_salinr_gamma: float
    var_avg_leakage: float

    @property
    def expected_mse_salinr(self) -> float:
        return self.M * self.P ** 2 * (1.0 + 1.0 / self.s_size)

    @property
    def salinr_tighter(self) -> bool:
        return bool(self.mean_abs_err_salinr < self.mean_abs_err_slinr)

    @property
    def bounds_hold(self) -> bool:
        return bool(
            self.mean_abs_err_slinr <= self.bound_slinr
            and self.mean_abs_err_salinr <= self.bound_salinr
        )

    def to_dict(self) -> dict:
        """Plain Python scalars only, ready for json."""
        d = {k: (int(v) if isinstance(v, (int, np.integer)) else float(v)) for k, v in asdict(self).items()}
        d.update(
            expected_mean_ici=float(self.M * self.P),
            expected_var_ici=float(self.M * self.P ** 2),
            expected_mse_salinr=float(self.expected_mse_salinr),
            expected_var_avg_leakage=float(self.M * self.P ** 2 / self.s_size),
            salinr_tighter=self.salinr_tighter,
            bounds_hold=self.bounds_hold,
        )
        return d


def z_bar(P: float, sigma_c2: float) -> float:
    """sqrt(E[Z^2]) for an Exp(P) signal power, Z = s / (sigma^2 (sigma^2 + s))."""

    def integrand(s):
        return (s / (sigma_c2 * (sigma_c2 + s))) ** 2 * math.exp(-s / P) / P

    value, _ = integrate.quad(integrand, 0.0, math.inf, limit=200)
    return math.sqrt(value)


def _orthonormal_beams(n_tx: int, count: int, P: float, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(gen_rayleigh(count, rng, size=(n_tx,)))
    return q[:, :count] * math.sqrt(P)


def theorem1_mc(
    M: int,
    s_size: int,
    P: float,
    sigma_c2: float,
    n_draws: int,
    rng: np.random.Generator,
    *,
    n_tx: Optional[int] = None,
    batch: int = 5000,
) -> Theorem1Report:
    """Monte Carlo comparison of SLINR and SALINR interference surrogates.

    One user with |S| - 1 co-scheduled beams in its own cell and M foreign
    users, all channels i.i.d. Rayleigh and all beamformers fixed. The own
    cell's beams are orthonormal (scaled to power P) so the |S| per-beam
    leakage sums are independent; the true interference comes from M
    independent foreign beams. Intra-cell interference is zero.
    """
    if s_size < 1:
        raise TheoremInputError(f"|S| must be >= 1, got {s_size}")
    if M < 1:
        raise TheoremInputError(f"M must be >= 1, got {M}")
    if n_draws < 1:
        raise TheoremInputError(f"draws must be >= 1, got {n_draws}")
    if P <= 0 or sigma_c2 <= 0:
        raise TheoremInputError("P and sigma_c2 must be > 0")
    n_tx = n_tx or max(s_size, 2)
    if n_tx < s_size:
        raise TheoremInputError(f"n_tx={n_tx} cannot hold {s_size} orthonormal beams")

    V = _orthonormal_beams(n_tx, s_size, P, rng)
    W = gen_rayleigh(n_tx, rng, size=(M,))
    W = W / np.linalg.norm(W, axis=1, keepdims=True) * math.sqrt(P)

    sums = dict.fromkeys(
        ("err1", "err2", "err2g", "ici", "ici2", "eps1", "eps2", "eps2g", "lt", "lt2"), 0.0
    )
    done = 0
    while done < n_draws:
        b = min(batch, n_draws - done)
        h = gen_rayleigh(n_tx, rng, size=(b,))
        g = gen_rayleigh(n_tx, rng, size=(b, M))
        f = gen_rayleigh(n_tx, rng, size=(b, M))

        signal = np.abs(h.conj() @ V[:, 0]) ** 2
        ici = (np.abs(np.einsum("btn,tn->bt", g.conj(), W)) ** 2).sum(axis=1)
        leak = (np.abs(f.conj() @ V) ** 2).sum(axis=1)  # (b, |S|)
        l_hat = leak[:, 0]
        l_tilde = leak.mean(axis=1)
        l_gamma = rng.gamma(M, P / math.sqrt(s_size), size=b)

        def r(x):
            return np.log1p(signal / (x + sigma_c2))

        r_true = r(ici)
        sums["err1"] += np.abs(r(l_hat) - r_true).sum()
        sums["err2"] += np.abs(r(l_tilde) - r_true).sum()
        sums["err2g"] += np.abs(r(l_gamma) - r_true).sum()
        sums["ici"] += ici.sum()
        sums["ici2"] += (ici ** 2).sum()
        sums["eps1"] += ((l_hat - ici) ** 2).sum()
        sums["eps2"] += ((l_tilde - ici) ** 2).sum()
        sums["eps2g"] += ((l_gamma - ici) ** 2).sum()
        sums["lt"] += l_tilde.sum()
        sums["lt2"] += (l_tilde ** 2).sum()
        done += b

    n = float(n_draws)
    mean_ici = sums["ici"] / n
    mean_lt = sums["lt"] / n
    zb = z_bar(P, sigma_c2)
    report = Theorem1Report(
        M=M,
        s_size=s_size,
        P=P,
        sigma_c2=sigma_c2,
        n_draws=n_draws,
        n_tx=n_tx,
        z_bar=zb,
        mean_abs_err_slinr=sums["err1"] / n,
        mean_abs_err_salinr=sums["err2"] / n,
        mean_abs_err_salinr_gamma=sums["err2g"] / n,
        bound_slinr=P * zb * math.sqrt(2 * M),
        bound_salinr=P * zb * math.sqrt(M * (1 + 1 / s_size)),
        mean_ici=mean_ici,
        var_ici=max(sums["ici2"] / n - mean_ici ** 2, 0.0),
        mse_ici_slinr=sums["eps1"] / n,
        mse_ici_salinr=sums["eps2"] / n,
        mse_ici_salinr_gamma=sums["eps2g"] / n,
        var_avg_leakage=max(sums["lt2"] / n - mean_lt ** 2, 0.0),
    )
    logger.info(
        "theorem1 M=%d |S|=%d: |err| slinr=%.4g salinr=%.4g (bounds %.4g / %.4g)",
        M, s_size, report.mean_abs_err_slinr, report.mean_abs_err_salinr,
        report.bound_slinr, report.bound_salinr,
    )
    return report
