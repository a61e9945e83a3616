"""
Per-cell PFZFG user scheduling.

Greedy proportional-fair selection over virtual zero-forcing beamformers
with equal power, using intra-cell CSI only. Users that have been left out
for T_s - 1 epochs are forced into the set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import RankDeficientError, SdUscbError, StarvationOverflowError
from .metrics import rate, update_avg_rate

logger = logging.getLogger(__name__)

R_HAT_INIT = 1e-3  # bits/s/Hz
ZF_COND_LIMIT = 1e10


@dataclass
class PfState:
    """Proportional-fairness bookkeeping of one cell.

    ``avg_rate`` is the running mean over all accounted epochs (0 for epochs
    where the user was idle); weights use it floored at ``r_floor``.
    ``last_scheduled`` is 0 for users that were never served.
    """

    avg_rate: np.ndarray
    last_scheduled: np.ndarray
    t_s: int = 5
    r_floor: float = R_HAT_INIT
    epochs: int = 0

    @classmethod
    def fresh(cls, n_users: int, t_s: int = 5, r_floor: float = R_HAT_INIT) -> "PfState":
        if t_s < 1:
            raise SdUscbError(f"t_s must be >= 1, got {t_s}")
        return cls(
            avg_rate=np.full(n_users, r_floor),
            last_scheduled=np.zeros(n_users, dtype=int),
            t_s=t_s,
            r_floor=r_floor,
        )

    def effective_rate(self) -> np.ndarray:
        return np.maximum(self.avg_rate, self.r_floor)

    def weights(self) -> np.ndarray:
        return 1.0 / self.effective_rate()

    def record(self, rates: np.ndarray, scheduled: Sequence[int], epoch: int) -> None:
        """Fold one epoch of realised rates (0 for idle users) into the state."""
        self.epochs += 1
        self.avg_rate = update_avg_rate(self.avg_rate, np.asarray(rates, dtype=float), self.epochs)
        for u in scheduled:
            self.last_scheduled[u] = epoch


@dataclass(frozen=True)
class ScheduleSet:
    users: Tuple[int, ...]
    cap: int

    def __post_init__(self):
        if len(self.users) > self.cap:
            raise SdUscbError(f"schedule of {len(self.users)} users exceeds cap {self.cap}")
        if len(set(self.users)) != len(self.users):
            raise SdUscbError(f"duplicate users in schedule {self.users}")

    def __len__(self):
        return len(self.users)

    def __iter__(self):
        return iter(self.users)

    def __contains__(self, user):
        return user in self.users

    def indicator(self, n_users: int) -> np.ndarray:
        q = np.zeros(n_users, dtype=int)
        q[list(self.users)] = 1
        return q


def zf_equal_power(H_S: np.ndarray, p_total: float) -> np.ndarray:
    """Zero-forcing beamformers for the columns of H_S, equal power per user.

    Raises RankDeficientError when the Gram matrix cannot be inverted.
    """
    n_tx, s = H_S.shape
    if s == 0:
        return np.zeros((n_tx, 0), dtype=complex)
    if s > n_tx:
        raise RankDeficientError(f"{s} users exceed {n_tx} antennas")
    gram = H_S.conj().T @ H_S
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > ZF_COND_LIMIT:
        raise RankDeficientError("channel Gram matrix is singular")
    V = H_S @ np.linalg.inv(gram)
    norms = np.linalg.norm(V, axis=0)
    return V / norms * np.sqrt(p_total / s)


def _intra_rates(H_S: np.ndarray, V: np.ndarray, noise_var: float) -> np.ndarray:
    gains = np.abs(H_S.conj().T @ V) ** 2  # [i, j] = |h_i^H v_j|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return rate(signal / (interference + noise_var))


def pf_metric(
    S: Sequence[int],
    H: np.ndarray,
    pf: PfState,
    noise_var: float,
    p_total: float = 1.0,
    columns: Optional[dict] = None,
) -> float:
    """Sum over S of ZF rate divided by the user's average rate.

    ``columns`` maps user id to the column of H; identity when omitted.
    Rank-deficient sets score -inf.
    """
    if len(S) == 0:
        return 0.0
    cols = [u if columns is None else columns[u] for u in S]
    H_S = H[:, cols]
    try:
        V = zf_equal_power(H_S, p_total)
    except RankDeficientError:
        return -np.inf
    rates = _intra_rates(H_S, V, noise_var)
    return float(np.sum(rates * pf.weights()[list(S)]))


def starving_users(pf: PfState, epoch: int, users: Optional[Sequence[int]] = None) -> List[int]:
    """Users idle for the past T_s - 1 epochs, longest-starved first, then by id."""
    pool = range(len(pf.last_scheduled)) if users is None else users
    starving = [u for u in pool if epoch - pf.last_scheduled[u] >= pf.t_s]
    return sorted(starving, key=lambda u: (pf.last_scheduled[u], u))


def pfzfg(
    cell_users: Sequence[int],
    H_intra: np.ndarray,
    pf: PfState,
    cap: int,
    *,
    epoch: int,
    noise_var: float,
    p_total: float = 1.0,
    forced: Optional[Sequence[int]] = None,
) -> ScheduleSet:
    """Greedy PF scheduling with starvation protection.

    H_intra holds the channels of ``cell_users`` as columns, in the same
    order. ``forced`` overrides the starving set K_s when given.
    """
    n_tx = H_intra.shape[0]
    limit = min(cap, n_tx)
    columns = {u: i for i, u in enumerate(cell_users)}
    forced_set = list(forced) if forced is not None else starving_users(pf, epoch, cell_users)
    if len(forced_set) > limit:
        raise StarvationOverflowError(
            f"{len(forced_set)} starving users exceed min(cap, N_t) = {limit}"
        )

    S = list(forced_set)
    current = pf_metric(S, H_intra, pf, noise_var, p_total, columns)
    while len(S) < limit:
        best_user, best_metric = None, -np.inf
        for u in sorted(cell_users):
            if u in S:
                continue
            m = pf_metric(S + [u], H_intra, pf, noise_var, p_total, columns)
            if m > best_metric:
                best_user, best_metric = u, m
        if best_user is None or not best_metric > current:
            break
        S.append(best_user)
        current = best_metric

    logger.debug("PFZFG epoch %d: forced=%s schedule=%s metric=%.4g", epoch, forced_set, S, current)
    return ScheduleSet(tuple(S), limit)


def schedule_all(cell_users: Sequence[int]) -> ScheduleSet:
    """Every user of the cell, in id order."""
    users = tuple(sorted(cell_users))
    return ScheduleSet(users, max(len(users), 1))
