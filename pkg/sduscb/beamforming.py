"""
Per-cell ISAC coordinated beamforming (DualOpt).

The solver maximises the PF-weighted sum of leakage-based rates of one cell
under a power budget and per-user sensing-accuracy constraints:

  * outer loop: FP auxiliaries xi (Lagrangian dual transform) and zeta
    (quadratic transform) in closed form, SCA reference refreshed;
  * inner loop: projected gradient on the dual variables (lambda for power,
    mu_k for sensing) with beamformers in semi-closed form, the per-user
    inverse applied through a rank-one Woodbury update of a shared inverse;
  * the multipliers are then polished, each mu_k in closed form and lambda
    by a scalar root search, alternating a few rounds so the
    returned beamformers meet the budget with complementary slackness.

Internally the problem is rescaled to unit power and unit noise; beamformers
and dual variables are reported in physical units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .channel import gen_rayleigh, steer, steer_matrix
from .errors import SdUscbError
from .sensing import SensingConfig, error_variances

logger = logging.getLogger(__name__)

LEAKAGE_MODES = ("salinr", "slinr", "none")


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 25
    tol_outer: float = 1e-5
    max_inner: int = 200
    tol_inner: float = 1e-5
    step_lambda: float = 0.5
    step_mu: float = 0.5
    lambda0: float = 1.0
    lambda_min: float = 1e-9
    mu_max: float = 1e8
    tol_feas: float = 1e-3
    monotone_tol: float = 1e-6
    polish_rounds: int = 3
    woodbury: bool = True
    leakage: str = "salinr"

    def __post_init__(self):
        if self.leakage not in LEAKAGE_MODES:
            raise SdUscbError(f"leakage must be one of {LEAKAGE_MODES}, got {self.leakage!r}")
        if self.max_outer < 1 or self.max_inner < 1 or self.polish_rounds < 0:
            raise SdUscbError("iteration limits must be >= 1 and polish_rounds >= 0")


@dataclass(frozen=True)
class BfProblem:
    """One cell's beamforming instance.

    ``h`` holds the intra-cell CSI of the scheduled users as columns;
    ``leak_sum`` is sum of h_t h_t^H over the other cells' scheduled users
    (their outgoing channels from this BS), so D = leak_sum / |S|.
    ``c_bar = inf`` removes the sensing constraints.
    """

    h: np.ndarray
    leak_sum: np.ndarray
    avg_rate: np.ndarray
    power: float
    noise: float
    theta_hat: np.ndarray
    beta_hat: np.ndarray
    sensing: SensingConfig
    c_bar: float = 1.0

    def __post_init__(self):
        if self.power <= 0 or self.noise <= 0:
            raise SdUscbError("power and noise must be > 0")
        if not self.c_bar > 0:
            raise SdUscbError(f"c_bar must be > 0, got {self.c_bar}")
        n, k = self.h.shape
        if self.leak_sum.shape != (n, n):
            raise SdUscbError(f"leakage matrix must be {n}x{n}")
        if not (len(self.avg_rate) == len(self.theta_hat) == len(self.beta_hat) == k):
            raise SdUscbError("per-user arrays must match the number of CSI columns")
        if np.any(np.asarray(self.avg_rate) <= 0):
            raise SdUscbError("average rates must be > 0")

    @property
    def n_tx(self) -> int:
        return self.h.shape[0]

    @property
    def n_users(self) -> int:
        return self.h.shape[1]

    @property
    def D(self) -> np.ndarray:
        return self.leak_sum / max(self.n_users, 1)

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / np.asarray(self.avg_rate, dtype=float)

    @property
    def sensing_active(self) -> bool:
        return math.isfinite(self.c_bar)

    def echo_gains(self) -> np.ndarray:
        """G kappa^2 |beta_hat|^2 per user."""
        s = self.sensing
        return s.gain * s.kappa ** 2 * np.abs(np.asarray(self.beta_hat)) ** 2

    def sensing_coeffs(self) -> np.ndarray:
        """c_k such that C_k = c_k a(theta_k) a(theta_k)^H; zero when inactive."""
        if not self.sensing_active:
            return np.zeros(self.n_users)
        return self.c_bar * self.echo_gains() / self.sensing.a_bar ** 2

    def steering(self) -> np.ndarray:
        return steer_matrix(self.theta_hat, self.n_tx)

    def subset(self, keep: Sequence[int]) -> "BfProblem":
        keep = list(keep)
        return replace(
            self,
            h=self.h[:, keep],
            avg_rate=np.asarray(self.avg_rate)[keep],
            theta_hat=np.asarray(self.theta_hat)[keep],
            beta_hat=np.asarray(self.beta_hat)[keep],
        )

    def normalized(self) -> "BfProblem":
        """Same instance with unit power and unit noise."""
        scale = self.power / self.noise
        return replace(
            self,
            h=self.h * math.sqrt(scale),
            leak_sum=self.leak_sum * scale,
            power=1.0,
            noise=1.0,
            sensing=replace(self.sensing, sigma_z2=self.sensing.sigma_z2 / self.power),
        )


@dataclass(frozen=True)
class FpAux:
    xi: np.ndarray
    zeta: np.ndarray


@dataclass(frozen=True)
class DualVars:
    lam: float
    mu: np.ndarray

    def __post_init__(self):
        if self.lam < 0 or np.any(np.asarray(self.mu) < 0):
            raise SdUscbError("dual variables must be nonnegative")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.lam], np.asarray(self.mu, dtype=float)])


@dataclass
class BfSolution:
    beamformers: np.ndarray
    users: Tuple[int, ...]
    duals: DualVars
    fp: FpAux
    objective_trace: List[float]
    converged: bool
    outer_iterations: int
    inner_iterations: List[int] = field(default_factory=list)
    feasible: bool = True
    status: str = "converged"
    design_sinr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sensing_variances: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    dropped: Tuple[int, ...] = ()
    regularized: bool = False

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.beamformers) ** 2))


# --- leakage and SINR surrogates ---------------------------------------------

def leakage_cov(inter_csi: np.ndarray, own_sched_count: int) -> np.ndarray:
    """D = sum of h h^H over foreign scheduled users, divided by |S|."""
    if own_sched_count < 1:
        raise SdUscbError("leakage covariance needs at least one own scheduled user")
    H = np.asarray(inter_csi)
    return (H @ H.conj().T) / own_sched_count


def avg_leakage(V: np.ndarray, leak_sum: np.ndarray) -> float:
    """Arithmetic mean over own beams of the power leaked to foreign users."""
    s = V.shape[1]
    if s == 0:
        return 0.0
    return float(np.real(np.einsum("ij,ik,kj->", V.conj(), leak_sum, V))) / s


def slinr_leakage(k: int, V: np.ndarray, inter_csi: np.ndarray) -> float:
    """Power leaked by beam k to every foreign user."""
    return float(np.sum(np.abs(np.asarray(inter_csi).conj().T @ V[:, k]) ** 2))


def salinr(k: int, V: np.ndarray, h: np.ndarray, D: np.ndarray, sigma_c2: float) -> float:
    """SALINR of user k; ``h`` has the own cell's channels as columns."""
    gains = np.abs(h[:, k].conj() @ V) ** 2
    l_tilde = float(np.real(np.einsum("ij,ik,kj->", V.conj(), D, V)))
    return float(gains[k] / (gains.sum() - gains[k] + l_tilde + sigma_c2))


def _denominators(V: np.ndarray, problem: BfProblem, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """(|h_k^H v_k|^2, total received + leakage + noise) per user."""
    gains = np.abs(problem.h.conj().T @ V) ** 2
    signal = np.diag(gains).copy()
    den = gains.sum(axis=1) + problem.noise
    if mode == "salinr":
        den = den + float(np.real(np.einsum("ij,ik,kj->", V.conj(), problem.D, V)))
    elif mode == "slinr":
        den = den + np.real(np.einsum("ij,ik,kj->j", V.conj(), problem.leak_sum, V))
    return signal, den


def surrogate_sinr(V: np.ndarray, problem: BfProblem, mode: str = "salinr") -> np.ndarray:
    signal, den = _denominators(V, problem, mode)
    return signal / (den - signal)


def surrogate_objective(V: np.ndarray, problem: BfProblem, mode: str = "salinr") -> float:
    """PF-weighted sum of ln(1 + surrogate SINR)."""
    return float(np.sum(problem.weights * np.log1p(surrogate_sinr(V, problem, mode))))


def update_xi(V: np.ndarray, problem: BfProblem, mode: str = "salinr") -> np.ndarray:
    return surrogate_sinr(V, problem, mode)


def update_zeta(V: np.ndarray, xi: np.ndarray, problem: BfProblem, mode: str = "salinr") -> np.ndarray:
    """Maximiser over zeta >= 0 of 2 zeta sqrt((1+xi)/R) Re{h^H v} - zeta^2 den."""
    _, den = _denominators(V, problem, mode)
    re = np.maximum(np.real(np.einsum("ij,ij->j", problem.h.conj(), V)), 0.0)
    return np.sqrt((1.0 + xi) * problem.weights) * re / den


def fp_objective(V: np.ndarray, fp: FpAux, problem: BfProblem, mode: str = "salinr") -> float:
    """Transformed objective: sum (ln(1+xi) - xi)/R + sum f_k(V, xi, zeta)."""
    _, den = _denominators(V, problem, mode)
    re = np.real(np.einsum("ij,ij->j", problem.h.conj(), V))
    w = problem.weights
    f = 2 * fp.zeta * np.sqrt((1 + fp.xi) * w) * re - fp.zeta ** 2 * den
    return float(np.sum(w * (np.log1p(fp.xi) - fp.xi)) + np.sum(f))


def align_phases(V: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Rotate each beam so h_k^H v_k is real and nonnegative."""
    inner = np.einsum("ij,ij->j", h.conj(), V)
    rot = np.where(np.abs(inner) > 0, np.exp(-1j * np.angle(inner)), 1.0)
    return V * rot[None, :]


# --- sensing constraint pieces ----------------------------------------------

def sensing_matrix_k(problem: BfProblem, k: int) -> np.ndarray:
    a = steer(problem.theta_hat[k], problem.n_tx)
    return problem.sensing_coeffs()[k] * np.outer(a, a.conj())


def sca_bound(v: np.ndarray, v_ref: np.ndarray, C: np.ndarray) -> float:
    """First-order minorant of v^H C v at v_ref."""
    Cv_ref = C @ v_ref
    return float(2 * np.real(Cv_ref.conj() @ v) - np.real(v_ref.conj() @ Cv_ref))


def _sca_bounds(V: np.ndarray, V_ref: np.ndarray, A: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Vectorised sca_bound for rank-one C_k = c_k a_k a_k^H."""
    av = np.einsum("ij,ij->j", A.conj(), V)
    ar = np.einsum("ij,ij->j", A.conj(), V_ref)
    return c * (2 * np.real(np.conj(ar) * av) - np.abs(ar) ** 2)


def sensing_phi(V: np.ndarray, problem: BfProblem) -> np.ndarray:
    """phi_k: echo interference from the other beams plus echo noise."""
    A = problem.steering()
    gains = np.abs(A.conj().T @ V) ** 2
    cross = gains.sum(axis=1) - np.diag(gains)
    return problem.echo_gains() * cross + problem.sensing.sigma_z2


# --- beamformer update -------------------------------------------------------

def shared_matrix(fp: FpAux, problem: BfProblem, mode: str = "salinr") -> np.ndarray:
    """A_tilde = sum zeta^2 h h^H (+ (sum zeta^2) D for SALINR)."""
    z2 = fp.zeta ** 2
    A = (problem.h * z2[None, :]) @ problem.h.conj().T
    if mode == "salinr":
        A = A + z2.sum() * problem.D
    return A


def _rhs(fp: FpAux, duals: DualVars, problem: BfProblem, V_ref: np.ndarray,
         A: np.ndarray, c: np.ndarray) -> np.ndarray:
    scale = fp.zeta * np.sqrt((1 + fp.xi) * problem.weights)
    Z = problem.h * scale[None, :]
    ar = np.einsum("ij,ij->j", A.conj(), V_ref)
    return Z + A * (np.asarray(duals.mu) * c * ar)[None, :]


def woodbury_apply(B: np.ndarray, A: np.ndarray, Z: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Columns (M + coef_k a_k a_k^H)^{-1} z_k from B = M^{-1}, O(N^2) per user."""
    BA = B @ A
    BZ = B @ Z
    ahy = np.einsum("ij,ij->j", A.conj(), BZ)
    ahu = np.real(np.einsum("ij,ij->j", A.conj(), BA))
    return BZ - BA * (coef * ahy / (1.0 + coef * ahu))[None, :]


def direct_apply(M: np.ndarray, A: np.ndarray, Z: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Same as woodbury_apply with one dense O(N^3) solve per user, batched."""
    K = M[None, :, :] + np.asarray(coef)[:, None, None] * np.einsum("ik,jk->kij", A, A.conj())
    return np.linalg.solve(K, Z.T[:, :, None])[:, :, 0].T


def update_operands(duals: DualVars, fp: FpAux, problem: BfProblem, V_ref: np.ndarray,
                    *, mode: str = "salinr", lambda_min: float = 1e-9):
    """(A_tilde + lambda I, steering columns, right-hand sides z_k, mu_k c_k)."""
    A = problem.steering()
    c = problem.sensing_coeffs()
    coef = np.asarray(duals.mu, dtype=float) * c
    Z = _rhs(fp, duals, problem, V_ref, A, c)
    lam = max(duals.lam, lambda_min)
    base = shared_matrix(fp, problem, mode) + lam * np.eye(problem.n_tx)
    return base, A, Z, coef


def bf_from_duals(duals: DualVars, fp: FpAux, problem: BfProblem, V_ref: np.ndarray,
                  *, mode: str = "salinr", woodbury: bool = True,
                  lambda_min: float = 1e-9) -> np.ndarray:
    """v_k = (A_tilde + lambda I + mu_k C_k)^{-1} z_k for every scheduled user."""
    base, A, Z, coef = update_operands(duals, fp, problem, V_ref, mode=mode, lambda_min=lambda_min)

    if mode == "slinr":
        # leakage term is user-specific, no shared inverse
        V = np.empty_like(Z, dtype=complex)
        for k in range(problem.n_users):
            K = base + fp.zeta[k] ** 2 * problem.leak_sum + coef[k] * np.outer(A[:, k], A[:, k].conj())
            V[:, k] = np.linalg.solve(K, Z[:, k])
        return V
    if woodbury:
        return woodbury_apply(np.linalg.inv(base), A, Z, coef)
    return direct_apply(base, A, Z, coef)


def dual_objective(duals: DualVars, fp: FpAux, problem: BfProblem, V_ref: np.ndarray,
                   V: Optional[np.ndarray] = None, **kwargs) -> float:
    """g = sum z_k^H (A_k + lambda I)^{-1} z_k + lambda P."""
    A = problem.steering()
    Z = _rhs(fp, duals, problem, V_ref, A, problem.sensing_coeffs())
    if V is None:
        V = bf_from_duals(duals, fp, problem, V_ref, **kwargs)
    return float(np.sum(np.real(np.einsum("ij,ij->j", Z.conj(), V))) + duals.lam * problem.power)


def dual_step(duals: DualVars, V: np.ndarray, problem: BfProblem, V_ref: np.ndarray,
              step_sizes: Tuple[float, np.ndarray]) -> DualVars:
    """Projected gradient step on (lambda, mu)."""
    alpha_lam, alpha_mu = step_sizes
    power = float(np.sum(np.abs(V) ** 2))
    lam = max(duals.lam - alpha_lam * (problem.power - power), 0.0)
    if not problem.sensing_active:
        return DualVars(lam, np.zeros(problem.n_users))
    psi = _sca_bounds(V, V_ref, problem.steering(), problem.sensing_coeffs())
    phi = sensing_phi(V, problem)
    mu = np.maximum(np.asarray(duals.mu) - np.asarray(alpha_mu) * (psi - phi), 0.0)
    return DualVars(lam, mu)


# --- solver ------------------------------------------------------------------

def _polish_lambda(duals: DualVars, fp: FpAux, problem: BfProblem, V_ref: np.ndarray,
                   cfg: SolverConfig, mode: str) -> DualVars:
    """Re-solve lambda so that the power constraint holds with complementary slackness."""

    def excess(lam):
        V = bf_from_duals(DualVars(lam, duals.mu), fp, problem, V_ref, mode=mode,
                          woodbury=cfg.woodbury, lambda_min=cfg.lambda_min)
        return float(np.sum(np.abs(V) ** 2)) - problem.power

    if excess(0.0) <= 0.0:
        return DualVars(0.0, duals.mu)
    Z = _rhs(fp, duals, problem, V_ref, problem.steering(), problem.sensing_coeffs())
    hi = math.sqrt(float(np.sum(np.abs(Z) ** 2)) / problem.power) + cfg.lambda_min
    while excess(hi) > 0.0:
        hi *= 2.0
    lam = brentq(excess, cfg.lambda_min, hi, xtol=1e-14, rtol=1e-12, maxiter=200)
    return DualVars(float(lam), duals.mu)


def _polish_mu(duals: DualVars, fp: FpAux, problem: BfProblem, V_ref: np.ndarray,
               cfg: SolverConfig, mode: str) -> DualVars:
    """Set each mu_k so its linearised sensing constraint is tight, or mu_k = 0 if slack.

    With lambda and the other beams fixed, a_k^H v_k = (p + t q r) / (1 + t q)
    for t = mu_k c_k, p = a^H B z0, q = a^H B a and r = a^H v_ref, so the root
    is closed form. Users are swept in order and each new beam feeds the
    echo interference of the next.
    """
    if not problem.sensing_active:
        return duals
    base, A, _, _ = update_operands(duals, fp, problem, V_ref, mode=mode, lambda_min=cfg.lambda_min)
    c = problem.sensing_coeffs()
    echo = problem.echo_gains()
    Z0 = problem.h * (fp.zeta * np.sqrt((1 + fp.xi) * problem.weights))[None, :]
    ref = np.einsum("ij,ij->j", A.conj(), V_ref)
    shared = None if mode == "slinr" else np.linalg.inv(base)
    cap = cfg.mu_max * max(float(np.linalg.norm(shared_matrix(fp, problem, mode), 2)), 1.0)

    mu = np.array(duals.mu, dtype=float)
    V = bf_from_duals(duals, fp, problem, V_ref, mode=mode, woodbury=cfg.woodbury,
                      lambda_min=cfg.lambda_min)
    for k in np.flatnonzero(c > 0):
        B = shared if shared is not None else np.linalg.inv(base + fp.zeta[k] ** 2 * problem.leak_sum)
        a, r = A[:, k], ref[k]
        Bz, Ba = B @ Z0[:, k], B @ a
        p = a.conj() @ Bz
        q = float(np.real(a.conj() @ Ba))
        cross = np.abs(a.conj() @ V) ** 2
        phi = echo[k] * (cross.sum() - cross[k]) + problem.sensing.sigma_z2
        r0, r_inf = float(np.real(np.conj(r) * p)), abs(r) ** 2
        target = 0.5 * (phi / c[k] + r_inf)
        if r0 >= target:
            t = 0.0
        elif r_inf <= target:
            # unreachable at this reference; push past the divergence cap
            t = 2.0 * cap
        else:
            t = (target - r0) / (q * (r_inf - target))
        mu[k] = t / c[k]
        y = Bz + t * r * Ba
        V[:, k] = y - Ba * (t * (a.conj() @ y) / (1.0 + t * q))
    return DualVars(duals.lam, mu)


def _settle_duals(duals: DualVars, fp: FpAux, problem: BfProblem, V_ref: np.ndarray,
                  cfg: SolverConfig, mode: str) -> DualVars:
    """Alternate the mu and lambda polishes until the multipliers stop moving."""
    duals = _polish_lambda(duals, fp, problem, V_ref, cfg, mode)
    if not problem.sensing_active:
        return duals
    for _ in range(cfg.polish_rounds):
        prev = duals.as_vector()
        duals = _polish_mu(duals, fp, problem, V_ref, cfg, mode)
        duals = _polish_lambda(duals, fp, problem, V_ref, cfg, mode)
        if np.linalg.norm(duals.as_vector() - prev) <= cfg.tol_inner * max(np.linalg.norm(prev), 1e-12):
            break
    return duals


def _matched_filters(h: np.ndarray, power: float) -> np.ndarray:
    norms = np.linalg.norm(h, axis=0)
    return h / norms[None, :] * math.sqrt(power / h.shape[1])


def _inner_loop(duals: DualVars, fp: FpAux, prob: BfProblem, V_ref: np.ndarray,
                cfg: SolverConfig, mode: str) -> Tuple[DualVars, int]:
    kw = dict(mode=mode, woodbury=cfg.woodbury, lambda_min=cfg.lambda_min)
    scale = max(float(np.linalg.norm(shared_matrix(fp, prob, mode), 2)), 1.0)
    alpha_lam = cfg.step_lambda * scale / prob.power
    c = prob.sensing_coeffs()
    if prob.sensing_active:
        phi_ref = sensing_phi(V_ref, prob)
        # users with no echo have C_k = 0 and keep mu_k = 0
        alpha_mu = np.where(c > 0, cfg.step_mu * scale / np.maximum(c * phi_ref, 1e-300), 0.0)
    else:
        alpha_mu = np.zeros(prob.n_users)
    floor = 1e-12 * alpha_lam

    V = bf_from_duals(duals, fp, prob, V_ref, **kw)
    g = dual_objective(duals, fp, prob, V_ref, V)
    it = 0
    for it in range(1, cfg.max_inner + 1):
        new = dual_step(duals, V, prob, V_ref, (alpha_lam, alpha_mu))
        V_new = bf_from_duals(new, fp, prob, V_ref, **kw)
        g_new = dual_objective(new, fp, prob, V_ref, V_new)
        if g_new > g + 1e-12 * max(abs(g), 1.0):
            alpha_lam *= 0.5
            alpha_mu = alpha_mu * 0.5
            if alpha_lam < floor:
                break
            continue
        old_vec, new_vec = duals.as_vector(), new.as_vector()
        change = np.linalg.norm(new_vec - old_vec) / max(np.linalg.norm(old_vec), 1e-12)
        duals, V, g = new, V_new, g_new
        if change < cfg.tol_inner:
            break
    return duals, it


def solve(problem: BfProblem, cfg: Optional[SolverConfig] = None) -> BfSolution:
    """DualOpt beamforming for one cell."""
    cfg = cfg or SolverConfig()
    mode = cfg.leakage
    norms = np.linalg.norm(problem.h, axis=0)
    keep = [k for k in range(problem.n_users) if norms[k] > 0]
    dropped = tuple(k for k in range(problem.n_users) if norms[k] == 0)
    if dropped:
        logger.warning("dropping users %s with zero CSI", dropped)
    if not keep:
        raise SdUscbError("no user with nonzero CSI to beamform")
    sub = problem.subset(keep) if dropped else problem
    prob = sub.normalized()
    K = prob.n_users

    V = align_phases(_matched_filters(prob.h, prob.power), prob.h)
    duals = DualVars(cfg.lambda0, np.zeros(K))
    obj = surrogate_objective(V, prob, mode)
    trace = [obj]
    inner_counts: List[int] = []
    status, converged, regularized = "max_iter", False, False

    for _ in range(cfg.max_outer):
        xi = update_xi(V, prob, mode)
        zeta = update_zeta(V, xi, prob, mode)
        fp = FpAux(xi, zeta)
        V_ref = V

        duals, n_inner = _inner_loop(duals, fp, prob, V_ref, cfg, mode)
        inner_counts.append(n_inner)
        duals = _settle_duals(duals, fp, prob, V_ref, cfg, mode)
        regularized = regularized or duals.lam < cfg.lambda_min
        V_new = bf_from_duals(duals, fp, prob, V_ref, mode=mode, woodbury=cfg.woodbury,
                              lambda_min=cfg.lambda_min)
        power = float(np.sum(np.abs(V_new) ** 2))
        if power > prob.power:
            V_new *= math.sqrt(prob.power / power)
        V_new = align_phases(V_new, prob.h)

        obj_new = surrogate_objective(V_new, prob, mode)
        if obj_new < obj - cfg.monotone_tol * max(1.0, abs(obj)):
            logger.debug("outer update lowered the objective (%.6g < %.6g), stopping", obj_new, obj)
            status, converged = "stalled", True
            break
        V = V_new
        trace.append(obj_new)

        if prob.sensing_active:
            c = prob.sensing_coeffs()
            scale = max(float(np.linalg.norm(shared_matrix(fp, prob, mode), 2)), 1.0)
            psi = c * np.abs(np.einsum("ij,ij->j", prob.steering().conj(), V)) ** 2
            violated = psi < sensing_phi(V, prob) * (1 - cfg.tol_feas)
            diverged = np.asarray(duals.mu) * c > cfg.mu_max * scale
            if np.any(violated & diverged):
                status = "infeasible"
                break

        if abs(obj_new - obj) <= cfg.tol_outer * max(abs(obj), 1e-12):
            status, converged = "converged", True
            obj = obj_new
            break
        obj = obj_new

    V_phys = V * math.sqrt(problem.power)
    variances = error_variances(V_phys, sub.theta_hat, sub.beta_hat, sub.sensing)
    feasible = status != "infeasible"
    if problem.sensing_active:
        feasible = feasible and bool(np.all(variances <= problem.c_bar * (1 + cfg.tol_feas)))
    xi = update_xi(V, prob, mode)
    fp = FpAux(xi, update_zeta(V, xi, prob, mode))
    solution = BfSolution(
        beamformers=V_phys,
        users=tuple(keep),
        duals=DualVars(duals.lam / problem.power, np.asarray(duals.mu) / problem.power),
        fp=fp,
        objective_trace=trace,
        converged=converged,
        outer_iterations=len(inner_counts),
        inner_iterations=inner_counts,
        feasible=feasible,
        status=status,
        design_sinr=surrogate_sinr(V, prob, mode),
        sensing_variances=variances,
        dropped=dropped,
        regularized=regularized,
    )
    logger.debug("solve: %d users, %s after %d outer iterations, objective %.6g",
                 K, status, solution.outer_iterations, trace[-1])
    return solution


def solve_zero_leakage(problem: BfProblem, cfg: Optional[SolverConfig] = None) -> BfSolution:
    """Per-cell baseline: the same solver with the leakage covariance zeroed."""
    cfg = cfg or SolverConfig()
    return solve(replace(problem, leak_sum=np.zeros_like(problem.leak_sum)), cfg)


def random_problem(n_tx: int, n_users: int, rng: np.random.Generator, *,
                   n_foreign: int = 3, c_bar: float = 1.0,
                   sensing: Optional[SensingConfig] = None) -> BfProblem:
    """Rayleigh test instance in unit power and noise, with LoS-like sensing angles."""
    sensing = sensing or SensingConfig(kappa=math.sqrt(n_tx * 16), sigma_z2=1e-2)
    h = gen_rayleigh(n_users, rng, size=(n_tx,)) * math.sqrt(10.0)
    inter = gen_rayleigh(n_foreign, rng, size=(n_tx,))
    return BfProblem(
        h=h,
        leak_sum=inter @ inter.conj().T,
        avg_rate=rng.uniform(0.5, 2.0, size=n_users),
        power=1.0,
        noise=1.0,
        theta_hat=rng.uniform(-math.pi / 3, math.pi / 3, size=n_users),
        beta_hat=np.full(n_users, 1.0 / (2 * 50.0), dtype=complex),
        sensing=sensing,
        c_bar=c_bar,
    )
