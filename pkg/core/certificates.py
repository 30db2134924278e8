"""
Incremental-passivity storage certificates for switched subsystems and the
augmented storage functions they induce between a subsystem and its symbolic
model.

Storage functions are quadratic, S_p(x, xh) = (x - xh)^T Z_p (x - xh). In the
affine case a certificate is checked through a linear matrix inequality in
(Z_p, Q_p, kappa_p, theta_p); only theta_p is searched.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .abstraction import BALL_SLACK, SymbolicModel
from .errors import CertificateError, InvariantViolation, ParameterError, UnsupportedCertificateError
from .matcert import SymMatrix, is_pd, is_psd, max_eig, min_dominance_scale, min_eig, pos_neg_split
from .system import BoxUnion, ModeDynamics, PowerK, SwitchedSubsystem

logger = logging.getLogger(__name__)

DEFAULT_THETA_GRID = tuple(round(1.01 + 0.01 * k, 2) for k in range(20))
MC_CHUNK = 2048


@dataclass(frozen=True)
class GammaBound:
    """gamma(s) = quad * s**2 + lin * s"""

    quad: float
    lin: float

    def __call__(self, s):
        return self.quad * np.square(s) + self.lin * np.asarray(s)

    def __add__(self, other: 'GammaBound') -> 'GammaBound':
        return GammaBound(self.quad + other.quad, self.lin + other.lin)

    def scaled(self, factor: float) -> 'GammaBound':
        return GammaBound(self.quad * factor, self.lin * factor)


@dataclass
class StorageCertificate:
    """Per-mode storage data (Z_p, Q_p, kappa_p, alpha_p) plus the switching constants"""

    Z: List[SymMatrix]
    Q: List[Optional[SymMatrix]]
    kappa: List[float]
    alpha_lower: List[PowerK]
    epsilon_exp: float = 2.0
    mu: Optional[float] = None
    theta: Optional[List[Optional[float]]] = None
    gamma: Optional[List[GammaBound]] = None

    def __post_init__(self):
        m = len(self.Z)
        if m == 0:
            raise CertificateError("certificate needs at least one mode")
        for name in ('Q', 'kappa', 'alpha_lower'):
            if len(getattr(self, name)) != m:
                raise CertificateError(f"certificate has {m} storage matrices but {len(getattr(self, name))} {name} entries")
        for p, k in enumerate(self.kappa, start=1):
            if not 0 < k < 1:
                raise CertificateError(f"mode {p}: kappa must lie in (0, 1), got {k}", mode=p)
        for p, Z in enumerate(self.Z, start=1):
            if not is_pd(Z):
                raise CertificateError(f"mode {p}: Z is not positive definite", mode=p, min_eig=min_eig(Z))
        if not self.epsilon_exp > 1:
            raise ParameterError(f"dwell exponent must exceed 1, got {self.epsilon_exp}")
        if self.mu is not None and self.mu < 1:
            raise CertificateError(f"mu must be >= 1, got {self.mu}")
        if self.theta is not None and any(t is not None and t <= 1 for t in self.theta):
            raise CertificateError("every theta must exceed 1")

    @property
    def n_modes(self) -> int:
        return len(self.Z)

    @property
    def kappa_max(self) -> float:
        return max(self.kappa)

    @property
    def common_storage(self) -> bool:
        return all(Z == self.Z[0] for Z in self.Z)

    @property
    def is_common(self) -> bool:
        """Same storage function, supply rate and decay in every mode"""
        return (self.common_storage and all(Q == self.Q[0] for Q in self.Q)
                and all(k == self.kappa[0] for k in self.kappa))

    @property
    def storage_kind(self) -> str:
        if self.is_common:
            return 'common'
        if self.common_storage:
            return 'common-storage'
        return 'multiple'

    def with_gamma(self, state_set: BoxUnion) -> 'StorageCertificate':
        self.gamma = [gamma_bound(Z, state_set) for Z in self.Z]
        return self


@dataclass(frozen=True)
class AugStorageFn:
    """
    V((x,p,l),(xh,p,l)) = counter_base**l * (x - xh)^T Z_sum (x - xh)

    with the decrease constants (sigma, eps_offset, R) and the output bound alpha.
    """

    alpha: PowerK
    sigma: float
    eps_offset: float
    R: Optional[SymMatrix]
    Z_sum: SymMatrix
    counter_base: float = 1.0
    common: bool = True

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise InvariantViolation(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.eps_offset < 0:
            raise InvariantViolation(f"eps_offset must be >= 0, got {self.eps_offset}")

    def value(self, x, x_hat, l=0):
        delta = np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float)
        return np.power(self.counter_base, l) * self.Z_sum.quad(delta)

    def supply(self, dw, dy):
        """[dw; dy]^T R [dw; dy] for single vectors or row batches"""
        if self.R is None:
            return np.zeros(np.shape(dw)[0]) if np.ndim(dw) == 2 else 0.0
        return self.R.quad(np.concatenate([np.asarray(dw, dtype=float), np.asarray(dy, dtype=float)], axis=-1))


def gamma_bound(Z: SymMatrix, state_set: BoxUnion) -> GammaBound:
    """Triangle-type bound S(x, y) <= S(x, z) + gamma(|y - z|_inf) on the compact state set"""
    diameter = state_set.diameter()
    if not math.isfinite(diameter):
        raise ParameterError("state set must be bounded")
    n = state_set.dim
    lam = max_eig(Z)
    return GammaBound(lam * n, lam * 2 * math.sqrt(n) * diameter)


def _lmi_sides(mode: ModeDynamics, C2, Z: SymMatrix, Q: Optional[SymMatrix], kappa: float, theta: float):
    A, D = mode.A, mode.D
    n, wdim = A.shape[0], D.shape[1]
    C2 = np.asarray(C2, dtype=float).reshape(-1, n) if np.size(C2) else np.zeros((0, n))
    y2 = C2.shape[0]
    if Z.dim != n:
        raise CertificateError(f"mode {mode.label}: Z is {Z.dim}x{Z.dim}, state dimension is {n}", mode=mode.label)
    qdim = wdim + y2
    if (Q is None and qdim) or (Q is not None and Q.dim != qdim):
        raise CertificateError(f"mode {mode.label}: supply rate must be {qdim}x{qdim} ([w; y2] ordering)", mode=mode.label)

    Zm = Z.array
    lhs = np.zeros((n + wdim, n + wdim))
    lhs[:n, :n] = theta * A.T @ Zm @ A
    lhs[:n, n:] = A.T @ Zm @ D
    lhs[n:, :n] = D.T @ Zm @ A
    lhs[n:, n:] = theta * D.T @ Zm @ D

    rhs = np.zeros_like(lhs)
    rhs[:n, :n] = kappa * Zm
    if Q is not None:
        q = Q.array
        q11, q12 = q[:wdim, :wdim], q[:wdim, wdim:]
        q21, q22 = q[wdim:, :wdim], q[wdim:, wdim:]
        rhs[:n, :n] += C2.T @ q22 @ C2
        rhs[:n, n:] = C2.T @ q21
        rhs[n:, :n] = q12 @ C2
        rhs[n:, n:] = q11
    return SymMatrix(lhs), SymMatrix(rhs)


def lmi_margin(mode: ModeDynamics, C2, Z: SymMatrix, Q: Optional[SymMatrix], kappa: float, theta: float) -> float:
    """Minimum eigenvalue of RHS - LHS"""
    lhs, rhs = _lmi_sides(mode, C2, Z, Q, kappa, theta)
    return min_eig(rhs - lhs)


def verify_delta_p_affine(mode: ModeDynamics, C2, Z: SymMatrix, Q: Optional[SymMatrix], kappa: float,
                          theta: float, tol: Optional[float] = None) -> bool:
    if not theta > 1:
        raise ParameterError(f"theta must exceed 1, got {theta}")
    if not 0 < kappa < 1:
        raise ParameterError(f"kappa must lie in (0, 1), got {kappa}")
    lhs, rhs = _lmi_sides(mode, C2, Z, Q, kappa, theta)
    return is_psd(rhs - lhs, tol)


def scan_theta(mode: ModeDynamics, C2, Z: SymMatrix, Q: Optional[SymMatrix], kappa: float,
               theta_grid: Sequence[float] = DEFAULT_THETA_GRID, tol: Optional[float] = None) -> Optional[float]:
    for theta in theta_grid:
        if verify_delta_p_affine(mode, C2, Z, Q, kappa, theta, tol):
            return float(theta)
    return None


def compute_mu(Z_list: Sequence[SymMatrix]) -> float:
    """Smallest mu with Z_p <= mu Z_q for all mode pairs"""
    for p, Z in enumerate(Z_list, start=1):
        if not is_pd(Z):
            raise CertificateError(f"mode {p}: Z is not positive definite", mode=p)
    if all(Z == Z_list[0] for Z in Z_list):
        return 1.0
    mu = 1.0
    for p, Zp in enumerate(Z_list):
        for q, Zq in enumerate(Z_list):
            if p != q:
                mu = max(mu, min_dominance_scale(Zp, Zq))
    return mu


def min_dwell_time(mu: float, kappa_max: float, epsilon_exp: float) -> int:
    """Smallest integer k_d >= eps * ln(mu) / ln(1/kappa) + 1"""
    if mu < 1 or not 0 < kappa_max < 1 or not epsilon_exp > 1:
        raise ParameterError(f"need mu >= 1, 0 < kappa < 1, eps > 1; got {mu}, {kappa_max}, {epsilon_exp}")
    bound = epsilon_exp * math.log(mu) / math.log(1.0 / kappa_max) + 1.0
    return max(1, math.ceil(bound - 1e-9))


def qtilde_margins(Qt: SymMatrix, Q_list: Sequence[SymMatrix], kappa_max: float,
                   epsilon_exp: float, dwell_time: int) -> List[float]:
    """min eig of Qt - kappa**(-q/eps) * sum(Q) for q = 1 .. k_d - 1"""
    total = _sum(Q_list)
    return [min_eig(Qt - kappa_max ** (-q / epsilon_exp) * total) for q in range(1, dwell_time)]


def _sum(mats: Sequence[SymMatrix]) -> SymMatrix:
    total = mats[0]
    for M in mats[1:]:
        total = total + M
    return total


def construct_Qtilde(Q_list: Sequence[SymMatrix], kappa_max: float, epsilon_exp: float,
                     dwell_time: int, tol: Optional[float] = None) -> SymMatrix:
    total = _sum(Q_list)
    if dwell_time < 2:
        return SymMatrix.zeros(total.dim)
    plus, minus = pos_neg_split(total)
    c_min = kappa_max ** (-1.0 / epsilon_exp)
    c_max = kappa_max ** (-(dwell_time - 1) / epsilon_exp)
    Qt = c_max * plus + c_min * minus
    for q in range(1, dwell_time):
        if not is_psd(Qt - kappa_max ** (-q / epsilon_exp) * total, tol):
            raise InvariantViolation(f"Q-tilde fails the counter {q} dominance check", counter=q)
    return Qt


def output_alpha(alpha_lower: Sequence[PowerK], ell: PowerK) -> PowerK:
    """Inverse of max_p ell o alpha_p^-1, kept in power form"""
    maps = [ell.compose(a.inverse()) for a in alpha_lower]
    exponents = {round(f.exponent, 12) for f in maps}
    if len(exponents) != 1:
        raise UnsupportedCertificateError("lower bounds alpha_p with different exponents have no power-form maximum",
                                          exponents=sorted(exponents))
    worst = max(maps, key=lambda f: f.coeff)
    return worst.inverse()


def derive_augmented_storage(cert: StorageCertificate, eta: float, dwell_time: int, lipschitz_ell: PowerK,
                             common: Optional[bool] = None, tol: Optional[float] = None) -> AugStorageFn:
    if cert.gamma is None:
        raise CertificateError("certificate has no gamma bounds; call with_gamma(state_set) first")
    if common is None:
        common = cert.is_common
    if common and not cert.is_common:
        raise CertificateError("common-storage reduction requested but modes differ in Z, Q or kappa")

    alpha = output_alpha(cert.alpha_lower, lipschitz_ell)

    if common:
        return AugStorageFn(alpha=alpha, sigma=cert.kappa[0], eps_offset=float(cert.gamma[0](eta)),
                            R=cert.Q[0], Z_sum=cert.Z[0], counter_base=1.0, common=True)

    mu = cert.mu if cert.mu is not None else compute_mu(cert.Z)
    kappa, eps = cert.kappa_max, cert.epsilon_exp
    needed = min_dwell_time(mu, kappa, eps)
    if dwell_time < needed:
        raise CertificateError(f"dwell time {dwell_time} is below the admissible minimum {needed}",
                               dwell_time=dwell_time, minimum=needed)
    gamma_total = cert.gamma[0]
    for g in cert.gamma[1:]:
        gamma_total = gamma_total + g
    R = None if any(Q is None for Q in cert.Q) else construct_Qtilde(cert.Q, kappa, eps, dwell_time, tol)
    return AugStorageFn(alpha=alpha,
                        sigma=kappa ** ((eps - 1.0) / eps),
                        eps_offset=float(kappa ** (-dwell_time / eps) * gamma_total(eta)),
                        R=R, Z_sum=_sum(cert.Z), counter_base=kappa ** (-1.0 / eps), common=False)


def _mode_counter_arrays(p: np.ndarray, l: np.ndarray, u: np.ndarray, k_d: int):
    early = l < k_d - 1
    switch = ~early & (u != p)
    p_next = np.where(switch, u, p)
    l_next = np.where(early, l + 1, np.where(switch, 0, k_d - 1))
    return p_next, l_next


def _mc_chunk(sub: SwitchedSubsystem, model: SymbolicModel, fn: AugStorageFn,
              seed: np.random.SeedSequence, count: int) -> float:
    rng = np.random.default_rng(seed)
    grid = model.grid
    k_d, m = model.dwell_time, model.n_modes

    x = sub.state_set.sample(rng, count)
    xh = grid.coords(rng.integers(0, model.n_grid, size=count))
    p = rng.integers(1, m + 1, size=count)
    l = rng.integers(0, k_d, size=count)
    u = np.where(l < k_d - 1, p, rng.integers(1, m + 1, size=count))
    if sub.input_dim:
        w = sub.internal_input_set.sample(rng, count)
    else:
        w = np.zeros((count, 0))
    wh = model.internal_inputs[rng.integers(0, model.n_inputs, size=count)]

    x_next = np.empty_like(x)
    image = np.empty_like(x)
    for q in range(1, m + 1):
        sel = p == q
        if np.any(sel):
            x_next[sel] = sub.step_batch(q, x[sel], w[sel])
            image[sel] = sub.step_batch(q, xh[sel], wh[sel])
    pos = grid.index_of(grid.nearest_indices(image))
    xh_next = grid.coords(np.maximum(pos, 0))
    valid = ((pos >= 0) & sub.state_set.contains(x_next) & sub.state_set.contains(image)
             & np.all(np.abs(image - xh_next) <= grid.eta + BALL_SLACK, axis=1))
    if not np.any(valid):
        return -math.inf

    _, l_next = _mode_counter_arrays(p, l, u, k_d)
    v_now = fn.value(x, xh, l)
    v_next = fn.value(x_next, xh_next, l_next)
    supply = fn.supply(w - wh, (x - xh) @ sub.C2.T)
    decrease = v_next - (fn.sigma * v_now + fn.eps_offset + supply)

    out_gap = np.max(np.abs((x - xh) @ sub.C1.T), axis=1) if sub.y1_dim else np.zeros(count)
    bound = fn.alpha(out_gap) - v_now
    return float(np.max(np.maximum(decrease, bound)[valid]))


def validate_storage_mc(sub: SwitchedSubsystem, model: SymbolicModel, fn: AugStorageFn,
                        cert: Optional[StorageCertificate] = None, samples: int = 10_000,
                        seed: int = 0, workers: int = 1) -> float:
    """
    Largest sampled violation of the output bound and the decrease inequality.

    Samples whose concrete or abstract image leaves the state set are skipped,
    as is any sample without a grid point within eta of the abstract image.
    """
    if cert is not None and cert.gamma is None:
        raise CertificateError("certificate has no gamma bounds")
    sizes = [MC_CHUNK] * (samples // MC_CHUNK) + ([samples % MC_CHUNK] if samples % MC_CHUNK else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if workers > 1 and len(sizes) > 1:
        parts = Parallel(n_jobs=workers)(delayed(_mc_chunk)(sub, model, fn, s, c) for s, c in zip(seeds, sizes))
    else:
        parts = [_mc_chunk(sub, model, fn, s, c) for s, c in zip(seeds, sizes)]
    worst = max(parts) if parts else -math.inf
    if worst == -math.inf:
        logger.warning("%s: no Monte-Carlo sample stayed inside the state set", sub.name)
    logger.info("%s: Monte-Carlo max violation %.3e over %d samples", sub.name, worst, samples)
    return worst


@dataclass
class CertificateReport:
    """Outcome of checking one subsystem's certificate"""

    subsystem: str
    storage_kind: str
    modes: List[Dict[str, Any]]
    mu_computed: float
    mu_declared: Optional[float]
    dwell_min: int
    dwell_time: int
    qtilde_margins: List[float] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def lmi_ok(self) -> bool:
        return all(row['feasible'] for row in self.modes)

    @property
    def mu_ok(self) -> bool:
        return self.mu_declared is None or self.mu_declared >= self.mu_computed - 1e-9

    @property
    def dwell_ok(self) -> bool:
        return self.dwell_time >= self.dwell_min

    @property
    def verified(self) -> bool:
        return self.lmi_ok and self.mu_ok and self.dwell_ok and all(mg >= -1e-9 for mg in self.qtilde_margins)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.modes, columns=['mode', 'theta', 'lmi_margin', 'feasible'])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'subsystem': self.subsystem,
            'storage_kind': self.storage_kind,
            'modes': self.modes,
            'mu_computed': self.mu_computed,
            'mu_declared': self.mu_declared,
            'dwell_min': self.dwell_min,
            'dwell_time': self.dwell_time,
            'qtilde_margins': self.qtilde_margins,
            'verified': self.verified,
            'notes': self.notes,
        }


def verify_certificate(sub: SwitchedSubsystem, cert: StorageCertificate,
                       theta_grid: Sequence[float] = DEFAULT_THETA_GRID,
                       tol: Optional[float] = None) -> CertificateReport:
    """Check every mode's LMI, the declared mu, the dwell bound and the Q-tilde margins"""
    if cert.n_modes != sub.m:
        raise CertificateError(f"{sub.name}: certificate has {cert.n_modes} modes, subsystem has {sub.m}")
    notes = []
    rows = []
    for p in range(1, sub.m + 1):
        mode, Z, Q, kappa = sub.mode(p), cert.Z[p - 1], cert.Q[p - 1], cert.kappa[p - 1]
        if not sub.is_affine:
            rows.append({'mode': p, 'theta': None, 'lmi_margin': None, 'feasible': False})
            continue
        grid = theta_grid
        if cert.theta is not None and cert.theta[p - 1] is not None:
            grid = [cert.theta[p - 1]]
        theta = scan_theta(mode, sub.C2, Z, Q, kappa, grid, tol)
        margin = lmi_margin(mode, sub.C2, Z, Q, kappa, theta if theta is not None else grid[-1])
        rows.append({'mode': p, 'theta': theta, 'lmi_margin': margin, 'feasible': theta is not None})
        if theta is None:
            logger.warning("%s mode %d: no theta in the scan grid satisfies the LMI (margin %.3e)", sub.name, p, margin)
    if not sub.is_affine:
        notes.append('non-affine dynamics: LMI not machine-checked')

    mu = compute_mu(cert.Z)
    if cert.storage_kind == 'common':
        dwell_min = 1
        margins: List[float] = []
    else:
        dwell_min = min_dwell_time(cert.mu if cert.mu is not None else mu, cert.kappa_max, cert.epsilon_exp)
        margins = []
        if sub.dwell_time >= 2 and all(Q is not None for Q in cert.Q):
            Qt = construct_Qtilde(cert.Q, cert.kappa_max, cert.epsilon_exp, sub.dwell_time, tol)
            margins = qtilde_margins(Qt, cert.Q, cert.kappa_max, cert.epsilon_exp, sub.dwell_time)
    if cert.storage_kind == 'common-storage':
        notes.append('common storage function with mode-dependent supply rates')

    report = CertificateReport(subsystem=sub.name, storage_kind=cert.storage_kind, modes=rows,
                               mu_computed=mu, mu_declared=cert.mu, dwell_min=dwell_min,
                               dwell_time=sub.dwell_time, qtilde_margins=margins, notes=notes)
    logger.info("%s: certificate %s (mu=%.4f, k_d min %d)", sub.name,
                'verified' if report.verified else 'NOT verified', mu, dwell_min)
    return report
