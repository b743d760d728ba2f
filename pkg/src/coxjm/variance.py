"""Asymptotic variance estimation via the discretized information operator.

Probes are h = (h1, h2, h3) with h1 a 5-vector for the transition parameters,
h2 scalar for the regression coefficient and h3 a function carried by its
values at the event times (the estimated hazard charges nothing else).  The
operator block-decouples: a 5x5 matrix A acts on h1, and a (1+K)x(1+K) matrix
B acts on (h2, h3(x_1), ..., h3(x_K)).  The variance of the estimator paired
with a probe g is the quadratic form

    sum_k g3(x_k) h3(x_k) dL_k + g2 h2 + g1' h1,    where (h1, h2, h3) solve
    A h1 = g1 and B (h2, h3) = (g2, g3).

A closed-form reciprocal-sum estimate for the beta variance is reported next
to the full inversion; the two agree only asymptotically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import ndtri

from .data import Dataset, SieveHazard, Theta
from .exceptions import SingularOperatorError, ValidationError
from .fit import FitResult, _atoms_to_estep, _hazard_jumps, _Workspace, _wn_vec

COND_LIMIT = 1e12


@dataclass(frozen=True)
class Probe:
    """A direction h = (h1, h2, h3-values-at-event-times)."""

    h1: np.ndarray
    h2: float
    h3: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h1", np.asarray(self.h1, dtype=float).reshape(5))
        object.__setattr__(self, "h2", float(self.h2))
        object.__setattr__(self, "h3", np.asarray(self.h3, dtype=float).ravel())
        if not (np.all(np.isfinite(self.h1)) and math.isfinite(self.h2)
                and np.all(np.isfinite(self.h3))):
            raise ValidationError("probe components must be finite")


@dataclass(frozen=True, eq=False)
class DiscretizedOperator:
    """Finite representation of the estimated information operator."""

    A: np.ndarray          # 5x5 alpha block
    B: np.ndarray          # (1+K)x(1+K) block on (h2, h3 at event times)
    dL: np.ndarray         # hazard jumps used as integration weights
    times: np.ndarray      # event times carrying h3

    @property
    def K(self) -> int:
        return self.dL.size


def beta_probe(K: int) -> Probe:
    return Probe(np.zeros(5), 1.0, np.zeros(K))


def _expected_hessian_mean(ws, est, alpha) -> np.ndarray:
    """(1/n) sum_i E_i[d^2/dalpha^2 log f] assembled from sufficient statistics."""
    n = ws.n
    s0, s = alpha.s0sq, alpha.ssq
    d0 = ws.z0 - alpha.mu0
    H = np.zeros((5, 5))
    H[0, 0] = -n / s0
    H[0, 1] = H[1, 0] = -float(np.sum(d0)) / s0**2
    H[1, 1] = 0.5 * n / s0**2 - float(np.sum(d0 * d0)) / s0**3
    obs = ws.obs_stats
    S_p = obs["S_p"] + float(np.sum(ws.z_pred))
    S_pp = obs["S_pp"] + float(np.sum(ws.z_pred**2))
    S_n = obs["S_n"] + float(np.sum(est.E1))
    S_pn = obs["S_pn"] + float(np.sum(ws.z_pred * est.E1))
    S_nn = obs["S_nn"] + float(np.sum(est.E2))
    N = obs["count"] + n
    sum_r = S_n - N * alpha.a - alpha.b * S_p
    sum_rp = S_pn - alpha.a * S_p - alpha.b * S_pp
    sum_rr = (S_nn - 2 * alpha.a * S_n - 2 * alpha.b * S_pn
              + N * alpha.a**2 + 2 * alpha.a * alpha.b * S_p + alpha.b**2 * S_pp)
    H[2, 2] = -N / s
    H[2, 3] = H[3, 2] = -S_p / s
    H[3, 3] = -S_pp / s
    H[2, 4] = H[4, 2] = -sum_r / s**2
    H[3, 4] = H[4, 3] = -sum_rp / s**2
    H[4, 4] = 0.5 * N / s**2 - sum_rr / s**3
    return H / n


def build_sigma_hat(dataset: Dataset, theta_hat: Theta, atoms) -> DiscretizedOperator:
    """Assemble the operator blocks at a converged fit with its atoms."""
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, theta_hat.hazard)
    beta = theta_hat.beta
    est = _atoms_to_estep(ws, atoms, beta, dL)
    A = -_expected_hessian_mean(ws, est, theta_hat.alpha)

    eV, VeV, V2eV = ws.risk_mats(beta)
    m0, m1, m2 = est.exp_moments(beta)
    n = ws.n
    w_col = (np.sum(eV, axis=0) + ws.lat_mask.T @ m0) / n       # w_n(x_k)
    c_col = (np.sum(VeV, axis=0) + ws.lat_mask.T @ m1) / n      # (1/n) sum E[Z e^{bZ}]
    d_col = (np.sum(V2eV, axis=0) + ws.lat_mask.T @ m2) / n     # (1/n) sum E[Z^2 e^{bZ}]

    K = ws.K
    B = np.zeros((1 + K, 1 + K))
    B[0, 0] = float(np.dot(d_col, dL))
    B[0, 1:] = c_col * dL
    B[1:, 0] = c_col
    B[np.arange(1, 1 + K), np.arange(1, 1 + K)] = w_col
    return DiscretizedOperator(A=A, B=B, dL=dL.copy(), times=ws.xe.copy())


def apply_operator(op: DiscretizedOperator, h: Probe) -> Probe:
    """sigma-hat applied to a probe (g1, g2, g3-at-event-times)."""
    v = np.concatenate([[h.h2], np.asarray(h.h3, dtype=float) * np.ones(op.K)])
    out = op.B @ v
    return Probe(op.A @ h.h1, float(out[0]), out[1:])


def invert_apply(op: DiscretizedOperator, g: Probe) -> Probe:
    """Solve sigma-hat(h) = g; refuses numerically singular operators."""
    cond = float(np.linalg.cond(op.B))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise SingularOperatorError(cond)
    h1 = scipy.linalg.solve(op.A, g.h1, assume_a="sym")
    rhs = np.concatenate([[g.h2], np.asarray(g.h3, dtype=float) * np.ones(op.K)])
    v = scipy.linalg.solve(op.B, rhs)
    res1 = np.linalg.norm(op.A @ h1 - g.h1) / max(1.0, np.linalg.norm(g.h1))
    res2 = np.linalg.norm(op.B @ v - rhs) / max(1.0, np.linalg.norm(rhs))
    if res1 > 1e-8 or res2 > 1e-8:
        raise SingularOperatorError(cond, f"linear solve residual too large ({res1:.2e}, {res2:.2e})")
    return Probe(h1, float(v[0]), v[1:])


def var_estimate(op: DiscretizedOperator, hazard: SieveHazard, g: Probe) -> float:
    """Quadratic-form variance of the estimator paired with the probe g."""
    dL = np.asarray(hazard.jumps, dtype=float)
    if dL.size != op.K:
        raise ValidationError("hazard does not match the operator support")
    h = invert_apply(op, g)
    g3 = np.asarray(g.h3, dtype=float) * np.ones(op.K)
    out = float(np.dot(g3 * h.h3, dL)) + h.h2 * g.h2 + float(h.h1 @ g.h1)
    if out < 0:
        warnings.warn(f"negative variance estimate {out:.6g} (finite-sample pathology)",
                      RuntimeWarning)
    return out


def var_beta_simple(dataset: Dataset, theta_hat: Theta, atoms) -> float:
    """Reciprocal of (1/n) sum_i sum_{x_k <= x_i} E_i[Z^2 e^{bZ}] dL_k."""
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, theta_hat.hazard)
    est = _atoms_to_estep(ws, atoms, theta_hat.beta, dL)
    _, _, V2eV = ws.risk_mats(theta_hat.beta)
    _, _, m2 = est.exp_moments(theta_hat.beta)
    a_lat = ws.lat_mask @ dL
    total = (float(np.sum(V2eV @ dL)) + float(np.sum(a_lat * m2))) / ws.n
    if total <= 0:
        raise ValidationError("zero curvature sum; beta variance undefined")
    return 1.0 / total


def ci(fit: FitResult, var_est: float, level: float) -> tuple[float, float]:
    """Wald interval for beta from a variance estimate of sqrt(n)(beta-hat - beta0)."""
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    if var_est <= 0:
        raise ValidationError("variance estimate must be > 0")
    q = float(ndtri(0.5 * (1.0 + level)))
    hw = q * math.sqrt(var_est / fit.n_subjects)
    return fit.theta_hat.beta - hw, fit.theta_hat.beta + hw


def lambda_band(op: DiscretizedOperator, hazard: SieveHazard, t_grid) -> list[tuple[float, float]]:
    """Variance of sqrt(n)(Lambda-hat(t) - Lambda0(t)) at each t in t_grid."""
    cond = float(np.linalg.cond(op.B))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise SingularOperatorError(cond)
    dL = np.asarray(hazard.jumps, dtype=float)
    ts = np.asarray(t_grid, dtype=float)
    rhs = np.zeros((1 + op.K, ts.size))
    for j, t in enumerate(ts):
        rhs[1:, j] = (op.times <= t).astype(float)
    sol = scipy.linalg.solve(op.B, rhs)
    out = []
    for j, t in enumerate(ts):
        g3 = rhs[1:, j]
        out.append((float(t), float(np.dot(g3 * sol[1:, j], dL))))
    return out


def variance_report(dataset: Dataset, theta_hat: Theta, atoms, fit: FitResult,
                    t_grid=None) -> dict:
    """Side-by-side variance summary used by the CLI and the study harness."""
    op = build_sigma_hat(dataset, theta_hat, atoms)
    simple = var_beta_simple(dataset, theta_hat, atoms)
    cond = float(np.linalg.cond(op.B))
    report: dict = {"var_beta_simple": simple, "cond_B": cond}
    try:
        report["var_beta_full"] = var_estimate(op, theta_hat.hazard, beta_probe(op.K))
    except SingularOperatorError:
        report["var_beta_full"] = None
    var_alpha = []
    for j in range(5):
        g1 = np.zeros(5)
        g1[j] = 1.0
        h1 = scipy.linalg.solve(op.A, g1, assume_a="sym")
        var_alpha.append(float(h1[j]))
    report["var_alpha"] = var_alpha
    if t_grid is None:
        t_grid = np.linspace(0.0, dataset.tau, 11)[1:]
    try:
        report["lambda_band"] = lambda_band(op, theta_hat.hazard, t_grid)
    except SingularOperatorError:
        report["lambda_band"] = None
    return report
