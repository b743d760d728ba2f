"""EM/ECM maximizer of the joint pseudo likelihood over the step-hazard sieve.

Outer iteration: (E) posterior atoms for every subject at the current theta;
(M) closed-form transition-parameter update, then `inner_cycles` rounds of
closed-form hazard update followed by a step-halved Newton move in beta, and
one final hazard update at the accepted beta.  Every conditional update
increases the EM objective, so the observed log likelihood is nondecreasing;
a global step-halving fallback guards the floor/box corner cases.

Convergence requires parameter stability, a small score over the canonical
probe directions, and the hazard fixed-point identity
dL_k * W_n(x_k) = 1/n holding at freshly computed atoms.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SieveHazard, Theta, last_index, validate_dataset
from .exceptions import (
    AscentError,
    DegenerateRiskSetError,
    InsufficientDataError,
    ValidationError,
)
from .posterior import EXP_CLIP, PosteriorAtoms, batch_posterior, gauss_logpdf
from .transition import (
    VAR_FLOOR,
    AlphaBox,
    TransitionParams,
    _solve_gaussian_mle,
    observed_transition_mle,
)

ASCENT_TOL = 1e-8


@dataclass
class FitConfig:
    """Knobs of the EM fitter; all runs with the same config are deterministic."""

    Q: int = 40
    max_iter: int = 500
    tol_param: float = 1e-7
    tol_score: float = 1e-6
    id_tol: float = 1e-11
    inner_cycles: int = 3
    beta_box: float = 10.0
    alpha_box: AlphaBox = field(default_factory=AlphaBox)
    step_halving_max: int = 30
    var_floor: float = VAR_FLOOR

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.tol_param <= 0 or self.tol_score <= 0 or self.id_tol <= 0:
            raise ValidationError("tolerances must be > 0")
        if self.inner_cycles < 1:
            raise ValidationError("inner_cycles must be >= 1")
        if self.beta_box < 0:
            raise ValidationError("beta_box must be >= 0")
        if self.Q < 2:
            raise ValidationError("quadrature order must be >= 2")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "Q", "max_iter", "tol_param", "tol_score", "id_tol", "inner_cycles",
            "beta_box", "step_halving_max", "var_floor")}
        d["alpha_box"] = {k: list(getattr(self.alpha_box, k))
                          for k in ("mu0", "s0sq", "a", "b", "ssq")}
        return d

    @staticmethod
    def from_dict(d: dict) -> "FitConfig":
        d = dict(d)
        box = d.pop("alpha_box", None)
        cfg = FitConfig(**d)
        if box is not None:
            cfg.alpha_box = AlphaBox(**{k: tuple(v) for k, v in box.items()})
        return cfg


@dataclass
class FitResult:
    theta_hat: Theta
    loglik_trace: list[float]
    iterations: int
    converged: bool
    score_norm: float
    warnings: list[str]
    n_subjects: int

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


class _Workspace:
    """Vectorized per-dataset arrays used by every fitting kernel.

    Matrices are indexed [subject i, event time k].  obs_mask marks risked
    event times whose covariate value is observed (value in V); lat_mask marks
    risked times falling in the subject's latent terminal window.
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        grid = dataset.grid
        subs = dataset.subjects
        n = len(subs)
        self.n = n
        self.x = np.array([s.x for s in subs])
        self.delta = np.array([s.delta for s in subs], dtype=float)
        ev = sorted((s.x, i) for i, s in enumerate(subs) if s.delta == 1)
        self.xe = np.array([t for t, _ in ev])
        self.ev_row = np.array([i for _, i in ev], dtype=int)
        self.K = len(self.xe)
        if self.K == 0:
            raise InsufficientDataError("no uncensored subjects")
        if np.any(np.diff(self.xe) <= 0):
            raise ValidationError("tied uncensored event times")
        self.a_e = np.array([last_index(t, grid) for t in self.xe], dtype=int)
        self.a_x = np.array([last_index(s.x, grid) for s in subs], dtype=int)
        self.last_idx = np.array([len(s.measurements) - 1 for s in subs], dtype=int)
        self.has_extra = self.last_idx == self.a_x + 1
        lmax = int(self.last_idx.max()) + 1
        Z = np.zeros((n, lmax))
        for i, s in enumerate(subs):
            Z[i, : len(s.measurements)] = s.measurements
        self.Z = Z
        rows = np.arange(n)
        self.z0 = Z[:, 0]
        self.z_pred = Z[rows, self.a_x]
        self.z_extra = np.where(self.has_extra, Z[rows, np.minimum(self.a_x + 1, lmax - 1)], np.nan)
        self.risk = self.xe[None, :] <= self.x[:, None]
        nxt = np.minimum(self.a_e + 1, lmax - 1)
        self.obs_mask = self.risk & ((self.a_e + 1)[None, :] <= self.last_idx[:, None])
        self.lat_mask = self.risk & ~self.obs_mask
        self.V = np.where(self.obs_mask, Z[:, nxt], 0.0)
        # observed history transitions (z_0..z_{a_x} only; the terminal step is
        # always carried by the atoms, degenerate or not)
        prev, nxt_v = [], []
        for i, s in enumerate(subs):
            h = np.asarray(s.measurements[: self.a_x[i] + 1])
            if h.size > 1:
                prev.append(h[:-1])
                nxt_v.append(h[1:])
        self.t_prev = np.concatenate(prev) if prev else np.zeros(0)
        self.t_next = np.concatenate(nxt_v) if nxt_v else np.zeros(0)
        self.obs_stats = {
            "S_p": float(np.sum(self.t_prev)),
            "S_n": float(np.sum(self.t_next)),
            "S_pp": float(np.sum(self.t_prev**2)),
            "S_pn": float(np.sum(self.t_prev * self.t_next)),
            "S_nn": float(np.sum(self.t_next**2)),
            "count": float(self.t_prev.size),
        }

    def risk_mats(self, beta: float):
        """exp(beta*V), V*exp(beta*V) and V^2*exp(beta*V), masked to observed risk."""
        eV = np.exp(np.minimum(beta * self.V, EXP_CLIP)) * self.obs_mask
        VeV = self.V * eV
        V2eV = self.V * VeV
        return eV, VeV, V2eV


class _EStep:
    """Posterior atoms for all subjects plus the per-subject hazard splits."""

    __slots__ = ("nodes", "weights", "log_norm", "a_obs", "a_lat", "E1", "E2", "mode", "sd")

    def __init__(self, nodes, weights, log_norm, a_obs, a_lat, mode=None, sd=None):
        self.nodes = nodes
        self.weights = weights
        self.log_norm = log_norm
        self.a_obs = a_obs
        self.a_lat = a_lat
        self.mode = mode
        self.sd = sd
        self.E1 = np.sum(weights * nodes, axis=1)
        self.E2 = np.sum(weights * nodes * nodes, axis=1)

    def exp_moments(self, beta: float):
        """E[e^{bZ}], E[Z e^{bZ}], E[Z^2 e^{bZ}] at the current beta."""
        t = self.weights * np.exp(np.minimum(beta * self.nodes, EXP_CLIP))
        m0 = np.sum(t, axis=1)
        m1 = np.sum(t * self.nodes, axis=1)
        m2 = np.sum(t * self.nodes * self.nodes, axis=1)
        return m0, m1, m2


def _estep(ws: _Workspace, alpha: TransitionParams, beta: float, dL: np.ndarray, Q: int) -> _EStep:
    eV, _, _ = ws.risk_mats(beta)
    a_obs = eV @ dL
    a_lat = ws.lat_mask @ dL
    mean = alpha.a + alpha.b * ws.z_pred
    n = ws.n
    nodes = np.empty((n, Q))
    weights = np.zeros((n, Q))
    log_norm = np.empty(n)
    mode = np.empty(n)
    sd = np.zeros(n)
    part = ~ws.has_extra
    if np.any(part):
        ids = [ws.dataset.subjects[i].id for i in np.flatnonzero(part)]
        nd, wt, md, cs, ln = batch_posterior(
            ws.delta[part], a_lat[part], mean[part], alpha.ssq, beta, Q, ids=ids)
        nodes[part] = nd
        weights[part] = wt
        log_norm[part] = ln
        mode[part] = md
        sd[part] = cs
    if np.any(ws.has_extra):
        full = ws.has_extra
        zf = ws.z_extra[full]
        nodes[full] = zf[:, None]
        weights[full, 0] = 1.0
        log_norm[full] = ws.delta[full] * beta * zf + gauss_logpdf(zf, mean[full], alpha.ssq)
        mode[full] = zf
    return _EStep(nodes, weights, log_norm, a_obs, a_lat, mode, sd)


def _alpha_stats(ws: _Workspace, est: _EStep) -> dict:
    s = ws.obs_stats
    return {
        "z0": ws.z0,
        "S_p": s["S_p"] + float(np.sum(ws.z_pred)),
        "S_n": s["S_n"] + float(np.sum(est.E1)),
        "S_pp": s["S_pp"] + float(np.sum(ws.z_pred**2)),
        "S_pn": s["S_pn"] + float(np.sum(ws.z_pred * est.E1)),
        "S_nn": s["S_nn"] + float(np.sum(est.E2)),
        "count": s["count"] + ws.n,
    }


def _alpha_objective(stats: dict, alpha: TransitionParams) -> float:
    """EM objective restricted to alpha (expected complete-data Gaussian loglik)."""
    z0 = stats["z0"]
    n0 = z0.size
    out = -0.5 * n0 * (math.log(2 * math.pi) + math.log(alpha.s0sq))
    out -= float(np.sum((z0 - alpha.mu0) ** 2)) / (2 * alpha.s0sq)
    N = stats["count"]
    sse = (
        stats["S_nn"] - 2 * alpha.a * stats["S_n"] - 2 * alpha.b * stats["S_pn"]
        + N * alpha.a**2 + 2 * alpha.a * alpha.b * stats["S_p"] + alpha.b**2 * stats["S_pp"]
    )
    out += -0.5 * N * (math.log(2 * math.pi) + math.log(alpha.ssq)) - sse / (2 * alpha.ssq)
    return out


def _hist_loglik(ws: _Workspace, alpha: TransitionParams) -> float:
    out = float(np.sum(gauss_logpdf(ws.z0, alpha.mu0, alpha.s0sq)))
    if ws.t_prev.size:
        out += float(np.sum(gauss_logpdf(ws.t_next, alpha.a + alpha.b * ws.t_prev, alpha.ssq)))
    return out


def _loglik(ws: _Workspace, alpha: TransitionParams, dL: np.ndarray, est: _EStep) -> float:
    out = float(np.sum(np.log(dL)))
    out += float(np.sum(-est.a_obs + est.log_norm))
    out += _hist_loglik(ws, alpha)
    if not math.isfinite(out):
        bad = np.flatnonzero(~np.isfinite(-est.a_obs + est.log_norm))
        sid = ws.dataset.subjects[bad[0]].id if bad.size else "?"
        raise ValidationError(f"non-finite log likelihood (subject {sid!r})")
    return out


def _wn_vec(ws: _Workspace, est: _EStep, beta: float, eV: np.ndarray | None = None) -> np.ndarray:
    if eV is None:
        eV, _, _ = ws.risk_mats(beta)
    m0, _, _ = est.exp_moments(beta)
    wn = (np.sum(eV, axis=0) + ws.lat_mask.T @ m0) / ws.n
    return wn


def _check_wn(ws: _Workspace, wn: np.ndarray) -> None:
    bad = ~(wn > 0) | ~np.isfinite(wn)
    if np.any(bad):
        raise DegenerateRiskSetError(float(ws.xe[int(np.argmax(bad))]))


def _score_info_beta(ws, est, beta, dL, mats=None):
    eV, VeV, V2eV = mats if mats is not None else ws.risk_mats(beta)
    m0, m1, m2 = est.exp_moments(beta)
    a_lat = ws.lat_mask @ dL
    score = (float(np.sum(ws.delta * est.E1)) - float(np.sum(VeV @ dL)) - float(np.sum(a_lat * m1))) / ws.n
    info = (float(np.sum(V2eV @ dL)) + float(np.sum(a_lat * m2))) / ws.n
    return score, info


def _q_beta(ws, est, beta, dL, mats=None):
    """EM objective terms that depend on beta, at fixed atoms and hazard."""
    eV, _, _ = mats if mats is not None else ws.risk_mats(beta)
    m0, _, _ = est.exp_moments(beta)
    a_lat = ws.lat_mask @ dL
    return (beta * float(np.sum(ws.delta * est.E1)) - float(np.sum(eV @ dL)) - float(np.sum(a_lat * m0))) / ws.n


def _alpha_score_mean(ws: _Workspace, est: _EStep, alpha: TransitionParams) -> np.ndarray:
    """(1/n) sum_i E_i[d/dalpha log f], the alpha block of the empirical score."""
    stats = _alpha_stats(ws, est)
    n = ws.n
    N = stats["count"]
    d0 = ws.z0 - alpha.mu0
    g = np.empty(5)
    g[0] = float(np.sum(d0)) / alpha.s0sq / n
    g[1] = float(np.sum(-0.5 / alpha.s0sq + d0 * d0 / (2 * alpha.s0sq**2))) / n
    g[2] = (stats["S_n"] - N * alpha.a - alpha.b * stats["S_p"]) / alpha.ssq / n
    g[3] = (stats["S_pn"] - alpha.a * stats["S_p"] - alpha.b * stats["S_pp"]) / alpha.ssq / n
    sse = (
        stats["S_nn"] - 2 * alpha.a * stats["S_n"] - 2 * alpha.b * stats["S_pn"]
        + N * alpha.a**2 + 2 * alpha.a * alpha.b * stats["S_p"] + alpha.b**2 * stats["S_pp"]
    )
    g[4] = (-0.5 * N / alpha.ssq + sse / (2 * alpha.ssq**2)) / n
    return g


def _free_directions(cfg: FitConfig):
    """Probe directions along which the constrained maximizer must be stationary.

    Components pinned by a degenerate box are not part of the sieve, so their
    score need not vanish and they drop out of the convergence certificate.
    """
    lo, hi = cfg.alpha_box.bounds().T
    return lo < hi, cfg.beta_box > 0


def _certificate(ws, est, alpha, beta, dL, cfg: FitConfig):
    """Fixed-point residual and score norm over the canonical probe basis."""
    wn = _wn_vec(ws, est, beta)
    id_resid = float(np.max(np.abs(dL * wn - 1.0 / ws.n)))
    s3 = 1.0 / ws.n - dL * wn
    score_norm = float(np.max(np.abs(s3)))
    alpha_free, beta_free = _free_directions(cfg)
    if np.any(alpha_free):
        s1 = _alpha_score_mean(ws, est, alpha)
        score_norm = max(score_norm, float(np.max(np.abs(s1[alpha_free]))))
    if beta_free:
        s2, _ = _score_info_beta(ws, est, beta, dL)
        score_norm = max(score_norm, abs(s2))
    return id_resid, score_norm


def _mstep(ws, est, alpha, beta, dL, cfg: FitConfig, warn: list):
    # conditional maximization in alpha (closed form, ascent-safeguarded)
    stats = _alpha_stats(ws, est)
    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        alpha_new = _solve_gaussian_mle(stats, cfg.alpha_box, cfg.var_floor)
    for c in caught:
        msg = str(c.message)
        if msg not in warn:
            warn.append(msg)
    if _alpha_objective(stats, alpha_new) < _alpha_objective(stats, alpha) - 1e-12:
        # projection onto the box can break ascent; backtrack toward the old value
        ok = False
        va, vn = alpha.as_array(), alpha_new.as_array()
        for j in range(1, cfg.step_halving_max + 1):
            cand = TransitionParams.from_array(va + (vn - va) * 0.5**j)
            if _alpha_objective(stats, cand) >= _alpha_objective(stats, alpha) - 1e-12:
                alpha_new, ok = cand, True
                break
        if not ok:
            alpha_new = alpha

    mats = ws.risk_mats(beta)
    for _ in range(cfg.inner_cycles):
        wn = _wn_vec(ws, est, beta, eV=mats[0])
        _check_wn(ws, wn)
        dL = 1.0 / (ws.n * wn)
        score, info = _score_info_beta(ws, est, beta, dL, mats=mats)
        if info <= 0 or abs(score) < 0.05 * cfg.tol_score:
            continue
        q0 = _q_beta(ws, est, beta, dL, mats=mats)
        step = score / info
        for j in range(cfg.step_halving_max + 1):
            cand = float(np.clip(beta + step * 0.5**j, -cfg.beta_box, cfg.beta_box))
            if cand == beta:
                break
            mats_c = ws.risk_mats(cand)
            if _q_beta(ws, est, cand, dL, mats=mats_c) >= q0 - 1e-13 * (1 + abs(q0)):
                beta, mats = cand, mats_c
                break
    wn = _wn_vec(ws, est, beta, eV=mats[0])
    _check_wn(ws, wn)
    dL = 1.0 / (ws.n * wn)
    return alpha_new, beta, dL


def _init_theta(ws: _Workspace, init: Theta | None, cfg: FitConfig):
    if init is None:
        alpha = observed_transition_mle(ws.dataset, box=cfg.alpha_box, var_floor=cfg.var_floor)
        beta = 0.0
        dL = 1.0 / np.sum(ws.risk, axis=0)  # Nelson-Aalen jumps
        return alpha, beta, dL
    alpha = TransitionParams.from_array(cfg.alpha_box.project(init.alpha.as_array()))
    beta = float(np.clip(init.beta, -cfg.beta_box, cfg.beta_box))
    ht = np.asarray(init.hazard.times)
    if ht.size != ws.K or not np.allclose(ht, ws.xe, rtol=0.0, atol=1e-12):
        raise ValidationError("initial hazard must jump exactly at the dataset event times")
    dL = np.maximum(np.asarray(init.hazard.jumps, dtype=float), 1e-300)
    return alpha, beta, dL


def _boundedness_check(ws, est, dL, cfg, warn: list):
    at_tau = int(np.sum(ws.x >= ws.dataset.tau))
    if at_tau == 0:
        return
    zmax = max(float(np.max(np.abs(ws.V))) if ws.V.size else 0.0,
               float(np.max(np.abs(est.nodes))) if est.nodes.size else 0.0)
    m = math.exp(-cfg.beta_box * zmax) if cfg.beta_box * zmax < EXP_CLIP else 0.0
    if m <= 0:
        return
    bound = (ws.K / ws.n) / (m * at_tau / ws.n)
    if float(np.sum(dL)) > bound * (1 + 1e-9):
        warn.append(f"hazard mass {float(np.sum(dL)):.6g} exceeds the boundedness bound {bound:.6g}")


def em_fit(dataset: Dataset, init: Theta | None = None, config: FitConfig | None = None) -> FitResult:
    """Maximize the joint pseudo likelihood by ECM with ascent safeguards."""
    cfg = config or FitConfig()
    dataset = validate_dataset(dataset)
    if dataset.n_events < 1:
        raise InsufficientDataError("at least one uncensored subject is required")
    ws = _Workspace(dataset)
    warn: list[str] = []
    if max(len(s.measurements) for s in dataset.subjects) < 2:
        warn.append("identifiability: no subject has two or more measurements")

    alpha, beta, dL = _init_theta(ws, init, cfg)
    est = _estep(ws, alpha, beta, dL, cfg.Q)
    ll = _loglik(ws, alpha, dL, est)
    trace = [ll]
    converged = False
    score_norm = math.inf
    iterations = 0

    for it in range(1, cfg.max_iter + 1):
        iterations = it
        a_new, b_new, dL_new = _mstep(ws, est, alpha, beta, dL, cfg, warn)
        est_new = _estep(ws, a_new, b_new, dL_new, cfg.Q)
        ll_new = _loglik(ws, a_new, dL_new, est_new)
        if ll_new < ll - ASCENT_TOL:
            accepted = False
            va, vn = alpha.as_array(), a_new.as_array()
            for j in range(1, cfg.step_halving_max + 1):
                t = 0.5**j
                a_try = TransitionParams.from_array(va + (vn - va) * t)
                b_try = beta + (b_new - beta) * t
                dL_try = dL + (dL_new - dL) * t
                est_try = _estep(ws, a_try, b_try, dL_try, cfg.Q)
                ll_try = _loglik(ws, a_try, dL_try, est_try)
                if ll_try >= ll - ASCENT_TOL:
                    a_new, b_new, dL_new, est_new, ll_new = a_try, b_try, dL_try, est_try, ll_try
                    accepted = True
                    break
            if not accepted:
                raise AscentError(
                    f"observed log likelihood decreased ({ll:.10g} -> {ll_new:.10g}) "
                    f"and {cfg.step_halving_max} halvings did not restore ascent at iteration {it}")
        change = max(
            float(np.max(np.abs(a_new.as_array() - alpha.as_array()))),
            abs(b_new - beta),
            float(np.max(np.abs(dL_new - dL))),
        )
        alpha, beta, dL, est, ll = a_new, b_new, dL_new, est_new, ll_new
        trace.append(ll)
        id_resid, score_norm = _certificate(ws, est, alpha, beta, dL, cfg)
        if change < cfg.tol_param and score_norm <= cfg.tol_score and id_resid <= cfg.id_tol:
            converged = True
            break

    _boundedness_check(ws, est, dL, cfg, warn)
    if abs(beta) >= cfg.beta_box and cfg.beta_box > 0:
        warn.append("beta at the box boundary")
    theta = Theta(alpha=alpha, beta=beta, hazard=SieveHazard(tuple(ws.xe), tuple(dL)))
    return FitResult(
        theta_hat=theta,
        loglik_trace=trace,
        iterations=iterations,
        converged=converged,
        score_norm=float(score_norm),
        warnings=warn,
        n_subjects=ws.n,
    )


# ---------------------------------------------------------------------------
# Public single-shot operations (thin wrappers over the vectorized kernels)
# ---------------------------------------------------------------------------

def _atoms_to_estep(ws: _Workspace, atoms, beta: float, dL: np.ndarray) -> _EStep:
    if len(atoms) != ws.n:
        raise ValidationError("atoms must align with dataset.subjects")
    qmax = max(len(np.atleast_1d(a.nodes)) for a in atoms)
    nodes = np.zeros((ws.n, qmax))
    weights = np.zeros((ws.n, qmax))
    log_norm = np.zeros(ws.n)
    for i, a in enumerate(atoms):
        nd = np.atleast_1d(np.asarray(a.nodes, dtype=float))
        wt = np.atleast_1d(np.asarray(a.weights, dtype=float))
        nodes[i, : nd.size] = nd
        nodes[i, nd.size:] = nd[-1] if nd.size else 0.0
        weights[i, : wt.size] = wt
        log_norm[i] = a.log_norm
    eV, _, _ = ws.risk_mats(beta)
    a_obs = eV @ dL
    a_lat = ws.lat_mask @ dL
    return _EStep(nodes, weights, log_norm, a_obs, a_lat)


def _hazard_jumps(ws: _Workspace, hazard: SieveHazard) -> np.ndarray:
    ht = np.asarray(hazard.times)
    if ht.size != ws.K or not np.allclose(ht, ws.xe, rtol=0.0, atol=1e-12):
        raise ValidationError("hazard must jump exactly at the dataset event times")
    return np.asarray(hazard.jumps, dtype=float)


def w_n(u: float, dataset: Dataset, atoms, beta: float) -> float:
    """W_n(u) = (1/n) sum_i E[e^{beta Z(u)} 1{u <= X_i} | y_i] at an event time u."""
    ws = _Workspace(dataset)
    k = int(np.argmin(np.abs(ws.xe - u)))
    if abs(ws.xe[k] - u) > 1e-12:
        raise ValidationError(f"u={u!r} is not an event time of the dataset")
    est = _atoms_to_estep(ws, atoms, beta, np.zeros(ws.K))
    return float(_wn_vec(ws, est, beta)[k])


def lambda_update(dataset: Dataset, atoms, beta: float) -> SieveHazard:
    """Closed-form hazard update: dL_k = (1/n) / W_n(x_k)."""
    ws = _Workspace(dataset)
    est = _atoms_to_estep(ws, atoms, beta, np.zeros(ws.K))
    wn = _wn_vec(ws, est, beta)
    _check_wn(ws, wn)
    return SieveHazard(tuple(ws.xe), tuple(1.0 / (ws.n * wn)))


def score_beta(dataset: Dataset, atoms, beta: float, hazard: SieveHazard) -> float:
    """Empirical beta-score (1/n) sum_i E_i[dZ - int Z e^{bZ} dL]."""
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, hazard)
    est = _atoms_to_estep(ws, atoms, beta, dL)
    return _score_info_beta(ws, est, beta, dL)[0]


def info_beta(dataset: Dataset, atoms, beta: float, hazard: SieveHazard) -> float:
    """Curvature (1/n) sum_i E_i[int Z^2 e^{bZ} dL] used by the Newton step."""
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, hazard)
    est = _atoms_to_estep(ws, atoms, beta, dL)
    return _score_info_beta(ws, est, beta, dL)[1]


def observed_loglik(dataset: Dataset, theta: Theta, Q: int = 40) -> float:
    """Observed-data log likelihood of theta, by mode-recentered quadrature."""
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, theta.hazard)
    est = _estep(ws, theta.alpha, theta.beta, dL, Q)
    return _loglik(ws, theta.alpha, dL, est)


def estep_atoms(dataset: Dataset, theta: Theta, Q: int = 40) -> list[PosteriorAtoms]:
    """Posterior atoms for all subjects at theta, in subject order."""
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, theta.hazard)
    est = _estep(ws, theta.alpha, theta.beta, dL, Q)
    out = []
    for i in range(ws.n):
        take = 1 if ws.has_extra[i] else est.nodes.shape[1]
        out.append(PosteriorAtoms(
            nodes=est.nodes[i, :take].copy(), weights=est.weights[i, :take].copy(),
            mode=float(est.mode[i]), curvature_sd=float(est.sd[i]),
            log_norm=float(est.log_norm[i])))
    return out


def score_full(dataset: Dataset, theta: Theta, h, Q: int = 40, atoms=None) -> float:
    """Empirical score along the probe h = (h1, h2, h3-at-event-times).

    With `atoms` given, expectations are frozen at the atoms' parameter
    (the two-argument score of the EM construction); otherwise the atoms are
    recomputed at theta itself.
    """
    h1, h2, h3 = h
    ws = _Workspace(dataset)
    dL = _hazard_jumps(ws, theta.hazard)
    if atoms is None:
        est = _estep(ws, theta.alpha, theta.beta, dL, Q)
    else:
        est = _atoms_to_estep(ws, atoms, theta.beta, dL)
    h1 = np.zeros(5) if h1 is None else np.asarray(h1, dtype=float)
    h3 = np.zeros(ws.K) if h3 is None else np.asarray(h3, dtype=float) * np.ones(ws.K)
    s1 = _alpha_score_mean(ws, est, theta.alpha)
    s2, _ = _score_info_beta(ws, est, theta.beta, dL)
    wn = _wn_vec(ws, est, theta.beta)
    s3 = float(np.sum(h3 * (1.0 / ws.n - dL * wn)))
    return float(h1 @ s1) + float(h2) * s2 + s3
