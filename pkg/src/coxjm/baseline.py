"""Classical comparator: Cox partial likelihood with LVCF-imputed covariates.

The missing covariate value at each event time is imputed by the last
measured value at or before that time; Breslow's estimator then gives the
cumulative baseline hazard.  `breslow(dataset, 0.0)` is exactly Nelson-Aalen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, MeasurementGrid, SieveHazard, Subject, covariate_at, last_index
from .exceptions import DegenerateRiskSetError, InsufficientDataError, ValidationError
from .posterior import EXP_CLIP


@dataclass(frozen=True)
class BaselineFit:
    beta_pl: float
    breslow: SieveHazard
    iterations: int
    converged: bool
    flags: tuple[str, ...] = ()
    loglik: float = float("nan")
    score: float = float("nan")
    information: float = float("nan")


def lvcf_value(subject: Subject, u: float, grid: MeasurementGrid) -> float:
    """Last measured value at or before u: z_{a_u} (z_{a_x} past follow-up)."""
    if u < 0 or u > subject.x:
        raise ValidationError(f"lvcf_value: u={u!r} outside [0, x={subject.x!r}]")
    if u == 0:
        return subject.measurements[0]
    a_u = last_index(u, grid)
    a_x = last_index(subject.x, grid)
    return subject.measurements[min(a_u, a_x)]


def next_value(subject: Subject, u: float, grid: MeasurementGrid) -> float:
    """Covariate-path value at u; requires the dataset in full-information form."""
    v = covariate_at(subject, u, grid)
    if v is None:
        raise ValidationError(
            f"subject {subject.id!r} has a latent value at u={u!r}; "
            "next_value needs fully observed data")
    return v


def _value_matrix(dataset: Dataset, value_fn) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """V[j, k] = covariate value of subject j at event time x_k where at risk."""
    subs = dataset.subjects
    n = len(subs)
    xe = np.array(sorted(s.x for s in subs if s.delta == 1))
    if xe.size == 0:
        raise InsufficientDataError("no uncensored subjects")
    if np.any(np.diff(xe) <= 0):
        raise ValidationError("tied uncensored event times")
    x = np.array([s.x for s in subs])
    risk = xe[None, :] <= x[:, None]
    ev_row = np.empty(xe.size, dtype=int)
    pos = {s.x: i for i, s in enumerate(subs) if s.delta == 1}
    for k, t in enumerate(xe):
        ev_row[k] = pos[t]
    if value_fn in (lvcf_value, next_value):
        grid = dataset.grid
        a_e = np.array([last_index(t, grid) for t in xe], dtype=int)
        last = np.array([len(s.measurements) - 1 for s in subs], dtype=int)
        lmax = int(last.max()) + 1
        Z = np.zeros((n, lmax))
        for i, s in enumerate(subs):
            Z[i, : len(s.measurements)] = s.measurements
        if value_fn is lvcf_value:
            a_x = np.array([last_index(s.x, grid) for s in subs], dtype=int)
            idx = np.minimum(a_e[None, :], a_x[:, None])
        else:
            idx = np.broadcast_to((a_e + 1)[None, :], (n, xe.size))
            short = risk & (idx > last[:, None])
            if np.any(short):
                j = int(np.argmax(np.any(short, axis=1)))
                raise ValidationError(
                    f"subject {subs[j].id!r} has a latent value at risk; "
                    "next_value needs fully observed data")
            idx = np.minimum(idx, lmax - 1)
        V = np.take_along_axis(Z, idx, axis=1)
    else:
        V = np.zeros((n, xe.size))
        for j, s in enumerate(subs):
            for k, t in enumerate(xe):
                if risk[j, k]:
                    V[j, k] = value_fn(s, float(t), dataset.grid)
    return xe, np.where(risk, V, 0.0), risk, ev_row


def _pl_parts(V, risk, ev_row, beta):
    E = np.exp(np.minimum(beta * V, EXP_CLIP)) * risk
    S0 = np.sum(E, axis=0)
    if np.any(S0 <= 0):
        raise DegenerateRiskSetError(float(np.argmax(S0 <= 0)))
    S1 = np.sum(V * E, axis=0)
    S2 = np.sum(V * V * E, axis=0)
    v_event = V[ev_row, np.arange(V.shape[1])]
    loglik = float(np.sum(beta * v_event - np.log(S0)))
    mean = S1 / S0
    score = float(np.sum(v_event - mean))
    info = float(np.sum(S2 / S0 - mean * mean))
    return loglik, score, info


def partial_lik_fit(
    dataset: Dataset,
    value_fn=lvcf_value,
    beta_box: float = 10.0,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> BaselineFit:
    """Newton-Raphson maximization of the log partial likelihood.

    A flat likelihood (all covariate values equal within every risk set)
    returns beta = 0 with a "flat-likelihood" flag; a monotone likelihood is
    clipped at the box boundary and flagged non-converged.
    """
    xe, V, risk, ev_row = _value_matrix(dataset, value_fn)
    beta = 0.0
    flags: list[str] = []
    loglik, score, info = _pl_parts(V, risk, ev_row, beta)
    if info <= 1e-300:
        hz = breslow(dataset, 0.0, value_fn=value_fn)
        return BaselineFit(0.0, hz, 0, True, ("flat-likelihood",), loglik, score, info)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        if info <= 0:
            raise ValidationError("log partial likelihood is not concave at an iterate")
        step = score / info
        new = float(np.clip(beta + step, -beta_box, beta_box))
        ll_new, sc_new, info_new = _pl_parts(V, risk, ev_row, new)
        halved = 0
        while ll_new < loglik - 1e-12 and halved < 60:
            new = beta + (new - beta) * 0.5
            ll_new, sc_new, info_new = _pl_parts(V, risk, ev_row, new)
            halved += 1
        moved = abs(new - beta)
        beta, loglik, score, info = new, ll_new, sc_new, info_new
        if abs(score) <= tol:
            converged = True
            break
        if moved == 0.0:
            break
    if abs(beta) >= beta_box and abs(score) > tol:
        flags.append("boundary")
        converged = False
    hz = breslow(dataset, beta, value_fn=value_fn)
    return BaselineFit(beta, hz, it, converged, tuple(flags), loglik, score, info)


def breslow(dataset: Dataset, beta: float, value_fn=lvcf_value) -> SieveHazard:
    """Breslow estimator: jump 1 / sum_{at risk} e^{beta z_j(x_k)} at each event."""
    if not np.isfinite(beta):
        raise ValidationError("beta must be finite")
    xe, V, risk, _ = _value_matrix(dataset, value_fn)
    S0 = np.sum(np.exp(np.minimum(beta * V, EXP_CLIP)) * risk, axis=0)
    bad = ~(S0 > 0)
    if np.any(bad):
        raise DegenerateRiskSetError(float(xe[int(np.argmax(bad))]))
    return SieveHazard(tuple(xe), tuple(1.0 / S0))


def nelson_aalen(dataset: Dataset) -> SieveHazard:
    """Nelson-Aalen estimator: jump 1 / (number at risk) at each event time."""
    return breslow(dataset, 0.0)
