"""Kaplan-Meier, weighted Cox proportional hazards and Harrell's C."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    """Cox fit preconditions failed or the solver did not converge."""


# ---------------------------------------------------------------------------
# Kaplan-Meier


@dataclass(frozen=True, eq=False)
class KmCurve:
    times: np.ndarray
    survival: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray

    def at(self, t: float) -> float:
        """Step value at ``t`` (right-continuous)."""
        k = np.searchsorted(self.times, t, side="right")
        return 1.0 if k == 0 else float(self.survival[k - 1])


def kaplan_meier(time, event) -> KmCurve:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if time.size == 0:
        raise ValueError("Kaplan-Meier needs at least one observation")
    order = np.argsort(time, kind="stable")
    t = time[order]
    e = event[order]
    uniq, first = np.unique(t, return_index=True)
    at_risk = t.size - first
    deaths = np.add.reduceat(e.astype(np.int64), first)
    surv = np.cumprod(1.0 - deaths / at_risk)
    return KmCurve(uniq, surv, at_risk, deaths)


def km_estimate(cohort: Cohort, t_star: float) -> tuple[KmCurve, float]:
    curve = kaplan_meier(cohort.time, cohort.event)
    return curve, curve.at(t_star)


# ---------------------------------------------------------------------------
# Cox proportional hazards


@dataclass(frozen=True)
class FitReport:
    iterations: int
    gradient_norm: float
    log_partial_likelihood: float
    converged: bool


@dataclass(frozen=True, eq=False)
class CoxModel:
    """Fitted Cox model on mean-centered covariates.

    ``baseline_cum_hazard[k]`` is the Breslow cumulative hazard at
    ``baseline_times[k]`` for a patient at ``covariate_means``.
    """

    covariate_names: tuple[str, ...]
    coefficients: np.ndarray
    covariate_means: np.ndarray
    baseline_times: np.ndarray
    baseline_cum_hazard: np.ndarray
    fit_report: FitReport | None = None

    def cumulative_hazard(self, t: float) -> float:
        k = np.searchsorted(self.baseline_times, t, side="right")
        return 0.0 if k == 0 else float(self.baseline_cum_hazard[k - 1])

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.covariate_means) @ self.coefficients

    def predict_risk(self, X, t_star: float) -> np.ndarray:
        """Probability of an event by ``t_star`` for each row of ``X``."""
        H0 = self.cumulative_hazard(t_star)
        return -np.expm1(-H0 * np.exp(self.linear_predictor(X)))


def partial_log_likelihood(beta, X, time, event, weights=None, ridge: float = 0.0):
    """Weighted Breslow log partial likelihood with gradient and Hessian.

    Rows must be sorted by ascending time. ``X`` is used as given (callers
    center it). Returns ``(loglik, gradient, hessian)``.
    """
    beta = np.asarray(beta, dtype=float)
    n, d = X.shape
    w = np.ones(n) if weights is None else weights
    eta = X @ beta
    shift = eta.max()
    r = w * np.exp(eta - shift)
    # reverse cumulative sums give the risk-set totals for t_j >= t_i
    S0 = np.cumsum(r[::-1])[::-1]
    rX = r[:, None] * X
    S1 = np.cumsum(rX[::-1], axis=0)[::-1]
    S2 = np.cumsum((rX[:, :, None] * X[:, None, :])[::-1], axis=0)[::-1]
    start = np.searchsorted(time, time, side="left")
    ev = np.flatnonzero(event)
    g = start[ev]
    we = w[ev]
    s0 = S0[g]
    xbar = S1[g] / s0[:, None]
    loglik = float(np.sum(we * (eta[ev] - shift - np.log(s0))))
    grad = np.sum(we[:, None] * (X[ev] - xbar), axis=0)
    second = S2[g] / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
    hess = -np.sum(we[:, None, None] * second, axis=0)
    if ridge:
        loglik -= 0.5 * ridge * float(beta @ beta)
        grad = grad - ridge * beta
        hess = hess - ridge * np.eye(d)
    return loglik, grad, hess


def _check_inputs(cohort: Cohort, weights):
    n, d = cohort.X.shape
    if n < 2 * d:
        raise FitError(f"cohort {cohort.name!r}: {n} records is below the 2d = {2 * d} floor")
    if not np.any(cohort.event):
        raise FitError(f"cohort {cohort.name!r} has no events")
    sd = cohort.X.std(axis=0)
    for j in np.flatnonzero(sd == 0):
        raise FitError(f"covariate {cohort.covariate_names[j]!r} has zero variance")
    if weights is None:
        return np.ones(n)
    w = np.asarray(getattr(weights, "values", weights), dtype=float)
    if w.shape != (n,):
        raise FitError(f"weights have shape {w.shape}, expected ({n},)")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise FitError("weights must be finite and strictly positive")
    return w


def fit_cox(
    cohort: Cohort,
    weights=None,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 1e-9,
    max_scaled_coef: float = 15.0,
) -> CoxModel:
    """Fit a (weighted) Cox model by Newton-Raphson with Breslow ties.

    Parameters
    ----------
    cohort : Cohort
    weights : WeightSet or array of shape (n,), optional
        Per-patient case weights; ``None`` means unit weights.
    tol : float
        Convergence threshold on the max-norm of the score.
    max_iter : int
        Non-convergence within this many iterations raises :class:`FitError`.
    ridge : float
        Tiny L2 penalty for conditioning.
    max_scaled_coef : float
        A coefficient whose size times its covariate sd exceeds this value is
        treated as a monotone-likelihood divergence.
    """
    w = _check_inputs(cohort, weights)
    X = cohort.X
    means = X.mean(axis=0)
    order = np.argsort(cohort.time, kind="stable")
    Xc = (X - means)[order]
    t = cohort.time[order]
    e = cohort.event[order]
    ws = w[order]
    d = X.shape[1]

    beta = np.zeros(d)
    ll, grad, hess = partial_log_likelihood(beta, Xc, t, e, ws, ridge)
    it = 0
    while np.max(np.abs(grad)) >= tol:
        if it >= max_iter:
            raise FitError(
                f"Cox fit on {cohort.name!r} did not converge in {max_iter} iterations "
                f"(|score|max = {np.max(np.abs(grad)):.3g})"
            )
        it += 1
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise FitError("singular information matrix") from None
        candidate = beta - step
        new = partial_log_likelihood(candidate, Xc, t, e, ws, ridge)
        halvings = 0
        slack = 1e-12 * max(1.0, abs(ll))
        while not new[0] >= ll - slack and halvings < 30:
            step = step / 2
            candidate = beta - step
            new = partial_log_likelihood(candidate, Xc, t, e, ws, ridge)
            halvings += 1
        beta = candidate
        ll, grad, hess = new
        if np.any(np.abs(beta) * X.std(axis=0) > max_scaled_coef):
            raise FitError(
                f"Cox fit on {cohort.name!r} diverges (monotone likelihood); coefficients {beta}"
            )

    eta = Xc @ beta
    r = ws * np.exp(eta)
    S0 = np.cumsum(r[::-1])[::-1]
    ev_times, first = np.unique(t[e], return_index=True)
    start = np.searchsorted(t, ev_times, side="left")
    ev_w = np.add.reduceat(ws[e], first) if ev_times.size else np.array([])
    dH = ev_w / S0[start]
    model = CoxModel(
        covariate_names=cohort.covariate_names,
        coefficients=beta,
        covariate_means=means,
        baseline_times=ev_times,
        baseline_cum_hazard=np.cumsum(dH),
        fit_report=FitReport(it, float(np.max(np.abs(grad))), ll, True),
    )
    logger.debug("fit_cox %s: %d iterations, loglik %.6f", cohort.name, it, ll)
    return model


def predict_risk(model: CoxModel, x, t_star: float):
    """Event probability by ``t_star``; scalar for a single covariate vector."""
    x = np.asarray(x, dtype=float)
    risk = model.predict_risk(x, t_star)
    return float(risk[0]) if x.ndim == 1 else risk


# ---------------------------------------------------------------------------
# Concordance


@dataclass(frozen=True)
class ConcordanceReport:
    c_index: float
    concordant: int
    discordant: int
    tied_risk: int
    usable_pairs: int


def concordance(risks, time, event) -> ConcordanceReport:
    """Harrell's C on arrays; see :func:`harrell_c`."""
    risks = np.asarray(risks, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if not (risks.shape == time.shape == event.shape):
        raise ValueError("risks, time and event must have the same length")
    conc = disc = tied = 0
    ev = np.flatnonzero(event)
    rows = max(1, (1 << 20) // max(1, time.size))
    for start in range(0, ev.size, rows):
        i = ev[start : start + rows]
        ti = time[i][:, None]
        later = (time[None, :] > ti) | ((time[None, :] == ti) & ~event[None, :])
        ri = risks[i][:, None]
        conc += int(np.count_nonzero(later & (ri > risks[None, :])))
        disc += int(np.count_nonzero(later & (ri < risks[None, :])))
        tied += int(np.count_nonzero(later & (ri == risks[None, :])))
    usable = conc + disc + tied
    if usable == 0:
        raise ValueError("no usable pairs for concordance")
    return ConcordanceReport((conc + 0.5 * tied) / usable, conc, disc, tied, usable)


def harrell_c(risks, cohort: Cohort) -> ConcordanceReport:
    """Harrell's concordance of ``risks`` against the cohort's follow-up.

    A pair is usable when the shorter time carries an event (or times tie
    and exactly one member had the event); it is concordant when that
    patient has the strictly higher risk, and half-counts on tied risk.
    """
    risks = np.asarray(risks, dtype=float)
    if risks.shape != (cohort.n,):
        raise ValueError(f"expected {cohort.n} risks, got {risks.shape}")
    return concordance(risks, cohort.time, cohort.event)
