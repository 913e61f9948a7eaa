"""Calibration, rank statistics and decision-curve analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

# discrete predictions with this many distinct values or fewer are smoothed
# by exact group means instead of a kernel
DISCRETE_LEVELS = 10
MIN_PER_LEVEL = 20
EXACT_WILCOXON_MAX = 20
DEFAULT_EMPHASIS = (0.10, 0.70)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    curve: np.ndarray  # (101, 2): predicted, smoothed observed
    ici: float
    smoother: str
    smoother_bandwidth: float
    observed: np.ndarray  # smoothed observed probability at each prediction


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return float(0.9 * spread * x.size ** (-0.2))


def nadaraya_watson(x_train, y_train, x_eval, bandwidth: float) -> np.ndarray:
    """Gaussian-kernel regression of ``y_train`` on ``x_train`` at ``x_eval``."""
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_eval = np.atleast_1d(np.asarray(x_eval, dtype=float))
    out = np.empty(x_eval.size)
    rows = max(1, (1 << 21) // max(1, x_train.size))
    pos = y_train > 0
    for s in range(0, x_eval.size, rows):
        u = (x_eval[s : s + rows, None] - x_train[None, :]) / bandwidth
        logk = -0.5 * u * u
        den = logsumexp(logk, axis=1)
        if np.any(pos):
            num = logsumexp(logk[:, pos], axis=1, b=y_train[pos][None, :])
            out[s : s + rows] = np.exp(num - den)
        else:
            out[s : s + rows] = 0.0
    return np.clip(out, 0.0, 1.0)


def _group_means(preds, outcomes):
    levels, inv = np.unique(preds, return_inverse=True)
    counts = np.bincount(inv)
    means = np.bincount(inv, weights=outcomes) / counts
    return levels, counts, means, inv


def calibration(preds, outcomes, smoother: str = "kernel", bins: int = 10) -> CalibrationResult:
    """Smoothed calibration curve and integrated calibration index.

    Parameters
    ----------
    preds : array of shape (n,)
        Predicted event probabilities in [0, 1].
    outcomes : array of shape (n,)
        Binary observed outcomes.
    smoother : {"kernel", "bins"}
        ``kernel`` is Nadaraya-Watson with a Gaussian kernel and Silverman
        bandwidth on the predictions. Predictions with at most
        ``DISCRETE_LEVELS`` distinct values use exact per-value means.
        ``bins`` uses ``bins`` equal-count quantile bins.
    """
    p = np.asarray(preds, dtype=float).reshape(-1)
    y = np.asarray(outcomes, dtype=float).reshape(-1)
    if y.size == 0:
        raise ValueError("empty outcomes")
    if p.size != y.size:
        raise ValueError("preds and outcomes differ in length")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("outcomes must be binary")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("predictions must lie in [0, 1]")
    if p.size < 20:
        raise ValueError(f"calibration needs at least 20 patients, got {p.size}")
    grid = np.linspace(p.min(), p.max(), 101)

    if smoother == "bins":
        edges = np.quantile(p, np.linspace(0, 1, bins + 1))
        which = np.clip(np.searchsorted(edges[1:-1], p, side="right"), 0, bins - 1)
        counts = np.bincount(which, minlength=bins)
        sums = np.bincount(which, weights=y, minlength=bins)
        bin_mean = np.divide(sums, counts, out=np.full(bins, np.nan), where=counts > 0)
        obs = bin_mean[which]
        gwhich = np.clip(np.searchsorted(edges[1:-1], grid, side="right"), 0, bins - 1)
        gobs = bin_mean[gwhich]
        # an empty bin on the grid borrows the nearest patient's bin
        bad = np.isnan(gobs)
        if np.any(bad):
            nearest = np.abs(grid[bad, None] - p[None, :]).argmin(axis=1)
            gobs[bad] = obs[nearest]
        bw = 0.0
        name = "bins"
    elif smoother == "kernel":
        levels, counts, means, inv = _group_means(p, y)
        if levels.size <= DISCRETE_LEVELS:
            if np.any(counts < MIN_PER_LEVEL):
                raise ValueError(
                    f"discrete predictions need at least {MIN_PER_LEVEL} patients per value"
                )
            obs = means[inv]
            gobs = means[np.abs(grid[:, None] - levels[None, :]).argmin(axis=1)]
            bw = 0.0
        else:
            bw = silverman_bandwidth(p)
            obs = nadaraya_watson(p, y, p, bw)
            gobs = nadaraya_watson(p, y, grid, bw)
        name = "kernel"
    else:
        raise ValueError(f"unknown smoother {smoother!r}")

    ici = float(np.mean(np.abs(p - obs)))
    curve = np.column_stack([grid, np.clip(gobs, 0.0, 1.0)])
    return CalibrationResult(curve, ici, name, bw, obs)


def ici(preds, outcomes) -> float:
    return calibration(preds, outcomes).ici


# ---------------------------------------------------------------------------
# rank statistics


def spearman(x, y) -> tuple[float, float]:
    """Spearman's rho with a two-sided t-approximation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x.size
    if y.size != k:
        raise ValueError("x and y differ in length")
    if k < 4:
        raise ValueError("Spearman correlation needs at least 4 pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("zero variance in input")
    rx = stats.rankdata(x)
    ry = stats.rankdata(y)
    if np.unique(x).size == k and np.unique(y).size == k:
        d = rx - ry
        rho = 1.0 - 6.0 * float(np.sum(d * d)) / (k * (k * k - 1))
    else:
        rho = float(np.corrcoef(rx, ry)[0, 1])
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((k - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), k - 2))


def _signed_rank_null_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each positive rank sum.

    ``ranks2`` are doubled ranks (integers, so tied half-ranks stay exact).
    Entry s of the result counts assignments with doubled positive sum s.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped. The statistic is the smaller of the
    positive and negative rank sums. With at most 20 nonzero pairs the
    p-value is exact (complete null distribution over all sign patterns);
    beyond that a tie-corrected normal approximation with continuity
    correction is used.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples differ in length")
    d = a - b
    d = d[d != 0]
    k = d.size
    if k == 0:
        raise ValueError("all differences zero")
    if k < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {k}")
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if k <= EXACT_WILCOXON_MAX:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_null_counts(ranks2)
        cut = int(round(2 * w))
        tail = sum(counts[: cut + 1])
        p = min(1.0, float(2 * tail) / float(2**k))
        return w, p
    mean = k * (k + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = k * (k + 1) * (2 * k + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (abs(w - mean) - 0.5) / math.sqrt(var)
    return w, float(min(1.0, 2.0 * stats.norm.sf(max(z, 0.0))))


# ---------------------------------------------------------------------------
# decision curves


@dataclass(frozen=True, eq=False)
class NetBenefitCurve:
    thresholds: np.ndarray
    nb_model: np.ndarray
    nb_treat_all: np.ndarray
    nb_treat_none: np.ndarray
    prevalence: float
    max_net_benefit: float
    winning_range: tuple[tuple[float, float], ...]
    emphasis: tuple[float, float]

    def rows(self):
        for t, m, a, z in zip(self.thresholds, self.nb_model, self.nb_treat_all, self.nb_treat_none):
            yield float(t), float(m), float(a), float(z)


def default_thresholds() -> np.ndarray:
    return np.round(np.arange(1, 100) / 100.0, 2)


def net_benefit(preds, outcomes, thresholds) -> np.ndarray:
    p = np.asarray(preds, dtype=float)
    y = np.asarray(outcomes).astype(bool)
    t = np.asarray(thresholds, dtype=float)
    n = p.size
    treated = p[None, :] >= t[:, None]
    tp = np.count_nonzero(treated & y[None, :], axis=1)
    fp = np.count_nonzero(treated & ~y[None, :], axis=1)
    return (tp - fp * (t / (1.0 - t))) / n


def decision_curve(preds, outcomes, grid=None, emphasis=DEFAULT_EMPHASIS) -> NetBenefitCurve:
    """Net benefit of treating patients whose predicted risk meets each threshold.

    The maximum net benefit and the winning threshold intervals (where the
    model beats both treat-all and treat-none) are taken over the grid
    points inside the ``emphasis`` window.
    """
    p = np.asarray(preds, dtype=float).reshape(-1)
    y = np.asarray(outcomes).reshape(-1)
    if p.size != y.size or p.size == 0:
        raise ValueError("preds and outcomes must be non-empty and equal length")
    t = default_thresholds() if grid is None else np.asarray(grid, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("empty threshold grid")
    if np.any(t <= 0) or np.any(t >= 1):
        raise ValueError("thresholds must lie in (0, 1)")
    prevalence = float(np.mean(y.astype(bool)))
    nb = net_benefit(p, y, t)
    nb_all = prevalence - (1.0 - prevalence) * t / (1.0 - t)
    nb_none = np.zeros_like(t)
    lo, hi = emphasis
    window = (t >= lo) & (t <= hi)
    if np.any(window):
        max_nb = float(nb[window].max())
    else:
        max_nb = float("nan")
    wins = window & (nb > np.maximum(nb_all, nb_none))
    ranges = []
    start = None
    for i in range(t.size):
        if wins[i] and start is None:
            start = i
        if start is not None and (not wins[i] or i == t.size - 1):
            end = i if wins[i] else i - 1
            ranges.append((float(t[start]), float(t[end])))
            start = None
    return NetBenefitCurve(t, nb, nb_all, nb_none, prevalence, max_nb, tuple(ranges), (float(lo), float(hi)))
