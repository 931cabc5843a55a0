"""Power-law fits of the hysteresis surface and finite-size scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class PowerLawFit:
    """``y = beta * x**(-alpha)`` fitted on ``points[window[0]:window[1]]``."""

    alpha: float
    beta: float
    window: tuple
    residual: float  # RMS of the log-log residuals
    alpha_ci: tuple = (float("nan"), float("nan"))  # 95% confidence interval
    n_points: int = 0


@dataclass(frozen=True)
class DoublePowerLaw:
    short: PowerLawFit
    long: PowerLawFit
    knee: int  # index of the shared point of both segments
    residual: float  # RMS log-log residual over both segments
    flagged: bool  # residual above the bound: the data do not look like two power laws


@dataclass(frozen=True)
class ScalingSeries:
    sizes: tuple
    values: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) != len(self.values):
            raise ValueError("sizes and values differ in length")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    ci: tuple
    prefactor: float
    residual: float


def _as_xy(points):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be a sequence of (x, y) pairs")
    return arr[:, 0], arr[:, 1]


def default_window(n: int) -> tuple[int, int]:
    """The third of the points with the largest x (at least three)."""
    k = max(3, int(np.ceil(n / 3)))
    return (max(0, n - k), n)


def _loglog_line(x, y, weights=None):
    if len(x) < 3:
        raise ValueError("a power-law fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit requires positive x and y")
    lx, ly = np.log(x), np.log(y)
    w = np.ones_like(lx) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    design = np.column_stack([lx, np.ones_like(lx)]) * sw[:, None]
    coef, *_ = np.linalg.lstsq(design, ly * sw, rcond=None)
    slope, intercept = coef
    resid = ly - (slope * lx + intercept)
    dof = len(x) - 2
    if dof > 0:
        s2 = float((w * resid ** 2).sum() / dof)
        cov = s2 * np.linalg.inv(design.T @ design)
        half = stats.t.ppf(0.975, dof) * np.sqrt(cov[0, 0])
    else:
        half = float("nan")
    return slope, intercept, resid, half


def fit_power_law(points, window=None, weights=None) -> PowerLawFit:
    """Least-squares line through ``(log x, log y)``; ``alpha = -slope``, ``beta = exp(intercept)``.

    ``window`` is an index range ``(lo, hi)`` (default: the long-x third).
    ``weights`` optionally weights the squared log residuals, e.g. ``(y / y_err)**2``.
    """
    x, y = _as_xy(points)
    lo, hi = default_window(len(x)) if window is None else (int(window[0]), int(window[1]))
    if not 0 <= lo < hi <= len(x):
        raise ValueError(f"window {lo, hi} outside the data range 0..{len(x)}")
    w = None if weights is None else np.asarray(weights, dtype=float)[lo:hi]
    slope, intercept, resid, half = _loglog_line(x[lo:hi], y[lo:hi], w)
    alpha = -slope
    return PowerLawFit(float(alpha), float(np.exp(intercept)), (lo, hi),
                       float(np.sqrt(np.mean(resid ** 2))), (float(alpha - half), float(alpha + half)),
                       hi - lo)


def two_segment_fit(points, knee: int, min_points: int = 3) -> DoublePowerLaw:
    """Separate log-log lines on ``[0, knee]`` and ``[knee, n-1]``, sharing the knee point.

    A knee at either end reduces to a single fit over all points.
    """
    x, _ = _as_xy(points)
    n = len(x)
    if knee <= 0 or knee >= n - 1:
        whole = fit_power_law(points, (0, n))
        return DoublePowerLaw(whole, whole, int(knee), whole.residual, False)
    if knee + 1 < min_points or n - knee < min_points:
        raise ValueError("each segment needs at least 3 points")
    short = fit_power_law(points, (0, knee + 1))
    long = fit_power_law(points, (knee, n))
    sse = short.residual ** 2 * short.n_points + long.residual ** 2 * long.n_points
    return DoublePowerLaw(short, long, int(knee), float(np.sqrt(sse / (n + 1))), False)


def detect_double_power_law(points, residual_bound: float = 0.02) -> DoublePowerLaw:
    """Two-segment fit with the knee placed to minimise the total squared log residual.

    ``flagged`` is set when even the best two-segment fit leaves an RMS log
    residual above ``residual_bound``.
    """
    x, _ = _as_xy(points)
    n = len(x)
    if n < 6:
        raise ValueError("double power-law detection needs at least 6 points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x values must be strictly increasing")
    best = None
    for knee in range(2, n - 2):
        cand = two_segment_fit(points, knee)
        if best is None or cand.residual < best.residual:
            best = cand
    return DoublePowerLaw(best.short, best.long, best.knee, best.residual, best.residual > residual_bound)


def fit_size_scaling(series: ScalingSeries) -> ScalingFit:
    """Exponent of ``value ~ N**exponent`` by log-log least squares."""
    if len(series.sizes) < 3:
        raise ValueError("size scaling needs at least 3 sizes")
    x = np.array(series.sizes, dtype=float)
    y = np.array(series.values, dtype=float)
    if np.any(y <= 0):
        raise ValueError("size scaling requires positive values")
    slope, intercept, resid, half = _loglog_line(x, y)
    return ScalingFit(float(slope), (float(slope - half), float(slope + half)), float(np.exp(intercept)),
                      float(np.sqrt(np.mean(resid ** 2))))
