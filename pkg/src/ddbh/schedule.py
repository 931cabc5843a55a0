from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np


@dataclass(frozen=True)
class SweepSchedule:
    """Triangular pump ramp ``f_start -> f_end -> f_start`` over total time ``t_s``.

    Pump values are absolute (units of gamma); use :meth:`from_ratios` for F/U input.
    """

    f_start: float
    f_end: float
    t_s: float

    def __post_init__(self):
        if not self.t_s > 0:
            raise ValueError("sweep time t_s must be positive")
        if self.f_end < self.f_start:
            raise ValueError("f_end must not be below f_start")

    @property
    def v_s(self) -> float:
        return 2.0 * (self.f_end - self.f_start) / self.t_s

    @property
    def v_inv(self) -> float:
        return np.inf if self.v_s == 0 else 1.0 / self.v_s

    @classmethod
    def from_velocity(cls, f_start: float, f_end: float, v_inv: float) -> "SweepSchedule":
        """Schedule whose sweep velocity satisfies ``1 / v_s = v_inv`` (units gamma^-2 with gamma=1)."""
        return cls(f_start, f_end, 2.0 * (f_end - f_start) * v_inv)

    @classmethod
    def from_ratios(cls, f_start_over_u: float, f_end_over_u: float, v_inv: float, u: float):
        return cls.from_velocity(f_start_over_u * u, f_end_over_u * u, v_inv)

    @classmethod
    def constant(cls, f: float, t_end: float) -> "SweepSchedule":
        return cls(f, f, t_end)

    def grid_times(self, points_per_half: int = 201) -> np.ndarray:
        """Observation times; the first ``points_per_half`` cover the rising half."""
        m = points_per_half - 1
        return np.linspace(0.0, self.t_s, 2 * m + 1)


def pump_profile(schedule: SweepSchedule, t) -> np.ndarray | float:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.t_s):
        raise ValueError(f"time outside [0, {schedule.t_s}]")
    half = 0.5 * schedule.t_s
    v = schedule.v_s
    f = np.where(t_arr < half, schedule.f_start + v * t_arr, schedule.f_end - v * (t_arr - half))
    return float(f) if np.ndim(t) == 0 else f


@nb.njit(cache=True, nogil=True)
def pump_kernel(t, f_start, f_end, t_s):
    """Compiled :func:`pump_profile` for use inside integrators; ``t`` is clamped to [0, t_s]."""
    tt = min(max(t, 0.0), t_s)
    v = 2.0 * (f_end - f_start) / t_s
    if tt < 0.5 * t_s:
        return f_start + v * tt
    return f_end - v * (tt - 0.5 * t_s)
