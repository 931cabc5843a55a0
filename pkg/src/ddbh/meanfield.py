"""Single-site Gutzwiller mean field for the density matrix.

Every site carries the same density matrix rho; hopping to the z neighbours
becomes the self-consistent drive ``-J (phi a+ + phi* a)`` with ``phi = tr(a rho)``.
As in the trajectory kernel the Fock-diagonal energies are removed by an
interaction-picture rotation, ``y_pq = rho_pq exp(i (E_p - E_q) t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numba as nb
import numpy as np

from .fock import FockSpace
from .integrate import integrate
from .model import ModelParams
from .schedule import SweepSchedule, pump_kernel


@dataclass
class MfBranch:
    f_over_u: np.ndarray
    n: np.ndarray
    g2_onsite: np.ndarray
    label: str  # "up" or "down"

    @property
    def compressibility(self) -> np.ndarray:
        """Mean-field K = 1 + n (g2 - 1)."""
        return 1.0 + self.n * (self.g2_onsite - 1.0)


@dataclass
class BistabilityWindow:
    j_over_u: float
    f_over_u: np.ndarray
    n_up: np.ndarray
    n_down: np.ndarray
    tolerance: float

    @property
    def interval(self):
        """``(lo, hi)`` in F/U where the branches differ by more than the tolerance, or None."""
        mask = np.abs(self.n_up - self.n_down) > self.tolerance
        if not mask.any():
            return None
        f = self.f_over_u[mask]
        return float(f.min()), float(f.max())

    @property
    def bistable(self) -> bool:
        return self.interval is not None


@dataclass
class BistabilityMap:
    windows: list
    onset: float | None  # smallest J/U with a nonempty window (refined by bisection when requested)


# --------------------------------------------------------------------------- kernels


@nb.njit(cache=True, nogil=True)
def _mf_rhs(t, y, out, args):
    energy, sq, gamma, j, f_start, f_end, t_s = args
    d = energy.shape[0]
    ph = np.empty(d, np.complex128)
    for p in range(d):
        ph[p] = np.exp(-1j * energy[p] * t)
    rho = np.empty((d, d), np.complex128)
    for p in range(d):
        for q in range(d):
            rho[p, q] = ph[p] * y[p * d + q] * np.conj(ph[q])
    phi = 0j
    for p in range(d - 1):
        phi += sq[p + 1] * rho[p + 1, p]
    c = pump_kernel(t, f_start, f_end, t_s) - j * phi
    cc = np.conj(c)
    for p in range(d):
        for q in range(d):
            # -i [c a+ + c* a, rho]
            comm = 0j
            if p > 0:
                comm += c * sq[p] * rho[p - 1, q]
            if q + 1 < d:
                comm -= c * rho[p, q + 1] * sq[q + 1]
            if p + 1 < d:
                comm += cc * sq[p + 1] * rho[p + 1, q]
            if q > 0:
                comm -= cc * rho[p, q - 1] * sq[q]
            val = -1j * comm - 0.5 * gamma * (p + q) * rho[p, q]
            if p + 1 < d and q + 1 < d:
                val += gamma * sq[p + 1] * sq[q + 1] * rho[p + 1, q + 1]
            out[p * d + q] = val * np.conj(ph[p]) * ph[q]


def _energies(params: ModelParams, space: FockSpace) -> np.ndarray:
    n = np.arange(space.dim, dtype=float)
    return -params.delta * n + 0.5 * params.u * n * (n - 1)


def _args(params, space, f_start, f_end, t_s):
    return (_energies(params, space), np.sqrt(np.arange(space.dim, dtype=float)),
            float(params.gamma), float(params.j), float(f_start), float(f_end), float(t_s))


def _to_lab(ys, times, energy):
    d = energy.shape[0]
    rhos = ys.reshape(len(times), d, d)
    ph = np.exp(-1j * np.outer(times, energy))
    return ph[:, :, None] * rhos * ph.conj()[:, None, :]


def _from_lab(rho, t, energy):
    ph = np.exp(1j * energy * t)
    return (ph[:, None] * rho * ph.conj()[None, :]).reshape(-1)


def vacuum_density(space: FockSpace) -> np.ndarray:
    rho = np.zeros((space.dim, space.dim), complex)
    rho[0, 0] = 1.0
    return rho


def check_density_matrix(rho, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -eig_tol:
        raise ValueError("density matrix has negative eigenvalues")


def mf_rhs(rho, params: ModelParams, f_now: float) -> np.ndarray:
    """d rho / dt of the self-consistent single-site Lindblad equation at pump ``f_now``."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    args = _args(params, FockSpace(d - 1), f_now, f_now, 1.0)
    out = np.empty(d * d, complex)
    # both frames coincide at t = 0; add back the diagonal commutator
    _mf_rhs(0.0, rho.reshape(-1).copy(), out, args)
    e = args[0]
    return out.reshape(d, d) - 1j * (e[:, None] - e[None, :]) * rho


def _n_g2(rhos):
    d = rhos.shape[-1]
    pops = np.real(np.diagonal(rhos, axis1=-2, axis2=-1))
    k = np.arange(d)
    n = pops @ k
    nn = pops @ (k * (k - 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        g2 = np.where(n > 0, nn / np.where(n > 0, n, 1.0) ** 2, np.nan)
    return n, g2


def mf_evolve(params: ModelParams, space: FockSpace, rho0, times, f_start, f_end=None, t_s=None,
              rtol=1e-8, atol=1e-10):
    """Density matrices at ``times`` (starting at ``times[0]``) under the pump ramp of the given schedule.

    With only ``f_start`` given the pump is constant.
    """
    f_end = f_start if f_end is None else f_end
    t_s = max(float(times[-1]), 1.0) if t_s is None else t_s
    args = _args(params, space, f_start, f_end, t_s)
    times = np.asarray(times, dtype=float)
    y0 = _from_lab(np.asarray(rho0, complex), times[0], args[0])
    ys, status = integrate(_mf_rhs, float(times[0]), y0, times, rtol, atol, 1e-3, args)
    if status:
        raise RuntimeError("mean-field integration failed: step size underflow")
    return _to_lab(ys, times, args[0])


def mf_sweep(params: ModelParams, schedule: SweepSchedule, space: FockSpace,
             points_per_half: int = 201, rtol=1e-8, atol=1e-10):
    """Up and down branches of a triangular sweep started from vacuum."""
    times = schedule.grid_times(points_per_half)
    rhos = mf_evolve(params, space, vacuum_density(space), times,
                     schedule.f_start, schedule.f_end, schedule.t_s, rtol, atol)
    n, g2 = _n_g2(rhos)
    m = points_per_half
    f_over_u = np.linspace(schedule.f_start, schedule.f_end, m) / params.u
    up = MfBranch(f_over_u, n[:m], g2[:m], "up")
    down = MfBranch(f_over_u.copy(), n[m - 1:][::-1].copy(), g2[m - 1:][::-1].copy(), "down")
    return up, down


def mf_steady_continuation(params: ModelParams, space: FockSpace, f_values, rho0=None,
                           chunk=10.0, tol=1e-6, max_time=1000.0, rtol=1e-7, atol=1e-9):
    """Relax at each pump value in turn, seeding from the previous steady state.

    Relaxation stops once ``<n>`` changes by less than ``tol`` over ``chunk`` time units.
    Returns ``(n, g2, final_rho)``.
    """
    rho = vacuum_density(space) if rho0 is None else np.asarray(rho0, complex)
    ns, g2s = [], []
    for f in f_values:
        n_prev = _n_g2(rho)[0]
        elapsed = 0.0
        while True:
            rho = mf_evolve(params, space, rho, np.array([0.0, chunk]), f, rtol=rtol, atol=atol)[-1]
            elapsed += chunk
            n_now = _n_g2(rho)[0]
            if abs(n_now - n_prev) < tol or elapsed >= max_time:
                break
            n_prev = n_now
        n, g2 = _n_g2(rho)
        ns.append(float(n))
        g2s.append(float(g2))
    return np.array(ns), np.array(g2s), rho


def mf_window(params: ModelParams, space: FockSpace, f_over_u, tolerance=0.1, **relax) -> BistabilityWindow:
    f_over_u = np.asarray(f_over_u, dtype=float)
    fs = f_over_u * params.u
    n_up, _, rho = mf_steady_continuation(params, space, fs, **relax)
    n_down, _, _ = mf_steady_continuation(params, space, fs[::-1], rho0=rho, **relax)
    return BistabilityWindow(params.j / params.u, f_over_u, n_up, n_down[::-1], tolerance)


def mf_bistability_window(params: ModelParams, space: FockSpace, j_over_u, f_over_u,
                          tolerance=0.1, refine=0, **relax) -> BistabilityMap:
    """Bistable F/U intervals for each J/U in ``j_over_u``.

    The onset is the smallest scanned J/U with a nonempty window; ``refine > 0``
    bisects that many times between it and the preceding scanned value.
    """
    windows = []
    for j in j_over_u:
        windows.append(mf_window(_with_j(params, j), space, f_over_u, tolerance, **relax))
    flags = [w.bistable for w in windows]
    if not any(flags):
        return BistabilityMap(windows, None)
    first = flags.index(True)
    onset = float(windows[first].j_over_u)
    if refine and first > 0:
        lo, hi = float(windows[first - 1].j_over_u), onset
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            if mf_window(_with_j(params, mid), space, f_over_u, tolerance, **relax).bistable:
                hi = mid
            else:
                lo = mid
        onset = hi
    return BistabilityMap(windows, onset)


def _with_j(params: ModelParams, j_over_u: float) -> ModelParams:
    return replace(params, j=float(j_over_u) * params.u)
