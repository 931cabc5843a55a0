"""Exact Lindblad dynamics for systems small enough to hold the full density matrix.

Vectorisation is row-major: ``vec(A rho B) = kron(A, B.T) @ vec(rho)``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numba as nb
import numpy as np

from .fock import FockSpace, TruncationError, annihilation_matrix
from .integrate import integrate
from .lattice import Lattice
from .meanfield import check_density_matrix
from .model import EffectiveKerrParams, ModelParams, lattice_hamiltonian

MAX_ORACLE_DIM = 400


class DegenerateSteadyState(RuntimeError):
    pass


@dataclass
class Liouvillian:
    h: np.ndarray
    jump_ops: list
    gamma: float

    @property
    def hilbert_dim(self) -> int:
        return self.h.shape[0]

    @property
    def dim(self) -> int:
        return self.hilbert_dim ** 2

    def apply(self, rho) -> np.ndarray:
        """L(rho) = -i[H, rho] + gamma/2 sum(2 a rho a+ - rho a+a - a+a rho)."""
        rho = np.asarray(rho, dtype=complex)
        out = -1j * (self.h @ rho - rho @ self.h)
        for a in self.jump_ops:
            ad = a.conj().T
            nn = ad @ a
            out += 0.5 * self.gamma * (2 * a @ rho @ ad - rho @ nn - nn @ rho)
        return out

    def matrix(self) -> np.ndarray:
        d = self.hilbert_dim
        eye = np.eye(d)
        m = -1j * (np.kron(self.h, eye) - np.kron(eye, self.h.T))
        for a in self.jump_ops:
            nn = a.conj().T @ a
            m += 0.5 * self.gamma * (2 * np.kron(a, a.conj()) - np.kron(eye, nn.T) - np.kron(nn, eye))
        return m


def build_liouvillian(h, jump_ops, gamma: float) -> Liouvillian:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-12 * max(1.0, np.abs(h).max()):
        raise ValueError("Hamiltonian is not Hermitian")
    ops = [np.asarray(a, dtype=complex) for a in jump_ops]
    for a in ops:
        if a.shape != h.shape:
            raise ValueError(f"jump operator shape {a.shape} does not match Hamiltonian {h.shape}")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return Liouvillian(h, ops, float(gamma))


@nb.njit(cache=True, nogil=True)
def _lindblad_rhs(t, y, out, args):
    h, ops, gamma = args
    d = h.shape[0]
    rho = y.reshape((d, d))
    res = -1j * (h @ rho - rho @ h)
    for k in range(ops.shape[0]):
        a = ops[k]
        ad = np.conj(a.T).copy()
        nn = ad @ a
        res += 0.5 * gamma * (2.0 * (a @ rho @ ad) - rho @ nn - nn @ rho)
    out[:] = res.reshape(-1)


def propagate(L: Liouvillian, rho0, t, rtol: float = 1e-10, atol: float = 1e-12, check: bool = True):
    """Density matrix at time ``t`` (scalar) or at each time of an increasing array ``t``."""
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != L.h.shape:
        raise ValueError("initial state does not match the Liouvillian")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be non-negative and increasing")
    ops = np.array(L.jump_ops) if L.jump_ops else np.zeros((0,) + L.h.shape, complex)
    args = (np.ascontiguousarray(L.h), np.ascontiguousarray(ops), L.gamma)
    ys, status = integrate(_lindblad_rhs, 0.0, rho0.reshape(-1).copy(), times, rtol, atol, 1e-3, args)
    if status:
        raise RuntimeError("Lindblad integration failed: step size underflow")
    d = L.hilbert_dim
    rhos = ys.reshape(len(times), d, d)
    if check:
        for r in rhos:
            check_density_matrix(r, herm_tol=1e-8, trace_tol=1e-8, eig_tol=1e-8)
    return rhos[0] if np.ndim(t) == 0 else rhos


def steady_state(L: Liouvillian, gap_tol: float = 1e-9, residual_tol: float = 1e-10) -> np.ndarray:
    """Unique stationary state from the smallest right-singular vector of the materialised L."""
    m = L.matrix()
    _, s, vh = np.linalg.svd(m)
    scale = max(1.0, s[0])
    if s[-2] < gap_tol * scale:
        raise DegenerateSteadyState(
            f"stationary state not unique: two singular values below {gap_tol * scale:.3g} "
            f"({s[-1]:.3g}, {s[-2]:.3g})"
        )
    d = L.hilbert_dim
    rho = vh[-1].conj().reshape(d, d)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    res = np.abs(L.apply(rho)).max()
    if res > residual_tol * scale:
        raise RuntimeError(f"steady-state residual {res:.3g} above tolerance")
    return rho


# --------------------------------------------------------------------------- model helpers


def expectation(rho, op) -> complex:
    return complex(np.trace(np.asarray(op) @ rho))


def lattice_liouvillian(params: ModelParams, lattice: Lattice, space: FockSpace) -> tuple[Liouvillian, list]:
    """Exact Liouvillian of the whole lattice and the site annihilators."""
    dim = space.dim ** lattice.n_sites
    if dim > MAX_ORACLE_DIM:
        raise ValueError(f"system too large for the exact oracle (Hilbert dimension {dim} > {MAX_ORACLE_DIM})")
    h, a_ops = lattice_hamiltonian(params, lattice, space)
    return build_liouvillian(h, a_ops, params.gamma), a_ops


def site_observables(rho, a_ops) -> dict:
    """Per-site <n>, <a> and <a+ a+ a a>, plus g2 where defined."""
    n = np.array([expectation(rho, a.conj().T @ a).real for a in a_ops])
    a = np.array([expectation(rho, op) for op in a_ops])
    pair = np.array([expectation(rho, op.conj().T @ op.conj().T @ op @ op).real for op in a_ops])
    with np.errstate(invalid="ignore", divide="ignore"):
        g2 = np.where(n > 0, pair / np.where(n > 0, n, 1) ** 2, np.nan)
    return {"n": n, "a": a, "pair": pair, "g2": g2}


@dataclass
class KerrOracleResult:
    rho: np.ndarray
    n0: float
    n_per_site: float
    top_population: float


def effective_kerr_oracle(params: EffectiveKerrParams, space: FockSpace, threshold: float = 1e-3) -> KerrOracleResult:
    """Steady state of ``omega0 n + F_eff (a + a+) + U_eff/2 a+a+aa`` with loss ``gamma``."""
    a = annihilation_matrix(space)
    ad = a.conj().T
    h = params.omega0 * ad @ a + params.f_eff * (a + ad) + 0.5 * params.u_eff * ad @ ad @ a @ a
    rho = steady_state(build_liouvillian(h, [a], params.gamma))
    top = float(rho[-1, -1].real)
    if top > threshold:
        raise TruncationError(f"top Fock level population {top:.3g} exceeds {threshold:g}; raise n_max")
    n0 = float(np.trace(ad @ a @ rho).real)
    return KerrOracleResult(rho, n0, n0 / params.n_sites, top)


def linear_cavity_occupation(f: float, omega: float, gamma: float = 1.0) -> float:
    """Analytic steady occupation of a driven damped linear cavity."""
    return f * f / (omega * omega + 0.25 * gamma * gamma)


# --------------------------------------------------------------------------- reference files

REFERENCE_COLUMNS = ("key", "observable", "value")


def reference_key(config: dict) -> str:
    """Canonical hash of a parameter dictionary (sorted keys, repr floats)."""
    canon = json.dumps({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in config.items()},
                       sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_reference(path, key: str, values: dict) -> None:
    """Append ``observable -> value`` rows under ``key``; values written at full precision."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(REFERENCE_COLUMNS)
        for name in sorted(values):
            writer.writerow([key, name, repr(float(values[name]))])


def read_reference(path, key: str) -> dict:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != REFERENCE_COLUMNS:
            raise ValueError(f"{path}: not a reference file")
        for row in reader:
            if row and row[0] == key:
                out[row[1]] = float(row[2])
    return out
