"""Truncated Fock spaces and operators on small clusters of cavities.

Cluster basis ordering: the first site listed in a :class:`ClusterShape` is the
slowest-varying tensor index, i.e. operators are assembled with ``np.kron`` in
site order.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np


class TruncationError(RuntimeError):
    """Population of the highest retained Fock level exceeded the threshold."""


@dataclass(frozen=True)
class FockSpace:
    n_max: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class ClusterShape:
    sites: tuple

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if not sites:
            raise ValueError("a cluster needs at least one site")
        if len(set(sites)) != len(sites):
            raise ValueError(f"duplicate sites in cluster {sites}")
        object.__setattr__(self, "sites", sites)

    def __len__(self):
        return len(self.sites)

    def dim(self, space: FockSpace) -> int:
        return space.dim ** len(self.sites)

    def position(self, site: int) -> int:
        return self.sites.index(site)


def annihilation_matrix(space: FockSpace) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, space.dim, dtype=float)), 1).astype(complex)


def creation_matrix(space: FockSpace) -> np.ndarray:
    return annihilation_matrix(space).conj().T


def number_matrix(space: FockSpace) -> np.ndarray:
    return np.diag(np.arange(space.dim, dtype=float)).astype(complex)


def embed_operator(op, position: int, shape: ClusterShape, space: FockSpace) -> np.ndarray:
    """Place a single-site operator at ``position`` inside the cluster product space."""
    op = np.asarray(op)
    if op.shape != (space.dim, space.dim):
        raise ValueError(f"operator shape {op.shape} does not match Fock dimension {space.dim}")
    if not 0 <= position < len(shape):
        raise IndexError(f"position {position} outside cluster of {len(shape)} sites")
    eye = np.eye(space.dim, dtype=complex)
    factors = [op if k == position else eye for k in range(len(shape))]
    return reduce(np.kron, factors).astype(complex)


def vacuum_state(shape: ClusterShape, space: FockSpace) -> np.ndarray:
    psi = np.zeros(shape.dim(space), dtype=complex)
    psi[0] = 1.0
    return psi


def fock_state(occupations, space: FockSpace) -> np.ndarray:
    """Product Fock state |n_0, n_1, ...> in the cluster basis."""
    idx = 0
    for n in occupations:
        if not 0 <= n <= space.n_max:
            raise ValueError(f"occupation {n} outside [0, {space.n_max}]")
        idx = idx * space.dim + int(n)
    psi = np.zeros(space.dim ** len(occupations), dtype=complex)
    psi[idx] = 1.0
    return psi


def coherent_state(alpha: complex, space: FockSpace) -> np.ndarray:
    """Truncated coherent state, renormalised on the retained levels."""
    n = np.arange(space.dim)
    logfact = np.cumsum(np.log(np.maximum(n, 1)))
    amp = np.exp(-0.5 * logfact) * np.power(complex(alpha), n)
    return amp / np.linalg.norm(amp)


def occupation_table(n_sites: int, space: FockSpace) -> np.ndarray:
    """Photon number of each site for every basis state, shape ``(n_sites, dim)``."""
    grids = np.indices((space.dim,) * n_sites).reshape(n_sites, -1)
    return grids.astype(float)


def top_level_population(psi, n_sites: int, space: FockSpace) -> np.ndarray:
    """Probability of finding each site at the cutoff level ``n_max``."""
    occ = occupation_table(n_sites, space)
    prob = np.abs(np.asarray(psi)) ** 2
    prob = prob / prob.sum()
    return np.array([prob[occ[i] == space.n_max].sum() for i in range(n_sites)])


def check_truncation(psi, n_sites: int, space: FockSpace, threshold: float = 1e-3) -> float:
    """Raise :class:`TruncationError` if any site populates the cutoff level above ``threshold``."""
    worst = float(top_level_population(psi, n_sites, space).max())
    if worst > threshold:
        raise TruncationError(
            f"top Fock level population {worst:.3g} exceeds {threshold:.3g} (n_max={space.n_max})"
        )
    return worst
