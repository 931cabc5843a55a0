"""Hamiltonians of the driven-dissipative Bose-Hubbard lattice.

Energies are measured in units of the loss rate; ``gamma`` defaults to one.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .fock import (
    ClusterShape,
    FockSpace,
    annihilation_matrix,
    embed_operator,
    number_matrix,
    occupation_table,
)
from .lattice import Lattice, boundary_links, internal_bonds


@dataclass(frozen=True)
class ModelParams:
    delta: float
    u: float
    f: float = 0.0
    j: float = 0.0
    gamma: float = 1.0
    z: int = 4

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.z < 1:
            raise ValueError("coordination number z must be >= 1")
        for name in ("delta", "u", "f", "j"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def from_ratios(cls, u_over_gamma=20.0, j_over_u=0.5, f_over_u=0.0, delta_over_u=None,
                    resonance=4, z=4, gamma=1.0):
        """Build from the dimensionless ratios used throughout the model.

        The detuning defaults to the ``resonance``-photon condition ``1 + 2 delta / U = m``.
        """
        u = u_over_gamma * gamma
        if delta_over_u is None:
            delta_over_u = (resonance - 1) / 2
        return cls(delta=delta_over_u * u, u=u, f=f_over_u * u, j=j_over_u * u, gamma=gamma, z=z)

    @classmethod
    def defaults(cls, **overrides):
        """U/gamma = 20, four-photon resonance (delta = 1.5 U), J/U = 0.5, z = 4."""
        return replace(cls.from_ratios(), **overrides)

    def with_f(self, f: float) -> "ModelParams":
        return replace(self, f=f)

    def for_lattice(self, lattice: Lattice) -> "ModelParams":
        """Copy with ``z`` taken from the lattice (isolated sites keep z = 1, they have no bonds)."""
        return replace(self, z=max(lattice.z, 1))


@dataclass(frozen=True)
class EffectiveKerrParams:
    omega0: float
    f_eff: float
    u_eff: float
    n_sites: int
    gamma: float = 1.0


@dataclass
class ClusterOperators:
    """Operators of one cluster with the pump term split off.

    ``h_static`` holds detuning, Kerr and internal hopping; the full cluster
    Hamiltonian is ``h_static + F * drive + boundary(phi)``.
    """

    shape: ClusterShape
    space: FockSpace
    a: np.ndarray          # (k, dim, dim) local annihilation operators
    occupations: np.ndarray  # (k, dim) site occupations of every basis state
    h_static: np.ndarray
    drive: np.ndarray
    links: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.h_static.shape[0]

    @cached_property
    def number(self) -> np.ndarray:
        return np.diag(self.occupations.sum(axis=0)).astype(complex)

    def boundary_term(self, params: ModelParams, fields) -> np.ndarray:
        fields = np.asarray(fields, dtype=complex).reshape(-1)
        if fields.shape[0] != len(self.links):
            raise ValueError(f"expected {len(self.links)} boundary fields, got {fields.shape[0]}")
        term = np.zeros_like(self.h_static)
        for (inner, _outer, mult), phi in zip(self.links, fields):
            a_i = self.a[self.shape.position(inner)]
            term -= (params.j / params.z) * mult * (phi * a_i.conj().T + np.conj(phi) * a_i)
        return term

    def hamiltonian(self, params: ModelParams, fields=None, f=None) -> np.ndarray:
        f = params.f if f is None else f
        h = self.h_static + f * self.drive
        if self.links:
            if fields is None:
                raise ValueError("cluster has boundary links; mean fields required")
            h = h + self.boundary_term(params, fields)
        return h


def cluster_operators(params: ModelParams, lattice: Lattice, shape: ClusterShape,
                      space: FockSpace) -> ClusterOperators:
    a1 = annihilation_matrix(space)
    k = len(shape)
    a = np.array([embed_operator(a1, p, shape, space) for p in range(k)])
    occ = occupation_table(k, space)
    n1 = occ.sum(axis=0)
    kerr = (occ * (occ - 1)).sum(axis=0)
    h = np.diag(-params.delta * n1 + 0.5 * params.u * kerr).astype(complex)
    for i, j, m in internal_bonds(lattice, shape):
        ai = a[shape.position(i)]
        aj = a[shape.position(j)]
        hop = ai.conj().T @ aj
        h -= (params.j / params.z) * m * (hop + hop.conj().T)
    drive = sum(ai + ai.conj().T for ai in a)
    return ClusterOperators(shape, space, a, occ, h, drive, boundary_links(lattice, shape))


def cluster_hamiltonian(params: ModelParams, lattice: Lattice, shape: ClusterShape,
                        space: FockSpace, fields=None) -> np.ndarray:
    """Hermitian cluster Hamiltonian including the mean-field boundary term.

    ``fields`` lists the outer mean field for every entry of ``boundary_links``.
    """
    ops = cluster_operators(params, lattice, shape, space)
    if fields is None and ops.links:
        fields = np.zeros(len(ops.links), dtype=complex)
    return ops.hamiltonian(params, fields)


def effective_hamiltonian(h, params: ModelParams, shape: ClusterShape) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    d = h.shape[0]
    k = len(shape)
    n_max = round(d ** (1.0 / k)) - 1
    if h.shape != (d, d) or (n_max + 1) ** k != d:
        raise ValueError(f"matrix of shape {h.shape} does not match a {k}-site cluster")
    occ = occupation_table(k, FockSpace(n_max)).sum(axis=0)
    return h - 0.5j * params.gamma * np.diag(occ)


def single_site_hamiltonian(params: ModelParams, space: FockSpace, f=None, omega=None) -> np.ndarray:
    """Driven Kerr cavity ``omega n + U/2 a+a+aa + F (a + a+)``; ``omega`` defaults to ``-delta``."""
    f = params.f if f is None else f
    omega = -params.delta if omega is None else omega
    a = annihilation_matrix(space)
    n = number_matrix(space)
    return omega * n + 0.5 * params.u * (a.conj().T @ a.conj().T @ a @ a) + f * (a + a.conj().T)


def lattice_hamiltonian(params: ModelParams, lattice: Lattice, space: FockSpace):
    """Full Hamiltonian of the whole lattice and its site annihilation operators.

    Only sensible for a handful of sites; used as the exact reference.
    """
    whole = ClusterShape(tuple(range(lattice.n_sites)))
    ops = cluster_operators(params, lattice, whole, space)
    return ops.hamiltonian(params), list(ops.a)


def kerr_effective_params(params: ModelParams, n_sites: int, literal: bool = False) -> EffectiveKerrParams:
    """Homogeneous-mode reduction of the lattice to a single Kerr cavity.

    ``omega0 = -delta - J`` follows from the J/z hopping normalisation; ``literal=True``
    returns ``-delta - J z`` instead.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be >= 1")
    shift = params.j * params.z if literal else params.j
    return EffectiveKerrParams(
        omega0=-params.delta - shift,
        f_eff=params.f * np.sqrt(n_sites),
        u_eff=params.u / n_sites,
        n_sites=n_sites,
        gamma=params.gamma,
    )
