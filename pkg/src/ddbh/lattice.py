"""Periodic square lattices, bond lists with multiplicity and cluster tilings.

Sites are numbered ``s = x + lx * y``. A direction of extent 1 carries no bonds,
so a ``2 x 1`` lattice is a two-site ring (coordination 2) and ``1 x 1`` is an
isolated cavity. A direction of extent 2 wraps onto the same neighbour twice,
which is kept as bond multiplicity 2 so every site keeps its full coordination.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fock import ClusterShape

TEMPLATES = {"1x1": (1, 1), "1x2": (1, 2), "1x3": (1, 3), "2x1": (2, 1), "3x1": (3, 1)}


def parse_template(template) -> tuple[int, int]:
    """Return ``(rows, cols)`` of a cluster template such as ``"1x2"``.

    Rows run along y and columns along x, so ``"1x2"`` pairs horizontal neighbours.
    """
    if isinstance(template, str):
        key = template.lower().replace("×", "x").replace(" ", "")
        if key not in TEMPLATES:
            raise ValueError(f"unsupported cluster template {template!r}; choose from {sorted(TEMPLATES)}")
        return TEMPLATES[key]
    rows, cols = (int(v) for v in template)
    if f"{rows}x{cols}" not in TEMPLATES:
        raise ValueError(f"unsupported cluster template {rows}x{cols}")
    return rows, cols


@dataclass(frozen=True)
class Lattice:
    lx: int
    ly: int
    template: tuple
    bonds: tuple
    z: int
    clusters: tuple

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def template_name(self) -> str:
        return f"{self.template[0]}x{self.template[1]}"

    def coords(self, site: int) -> tuple[int, int]:
        return site % self.lx, site // self.lx

    def site(self, x: int, y: int) -> int:
        return (x % self.lx) + self.lx * (y % self.ly)

    @cached_property
    def cluster_index(self) -> np.ndarray:
        owner = np.empty(self.n_sites, dtype=int)
        for c, shape in enumerate(self.clusters):
            owner[list(shape.sites)] = c
        return owner

    @cached_property
    def neighbours(self) -> tuple:
        """Per site, a tuple of ``(neighbour, multiplicity)``."""
        nb = [[] for _ in range(self.n_sites)]
        for i, j, m in self.bonds:
            nb[i].append((j, m))
            nb[j].append((i, m))
        return tuple(tuple(sorted(v)) for v in nb)


def build_lattice(lx: int, ly: int, template="1x1") -> Lattice:
    if lx < 1 or ly < 1:
        raise ValueError(f"lattice dimensions must be >= 1, got {lx}x{ly}")
    rows, cols = parse_template(template)
    if lx % cols or ly % rows:
        raise ValueError(f"cluster template {rows}x{cols} does not tile a {lx}x{ly} lattice")

    counts = Counter()
    for y in range(ly):
        for x in range(lx):
            s = x + lx * y
            if lx > 1:
                counts[tuple(sorted((s, (x + 1) % lx + lx * y)))] += 1
            if ly > 1:
                counts[tuple(sorted((s, x + lx * ((y + 1) % ly))))] += 1
    bonds = tuple((i, j, m) for (i, j), m in sorted(counts.items()))
    z = 2 * ((lx > 1) + (ly > 1))

    clusters = []
    for y0 in range(0, ly, rows):
        for x0 in range(0, lx, cols):
            sites = [(x0 + dx) + lx * (y0 + dy) for dy in range(rows) for dx in range(cols)]
            clusters.append(ClusterShape(tuple(sites)))
    return Lattice(lx, ly, (rows, cols), bonds, z, tuple(clusters))


def min_image_distance(lattice: Lattice, i: int, j: int) -> float:
    xi, yi = lattice.coords(i)
    xj, yj = lattice.coords(j)
    dx = abs(xi - xj)
    dy = abs(yi - yj)
    dx = min(dx, lattice.lx - dx)
    dy = min(dy, lattice.ly - dy)
    return float(np.hypot(dx, dy))


def internal_bonds(lattice: Lattice, cluster: ClusterShape) -> list[tuple[int, int, int]]:
    members = set(cluster.sites)
    return [(i, j, m) for i, j, m in lattice.bonds if i in members and j in members]


def boundary_links(lattice: Lattice, cluster: ClusterShape) -> list[tuple[int, int, int]]:
    """Bonds leaving ``cluster`` as ``(inner, outer, multiplicity)``, inner sites in cluster order."""
    if cluster not in lattice.clusters:
        raise ValueError(f"{cluster} is not part of the lattice tiling")
    members = set(cluster.sites)
    links = []
    for inner in cluster.sites:
        for outer, m in lattice.neighbours[inner]:
            if outer not in members:
                links.append((inner, outer, m))
    return links


def distance_matrix(lattice: Lattice) -> np.ndarray:
    n = lattice.n_sites
    return np.array([[min_image_distance(lattice, i, j) for j in range(n)] for i in range(n)])


def distance_classes(lattice: Lattice, decimals: int = 9):
    """Distinct pair distances and, per distance, the list of ordered pairs ``(i, j)``."""
    dist = np.round(distance_matrix(lattice), decimals)
    values = np.unique(dist)
    pairs = [list(zip(*np.nonzero(dist == d))) for d in values]
    return values, pairs
