"""Ensemble estimators over trajectory records.

Sums are kept exactly: every float is converted to an integer multiple of
2**-1074 (the smallest subnormal), so sums are Python integers and merging
batches gives bit-identical results in any order. Means and errors are rounded
to float only once, on read-out.

Pair moments follow the product ansatz: inside a cluster the exact moment
<a_i+ a_j+ a_j a_i> is used, across clusters the product <n_i><n_j> formed
within one trajectory (and only then averaged over trajectories).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, distance_classes

_SHIFT = 1074
_SCALE = 1 << _SHIFT


class NotFinalizedError(RuntimeError):
    pass


def _exact_one(x: float) -> int:
    p, q = float(x).as_integer_ratio()
    return p * (_SCALE // q)


_exact = np.frompyfunc(_exact_one, 1, 1)


def to_exact(values) -> np.ndarray:
    """Object array of integers ``x * 2**1074`` (exact for every finite float)."""
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite value in trajectory record")
    return np.asarray(_exact(arr), dtype=object).reshape(arr.shape)


def _ratio_to_float(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=object)
    out = np.empty(num.shape)
    flat = out.reshape(-1)
    for k, v in enumerate(num.reshape(-1)):
        flat[k] = int(v) / den  # correctly rounded int / int
    return out


@dataclass
class TrajectorySummary:
    """Per-trajectory totals kept for resampling errors (jackknife)."""

    n_total: np.ndarray  # (G,) sum_i <n_i>
    pair_total: np.ndarray  # (G,) sum_ij pair moment


@dataclass
class EnsembleAccumulator:
    n_grid: int
    n_sites: int
    count: int = 0
    sum_n: np.ndarray = None
    sumsq_n: np.ndarray = None
    sum_a_re: np.ndarray = None
    sum_a_im: np.ndarray = None
    sumsq_a_re: np.ndarray = None
    sumsq_a_im: np.ndarray = None
    sum_pair: np.ndarray = None
    sumsq_pair: np.ndarray = None
    samples: dict = field(default_factory=dict)
    finalized: bool = False

    def __post_init__(self):
        g, n = self.n_grid, self.n_sites
        for name, shape in (("sum_n", (g, n)), ("sumsq_n", (g, n)), ("sum_a_re", (g, n)),
                            ("sum_a_im", (g, n)), ("sumsq_a_re", (g, n)), ("sumsq_a_im", (g, n)),
                            ("sum_pair", (g, n, n)), ("sumsq_pair", (g, n, n))):
            if getattr(self, name) is None:
                z = np.empty(shape, dtype=object)
                z.fill(0)
                setattr(self, name, z)

    # ----------------------------------------------------------------- filling

    def add(self, index: int, n, a, pair):
        """Add one trajectory: ``n`` (G, N), ``a`` (G, N) complex, ``pair`` (G, N, N) estimator."""
        if self.finalized:
            raise RuntimeError("accumulator already finalized")
        index = int(index)
        if index in self.samples:
            raise ValueError(f"trajectory {index} added twice")
        n = np.asarray(n, dtype=float)
        a = np.asarray(a, dtype=complex)
        pair = np.asarray(pair, dtype=float)
        g, s = self.n_grid, self.n_sites
        if n.shape != (g, s) or a.shape != (g, s) or pair.shape != (g, s, s):
            raise ValueError("record shape does not match the accumulator")
        en, ere, eim, ep = to_exact(n), to_exact(a.real), to_exact(a.imag), to_exact(pair)
        self.sum_n += en
        self.sumsq_n += en * en
        self.sum_a_re += ere
        self.sumsq_a_re += ere * ere
        self.sum_a_im += eim
        self.sumsq_a_im += eim * eim
        self.sum_pair += ep
        self.sumsq_pair += ep * ep
        self.count += 1
        self.samples[index] = TrajectorySummary(n.sum(axis=1), pair.sum(axis=(1, 2)))

    def add_record(self, record, lattice: Lattice):
        self.add(record.trajectory_index, record.n, record.a, record.pair_matrix(lattice))

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        """Combined accumulator; commutative and associative (exact integer sums)."""
        if (self.n_grid, self.n_sites) != (other.n_grid, other.n_sites):
            raise ValueError("cannot merge accumulators of different shape")
        overlap = set(self.samples) & set(other.samples)
        if overlap:
            raise ValueError(f"trajectories present in both batches: {sorted(overlap)[:5]}")
        out = EnsembleAccumulator(self.n_grid, self.n_sites)
        for name in ("sum_n", "sumsq_n", "sum_a_re", "sum_a_im", "sumsq_a_re", "sumsq_a_im",
                     "sum_pair", "sumsq_pair"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.count = self.count + other.count
        out.samples = {**self.samples, **other.samples}
        return out

    def finalize(self) -> "EnsembleAccumulator":
        if self.count < 1:
            raise ValueError("no trajectories accumulated")
        den = self.count << _SHIFT
        self._mean_n = _ratio_to_float(self.sum_n, den)
        self._mean_a = _ratio_to_float(self.sum_a_re, den) + 1j * _ratio_to_float(self.sum_a_im, den)
        self._mean_pair = _ratio_to_float(self.sum_pair, den)
        self.finalized = True
        return self

    # ----------------------------------------------------------------- read-out

    def _require(self):
        if not self.finalized:
            raise NotFinalizedError("accumulator must be finalized first")

    @property
    def mean_n(self) -> np.ndarray:
        self._require()
        return self._mean_n

    @property
    def mean_a(self) -> np.ndarray:
        self._require()
        return self._mean_a

    @property
    def mean_pair(self) -> np.ndarray:
        self._require()
        return self._mean_pair

    def sample_table(self):
        """Per-trajectory totals in trajectory-index order: ``(indices, n_total, pair_total)``."""
        idx = sorted(self.samples)
        return (np.array(idx, dtype=np.int64),
                np.array([self.samples[i].n_total for i in idx]),
                np.array([self.samples[i].pair_total for i in idx]))


# --------------------------------------------------------------------------- estimators


def pair_moment(acc: EnsembleAccumulator, i: int, j: int) -> np.ndarray:
    """Ensemble pair moment on every grid point."""
    return acc.mean_pair[:, i, j]


def _k_from_totals(n_total, pair_total):
    return 1.0 - n_total + pair_total / n_total


def compressibility(acc: EnsembleAccumulator, allow_empty: bool = False) -> np.ndarray:
    """K = 1 - <N> + sum_ij pair_moment(i, j) / <N> per grid point.

    Grid points with zero mean particle number raise unless ``allow_empty``, in
    which case they are NaN.
    """
    n_tot = acc.mean_n.sum(axis=1)
    p_tot = acc.mean_pair.sum(axis=(1, 2))
    empty = n_tot <= 0
    if empty.any() and not allow_empty:
        raise ZeroDivisionError("compressibility undefined: zero mean particle number")
    with np.errstate(divide="ignore", invalid="ignore"):
        k = _k_from_totals(n_tot, p_tot)
    return np.where(empty, np.nan, k)


def jackknife(samples: np.ndarray, estimator) -> tuple[np.ndarray, np.ndarray]:
    """Full-sample estimate and leave-one-out jackknife error of ``estimator(mean over axis 0)``.

    ``samples`` holds one row per trajectory (or a tuple of such arrays).
    """
    arrays = samples if isinstance(samples, tuple) else (samples,)
    m = arrays[0].shape[0]
    if m < 2:
        raise ValueError("jackknife needs at least two trajectories")
    totals = [x.sum(axis=0) for x in arrays]
    full = estimator(*[t / m for t in totals])
    loo = np.array([estimator(*[(t - x[k]) / (m - 1) for t, x in zip(totals, arrays)])
                    for k in range(m)])
    mean_loo = loo.mean(axis=0)
    err = np.sqrt((m - 1) / m * ((loo - mean_loo) ** 2).sum(axis=0))
    return full, err


def compressibility_error(acc: EnsembleAccumulator) -> np.ndarray:
    """Jackknife error of K over trajectories (NaN where <N> = 0)."""
    _, n_tot, p_tot = acc.sample_table()
    with np.errstate(divide="ignore", invalid="ignore"):
        _, err = jackknife((n_tot, p_tot), _k_from_totals)
    return np.where(n_tot.mean(axis=0) > 0, err, np.nan)


def standard_error(acc: EnsembleAccumulator, observable: str = "n") -> np.ndarray:
    """Sample standard deviation over trajectories divided by sqrt(N_tr).

    ``observable`` is one of ``"n"``, ``"a_re"``, ``"a_im"``, ``"pair"``; the
    variance is formed exactly from the integer sums before rounding.
    """
    m = acc.count
    if m < 2:
        raise ValueError("standard error needs at least two trajectories")
    sums = {"n": (acc.sum_n, acc.sumsq_n), "a_re": (acc.sum_a_re, acc.sumsq_a_re),
            "a_im": (acc.sum_a_im, acc.sumsq_a_im), "pair": (acc.sum_pair, acc.sumsq_pair)}
    if observable not in sums:
        raise ValueError(f"unknown observable {observable!r}; choose from {sorted(sums)}")
    s1, s2 = sums[observable]
    # var / m = (m S2 - S1^2) / (m^2 (m - 1)), both sums scaled by 2**1074 per factor
    num = m * s2 - s1 * s1
    var_over_m = _ratio_to_float(num, (m * m * (m - 1)) << (2 * _SHIFT))
    return np.sqrt(np.maximum(var_over_m, 0.0))


@dataclass
class CorrelationTable:
    distances: np.ndarray  # (D,)
    g: np.ndarray  # (G, D) bin means
    g_err: np.ndarray  # (G, D)
    g_pairs: np.ndarray  # (G, N, N) unbinned
    pairs: list  # per distance, list of (i, j)


def g2_pairs(acc: EnsembleAccumulator) -> np.ndarray:
    n = acc.mean_n
    if np.any(n <= 0):
        raise ZeroDivisionError("pair correlation undefined: zero density on a site")
    return acc.mean_pair / (n[:, :, None] * n[:, None, :])


def g2_binned(acc: EnsembleAccumulator, lattice: Lattice, grid_index=None) -> CorrelationTable:
    """Distance-binned g_ij = pair_moment / (<n_i><n_j>), arithmetic mean within each bin.

    ``grid_index`` restricts the table to selected grid points (all by default).
    Errors propagate per-pair standard errors to first order, treating the
    pairs in a bin as independent.
    """
    if lattice.n_sites != acc.n_sites:
        raise ValueError("lattice does not match the accumulator")
    sel = slice(None) if grid_index is None else np.atleast_1d(grid_index)
    n = acc.mean_n[sel]
    if np.any(n <= 0):
        raise ZeroDivisionError("pair correlation undefined: zero density on a site")
    p = acc.mean_pair[sel]
    nn = n[:, :, None] * n[:, None, :]
    g = p / nn
    if acc.count >= 2:
        se_p = standard_error(acc, "pair")[sel]
        se_n = standard_error(acc, "n")[sel]
        rel_n = se_n / n
        rel = np.sqrt((se_p / np.where(p > 0, p, 1.0)) ** 2 + rel_n[:, :, None] ** 2 + rel_n[:, None, :] ** 2)
        g_se = np.abs(g) * rel
    else:
        g_se = np.full_like(g, np.nan)
    distances, pairs = distance_classes(lattice)
    gb = np.empty((g.shape[0], len(distances)))
    eb = np.empty_like(gb)
    for k, plist in enumerate(pairs):
        ii = np.array([i for i, _ in plist])
        jj = np.array([j for _, j in plist])
        gb[:, k] = g[:, ii, jj].mean(axis=1)
        eb[:, k] = np.sqrt((g_se[:, ii, jj] ** 2).sum(axis=1)) / len(plist)
    return CorrelationTable(distances, gb, eb, g, pairs)


# --------------------------------------------------------------------------- exact states


def exact_compressibility(rho, a_ops, form: str = "expanded") -> float:
    """K of a density matrix on the full Hilbert space.

    ``form="expanded"`` uses 1 - <N> + sum_ij <a_i+ a_j+ a_j a_i> / <N>,
    ``form="variance"`` uses (<N^2> - <N>^2) / <N>.
    """
    rho = np.asarray(rho, dtype=complex)
    n_ops = [a.conj().T @ a for a in a_ops]
    n_tot = sum(np.trace(n @ rho).real for n in n_ops)
    if not n_tot > 0:
        raise ZeroDivisionError("compressibility undefined: zero mean particle number")
    if form == "expanded":
        pair = 0.0
        for ai in a_ops:
            for aj in a_ops:
                pair += np.trace(ai.conj().T @ aj.conj().T @ aj @ ai @ rho).real
        return 1.0 - n_tot + pair / n_tot
    if form == "variance":
        big_n = sum(n_ops)
        return (np.trace(big_n @ big_n @ rho).real - n_tot ** 2) / n_tot
    raise ValueError(f"unknown form {form!r}")
