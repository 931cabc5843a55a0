"""Quantum trajectories of cluster-Gutzwiller product states.

Each cluster state is kept normalised; the squared norm the unnormalised
trajectory would have is tracked separately as ``log_survival``. A jump occurs
when ``log_survival`` falls below ``ln r`` for a uniform ``r`` drawn at the
previous jump (waiting-time sampling). Mean fields of neighbouring clusters are
recomputed at every Runge-Kutta stage, so the coupled clusters form a single
nonlinear ODE.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .fock import ClusterShape, FockSpace, TruncationError, vacuum_state
from .integrate import dense_component, dense_value, dp5_attempt, step_factor
from .lattice import Lattice
from .model import ModelParams, cluster_operators
from .schedule import SweepSchedule, pump_kernel as _pump

DONE, JUMP_PENDING, NEED_RNG, LOG_FULL, TRUNCATED, UNDERFLOW, BAD_JUMP = range(7)


class IntegrationError(RuntimeError):
    pass


class RngStream:
    """Counter-based (Philox) uniform stream keyed by ``(master_seed, trajectory_index)``."""

    def __init__(self, master_seed: int, trajectory_index: int):
        self.master_seed = int(master_seed)
        self.trajectory_index = int(trajectory_index)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.trajectory_index,))
        self._gen = np.random.Generator(np.random.Philox(seq))
        self.draws = 0

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` draws from (0, 1]."""
        self.draws += n
        return 1.0 - self._gen.random(n)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])


@dataclass
class ProductState:
    clusters: np.ndarray  # (n_clusters, cluster_dim)
    log_survival: float = 0.0
    t: float = 0.0

    def copy(self) -> "ProductState":
        return ProductState(self.clusters.copy(), self.log_survival, self.t)


@dataclass
class JumpEvent:
    t_jump: float
    site: int
    survival_threshold: float


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory on the observation grid.

    ``pair[g, c, i, j]`` is the within-cluster moment <a_i+ a_j+ a_j a_i> for
    local sites ``i, j`` of cluster ``c``.
    """

    times: np.ndarray
    n: np.ndarray
    a: np.ndarray
    pair: np.ndarray
    jump_times: np.ndarray
    jump_sites: np.ndarray
    trajectory_index: int = 0
    max_top_population: float = 0.0
    steps: int = 0

    def pair_matrix(self, lattice: Lattice) -> np.ndarray:
        """Full ``(G, N, N)`` pair moments: exact inside clusters, products across clusters."""
        g = self.n.shape[0]
        full = self.n[:, :, None] * self.n[:, None, :]
        for c, shape in enumerate(lattice.clusters):
            idx = np.array(shape.sites)
            full[np.ix_(np.arange(g), idx, idx)] = self.pair[:, c]
        return full


# --------------------------------------------------------------------------- kernels
#
# Inside the integrator the amplitudes are carried in the interaction picture of
# the Fock-diagonal energies E_q (detuning and Kerr terms): y_q = exp(i E_q t) psi_q.
# Only drive, hopping, mean-field and loss terms remain in the right-hand side,
# which removes the fast phase rotation of highly occupied levels.
#
# args layout:
#   0 hs_r, 1 hs_c, 2 hs_v   off-diagonal static part (internal hopping), COO
#   3 a_ptr, 4 a_r, 5 a_c, 6 a_v   local annihilators, COO per local site
#   7 occ (k, dc), 8 ntot (dc,), 9 energy (dc,), 10 cl_sites (nc, k)
#   11 link_ptr, 12 link_site, 13 link_mult   outer neighbours per global site
#   14 gamma, 15 J/z, 16 f_start, 17 f_end, 18 t_s
#   19-22 scratch arrays for the right-hand side (phases, lab amplitudes, <a_i>, <n_i>)


@nb.njit(cache=True, nogil=True)
def _rotate(y, t, energy, nc, dc, sign):
    """Multiply amplitudes by ``exp(sign * i * E_q * t)`` in place."""
    for q in range(dc):
        ph = np.exp(sign * 1j * energy[q] * t)
        for c in range(nc):
            y[c * dc + q] *= ph


@nb.njit(cache=True, nogil=True)
def _site_moments(psi, args, phi, nloc):
    """Normalised <a_i> and <n_i> for every global site of the lab-frame vector ``psi``."""
    a_ptr, a_r, a_c, a_v, occ, cl_sites = args[3], args[4], args[5], args[6], args[7], args[10]
    nc, k = cl_sites.shape
    dc = occ.shape[1]
    for c in range(nc):
        off = c * dc
        nrm = 0.0
        for q in range(dc):
            p = psi[off + q]
            nrm += p.real * p.real + p.imag * p.imag
        for i in range(k):
            g = cl_sites[c, i]
            acc = 0.0
            for q in range(dc):
                p = psi[off + q]
                acc += occ[i, q] * (p.real * p.real + p.imag * p.imag)
            val = 0j
            for e in range(a_ptr[i], a_ptr[i + 1]):
                val += np.conj(psi[off + a_r[e]]) * a_v[e] * psi[off + a_c[e]]
            nloc[g] = acc / nrm
            phi[g] = val / nrm


@nb.njit(cache=True, nogil=True, fastmath=True)
def _rhs(t, y, out, args):
    (hs_r, hs_c, hs_v, a_ptr, a_r, a_c, a_v, occ, ntot, energy, cl_sites,
     link_ptr, link_site, link_mult, gamma, jz, f_start, f_end, t_s,
     ph, psi, phi, nloc) = args
    nc, k = cl_sites.shape
    dc = occ.shape[1]
    for q in range(dc):
        x = energy[q] * t
        ph[q] = complex(np.cos(x), -np.sin(x))
    # lab-frame amplitudes and their moments in one pass
    for c in range(nc):
        off = c * dc
        nrm = 0.0
        for q in range(dc):
            p = ph[q] * y[off + q]
            psi[off + q] = p
            nrm += p.real * p.real + p.imag * p.imag
        inv = 1.0 / nrm
        for i in range(k):
            g = cl_sites[c, i]
            acc = 0.0
            for q in range(dc):
                p = psi[off + q]
                acc += occ[i, q] * (p.real * p.real + p.imag * p.imag)
            val = 0j
            for e in range(a_ptr[i], a_ptr[i + 1]):
                val += np.conj(psi[off + a_r[e]]) * a_v[e] * psi[off + a_c[e]]
            nloc[g] = acc * inv
            phi[g] = val * inv
    f = _pump(t, f_start, f_end, t_s)
    total = 0.0
    for c in range(nc):
        off = c * dc
        n_c = 0.0
        for i in range(k):
            n_c += nloc[cl_sites[c, i]]
        total += n_c
        # loss term -gamma/2 N psi and the norm-restoring +gamma/2 <N> psi
        for q in range(dc):
            out[off + q] = (0.5 * gamma * (n_c - ntot[q])) * psi[off + q]
        for e in range(hs_r.shape[0]):
            out[off + hs_r[e]] += -1j * hs_v[e] * psi[off + hs_c[e]]
        for i in range(k):
            g = cl_sites[c, i]
            coef = f + 0j
            for e in range(link_ptr[g], link_ptr[g + 1]):
                coef -= jz * link_mult[e] * phi[link_site[e]]
            # -i (coef a_i^+ + conj(coef) a_i) psi
            m_conj = -1j * np.conj(coef)
            m_coef = -1j * coef
            for e in range(a_ptr[i], a_ptr[i + 1]):
                r = a_r[e]
                q = a_c[e]
                v = a_v[e]
                out[off + r] += m_conj * v * psi[off + q]
                out[off + q] += m_coef * np.conj(v) * psi[off + r]
        for q in range(dc):
            out[off + q] *= np.conj(ph[q])
    out[nc * dc] = -gamma * total


@nb.njit(cache=True, nogil=True)
def sample_site_index(weights, u):
    """First index whose cumulative weight reaches ``u * sum`` (``u`` in (0, 1])."""
    total = 0.0
    for w in weights:
        total += w
    target = u * total
    acc = 0.0
    last = -1
    for i in range(weights.shape[0]):
        if weights[i] > 0.0:
            last = i
        acc += weights[i]
        if acc >= target and weights[i] > 0.0:
            return i
    return last


@nb.njit(cache=True, nogil=True)
def _norm_sq(y, off, dc):
    nrm = 0.0
    for q in range(dc):
        p = y[off + q]
        nrm += p.real * p.real + p.imag * p.imag
    return nrm


@nb.njit(cache=True, nogil=True)
def _renormalise(y, nc, dc):
    for c in range(nc):
        s = 1.0 / np.sqrt(_norm_sq(y, c * dc, dc))
        for q in range(dc):
            y[c * dc + q] *= s


@nb.njit(cache=True, nogil=True)
def _max_norm_drift(y, nc, dc):
    worst = 0.0
    for c in range(nc):
        worst = max(worst, abs(_norm_sq(y, c * dc, dc) - 1.0))
    return worst


@nb.njit(cache=True, nogil=True)
def _top_population(y, occ, n_max, nc, dc):
    k = occ.shape[0]
    worst = 0.0
    for c in range(nc):
        off = c * dc
        nrm = _norm_sq(y, off, dc)
        for i in range(k):
            acc = 0.0
            for q in range(dc):
                if occ[i, q] == n_max:
                    p = y[off + q]
                    acc += p.real * p.real + p.imag * p.imag
            worst = max(worst, acc / nrm)
    return worst


@nb.njit(cache=True, nogil=True)
def _apply_jump(psi, site, args):
    """Apply the local annihilator to the cluster holding ``site`` (lab frame) and renormalise."""
    a_ptr, a_r, a_c, a_v, occ, cl_sites = args[3], args[4], args[5], args[6], args[7], args[10]
    nc, k = cl_sites.shape
    dc = occ.shape[1]
    c = -1
    i = -1
    for cc in range(nc):
        for ii in range(k):
            if cl_sites[cc, ii] == site:
                c = cc
                i = ii
    if c < 0:
        return False
    off = c * dc
    new = np.zeros(dc, np.complex128)
    for e in range(a_ptr[i], a_ptr[i + 1]):
        new[a_r[e]] += a_v[e] * psi[off + a_c[e]]
    nrm = _norm_sq(new, 0, dc)
    if nrm == 0.0:
        return False
    s = 1.0 / np.sqrt(nrm)
    for q in range(dc):
        psi[off + q] = new[q] * s
    return True


@nb.njit(cache=True, nogil=True)
def _record(psi, args, gp, rec_n, rec_a, rec_pair):
    occ, cl_sites = args[7], args[10]
    nc, k = cl_sites.shape
    dc = occ.shape[1]
    n_sites = nc * k
    phi = np.empty(n_sites, np.complex128)
    nloc = np.empty(n_sites)
    _site_moments(psi, args, phi, nloc)
    for g in range(n_sites):
        rec_n[gp, g] = nloc[g]
        rec_a[gp, g] = phi[g]
    for c in range(nc):
        off = c * dc
        nrm = _norm_sq(psi, off, dc)
        for i in range(k):
            for j in range(k):
                acc = 0.0
                for q in range(dc):
                    p = psi[off + q]
                    w = p.real * p.real + p.imag * p.imag
                    if i == j:
                        acc += w * occ[i, q] * (occ[i, q] - 1.0)
                    else:
                        acc += w * occ[i, q] * occ[j, q]
                rec_pair[gp, c, i, j] = acc / nrm


@nb.njit(cache=True, nogil=True)
def _record_lab(y, t, args, gp, rec_n, rec_a, rec_pair, nc, dc):
    psi = y[:nc * dc].copy()
    _rotate(psi, t, args[9], nc, dc, -1.0)
    _record(psi, args, gp, rec_n, rec_a, rec_pair)


@nb.njit(cache=True, nogil=True)
def _evolve(rhs, y, t, t_end, threshold, h, grid, gp, rec_n, rec_a, rec_pair,
            uniforms, up, jump_t, jump_site, n_jumps, stop_on_jump,
            rtol, atol, time_tol, trunc_threshold, n_max, args):
    """Integrate the lab-frame vector ``y`` in place until ``t_end``.

    Jumps are performed internally unless ``stop_on_jump`` is set, in which case
    the state at the first threshold crossing is returned. The result is
    ``(status, t, threshold, h, gp, up, n_jumps, max_top, steps)``.
    """
    occ = args[7]
    energy = args[9]
    cl_sites = args[10]
    nc = cl_sites.shape[0]
    dc = occ.shape[1]
    _rotate(y, t, energy, nc, dc, 1.0)
    status, t, threshold, h, gp, up, n_jumps, max_top, steps = _evolve_interaction(
        rhs, y, t, t_end, threshold, h, grid, gp, rec_n, rec_a, rec_pair,
        uniforms, up, jump_t, jump_site, n_jumps, stop_on_jump,
        rtol, atol, time_tol, trunc_threshold, n_max, args)
    _rotate(y, t, energy, nc, dc, -1.0)
    return status, t, threshold, h, gp, up, n_jumps, max_top, steps


@nb.njit(cache=True, nogil=True)
def _evolve_interaction(rhs, y, t, t_end, threshold, h, grid, gp, rec_n, rec_a, rec_pair,
                        uniforms, up, jump_t, jump_site, n_jumps, stop_on_jump,
                        rtol, atol, time_tol, trunc_threshold, n_max, args):
    occ = args[7]
    energy = args[9]
    cl_sites = args[10]
    nc = cl_sites.shape[0]
    dc = occ.shape[1]
    n = y.shape[0]
    n_sites = nc * cl_sites.shape[1]
    K = np.empty((7, n), np.complex128)
    y_new = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    phi = np.empty(n_sites, np.complex128)
    nloc = np.empty(n_sites)
    max_top = 0.0
    steps = 0
    while gp < grid.shape[0] and grid[gp] <= t:
        _record_lab(y, t, args, gp, rec_n, rec_a, rec_pair, nc, dc)
        gp += 1
    rhs(t, y, K[0], args)
    while True:
        if t >= t_end:
            return DONE, t, threshold, h, gp, up, n_jumps, max_top, steps
        if not stop_on_jump:
            if uniforms.shape[0] - up < 2:
                return NEED_RNG, t, threshold, h, gp, up, n_jumps, max_top, steps
            if n_jumps >= jump_t.shape[0]:
                return LOG_FULL, t, threshold, h, gp, up, n_jumps, max_top, steps
        target = t_end
        if gp < grid.shape[0] and grid[gp] < target:
            target = grid[gp]
        hh = min(h, target - t)
        clipped = hh < h
        if hh <= 1e-13 * max(1.0, abs(t)):
            return UNDERFLOW, t, threshold, h, gp, up, n_jumps, max_top, steps
        err = dp5_attempt(rhs, t, y, hh, K, y_new, tmp, rtol, atol, args)
        if err > 1.0:
            h = hh * step_factor(err)
            continue
        steps += 1
        if y_new[n - 1].real <= threshold:
            lo = 0.0
            hi = 1.0
            while (hi - lo) * hh > time_tol:
                mid = 0.5 * (lo + hi)
                if dense_component(y, hh, K, mid, n - 1).real > threshold:
                    lo = mid
                else:
                    hi = mid
            dense_value(y, hh, K, hi, tmp)
            y[:] = tmp
            t = t + hi * hh
            _renormalise(y, nc, dc)
            h = hh * step_factor(err)
            if stop_on_jump:
                return JUMP_PENDING, t, threshold, h, gp, up, n_jumps, max_top, steps
            _rotate(y, t, energy, nc, dc, -1.0)
            _site_moments(y, args, phi, nloc)
            site = sample_site_index(nloc, uniforms[up])
            up += 1
            if site < 0 or not _apply_jump(y, site, args):
                _rotate(y, t, energy, nc, dc, 1.0)
                return BAD_JUMP, t, threshold, h, gp, up, n_jumps, max_top, steps
            _rotate(y, t, energy, nc, dc, 1.0)
            jump_t[n_jumps] = t
            jump_site[n_jumps] = site
            n_jumps += 1
            y[n - 1] = 0.0
            threshold = np.log(uniforms[up])
            up += 1
            rhs(t, y, K[0], args)
        else:
            t = target if clipped else t + hh
            y[:] = y_new
            if _max_norm_drift(y, nc, dc) > 1e-10:
                _renormalise(y, nc, dc)
                rhs(t, y, K[0], args)
            else:
                K[0] = K[6]
            h = max(h, hh * step_factor(err)) if clipped else hh * step_factor(err)
        top = _top_population(y, occ, n_max, nc, dc)
        if top > max_top:
            max_top = top
        if top > trunc_threshold:
            return TRUNCATED, t, threshold, h, gp, up, n_jumps, max_top, steps
        while gp < grid.shape[0] and grid[gp] <= t:
            _record_lab(y, t, args, gp, rec_n, rec_a, rec_pair, nc, dc)
            gp += 1


# --------------------------------------------------------------------------- engine


def _coo(mat, tol=0.0):
    r, c = np.nonzero(np.abs(mat) > tol)
    return r.astype(np.int64), c.astype(np.int64), mat[r, c].astype(np.complex128)


@dataclass
class TrajectoryEngine:
    """Compiled description of a lattice model ready for trajectory integration."""

    params: ModelParams
    lattice: Lattice
    space: FockSpace
    rtol: float = 1e-8
    atol: float = 1e-10
    time_tol: float = 1e-10
    truncation_threshold: float = 1e-3
    ops: object = field(init=False, repr=False)

    def __post_init__(self):
        shapes = self.lattice.clusters
        ops = cluster_operators(self.params, self.lattice, shapes[0], self.space)
        for shape in shapes[1:]:
            other = cluster_operators(self.params, self.lattice, shape, self.space)
            if not np.array_equal(other.h_static, ops.h_static):
                raise ValueError("clusters of the tiling are not equivalent")
        self.ops = ops
        k = len(shapes[0])
        a_r, a_c, a_v, a_ptr = [], [], [], [0]
        for i in range(k):
            r, c, v = _coo(ops.a[i])
            a_r.append(r)
            a_c.append(c)
            a_v.append(v)
            a_ptr.append(a_ptr[-1] + len(r))
        energy = np.real(np.diag(ops.h_static)).copy()
        hs_r, hs_c, hs_v = _coo(ops.h_static - np.diag(np.diag(ops.h_static)))
        cl_sites = np.array([s.sites for s in shapes], dtype=np.int64)
        link_ptr, link_site, link_mult = [0], [], []
        members = self.lattice.cluster_index
        for g in range(self.lattice.n_sites):
            for outer, m in self.lattice.neighbours[g]:
                if members[outer] != members[g]:
                    link_site.append(outer)
                    link_mult.append(float(m))
            link_ptr.append(len(link_site))
        # global site ordering in the ODE vector follows cluster order
        p = self.params
        self._static = (
            hs_r, hs_c, hs_v,
            np.array(a_ptr, dtype=np.int64), np.concatenate(a_r), np.concatenate(a_c),
            np.concatenate(a_v), ops.occupations.copy(), ops.occupations.sum(axis=0),
            energy, cl_sites, np.array(link_ptr, dtype=np.int64),
            np.array(link_site, dtype=np.int64), np.array(link_mult, dtype=float),
            float(p.gamma), float(p.j / p.z),
        )

    @property
    def n_clusters(self) -> int:
        return len(self.lattice.clusters)

    @property
    def cluster_dim(self) -> int:
        return self.ops.dim

    def args(self, schedule: SweepSchedule):
        nc, dc = self.n_clusters, self.cluster_dim
        n_sites = self.lattice.n_sites
        scratch = (np.empty(dc, np.complex128), np.empty(nc * dc, np.complex128),
                   np.empty(n_sites, np.complex128), np.empty(n_sites))
        return (self._static + (float(schedule.f_start), float(schedule.f_end), float(schedule.t_s))
                + scratch)

    # ----------------------------------------------------------------- state helpers

    def vacuum(self) -> ProductState:
        psi = np.array([vacuum_state(s, self.space) for s in self.lattice.clusters])
        return ProductState(psi, 0.0, 0.0)

    def to_vector(self, state: ProductState) -> np.ndarray:
        return np.concatenate([state.clusters.reshape(-1), [state.log_survival]]).astype(np.complex128)

    def from_vector(self, y, t) -> ProductState:
        psi = y[:-1].reshape(self.n_clusters, self.cluster_dim).copy()
        return ProductState(psi, float(y[-1].real), float(t))

    def site_moments(self, state: ProductState):
        """``(<a_i>, <n_i>)`` for every site, indexed by global site number."""
        y = self.to_vector(state)
        phi = np.empty(self.lattice.n_sites, np.complex128)
        nloc = np.empty(self.lattice.n_sites)
        _site_moments(y, self.args(SweepSchedule.constant(0.0, 1.0)), phi, nloc)
        return phi, nloc

    # ----------------------------------------------------------------- operations

    def derivative(self, state: ProductState, f: float):
        """Time derivatives of all cluster amplitudes and of ``log_survival`` at pump ``f``."""
        y = self.to_vector(state)
        out = np.empty_like(y)
        args = self.args(SweepSchedule.constant(f, 1.0))
        # interaction and lab frames coincide at t = 0; restore the diagonal rotation
        _rhs(0.0, y, out, args)
        dpsi = out[:-1].reshape(state.clusters.shape) - 1j * args[9] * state.clusters
        return dpsi, float(out[-1].real)

    def evolve_until(self, state: ProductState, t_end: float, threshold: float,
                     schedule: SweepSchedule, h0: float = 1e-3):
        """Integrate without jumping; stop at ``t_end`` or where ``log_survival`` reaches ``threshold``.

        Returns ``(state, stopped_by)`` with ``stopped_by`` either ``"jump"`` or ``"time"``.
        """
        if not t_end > state.t:
            raise ValueError("t_end must lie after the current time")
        if not threshold < state.log_survival:
            raise ValueError("threshold must lie below the current log-survival")
        y = self.to_vector(state)
        empty_grid = np.empty(0)
        rec = _empty_records(0, self)
        status, t, *_ = _evolve(
            _rhs, y, float(state.t), float(t_end), float(threshold), float(h0), empty_grid, 0, *rec,
            np.ones(0), 0, np.empty(0), np.empty(0, np.int64), 0, True,
            self.rtol, self.atol, self.time_tol, self.truncation_threshold,
            float(self.space.n_max), self.args(schedule),
        )
        _raise_for(status, self)
        return self.from_vector(y, t), ("jump" if status == JUMP_PENDING else "time")

    def sample_jump_site(self, state: ProductState, rng: RngStream) -> int:
        _, nloc = self.site_moments(state)
        if not nloc.sum() > 0:
            raise ValueError("no photon to lose: all sites are empty")
        return int(sample_site_index(nloc, rng.uniform()))

    def apply_jump(self, state: ProductState, site: int) -> ProductState:
        y = self.to_vector(state)
        if not _apply_jump(y, int(site), self.args(SweepSchedule.constant(0.0, 1.0))):
            raise ValueError(f"jump on site {site} annihilates the state")
        new = self.from_vector(y, state.t)
        new.log_survival = 0.0
        return new

    def run(self, schedule: SweepSchedule, rng: RngStream, grid=None, t_end=None,
            initial: ProductState | None = None, h0: float = 1e-3) -> TrajectoryRecord:
        """Full trajectory from vacuum (or ``initial``) to ``t_end`` (default ``schedule.t_s``)."""
        t_end = schedule.t_s if t_end is None else float(t_end)
        grid = np.empty(0) if grid is None else np.asarray(grid, dtype=float)
        state = self.vacuum() if initial is None else initial.copy()
        y = self.to_vector(state)
        rec_n, rec_a, rec_pair = _empty_records(len(grid), self)
        args = self.args(schedule)
        uniforms = rng.uniforms(1024)
        threshold = float(np.log(uniforms[0]))
        up = 1
        jump_t = np.empty(256)
        jump_site = np.empty(256, np.int64)
        n_jumps = 0
        t = float(state.t)
        h = h0
        gp = 0
        max_top = 0.0
        steps = 0
        while True:
            status, t, threshold, h, gp, up, n_jumps, top, nst = _evolve(
                _rhs, y, t, t_end, threshold, h, grid, gp, rec_n, rec_a, rec_pair,
                uniforms, up, jump_t, jump_site, n_jumps, False,
                self.rtol, self.atol, self.time_tol, self.truncation_threshold,
                float(self.space.n_max), args,
            )
            max_top = max(max_top, top)
            steps += nst
            if status == DONE:
                break
            if status == NEED_RNG:
                uniforms = np.concatenate([uniforms[up:], rng.uniforms(4096)])
                up = 0
            elif status == LOG_FULL:
                jump_t = np.concatenate([jump_t, np.empty_like(jump_t)])
                jump_site = np.concatenate([jump_site, np.empty_like(jump_site)])
            else:
                _raise_for(status, self, t)
        return TrajectoryRecord(
            times=grid, n=rec_n, a=rec_a, pair=rec_pair,
            jump_times=jump_t[:n_jumps].copy(), jump_sites=jump_site[:n_jumps].copy(),
            trajectory_index=rng.trajectory_index, max_top_population=max_top, steps=steps,
        )


def _empty_records(n_grid, engine: TrajectoryEngine):
    n_sites = engine.lattice.n_sites
    k = len(engine.lattice.clusters[0])
    return (np.zeros((n_grid, n_sites)), np.zeros((n_grid, n_sites), np.complex128),
            np.zeros((n_grid, engine.n_clusters, k, k)))


def _raise_for(status, engine, t=None):
    where = "" if t is None else f" at t={t:.6g}"
    if status == TRUNCATED:
        raise TruncationError(
            f"top Fock level population exceeded {engine.truncation_threshold:g}{where}; "
            f"raise n_max (currently {engine.space.n_max})"
        )
    if status == UNDERFLOW:
        raise IntegrationError(f"step size underflow{where}")
    if status == BAD_JUMP:
        raise IntegrationError(f"jump produced a zero state{where}")


# --------------------------------------------------------------------------- functional API


def deterministic_derivative(state: ProductState, params: ModelParams, lattice: Lattice,
                             space: FockSpace, f: float):
    return TrajectoryEngine(params, lattice, space).derivative(state, f)


def evolve_until(state: ProductState, t_end: float, threshold: float, params: ModelParams,
                 lattice: Lattice, space: FockSpace, schedule: SweepSchedule, **options):
    return TrajectoryEngine(params, lattice, space, **options).evolve_until(state, t_end, threshold, schedule)


def sample_jump_site(occupations, rng: RngStream) -> int:
    """Draw a site with probability proportional to its mean occupation."""
    w = np.asarray(occupations, dtype=float)
    if not w.sum() > 0:
        raise ValueError("no photon to lose: all sites are empty")
    return int(sample_site_index(w, rng.uniform()))


def run_trajectory(params: ModelParams, lattice: Lattice, space: FockSpace, schedule: SweepSchedule,
                   rng: RngStream, grid=None, **options) -> TrajectoryRecord:
    return TrajectoryEngine(params, lattice, space, **options).run(schedule, rng, grid)
