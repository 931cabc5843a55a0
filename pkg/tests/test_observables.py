import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddbh.lattice import build_lattice
from ddbh.observables import (
    EnsembleAccumulator,
    NotFinalizedError,
    compressibility,
    compressibility_error,
    exact_compressibility,
    g2_binned,
    jackknife,
    pair_moment,
    standard_error,
    to_exact,
)


def coherent_record(amplitudes, n_grid=3):
    """Per-trajectory arrays of a product of coherent states (same on every grid point)."""
    alpha = np.asarray(amplitudes, dtype=complex)
    n = np.abs(alpha) ** 2
    pair = np.outer(n, n)
    return (np.tile(n, (n_grid, 1)), np.tile(alpha, (n_grid, 1)), np.tile(pair, (n_grid, 1, 1)))


def fock_record(occupations, n_grid=1):
    n = np.asarray(occupations, dtype=float)
    pair = np.outer(n, n)
    np.fill_diagonal(pair, n * (n - 1))
    return (np.tile(n, (n_grid, 1)), np.zeros((n_grid, len(n)), complex), np.tile(pair, (n_grid, 1, 1)))


def test_exact_conversion_roundtrip():
    x = np.array([0.1, -3.5e-300, 5e-324, 1.7976931348623157e308, 0.0])
    ex = to_exact(x)
    assert [int(v) / (1 << 1074) for v in ex] == list(x)
    with pytest.raises(ValueError):
        to_exact([np.nan])


def test_unfinalized_access_raises():
    acc = EnsembleAccumulator(3, 2)
    acc.add(0, *coherent_record([0.5, 0.5]))
    with pytest.raises(NotFinalizedError):
        pair_moment(acc, 0, 1)


def test_coherent_cross_moment_and_unit_compressibility():
    acc = EnsembleAccumulator(3, 4)
    for k in range(3):
        acc.add(k, *coherent_record([1.3, 1.3, 1.3, 1.3]))
    acc.finalize()
    assert np.allclose(pair_moment(acc, 0, 2), 1.3 ** 4)
    assert np.allclose(compressibility(acc), 1.0, atol=1e-12)


def test_number_state_moments():
    acc = EnsembleAccumulator(1, 1)
    acc.add(0, *fock_record([1]))
    acc.finalize()
    assert pair_moment(acc, 0, 0)[0] == 0
    assert compressibility(acc)[0] == 0


def test_two_member_ensemble():
    acc = EnsembleAccumulator(1, 4)
    acc.add(0, *coherent_record([0, 0, 0, 0], 1))
    acc.add(1, *coherent_record([2, 2, 2, 2], 1))
    acc.finalize()
    assert pair_moment(acc, 0, 1)[0] == 8
    assert acc.mean_n.sum() == 8
    assert compressibility(acc)[0] == 9
    table = g2_binned(acc, build_lattice(2, 2))
    assert np.allclose(table.g[0, 1:], 2.0)
    assert np.allclose(table.g_pairs, np.transpose(table.g_pairs, (0, 2, 1)))


def test_zero_density_errors():
    acc = EnsembleAccumulator(1, 2)
    acc.add(0, *fock_record([0, 0]))
    acc.finalize()
    with pytest.raises(ZeroDivisionError):
        compressibility(acc)
    assert np.isnan(compressibility(acc, allow_empty=True)[0])
    with pytest.raises(ZeroDivisionError):
        g2_binned(acc, build_lattice(2, 1))


def test_standard_error_examples():
    acc = EnsembleAccumulator(1, 1)
    acc.add(0, *fock_record([0]))
    acc.add(1, *fock_record([2]))
    assert standard_error(acc, "n")[0, 0] == 1.0
    same = EnsembleAccumulator(1, 1)
    same.add(0, *fock_record([3]))
    same.add(1, *fock_record([3]))
    assert standard_error(same, "n")[0, 0] == 0.0
    with pytest.raises(ValueError):
        standard_error(EnsembleAccumulator(1, 1), "n")
    with pytest.raises(ValueError):
        standard_error(same, "bogus")


def test_standard_error_matches_known_sigma():
    rng = np.random.default_rng(20240611)
    sigma = 0.7
    m = 10_000
    acc = EnsembleAccumulator(1, 1)
    for k, x in enumerate(rng.normal(3.0, sigma, m)):
        acc.add(k, np.array([[x]]), np.zeros((1, 1), complex), np.array([[[x * x]]]))
    se = standard_error(acc, "n")[0, 0]
    assert abs(se / (sigma / np.sqrt(m)) - 1) < 0.2


def test_duplicate_and_shape_errors():
    acc = EnsembleAccumulator(3, 2)
    acc.add(0, *coherent_record([0.5, 0.5]))
    with pytest.raises(ValueError):
        acc.add(0, *coherent_record([0.5, 0.5]))
    with pytest.raises(ValueError):
        acc.add(1, *coherent_record([0.5, 0.5, 0.5]))
    other = EnsembleAccumulator(3, 2)
    other.add(0, *coherent_record([0.1, 0.5]))
    with pytest.raises(ValueError):
        acc.merge(other)


def _random_records(seed, count, n_grid=2, n_sites=3):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = rng.exponential(1.0, (n_grid, n_sites))
        a = rng.normal(size=(n_grid, n_sites)) + 1j * rng.normal(size=(n_grid, n_sites))
        pair = n[:, :, None] * n[:, None, :] * rng.uniform(0.5, 2.0, (n_grid, n_sites, n_sites))
        out.append((n, a, pair))
    return out


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), count=st.integers(2, 7), perm_seed=st.integers(0, 1000))
def test_merge_is_order_independent(seed, count, perm_seed):
    records = _random_records(seed, count)
    order = np.random.default_rng(perm_seed).permutation(count)

    def build(indices):
        acc = EnsembleAccumulator(2, 3)
        for k in indices:
            acc.add(int(k), *records[k])
        return acc

    whole = build(range(count)).finalize()
    cut = count // 2
    merged = build(order[:cut]).merge(build(order[cut:])).finalize()
    merged_rev = build(order[cut:]).merge(build(order[:cut])).finalize()
    for acc in (merged, merged_rev):
        assert acc.mean_n.tobytes() == whole.mean_n.tobytes()
        assert acc.mean_pair.tobytes() == whole.mean_pair.tobytes()
        assert acc.mean_a.tobytes() == whole.mean_a.tobytes()
        assert standard_error(acc, "pair").tobytes() == standard_error(whole, "pair").tobytes()


@settings(max_examples=20, deadline=None)
@given(amps=st.lists(st.complex_numbers(min_magnitude=0.1, max_magnitude=3.0), min_size=1, max_size=5),
       members=st.integers(1, 4))
def test_coherent_ensemble_has_unit_k_and_g(amps, members):
    n_sites = len(amps)
    acc = EnsembleAccumulator(3, n_sites)
    for k in range(members):
        acc.add(k, *coherent_record(amps))
    acc.finalize()
    assert np.allclose(compressibility(acc), 1.0, atol=1e-8)
    table = g2_binned(acc, build_lattice(n_sites, 1))
    assert np.allclose(table.g, 1.0, atol=1e-8)
    assert np.allclose(table.g_pairs, np.transpose(table.g_pairs, (0, 2, 1)))


def test_g2_bins_cover_pairs_once():
    lat = build_lattice(3, 3)
    acc = EnsembleAccumulator(1, 9)
    for k, rec in enumerate(_random_records(1, 4, 1, 9)):
        acc.add(k, *rec)
    acc.finalize()
    table = g2_binned(acc, lat)
    pairs = [p for plist in table.pairs for p in plist]
    assert sorted(pairs) == sorted(itertools.product(range(9), repeat=2))
    assert table.g.shape == (1, len(table.distances))
    assert np.all(np.isfinite(table.g_err))


def test_jackknife_of_linear_estimator_is_standard_error():
    x = np.random.default_rng(0).normal(size=(50, 3))
    full, err = jackknife(x, lambda m: m)
    assert np.allclose(full, x.mean(axis=0))
    assert np.allclose(err, x.std(axis=0, ddof=1) / np.sqrt(50))


def test_compressibility_error_finite():
    acc = EnsembleAccumulator(2, 3)
    for k, rec in enumerate(_random_records(5, 6)):
        acc.add(k, *rec)
    acc.finalize()
    err = compressibility_error(acc)
    assert err.shape == (2,) and np.all(err > 0)


def test_exact_compressibility_forms_agree_on_thermal_state():
    from ddbh.fock import ClusterShape, FockSpace, annihilation_matrix, embed_operator

    space = FockSpace(3)
    shape = ClusterShape((0, 1))
    a_ops = [embed_operator(annihilation_matrix(space), i, shape, space) for i in range(2)]
    rng = np.random.default_rng(2)
    m = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    k1 = exact_compressibility(rho, a_ops, "expanded")
    k2 = exact_compressibility(rho, a_ops, "variance")
    assert abs(k1 - k2) < 1e-10
    with pytest.raises(ValueError):
        exact_compressibility(rho, a_ops, "other")
