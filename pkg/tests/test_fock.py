import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddbh.fock import (
    ClusterShape,
    FockSpace,
    TruncationError,
    annihilation_matrix,
    check_truncation,
    coherent_state,
    creation_matrix,
    embed_operator,
    fock_state,
    number_matrix,
    occupation_table,
    top_level_population,
    vacuum_state,
)


def test_ladder_action_on_fock_states():
    space = FockSpace(5)
    a = annihilation_matrix(space)
    for n in range(1, 6):
        out = a @ fock_state([n], space)
        assert np.allclose(out, np.sqrt(n) * fock_state([n - 1], space))
    assert np.allclose(a @ vacuum_state(ClusterShape((0,)), space), 0)


def test_number_operator_is_adag_a():
    space = FockSpace(6)
    a = annihilation_matrix(space)
    assert np.allclose(creation_matrix(space) @ a, number_matrix(space))


def test_commutator_is_identity_below_cutoff():
    space = FockSpace(7)
    a = annihilation_matrix(space)
    comm = a @ a.conj().T - a.conj().T @ a
    expected = np.eye(space.dim)
    expected[-1, -1] = -space.n_max
    assert np.allclose(comm, expected)


def test_invalid_cutoff():
    with pytest.raises(ValueError):
        FockSpace(0)
    with pytest.raises(ValueError):
        FockSpace(2.5)


def test_cluster_shape_rejects_duplicates():
    with pytest.raises(ValueError):
        ClusterShape((1, 1))
    with pytest.raises(ValueError):
        ClusterShape(())


def test_embedding_order_first_site_slowest():
    space = FockSpace(2)
    shape = ClusterShape((4, 7))
    n0 = embed_operator(number_matrix(space), 0, shape, space)
    psi = fock_state([2, 1], space)
    assert np.argmax(np.abs(psi)) == 2 * 3 + 1
    assert np.isclose(psi.conj() @ n0 @ psi, 2)


def test_embedding_errors():
    space = FockSpace(2)
    shape = ClusterShape((0, 1))
    with pytest.raises(ValueError):
        embed_operator(np.eye(2), 0, shape, space)
    with pytest.raises(IndexError):
        embed_operator(np.eye(3), 2, shape, space)


@settings(max_examples=25, deadline=None)
@given(n_max=st.integers(1, 4), k=st.integers(1, 3), data=st.data())
def test_operators_on_different_sites_commute(n_max, k, data):
    space = FockSpace(n_max)
    shape = ClusterShape(tuple(range(k)))
    i = data.draw(st.integers(0, k - 1))
    j = data.draw(st.integers(0, k - 1))
    a = annihilation_matrix(space)
    ai = embed_operator(a, i, shape, space)
    aj = embed_operator(a, j, shape, space)
    assert np.allclose(ai @ aj, aj @ ai)
    if i != j:
        assert np.allclose(ai @ aj.conj().T, aj.conj().T @ ai)


def test_fock_state_bounds():
    with pytest.raises(ValueError):
        fock_state([4], FockSpace(3))


def test_coherent_state_is_near_eigenstate():
    space = FockSpace(30)
    alpha = 1.2 - 0.7j
    psi = coherent_state(alpha, space)
    assert np.isclose(np.linalg.norm(psi), 1)
    assert np.allclose(annihilation_matrix(space) @ psi, alpha * psi, atol=1e-8)


def test_occupation_table_matches_embedding():
    space = FockSpace(3)
    occ = occupation_table(2, space)
    shape = ClusterShape((0, 1))
    for i in range(2):
        n_i = embed_operator(number_matrix(space), i, shape, space)
        assert np.allclose(np.diag(n_i).real, occ[i])


def test_truncation_alarm():
    space = FockSpace(3)
    psi = coherent_state(1.5, space)
    top = top_level_population(psi, 1, space)
    assert top[0] > 1e-3
    with pytest.raises(TruncationError):
        check_truncation(psi, 1, space)
    assert check_truncation(fock_state([1], space), 1, space) == 0.0
