import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casimir_ho.fock import (
    EmptySpace,
    FockSpaceError,
    ModeSpec,
    OperatorMatrix,
    build_space,
    identity,
    ladder_operator,
    mechanical,
    number_operator,
    optical,
    optical_parity,
    quadrature_operator,
)


def test_dim_is_product_of_truncations():
    space = build_space([optical(0.5, 8), optical(1.0, 5), mechanical(1.0, 12)])
    assert space.dim == 480
    assert build_space([mechanical(1.0, 3)]).dim == 3


def test_empty_space_rejected():
    with pytest.raises(EmptySpace):
        build_space([])


@pytest.mark.parametrize("kwargs", [
    dict(kind="optical", frequency=1.0, truncation=1),
    dict(kind="optical", frequency=0.0, truncation=4),
    dict(kind="phonon", frequency=1.0, truncation=4),
])
def test_invalid_mode_spec(kwargs):
    with pytest.raises(FockSpaceError):
        ModeSpec(**kwargs)


def test_index_map_is_row_major():
    space = build_space([optical(1, 3), optical(2, 4), mechanical(1, 2)])
    assert space.index((0, 0, 1)) == 1
    assert space.index((0, 1, 0)) == 2
    assert space.index((1, 0, 0)) == 8
    for i in range(space.dim):
        assert space.index(space.occupations(i)) == i
    np.testing.assert_array_equal(space.occupation_table[8], [1, 0, 0])


def test_single_mode_ladder_elements():
    space = build_space([mechanical(1.0, 4)])
    a = ladder_operator(space, 0, "lower").data
    assert a[0, 1] == 1
    n = (ladder_operator(space, 0, "raise") @ ladder_operator(space, 0, "lower")).data
    assert n[2, 2] == pytest.approx(2)


def test_truncation_edge_commutator():
    N = 5
    space = build_space([optical(1.0, N)])
    a = ladder_operator(space, 0, "lower").data
    ad = ladder_operator(space, 0, "raise").data
    top = np.zeros(N)
    top[-1] = 1
    assert np.allclose(ad @ top, 0)
    comm = a @ ad - ad @ a
    assert comm[N - 1, N - 1] == pytest.approx(-(N - 1))
    assert np.allclose(np.diag(comm)[:-1], 1)


def test_quadrature_half_convention():
    space = build_space([optical(1.0, 6)])
    X = quadrature_operator(space, 0, "X").data
    P = quadrature_operator(space, 0, "P").data
    assert X[1, 0] == pytest.approx(0.5)
    assert (X @ X)[0, 0] == pytest.approx(0.25)
    comm = X @ P - P @ X
    np.testing.assert_allclose(np.diag(comm)[:-1], 0.5j, atol=1e-14)


def test_operators_on_distinct_modes_commute():
    space = build_space([optical(0.5, 3), optical(1.0, 3), mechanical(1.0, 4)])
    ops = [ladder_operator(space, i).data for i in range(3)]
    for i in range(3):
        for j in range(3):
            if i != j:
                assert np.max(np.abs(ops[i] @ ops[j] - ops[j] @ ops[i])) == 0


def test_mode_index_out_of_range():
    space = build_space([optical(1.0, 3)])
    with pytest.raises(FockSpaceError):
        ladder_operator(space, 1)
    with pytest.raises(FockSpaceError):
        quadrature_operator(space, -1, "X")
    with pytest.raises(FockSpaceError):
        quadrature_operator(space, 0, "Y")


def test_operator_matrix_arithmetic_and_flags():
    space = build_space([optical(1.0, 3), mechanical(1.0, 2)])
    X = quadrature_operator(space, 0, "X")
    a = ladder_operator(space, 0)
    assert X.hermitian and not a.hermitian
    assert (a + a.dag()).hermitian
    assert np.allclose((2 * X - X).data, X.data)
    assert np.allclose((X @ identity(space)).data, X.data)
    with pytest.raises(FockSpaceError):
        OperatorMatrix(space, np.eye(3))


def test_optical_parity_diagonal():
    space = build_space([optical(0.5, 3), optical(1.0, 2), mechanical(1.0, 2)])
    par = optical_parity(space)
    occ = space.occupation_table
    np.testing.assert_array_equal(par, (-1) ** (occ[:, 0] + occ[:, 1]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(2, 4), min_size=1, max_size=3), st.data())
def test_ladder_adjoint_and_number_spectrum(truncs, data):
    space = build_space([optical(1.0 + i, n) for i, n in enumerate(truncs)])
    k = data.draw(st.integers(0, len(truncs) - 1))
    a = ladder_operator(space, k, "lower").data
    ad = ladder_operator(space, k, "raise").data
    assert np.max(np.abs(a.conj().T - ad)) < 1e-14
    ev = np.unique(np.round(np.linalg.eigvalsh(number_operator(space, k).data), 12))
    np.testing.assert_allclose(ev, np.arange(truncs[k]))
