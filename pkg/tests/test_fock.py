"""Fock-space kernel: bases, ladder signs, operator assembly, states."""

from math import comb

import numpy as np
import pytest

from cavityflow.errors import CapacityError, SectorError
from cavityflow.fock import (
    ANNIHILATE,
    CREATE,
    DOWN,
    UP,
    BasisState,
    StateVector,
    apply_ladder,
    build_basis,
    build_operator,
    c,
    diagonal_operator,
    cdag,
    expectation,
    fock_state,
    hopping_operator,
    identity,
    n,
    number_operator,
    total_number,
)


# ── Basis ─────────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("L,n_up,n_down", [(1, 0, 0), (3, 1, 2), (4, 2, 2), (6, 3, 1)])
def test_basis_dimension(L, n_up, n_down):
    basis = build_basis(L, n_up, n_down)
    assert basis.dimension == comb(L, n_up) * comb(L, n_down)
    assert len(basis.states) == basis.dimension


def test_basis_lookup_inverts_masks():
    basis = build_basis(5, 2, 3)
    up, down = basis.masks
    assert np.array_equal(basis.lookup(up, down), np.arange(basis.dimension))


def test_basis_lookup_missing_is_negative():
    basis = build_basis(4, 2, 2)
    assert basis.lookup(np.array([0b0111]), np.array([0b0011]))[0] == -1
    with pytest.raises(KeyError):
        basis.index(BasisState.from_bits("1110", "1100"))


def test_basis_states_have_sector_counts():
    basis = build_basis(5, 2, 1)
    up, down = basis.occupations
    assert (up.sum(axis=1) == 2).all()
    assert (down.sum(axis=1) == 1).all()


def test_basis_capacity_error_names_dimension():
    with pytest.raises(CapacityError) as info:
        build_basis(10, 5, 5, budget=1000)
    assert info.value.dimension == comb(10, 5) ** 2
    assert info.value.exit_code == 3


def test_basis_rejects_bad_counts():
    with pytest.raises(ValueError):
        build_basis(3, 4, 0)
    with pytest.raises(ValueError):
        build_basis(0, 0, 0)


def test_from_bits_round_trip():
    state = BasisState.from_bits("1010", "0110")
    assert state.up_occupation == (1, 0, 1, 0)
    assert state.down_occupation == (0, 1, 1, 0)
    assert state.bits() == "1010|0110"


# ── Ladder action ─────────────────────────────────────────────────────────────

def test_apply_ladder_pauli_blocked():
    state = BasisState.from_bits("10", "00")
    assert apply_ladder(state, 0, UP, CREATE) is None
    assert apply_ladder(state, 1, UP, ANNIHILATE) is None


def test_apply_ladder_jordan_wigner_sign():
    state = BasisState.from_bits("11", "00")
    sign, new = apply_ladder(state, 1, UP, ANNIHILATE)
    assert sign == -1
    assert new.bits() == "10|00"
    sign, _ = apply_ladder(state, 0, UP, ANNIHILATE)
    assert sign == 1


def test_down_modes_come_after_all_up_modes():
    state = BasisState.from_bits("11", "10")
    sign, new = apply_ladder(state, 0, DOWN, ANNIHILATE)
    assert sign == 1  # two ↑ modes precede
    assert new.bits() == "11|00"
    sign, _ = apply_ladder(BasisState.from_bits("10", "10"), 0, DOWN, ANNIHILATE)
    assert sign == -1


def test_apply_ladder_rejects_bad_site():
    with pytest.raises(ValueError):
        apply_ladder(BasisState.from_bits("10"), 2, UP, CREATE)


def test_vectorized_assembly_matches_scalar_reference():
    basis = build_basis(4, 2, 1)
    op = build_operator(basis, [(1.0, (cdag(3, DOWN), c(0, DOWN)))])
    dense = op.to_dense()
    for col, state in enumerate(basis.states):
        out = apply_ladder(state, 0, DOWN, ANNIHILATE)
        expected = np.zeros(basis.dimension)
        if out is not None:
            s1, mid = out
            out2 = apply_ladder(mid, 3, DOWN, CREATE)
            if out2 is not None:
                s2, final = out2
                expected[basis.index(final)] = s1 * s2
        assert np.array_equal(dense[:, col], expected)


# ── Algebra identities ────────────────────────────────────────────────────────

@pytest.mark.parametrize("spin", [UP, DOWN])
def test_anticommutator_of_bilinears(spin):
    # f†_i f_j + f_j f†_i = δ_ij on every sector state
    basis = build_basis(3, 1, 2)
    eye = identity(basis).to_dense()
    for i in range(3):
        for j in range(3):
            op = build_operator(basis, [(1.0, (cdag(i, spin), c(j, spin))),
                                        (1.0, (c(j, spin), cdag(i, spin)))])
            assert np.array_equal(op.to_dense(), eye * (i == j))


def test_opposite_spin_bilinears_commute():
    basis = build_basis(3, 2, 1)
    a = hopping_operator(basis, 0, 2, UP)
    b = hopping_operator(basis, 1, 0, DOWN)
    assert np.array_equal((a @ b).to_dense(), (b @ a).to_dense())


def test_hopping_adjoint():
    basis = build_basis(3, 2, 2)
    forward = hopping_operator(basis, 0, 2, UP)
    backward = hopping_operator(basis, 2, 0, UP)
    assert np.array_equal(forward.adjoint().to_dense(), backward.to_dense())
    assert (forward + backward).is_hermitian()


def test_number_operators_match_occupation_tables():
    basis = build_basis(4, 2, 2)
    up, down = basis.occupations
    for i in range(4):
        assert np.array_equal(number_operator(basis, i, UP).to_dense().diagonal().real, up[:, i])
        assert np.array_equal(number_operator(basis, i, DOWN).to_dense().diagonal().real, down[:, i])
    assert np.array_equal(total_number(basis, UP).to_dense(), 2 * np.eye(basis.dimension))


def test_number_is_product_of_ladders():
    basis = build_basis(3, 1, 1)
    op = build_operator(basis, [(1.0, n(1, UP))])
    assert op.is_hermitian()
    assert np.allclose(op.to_dense() @ op.to_dense(), op.to_dense())


def test_diagonal_operator_from_occupation_table():
    basis = build_basis(3, 2, 1)
    up, down = basis.occupations
    doubles = diagonal_operator((up * down).sum(axis=1), label="D")
    reference = build_operator(basis, [(1.0, n(i, UP) + n(i, DOWN)) for i in range(3)])
    assert doubles.label == "D"
    assert np.allclose(doubles.to_dense(), reference.to_dense())


def test_sector_violation_raises():
    basis = build_basis(3, 1, 1)
    with pytest.raises(SectorError):
        build_operator(basis, [(1.0, (cdag(0, UP),))])
    with pytest.raises(SectorError):
        build_operator(basis, [(1.0, (cdag(0, UP), c(0, DOWN)))])


def test_identical_term_lists_give_identical_matrices():
    basis = build_basis(4, 2, 2)
    terms = [(0.3, (cdag(0, UP), c(1, UP))), (0.7j, (cdag(1, DOWN), c(3, DOWN))),
             (1.1, n(2, UP))]
    a = build_operator(basis, terms).matrix
    b = build_operator(basis, terms).matrix
    assert np.array_equal(a.indptr, b.indptr)
    assert np.array_equal(a.data, b.data)


# ── States ────────────────────────────────────────────────────────────────────

def test_fock_state_expectations():
    basis = build_basis(4, 2, 1)
    psi = fock_state(basis, "1010", "0100")
    assert psi.norm2 == 1.0
    assert expectation(number_operator(basis, 2, UP), psi) == 1.0
    assert expectation(number_operator(basis, 1, UP), psi) == 0.0
    assert expectation(number_operator(basis, 1, DOWN), psi) == 1.0


def test_state_normalization():
    psi = StateVector.from_amplitudes(np.array([3.0, 4.0]))
    assert psi.norm2 == pytest.approx(25.0)
    assert psi.normalized().norm2 == 1.0
    assert np.allclose(psi.normalized().amplitudes, [0.6, 0.8])
    with pytest.raises(ValueError):
        StateVector.from_amplitudes(np.zeros(2)).normalized()


def test_expectation_dimension_mismatch():
    basis = build_basis(3, 1, 1)
    with pytest.raises(ValueError):
        expectation(identity(basis), np.ones(2))
