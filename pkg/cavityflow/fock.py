"""Fermionic Fock-space kernel for fixed (L, N_up, N_down) sectors.

Conventions
-----------
* A spin configuration is an integer bitmask, bit ``i`` set ⇔ site ``i``
  occupied.  Sites run 0..L-1 left to right.
* Global mode ordering for Jordan–Wigner signs: all ↑ modes (site 0..L-1),
  then all ↓ modes (site 0..L-1).  A ladder operator acting on mode ``p``
  picks up ``(-1)**(number of occupied modes before p)``.
* Basis order is lexicographic on the concatenated bit strings
  ``up[0] up[1] ... up[L-1] down[0] ... down[L-1]``, so the ↑ configuration
  is the slow index:  ``index = up_rank * n_down_states + down_rank``.

Operators are assembled from term lists in COO form and stored as CSR.
Everything here is immutable after construction and can be shared by
concurrent trajectory workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from cavityflow.errors import CapacityError, SectorError
from cavityflow.logging import get_logger

_log = get_logger("fock")

UP = "up"
DOWN = "down"
SPINS = (UP, DOWN)

CREATE = "create"
ANNIHILATE = "annihilate"

PURE_STATE_BUDGET = 200_000
DENSITY_MATRIX_BUDGET = 10_000


# ── Basis ─────────────────────────────────────────────────────────────────────

def _check_spin(spin: str) -> str:
    if spin not in SPINS:
        raise ValueError(f"spin must be one of {SPINS}, got {spin!r}")
    return spin


@dataclass(frozen=True)
class BasisState:
    """One occupation-number configuration of an L-site spinful chain."""

    up: int
    down: int
    L: int

    @classmethod
    def from_bits(cls, up_bits: str, down_bits: str = "") -> "BasisState":
        """Build from bit strings, site 0 first: ``from_bits("1010", "0101")``."""
        down_bits = down_bits or "0" * len(up_bits)
        if len(up_bits) != len(down_bits):
            raise ValueError("up and down bit strings must have equal length")
        if set(up_bits + down_bits) - {"0", "1"}:
            raise ValueError(f"bit strings may only contain 0/1: {up_bits!r} {down_bits!r}")
        up = sum(1 << i for i, b in enumerate(up_bits) if b == "1")
        down = sum(1 << i for i, b in enumerate(down_bits) if b == "1")
        return cls(up=up, down=down, L=len(up_bits))

    @property
    def up_occupation(self) -> tuple[int, ...]:
        return tuple((self.up >> i) & 1 for i in range(self.L))

    @property
    def down_occupation(self) -> tuple[int, ...]:
        return tuple((self.down >> i) & 1 for i in range(self.L))

    def bits(self) -> str:
        up = "".join(map(str, self.up_occupation))
        down = "".join(map(str, self.down_occupation))
        return f"{up}|{down}"


def _lex_masks(L: int, n: int) -> np.ndarray:
    """All L-bit masks with n set bits, ascending in site-0-first bit strings."""
    masks = [sum(1 << i for i in sites) for sites in combinations(range(L), n)]
    # site 0 is the most significant character of the bit string
    keys = [sum(1 << (L - 1 - i) for i in range(L) if (m >> i) & 1) for m in masks]
    order = np.argsort(np.asarray(keys, dtype=np.int64), kind="stable")
    return np.asarray(masks, dtype=np.int64)[order]


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Ordered basis of the (L, N_up, N_down) sector.

    ``up_masks`` / ``down_masks`` hold the per-spin configurations in basis
    order; the sector basis is their Cartesian product with ↑ slow.
    """

    L: int
    n_up: int
    n_down: int
    up_masks: np.ndarray
    down_masks: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.up_masks) * len(self.down_masks)

    def __len__(self) -> int:
        return self.dimension

    def __repr__(self) -> str:
        return (f"FockBasis(L={self.L}, n_up={self.n_up}, n_down={self.n_down}, "
                f"dimension={self.dimension})")

    @cached_property
    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        """(up mask, down mask) for every basis state, each of length dimension."""
        n_down_states = len(self.down_masks)
        up = np.repeat(self.up_masks, n_down_states)
        down = np.tile(self.down_masks, len(self.up_masks))
        return up, down

    @cached_property
    def states(self) -> list[BasisState]:
        up, down = self.masks
        return [BasisState(int(u), int(d), self.L) for u, d in zip(up, down)]

    @cached_property
    def occupations(self) -> tuple[np.ndarray, np.ndarray]:
        """(dimension, L) int8 tables of ↑ and ↓ site occupations."""
        up, down = self.masks
        sites = np.arange(self.L, dtype=np.int64)
        up_occ = ((up[:, None] >> sites) & 1).astype(np.int8)
        down_occ = ((down[:, None] >> sites) & 1).astype(np.int8)
        return up_occ, down_occ

    @cached_property
    def _sorters(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.argsort(self.up_masks, kind="stable"),
                np.argsort(self.down_masks, kind="stable"))

    def lookup(self, up: np.ndarray, down: np.ndarray) -> np.ndarray:
        """Vectorized inverse of ``masks``; -1 where a configuration is absent."""
        up = np.asarray(up, dtype=np.int64)
        down = np.asarray(down, dtype=np.int64)
        up_sorter, down_sorter = self._sorters
        up_rank = _rank(self.up_masks, up_sorter, up)
        down_rank = _rank(self.down_masks, down_sorter, down)
        index = up_rank * len(self.down_masks) + down_rank
        return np.where((up_rank < 0) | (down_rank < 0), -1, index)

    def index(self, state: BasisState) -> int:
        """Ordinal of *state*; KeyError if it is not in this sector."""
        if state.L != self.L:
            raise KeyError(f"state has L={state.L}, basis has L={self.L}")
        i = int(self.lookup(np.array([state.up]), np.array([state.down]))[0])
        if i < 0:
            raise KeyError(f"{state.bits()} is not in sector {self!r}")
        return i


def _rank(masks: np.ndarray, sorter: np.ndarray, values: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(masks, values, sorter=sorter)
    pos = np.clip(pos, 0, len(masks) - 1)
    rank = sorter[pos]
    return np.where(masks[rank] == values, rank, -1)


def build_basis(
    L: int,
    n_up: int,
    n_down: int,
    budget: int = PURE_STATE_BUDGET,
) -> FockBasis:
    """Enumerate the (L, N_up, N_down) sector.

    Raises
    ------
    ValueError
        Invalid site or particle counts.
    CapacityError
        C(L, N_up)·C(L, N_down) exceeds *budget*.
    """
    for name, value in (("L", L), ("n_up", n_up), ("n_down", n_down)):
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise ValueError(f"{name} must be an integer, got {value!r}")
    if L < 1 or L > 62:
        raise ValueError(f"L must lie in 1..62, got {L}")
    if not (0 <= n_up <= L and 0 <= n_down <= L):
        raise ValueError(f"particle counts must lie in 0..{L}, got ({n_up}, {n_down})")

    dimension = comb(L, n_up) * comb(L, n_down)
    if dimension > budget:
        raise CapacityError(dimension, budget)

    basis = FockBasis(
        L=int(L), n_up=int(n_up), n_down=int(n_down),
        up_masks=_lex_masks(L, n_up),
        down_masks=_lex_masks(L, n_down),
    )
    _log.debug("Basis built  %r", basis)
    return basis


# ── Ladder operators ──────────────────────────────────────────────────────────

class Ladder(NamedTuple):
    """One factor of an operator product: f†_{site,spin} or f_{site,spin}."""

    kind: str
    site: int
    spin: str


def cdag(site: int, spin: str) -> Ladder:
    return Ladder(CREATE, site, _check_spin(spin))


def c(site: int, spin: str) -> Ladder:
    return Ladder(ANNIHILATE, site, _check_spin(spin))


def n(site: int, spin: str) -> tuple[Ladder, Ladder]:
    """Number operator as a ladder product f†f."""
    return (cdag(site, spin), c(site, spin))


Term = tuple[complex, Sequence[Ladder]]


def apply_ladder(
    state: BasisState,
    site: int,
    spin: str,
    kind: str,
) -> tuple[int, BasisState] | None:
    """Apply one ladder operator to a Fock state.

    Returns ``None`` when the result vanishes (Pauli blocked or vacant),
    otherwise ``(sign, new_state)`` with the Jordan–Wigner sign of the
    global ↑-then-↓ ordering.
    """
    if not 0 <= site < state.L:
        raise ValueError(f"site {site} outside 0..{state.L - 1}")
    _check_spin(spin)
    below = (1 << site) - 1
    if spin == UP:
        occupied = (state.up >> site) & 1
        preceding = (state.up & below).bit_count()
    else:
        occupied = (state.down >> site) & 1
        preceding = state.up.bit_count() + (state.down & below).bit_count()

    if kind == CREATE:
        if occupied:
            return None
        flip = 1 << site
    elif kind == ANNIHILATE:
        if not occupied:
            return None
        flip = 1 << site
    else:
        raise ValueError(f"kind must be {CREATE!r} or {ANNIHILATE!r}, got {kind!r}")

    sign = -1 if preceding % 2 else 1
    if spin == UP:
        return sign, BasisState(state.up ^ flip, state.down, state.L)
    return sign, BasisState(state.up, state.down ^ flip, state.L)


def _apply_ladder_arrays(
    ladder: Ladder,
    up: np.ndarray,
    down: np.ndarray,
    sign: np.ndarray,
    alive: np.ndarray,
) -> None:
    """In-place vectorized version of apply_ladder over many states."""
    site, spin, kind = ladder.site, ladder.spin, ladder.kind
    bit = np.int64(1) << np.int64(site)
    below = bit - np.int64(1)
    if spin == UP:
        occupied = (up & bit) != 0
        preceding = np.bitwise_count(up & below)
    else:
        occupied = (down & bit) != 0
        preceding = np.bitwise_count(up) + np.bitwise_count(down & below)

    if kind == CREATE:
        alive &= ~occupied
    else:
        alive &= occupied
    sign *= np.where(preceding % 2 == 1, -1, 1).astype(sign.dtype)
    if spin == UP:
        up ^= bit
    else:
        down ^= bit


def _check_term(basis: FockBasis, ladders: Sequence[Ladder]) -> None:
    delta = {UP: 0, DOWN: 0}
    for ladder in ladders:
        if not 0 <= ladder.site < basis.L:
            raise ValueError(f"ladder {ladder} addresses a site outside 0..{basis.L - 1}")
        _check_spin(ladder.spin)
        if ladder.kind not in (CREATE, ANNIHILATE):
            raise ValueError(f"unknown ladder kind {ladder.kind!r}")
        delta[ladder.spin] += 1 if ladder.kind == CREATE else -1
    if delta[UP] or delta[DOWN]:
        raise SectorError(
            f"term {list(ladders)} changes (N_up, N_down) by ({delta[UP]}, {delta[DOWN]})"
        )


# ── Sparse operators ──────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Complex CSR matrix over one FockBasis sector."""

    matrix: sparse.csr_matrix
    label: str = ""

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def entries(self) -> list[tuple[int, int, complex]]:
        coo = self.matrix.tocoo()
        return [(int(r), int(col), complex(v)) for r, col, v in zip(coo.row, coo.col, coo.data)]

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr(), f"({self.label})†")

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_hermitian(self, atol: float = 0.0) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return diff.nnz == 0 or float(abs(diff).max()) <= atol

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator((self.matrix @ other.matrix).tocsr(),
                                  f"{self.label}·{other.label}")
        return self.matrix @ other

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator((self.matrix + other.matrix).tocsr(),
                              f"{self.label}+{other.label}")

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator((self.matrix - other.matrix).tocsr(),
                              f"{self.label}-{other.label}")

    def __mul__(self, scalar: complex) -> "SparseOperator":
        return SparseOperator((self.matrix * scalar).tocsr(), self.label)

    __rmul__ = __mul__

    def __neg__(self) -> "SparseOperator":
        return self * -1


def build_operator(
    basis: FockBasis,
    terms: Iterable[Term],
    label: str = "",
) -> SparseOperator:
    """Assemble Σ_t c_t · ∏ ladders over *basis*.

    Ladder products are written in operator order and act right to left.
    Contributions to the same (row, column) are summed in term order, so
    identical term lists give bit-identical matrices.

    Raises
    ------
    SectorError
        A term changes N_up or N_down.
    """
    dim = basis.dimension
    up0, down0 = basis.masks
    columns = np.arange(dim, dtype=np.int64)
    rows_parts: list[np.ndarray] = []
    cols_parts: list[np.ndarray] = []
    data_parts: list[np.ndarray] = []

    for coefficient, ladders in terms:
        ladders = tuple(ladders)
        _check_term(basis, ladders)
        if coefficient == 0:
            continue
        up, down = up0.copy(), down0.copy()
        sign = np.ones(dim, dtype=np.int8)
        alive = np.ones(dim, dtype=bool)
        for ladder in reversed(ladders):
            _apply_ladder_arrays(ladder, up, down, sign, alive)
        if not alive.any():
            continue
        rows = basis.lookup(up[alive], down[alive])
        rows_parts.append(rows)
        cols_parts.append(columns[alive])
        data_parts.append(complex(coefficient) * sign[alive].astype(np.complex128))

    if rows_parts:
        rows = np.concatenate(rows_parts)
        cols = np.concatenate(cols_parts)
        data = np.concatenate(data_parts)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        data = np.zeros(0, dtype=np.complex128)

    matrix = sparse.coo_matrix((data, (rows, cols)), shape=(dim, dim)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return SparseOperator(matrix, label)


def identity(basis: FockBasis) -> SparseOperator:
    return SparseOperator(sparse.identity(basis.dimension, dtype=np.complex128, format="csr"), "1")


def number_operator(basis: FockBasis, site: int, spin: str) -> SparseOperator:
    return build_operator(basis, [(1.0, n(site, spin))], label=f"n[{site},{spin}]")


def total_number(basis: FockBasis, spin: str) -> SparseOperator:
    return build_operator(basis, [(1.0, n(i, spin)) for i in range(basis.L)], label=f"N[{spin}]")


def hopping_operator(basis: FockBasis, i: int, j: int, spin: str) -> SparseOperator:
    """f†_{i,σ} f_{j,σ}."""
    return build_operator(basis, [(1.0, (cdag(i, spin), c(j, spin)))],
                          label=f"f†[{i},{spin}]f[{j},{spin}]")


def diagonal_operator(values: np.ndarray, label: str = "") -> SparseOperator:
    """Operator diagonal in the Fock basis with the given eigenvalues."""
    values = np.asarray(values, dtype=np.complex128)
    return SparseOperator(sparse.diags(values, format="csr"), label)


# ── States ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class StateVector:
    """Pure (possibly unnormalized) state over a sector, with cached norm²."""

    amplitudes: np.ndarray
    norm2: float

    @classmethod
    def from_amplitudes(cls, amplitudes: np.ndarray) -> "StateVector":
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        return cls(amplitudes, float(np.vdot(amplitudes, amplitudes).real))

    @property
    def dimension(self) -> int:
        return len(self.amplitudes)

    def normalized(self) -> "StateVector":
        if self.norm2 <= 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / np.sqrt(self.norm2), 1.0)


def fock_state(basis: FockBasis, up_bits: str, down_bits: str = "") -> StateVector:
    """Normalized Fock state |up_bits; down_bits⟩ of *basis*."""
    state = BasisState.from_bits(up_bits, down_bits)
    amplitudes = np.zeros(basis.dimension, dtype=np.complex128)
    amplitudes[basis.index(state)] = 1.0
    return StateVector(amplitudes, 1.0)


def _amplitudes(state: StateVector | np.ndarray) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.amplitudes
    return np.asarray(state)


def expectation(op: SparseOperator, state: StateVector | np.ndarray) -> complex:
    """⟨ψ|Ô|ψ⟩ without normalizing ψ."""
    psi = _amplitudes(state)
    if op.dimension != len(psi):
        raise ValueError(f"operator dimension {op.dimension} != state dimension {len(psi)}")
    return complex(np.vdot(psi, op.matrix @ psi))
