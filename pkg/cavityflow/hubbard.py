"""1D Hubbard Hamiltonian and reference ground states.

    Ĥ₀ = −J Σ_σ Σ_⟨i,j⟩ (f†_{jσ} f_{iσ} + h.c.) + U Σ_i n_{i↑} n_{i↓}

Bonds follow the chain with an optional closure: ``periodic`` adds the
(L−1, 0) bond with amplitude −J, ``antiperiodic`` with +J.  Chains of two
sites or fewer never receive a closure bond (it would duplicate bond (0, 1)).

Ground states come from dense ``eigh`` for small sectors and ARPACK
(``eigsh``, smallest algebraic) otherwise.  A degenerate ground manifold is
reported and resolved by projecting a fixed seed vector onto it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from cavityflow.errors import ConvergenceError
from cavityflow.fock import (
    DOWN,
    SPINS,
    UP,
    FockBasis,
    SparseOperator,
    StateVector,
    build_operator,
    c,
    cdag,
)
from cavityflow.logging import get_logger

_log = get_logger("hubbard")

OPEN = "open"
PERIODIC = "periodic"
ANTIPERIODIC = "antiperiodic"
BOUNDARIES = (OPEN, PERIODIC, ANTIPERIODIC)

DENSE_LIMIT = 1000
DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class HubbardParams:
    """Tunneling J (the energy unit), on-site U and chain closure."""

    J: float = 1.0
    U: float = 0.0
    boundary: str = OPEN

    def __post_init__(self):
        if not np.isfinite(self.J) or self.J <= 0:
            raise ValueError(f"J must be positive and finite, got {self.J}")
        if not np.isfinite(self.U):
            raise ValueError(f"U must be finite, got {self.U}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")


def hopping_bonds(L: int, boundary: str = OPEN) -> list[tuple[int, int, float]]:
    """Nearest-neighbour bonds as ``(i, j, sign)``; sign is −1 on an antiperiodic wrap."""
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    bonds = [(i, i + 1, 1.0) for i in range(L - 1)]
    if boundary != OPEN and L > 2:
        bonds.append((L - 1, 0, -1.0 if boundary == ANTIPERIODIC else 1.0))
    return bonds


def single_particle_energies(L: int, boundary: str = OPEN, J: float = 1.0) -> np.ndarray:
    """Closed-form one-particle spectrum of the chain, ascending."""
    if boundary == OPEN or L <= 2:
        m = np.arange(1, L + 1)
        energies = -2.0 * J * np.cos(np.pi * m / (L + 1))
    else:
        energies = -2.0 * J * np.cos(momentum_grid(L, boundary))
    return np.sort(energies)


def momentum_grid(L: int, boundary: str) -> np.ndarray:
    """Allowed lattice momenta (d = 1): 2πm/L, or (2m+1)π/L when antiperiodic."""
    m = np.arange(L)
    if boundary == PERIODIC:
        return 2.0 * np.pi * m / L
    if boundary == ANTIPERIODIC:
        return (2.0 * m + 1.0) * np.pi / L
    raise ValueError("momentum is not a good quantum number with open boundaries")


def hubbard_terms(L: int, p: HubbardParams) -> list:
    terms = []
    for i, j, sign in hopping_bonds(L, p.boundary):
        for spin in SPINS:
            terms.append((-p.J * sign, (cdag(j, spin), c(i, spin))))
            terms.append((-p.J * sign, (cdag(i, spin), c(j, spin))))
    if p.U != 0:
        for i in range(L):
            terms.append((p.U, (cdag(i, UP), c(i, UP), cdag(i, DOWN), c(i, DOWN))))
    return terms


def build_hubbard(basis: FockBasis, p: HubbardParams) -> SparseOperator:
    """Assemble Ĥ₀ on *basis*; the result is Hermitian to the last bit."""
    H = build_operator(basis, hubbard_terms(basis.L, p), label="H0")
    _log.debug("H0 built  L=%d  J=%g  U=%g  boundary=%s  nnz=%d",
               basis.L, p.J, p.U, p.boundary, H.nnz)
    return H


# ── Symmetry operators (for exact commutation checks) ────────────────────────

def _permutation(basis: FockBasis, up: np.ndarray, down: np.ndarray,
                 sign: np.ndarray, label: str) -> SparseOperator:
    rows = basis.lookup(up, down)
    if (rows < 0).any():
        raise ValueError(f"{label} does not map the sector onto itself")
    cols = np.arange(basis.dimension)
    matrix = sparse.csr_matrix(
        (sign.astype(np.complex128), (rows, cols)),
        shape=(basis.dimension, basis.dimension),
    )
    return SparseOperator(matrix, label)


def translation_operator(basis: FockBasis) -> SparseOperator:
    """T with T f†_{i,σ} T⁻¹ = f†_{i+1 mod L, σ}, fermionic reordering sign included."""
    L = basis.L
    up, down = basis.masks
    full = np.int64((1 << L) - 1)
    top = np.int64(L - 1)
    sign = np.ones(basis.dimension, dtype=np.int64)
    shifted = []
    for masks, count in ((up, basis.n_up), (down, basis.n_down)):
        wraps = ((masks >> top) & 1) == 1
        if count % 2 == 0:
            sign = np.where(wraps, -sign, sign)
        shifted.append(((masks << 1) & full) | (masks >> top))
    return _permutation(basis, shifted[0], shifted[1], sign, "T")


def spin_flip_operator(basis: FockBasis) -> SparseOperator:
    """Global ↑↔↓ exchange; requires N↑ = N↓."""
    if basis.n_up != basis.n_down:
        raise ValueError("spin exchange maps (N↑, N↓) to (N↓, N↑); needs N↑ = N↓")
    up, down = basis.masks
    sign = np.full(basis.dimension, -1 if (basis.n_up * basis.n_down) % 2 else 1)
    return _permutation(basis, down, up, sign, "P_spin")


# ── Ground state ──────────────────────────────────────────────────────────────

class GroundState(NamedTuple):
    energy: float
    state: StateVector
    degeneracy: int
    residual: float


def operator_scale(H: SparseOperator) -> float:
    """Induced 1-norm of H, an upper bound on its spectral radius."""
    scale = float(abs(H.matrix).sum(axis=0).max()) if H.nnz else 0.0
    return scale if scale > 0 else 1.0


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    pivot = int(np.argmax(np.abs(psi) > np.abs(psi).max() * (1 - 1e-9)))
    return psi * (np.conj(psi[pivot]) / abs(psi[pivot]))


def _lowest_eigenpairs(H: SparseOperator, dense_limit: int) -> tuple[np.ndarray, np.ndarray]:
    dim = H.dimension
    if dim <= dense_limit:
        return linalg.eigh(H.to_dense())
    k = min(dim - 1, 8)
    v0 = np.full(dim, 1.0 / np.sqrt(dim), dtype=np.complex128)
    try:
        evals, evecs = eigsh(H.matrix, k=k, which="SA", v0=v0, tol=0, maxiter=dim * 20)
    except ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigsh did not converge on dimension {dim}: {exc}") from exc
    order = np.argsort(evals)
    return evals[order], evecs[:, order]


def ground_state(
    H: SparseOperator,
    tol: float = 1e-10,
    *,
    dense_limit: int = DENSE_LIMIT,
    seed: int = 0,
) -> GroundState:
    """Lowest eigenpair of a Hermitian H with ‖Hψ − Eψ‖ ≤ tol·‖H‖.

    If the lowest level is degenerate (gap below 10⁻⁹‖H‖) the returned state
    is the normalized projection of the uniform seed vector onto the ground
    manifold, or of a random vector drawn from ``seed`` when that projection
    vanishes by symmetry.  The degeneracy count is always reported.

    Raises
    ------
    ConvergenceError
        The eigensolver stalls or the residual exceeds the tolerance.
    """
    scale = operator_scale(H)
    evals, evecs = _lowest_eigenpairs(H, dense_limit)
    e0 = float(evals[0])
    manifold = evecs[:, (evals - e0) <= DEGENERACY_RTOL * scale]
    degeneracy = manifold.shape[1]

    if degeneracy == 1:
        psi = manifold[:, 0]
    else:
        dim = H.dimension
        seed_vec = np.full(dim, 1.0 / np.sqrt(dim), dtype=np.complex128)
        psi = manifold @ (manifold.conj().T @ seed_vec)
        if np.linalg.norm(psi) < 1e-8:
            rng = np.random.default_rng(seed)
            seed_vec = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            psi = manifold @ (manifold.conj().T @ seed_vec)
        _log.warning("Ground state is %d-fold degenerate (E0=%.12g); using the seed projection",
                     degeneracy, e0)

    psi = _fix_phase(psi / np.linalg.norm(psi))
    energy = float(np.vdot(psi, H.matrix @ psi).real)
    residual = float(np.linalg.norm(H.matrix @ psi - energy * psi))
    if residual > tol * scale:
        raise ConvergenceError(
            f"ground-state residual {residual:.3e} exceeds tol·‖H‖ = {tol * scale:.3e}"
        )
    _log.info("Ground state  E0=%.12g  degeneracy=%d  residual=%.2e", energy, degeneracy, residual)
    return GroundState(energy, StateVector(psi, 1.0), degeneracy, residual)
