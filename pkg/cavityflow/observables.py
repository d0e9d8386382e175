"""Measured quantities over pure or mixed states of one Fock sector.

Every occupation-diagonal observable (ρ_i, m_i, M_s, N_odd, S(q)) is a
contraction of the basis occupation tables with the Fock-state
probabilities, so pure states (|ψ_s|²/‖ψ‖²) and density matrices (diag ρ)
share one code path.  One-body matrices ⟨f†_j f_l⟩ use cached hopping
operators and feed the momentum observables:

    n_k = ⟨f†_k f_k⟩,  α_k = ⟨f†_k f_{k+Q}⟩,  f_k = L^{-1/2} Σ_j e^{−ikj} f_j

with Q = π.  Momentum observables need an even chain with periodic or
antiperiodic closure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from cavityflow.errors import ConfigError
from cavityflow.fock import DOWN, UP, FockBasis, SparseOperator, StateVector, hopping_operator
from cavityflow.hubbard import OPEN, momentum_grid
from cavityflow.logging import get_logger

_log = get_logger("observables")

Q = np.pi

SCALAR_OBSERVABLES = (
    "N_up", "N_down", "M_s", "S_Q", "staggered", "N_odd", "var_N_odd",
    "double_occupancy", "rate",
)
VECTOR_OBSERVABLES = ("rho", "m", "n_k", "alpha", "beta", "P_Ms")
MOMENTUM_OBSERVABLES = ("n_k", "alpha", "beta")


def _as_array(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.amplitudes
    matrix = getattr(state, "matrix", None)
    return np.asarray(state if matrix is None else matrix)


def probabilities(state) -> np.ndarray:
    """Normalized Fock-basis probabilities of a state vector or density matrix."""
    x = _as_array(state)
    if x.ndim == 1:
        p = np.abs(x) ** 2
    else:
        p = np.real(np.diagonal(x)).copy()
    total = p.sum()
    if total <= 0:
        raise ValueError("state has zero norm")
    return p / total


def expectation_value(op: SparseOperator, state) -> complex:
    """⟨Ô⟩ normalized by ⟨ψ|ψ⟩ (or Tr ρ)."""
    x = _as_array(state)
    if x.ndim == 1:
        return complex(np.vdot(x, op.matrix @ x) / np.vdot(x, x).real)
    return complex((op.matrix @ x).trace() / np.trace(x).real)


def photocount_rate(state, jumps: SparseOperator | Sequence[SparseOperator]) -> float:
    """Σ_c ⟨ĉ†ĉ⟩: ‖ĉψ‖²/‖ψ‖² for vectors, Tr(ĉρĉ†)/Tr ρ for density matrices.

    Photons leave at 2⟨ĉ†ĉ⟩ per unit time (the ``rate`` column is ⟨ĉ†ĉ⟩ itself).
    """
    if isinstance(jumps, SparseOperator):
        jumps = [jumps]
    x = _as_array(state)
    rate = 0.0
    if x.ndim == 1:
        norm2 = np.vdot(x, x).real
        for op in jumps:
            phi = op.matrix @ x
            rate += np.vdot(phi, phi).real / norm2
    else:
        trace = np.trace(x).real
        for op in jumps:
            rate += float(op.matrix.conj().multiply(op.matrix @ x).sum().real) / trace
    return float(rate)


def density_autocorrelation(profile: Sequence[float], periodic: bool = True) -> np.ndarray:
    """A(s) = mean_i δρ_i δρ_{i+s}, δρ = ρ − ⟨ρ⟩, for shifts s = 0..L−1."""
    rho = np.asarray(profile, dtype=float)
    delta = rho - rho.mean()
    L = len(rho)
    if periodic:
        return np.array([np.mean(delta * np.roll(delta, -s)) for s in range(L)])
    return np.array([np.mean(delta[: L - s] * delta[s:]) for s in range(L)])


def autocorrelation_peak(A: Sequence[float]) -> int | None:
    """Smallest shift 1 ≤ s ≤ L/2 where A(s) is a positive local maximum, or None.

    *A* is a ``density_autocorrelation`` result, or an average of several.
    """
    A = np.asarray(A, dtype=float)
    half = len(A) // 2
    for s in range(1, half + 1):
        left = A[s - 1] if s > 1 else -np.inf
        right = A[s + 1] if s + 1 < len(A) else -np.inf
        if A[s] > 0 and A[s] >= left and A[s] >= right:
            return s
    return None


@dataclass(eq=False)
class ObservableSet:
    """Observables bound to one basis, plus the selection snapshotted per record row.

    Parameters
    ----------
    basis :
        Sector all states live in.
    boundary :
        Chain closure; momentum observables need a closed, even chain.
    names :
        Observables written at each snapshot (see ``SCALAR_OBSERVABLES`` and
        ``VECTOR_OBSERVABLES``).
    momentum_spin :
        Spin species used for n_k, α_k and β occupations.
    """

    basis: FockBasis
    boundary: str = OPEN
    names: tuple[str, ...] = ("M_s", "S_Q", "rate")
    momentum_spin: str = UP
    _hopping: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.names = tuple(self.names)
        unknown = set(self.names) - set(SCALAR_OBSERVABLES) - set(VECTOR_OBSERVABLES)
        if unknown:
            raise ConfigError(f"unknown observables: {sorted(unknown)}")
        if set(self.names) & set(MOMENTUM_OBSERVABLES):
            self._require_momentum()

    @property
    def L(self) -> int:
        return self.basis.L

    def _require_momentum(self) -> None:
        if self.boundary == OPEN:
            raise ConfigError("momentum observables need a periodic or antiperiodic boundary")
        if self.L % 2:
            raise ConfigError(f"momentum pair (k, k+Q) needs an even chain, got L={self.L}")

    # ── occupation tables ────────────────────────────────────────────────────

    @cached_property
    def _rho_table(self) -> np.ndarray:
        up, down = self.basis.occupations
        return (up + down).astype(float)

    @cached_property
    def _m_table(self) -> np.ndarray:
        up, down = self.basis.occupations
        return (up.astype(float) - down.astype(float))

    @cached_property
    def parity(self) -> np.ndarray:
        """(−1)^i with site 0 even."""
        return np.where(np.arange(self.L) % 2 == 0, 1.0, -1.0)

    @cached_property
    def staggered_values(self) -> np.ndarray:
        """M_s eigenvalue Σ_i (−1)^i m_i of every basis state."""
        return self._m_table @ self.parity

    @cached_property
    def _ms_levels(self) -> tuple[np.ndarray, np.ndarray]:
        rounded = np.rint(self.staggered_values).astype(np.int64)
        return np.unique(rounded, return_inverse=True)

    @cached_property
    def odd_sites(self) -> np.ndarray:
        return np.arange(1, self.L, 2)

    # ── local quantities ─────────────────────────────────────────────────────

    def local_profiles(self, state) -> tuple[np.ndarray, np.ndarray]:
        """(⟨ρ_i⟩, ⟨m_i⟩) per site."""
        p = probabilities(state)
        return p @ self._rho_table, p @ self._m_table

    def staggered_magnetization(self, state) -> float:
        return float(probabilities(state) @ self.staggered_values)

    def staggered_component(self, state) -> float:
        """|Σ_i (−1)^i ⟨m_i⟩| / L."""
        _, m = self.local_profiles(state)
        return float(abs(m @ self.parity) / self.L)

    def double_occupancy(self, state) -> np.ndarray:
        up, down = self.basis.occupations
        return probabilities(state) @ (up * down).astype(float)

    def odd_site_number(self, state, spin: str | None = None) -> tuple[float, float]:
        """Mean and variance of N_odd (both spins, or one when *spin* is given)."""
        up, down = self.basis.occupations
        table = {UP: up, DOWN: down, None: up + down}[spin]
        values = table[:, self.odd_sites].sum(axis=1).astype(float)
        p = probabilities(state)
        mean = float(p @ values)
        return mean, float(p @ values**2 - mean**2)

    def staggered_magnetization_distribution(self, state) -> tuple[np.ndarray, np.ndarray]:
        """(μ, P(μ)): weight of every M_s eigenvalue present in the sector."""
        levels, inverse = self._ms_levels
        weights = np.bincount(inverse, weights=probabilities(state), minlength=len(levels))
        return levels, weights

    def magnetization_covariance(self, state) -> np.ndarray:
        """C_ij = ⟨m_i m_j⟩ − ⟨m_i⟩⟨m_j⟩."""
        p = probabilities(state)
        m = self._m_table
        mean = p @ m
        return m.T @ (p[:, None] * m) - np.outer(mean, mean)

    def structure_factor(self, state, q):
        """S(q) = (1/L) Σ_ij e^{iq(i−j)} C_ij, evaluated as a quadratic form."""
        C = self.magnetization_covariance(state)
        qs = np.atleast_1d(np.asarray(q, dtype=float))
        w = np.exp(-1j * np.outer(qs, np.arange(self.L)))
        values = np.einsum("qi,ij,qj->q", w.conj(), C, w).real / self.L
        return float(values[0]) if np.ndim(q) == 0 else values

    # ── one-body and momentum quantities ─────────────────────────────────────

    def _hop(self, j: int, l: int, spin: str) -> SparseOperator:
        key = (j, l, spin)
        if key not in self._hopping:
            self._hopping[key] = hopping_operator(self.basis, j, l, spin)
        return self._hopping[key]

    def one_body_matrix(self, state, spin: str = UP) -> np.ndarray:
        """G_jl = ⟨f†_{j,σ} f_{l,σ}⟩."""
        G = np.zeros((self.L, self.L), dtype=np.complex128)
        diagonal = self.local_spin_density(state, spin)
        for j in range(self.L):
            G[j, j] = diagonal[j]
            for l in range(j + 1, self.L):
                G[j, l] = expectation_value(self._hop(j, l, spin), state)
                G[l, j] = np.conj(G[j, l])
        return G

    def local_spin_density(self, state, spin: str) -> np.ndarray:
        up, down = self.basis.occupations
        return probabilities(state) @ (up if spin == UP else down).astype(float)

    @cached_property
    def momenta(self) -> np.ndarray:
        self._require_momentum()
        return momentum_grid(self.L, self.boundary)

    @cached_property
    def _fourier(self) -> np.ndarray:
        return np.exp(1j * np.outer(self.momenta, np.arange(self.L))) / np.sqrt(self.L)

    def momentum_matrix(self, state, spin: str | None = None) -> np.ndarray:
        """⟨f†_k f_k'⟩ on the momentum grid."""
        U = self._fourier
        G = self.one_body_matrix(state, spin or self.momentum_spin)
        return U @ G @ U.conj().T

    def momentum_occupation(self, state, spin: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(k, n_k)."""
        M = self.momentum_matrix(state, spin)
        return self.momenta, np.real(np.diagonal(M)).copy()

    def order_parameter(self, state, spin: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(k, α_k = ⟨f†_k f_{k+Q}⟩) over the full zone."""
        M = self.momentum_matrix(state, spin)
        idx = np.arange(self.L)
        return self.momenta, M[idx, (idx + self.L // 2) % self.L]

    def beta_occupations(self, state, spin: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(k ∈ RBZ, ⟨β†_k β_k⟩) with β_k = (f_k + f_{k+Q})/√2.

        The reduced zone is the first half of the momentum grid.
        """
        M = self.momentum_matrix(state, spin)
        half = self.L // 2
        idx = np.arange(half)
        n_k = np.real(M[idx, idx])
        n_kq = np.real(M[idx + half, idx + half])
        alpha = M[idx, idx + half]
        return self.momenta[:half], (n_k + n_kq) / 2 + alpha.real

    # ── snapshot rows ────────────────────────────────────────────────────────

    def snapshot(self, state, jumps: Sequence[SparseOperator] = ()) -> dict[str, float]:
        """One record row: selected observables flattened to named floats."""
        row: dict[str, float] = {}
        for name in self.names:
            if name == "N_up":
                row[name] = float(self.local_spin_density(state, UP).sum())
            elif name == "N_down":
                row[name] = float(self.local_spin_density(state, DOWN).sum())
            elif name == "M_s":
                row[name] = self.staggered_magnetization(state)
            elif name == "S_Q":
                row[name] = self.structure_factor(state, Q)
            elif name == "staggered":
                row[name] = self.staggered_component(state)
            elif name == "N_odd":
                row[name] = self.odd_site_number(state)[0]
            elif name == "var_N_odd":
                row[name] = self.odd_site_number(state)[1]
            elif name == "double_occupancy":
                row[name] = float(self.double_occupancy(state).sum())
            elif name == "rate":
                row[name] = photocount_rate(state, jumps) if jumps else 0.0
            elif name in ("rho", "m"):
                rho, m = self.local_profiles(state)
                values = rho if name == "rho" else m
                row.update({f"{name}_{i}": float(v) for i, v in enumerate(values)})
            elif name == "n_k":
                _, n_k = self.momentum_occupation(state)
                row.update({f"n_k_{i}": float(v) for i, v in enumerate(n_k)})
            elif name == "alpha":
                _, alpha = self.order_parameter(state)
                for i, a in enumerate(alpha[: self.L // 2]):
                    row[f"alpha_re_{i}"] = float(a.real)
                    row[f"alpha_im_{i}"] = float(a.imag)
            elif name == "beta":
                _, beta = self.beta_occupations(state)
                row.update({f"beta_{i}": float(v) for i, v in enumerate(beta)})
            elif name == "P_Ms":
                levels, weights = self.staggered_magnetization_distribution(state)
                row.update({f"P_Ms_{mu}": float(w) for mu, w in zip(levels, weights)})
        return row
