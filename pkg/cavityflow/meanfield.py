"""Stochastic mean-field dynamics of (n_k, α_k) for polarized free fermions.

For U = 0 and a jump operator whose Fourier profile lives on {0, Q}

    ĉ = √g (a₀ N̂ + a_Q Σ_p X̂_p),   X̂_p = f†_k f_{k+Q} + f†_{k+Q} f_k,   g = 2γ

the dynamics under Ĥ_eff = Ĥ₀ − iĉ†ĉ only couples the momenta of each pair
p = (k, k+Q), k in the reduced zone.  The state is a product over pairs of
two-mode states that are block diagonal in pair number:

    P0   empty pair weight
    B    2×2 one-particle block on (f†_k|0⟩, f†_{k+Q}|0⟩)
         B = [[n_k − P2, α_k*], [α_k, n_{k+Q} − P2]]
    P2   doubly occupied weight

Drift and jump rules are the exact two-mode algebra of each pair with every
expectation that involves other pairs factorized; N̂ enters as the conserved
c-number N.  Pairs whose occupation sum is an integer therefore keep it
exactly.  With λ_p = 2a_Q(a₀N + a_Q(X̄ − x_p)), x_p = Tr σx B_p,
w_p = Tr B_p, X̄ = Σ x_p:

    dB/dt  = −i[h_p, B] − g[λ_p({σx, B} − 2x_p B) + a_Q²(2B − 2w_p B)]
    dP/dt  = 2g P (λ_p x_p + a_Q² w_p)                      (P = P0, P2)
    d ln‖ψ‖²/dt = −2g D,   D = (a₀N + a_Q X̄)² + a_Q² Σ_p (w_p − x_p²)

and a detection maps B → [⟨s²⟩B + a_Q⟨s⟩{σx,B} + a_Q² σx B σx]/D,
P → ⟨s²⟩P/D with ⟨s⟩ = a₀N + a_Q(X̄ − x_p), ⟨s²⟩ = ⟨s⟩² + a_Q²(V − v_p).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import solve_ivp

from cavityflow.errors import (
    ClosureBreakdownError,
    ClosureBreakdownWarning,
    ConfigError,
    DarkStateError,
    StiffnessError,
)
from cavityflow.hubbard import OPEN, momentum_grid
from cavityflow.logging import get_logger
from cavityflow.optics import momentum_profile
from cavityflow.records import TrajectoryRecord, snapshot_grid
from cavityflow.trajectory import trajectory_rng

if TYPE_CHECKING:
    from cavityflow.config import RunConfig

_log = get_logger("meanfield")

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)

MAX_DT = 0.05
OCCUPATION_SLACK = 1e-8
POSITIVITY_SLACK = 1e-6
SUPPORT_TOL = 1e-9
DARK_RATE = 1e-12
SHELL_TOL = 1e-9


# ── State ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MeanFieldState:
    """Pair-factorized state; ``k`` is the full grid, pair p = (k[p], k[p + L/2])."""

    k: np.ndarray
    B: np.ndarray
    P0: np.ndarray
    P2: np.ndarray
    time: float = 0.0
    log_norm: float = 0.0
    degenerate: bool = False

    @classmethod
    def from_occupations(
        cls,
        k: np.ndarray,
        n_k: np.ndarray,
        alpha: np.ndarray | None = None,
        **kwargs,
    ) -> "MeanFieldState":
        """Pair states with the minimal-fluctuation sector weights for (n_k, α_k)."""
        half = len(k) // 2
        n_a, n_b = np.asarray(n_k[:half], float), np.asarray(n_k[half:], float)
        alpha = np.zeros(half, dtype=np.complex128) if alpha is None else np.asarray(alpha, complex)
        pair_sum = n_a + n_b
        P2 = np.where(pair_sum <= 1.0, 0.0, pair_sum - 1.0)
        B = np.zeros((half, 2, 2), dtype=np.complex128)
        B[:, 0, 0] = n_a - P2
        B[:, 1, 1] = n_b - P2
        B[:, 1, 0] = alpha
        B[:, 0, 1] = alpha.conj()
        P0 = 1.0 - P2 - (n_a + n_b - 2 * P2)
        return cls(np.asarray(k, float), B, P0, P2, **kwargs)

    @property
    def L(self) -> int:
        return len(self.k)

    @property
    def n_k(self) -> np.ndarray:
        """Occupations over the full zone."""
        n_a = self.B[:, 0, 0].real + self.P2
        n_b = self.B[:, 1, 1].real + self.P2
        return np.concatenate([n_a, n_b])

    @property
    def alpha(self) -> np.ndarray:
        """α_k = ⟨f†_k f_{k+Q}⟩ for k in the reduced zone."""
        return self.B[:, 1, 0].copy()

    @property
    def pair_sums(self) -> np.ndarray:
        n = self.n_k
        half = self.L // 2
        return n[:half] + n[half:]

    @property
    def total_number(self) -> float:
        return float(self.n_k.sum())

    def n_odd(self) -> float:
        """⟨N̂_odd⟩ = N/2 − Σ_RBZ Re α_k (site 0 even)."""
        return 0.5 * self.total_number - float(self.alpha.real.sum())

    def weights_ok(self) -> dict[str, float]:
        """Worst violations of the physical-region conditions (0 when satisfied)."""
        n = self.n_k
        half = self.L // 2
        n_a, n_b = n[:half], n[half:]
        bound = n_a * (1 - n_b) + n_b * (1 - n_a)
        block_min = np.linalg.eigvalsh(0.5 * (self.B + self.B.conj().transpose(0, 2, 1)))[:, 0]
        return {
            "occupation": float(max(0.0, (-n).max(), (n - 1).max())),
            "coherence": float(max(0.0, (np.abs(self.alpha) ** 2 - bound).max())),
            "block": float(max(0.0, -block_min.min(), -self.P0.min(), -self.P2.min())),
        }


def init_fermi_sea(L: int, N: int, boundary: str = "periodic", J: float = 1.0) -> MeanFieldState:
    """Free Fermi sea: the N lowest ε_k = −2J cos k filled, α_k = 0.

    A partially filled degenerate shell gets equal fractional occupation and
    the state is flagged ``degenerate``.
    """
    if boundary == OPEN:
        raise ConfigError("mean-field dynamics needs a periodic or antiperiodic chain")
    if L % 2:
        raise ConfigError(f"pairs (k, k+Q) need an even chain, got L={L}")
    if not 0 <= N <= L:
        raise ValueError(f"N must lie in 0..{L}, got {N}")
    k = momentum_grid(L, boundary)
    eps = -2.0 * J * np.cos(k)
    order = np.argsort(eps, kind="stable")
    n_k = np.zeros(L)
    degenerate = False
    if N > 0:
        e_f = eps[order[N - 1]]
        below = eps < e_f - SHELL_TOL
        shell = np.abs(eps - e_f) <= SHELL_TOL
        n_k[below] = 1.0
        remaining = N - int(below.sum())
        n_k[shell] = remaining / shell.sum()
        degenerate = remaining < shell.sum()
    if degenerate:
        _log.warning("Fermi sea L=%d N=%d (%s) has a partially filled shell; "
                     "filled fractionally", L, N, boundary)
    return MeanFieldState.from_occupations(k, n_k, degenerate=degenerate)


# ── Solver ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MeanFieldSolver:
    """Equations of motion for fixed (L, N, J, γ, a₀, a_Q)."""

    L: int
    N: int
    J: float
    gamma: float
    a0: float
    aQ: float
    boundary: str = "periodic"
    max_dt: float = MAX_DT
    rtol: float = 1e-8
    atol: float = 1e-10
    strict: bool = False
    _warned: list = field(default_factory=list, compare=False, repr=False)

    @classmethod
    def from_profile(cls, L: int, N: int, J: float, gamma: float, profile, **kwargs) -> "MeanFieldSolver":
        """Read a₀ = A_0 and a_Q = A_Q off a site profile; other momenta must vanish."""
        _, A = momentum_profile(profile)
        if len(A) != L:
            raise ConfigError(f"profile has {len(A)} sites, chain has L={L}")
        others = np.delete(A, [0, L // 2])
        if np.abs(others).max(initial=0.0) > SUPPORT_TOL:
            raise ConfigError("mean-field closure needs a jump profile supported on k ∈ {0, Q}")
        if abs(A[0].imag) > SUPPORT_TOL or abs(A[L // 2].imag) > SUPPORT_TOL:
            raise ConfigError("mean-field closure needs real A_0 and A_Q")
        return cls(L, N, J, gamma, float(A[0].real), float(A[L // 2].real), **kwargs)

    @property
    def g(self) -> float:
        return 2.0 * self.gamma

    def init_fermi_sea(self) -> MeanFieldState:
        return init_fermi_sea(self.L, self.N, self.boundary, self.J)

    def _eps(self, state: MeanFieldState) -> np.ndarray:
        return -2.0 * self.J * np.cos(state.k[: self.L // 2])

    @staticmethod
    def _moments(B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = (B[:, 0, 1] + B[:, 1, 0]).real
        w = (B[:, 0, 0] + B[:, 1, 1]).real
        return x, w

    def _D(self, x: np.ndarray, w: np.ndarray) -> float:
        mean = self.a0 * self.N + self.aQ * x.sum()
        return float(mean**2 + self.aQ**2 * (w - x**2).sum())

    def rate(self, state: MeanFieldState) -> float:
        """⟨ĉ†ĉ⟩ under the closure; photons are emitted at twice this rate."""
        return self.g * self._D(*self._moments(state.B))

    def _rhs(self, B, P0, P2, eps):
        g, aQ = self.g, self.aQ
        x, w = self._moments(B)
        lam = 2.0 * aQ * (self.a0 * self.N + aQ * (x.sum() - x))
        h = eps[:, None, None] * SIGMA_Z
        comm = h @ B - B @ h
        anti = SIGMA_X @ B + B @ SIGMA_X
        dB = -1j * comm - g * (
            lam[:, None, None] * (anti - 2.0 * x[:, None, None] * B)
            + aQ**2 * (2.0 * B - 2.0 * w[:, None, None] * B)
        )
        growth = 2.0 * g * (lam * x + aQ**2 * w)
        dlog = -2.0 * g * self._D(x, w)
        return dB, growth * P0, growth * P2, dlog

    @staticmethod
    def _pack(state: MeanFieldState) -> np.ndarray:
        return np.concatenate([state.B.ravel(), state.P0, state.P2, [state.log_norm]]).astype(np.complex128)

    @staticmethod
    def _unpack(y: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        B = y[: 4 * half].reshape(half, 2, 2)
        P0 = y[4 * half: 5 * half].real
        P2 = y[5 * half: 6 * half].real
        return B, P0, P2, float(y[-1].real)

    def _integrate(self, state: MeanFieldState, duration: float, events=None):
        half = self.L // 2
        eps = self._eps(state)

        def fun(t, y):
            dB, dP0, dP2, dlog = self._rhs(*self._unpack(y, half)[:3], eps)
            return np.concatenate([dB.ravel(), dP0, dP2, [dlog]])

        sol = solve_ivp(fun, (0.0, duration), self._pack(state), method="DOP853", rtol=self.rtol,
                        atol=self.atol, max_step=self.max_dt, events=events)
        if sol.status == -1:
            raise StiffnessError(f"mean-field integration failed: {sol.message}")
        return sol

    def _state_at(self, state: MeanFieldState, y: np.ndarray, t: float) -> MeanFieldState:
        B, P0, P2, log_norm = self._unpack(y, self.L // 2)
        B = 0.5 * (B + B.conj().transpose(0, 2, 1))
        return replace(state, B=B, P0=P0, P2=P2, log_norm=log_norm, time=state.time + t)

    def drift(self, state: MeanFieldState, dt: float) -> MeanFieldState:
        """Advance by *dt* without detections (adaptive DOP853, steps ≤ max_dt)."""
        if dt <= 0:
            return state
        sol = self._integrate(state, dt)
        state = self._state_at(state, sol.y[:, -1], dt)
        self.check(state)
        return state

    def jump_update(self, state: MeanFieldState) -> MeanFieldState:
        """⟨Ô⟩ → ⟨ĉ†Ôĉ⟩/⟨ĉ†ĉ⟩ under the closure; log-norm resets to 0.

        Raises
        ------
        DarkStateError
            ⟨ĉ†ĉ⟩ ≤ 1e-12.
        """
        B = state.B
        x, w = self._moments(B)
        D = self._D(x, w)
        if self.g * D <= DARK_RATE:
            raise DarkStateError(f"mean-field jump rate {self.g * D:.3e} vanishes")
        aQ = self.aQ
        s = self.a0 * self.N + aQ * (x.sum() - x)
        v = w - x**2
        s2 = s**2 + aQ**2 * (v.sum() - v)
        anti = SIGMA_X @ B + B @ SIGMA_X
        B_new = (s2[:, None, None] * B + aQ * s[:, None, None] * anti
                 + aQ**2 * (SIGMA_X @ B @ SIGMA_X)) / D
        new = replace(state, B=B_new, P0=s2 * state.P0 / D, P2=s2 * state.P2 / D, log_norm=0.0)
        self.check(new)
        return new

    def check(self, state: MeanFieldState) -> None:
        """Closure positivity check: raise in strict mode, warn once otherwise."""
        worst = state.weights_ok()
        limits = {"occupation": OCCUPATION_SLACK, "coherence": POSITIVITY_SLACK,
                  "block": OCCUPATION_SLACK}
        broken = {name: value for name, value in worst.items() if value > limits[name]}
        if not broken:
            return
        message = (f"mean-field state left the physical region at t={state.time:.6f}: {broken}; "
                   f"n_k={np.round(state.n_k, 6).tolist()}")
        if self.strict:
            raise ClosureBreakdownError(message)
        if not self._warned:
            self._warned.append(state.time)
            _log.warning("%s", message)
            warnings.warn(message, ClosureBreakdownWarning, stacklevel=2)

    def advance(
        self,
        state: MeanFieldState,
        duration: float,
        log_r: float,
    ) -> tuple[MeanFieldState, bool]:
        """Drift for *duration* or until ln‖ψ‖² reaches log r, whichever is first."""
        if duration <= 0:
            return state, False
        end = state.time + duration

        def crossing(t, y):
            return y[-1].real - log_r

        crossing.terminal = True
        crossing.direction = -1

        sol = self._integrate(state, duration, events=crossing)
        if sol.status == 1:
            new = self._state_at(state, sol.y_events[0][0], float(sol.t_events[0][0]))
            self.check(new)
            return new, True
        new = self._state_at(state, sol.y[:, -1], duration)
        self.check(new)
        return replace(new, time=end), False


# ── Runs ──────────────────────────────────────────────────────────────────────

def solver_from_config(cfg: "RunConfig") -> MeanFieldSolver:
    from cavityflow.config import profile_array
    from cavityflow.optics import CIRCULAR_R

    lat, ch = cfg.lattice, cfg.channel
    if lat.n_down != 0 or cfg.hubbard.U != 0:
        raise ConfigError("mean-field mode is for polarized (n_down = 0), non-interacting chains")
    if ch.polarization == CIRCULAR_R:
        raise ConfigError("circular-R does not couple to a polarized ↑ gas")
    if ch.include_bonds:
        raise ConfigError("mean-field mode does not support bond coupling")
    profile = profile_array(cfg)
    return MeanFieldSolver.from_profile(
        lat.L, lat.n_up, cfg.hubbard.J, ch.gamma, profile,
        boundary=lat.boundary, max_dt=cfg.evolution.meanfield_dt, rtol=cfg.evolution.rtol,
        atol=cfg.evolution.atol, strict=cfg.evolution.strict_closure,
    )


def _row(solver: MeanFieldSolver, state: MeanFieldState, with_k: bool) -> dict[str, float]:
    row = {"N_odd": state.n_odd(), "log_norm": state.log_norm, "rate": solver.rate(state),
           "N": state.total_number}
    if with_k:
        row.update({f"n_k_{i}": float(v) for i, v in enumerate(state.n_k)})
        for i, a in enumerate(state.alpha):
            row[f"alpha_re_{i}"] = float(a.real)
            row[f"alpha_im_{i}"] = float(a.imag)
    return row


def run_meanfield(cfg, seed: int, index: int = 0) -> TrajectoryRecord:
    """One stochastic mean-field realization on the snapshot grid.

    *cfg* is a RunConfig; a ready MeanFieldSolver may be passed together with
    the evolution settings via ``cfg=(solver, evolution)``.
    """
    if isinstance(cfg, tuple):
        solver, evo, names, k_times = cfg[0], cfg[1], ("n_k",), ()
    else:
        solver, evo = solver_from_config(cfg), cfg.evolution
        names, k_times = cfg.observables, cfg.snapshot_times
    with_k = "n_k" in names or "alpha" in names

    rng = trajectory_rng(seed, index)
    grid = snapshot_grid(evo.t_max, evo.cadence)
    state = solver.init_fermi_sea()
    initial_pairs = state.pair_sums
    rows = [_row(solver, state, with_k)]
    norm2 = [1.0]
    jump_times: list[float] = []
    k_snapshots = []
    pending_k = sorted(k_times)
    max_pair_drift = 0.0

    def take_k(state: MeanFieldState) -> None:
        k_snapshots.append({"t": state.time, "n_k": state.n_k.tolist(),
                            "alpha_re": state.alpha.real.tolist(),
                            "alpha_im": state.alpha.imag.tolist()})

    if pending_k and pending_k[0] <= 0.0:
        take_k(state)
        pending_k.pop(0)

    log_r = np.log(rng.random())
    for t_next in grid[1:]:
        while True:
            state, jumped = solver.advance(state, t_next - state.time, log_r)
            if not jumped:
                break
            jump_times.append(state.time)
            state = solver.jump_update(state)
            log_r = np.log(rng.random())
        state = replace(state, time=float(t_next))
        max_pair_drift = max(max_pair_drift, float(np.abs(state.pair_sums - initial_pairs).max()))
        rows.append(_row(solver, state, with_k))
        norm2.append(float(np.exp(state.log_norm)))
        while pending_k and pending_k[0] <= t_next + 1e-12:
            take_k(state)
            pending_k.pop(0)

    _log.info("Mean-field run %d done  jumps=%d  pair-sum drift=%.2e", index,
              len(jump_times), max_pair_drift)
    return TrajectoryRecord(
        index=index, seed=seed, engine="meanfield", times=grid, norm2=np.asarray(norm2),
        rows=rows, jump_times=jump_times, jump_channels=[0] * len(jump_times),
        detected=[True] * len(jump_times),
        metadata={"degenerate_fermi_sea": state.degenerate, "a0": solver.a0, "aQ": solver.aQ,
                  "max_pair_sum_drift": max_pair_drift, "k_snapshots": k_snapshots},
    )
