"""Quantum-jump trajectories under continuous photodetection.

One realization alternates two phases:

1. draw r ∈ [0, 1) and propagate the unnormalized state with

       Ĥ_eff = Ĥ₀ − i Σ_m ĉ_m†ĉ_m,     d‖ψ‖²/dt = −2 Σ_m ‖ĉ_m ψ‖²

   until ‖ψ‖² = r (located to ``jump_tol``) or the horizon is reached;
2. at the crossing pick channel m with weight ‖ĉ_m ψ‖², apply ĉ_m and
   renormalize, then draw a fresh r.

Propagation is ``scipy.integrate.solve_ivp`` (RK45, complex state) with a
terminal norm event; the event time is then polished by bisection on short
fresh integrations.  Snapshots are taken on normalized copies while the
running state keeps its decayed norm, which is recorded in the ``norm2``
column.

Every trajectory draws from its own counter-based stream
``Philox(SeedSequence(seed, spawn_key=(index,)))`` so ensembles are
reproducible regardless of worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple, Sequence

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from cavityflow.errors import DarkStateError, StiffnessError
from cavityflow.fock import SparseOperator, StateVector
from cavityflow.logging import get_logger
from cavityflow.records import TrajectoryRecord, snapshot_grid

if TYPE_CHECKING:
    from cavityflow.model import SimulationModel

_log = get_logger("trajectory")

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-12
JUMP_TOL = 1e-10
DARK_TOL = 1e-14
_MAX_BISECTIONS = 200


def trajectory_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox stream for trajectory *index* of master *seed*.

    ``stream`` separates auxiliary draws (e.g. detection thinning) from the
    jump-time stream of the same trajectory.
    """
    spawn_key = (int(index),) if stream == 0 else (int(index), int(stream))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


# ── Non-Hermitian propagation ────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class NonHermitianGenerator:
    """Ĥ_eff = Ĥ₀ − iΣ ĉ†ĉ together with the channels it was built from.

    Channel m fires at rate 2‖ĉ_m ψ‖², so the emitted-photon rate is 2⟨ĉ†ĉ⟩.
    """

    H0: SparseOperator
    jumps: tuple[SparseOperator, ...]
    H_eff: SparseOperator

    @classmethod
    def build(cls, H0: SparseOperator, jumps: Sequence[SparseOperator] = ()) -> "NonHermitianGenerator":
        jumps = tuple(jumps)
        for op in jumps:
            if op.dimension != H0.dimension:
                raise ValueError(f"jump {op.label!r} has dimension {op.dimension}, H0 has {H0.dimension}")
        matrix = H0.matrix.astype(np.complex128)
        for op in jumps:
            matrix = matrix - 1j * (op.matrix.conj().T @ op.matrix)
        return cls(H0, jumps, SparseOperator(matrix.tocsr(), "H_eff"))

    @property
    def dimension(self) -> int:
        return self.H0.dimension

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        return -1j * (self.H_eff.matrix @ y)

    def channel_weights(self, psi: np.ndarray) -> np.ndarray:
        """‖ĉ_m ψ‖² per channel (unnormalized ψ)."""
        weights = np.empty(len(self.jumps))
        for m, op in enumerate(self.jumps):
            phi = op.matrix @ psi
            weights[m] = np.vdot(phi, phi).real
        return weights

    def dense_propagator(self, dt: float) -> np.ndarray:
        """exp(−iĤ_eff dt) as a dense matrix (reference for small sectors)."""
        return linalg.expm(-1j * dt * self.H_eff.to_dense())


def _integrate(
    gen: NonHermitianGenerator,
    psi: np.ndarray,
    duration: float,
    rtol: float,
    atol: float,
    events=None,
):
    sol = solve_ivp(gen.rhs, (0.0, duration), psi, method="RK45", rtol=rtol, atol=atol,
                    events=events)
    if sol.status == -1:
        raise StiffnessError(f"non-Hermitian propagation failed: {sol.message}")
    return sol


def evolve_nonhermitian(
    psi: StateVector,
    H0: SparseOperator,
    jumps: Sequence[SparseOperator],
    dt: float,
    tol: float = DEFAULT_RTOL,
    *,
    atol: float = DEFAULT_ATOL,
    generator: NonHermitianGenerator | None = None,
) -> StateVector:
    """exp(−iĤ_eff Δt)|ψ⟩ without renormalization.

    Raises
    ------
    StiffnessError
        The adaptive integrator cannot keep its step above the minimum.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gen = generator or NonHermitianGenerator.build(H0, jumps)
    sol = _integrate(gen, psi.amplitudes.astype(np.complex128), dt, tol, atol)
    return StateVector.from_amplitudes(sol.y[:, -1])


class JumpSearch(NamedTuple):
    jumped: bool
    t: float
    state: StateVector


def _norm2(y: np.ndarray) -> float:
    return float(np.vdot(y, y).real)


def propagate_to_jump(
    psi: StateVector,
    gen: NonHermitianGenerator,
    r: float,
    t_max: float,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    jump_tol: float = JUMP_TOL,
) -> JumpSearch:
    """Propagate until ‖ψ(t)‖² = r or until *t_max* (relative to the start).

    ψ enters normalized after a jump, or carrying the norm it decayed to
    during earlier segments of the same waiting period.  On a jump the
    returned time satisfies |‖ψ‖² − r| ≤ ``jump_tol``.
    """
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must lie in [0, 1), got {r}")
    y0 = psi.amplitudes.astype(np.complex128)
    if t_max <= 0:
        return JumpSearch(False, 0.0, psi)

    def crossing(t, y):
        return _norm2(y) - r

    crossing.terminal = True
    crossing.direction = -1

    sol = _integrate(gen, y0, t_max, rtol, atol, events=crossing)
    if sol.status != 1:
        return JumpSearch(False, t_max, StateVector.from_amplitudes(sol.y[:, -1]))

    t_event = float(sol.t_events[0][0])
    y_event = sol.y_events[0][0]
    if abs(_norm2(y_event) - r) <= jump_tol:
        return JumpSearch(True, t_event, StateVector.from_amplitudes(y_event))

    # bracket [lo, hi] with ‖ψ(lo)‖² > r ≥ ‖ψ(hi)‖², both reached from lo's state
    if _norm2(y_event) > r:
        lo_t, lo_y = t_event, y_event
        hi_t = None
    else:
        lo_t, lo_y = float(sol.t[-2]), sol.y[:, -2]
        hi_t = t_event
    fine_rtol = min(rtol, 1e-10)
    if hi_t is None:
        step = max((_norm2(lo_y) - r) / max(2.0 * gen.channel_weights(lo_y).sum(), 1e-300), 1e-14)
        while True:
            probe_t = min(lo_t + 2.0 * step, t_max)
            y = _integrate(gen, lo_y, probe_t - lo_t, fine_rtol, atol).y[:, -1]
            if _norm2(y) <= r or probe_t >= t_max:
                hi_t = probe_t
                break
            lo_t, lo_y = probe_t, y
            step *= 2.0

    for _ in range(_MAX_BISECTIONS):
        mid_t = 0.5 * (lo_t + hi_t)
        if mid_t <= lo_t:
            break
        y = _integrate(gen, lo_y, mid_t - lo_t, fine_rtol, atol).y[:, -1]
        value = _norm2(y) - r
        if abs(value) <= jump_tol:
            return JumpSearch(True, mid_t, StateVector.from_amplitudes(y))
        if value > 0:
            lo_t, lo_y = mid_t, y
        else:
            hi_t = mid_t
    y = _integrate(gen, lo_y, hi_t - lo_t, fine_rtol, atol).y[:, -1] if hi_t > lo_t else lo_y
    _log.debug("Jump bisection stopped at bracket width %.3e", hi_t - lo_t)
    return JumpSearch(True, hi_t, StateVector.from_amplitudes(y))


def apply_jump(psi: StateVector, c: SparseOperator) -> StateVector:
    """ĉ|ψ⟩/‖ĉ|ψ⟩‖.

    Raises
    ------
    DarkStateError
        ‖ĉψ‖ ≤ 1e-14·‖ψ‖: the jump had zero probability.
    """
    phi = c.matrix @ psi.amplitudes
    norm = float(np.sqrt(np.vdot(phi, phi).real))
    scale = float(np.sqrt(psi.norm2)) if psi.norm2 > 0 else 1.0
    if norm <= DARK_TOL * scale:
        raise DarkStateError(f"jump {c.label!r} annihilates the state (‖cψ‖={norm:.3e})")
    return StateVector(phi / norm, 1.0)


def choose_channel(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Channel index with probability weights[m]/Σweights; no draw for one channel."""
    if len(weights) == 1:
        return 0
    total = weights.sum()
    u = rng.random() * total
    return int(min(np.searchsorted(np.cumsum(weights), u, side="right"), len(weights) - 1))


# ── Full trajectory ───────────────────────────────────────────────────────────

def simulate(
    model: "SimulationModel",
    seed: int,
    index: int = 0,
    *,
    jumps: Sequence[SparseOperator] | None = None,
) -> TrajectoryRecord:
    """One jump trajectory of *model* on its snapshot grid."""
    evo = model.config.evolution
    jumps = tuple(model.jumps if jumps is None else jumps)
    gen = model.generator if jumps == tuple(model.jumps) else NonHermitianGenerator.build(model.H0, jumps)
    rng = trajectory_rng(seed, index)
    grid = snapshot_grid(evo.t_max, evo.cadence)

    psi = model.initial_state
    norm2 = np.empty(len(grid))
    rows: list[dict[str, float]] = []
    jump_times: list[float] = []
    channels: list[int] = []

    def record(k: int, state: StateVector) -> None:
        norm2[k] = state.norm2
        rows.append(model.observables.snapshot(state.normalized(), jumps))

    record(0, psi)
    t = 0.0
    r = rng.random()
    for k in range(1, len(grid)):
        while True:
            outcome = propagate_to_jump(psi, gen, r, grid[k] - t, rtol=evo.rtol,
                                        atol=evo.atol, jump_tol=evo.jump_tol)
            if not outcome.jumped:
                t, psi = grid[k], outcome.state
                break
            t += outcome.t
            m = choose_channel(gen.channel_weights(outcome.state.amplitudes), rng)
            psi = apply_jump(outcome.state, jumps[m])
            jump_times.append(t)
            channels.append(m)
            _log.debug("traj %d: jump %d at t=%.6f channel %d", index, len(jump_times), t, m)
            r = rng.random()
        record(k, psi)

    _log.info("Trajectory %d done  jumps=%d", index, len(jump_times))
    return TrajectoryRecord(
        index=index, seed=seed, engine="trajectory", times=grid, norm2=norm2, rows=rows,
        jump_times=jump_times, jump_channels=channels, detected=[True] * len(jump_times),
    )


def run_trajectory(cfg, seed: int, index: int = 0) -> TrajectoryRecord:
    """Build the model for *cfg* (a RunConfig or a ready SimulationModel) and run once."""
    from cavityflow.model import SimulationModel, build_model

    model = cfg if isinstance(cfg, SimulationModel) else build_model(cfg)
    return simulate(model, seed, index)


def smoothed_rate(record: TrajectoryRecord, window: float) -> np.ndarray:
    """Finite-difference photocount rate dN_ph/dt over a centred *window*."""
    times = record.times
    counts = record.photocounts.astype(float)
    lo = np.interp(times - window / 2, times, counts, left=counts[0])
    hi = np.interp(times + window / 2, times, counts, right=counts[-1])
    span = np.clip(times + window / 2, None, times[-1]) - np.clip(times - window / 2, times[0], None)
    return np.divide(hi - lo, span, out=np.zeros_like(span), where=span > 0)
