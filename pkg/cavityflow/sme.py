"""Inefficient photodetection: stochastic master equation and Bernoulli thinning.

SME picture
-----------
The jump unraveling fires channel ĉ at rate 2⟨ĉ†ĉ⟩ (Ĥ_eff = Ĥ₀ − iĉ†ĉ), so
the detector counts photons of â = √2·ĉ.  With detection efficiency η the
conditional density matrix obeys

    dρ = { dN·G[√η â] − dt·H[iĤ₀ + (η/2)â†â] + dt·(1−η)·D[â] } ρ,
    E[dN] = η·Tr[âρâ†]·dt = 2η·Tr[ĉρĉ†]·dt

    G[A]ρ = AρA†/Tr[AρA†] − ρ
    H[A]ρ = Aρ + ρA† − Tr[Aρ + ρA†]ρ
    D[A]ρ = AρA† − ½(A†Aρ + ρA†A)

Each step draws dN from a Bernoulli law with that mean, integrates the
linear no-detection generator

    −i[Ĥ₀, ρ] − ½{â†â, ρ} + (1−η)âρâ†

with one classical RK4 step (its trace loss renormalized away reproduces
the H and D terms), applies G[√η â] when a photon is registered, then
renormalizes and re-hermitizes.  ``scheme="euler"`` applies the increment
above literally.  At η = 1 a replayed detection record reproduces the
pure-state trajectory; at η = 0 the run is the unconditional master
equation dρ/dt = −i[Ĥ₀, ρ] + Σ D[â]ρ.

Thinning picture
----------------
Run the efficient pure-state unraveling and keep each emitted photon with
independent probability η.  The two pictures are separate run modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from cavityflow.errors import CapacityError, DarkStateError, StepSizeError
from cavityflow.fock import DENSITY_MATRIX_BUDGET, SparseOperator, StateVector
from cavityflow.logging import get_logger
from cavityflow.records import TrajectoryRecord, snapshot_grid
from cavityflow.trajectory import simulate, trajectory_rng

if TYPE_CHECKING:
    from cavityflow.model import SimulationModel

_log = get_logger("sme")

MAX_JUMP_PROBABILITY = 1e-2
MAX_PHASE_STEP = 1e-2
DARK_TRACE = 1e-14
REFINE_TOL = 1e-4
MAX_HALVINGS = 4
THINNING_STREAM = 1

SCHEMES = ("rk4", "euler")


def _dense(A) -> np.ndarray:
    if isinstance(A, SparseOperator):
        return A.to_dense()
    return np.asarray(getattr(A, "matrix", A), dtype=np.complex128)


def _dag(A: np.ndarray) -> np.ndarray:
    return A.conj().T


def _scale(A: np.ndarray) -> float:
    """Induced 1-norm, the bound used for ‖Ĥ₀‖ and ‖ĉ†ĉ‖."""
    return float(np.abs(A).sum(axis=0).max()) if A.size else 0.0


# ── Density matrices ──────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense complex ρ over one sector."""

    matrix: np.ndarray

    @classmethod
    def from_state(cls, psi: StateVector | np.ndarray) -> "DensityMatrix":
        amps = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi)
        amps = amps / np.sqrt(np.vdot(amps, amps).real)
        return cls(np.outer(amps, amps.conj()))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @property
    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)

    @property
    def hermiticity_error(self) -> float:
        return float(np.abs(self.matrix - _dag(self.matrix)).max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + _dag(self.matrix)))[0])

    def normalized(self) -> "DensityMatrix":
        rho = 0.5 * (self.matrix + _dag(self.matrix))
        return DensityMatrix(rho / np.trace(rho).real)


def check_density_budget(dimension: int, budget: int = DENSITY_MATRIX_BUDGET) -> None:
    if dimension > budget:
        raise CapacityError(dimension, budget, what="density matrix")


# ── Superoperators ────────────────────────────────────────────────────────────

def superop_G(A, rho) -> np.ndarray:
    """G[A]ρ = AρA†/Tr[AρA†] − ρ.

    Raises
    ------
    DarkStateError
        Tr[AρA†] ≤ 1e-14.
    """
    A, rho = _dense(A), _dense(rho)
    X = A @ rho @ _dag(A)
    trace = np.trace(X).real
    if trace <= DARK_TRACE:
        raise DarkStateError(f"Tr[AρA†] = {trace:.3e} vanishes")
    return X / trace - rho


def superop_H(A, rho) -> np.ndarray:
    """H[A]ρ = Aρ + ρA† − Tr[Aρ + ρA†]ρ (traceless)."""
    A, rho = _dense(A), _dense(rho)
    Y = A @ rho + rho @ _dag(A)
    return Y - np.trace(Y) * rho


def superop_D(A, rho) -> np.ndarray:
    """D[A]ρ = AρA† − ½(A†Aρ + ρA†A) (traceless)."""
    A, rho = _dense(A), _dense(rho)
    AdA = _dag(A) @ A
    return A @ rho @ _dag(A) - 0.5 * (AdA @ rho + rho @ AdA)


# ── Stepping ──────────────────────────────────────────────────────────────────

class SMEStep(NamedTuple):
    rho: DensityMatrix
    dN: int
    channel: int


class SMEIntegrator:
    """Dense SME stepper for fixed (Ĥ₀, ĉ_m, η); ``c`` holds the detected â_m = √2·ĉ_m."""

    def __init__(self, H0, jumps: Sequence, eta: float, scheme: str = "rk4"):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {eta}")
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
        self.H = _dense(H0)
        check_density_budget(self.H.shape[0])
        self.c = [np.sqrt(2.0) * _dense(op) for op in jumps]
        self.c_dag = [_dag(op) for op in self.c]
        self.cdc = sum((cd @ c for c, cd in zip(self.c, self.c_dag)),
                       np.zeros_like(self.H))
        self.eta = float(eta)
        self.scheme = scheme
        self.H_scale = _scale(self.H)

    def no_detection(self, rho: np.ndarray) -> np.ndarray:
        """Linear trace-decreasing generator between detections."""
        out = -1j * (self.H @ rho - rho @ self.H) - 0.5 * (self.cdc @ rho + rho @ self.cdc)
        if self.eta < 1.0:
            for c, cd in zip(self.c, self.c_dag):
                out += (1.0 - self.eta) * (c @ rho @ cd)
        return out

    def emission_rates(self, rho: np.ndarray) -> np.ndarray:
        """Tr[â_m ρ â_m†] = 2Tr[ĉ_m ρ ĉ_m†] per channel."""
        return np.array([np.trace(c @ rho @ cd).real for c, cd in zip(self.c, self.c_dag)])

    def drift(self, rho: np.ndarray, dt: float) -> np.ndarray:
        f = self.no_detection
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        return _renormalize(rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))

    def euler_increment(self, rho: np.ndarray, dt: float) -> np.ndarray:
        A = 1j * self.H + 0.5 * self.eta * self.cdc
        inc = -dt * superop_H(A, rho)
        for c in self.c:
            inc += dt * (1.0 - self.eta) * superop_D(c, rho)
        return inc

    def detect(self, rho: np.ndarray, channel: int) -> np.ndarray:
        """ρ + G[√η â_m]ρ, the post-detection state."""
        return _renormalize(rho + superop_G(np.sqrt(self.eta) * self.c[channel], rho))

    def check_step(self, rho: np.ndarray, dt: float) -> float:
        """Detection probability of the step; StepSizeError if the step is too coarse."""
        p = self.eta * dt * float(self.emission_rates(rho).sum()) if self.c else 0.0
        if p > MAX_JUMP_PROBABILITY:
            raise StepSizeError(f"jump probability per step {p:.3e} exceeds {MAX_JUMP_PROBABILITY}")
        if dt * self.H_scale > MAX_PHASE_STEP:
            raise StepSizeError(
                f"dt·‖H0‖ = {dt * self.H_scale:.3e} exceeds {MAX_PHASE_STEP}"
            )
        return p

    def step(self, rho: np.ndarray, dt: float, rng: np.random.Generator) -> tuple[np.ndarray, int, int]:
        self.check_step(rho, dt)
        rates = self.eta * dt * self.emission_rates(rho) if self.c else np.zeros(0)
        u = rng.random()
        cumulative = np.cumsum(rates)
        channel = int(np.searchsorted(cumulative, u, side="right")) if len(rates) else 0
        dN = int(len(rates) > 0 and u < cumulative[-1])
        if self.scheme == "euler":
            new = rho + self.euler_increment(rho, dt)
            if dN:
                new = new + superop_G(np.sqrt(self.eta) * self.c[channel], rho)
            return _renormalize(new), dN, channel if dN else -1
        new = self.drift(rho, dt)
        if dN:
            new = self.detect(new, channel)
        return new, dN, channel if dN else -1

    def max_step(self, rho: np.ndarray) -> float:
        """Largest dt meeting both step preconditions with a safety factor of two."""
        bound_c = self.eta * _scale(self.cdc)
        bounds = [MAX_PHASE_STEP / self.H_scale if self.H_scale > 0 else np.inf,
                  MAX_JUMP_PROBABILITY / bound_c if bound_c > 0 else np.inf]
        return 0.5 * min(bounds)


def _renormalize(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + _dag(rho))
    return rho / np.trace(rho).real


def step_sme(
    rho: DensityMatrix,
    H0,
    c,
    eta: float,
    dt: float,
    rng: np.random.Generator,
    *,
    scheme: str = "rk4",
) -> SMEStep:
    """One SME increment; returns (ρ', dN, channel) with channel −1 when dN = 0.

    Raises
    ------
    StepSizeError
        2η·dt·Tr[ĉρĉ†] > 1e-2 or dt·‖Ĥ₀‖ > 1e-2.
    """
    jumps = [c] if isinstance(c, (SparseOperator, np.ndarray)) else list(c)
    integrator = SMEIntegrator(H0, jumps, eta, scheme)
    new, dN, channel = integrator.step(_dense(rho), dt, rng)
    return SMEStep(DensityMatrix(new), dN, channel)


# ── Runs ──────────────────────────────────────────────────────────────────────

def _resolve_model(cfg) -> "SimulationModel":
    from cavityflow.model import SimulationModel, build_model

    return cfg if isinstance(cfg, SimulationModel) else build_model(cfg)


def _sme_rows(model: "SimulationModel", integrator: SMEIntegrator, rho: np.ndarray) -> dict[str, float]:
    state = DensityMatrix(rho)
    row = model.observables.snapshot(state, model.jumps)
    row["purity"] = state.purity
    row["detection_rate"] = integrator.eta * float(integrator.emission_rates(rho).sum())
    return row


def _integrate_sme(
    model: "SimulationModel",
    integrator: SMEIntegrator,
    seed: int,
    index: int,
    dt: float,
    replay: tuple[Sequence[float], Sequence[int]] | None,
) -> TrajectoryRecord:
    evo = model.config.evolution
    grid = snapshot_grid(evo.t_max, evo.cadence)
    rng = trajectory_rng(seed, index)
    rho = DensityMatrix.from_state(model.initial_state).matrix
    rows = [_sme_rows(model, integrator, rho)]
    jump_times: list[float] = []
    channels: list[int] = []

    forced_t = list(replay[0]) if replay else []
    forced_c = list(replay[1]) if replay else []
    pointer = 0
    t = 0.0
    for k in range(1, len(grid)):
        span = grid[k] - t
        n_sub = max(1, int(np.ceil(span / dt - 1e-9)))
        h = span / n_sub
        for _ in range(n_sub):
            if replay is None:
                rho, dN, channel = integrator.step(rho, h, rng)
                t += h
                if dN:
                    jump_times.append(t)
                    channels.append(channel)
                continue
            end = t + h
            while pointer < len(forced_t) and forced_t[pointer] <= end:
                if forced_t[pointer] > t:
                    rho = integrator.drift(rho, forced_t[pointer] - t)
                    t = forced_t[pointer]
                rho = integrator.detect(rho, forced_c[pointer])
                jump_times.append(t)
                channels.append(forced_c[pointer])
                pointer += 1
            if end > t:
                rho = integrator.drift(rho, end - t)
            t = end
        t = grid[k]
        rows.append(_sme_rows(model, integrator, rho))

    return TrajectoryRecord(
        index=index, seed=seed, engine="sme", times=grid, norm2=np.ones(len(grid)), rows=rows,
        jump_times=jump_times, jump_channels=channels, detected=[True] * len(jump_times),
        metadata={"eta": integrator.eta, "dt": dt, "scheme": integrator.scheme,
                  "replay": replay is not None},
    )


def _max_change(a: TrajectoryRecord, b: TrajectoryRecord) -> float:
    keys = a.rows[0].keys()
    return max(abs(ra[key] - rb[key]) for ra, rb in zip(a.rows, b.rows) for key in keys)


def run_sme(
    cfg,
    seed: int,
    index: int = 0,
    *,
    replay: tuple[Sequence[float], Sequence[int]] | None = None,
    refine: bool | None = None,
) -> TrajectoryRecord:
    """Density-matrix run on the snapshot grid.

    Parameters
    ----------
    replay :
        ``(jump_times, channels)``: drive ρ with this detection record instead
        of sampling it.  Steps are split exactly at the given times.
    refine :
        Halve dt until snapshot observables move by less than 1e-4 (up to four
        halvings).  Only meaningful for deterministic runs (η = 0 or replay);
        defaults to ``evolution.sme_refine`` in that case.
    """
    model = _resolve_model(cfg)
    evo = model.config.evolution
    eta = model.config.channel.eta
    integrator = SMEIntegrator(model.H0, model.jumps, eta, evo.sme_scheme)
    rho0 = DensityMatrix.from_state(model.initial_state).matrix
    dt = min(evo.sme_dt, integrator.max_step(rho0))

    deterministic = eta == 0.0 or replay is not None
    if refine is None:
        refine = evo.sme_refine and deterministic
    record = _integrate_sme(model, integrator, seed, index, dt, replay)
    if refine and deterministic:
        for _ in range(MAX_HALVINGS):
            dt /= 2.0
            finer = _integrate_sme(model, integrator, seed, index, dt, replay)
            change = _max_change(record, finer)
            record = finer
            _log.debug("SME refinement dt=%.3e  change=%.3e", dt, change)
            if change < REFINE_TOL:
                break
    _log.info("SME run %d done  eta=%g  dt=%.3e  detections=%d", index, eta, dt,
              record.n_detected)
    return record


def lindblad_solve(
    rho0,
    H0,
    jumps: Sequence,
    times: Sequence[float],
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> np.ndarray:
    """Unconditional master equation dρ/dt = −i[Ĥ₀,ρ] + Σ 2D[ĉ]ρ on *times* (dense reference)."""
    H = _dense(H0)
    cs = [_dense(op) for op in jumps]
    d = H.shape[0]

    def rhs(t, y):
        rho = y.reshape(d, d)
        out = -1j * (H @ rho - rho @ H)
        for c in cs:
            out += 2.0 * superop_D(c, rho)
        return out.ravel()

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(rhs, (times[0], times[-1]), _dense(rho0).astype(np.complex128).ravel(),
                    t_eval=times, method="DOP853", rtol=rtol, atol=atol)
    return sol.y.T.reshape(len(times), d, d)


# ── Thinning and detection statistics ────────────────────────────────────────

@dataclass(frozen=True)
class DetectionStats:
    """Emitted vs detected photon counts of one run at efficiency η."""

    N_e: int
    N_ph: int
    eta: float

    def __post_init__(self):
        if not 0 <= self.N_ph <= self.N_e:
            raise ValueError(f"need 0 ≤ N_ph ≤ N_e, got N_ph={self.N_ph}, N_e={self.N_e}")

    @property
    def mean(self) -> float:
        return self.eta * self.N_e

    @property
    def variance(self) -> float:
        return self.eta * (1.0 - self.eta) * self.N_e

    @property
    def snr(self) -> float:
        """√(η/(1−η))·√N_e; infinite for η = 1."""
        if self.eta >= 1.0:
            return float("inf")
        return float(np.sqrt(self.eta / (1.0 - self.eta)) * np.sqrt(self.N_e))

    def to_dict(self) -> dict:
        snr = self.snr
        return {"N_e": self.N_e, "N_ph": self.N_ph, "eta": self.eta, "mean": self.mean,
                "variance": self.variance, "snr": None if np.isinf(snr) else snr}


def bernoulli_thinning(n_emitted: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Independent detection flags, each True with probability η."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return rng.random(n_emitted) < eta


def thinning_mode(cfg, seed: int, index: int = 0) -> tuple[TrajectoryRecord, DetectionStats]:
    """Efficient pure unraveling with each emission kept with probability η."""
    model = _resolve_model(cfg)
    eta = model.config.channel.eta
    record = simulate(model, seed, index)
    flags = bernoulli_thinning(record.n_emitted, eta, trajectory_rng(seed, index, THINNING_STREAM))
    record.detected = [bool(f) for f in flags]
    record.engine = "thinning"
    record.metadata["eta"] = eta
    stats = DetectionStats(record.n_emitted, record.n_detected, eta)
    return record, stats


def min_efficiency(J: float, gamma: float, N: int) -> float:
    """η_min ≈ J/(γN²), clamped to [0, 1]."""
    if gamma <= 0 or N <= 0:
        raise ValueError(f"need gamma > 0 and N > 0, got {gamma}, {N}")
    return float(np.clip(J / (gamma * N**2), 0.0, 1.0))


def emissions_per_period(record: TrajectoryRecord, J: float = 1.0) -> float:
    """Emitted photons per tunneling period 2π/J."""
    duration = float(record.times[-1] - record.times[0])
    if duration <= 0:
        raise ValueError("record spans no time")
    return record.n_emitted * (2.0 * np.pi / J) / duration


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
