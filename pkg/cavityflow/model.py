"""SimulationModel — everything a run needs, built once from a RunConfig.

The model bundles the sector basis, Ĥ₀, the jump channels, the observable
selection and the initial state.  It is immutable and picklable, so the
pipeline ships it once to each worker process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from cavityflow.config import RunConfig, profile_array
from cavityflow.errors import ConfigError
from cavityflow.fock import (
    DENSITY_MATRIX_BUDGET,
    PURE_STATE_BUDGET,
    FockBasis,
    SparseOperator,
    StateVector,
    build_basis,
    fock_state,
)
from cavityflow.hubbard import OPEN, GroundState, HubbardParams, build_hubbard, ground_state
from cavityflow.logging import get_logger
from cavityflow.observables import ObservableSet
from cavityflow.optics import (
    JumpChannel,
    MeasurementGeometry,
    bond_profile,
    build_jump_operator,
    build_local_jump_operators,
)
from cavityflow.trajectory import NonHermitianGenerator

_log = get_logger("model")


@dataclass(eq=False)
class SimulationModel:
    config: RunConfig
    basis: FockBasis
    H0: SparseOperator
    geometry: MeasurementGeometry
    profile: np.ndarray
    channel: JumpChannel
    jumps: tuple[SparseOperator, ...]
    observables: ObservableSet
    _initial: StateVector | None = field(default=None, repr=False)

    @cached_property
    def generator(self) -> NonHermitianGenerator:
        return NonHermitianGenerator.build(self.H0, self.jumps)

    @cached_property
    def ground(self) -> GroundState:
        return ground_state(self.H0, seed=self.config.ensemble.seed)

    @property
    def initial_state(self) -> StateVector:
        if self._initial is None:
            self._initial = _initial_state(self)
        return self._initial


def _initial_state(model: SimulationModel) -> StateVector:
    spec = model.config.initial_state
    if spec == "ground":
        return model.ground.state
    if spec.startswith("fock:"):
        up, _, down = spec[5:].partition("|")
        return fock_state(model.basis, up, down or "0" * model.basis.L)
    path = Path(spec[5:])
    try:
        amplitudes = np.load(path)
    except OSError as exc:
        raise ConfigError(f"initial_state: cannot read {path}") from exc
    if amplitudes.shape != (model.basis.dimension,):
        raise ConfigError(f"initial_state: {path} holds shape {amplitudes.shape}, "
                          f"sector dimension is {model.basis.dimension}")
    state = StateVector.from_amplitudes(amplitudes)
    if state.norm2 == 0.0:
        raise ConfigError(f"initial_state: {path} is the zero vector")
    return state.normalized()


def build_jumps(
    basis: FockBasis,
    cfg: RunConfig,
    geometry: MeasurementGeometry,
    profile: np.ndarray,
    channel: JumpChannel,
) -> tuple[SparseOperator, ...]:
    if cfg.channel.addressing == "local":
        return tuple(build_local_jump_operators(basis, profile, channel))
    bonds = None
    if channel.include_bonds:
        closed = cfg.lattice.boundary != OPEN and cfg.lattice.L > 2
        bonds = bond_profile(geometry, channel.bond_weight, closed=closed)
    return (build_jump_operator(basis, profile, channel, bonds),)


def build_model(cfg: RunConfig) -> SimulationModel:
    """Assemble basis, Hamiltonian, jump channels and observables for *cfg*."""
    lat = cfg.lattice
    budget = DENSITY_MATRIX_BUDGET if cfg.engine == "sme" else PURE_STATE_BUDGET
    basis = build_basis(lat.L, lat.n_up, lat.n_down, budget)
    H0 = build_hubbard(basis, HubbardParams(cfg.hubbard.J, cfg.hubbard.U, lat.boundary))

    geometry = cfg.geometry.build(lat.L)
    profile = profile_array(cfg)
    ch = cfg.channel
    channel = JumpChannel(ch.polarization, ch.gamma, ch.custom_profile, ch.include_bonds,
                          ch.bond_weight)
    jumps = build_jumps(basis, cfg, geometry, profile, channel)
    observables = ObservableSet(basis, lat.boundary, cfg.observables)
    _log.info("Model  L=%d  N=(%d,%d)  dim=%d  channels=%d  geometry=%s", lat.L, lat.n_up,
              lat.n_down, basis.dimension, len(jumps), geometry.name)
    return SimulationModel(cfg, basis, H0, geometry, profile, channel, jumps, observables)
