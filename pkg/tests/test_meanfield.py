"""Pair-closure mean-field dynamics for a polarized free Fermi gas."""

import numpy as np
import pytest

from cavityflow.config import RunConfig, parse_config
from cavityflow.errors import ClosureBreakdownError, ClosureBreakdownWarning, ConfigError, DarkStateError
from cavityflow.fock import build_basis
from cavityflow.hubbard import ANTIPERIODIC, OPEN, PERIODIC, HubbardParams, build_hubbard, ground_state
from cavityflow.meanfield import (
    MeanFieldSolver,
    MeanFieldState,
    init_fermi_sea,
    run_meanfield,
    solver_from_config,
)
from cavityflow.observables import ObservableSet
from cavityflow.optics import LINEAR_X, JumpChannel, MeasurementGeometry, build_jump_operator, diffraction_profile
from cavityflow.trajectory import evolve_nonhermitian


def _odd_profile(L):
    return diffraction_profile(MeasurementGeometry.preset("odd-sites", L))


def _solver(L=8, N=4, gamma=0.5, **kwargs):
    return MeanFieldSolver.from_profile(L, N, 1.0, gamma, _odd_profile(L),
                                        boundary=ANTIPERIODIC, **kwargs)


def _config(**overrides):
    data = {
        "mode": "meanfield",
        "lattice": {"L": 8, "n_up": 4, "n_down": 0, "boundary": "antiperiodic"},
        "geometry": {"preset": "odd-sites"},
        "channel": {"polarization": "linear-x", "gamma": 0.5},
        "evolution": {"t_max": 2.0, "cadence": 0.5},
        "ensemble": {"seed": 3},
        "observables": ["N_odd", "rate", "n_k"],
        "snapshot_times": [0.0, 1.0],
    }
    for key, value in overrides.items():
        section, _, leaf = key.partition("__")
        data[section] = {**data.get(section, {}), leaf: value} if leaf else value
    return RunConfig.from_dict(data)


# ── Fermi sea ─────────────────────────────────────────────────────────────────

def test_closed_shell_fermi_sea():
    state = init_fermi_sea(8, 4, ANTIPERIODIC)
    assert not state.degenerate
    assert state.total_number == pytest.approx(4.0)
    assert set(np.round(state.n_k, 12)) == {0.0, 1.0}
    assert np.allclose(state.alpha, 0.0)
    assert state.n_odd() == pytest.approx(2.0)
    assert np.allclose(state.pair_sums, 1.0)
    assert all(value == 0.0 for value in state.weights_ok().values())


def test_open_shell_is_filled_fractionally():
    state = init_fermi_sea(8, 4, PERIODIC)
    assert state.degenerate
    assert state.total_number == pytest.approx(4.0)
    half_filled = np.isclose(state.n_k, 0.5)
    assert np.allclose(np.cos(state.k[half_filled]), 0.0)
    assert half_filled.sum() == 2


def test_fermi_sea_arguments():
    with pytest.raises(ConfigError):
        init_fermi_sea(8, 4, OPEN)
    with pytest.raises(ConfigError):
        init_fermi_sea(7, 3, PERIODIC)
    with pytest.raises(ValueError):
        init_fermi_sea(8, 9, PERIODIC)


def test_state_from_occupations_round_trip():
    k = np.arange(4) * np.pi / 2
    n_k = np.array([0.9, 0.3, 0.6, 0.2])
    alpha = np.array([0.1 + 0.05j, -0.2])
    state = MeanFieldState.from_occupations(k, n_k, alpha)
    assert np.allclose(state.n_k, n_k)
    assert np.allclose(state.alpha, alpha)
    assert state.P0 + np.trace(state.B, axis1=1, axis2=2).real + state.P2 == pytest.approx(1.0)


# ── Solver ────────────────────────────────────────────────────────────────────

def test_profile_support():
    solver = _solver()
    assert solver.a0 == pytest.approx(0.5)
    assert solver.aQ == pytest.approx(-0.5)
    staggered = diffraction_profile(MeasurementGeometry.preset("diffraction-minimum", 8))
    assert MeanFieldSolver.from_profile(8, 4, 1.0, 0.5, staggered).a0 == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        MeanFieldSolver.from_profile(8, 4, 1.0, 0.5, _odd_profile(8)[:6])
    with pytest.raises(ConfigError):
        MeanFieldSolver.from_profile(8, 4, 1.0, 0.5,
                                     diffraction_profile(MeasurementGeometry.preset("period-3", 8)))


def test_rate_of_fermi_sea_matches_exact_variance():
    # ⟨N_odd²⟩ = 2² + Var = 4 + 1 for the closed-shell sea
    solver = _solver(gamma=0.25)
    assert solver.rate(solver.init_fermi_sea()) == pytest.approx(0.5 * 5.0)


def test_drift_and_jumps_conserve_pair_sums():
    solver = _solver()
    state = solver.init_fermi_sea()
    for _ in range(3):
        state = solver.drift(state, 0.4)
        state = solver.jump_update(state)
    assert np.allclose(state.pair_sums, 1.0, atol=1e-6)
    assert state.total_number == pytest.approx(4.0, abs=1e-6)


def test_jump_moves_weight_to_odd_sites():
    solver = _solver()
    state = solver.jump_update(solver.init_fermi_sea())
    # α = a_Q·a₀N/D per pair: −0.5·2/5
    assert np.allclose(state.alpha, -0.2)
    assert state.n_odd() == pytest.approx(2.8)
    assert state.log_norm == 0.0


def test_dark_jump_raises():
    solver = _solver(gamma=0.0)
    with pytest.raises(DarkStateError):
        solver.jump_update(solver.init_fermi_sea())


def test_no_jump_drift_tracks_exact_evolution():
    L, N, gamma, t = 8, 4, 0.1, 1.0
    basis = build_basis(L, N, 0)
    H0 = build_hubbard(basis, HubbardParams(boundary=ANTIPERIODIC))
    c = build_jump_operator(basis, _odd_profile(L), JumpChannel(LINEAR_X, gamma))
    gs = ground_state(H0)
    assert gs.degeneracy == 1
    psi = evolve_nonhermitian(gs.state, H0, [c], t, 1e-10)
    exact_odd, _ = ObservableSet(basis, ANTIPERIODIC).odd_site_number(psi)

    solver = _solver(L, N, gamma)
    state = solver.drift(solver.init_fermi_sea(), t)
    assert state.n_odd() == pytest.approx(exact_odd, rel=0.05)
    assert state.log_norm == pytest.approx(np.log(psi.norm2), rel=0.05)


def test_log_norm_decays_at_twice_the_rate():
    solver = _solver()
    state = solver.init_fermi_sea()
    dt = 1e-4
    later = solver.drift(state, dt)
    assert later.log_norm / dt == pytest.approx(-2 * solver.rate(state), rel=1e-3)


def test_advance_stops_at_threshold():
    solver = _solver()
    state, jumped = solver.advance(solver.init_fermi_sea(), 10.0, np.log(0.5))
    assert jumped
    assert state.log_norm == pytest.approx(np.log(0.5), abs=1e-9)
    assert 0.0 < state.time < 10.0
    later, jumped = solver.advance(state, 0.01, np.log(1e-9))
    assert not jumped
    assert later.time == pytest.approx(state.time + 0.01)


def test_closure_check_modes():
    k = np.arange(4) * np.pi / 2
    bad = MeanFieldState.from_occupations(k, np.array([1.2, 0.0, 0.0, 0.0]))
    with pytest.raises(ClosureBreakdownError):
        MeanFieldSolver(4, 1, 1.0, 0.5, 0.5, -0.5, strict=True).check(bad)
    lenient = MeanFieldSolver(4, 1, 1.0, 0.5, 0.5, -0.5)
    with pytest.warns(ClosureBreakdownWarning):
        lenient.check(bad)
    lenient.check(bad)
    assert len(lenient._warned) == 1


# ── Runs ──────────────────────────────────────────────────────────────────────

def test_meanfield_run_record():
    record = run_meanfield(_config(), seed=3, index=0)
    assert record.engine == "meanfield"
    assert len(record.times) == 5
    row = record.rows[-1]
    assert {"N_odd", "rate", "log_norm", "N", "n_k_7", "alpha_re_3", "alpha_im_0"} <= set(row)
    assert np.allclose(record.column("N"), 4.0, atol=1e-6)
    assert record.metadata["max_pair_sum_drift"] < 1e-6
    assert [snap["t"] for snap in record.metadata["k_snapshots"]] == [0.0, 1.0]
    assert not record.metadata["degenerate_fermi_sea"]


def test_meanfield_run_is_reproducible():
    a = run_meanfield(_config(), seed=3, index=1)
    b = run_meanfield(_config(), seed=3, index=1)
    assert a.jump_times == b.jump_times
    assert np.array_equal(a.column("N_odd"), b.column("N_odd"))


def test_solver_from_config():
    solver = solver_from_config(_config(evolution__meanfield_dt=5e-4, evolution__strict_closure=True))
    assert solver.max_dt == 5e-4
    assert solver.strict
    assert solver.N == 4
    with pytest.raises(ConfigError):
        solver_from_config(_config(channel__polarization="circular-R"))
    with pytest.raises(ConfigError):
        solver_from_config(_config(channel__include_bonds=True))
    with pytest.raises(ConfigError):
        solver_from_config(_config(geometry={"preset": "period-3"}))


def test_meanfield_config_validation():
    with pytest.raises(ConfigError):
        _config(lattice={"L": 8, "n_up": 2, "n_down": 2, "boundary": "antiperiodic"})
    with pytest.raises(ConfigError):
        _config(lattice={"L": 8, "n_up": 4, "n_down": 0, "boundary": "open"})
    with pytest.raises(ConfigError):
        _config(observables=["M_s"])


@pytest.mark.slow
def test_odd_site_number_oscillates_for_fifty_atoms():
    cfg = parse_config(preset="fig5")
    amplitudes = []
    for i in range(5):
        record = run_meanfield(cfg, seed=cfg.ensemble.seed, index=i)
        assert record.metadata["max_pair_sum_drift"] < 1e-6
        assert np.allclose(record.column("N"), 50.0, atol=1e-6)
        n_odd = record.column("N_odd")
        amplitudes.append(n_odd.max() - n_odd.min())
    assert np.mean(np.asarray(amplitudes) >= 2.0) >= 0.7
