"""Non-Hermitian propagation, jump search and full jump trajectories."""

import numpy as np
import pytest

from cavityflow.config import RunConfig, load_preset, parse_config
from cavityflow.errors import DarkStateError
from cavityflow.fock import UP, StateVector, build_basis, fock_state, number_operator
from cavityflow.hubbard import ANTIPERIODIC, OPEN, PERIODIC, HubbardParams, build_hubbard
from cavityflow.model import build_model
from cavityflow.observables import Q, autocorrelation_peak, density_autocorrelation
from cavityflow.optics import LINEAR_X, LINEAR_Y, JumpChannel, MeasurementGeometry, build_jump_operator, diffraction_profile
from cavityflow.records import TrajectoryRecord
from cavityflow.sme import DensityMatrix, lindblad_solve
from cavityflow.trajectory import (
    NonHermitianGenerator,
    apply_jump,
    choose_channel,
    evolve_nonhermitian,
    propagate_to_jump,
    simulate,
    smoothed_rate,
    trajectory_rng,
)


def _random_state(dimension, seed=11):
    rng = np.random.default_rng(seed)
    return StateVector.from_amplitudes(rng.normal(size=dimension) + 1j * rng.normal(size=dimension)).normalized()


def _counting_setup(gamma):
    """One particle, ĉ = √(2γ)·N̂ = λ·1 with λ² = 2γ: every state decays as e^{−2λ²t}."""
    basis = build_basis(3, 1, 0)
    H0 = build_hubbard(basis, HubbardParams(boundary=OPEN))
    c = build_jump_operator(basis, np.ones(3), JumpChannel(LINEAR_X, gamma))
    return basis, H0, c


def _config(**overrides):
    data = {
        "mode": "trajectory",
        "lattice": {"L": 4, "n_up": 2, "n_down": 2, "boundary": "open"},
        "geometry": {"preset": "diffraction-minimum"},
        "channel": {"polarization": "linear-y", "gamma": 1.0},
        "evolution": {"t_max": 2.0, "cadence": 0.25},
        "observables": ["M_s", "S_Q", "rate"],
    }
    for key, value in overrides.items():
        section, _, leaf = key.partition("__")
        if leaf:
            data.setdefault(section, {})[leaf] = value
        else:
            data[section] = value
    return RunConfig.from_dict(data)


# ── Non-Hermitian propagation ────────────────────────────────────────────────

def test_norm_decays_with_channel_weight():
    gamma = 0.4
    basis, H0, c = _counting_setup(gamma)
    psi = _random_state(basis.dimension)
    for t in (0.1, 1.0, 3.0):
        out = evolve_nonhermitian(psi, H0, [c], t)
        assert out.norm2 == pytest.approx(np.exp(-2 * (2 * gamma) * t), rel=1e-6)


def test_norm_loss_rate_is_twice_the_channel_weight():
    basis = build_basis(4, 2, 2)
    H0 = build_hubbard(basis, HubbardParams(U=1.0, boundary=OPEN))
    profile = diffraction_profile(MeasurementGeometry.preset("diffraction-minimum", 4))
    c = build_jump_operator(basis, profile, JumpChannel(LINEAR_Y, 0.7))
    gen = NonHermitianGenerator.build(H0, [c])
    psi = _random_state(basis.dimension)
    dt = 1e-5
    out = evolve_nonhermitian(psi, H0, [c], dt, 1e-12, atol=1e-14, generator=gen)
    slope = (out.norm2 - psi.norm2) / dt
    assert slope == pytest.approx(-2 * gen.channel_weights(psi.amplitudes).sum(), rel=1e-3)


def test_adaptive_and_dense_propagation_agree():
    basis = build_basis(4, 2, 2)
    H0 = build_hubbard(basis, HubbardParams(U=1.5, boundary=OPEN))
    profile = diffraction_profile(MeasurementGeometry.preset("diffraction-minimum", 4))
    c = build_jump_operator(basis, profile, JumpChannel(LINEAR_Y, 0.5))
    gen = NonHermitianGenerator.build(H0, [c])
    psi = _random_state(basis.dimension)
    adaptive = evolve_nonhermitian(psi, H0, [c], 0.3, 1e-10, generator=gen)
    dense = gen.dense_propagator(0.3) @ psi.amplitudes
    assert np.allclose(adaptive.amplitudes, dense, atol=1e-7)


def test_generator_checks_dimensions():
    basis, H0, _ = _counting_setup(0.1)
    other = build_basis(2, 1, 0)
    with pytest.raises(ValueError):
        NonHermitianGenerator.build(H0, [number_operator(other, 0, UP)])
    with pytest.raises(ValueError):
        evolve_nonhermitian(_random_state(basis.dimension), H0, [], 0.0)


# ── Jump search ───────────────────────────────────────────────────────────────

def test_jump_time_solves_norm_equation():
    gamma = 0.5
    basis, H0, c = _counting_setup(gamma)
    gen = NonHermitianGenerator.build(H0, [c])
    out = propagate_to_jump(_random_state(basis.dimension), gen, 0.5, 10.0, jump_tol=1e-10)
    assert out.jumped
    assert abs(out.state.norm2 - 0.5) <= 1e-10
    # e^{−2λ²τ} = ½ with λ² = 2γ
    assert out.t == pytest.approx(np.log(2.0) / (4 * gamma), rel=1e-6)


def test_no_jump_before_horizon():
    basis, H0, c = _counting_setup(0.5)
    gen = NonHermitianGenerator.build(H0, [c])
    out = propagate_to_jump(_random_state(basis.dimension), gen, 0.5, 0.1)
    assert not out.jumped
    assert out.t == 0.1
    assert out.state.norm2 == pytest.approx(np.exp(-0.2), rel=1e-6)


def test_jump_search_arguments():
    basis, H0, c = _counting_setup(0.5)
    gen = NonHermitianGenerator.build(H0, [c])
    psi = _random_state(basis.dimension)
    with pytest.raises(ValueError):
        propagate_to_jump(psi, gen, 1.0, 1.0)
    out = propagate_to_jump(psi, gen, 0.5, 0.0)
    assert not out.jumped and out.t == 0.0


def test_apply_jump_normalizes_and_rejects_dark_states():
    basis = build_basis(2, 1, 0)
    n0 = number_operator(basis, 0, UP)
    superposed = StateVector.from_amplitudes(np.array([1.0, 1.0]))
    out = apply_jump(superposed, n0)
    assert out.norm2 == 1.0
    assert np.allclose(np.abs(out.amplitudes), np.abs(fock_state(basis, "10").amplitudes))
    with pytest.raises(DarkStateError):
        apply_jump(fock_state(basis, "01"), n0)


def test_choose_channel():
    rng = np.random.default_rng(0)
    assert choose_channel(np.array([3.0]), rng) == 0
    assert choose_channel(np.array([0.0, 2.0, 0.0]), rng) == 1
    picks = [choose_channel(np.array([1.0, 3.0]), rng) for _ in range(4000)]
    assert np.mean(picks) == pytest.approx(0.75, abs=0.03)


def test_trajectory_streams_are_reproducible():
    a = trajectory_rng(5, 3).random(4)
    assert np.array_equal(a, trajectory_rng(5, 3).random(4))
    assert not np.array_equal(a, trajectory_rng(5, 4).random(4))
    assert not np.array_equal(a, trajectory_rng(5, 3, stream=1).random(4))


# ── Trajectories ──────────────────────────────────────────────────────────────

def test_zero_gamma_trajectory_has_no_jumps():
    model = build_model(RunConfig.from_dict(load_preset("smoke")))
    record = simulate(model, seed=0, index=0)
    assert record.n_emitted == 0
    assert np.allclose(record.norm2, 1.0)
    assert len(record.rows) == len(record.times) == 11
    assert all(row["rate"] == 0.0 for row in record.rows)
    assert record.photocounts[-1] == 0


def test_trajectory_is_deterministic_per_seed_and_index():
    model = build_model(_config())
    a = simulate(model, seed=2, index=0)
    b = simulate(model, seed=2, index=0)
    c = simulate(model, seed=2, index=1)
    assert a.jump_times == b.jump_times
    assert a.n_emitted > 0
    assert a.jump_times != c.jump_times
    for ra, rb in zip(a.rows, b.rows):
        assert ra == rb


def test_trajectory_bookkeeping():
    model = build_model(_config())
    record = simulate(model, seed=4)
    times = np.asarray(record.jump_times)
    assert (np.diff(times) >= 0).all()
    assert ((times > 0) & (times <= 2.0)).all()
    assert record.photocounts[-1] == record.n_emitted
    assert record.jump_channels == [0] * record.n_emitted
    assert ((record.norm2 > 0) & (record.norm2 <= 1.0 + 1e-9)).all()


def test_smoothed_rate_of_uniform_clicks():
    grid = np.arange(11.0)
    record = TrajectoryRecord(index=0, seed=0, engine="trajectory", times=grid,
                              norm2=np.ones(11), rows=[{}] * 11,
                              jump_times=list(np.arange(10) + 0.5), detected=[True] * 10)
    rate = smoothed_rate(record, 2.0)
    assert rate[5] == pytest.approx(1.0)
    assert rate[0] == pytest.approx(1.0)  # window clipped at t = 0


@pytest.mark.slow
def test_ensemble_average_follows_master_equation():
    cfg = _config(lattice={"L": 2, "n_up": 1, "n_down": 1, "boundary": "open"},
                  hubbard={"J": 1.0, "U": 2.0},
                  channel__gamma=0.5, evolution__t_max=1.0, evolution__cadence=0.5,
                  observables=["double_occupancy"])
    model = build_model(cfg)
    records = [simulate(model, seed=9, index=i) for i in range(400)]
    sampled = np.mean([r.column("double_occupancy")[-1] for r in records])

    rho0 = DensityMatrix.from_state(model.initial_state)
    rho_t = lindblad_solve(rho0, model.H0, model.jumps, [0.0, 1.0])[-1]
    exact = float(model.observables.double_occupancy(rho_t).sum())
    assert sampled == pytest.approx(exact, abs=0.1)


# ── Conservation along trajectories ───────────────────────────────────────────

def test_staggered_magnetization_stays_zero_along_jumps():
    model = build_model(_config(observables=["M_s", "P_Ms"]))
    record = simulate(model, seed=2)
    assert record.n_emitted > 0
    assert np.abs(record.column("M_s")).max() < 1e-10
    for row in record.rows:
        for mu in (2, 4):
            assert row[f"P_Ms_{mu}"] == pytest.approx(row[f"P_Ms_{-mu}"], abs=1e-10)


def test_photocount_identity_at_every_snapshot():
    gamma = 1.0
    model = build_model(_config())
    record = simulate(model, seed=2)
    assert record.n_emitted > 0
    expected = 2 * gamma * (4 * record.column("S_Q") + record.column("M_s") ** 2)
    assert np.allclose(record.column("rate"), expected, rtol=1e-10, atol=1e-12)


def _momentum_pairs(record, L):
    n_k = np.array([[row[f"n_k_{i}"] for i in range(L)] for row in record.rows])
    return n_k[:, : L // 2] + n_k[:, L // 2:]


@pytest.mark.parametrize("boundary", [PERIODIC, ANTIPERIODIC])
def test_momentum_pair_sums_survive_jumps(boundary):
    cfg = _config(lattice={"L": 8, "n_up": 4, "n_down": 0, "boundary": boundary},
                  geometry={"preset": "odd-sites"},
                  channel={"polarization": "linear-x", "gamma": 1.0},
                  observables=["n_k"])
    record = simulate(build_model(cfg), seed=1)
    assert record.n_emitted > 0
    pairs = _momentum_pairs(record, 8)
    assert np.allclose(pairs, pairs[0], atol=1e-8)
    assert np.allclose(pairs.sum(axis=1), 4.0)


# ── Measurement regimes ───────────────────────────────────────────────────────

def _bimodal(row):
    """P(μ) peaks at ±μ > 0 above P(0)."""
    P = {int(key[5:]): value for key, value in row.items() if key.startswith("P_Ms_")}
    peak = max((mu for mu in P if mu > 0), key=P.get)
    return P[peak] > P[0] and P[-peak] > P[0]


@pytest.mark.slow
def test_staggered_spin_regime():
    cfg = parse_config(preset="fig2", overrides={"evolution.cadence": 0.25})
    model = build_model(cfg)
    gamma, L = cfg.channel.gamma, cfg.lattice.L
    ground_sq = model.observables.structure_factor(model.ground.state, Q)
    records = [simulate(model, seed=cfg.ensemble.seed, index=i) for i in range(cfg.ensemble.trajectories)]
    assert len(records) == 50

    for record in records:
        assert np.abs(record.column("M_s")).max() < 1e-6
        assert np.allclose(record.column("rate"), 2 * gamma * L * record.column("S_Q"),
                           rtol=1e-10, atol=1e-10)
    assert np.mean([_bimodal(record.rows[-1]) for record in records]) >= 0.5
    peak_sq = np.median([record.column("S_Q").max() for record in records])
    assert peak_sq >= 1.5 * ground_sq


@pytest.mark.slow
def test_odd_up_counting_regime_builds_staggered_magnetization():
    cfg = parse_config(preset="fig3", overrides={"evolution.cadence": 0.5})
    model = build_model(cfg)
    _, m = model.observables.local_profiles(model.ground.state)
    assert np.abs(m).max() < 1e-8
    staggered = np.array([simulate(model, seed=cfg.ensemble.seed, index=i).column("staggered")[-1]
                          for i in range(cfg.ensemble.trajectories)])
    assert np.mean(staggered > 0.05) >= 0.5


@pytest.mark.slow
def test_odd_density_regime_suppresses_fluctuations():
    cfg = parse_config(preset="fig4", overrides={"evolution.cadence": 0.5})
    model = build_model(cfg)
    ratios = []
    for i in range(12):
        record = simulate(model, seed=cfg.ensemble.seed, index=i)
        var = record.column("var_N_odd")
        ratios.extend(var[record.times >= 5.0] / var[0])
    assert np.median(ratios) < 0.5


@pytest.mark.slow
def test_period_three_regime_builds_a_period_three_wave():
    cfg = parse_config(preset="fig4-period3", overrides={"evolution.cadence": 0.25})
    model = build_model(cfg)
    L = cfg.lattice.L
    curves = []
    for i in range(10):
        record = simulate(model, seed=cfg.ensemble.seed, index=i)
        profiles = [[row[f"rho_{j}"] for j in range(L)]
                    for t, row in zip(record.times, record.rows) if t >= 1.0]
        curves.append(np.mean([density_autocorrelation(rho, periodic=False) for rho in profiles], axis=0))
    assert autocorrelation_peak(np.mean(curves, axis=0)) == 3


@pytest.mark.slow
def test_odd_density_regime_keeps_momentum_pairs():
    cfg = parse_config(preset="fig4", overrides={"lattice.boundary": "periodic", "evolution.t_max": 2.0,
                                                 "evolution.cadence": 0.5})
    model = build_model(cfg)
    for i in range(3):
        record = simulate(model, seed=cfg.ensemble.seed, index=i)
        assert record.n_emitted > 0
        pairs = _momentum_pairs(record, cfg.lattice.L)
        assert np.allclose(pairs, pairs[0], atol=1e-8)
