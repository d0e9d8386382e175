"""RunConfig parsing, layering, validation and capacity checks."""

import json

import numpy as np
import pytest

from cavityflow.config import RUN_PRESETS, RunConfig, load_preset, parse_config, profile_array
from cavityflow.errors import CapacityError, ConfigError
from cavityflow.fock import expectation, fock_state
from cavityflow.model import build_model


def _base(**sections):
    data = {
        "mode": "trajectory",
        "lattice": {"L": 4, "n_up": 2, "n_down": 2, "boundary": "open"},
    }
    data.update(sections)
    return data


# ── Round trip and layering ───────────────────────────────────────────────────

@pytest.mark.parametrize("name", RUN_PRESETS)
def test_presets_parse_and_round_trip(name):
    cfg = RunConfig.from_dict(load_preset(name))
    assert cfg.name == name
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_figure_presets_set_up_their_regimes():
    assert set(RUN_PRESETS) == {"fig2", "fig3", "fig4", "fig4-local", "fig4-period3", "fig5", "smoke"}
    fig2 = parse_config(preset="fig2")
    assert (fig2.lattice.L, fig2.lattice.n_up, fig2.lattice.n_down, fig2.hubbard.U) == (8, 4, 4, 0.0)
    assert (fig2.geometry.preset, fig2.channel.polarization, fig2.channel.gamma) == \
        ("diffraction-minimum", "linear-y", 1.0)
    fig3 = parse_config(preset="fig3")
    assert (fig3.hubbard.U, fig3.channel.gamma) == (20.0, 0.1)
    assert (fig3.geometry.preset, fig3.channel.polarization) == ("odd-sites", "circular-L")
    fig5 = parse_config(preset="fig5")
    assert (fig5.mode, fig5.lattice.L, fig5.lattice.n_up, fig5.channel.gamma) == ("meanfield", 100, 50, 0.05)
    assert fig5.geometry.preset == "odd-sites"
    assert parse_config(preset="fig4-local").channel.addressing == "local"
    assert parse_config(preset="fig4-period3").geometry.preset == "period-3"


def test_defaults_fill_missing_keys():
    cfg = RunConfig.from_dict({})
    assert cfg.mode == "trajectory"
    assert cfg.lattice.L == 8
    assert cfg.channel.polarization == "linear-y"
    assert cfg.evolution.cadence == 0.05
    assert cfg.observables == ("M_s", "S_Q", "rate")


def test_config_file_round_trip(tmp_path):
    cfg = parse_config(preset="fig2")
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert parse_config(path) == cfg


def test_file_layers_over_preset(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"channel": {"gamma": 0.3}, "evolution": {"t_max": 0.5}}))
    cfg = parse_config(path, preset="smoke")
    assert cfg.channel.gamma == 0.3
    assert cfg.channel.polarization == "linear-y"
    assert cfg.evolution.t_max == 0.5
    assert cfg.lattice.L == 4


def test_overrides_win_and_none_is_skipped():
    cfg = parse_config(preset="smoke", overrides={"ensemble.seed": 7, "ensemble.trajectories": None,
                                                  "output.directory": "elsewhere"})
    assert cfg.ensemble.seed == 7
    assert cfg.ensemble.trajectories == 2
    assert cfg.output.directory == "elsewhere"
    assert cfg.with_overrides({"channel.gamma": 2.0}).channel.gamma == 2.0


def test_seeds_enumerate_the_ensemble():
    cfg = parse_config(preset="smoke", overrides={"ensemble.seed": 4, "ensemble.trajectories": 3})
    assert cfg.seeds() == [(4, 0), (4, 1), (4, 2)]


# ── Loading errors ────────────────────────────────────────────────────────────

def test_unknown_keys_name_the_dotted_path():
    with pytest.raises(ConfigError, match="lattice.LL"):
        RunConfig.from_dict(_base(lattice={"LL": 4}))
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict(_base(colour="red"))
    with pytest.raises(ConfigError):
        parse_config(preset="smoke", overrides={"evolution.dtt": 0.1})


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        parse_config(listed)
    with pytest.raises(ConfigError):
        parse_config(preset="no-such-preset")


def test_config_error_exit_code():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict({"mode": "teleport"})
    assert info.value.exit_code == 2


# ── Validation ────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("section,values", [
    ("hubbard", {"J": 0.0}),
    ("lattice", {"L": 4, "n_up": 5, "n_down": 0}),
    ("lattice", {"L": 4, "n_up": 2, "n_down": 2, "boundary": "twisted"}),
    ("lattice", {"L": "4"}),
    ("lattice", {"L": 4.5}),
    ("lattice", {"L": True}),
    ("channel", {"eta": 1.5}),
    ("channel", {"gamma": -1.0}),
    ("channel", {"polarization": "elliptic"}),
    ("channel", {"polarization": "custom"}),
    ("channel", {"addressing": "local", "include_bonds": True}),
    ("geometry", {"preset": "zigzag"}),
    ("geometry", {"preset": None, "partition": [1]}),
    ("evolution", {"cadence": 0.0}),
    ("evolution", {"sme_scheme": "milstein"}),
    ("ensemble", {"trajectories": 0}),
    ("ensemble", {"workers": 0}),
])
def test_invalid_values(section, values):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(**{section: values}))


@pytest.mark.parametrize("spec", ["fock:1100", "fock:110|0011", "fock:1100|0111", "vacuum"])
def test_invalid_initial_state(spec):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(initial_state=spec))


def test_valid_initial_states():
    assert RunConfig.from_dict(_base(initial_state="fock:1010|0101")).initial_state == "fock:1010|0101"
    assert RunConfig.from_dict(_base(initial_state="file:psi.npy")).initial_state == "file:psi.npy"


def test_snapshot_times_inside_horizon():
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(evolution={"t_max": 1.0}, snapshot_times=[0.5, 2.0]))


def test_observable_selection():
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(observables=["entropy"]))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(observables=["n_k"]))  # open chain
    cfg = RunConfig.from_dict(_base(lattice={"L": 4, "n_up": 2, "n_down": 0, "boundary": "periodic"},
                                    observables=["n_k", "alpha"]))
    assert cfg.closed_even


def test_custom_profile_coercion():
    cfg = RunConfig.from_dict(_base(channel={"polarization": "custom",
                                             "custom_profile": [[0, 1], 2, 0, 0.5]}))
    assert cfg.channel.custom_profile == (1j, 2 + 0j, 0j, 0.5 + 0j)
    assert cfg.to_dict()["channel"]["custom_profile"] == [[0.0, 1.0], 2.0, 0.0, 0.5]
    assert np.array_equal(profile_array(cfg), np.array([1j, 2, 0, 0.5]))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(channel={"polarization": "custom", "custom_profile": [1, 2]}))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(_base(channel={"polarization": "custom",
                                           "custom_profile": [[1, 2, 3], 0, 0, 0]}))


def test_profile_array_falls_back_to_geometry():
    cfg = RunConfig.from_dict(_base(geometry={"preset": "odd-sites"}))
    assert np.allclose(profile_array(cfg), [0, 1, 0, 1])


def test_model_uses_the_custom_profile():
    cfg = RunConfig.from_dict(_base(channel={"polarization": "custom", "gamma": 0.5,
                                             "custom_profile": [0, 2, 0, 0]}))
    model = build_model(cfg)
    assert np.array_equal(model.profile, profile_array(cfg))
    # site 1 doubly occupied: ĉ = √(2·0.5)·2·ρ̂_1 → 4
    assert expectation(model.jumps[0], fock_state(model.basis, "0110", "0101")).real == pytest.approx(4.0)


# ── Engines and capacity ──────────────────────────────────────────────────────

def test_engine_routing():
    assert RunConfig.from_dict(_base()).engine == "trajectory"
    assert RunConfig.from_dict(_base(channel={"eta": 0.5})).engine == "sme"
    thinned = RunConfig.from_dict(_base(channel={"eta": 0.5}, inefficiency="thinning"))
    assert thinned.engine == "thinning"
    assert RunConfig.from_dict(_base(mode="groundstate")).engine == "groundstate"


def test_pure_state_capacity():
    with pytest.raises(CapacityError) as info:
        RunConfig.from_dict(_base(lattice={"L": 16, "n_up": 8, "n_down": 8}))
    assert info.value.exit_code == 3


def test_density_matrix_capacity():
    big = {"L": 10, "n_up": 5, "n_down": 5}
    with pytest.raises(CapacityError):
        RunConfig.from_dict(_base(mode="sme", lattice=big))
    with pytest.raises(CapacityError):
        RunConfig.from_dict(_base(lattice=big, channel={"eta": 0.5}))
    # thinning stays on pure states
    RunConfig.from_dict(_base(lattice=big, channel={"eta": 0.5}, inefficiency="thinning"))
    RunConfig.from_dict(_base(mode="sme", lattice={"L": 8, "n_up": 4, "n_down": 4}))


def test_geometry_description_skips_capacity():
    cfg = RunConfig.from_dict(_base(mode="describe-geometry",
                                    lattice={"L": 40, "n_up": 20, "n_down": 20}))
    assert cfg.geometry.build(40).L == 40
