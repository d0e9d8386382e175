"""RunConfig — every knob of a run, as frozen dataclasses.

A config is a JSON document with one object per section::

    {
      "mode": "trajectory",
      "lattice":   {"L": 8, "n_up": 4, "n_down": 4, "boundary": "open"},
      "hubbard":   {"J": 1.0, "U": 0.0},
      "geometry":  {"preset": "diffraction-minimum"},
      "channel":   {"polarization": "linear-y", "gamma": 1.0, "eta": 1.0},
      "evolution": {"t_max": 10.0, "cadence": 0.05},
      "ensemble":  {"trajectories": 50, "seed": 1},
      "output":    {"directory": "runs/fig2"},
      "observables": ["M_s", "S_Q", "rate", "P_Ms"]
    }

Missing keys take the dataclass defaults, unknown keys at any depth are a
ConfigError naming the dotted key.  ``RunConfig.to_dict()`` is the echo
written next to the results and parses back to an equal RunConfig.

Usage
-----
    cfg = parse_config("fig2.json", overrides={"ensemble.seed": 7})
    cfg = parse_config(preset="smoke")
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from cavityflow.errors import CapacityError, ConfigError
from cavityflow.fock import DENSITY_MATRIX_BUDGET, PURE_STATE_BUDGET
from cavityflow.hubbard import BOUNDARIES, OPEN
from cavityflow.observables import MOMENTUM_OBSERVABLES, SCALAR_OBSERVABLES, VECTOR_OBSERVABLES
from cavityflow.optics import (
    CUSTOM,
    MODE_KINDS,
    POLARIZATIONS,
    PRESETS as GEOMETRY_PRESETS,
    TRAVELING,
    MeasurementGeometry,
    diffraction_profile,
    traveling_partition,
)
from cavityflow.sme import SCHEMES

MODES = ("groundstate", "trajectory", "sme", "thinning", "meanfield", "describe-geometry")
ADDRESSING = ("global", "local")
INEFFICIENCY = ("sme", "thinning")
RUN_PRESETS = ("fig2", "fig3", "fig4", "fig4-local", "fig4-period3", "fig5", "smoke")
MEANFIELD_OBSERVABLES = ("N_odd", "rate", "n_k", "alpha")


# ── Coercion ──────────────────────────────────────────────────────────────────

def _fail(key: str, message: str) -> ConfigError:
    return ConfigError(f"{key}: {message}")


def _coerce(kind: str, value: Any, key: str) -> Any:
    optional = kind.endswith("| None")
    if value is None:
        if optional:
            return None
        raise _fail(key, "must not be null")
    kind = kind.replace("| None", "").strip()
    if kind == "bool":
        if not isinstance(value, bool):
            raise _fail(key, f"expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise _fail(key, f"expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise _fail(key, f"expected a finite number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise _fail(key, f"expected a string, got {value!r}")
        return value
    if not isinstance(value, (list, tuple)):
        raise _fail(key, f"expected a list, got {value!r}")
    if kind == "tuple[str, ...]":
        return tuple(_coerce("str", v, f"{key}[{i}]") for i, v in enumerate(value))
    if kind in ("tuple[float, ...]", "tuple[int, ...]"):
        inner = kind[6:-6]
        return tuple(_coerce(inner, v, f"{key}[{i}]") for i, v in enumerate(value))
    if kind == "tuple[complex, ...]":
        out = []
        for i, v in enumerate(value):
            if isinstance(v, (list, tuple)):
                if len(v) != 2:
                    raise _fail(f"{key}[{i}]", "complex entries are [re, im] pairs")
                out.append(complex(_coerce("float", v[0], key), _coerce("float", v[1], key)))
            else:
                out.append(complex(_coerce("float", v, f"{key}[{i}]")))
        return tuple(out)
    raise TypeError(f"no coercion for field type {kind!r}")


def _build(cls, data: Any, prefix: str):
    """Instantiate section *cls* from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise _fail(prefix, f"expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls) if f.init}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key {prefix}.{unknown[0]}"
                          + (f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))
    kwargs = {name: _coerce(known[name].type, value, f"{prefix}.{name}")
              for name, value in data.items()}
    return cls(**kwargs)


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, complex):
        return [value.real, value.imag] if value.imag else value.real
    return value


def _section_dict(section) -> dict[str, Any]:
    return {f.name: _plain(getattr(section, f.name)) for f in fields(section)}


# ── Sections ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class LatticeConfig:
    L: int = 8
    n_up: int = 4
    n_down: int = 4
    boundary: str = OPEN

    def __post_init__(self):
        if self.L < 1:
            raise _fail("lattice.L", f"must be ≥ 1, got {self.L}")
        for name in ("n_up", "n_down"):
            value = getattr(self, name)
            if not 0 <= value <= self.L:
                raise _fail(f"lattice.{name}", f"must lie in 0..{self.L}, got {value}")
        if self.boundary not in BOUNDARIES:
            raise _fail("lattice.boundary", f"must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def dimension(self) -> int:
        return math.comb(self.L, self.n_up) * math.comb(self.L, self.n_down)

    @property
    def n_total(self) -> int:
        return self.n_up + self.n_down


@dataclass(frozen=True)
class HubbardConfig:
    J: float = 1.0
    U: float = 0.0

    def __post_init__(self):
        if self.J <= 0:
            raise _fail("hubbard.J", f"must be > 0 (it is the energy unit), got {self.J}")


@dataclass(frozen=True)
class GeometryConfig:
    """A named geometry preset, or explicit beams.

    Precedence: ``preset``, then ``partition`` = [s, R] (traveling waves with
    δ = 2πs/R), then ``kd`` with the beam angles, then the raw k_z·d phases.
    """

    preset: str | None = "diffraction-minimum"
    partition: tuple[int, ...] | None = None
    kd: float | None = None
    theta0: float = 0.0
    theta1: float = 0.0
    probe_kind: str = TRAVELING
    cavity_kind: str = TRAVELING
    k0z: float = 0.0
    k1z: float = 0.0
    phi0: float = 0.0
    phi1: float = 0.0

    def __post_init__(self):
        if self.preset is not None and self.preset not in GEOMETRY_PRESETS:
            raise _fail("geometry.preset", f"must be one of {GEOMETRY_PRESETS}, got {self.preset!r}")
        if self.partition is not None and (len(self.partition) != 2 or self.partition[1] <= 0):
            raise _fail("geometry.partition", "expected [s, R] with R > 0")
        for name in ("probe_kind", "cavity_kind"):
            if getattr(self, name) not in MODE_KINDS:
                raise _fail(f"geometry.{name}", f"must be one of {MODE_KINDS}")

    def build(self, L: int) -> MeasurementGeometry:
        if self.preset is not None:
            return MeasurementGeometry.preset(self.preset, L)
        if self.partition is not None:
            return traveling_partition(L, *self.partition)
        if self.kd is not None:
            return MeasurementGeometry.from_angles(L, self.kd, self.theta0, self.theta1,
                                                   self.probe_kind, self.cavity_kind,
                                                   self.phi0, self.phi1)
        return MeasurementGeometry(L, self.probe_kind, self.cavity_kind, self.k0z, self.k1z,
                                   self.phi0, self.phi1)


@dataclass(frozen=True)
class ChannelConfig:
    polarization: str = "linear-y"
    gamma: float = 1.0
    eta: float = 1.0
    addressing: str = "global"
    include_bonds: bool = False
    bond_weight: float = 0.0
    custom_profile: tuple[complex, ...] | None = None

    def __post_init__(self):
        if self.polarization not in POLARIZATIONS:
            raise _fail("channel.polarization", f"must be one of {POLARIZATIONS}, got {self.polarization!r}")
        if self.gamma < 0:
            raise _fail("channel.gamma", f"must be ≥ 0, got {self.gamma}")
        if not 0.0 <= self.eta <= 1.0:
            raise _fail("channel.eta", f"must lie in [0, 1], got {self.eta}")
        if self.addressing not in ADDRESSING:
            raise _fail("channel.addressing", f"must be one of {ADDRESSING}, got {self.addressing!r}")
        if self.include_bonds and self.addressing == "local":
            raise _fail("channel.include_bonds", "bond coupling needs global addressing")
        if self.polarization == CUSTOM and self.custom_profile is None:
            raise _fail("channel.custom_profile", "required for custom polarization")


@dataclass(frozen=True)
class EvolutionConfig:
    t_max: float = 10.0
    cadence: float = 0.05
    rtol: float = 1e-8
    atol: float = 1e-12
    jump_tol: float = 1e-10
    sme_dt: float = 1e-3
    sme_scheme: str = "rk4"
    sme_refine: bool = False
    meanfield_dt: float = 0.05
    strict_closure: bool = False

    def __post_init__(self):
        if self.t_max < 0:
            raise _fail("evolution.t_max", f"must be ≥ 0, got {self.t_max}")
        for name in ("cadence", "rtol", "atol", "jump_tol", "sme_dt", "meanfield_dt"):
            if getattr(self, name) <= 0:
                raise _fail(f"evolution.{name}", f"must be > 0, got {getattr(self, name)}")
        if self.sme_scheme not in SCHEMES:
            raise _fail("evolution.sme_scheme", f"must be one of {SCHEMES}, got {self.sme_scheme!r}")


@dataclass(frozen=True)
class EnsembleConfig:
    trajectories: int = 1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.trajectories < 1:
            raise _fail("ensemble.trajectories", f"must be ≥ 1, got {self.trajectories}")
        if self.seed < 0:
            raise _fail("ensemble.seed", f"must be ≥ 0, got {self.seed}")
        if self.workers < 1:
            raise _fail("ensemble.workers", f"must be ≥ 1, got {self.workers}")


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/out"
    emit_plot_data: bool = False


_SECTIONS = {
    "lattice": LatticeConfig,
    "hubbard": HubbardConfig,
    "geometry": GeometryConfig,
    "channel": ChannelConfig,
    "evolution": EvolutionConfig,
    "ensemble": EnsembleConfig,
    "output": OutputConfig,
}
_TOP_LEVEL = {"name": "str", "mode": "str", "observables": "tuple[str, ...]",
              "initial_state": "str", "inefficiency": "str", "snapshot_times": "tuple[float, ...]"}


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description; construct through ``from_dict``/``parse_config``."""

    mode: str = "trajectory"
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    hubbard: HubbardConfig = field(default_factory=HubbardConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    observables: tuple[str, ...] = ("M_s", "S_Q", "rate")
    initial_state: str = "ground"
    inefficiency: str = "sme"
    snapshot_times: tuple[float, ...] = ()
    name: str = "run"

    def __post_init__(self):
        if self.mode not in MODES:
            raise _fail("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.inefficiency not in INEFFICIENCY:
            raise _fail("inefficiency", f"must be one of {INEFFICIENCY}, got {self.inefficiency!r}")
        self._check_observables()
        self._check_initial_state()
        self._check_mode()
        for t in self.snapshot_times:
            if not 0.0 <= t <= self.evolution.t_max:
                raise _fail("snapshot_times", f"{t} lies outside [0, t_max]")
        profile = self.channel.custom_profile
        if profile is not None and len(profile) != self.lattice.L:
            raise _fail("channel.custom_profile", f"needs {self.lattice.L} entries, got {len(profile)}")

    # -- validation ------------------------------------------------------

    @property
    def closed_even(self) -> bool:
        return self.lattice.boundary != OPEN and self.lattice.L % 2 == 0

    def _check_observables(self) -> None:
        allowed = MEANFIELD_OBSERVABLES if self.mode == "meanfield" else SCALAR_OBSERVABLES + VECTOR_OBSERVABLES
        unknown = [name for name in self.observables if name not in allowed]
        if unknown:
            raise _fail("observables", f"unknown observable {unknown[0]!r} for mode {self.mode}")
        if set(self.observables) & set(MOMENTUM_OBSERVABLES) and not self.closed_even:
            raise _fail("observables", "momentum observables need a periodic or antiperiodic chain "
                                       "with even L")

    def _check_initial_state(self) -> None:
        spec = self.initial_state
        if spec == "ground" or spec.startswith("file:"):
            return
        if not spec.startswith("fock:"):
            raise _fail("initial_state", f"expected 'ground', 'fock:<up>|<down>' or 'file:<path>', got {spec!r}")
        up, _, down = spec[5:].partition("|")
        lat = self.lattice
        for bits, count, label in ((up, lat.n_up, "up"), (down or "0" * lat.L, lat.n_down, "down")):
            if len(bits) != lat.L or set(bits) - {"0", "1"}:
                raise _fail("initial_state", f"{label} bits must be {lat.L} characters of 0/1, got {bits!r}")
            if bits.count("1") != count:
                raise _fail("initial_state", f"{label} bits hold {bits.count('1')} particles, sector has {count}")

    def _check_mode(self) -> None:
        lat = self.lattice
        if self.mode == "meanfield":
            if lat.n_down != 0 or self.hubbard.U != 0:
                raise _fail("mode", "meanfield needs a polarized (n_down = 0), non-interacting gas")
            if not self.closed_even:
                raise _fail("mode", "meanfield needs a periodic or antiperiodic chain with even L")
            return
        if self.mode == "describe-geometry":
            return
        if self.mode == "sme" or (self.mode == "trajectory" and self.channel.eta < 1
                                  and self.inefficiency == "sme"):
            if lat.dimension > DENSITY_MATRIX_BUDGET:
                raise CapacityError(lat.dimension, DENSITY_MATRIX_BUDGET, "density matrix")
        elif lat.dimension > PURE_STATE_BUDGET:
            raise CapacityError(lat.dimension, PURE_STATE_BUDGET)

    # -- conversion ------------------------------------------------------

    @property
    def engine(self) -> str:
        """Engine that runs this config; trajectory mode with η < 1 uses ``inefficiency``."""
        if self.mode == "trajectory" and self.channel.eta < 1.0:
            return self.inefficiency
        return self.mode

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config root must be an object")
        unknown = sorted(set(data) - set(_SECTIONS) - set(_TOP_LEVEL))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]}")
        kwargs: dict[str, Any] = {name: _build(section, data.get(name), name)
                                  for name, section in _SECTIONS.items()}
        for name, kind in _TOP_LEVEL.items():
            if name in data:
                kwargs[name] = _coerce(kind, data[name], name)
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "mode": self.mode}
        for name in _SECTIONS:
            out[name] = _section_dict(getattr(self, name))
        out["observables"] = list(self.observables)
        out["initial_state"] = self.initial_state
        out["inefficiency"] = self.inefficiency
        out["snapshot_times"] = list(self.snapshot_times)
        return out

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        data = self.to_dict()
        _apply_overrides(data, overrides)
        return RunConfig.from_dict(data)

    def seeds(self) -> list[tuple[int, int]]:
        """(seed, index) for every trajectory of the ensemble."""
        return [(self.ensemble.seed, i) for i in range(self.ensemble.trajectories)]


# ── Loading ───────────────────────────────────────────────────────────────────

def load_preset(name: str) -> dict[str, Any]:
    """Preset document shipped under ``cavityflow/presets``."""
    if name not in RUN_PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {RUN_PRESETS}")
    text = (resources.files("cavityflow") / "presets" / f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict[str, Any], top: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in top.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def _apply_overrides(data: dict[str, Any], overrides: Mapping[str, Any]) -> None:
    for dotted, value in overrides.items():
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        node = data
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value


def parse_config(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Preset, then the JSON file on top, then dotted-key *overrides* (``None`` skipped)."""
    data: dict[str, Any] = load_preset(preset) if preset else {}
    if path is not None:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
        if not isinstance(document, Mapping):
            raise ConfigError(f"{path}: config root must be an object")
        data = _merge(data, document)
    if overrides:
        _apply_overrides(data, overrides)
    return RunConfig.from_dict(data)


def profile_array(cfg: RunConfig) -> np.ndarray:
    """Effective J_ii of *cfg*: ``channel.custom_profile`` when given, else the geometry's profile."""
    if cfg.channel.custom_profile is not None:
        return np.asarray(cfg.channel.custom_profile, dtype=np.complex128)
    return diffraction_profile(cfg.geometry.build(cfg.lattice.L))


__all__ = [
    "MODES", "RUN_PRESETS", "LatticeConfig", "HubbardConfig", "GeometryConfig", "ChannelConfig",
    "EvolutionConfig", "EnsembleConfig", "OutputConfig", "RunConfig", "load_preset",
    "parse_config", "profile_array",
]
