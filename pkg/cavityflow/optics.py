"""Measurement geometry → scattering coefficients → jump operators.

Point-like atoms at sites j = 0..L−1 (lattice constant d = 1) see the probe
mode u₀ and the cavity mode u₁*.  Each beam is either a traveling wave
``exp(±i k_z j)`` or a standing wave ``cos(k_z j + φ)``; the on-site
coefficient is their product

    J_jj = u₀(j) · u₁*(j)

and the cavity field couples to D̂ = Σ_j J_jj Ô_j, with Ô_j selected by the
detected polarization:

    circular-L → n_{j↑}      circular-R → n_{j↓}
    linear-x   → ρ_j         linear-y   → m_j        custom → ρ_j

The jump operator is ĉ = √(2γ)·D̂ (plus √(2γ)·B̂ when bonds are included).
The overall phase of the Rayleigh coefficient is dropped.

Site parity is fixed with site 0 even, so J_jj = (−1)^j is +1 on even sites
and "odd sites" are 1, 3, 5, ...
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from cavityflow.fock import (
    DOWN,
    UP,
    FockBasis,
    SparseOperator,
    build_operator,
    c,
    cdag,
    n,
)
from cavityflow.logging import get_logger

_log = get_logger("optics")

TRAVELING = "traveling"
STANDING = "standing"
MODE_KINDS = (TRAVELING, STANDING)

CIRCULAR_L = "circular-L"
CIRCULAR_R = "circular-R"
LINEAR_X = "linear-x"
LINEAR_Y = "linear-y"
CUSTOM = "custom"
POLARIZATIONS = (CIRCULAR_L, CIRCULAR_R, LINEAR_X, LINEAR_Y, CUSTOM)

# (spin, weight) pairs defining Ô_j for each polarization
_SITE_OPERATORS: dict[str, tuple[tuple[str, float], ...]] = {
    CIRCULAR_L: ((UP, 1.0),),
    CIRCULAR_R: ((DOWN, 1.0),),
    LINEAR_X: ((UP, 1.0), (DOWN, 1.0)),
    LINEAR_Y: ((UP, 1.0), (DOWN, -1.0)),
    CUSTOM: ((UP, 1.0), (DOWN, 1.0)),
}

PRESETS = ("diffraction-minimum", "odd-sites", "period-3")

_RESIDUE = 1e-12


def _clean(values: np.ndarray) -> np.ndarray:
    """Zero out floating residues below 1e-12 in real and imaginary parts."""
    values = np.asarray(values, dtype=np.complex128)
    re = np.where(np.abs(values.real) < _RESIDUE, 0.0, values.real)
    im = np.where(np.abs(values.imag) < _RESIDUE, 0.0, values.imag)
    return re + 1j * im


# ── Geometry ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MeasurementGeometry:
    """Probe (beam 0) and cavity (beam 1) modes projected on the chain axis.

    ``k0z``/``k1z`` are the dimensionless phases per site k_{l,z}·d, with
    k_{l,z} = |k_l| cos θ_l.  ``phi0``/``phi1`` only matter for standing waves.
    """

    L: int
    probe_kind: str = TRAVELING
    cavity_kind: str = TRAVELING
    k0z: float = 0.0
    k1z: float = 0.0
    phi0: float = 0.0
    phi1: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be positive, got {self.L}")
        for kind in (self.probe_kind, self.cavity_kind):
            if kind not in MODE_KINDS:
                raise ValueError(f"mode kind must be one of {MODE_KINDS}, got {kind!r}")
        for value in (self.k0z, self.k1z, self.phi0, self.phi1):
            if not np.isfinite(value):
                raise ValueError("geometry phases must be finite")

    @classmethod
    def from_angles(
        cls,
        L: int,
        kd: float,
        theta0: float,
        theta1: float,
        probe_kind: str = TRAVELING,
        cavity_kind: str = TRAVELING,
        phi0: float = 0.0,
        phi1: float = 0.0,
    ) -> "MeasurementGeometry":
        """Geometry from |k|d and the beam angles θ₀, θ₁ to the chain axis."""
        k0z = kd * np.cos(theta0)
        k1z = kd * np.cos(theta1)
        k0z = 0.0 if abs(k0z) < _RESIDUE else float(k0z)
        k1z = 0.0 if abs(k1z) < _RESIDUE else float(k1z)
        return cls(L, probe_kind, cavity_kind, k0z, k1z, phi0, phi1)

    @classmethod
    def preset(cls, name: str, L: int) -> "MeasurementGeometry":
        """Named schemes: ``diffraction-minimum``, ``odd-sites``, ``period-3``."""
        if name == "diffraction-minimum":
            # probe perpendicular to the chain, cavity along it, |k|d = π
            g = cls.from_angles(L, np.pi, np.pi / 2, 0.0)
        elif name == "odd-sites":
            g = cls(L, STANDING, STANDING, np.pi / 2, np.pi / 2, np.pi / 2, np.pi / 2)
        elif name == "period-3":
            # cos²(πj/3) = [1, ¼, ¼, 1, ...]: sites 0, 3, 6, ... against the rest
            g = cls(L, STANDING, STANDING, np.pi / 3, np.pi / 3, 0.0, 0.0)
        else:
            raise ValueError(f"unknown geometry preset {name!r}; expected one of {PRESETS}")
        return cls(g.L, g.probe_kind, g.cavity_kind, g.k0z, g.k1z, g.phi0, g.phi1, name)

    def to_dict(self) -> dict:
        return {
            "L": self.L, "probe_kind": self.probe_kind, "cavity_kind": self.cavity_kind,
            "k0z": self.k0z, "k1z": self.k1z, "phi0": self.phi0, "phi1": self.phi1,
            "name": self.name,
        }


def traveling_partition(L: int, s: int, R: int) -> MeasurementGeometry:
    """Traveling-wave geometry with δ = 2πs/R, which splits the chain into R modes."""
    if R <= 0:
        raise ValueError("R must be positive")
    return MeasurementGeometry(L, TRAVELING, TRAVELING, 2.0 * np.pi * s / R, 0.0,
                               name=f"traveling-{s}/{R}")


def _mode_values(kind: str, kz: float, phi: float, x: np.ndarray, conjugate: bool) -> np.ndarray:
    if kind == TRAVELING:
        return np.exp((-1j if conjugate else 1j) * kz * x)
    return np.cos(kz * x + phi).astype(np.complex128)


def _profile_at(g: MeasurementGeometry, x: np.ndarray) -> np.ndarray:
    u0 = _mode_values(g.probe_kind, g.k0z, g.phi0, x, conjugate=False)
    u1_conj = _mode_values(g.cavity_kind, g.k1z, g.phi1, x, conjugate=True)
    return _clean(u0 * u1_conj)


def diffraction_profile(g: MeasurementGeometry) -> np.ndarray:
    """On-site coefficients J_jj, j = 0..L−1, as a complex array."""
    return _profile_at(g, np.arange(g.L, dtype=float))


def bond_profile(g: MeasurementGeometry, weight: float, closed: bool = False) -> np.ndarray:
    """Bond coefficients J_{j,j+1} = weight · u₀u₁* at the bond midpoints.

    *weight* stands in for the Wannier overlap between neighbouring sites.
    With ``closed=True`` the (L−1, 0) wrap bond is appended.
    """
    n_bonds = g.L if closed else g.L - 1
    midpoints = np.arange(n_bonds, dtype=float) + 0.5
    return _clean(weight * _profile_at(g, midpoints))


class Mode(NamedTuple):
    coefficient: complex
    sites: tuple[int, ...]


def mode_partition(profile: Sequence[complex], tol: float = 1e-9) -> list[Mode]:
    """Group sites with equal coefficient (|J_ii − J_jj| ≤ tol), in first-site order."""
    profile = np.asarray(profile, dtype=np.complex128)
    groups: list[tuple[complex, list[int]]] = []
    for site, value in enumerate(profile):
        for coefficient, members in groups:
            if abs(value - coefficient) <= tol:
                members.append(site)
                break
        else:
            groups.append((complex(value), [site]))
    return [Mode(coefficient, tuple(members)) for coefficient, members in groups]


def momentum_profile(profile: Sequence[complex]) -> tuple[np.ndarray, np.ndarray]:
    """(k, A_k) with A_k = (1/L) Σ_j A_j e^{ikj}, k = 2πm/L.

    With this normalization Σ_j A_j ρ̂_j = Σ_{k,p} A_p f†_k f_{k+p}.
    """
    profile = np.asarray(profile, dtype=np.complex128)
    L = len(profile)
    k = 2.0 * np.pi * np.arange(L) / L
    return k, _clean(np.fft.ifft(profile))


# ── Rayleigh coefficient ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class RayleighInputs:
    """Two-photon coupling U_σ, probe amplitude a₀, detuning Δp, cavity decay κ."""

    U_sigma: float
    a0: float
    delta_p: float
    kappa: float


class RayleighCoefficient(NamedTuple):
    C: complex
    gamma: float
    in_regime: bool


def rayleigh_coefficient(r: RayleighInputs) -> RayleighCoefficient:
    """C_σ = iU_σa₀/(iΔp − κ) and γ = κ|C_σ|².

    ``in_regime`` is False (and a warning is logged) unless κ ≫ Δp, taken
    here as |Δp| ≤ 0.1κ.
    """
    if not r.kappa > 0:
        raise ValueError(f"kappa must be positive, got {r.kappa}")
    C = 1j * r.U_sigma * r.a0 / (1j * r.delta_p - r.kappa)
    gamma = r.kappa * abs(C) ** 2
    in_regime = abs(r.delta_p) <= 0.1 * r.kappa
    if not in_regime:
        _log.warning("Rayleigh coefficient outside κ ≫ Δp regime: Δp=%g κ=%g",
                     r.delta_p, r.kappa)
    return RayleighCoefficient(complex(C), float(gamma), in_regime)


# ── Jump operators ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class JumpChannel:
    """Detected polarization and measurement strength γ (units of J)."""

    polarization: str
    gamma: float
    custom_profile: tuple[complex, ...] | None = None
    include_bonds: bool = False
    bond_weight: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.polarization not in POLARIZATIONS:
            raise ValueError(
                f"polarization must be one of {POLARIZATIONS}, got {self.polarization!r}"
            )
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.polarization == CUSTOM and self.custom_profile is None:
            raise ValueError("custom polarization needs a custom_profile")

    @property
    def amplitude(self) -> float:
        return float(np.sqrt(2.0 * self.gamma))

    def site_profile(self, profile: Sequence[complex]) -> np.ndarray:
        """Effective J_ii: the custom profile when given, else *profile*."""
        chosen = self.custom_profile if self.custom_profile is not None else profile
        return np.asarray(chosen, dtype=np.complex128)


def channel_terms(profile: Sequence[complex], polarization: str, sites=None) -> list:
    """Ladder terms of D̂ = Σ_i J_ii Ô_i, restricted to *sites* when given."""
    spins = _SITE_OPERATORS[polarization]
    profile = np.asarray(profile, dtype=np.complex128)
    sites = range(len(profile)) if sites is None else sites
    terms = []
    for i in sites:
        if profile[i] == 0:
            continue
        for spin, weight in spins:
            terms.append((weight * profile[i], n(i, spin)))
    return terms


def _check_profile(basis: FockBasis, profile: np.ndarray) -> None:
    if len(profile) != basis.L:
        raise ValueError(f"profile has {len(profile)} sites, basis has L={basis.L}")


def build_jump_operator(
    basis: FockBasis,
    profile: Sequence[complex],
    ch: JumpChannel,
    bonds: Sequence[complex] | None = None,
) -> SparseOperator:
    """ĉ = √(2γ)·(D̂_ch [+ B̂_ch]) on *basis*.

    Parameters
    ----------
    profile :
        On-site coefficients (ignored when the channel carries a custom profile).
    bonds :
        Bond coefficients, required when ``ch.include_bonds``.  The ↑ and ↓
        bond operators enter like the site operators of the polarization.
    """
    J = ch.site_profile(profile)
    _check_profile(basis, J)
    terms = channel_terms(J, ch.polarization)
    if ch.include_bonds:
        if bonds is None:
            raise ValueError("include_bonds needs a bond profile")
        for spin, weight in _SITE_OPERATORS[ch.polarization]:
            terms.extend((weight * coef, ladders) for coef, ladders in _bond_terms(basis.L, bonds, spin))
    amplitude = ch.amplitude
    op = build_operator(basis, [(amplitude * coef, ladders) for coef, ladders in terms],
                        label=ch.label or f"c[{ch.polarization}]")
    _log.debug("Jump operator %s  gamma=%g  nnz=%d", op.label, ch.gamma, op.nnz)
    return op


def build_local_jump_operators(
    basis: FockBasis,
    profile: Sequence[complex],
    ch: JumpChannel,
) -> list[SparseOperator]:
    """One channel per site with J_ii ≠ 0: ĉ_i = √(2γ) J_ii Ô_i."""
    J = ch.site_profile(profile)
    _check_profile(basis, J)
    amplitude = ch.amplitude
    ops = []
    for i in np.flatnonzero(J):
        terms = [(amplitude * coef, ladders) for coef, ladders in channel_terms(J, ch.polarization, [i])]
        ops.append(build_operator(basis, terms, label=f"c[{ch.polarization},{i}]"))
    return ops


def _bond_terms(L: int, bonds: Sequence[complex], spin: str) -> list:
    bonds = np.asarray(bonds, dtype=np.complex128)
    if len(bonds) == L - 1:
        pairs = [(i, i + 1) for i in range(L - 1)]
    elif len(bonds) == L and L > 2:
        pairs = [(i, (i + 1) % L) for i in range(L)]
    else:
        raise ValueError(f"bond profile has {len(bonds)} entries; chain of L={L} "
                         f"has {L - 1} open bonds ({L} closed)")
    terms = []
    for (i, j), coef in zip(pairs, bonds):
        if coef == 0:
            continue
        terms.append((coef, (cdag(j, spin), c(i, spin))))
        terms.append((np.conj(coef), (cdag(i, spin), c(j, spin))))
    return terms


def build_bond_operator(
    basis: FockBasis,
    bond_profile: Sequence[complex],
    spin: str,
) -> SparseOperator:
    """B̂_σ = Σ_b (J_b f†_{j,σ} f_{i,σ} + J_b* f†_{i,σ} f_{j,σ}) over bonds b = (i, j = i+1).

    A profile of length L−1 covers the open chain; length L adds the wrap bond.
    """
    return build_operator(basis, _bond_terms(basis.L, bond_profile, spin), label=f"B[{spin}]")


def build_momentum_jump_operator(
    basis: FockBasis,
    A_k: Sequence[complex],
    polarization: str = LINEAR_X,
) -> SparseOperator:
    """Σ_{k,p} A_p f†_k f_{k+p} per polarization spin, assembled through the
    plane-wave expansion f_k = L^{-1/2} Σ_j e^{−ikj} f_j (periodic k grid)."""
    A_k = np.asarray(A_k, dtype=np.complex128)
    L = basis.L
    if len(A_k) != L:
        raise ValueError(f"A_k has {len(A_k)} momenta, basis has L={L}")
    k = 2.0 * np.pi * np.arange(L) / L
    j = np.arange(L)
    # coefficient of f†_j f_l: (1/L) Σ_{k,p} A_p e^{ikj} e^{−i(k+p)l}
    phase_k = np.exp(1j * np.subtract.outer(j, j)[..., None] * k).sum(axis=-1) / L
    phase_p = np.exp(-1j * np.outer(j, k)) @ A_k
    coefficients = phase_k * phase_p[None, :]
    terms = []
    for spin, weight in _SITE_OPERATORS[polarization]:
        for a in range(L):
            for b in range(L):
                value = coefficients[a, b]
                if abs(value) > _RESIDUE:
                    terms.append((weight * value, (cdag(a, spin), c(b, spin))))
    return build_operator(basis, terms, label="c[k]")
