"""Units, parameters and spatial profiles shared by every solver.

Internally the cavity field decay rate ``kappa`` sets the frequency scale and
the cavity wavelength sets the length scale.  Nothing in the solvers assumes
``kappa == 1``; the formulas carry ``kappa`` explicitly, but all configuration
helpers default to that convention.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "ModeKind",
    "SystemParams",
    "ConstantDetuning",
    "LinearDetuning",
    "StepDetuning",
    "TabulatedDetuning",
    "DetuningProfile",
    "PumpOff",
    "UniformPump",
    "RectWindowPump",
    "TabulatedPump",
    "TransversePump",
    "LatticeConfig",
    "reciprocal_kappa_bar",
    "free_field",
    "coupling_at",
    "detuning_at",
    "pump_at",
    "decay_unit",
]


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{name} must be finite, got {value!r}")


# ---------------------------------------------------------------------------
# spatial profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantDetuning:
    """Position independent atom-pump detuning ``delta0``."""

    delta0: float

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        return np.full(x.shape, float(self.delta0))

    def with_offset(self, delta0: float) -> "ConstantDetuning":
        return replace(self, delta0=delta0)


@dataclass(frozen=True)
class LinearDetuning:
    """Detuning gradient ``delta0 + delta1 * x / wavelength``."""

    delta0: float
    delta1: float
    wavelength: float = 1.0

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        return self.delta0 + self.delta1 * (x / self.wavelength)

    def with_offset(self, delta0: float) -> "LinearDetuning":
        return replace(self, delta0=delta0)


@dataclass(frozen=True)
class StepDetuning:
    """Heaviside step ``delta0 + step * theta(x - x0)`` with ``theta(0) = 1``."""

    delta0: float
    step: float
    x0: float = 0.0

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        return self.delta0 + self.step * (x >= self.x0)

    def with_offset(self, delta0: float) -> "StepDetuning":
        return replace(self, delta0=delta0)


@dataclass(frozen=True)
class TabulatedDetuning:
    """Linearly interpolated detuning samples plus a uniform offset.

    Queries outside ``[x[0], x[-1]]`` raise ``ValueError`` rather than
    extrapolating.
    """

    x: tuple[float, ...]
    values: tuple[float, ...]
    delta0: float = 0.0

    def __post_init__(self) -> None:
        xs = np.asarray(self.x, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or len(self.values) != xs.size:
            raise ValueError("tabulated detuning needs >= 2 matching samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated positions must be strictly increasing")

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        lo, hi = self.x[0], self.x[-1]
        if np.any((x < lo) | (x > hi)):
            raise ValueError(f"position outside tabulated range [{lo}, {hi}]")
        return self.delta0 + np.interp(x, self.x, self.values)

    def with_offset(self, delta0: float) -> "TabulatedDetuning":
        return replace(self, delta0=delta0)


DetuningProfile = Union[ConstantDetuning, LinearDetuning, StepDetuning, TabulatedDetuning]


@dataclass(frozen=True)
class PumpOff:
    """No transverse pump; evaluates to exactly zero."""

    def __call__(self, x: ArrayLike) -> NDArray[np.complex128]:
        return np.zeros(np.shape(x), dtype=complex)


@dataclass(frozen=True)
class UniformPump:
    """Transverse pump of constant complex amplitude."""

    amplitude: complex

    def __call__(self, x: ArrayLike) -> NDArray[np.complex128]:
        return np.full(np.shape(x), complex(self.amplitude))


@dataclass(frozen=True)
class RectWindowPump:
    """Transverse pump that is ``amplitude`` on ``[x_lo, x_hi]`` and zero elsewhere."""

    amplitude: complex
    x_lo: float
    x_hi: float

    def __post_init__(self) -> None:
        if not self.x_hi > self.x_lo:
            raise ValueError("rectangular window needs x_hi > x_lo")

    def __call__(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.asarray(x, dtype=float)
        inside = (x >= self.x_lo) & (x <= self.x_hi)
        return np.where(inside, complex(self.amplitude), 0j)


@dataclass(frozen=True)
class TabulatedPump:
    """Linearly interpolated complex pump samples (no extrapolation)."""

    x: tuple[float, ...]
    values: tuple[complex, ...]

    def __post_init__(self) -> None:
        xs = np.asarray(self.x, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or len(self.values) != xs.size:
            raise ValueError("tabulated pump needs >= 2 matching samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated positions must be strictly increasing")

    def __call__(self, x: ArrayLike) -> NDArray[np.complex128]:
        x = np.asarray(x, dtype=float)
        lo, hi = self.x[0], self.x[-1]
        if np.any((x < lo) | (x > hi)):
            raise ValueError(f"position outside tabulated range [{lo}, {hi}]")
        v = np.asarray(self.values, dtype=complex)
        return np.interp(x, self.x, v.real) + 1j * np.interp(x, self.x, v.imag)


TransversePump = Union[PumpOff, UniformPump, RectWindowPump, TabulatedPump]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ModeKind(str, enum.Enum):
    """Spatial structure of the cavity mode."""

    FABRY_PEROT = "fabry_perot"
    RING_PLUS = "ring_plus"
    RING_MINUS = "ring_minus"


@dataclass(frozen=True)
class SystemParams:
    """Cavity, pump and coupling parameters.

    Parameters
    ----------
    kappa : float
        Cavity field decay rate, the frequency unit.
    delta_c : float
        Cavity-pump detuning (pump minus cavity frequency).
    eta : float
        Axial pump strength.
    coupling_amp : float
        Peak atom-cavity coupling with the dipole element absorbed.
    mode_kind : ModeKind
        Standing wave or one of the two running waves.
    wavelength : float
        Cavity wavelength, the length unit.
    recoil_unit : float
        Recoil frequency in units of ``kappa`` (``1/342`` for the default
        figure parameters).  Only used for unit conversion.
    detuning : DetuningProfile
        Atom-pump detuning as a function of position.
    pump : TransversePump
        Transverse pump profile (dipole element absorbed).
    pump_masked_atoms : bool
        Whether atoms on sites masked from the cavity still feel the
        transverse pump.
    """

    kappa: float = 1.0
    delta_c: float = 0.0
    eta: float = 0.0
    coupling_amp: float = 1.0
    mode_kind: ModeKind = ModeKind.FABRY_PEROT
    wavelength: float = 1.0
    recoil_unit: float = 1.0 / 342.0
    detuning: DetuningProfile = field(default_factory=lambda: ConstantDetuning(0.0))
    pump: TransversePump = field(default_factory=PumpOff)
    pump_masked_atoms: bool = True

    def __post_init__(self) -> None:
        _check_finite(
            kappa=self.kappa,
            delta_c=self.delta_c,
            eta=self.eta,
            coupling_amp=self.coupling_amp,
            wavelength=self.wavelength,
            recoil_unit=self.recoil_unit,
        )
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.coupling_amp < 0:
            raise ValueError("coupling_amp must be non-negative")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        object.__setattr__(self, "mode_kind", ModeKind(self.mode_kind))

    def with_(self, **changes) -> "SystemParams":
        """Return a copy with some fields replaced."""
        return replace(self, **changes)

    @cached_property
    def inv_kappa_bar(self) -> complex:
        return reciprocal_kappa_bar(self.kappa, self.delta_c)

    @cached_property
    def a_free(self) -> complex:
        return free_field(self.eta, self.kappa, self.delta_c)

    @property
    def gamma_unit(self) -> float:
        return decay_unit(self)


def reciprocal_kappa_bar(kappa: float, delta_c: float) -> complex:
    """Complex cavity response ``1/kappa_bar = (kappa + i delta_c)/(kappa^2 + delta_c^2)``.

    Examples
    --------
    >>> reciprocal_kappa_bar(1.0, 1.0)
    (0.5+0.5j)
    """
    _check_finite(kappa=kappa, delta_c=delta_c)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return complex(kappa, delta_c) / (kappa * kappa + delta_c * delta_c)


def free_field(eta: float, kappa: float, delta_c: float) -> complex:
    """Empty-cavity amplitude ``a_F = i eta / kappa_bar``."""
    _check_finite(eta=eta)
    return 1j * eta * reciprocal_kappa_bar(kappa, delta_c)


def coupling_at(x: ArrayLike, params: SystemParams) -> NDArray[np.complex128]:
    """Cavity mode coupling at position(s) ``x``."""
    phase = 2.0 * np.pi * np.asarray(x, dtype=float) / params.wavelength
    g0 = params.coupling_amp
    if params.mode_kind is ModeKind.FABRY_PEROT:
        return (g0 * np.sin(phase)).astype(complex)
    sign = 1.0 if params.mode_kind is ModeKind.RING_PLUS else -1.0
    return g0 * np.exp(sign * 1j * phase)


def detuning_at(x: ArrayLike, profile: DetuningProfile) -> NDArray[np.float64]:
    """Evaluate a detuning profile."""
    return profile(x)


def pump_at(x: ArrayLike, pump: TransversePump) -> NDArray[np.complex128]:
    """Evaluate a transverse pump profile."""
    return pump(x)


def decay_unit(params: SystemParams) -> float:
    """Peak single-atom cavity-enhanced emission rate ``G0^2 Re[1/kappa_bar]``."""
    return params.coupling_amp**2 * params.inv_kappa_bar.real


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeConfig:
    """Lattice sites, their Gaussian on-site orbitals and the cavity mask.

    Parameters
    ----------
    site_centers : tuple of float
        Site positions.
    wannier_width : float
        Confinement length ``L_x``; the on-site density is
        ``exp(-(x - l_i)^2 / L_x^2)`` normalised to one.
    occupancy : tuple of int
        Atoms per site.  Their sum is the atom number.
    coupled_mask : tuple of bool
        ``True`` for sites that interact with the cavity mode.
    """

    site_centers: tuple[float, ...]
    wannier_width: float
    occupancy: tuple[int, ...]
    coupled_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        n = len(self.site_centers)
        if n == 0:
            raise ValueError("lattice needs at least one site")
        if len(self.occupancy) != n or len(self.coupled_mask) != n:
            raise ValueError("occupancy and coupled_mask must match site_centers")
        if not self.wannier_width > 0:
            raise ValueError("wannier_width must be positive")
        if any(int(k) != k or k < 0 for k in self.occupancy):
            raise ValueError("occupancies must be non-negative integers")
        _check_finite(site_centers=np.asarray(self.site_centers, dtype=float))
        object.__setattr__(self, "site_centers", tuple(float(c) for c in self.site_centers))
        object.__setattr__(self, "occupancy", tuple(int(k) for k in self.occupancy))
        object.__setattr__(self, "coupled_mask", tuple(bool(c) for c in self.coupled_mask))

    @classmethod
    def regular(
        cls,
        n_sites: int,
        wannier_width: float,
        spacing: float = 0.5,
        occupancy: int = 1,
        coupled_mask: tuple[bool, ...] | None = None,
        center: float = 0.0,
    ) -> "LatticeConfig":
        """Equally spaced sites placed symmetrically about ``center``.

        With the default half-wavelength spacing and ``center = 0`` the sites
        sit on antinodes of the standing-wave mode.
        """
        offsets = (np.arange(n_sites) - 0.5 * (n_sites - 1)) * spacing
        mask = (True,) * n_sites if coupled_mask is None else tuple(coupled_mask)
        return cls(
            site_centers=tuple(center + offsets),
            wannier_width=wannier_width,
            occupancy=(occupancy,) * n_sites,
            coupled_mask=mask,
        )

    @property
    def n_sites(self) -> int:
        return len(self.site_centers)

    @property
    def n_atoms(self) -> int:
        return int(sum(self.occupancy))

    @property
    def site_weights(self) -> NDArray[np.float64]:
        occ = np.asarray(self.occupancy, dtype=float)
        return occ / occ.sum()

    def site_density(self, site: int, x: ArrayLike) -> NDArray[np.float64]:
        """Normalised on-site density of one site."""
        from .sampling import wannier_density

        return wannier_density(self.site_centers[site], self.wannier_width, x)

    def density(self, x: ArrayLike) -> NDArray[np.float64]:
        """Per-atom density ``sum_i n_i |phi_i(x)|^2 / N`` (unit integral)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for i, w in enumerate(self.site_weights):
            if w > 0:
                out += w * self.site_density(i, x)
        return out
