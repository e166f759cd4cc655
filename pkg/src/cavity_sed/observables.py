"""Ensemble observables: frequency sweeps, intensities, profiles and baselines.

A sweep solves every realization of an ensemble at every sweep value, reusing
the same realizations at each point (common random numbers), and reduces the
cavity amplitudes to

* coherent intensity ``|E[a]|^2``;
* total intensity ``E[|a|^2]``;
* incoherent intensity ``total - coherent``;
* mean saturation ``E[sum_j rho_ee_j] / N``.

Per-chunk sufficient statistics are summed in chunk order, so results do not
depend on the number of worker processes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate

from .dynamics import (
    AtomFields,
    atom_fields,
    build_linear_system,
    solve_low_intensity_batch,
    steady_state_saturated_batch,
)
from .experiment import Experiment, map_chunks
from .model import LatticeConfig, PumpOff, SystemParams, coupling_at
from .modes import ensemble_modes, mode_overlap
from .sampling import Sampler
from .tables import write_csv

__all__ = [
    "SweepVariable",
    "IntensityMode",
    "SweepSpec",
    "SpectrumTable",
    "sweep_spectrum",
    "TargetingResult",
    "transverse_targeting",
    "PolarizationProfile",
    "polarization_profile",
    "effective_atom_number",
    "neff_baseline",
    "ShiftEstimate",
    "superradiant_shift_estimate",
    "Peak",
    "find_peaks",
    "CombResult",
    "comb_experiment",
    "SPECTRUM_COLUMNS",
]

SPECTRUM_COLUMNS = (
    "sweep_value",
    "coherent",
    "total",
    "incoherent",
    "saturation",
    "se_coherent",
    "se_total",
    "n_eff_realizations",
    "masked",
)


class SweepVariable(str, enum.Enum):
    """Quantity varied along a sweep.

    ``ATOM_DETUNING`` sets the uniform part of the pump-atom detuning; with a
    linked cavity-atom detuning the pump-cavity detuning follows as
    ``delta_c = delta0 - delta_ca``.  ``CAVITY_DETUNING`` sets ``delta_c``
    (and, if linked, ``delta0 = delta_ca + delta_c``).
    ``TRANSVERSE_FREQUENCY`` is the atom-detuning sweep for a system driven
    only by the transverse pump.  ``ETA`` scans the axial drive strength.
    """

    ATOM_DETUNING = "atom_detuning"
    CAVITY_DETUNING = "cavity_detuning"
    TRANSVERSE_FREQUENCY = "transverse_frequency"
    ETA = "eta"


class IntensityMode(str, enum.Enum):
    LOW_INTENSITY = "low_intensity"
    SATURATED = "saturated"


@dataclass(frozen=True)
class SweepSpec:
    """A one-dimensional parameter sweep.

    Parameters
    ----------
    variable : SweepVariable or str
    start, stop : float
        Range in units of ``kappa`` (inclusive).
    n_points : int
        At least 2.
    intensity : IntensityMode or str
    delta_ca : float or None
        Fixed cavity-atom detuning linking ``delta_c`` to ``delta0``.
    n_realizations : int or None
        Overrides the experiment's ensemble size when given.
    """

    variable: SweepVariable
    start: float
    stop: float
    n_points: int
    intensity: IntensityMode = IntensityMode.LOW_INTENSITY
    delta_ca: float | None = None
    n_realizations: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variable", SweepVariable(self.variable))
        object.__setattr__(self, "intensity", IntensityMode(self.intensity))
        if not (np.isfinite(self.start) and np.isfinite(self.stop)):
            raise ValueError("sweep range must be finite")
        if self.n_points < 2:
            raise ValueError("a sweep needs at least 2 points")
        if self.delta_ca is not None and not np.isfinite(self.delta_ca):
            raise ValueError("delta_ca must be finite")
        if self.variable is SweepVariable.ETA and self.delta_ca is not None:
            raise ValueError("delta_ca has no meaning for a drive-strength sweep")

    @property
    def values(self) -> NDArray[np.float64]:
        return np.linspace(self.start, self.stop, self.n_points)

    def params_at(self, base: SystemParams, value: float) -> SystemParams:
        """System parameters at one sweep value."""
        v = float(value)
        if self.variable in (SweepVariable.ATOM_DETUNING, SweepVariable.TRANSVERSE_FREQUENCY):
            det = base.detuning.with_offset(v)
            if self.delta_ca is None:
                return base.with_(detuning=det)
            return base.with_(detuning=det, delta_c=v - self.delta_ca)
        if self.variable is SweepVariable.CAVITY_DETUNING:
            if self.delta_ca is None:
                return base.with_(delta_c=v)
            return base.with_(delta_c=v, detuning=base.detuning.with_offset(self.delta_ca + v))
        return base.with_(eta=v)


@dataclass
class SpectrumTable:
    """Ensemble intensities along a sweep.

    All arrays have one entry per sweep value.  ``mean_amplitude`` is
    ``E[a]``.  ``masked`` marks points where at least one realization had no
    valid solution; such realizations are excluded and ``n_eff_realizations``
    counts the rest.
    """

    sweep_value: NDArray[np.float64]
    coherent: NDArray[np.float64]
    total: NDArray[np.float64]
    saturation: NDArray[np.float64]
    se_coherent: NDArray[np.float64]
    se_total: NDArray[np.float64]
    se_saturation: NDArray[np.float64]
    n_eff_realizations: NDArray[np.int64]
    masked: NDArray[np.bool_]
    mean_amplitude: NDArray[np.complex128]

    @property
    def incoherent(self) -> NDArray[np.float64]:
        return self.total - self.coherent

    def __len__(self) -> int:
        return len(self.sweep_value)

    def scaled(self, factor: float) -> "SpectrumTable":
        """Intensities multiplied by ``factor`` (amplitudes by its square root)."""
        r = np.sqrt(factor)
        return replace(
            self,
            coherent=self.coherent * factor,
            total=self.total * factor,
            se_coherent=self.se_coherent * factor,
            se_total=self.se_total * factor,
            mean_amplitude=self.mean_amplitude * r,
        )

    def rows(self):
        for i in range(len(self)):
            yield (
                self.sweep_value[i],
                self.coherent[i],
                self.total[i],
                self.incoherent[i],
                self.saturation[i],
                self.se_coherent[i],
                self.se_total[i],
                int(self.n_eff_realizations[i]),
                bool(self.masked[i]),
            )

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, SPECTRUM_COLUMNS, self.rows())


# ---------------------------------------------------------------------------
# per-realization solve and sufficient statistics
# ---------------------------------------------------------------------------


def _solve_fields(
    f: AtomFields, params: SystemParams, intensity: IntensityMode
) -> tuple[NDArray[np.complex128], NDArray[np.float64], NDArray[np.bool_]]:
    """Coherences, excited populations and validity for a batch of fields."""
    if intensity is IntensityMode.LOW_INTENSITY:
        s, ok = solve_low_intensity_batch(build_linear_system(f, params))
        # leading-order excited population of a weakly driven two-level atom
        return s, np.abs(s) ** 2, ok
    state, ok = steady_state_saturated_batch(f, params)
    return state.rho_ge, state.rho_ee, ok


def _amplitude(f: AtomFields, s: NDArray, params: SystemParams) -> NDArray[np.complex128]:
    return params.a_free + 1j * params.inv_kappa_bar * np.sum(np.conj(f.G) * s, axis=-1)


_STAT_KEYS = ("n", "a", "rr", "ii", "ri", "a2", "a4", "sat", "sat2", "masked")


def _empty_stats(n_points: int) -> dict:
    st = {k: np.zeros(n_points) for k in _STAT_KEYS}
    st["a"] = np.zeros(n_points, complex)
    st["masked"] = np.zeros(n_points, bool)
    return st


def _accumulate(st: dict, i: int, a: NDArray, sat: NDArray, ok: NDArray) -> None:
    a, sat = a[ok], sat[ok]
    st["n"][i] += a.size
    st["a"][i] += a.sum()
    st["rr"][i] += np.sum(a.real**2)
    st["ii"][i] += np.sum(a.imag**2)
    st["ri"][i] += np.sum(a.real * a.imag)
    p = np.abs(a) ** 2
    st["a2"][i] += p.sum()
    st["a4"][i] += np.sum(p**2)
    st["sat"][i] += sat.sum()
    st["sat2"][i] += np.sum(sat**2)
    st["masked"][i] |= bool(np.any(~ok))


def _merge(parts: Sequence[dict]) -> dict:
    out = _empty_stats(len(parts[0]["n"]))
    for p in parts:
        for k in _STAT_KEYS:
            if k == "masked":
                out[k] |= p[k]
            else:
                out[k] += p[k]
    return out


def _table_from_stats(values: NDArray, st: dict) -> SpectrumTable:
    n = st["n"]
    with np.errstate(invalid="ignore", divide="ignore"):
        m = st["a"] / n
        vr = np.maximum(st["rr"] / n - m.real**2, 0.0)
        vi = np.maximum(st["ii"] / n - m.imag**2, 0.0)
        cri = st["ri"] / n - m.real * m.imag
        coh = np.abs(m) ** 2
        var_coh = 4 * (m.real**2 * vr + m.imag**2 * vi + 2 * m.real * m.imag * cri)
        tot = st["a2"] / n
        var_tot = np.maximum(st["a4"] / n - tot**2, 0.0)
        sat = st["sat"] / n
        var_sat = np.maximum(st["sat2"] / n - sat**2, 0.0)
        dof = np.maximum(n - 1, 1)
        se_coh = np.sqrt(np.maximum(var_coh, 0.0) / dof)
        se_tot = np.sqrt(var_tot / dof)
        se_sat = np.sqrt(var_sat / dof)
    return SpectrumTable(
        sweep_value=np.asarray(values, float),
        coherent=coh,
        total=tot,
        saturation=sat,
        se_coherent=se_coh,
        se_total=se_tot,
        se_saturation=se_sat,
        n_eff_realizations=n.astype(np.int64),
        masked=st["masked"].copy(),
        mean_amplitude=m,
    )


def _sweep_chunk(exp: Experiment, start: int, count: int) -> dict:
    spec: SweepSpec = exp.extras["sweep"]
    n_sites = exp.extras.get("site_resolved")
    batch = exp.batch(start, count)
    values = spec.values
    st = _empty_stats(len(values))
    if n_sites:
        st["site_P"] = np.zeros((len(values), n_sites), complex)
    N = batch.n_atoms
    for i, v in enumerate(values):
        p = spec.params_at(exp.params, v)
        f = atom_fields(batch, p)
        s, ee, ok = _solve_fields(f, p, spec.intensity)
        a = _amplitude(f, np.where(ok[:, None], s, 0), p)
        _accumulate(st, i, a, ee.sum(axis=-1) / N, ok)
        if n_sites:
            rows = np.repeat(np.arange(count), N)
            P = np.zeros((count, n_sites), complex)
            np.add.at(P, (rows, batch.site.ravel()), np.where(ok[:, None], s, 0).ravel())
            st["site_P"][i] += P.sum(axis=0)
    return st


def _run_sweep(spec: SweepSpec, exp: Experiment, site_resolved: int | None = None) -> tuple[SpectrumTable, dict]:
    if spec.n_realizations is not None:
        exp = exp.with_(n_realizations=spec.n_realizations)
    extras = dict(exp.extras, sweep=spec, site_resolved=site_resolved)
    exp = exp.with_(extras=extras)
    parts = map_chunks(_sweep_chunk, exp)
    st = _merge(parts)
    if site_resolved:
        st["site_P"] = sum(p["site_P"] for p in parts)
    return _table_from_stats(spec.values, st), st


def sweep_spectrum(spec: SweepSpec, exp: Experiment) -> SpectrumTable:
    """Coherent and total cavity intensity along ``spec``.

    Every sweep value reuses the same realizations, so the spectrum is a
    smooth function of the swept variable.  Realizations without a valid
    solution at a point (near a resonance pole, or no physical saturated
    steady state) are excluded there and the point is flagged ``masked``.
    """
    return _run_sweep(spec, exp)[0]


# ---------------------------------------------------------------------------
# transverse targeting
# ---------------------------------------------------------------------------


@dataclass
class TargetingResult:
    """Spectrum and mode overlaps for a transverse-pump sweep.

    ``theta`` maps a mode label to the overlap ``Theta`` of the site-resolved
    mean polarization with that mode's averaged profile at every sweep
    value.  Labels are ``"superradiant"`` and ``"subradiant_<rank>"`` with
    ranks ordered by ascending frequency.
    """

    spectrum: SpectrumTable
    theta: dict[str, NDArray[np.float64]]
    site_polarization: NDArray[np.complex128]
    profiles: dict[str, NDArray[np.complex128]]

    def theta_rows(self):
        keys = list(self.theta)
        for i, v in enumerate(self.spectrum.sweep_value):
            yield (v, *[self.theta[k][i] for k in keys])

    def theta_to_csv(self, path: str | Path) -> Path:
        return write_csv(path, ["sweep_value", *[f"theta_{k}" for k in self.theta]], self.theta_rows())


def _mode_profiles(exp: Experiment) -> dict[str, NDArray[np.complex128]]:
    modes = ensemble_modes(exp)
    if np.any(modes.superradiant < 0):
        raise ValueError("mode profiles need at least one coupled atom in every realization")
    n_sites = len(exp.lattice.site_centers)
    out = {"superradiant": modes.mode_profile(modes.superradiant, n_sites)}
    _, _, cols = modes.subradiant_modes()
    for r in range(cols.shape[1]):
        out[f"subradiant_{r}"] = modes.mode_profile(cols[:, r], n_sites)
    return out


def transverse_targeting(exp: Experiment, spec: SweepSpec, pump=None) -> TargetingResult:
    """Sweep with only a transverse pump and record overlaps with mode profiles.

    Parameters
    ----------
    exp : Experiment
        Its parameters must have ``eta == 0``.  Mode profiles are the
        ensemble-averaged, site-resolved eigenvectors of the low-intensity
        matrix at ``exp.params``.
    spec : SweepSpec
    pump : TransversePump, optional
        Replaces ``exp.params.pump`` when given.
    """
    if pump is not None:
        exp = exp.with_(params=exp.params.with_(pump=pump))
    if exp.params.eta != 0:
        raise ValueError("transverse targeting requires eta = 0")
    profiles = _mode_profiles(exp.with_(n_realizations=spec.n_realizations or exp.n_realizations))
    n_sites = len(exp.lattice.site_centers)
    table, st = _run_sweep(spec, exp, site_resolved=n_sites)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = st["site_P"] / st["n"][:, None]
    theta = {}
    for name, prof in profiles.items():
        th = np.full(len(table), np.nan)
        for i in range(len(table)):
            if np.all(np.isfinite(P[i])) and np.linalg.norm(P[i]) > 0:
                th[i] = mode_overlap(P[i], prof)
        theta[name] = th
    return TargetingResult(table, theta, P, profiles)


# ---------------------------------------------------------------------------
# polarization density
# ---------------------------------------------------------------------------


@dataclass
class PolarizationProfile:
    """Binned ensemble-mean polarization density.

    ``density`` is ``NaN`` in bins that no atom visited.
    """

    x: NDArray[np.float64]
    density: NDArray[np.complex128]
    counts: NDArray[np.int64]
    bin_width: float

    def rows(self):
        for x, p, c in zip(self.x, self.density, self.counts):
            yield (x, p.real, p.imag, int(c))

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, ["x_over_lambda", "re_P", "im_P", "count"], self.rows())


def _profile_chunk(exp: Experiment, start: int, count: int) -> dict:
    edges = exp.extras["edges"]
    intensity = exp.extras["intensity"]
    batch = exp.batch(start, count)
    f = atom_fields(batch, exp.params)
    s, _, ok = _solve_fields(f, exp.params, intensity)
    x = batch.positions[ok].ravel()
    s = s[ok].ravel()
    idx = np.digitize(x, edges) - 1
    inside = (idx >= 0) & (idx < len(edges) - 1)
    nb = len(edges) - 1
    sums = np.zeros(nb, complex)
    np.add.at(sums, idx[inside], s[inside])
    counts = np.bincount(idx[inside], minlength=nb)
    return dict(sums=sums, counts=counts, n=int(ok.sum()))


def polarization_profile(
    exp: Experiment,
    value: float | None = None,
    spec: SweepSpec | None = None,
    bin_width: float = 1 / 200,
    window: tuple[float, float] | None = None,
) -> PolarizationProfile:
    """Ensemble mean of the atomic coherences deposited at sampled positions.

    Parameters
    ----------
    exp : Experiment
    value : float, optional
        Sweep value at which to evaluate; requires ``spec``.
    spec : SweepSpec, optional
        Supplies the parameter mapping and intensity mode.
    bin_width : float
        In units of the wavelength.
    window : (float, float), optional
        Binning range; defaults to the lattice extent padded by five Wannier
        widths.
    """
    params = exp.params
    intensity = IntensityMode.LOW_INTENSITY
    if spec is not None:
        intensity = spec.intensity
        if value is not None:
            params = spec.params_at(params, value)
    elif value is not None:
        raise ValueError("a sweep value needs a SweepSpec")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    lat = exp.lattice
    if window is None:
        pad = 5 * lat.wannier_width + bin_width
        window = (float(np.min(lat.site_centers)) - pad, float(np.max(lat.site_centers)) + pad)
    nb = int(np.ceil((window[1] - window[0]) / bin_width))
    edges = window[0] + bin_width * np.arange(nb + 1)
    e = exp.with_(params=params, extras=dict(exp.extras, edges=edges, intensity=intensity))
    parts = map_chunks(_profile_chunk, e)
    sums = sum(p["sums"] for p in parts)
    counts = sum(p["counts"] for p in parts)
    n = sum(p["n"] for p in parts)
    dens = np.where(counts > 0, sums / (max(n, 1) * bin_width), np.nan + 0j)
    return PolarizationProfile(0.5 * (edges[1:] + edges[:-1]), dens, counts, bin_width)


# ---------------------------------------------------------------------------
# simplified baselines
# ---------------------------------------------------------------------------


def _site_integral(lattice: LatticeConfig, func, coupled_only: bool = True) -> complex:
    """``sum_sites n_s * integral func(x) rho_s(x) dx`` over normalized on-site densities."""
    L = lattice.wannier_width
    w = np.asarray(lattice.occupancy, float)
    if coupled_only:
        w = w * np.asarray(lattice.coupled_mask, float)
    total = 0j
    for i, (c, ws) in enumerate(zip(lattice.site_centers, w)):
        if ws == 0:
            continue

        def integrand(x, part, i=i):
            val = func(np.array([x]))[0] * lattice.site_density(i, x)
            return val.real if part == 0 else val.imag

        lo, hi = c - 10 * L, c + 10 * L
        re = integrate.quad(integrand, lo, hi, args=(0,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        im = integrate.quad(integrand, lo, hi, args=(1,), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        total += ws * complex(re, im)
    return total


def effective_atom_number(lattice: LatticeConfig, params: SystemParams) -> complex:
    """``N_eff = integral g^2(x) rho_1(x) dx / g0^2`` over coupled sites.

    ``rho_1`` is the total one-body density (integrating to the atom count).
    The integrand is ``g^2`` rather than ``|g|^2``; the two coincide for
    standing-wave modes and differ for running-wave modes.
    """
    g0 = params.coupling_amp
    return _site_integral(lattice, lambda x: coupling_at(x, params) ** 2) / g0**2


def _mean_detuning(lattice: LatticeConfig, params: SystemParams) -> float:
    n = _site_integral(lattice, lambda x: np.ones_like(x, dtype=complex)).real
    if n == 0:
        return float(params.detuning(np.zeros(1))[0])
    return _site_integral(lattice, lambda x: params.detuning(x).astype(complex)).real / n


def neff_baseline(exp: Experiment, spec: SweepSpec) -> SpectrumTable:
    """Spectrum of a single atom with coupling ``g0 sqrt(N_eff)``.

    The atom sees the density-weighted mean detuning of the coupled atoms.
    Only an axial drive is supported.  The ``saturation`` column is the
    effective atom's excited population divided by the atom count, which in
    the low-intensity limit equals the mean excited population per atom.
    """
    if not isinstance(exp.params.pump, PumpOff):
        raise ValueError("the effective single-atom baseline needs a purely axial drive")
    lattice = exp.lattice
    N = lattice.n_atoms
    values = spec.values
    st = _empty_stats(len(values))
    for i, v in enumerate(values):
        p = spec.params_at(exp.params, v)
        neff = effective_atom_number(lattice, p)
        G = np.array([[p.coupling_amp * np.sqrt(neff)]])
        D = np.array([[_mean_detuning(lattice, p)]])
        f = AtomFields(G, D, np.zeros((1, 1), complex))
        s, ee, ok = _solve_fields(f, p, spec.intensity)
        a = _amplitude(f, np.where(ok[:, None], s, 0), p)
        _accumulate(st, i, a, ee.sum(axis=-1) / N, ok)
    return _table_from_stats(values, st)


@dataclass(frozen=True)
class ShiftEstimate:
    """Collective frequency shift estimates in units of ``kappa``.

    ``averaged`` uses the density-averaged ``g^2``; ``peak`` uses ``g0^2``.
    """

    averaged: float
    peak: float


def superradiant_shift_estimate(exp: Experiment, delta_ca: float | None = None, n_iter: int = 50) -> ShiftEstimate:
    """Estimates ``N Im[g2 / kappa_bar]`` of the superradiant resonance.

    With ``delta_ca`` given, ``delta_c`` follows the estimated resonance
    (``delta_c = delta0 - delta_ca``) and the estimate is iterated to self
    consistency.
    """
    lattice = exp.lattice
    N = lattice.n_atoms
    base = exp.params

    def solve(g2: complex) -> float:
        d0 = 0.0
        p = base
        for _ in range(n_iter if delta_ca is not None else 1):
            if delta_ca is not None:
                p = base.with_(delta_c=d0 - delta_ca)
            new = float(N * np.imag(g2 * p.inv_kappa_bar))
            if abs(new - d0) <= 1e-15 * max(1.0, abs(new)):
                d0 = new
                break
            d0 = new
        return d0

    g2_av = _site_integral(lattice, lambda x: coupling_at(x, base) ** 2, coupled_only=True) / N
    return ShiftEstimate(averaged=solve(g2_av), peak=solve(base.coupling_amp**2))


# ---------------------------------------------------------------------------
# peak finding and the comb experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Peak:
    position: float
    height: float
    width: float


def _half_crossing(x: NDArray, y: NDArray, i: int, half: float, step: int) -> float:
    j = i
    while 0 <= j + step < len(y) and y[j + step] > half:
        j += step
    k = j + step
    if not 0 <= k < len(y):
        return np.nan
    return float(np.interp(half, [y[k], y[j]], [x[k], x[j]]))


def find_peaks(x: ArrayLike, y: ArrayLike, threshold: float = 5.0) -> list[Peak]:
    """Local maxima above ``threshold`` times the median of ``y``.

    Positions and heights come from a parabola through the maximum and its
    two neighbours; widths are full widths at half maximum by linear
    interpolation (``NaN`` if a half-maximum crossing lies outside the data).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    good = np.isfinite(y)
    x, y = x[good], y[good]
    base = threshold * np.median(y)
    peaks = []
    for i in range(1, len(y) - 1):
        if not (y[i] > y[i - 1] and y[i] >= y[i + 1] and y[i] > base):
            continue
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        h = x[i + 1] - x[i]
        pos = x[i] + off * h
        height = y1 - 0.25 * (y0 - y2) * off
        half = 0.5 * height
        lo = _half_crossing(x, y, i, half, -1)
        hi = _half_crossing(x, y, i, half, +1)
        peaks.append(Peak(float(pos), float(height), float(hi - lo)))
    return peaks


@dataclass
class CombResult:
    """Spectra for correlated (MI) and independent site filling.

    Intensities are in units of ``eta^2 / kappa^2``; peaks refer to the total
    intensity.
    """

    mi: SpectrumTable
    independent: SpectrumTable
    mi_peaks: list[Peak]
    independent_peaks: list[Peak]

    def peak_rows(self):
        for label, peaks in (("mi", self.mi_peaks), ("independent", self.independent_peaks)):
            for k, p in enumerate(peaks):
                yield (label, k, p.position, p.height, p.width)

    def peaks_to_csv(self, path: str | Path) -> Path:
        return write_csv(path, ["sampler", "index", "position", "height", "width"], self.peak_rows())


def comb_experiment(exp: Experiment, spec: SweepSpec, threshold: float = 5.0) -> CombResult:
    """Run ``spec`` with MI and independent site filling at identical seeds."""
    eta = exp.params.eta
    if spec.variable is SweepVariable.ETA or eta == 0:
        raise ValueError("the comb experiment needs a fixed nonzero axial drive")
    scale = exp.params.kappa**2 / eta**2
    mi = sweep_spectrum(spec, exp.with_(sampler=Sampler.MI)).scaled(scale)
    ind = sweep_spectrum(spec, exp.with_(sampler=Sampler.INDEPENDENT)).scaled(scale)
    return CombResult(
        mi, ind, find_peaks(mi.sweep_value, mi.total, threshold), find_peaks(ind.sweep_value, ind.total, threshold)
    )
