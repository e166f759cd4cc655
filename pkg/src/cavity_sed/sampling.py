"""Stochastic atomic-position realizations.

Every realization owns its own counter-based Philox stream keyed by the global
seed, with the realization index and a stream tag in the counter.  Realization
``k`` is therefore the same no matter how many workers share the ensemble or
in which order they run.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtri

from .model import LatticeConfig

__all__ = [
    "Sampler",
    "Realization",
    "RealizationBatch",
    "wannier_density",
    "realization_rng",
    "sample_mi",
    "sample_independent",
    "apply_site_mask",
    "draw",
    "draw_ensemble",
    "write_realizations_csv",
]

_TWO53 = float(2**53)


class Sampler(str, enum.Enum):
    """Quantum-phase dependent position statistics.

    ``BEC`` and ``CLASSICAL`` share the independent sampler; they are kept as
    separate labels for reporting.
    """

    MI = "mi"
    INDEPENDENT = "independent"
    BEC = "bec"
    CLASSICAL = "classical"

    @property
    def independent(self) -> bool:
        return self is not Sampler.MI

    @classmethod
    def parse(cls, label: "str | Sampler") -> "Sampler":
        if isinstance(label, cls):
            return label
        key = str(label).lower()
        if key in ("fermi", "fermi-dirac", "fermi_dirac", "metropolis"):
            raise ValueError(
                f"sampler {label!r} is not supported; use one of "
                + ", ".join(s.value for s in cls)
            )
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown sampler {label!r}; use one of " + ", ".join(s.value for s in cls)
            ) from None


@dataclass(frozen=True)
class Realization:
    """One draw of ``N`` atomic positions.

    Attributes
    ----------
    positions : ndarray, shape (N,)
        Atomic positions in wavelength units.
    site : ndarray of int, shape (N,)
        Index of the lattice site that generated each atom.
    coupled : ndarray of bool, shape (N,)
        Whether each atom interacts with the cavity mode.
    seed_tag : tuple of int
        ``(seed, stream, index)`` identifying the random stream.
    """

    positions: NDArray[np.float64]
    site: NDArray[np.int64]
    coupled: NDArray[np.bool_]
    seed_tag: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        site = np.asarray(self.site, dtype=np.int64)
        coupled = np.asarray(self.coupled, dtype=bool)
        if pos.ndim != 1 or site.shape != pos.shape or coupled.shape != pos.shape:
            raise ValueError("positions, site and coupled must be matching 1D arrays")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "site", site)
        object.__setattr__(self, "coupled", coupled)

    @classmethod
    def pinned(cls, positions: ArrayLike, coupled: ArrayLike | None = None) -> "Realization":
        """Fixed positions, all attributed to site 0 unless told otherwise."""
        pos = np.atleast_1d(np.asarray(positions, dtype=float))
        cpl = np.ones(pos.shape, bool) if coupled is None else np.asarray(coupled, bool)
        return cls(pos, np.zeros(pos.shape, np.int64), cpl)

    @property
    def n_atoms(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class RealizationBatch:
    """A block of realizations with equal atom number, stacked row-wise."""

    positions: NDArray[np.float64]  # (R, N)
    site: NDArray[np.int64]  # (R, N)
    coupled: NDArray[np.bool_]  # (R, N)
    indices: NDArray[np.int64]  # (R,)
    seed: int = 0
    stream: int = 0

    @property
    def n_realizations(self) -> int:
        return self.positions.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.n_realizations

    def __getitem__(self, k: int) -> Realization:
        return Realization(
            self.positions[k],
            self.site[k],
            self.coupled[k],
            (self.seed, self.stream, int(self.indices[k])),
        )

    @classmethod
    def from_realizations(cls, reals: Iterable[Realization]) -> "RealizationBatch":
        reals = list(reals)
        if not reals:
            raise ValueError("empty realization list")
        seed, stream, _ = reals[0].seed_tag
        return cls(
            np.stack([r.positions for r in reals]),
            np.stack([r.site for r in reals]),
            np.stack([r.coupled for r in reals]),
            np.array([r.seed_tag[2] for r in reals], dtype=np.int64),
            seed,
            stream,
        )


def wannier_density(center: float, width: float, x: ArrayLike) -> NDArray[np.float64]:
    """Gaussian on-site density ``exp(-(x - center)^2 / width^2) / (width sqrt(pi))``.

    Its standard deviation is ``width / sqrt(2)``.
    """
    if not width > 0:
        raise ValueError("width must be positive")
    x = np.asarray(x, dtype=float)
    return np.exp(-(((x - center) / width) ** 2)) / (width * np.sqrt(np.pi))


def realization_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for realization ``index`` of ``stream``."""
    if seed < 0 or index < 0 or stream < 0:
        raise ValueError("seed, index and stream must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, index, stream]))


def _open_uniform(rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    # 53-bit uniforms on the open interval (0, 1), so ndtri never sees 0 or 1
    return (rng.integers(0, 2**53, size=n, dtype=np.int64) + 0.5) / _TWO53


def _gaussian_positions(centers: NDArray, width: float, u: NDArray) -> NDArray[np.float64]:
    return centers + ndtri(u) * (width / np.sqrt(2.0))


def sample_mi(lattice: LatticeConfig, rng: np.random.Generator) -> Realization:
    """Mott-insulator draw: exactly ``n_i`` atoms on site ``i``, every time."""
    site = np.repeat(np.arange(lattice.n_sites), lattice.occupancy)
    centers = np.asarray(lattice.site_centers)[site]
    pos = _gaussian_positions(centers, lattice.wannier_width, _open_uniform(rng, site.size))
    return Realization(pos, site, np.asarray(lattice.coupled_mask, bool)[site])


def sample_independent(
    lattice: LatticeConfig, n_atoms: int, rng: np.random.Generator
) -> Realization:
    """Draw ``n_atoms`` positions independently from the total density.

    Site occupations are multinomial.  Atoms are returned ordered by site.
    The Gaussian uniforms are consumed before the site uniforms, so a
    single-site lattice reproduces :func:`sample_mi` draw for draw.
    """
    if n_atoms < 0:
        raise ValueError("n_atoms must be non-negative")
    u_pos = _open_uniform(rng, n_atoms)
    u_site = _open_uniform(rng, n_atoms)
    cdf = np.cumsum(lattice.site_weights)
    cdf[-1] = 1.0
    site = np.minimum(np.searchsorted(cdf, u_site, side="right"), lattice.n_sites - 1)
    order = np.argsort(site, kind="stable")
    site = site[order]
    centers = np.asarray(lattice.site_centers)[site]
    pos = _gaussian_positions(centers, lattice.wannier_width, u_pos)
    return Realization(pos, site, np.asarray(lattice.coupled_mask, bool)[site])


def apply_site_mask(realization: Realization, lattice: LatticeConfig) -> Realization:
    """Set each atom's coupling flag from the mask of the site that produced it."""
    mask = np.asarray(lattice.coupled_mask, bool)
    return replace(realization, coupled=mask[realization.site])


def draw(
    lattice: LatticeConfig,
    sampler: Sampler | str,
    seed: int,
    index: int,
    stream: int = 0,
    n_atoms: int | None = None,
) -> Realization:
    """Realization ``index`` of the given sampler, reproducible in isolation."""
    sampler = Sampler.parse(sampler) if isinstance(sampler, str) else sampler
    rng = realization_rng(seed, index, stream)
    if sampler.independent:
        real = sample_independent(lattice, lattice.n_atoms if n_atoms is None else n_atoms, rng)
    else:
        real = sample_mi(lattice, rng)
    return replace(real, seed_tag=(seed, stream, index))


def draw_ensemble(
    lattice: LatticeConfig,
    sampler: Sampler | str,
    seed: int,
    n_realizations: int,
    start: int = 0,
    stream: int = 0,
) -> RealizationBatch:
    """Realizations ``start, ..., start + n_realizations - 1`` stacked in a batch."""
    reals = [draw(lattice, sampler, seed, k, stream) for k in range(start, start + n_realizations)]
    return RealizationBatch.from_realizations(reals)


def write_realizations_csv(batch: RealizationBatch, path: str | Path) -> Path:
    """Dump a batch as ``realization, atom, x_over_lambda, site, coupled`` rows."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["realization", "atom", "x_over_lambda", "site", "coupled"])
        for r in range(batch.n_realizations):
            for j in range(batch.n_atoms):
                w.writerow(
                    [
                        int(batch.indices[r]),
                        j,
                        f"{batch.positions[r, j]:.15e}",
                        int(batch.site[r, j]),
                        int(batch.coupled[r, j]),
                    ]
                )
    return path
