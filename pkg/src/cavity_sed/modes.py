"""Collective eigenmodes, dressed cavity-atom modes and steady-state Jacobians."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import (
    AtomFields,
    AtomState,
    Positions,
    atom_fields,
    build_linear_system,
    saturated_jacobian,
    saturated_rhs,
    _rate_scale,
)
from .errors import SolverError
from .experiment import Experiment, map_chunks
from .model import SystemParams, decay_unit

__all__ = [
    "ModeSet",
    "ModeEnsemble",
    "eigenmodes",
    "eigenmodes_batch",
    "fix_phase",
    "cavity_overlap",
    "classify_modes",
    "dressed_matrix",
    "dressed_scan",
    "jacobian",
    "mode_overlap",
    "ensemble_modes",
    "ensemble_mode_histogram",
    "distribution_peak",
    "SUPERRADIANT",
    "SUBRADIANT",
]

SUPERRADIANT = "superradiant"
SUBRADIANT = "subradiant"


@dataclass(frozen=True)
class ModeSet:
    """Eigen-decomposition of a response matrix.

    Modes are ordered by ascending frequency.  ``vectors[:, i]`` belongs to
    ``eigenvalues[i]``.
    """

    eigenvalues: NDArray[np.complex128]
    vectors: NDArray[np.complex128]
    cavity_overlap: NDArray[np.float64] | None = None
    labels: tuple[str, ...] | None = None

    @property
    def decay_rate(self) -> NDArray[np.float64]:
        """Intensity decay rate ``-2 Re(lambda)``."""
        return -2.0 * self.eigenvalues.real

    @property
    def frequency(self) -> NDArray[np.float64]:
        return self.eigenvalues.imag

    @property
    def superradiant_index(self) -> int | None:
        if self.labels is None or SUPERRADIANT not in self.labels:
            return None
        return self.labels.index(SUPERRADIANT)

    def __len__(self) -> int:
        return self.eigenvalues.size


def fix_phase(vectors: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """Normalise columns and make each one's largest component real positive."""
    v = vectors / np.linalg.norm(vectors, axis=-2, keepdims=True)
    idx = np.argmax(np.abs(v), axis=-2)
    pivot = np.take_along_axis(v, idx[..., None, :], axis=-2)
    return v * (np.abs(pivot) / pivot)


def eigenmodes_batch(M: NDArray[np.complex128]) -> tuple[NDArray, NDArray]:
    """Eigenvalues ``(..., N)`` and phase-fixed eigenvectors ``(..., N, N)``, sorted by frequency."""
    try:
        lam, vec = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise SolverError("eigensolver did not converge", matrix=M) from exc
    order = np.argsort(lam.imag, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    vec = np.take_along_axis(vec, order[..., None, :], axis=-1)
    return lam, fix_phase(vec)


def eigenmodes(M: ArrayLike) -> ModeSet:
    """Full complex eigen-decomposition of one response matrix."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("M must be finite")
    lam, vec = eigenmodes_batch(M)
    return ModeSet(lam, vec)


def cavity_overlap(vectors: NDArray[np.complex128], G: NDArray[np.complex128]) -> NDArray[np.float64]:
    """``|G^H v_i| / |G|`` for every column ``v_i``: the share of a mode that feeds the cavity."""
    norm = np.linalg.norm(G, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.abs(np.einsum("...j,...ji->...i", np.conj(G), vectors)) / norm
    return np.where(norm > 0, c, 0.0)


def _superradiant_index(c: NDArray, gamma: NDArray) -> NDArray[np.int64]:
    # lexicographic argmax: overlap first, then decay rate
    cmax = np.max(c, axis=-1, keepdims=True)
    tied = np.isclose(c, cmax, rtol=1e-12, atol=0.0)
    return np.argmax(np.where(tied, gamma, -np.inf), axis=-1)


def classify_modes(modeset: ModeSet, realization: Positions | AtomFields, params: SystemParams) -> ModeSet:
    """Label the mode with the largest cavity overlap superradiant, the rest subradiant."""
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    c = cavity_overlap(modeset.vectors, f.G)
    labels = [SUBRADIANT] * len(modeset)
    if not np.any(f.G):
        warnings.warn("no atom couples to the cavity; all modes labelled subradiant", RuntimeWarning, stacklevel=2)
    else:
        labels[int(_superradiant_index(c, modeset.decay_rate))] = SUPERRADIANT
    return replace(modeset, cavity_overlap=c, labels=tuple(labels))


# ---------------------------------------------------------------------------
# dressed cavity-atom modes
# ---------------------------------------------------------------------------


def dressed_matrix(realization: Positions | AtomFields, params: SystemParams) -> NDArray[np.complex128]:
    """Linear cavity-plus-atoms matrix before eliminating the cavity.

    Row and column 0 belong to the cavity field::

        A_00 = i delta_c - kappa,  A_0j = i conj(G_j),  A_j0 = i G_j,  A_jj = i D_j

    Eliminating the cavity from ``A`` reproduces the low-intensity matrix
    ``M`` exactly.
    """
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    N = f.n_atoms
    A = np.zeros(f.G.shape[:-1] + (N + 1, N + 1), dtype=complex)
    A[..., 0, 0] = 1j * params.delta_c - params.kappa
    A[..., 0, 1:] = 1j * np.conj(f.G)
    A[..., 1:, 0] = 1j * f.G
    idx = np.arange(1, N + 1)
    A[..., idx, idx] = 1j * f.D
    return A


def dressed_scan(
    realization: Positions | AtomFields, params: SystemParams, delta_c: ArrayLike
) -> NDArray[np.complex128]:
    """Dressed eigenvalues (sorted by frequency) for each cavity detuning in ``delta_c``."""
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    dc = np.atleast_1d(np.asarray(delta_c, dtype=float))
    A = np.broadcast_to(dressed_matrix(f, params), dc.shape + (f.n_atoms + 1,) * 2).copy()
    A[..., 0, 0] = 1j * dc - params.kappa
    lam = np.linalg.eigvals(A)
    return np.take_along_axis(lam, np.argsort(lam.imag, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# saturated-state Jacobian
# ---------------------------------------------------------------------------


def jacobian(
    state: AtomState,
    realization: Positions | AtomFields,
    params: SystemParams,
    residual_tol: float = 1e-8,
    check: bool = True,
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Jacobian of the saturated equations at a steady state, with its eigenvalues.

    Variables are ordered ``(rho_ge, rho_eg, rho_ee)``.

    Raises
    ------
    ValueError
        ``state`` is not a steady state (scaled residual above ``residual_tol``)
        while ``check`` is true.
    """
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    if check:
        ds, dn = saturated_rhs(state.rho_ge, state.rho_ee, f, params)
        res = max(np.max(np.abs(ds)), np.max(np.abs(dn))) / float(np.max(_rate_scale(f, params)))
        if res > residual_tol:
            raise ValueError(f"state is not stationary (scaled residual {res:.3g})")
    J = saturated_jacobian(state.rho_ge, state.rho_ee, f, params)
    return J, np.linalg.eigvals(J)


# ---------------------------------------------------------------------------
# overlaps
# ---------------------------------------------------------------------------


def mode_overlap(profile: ArrayLike, mode_profile: ArrayLike) -> float:
    """Normalised overlap ``|<P, P_i>| / (|P| |P_i|)`` of two sampled profiles.

    Both inputs must live on the same grid or realization-site index set;
    NaN entries (empty bins) are dropped from both.
    """
    P = np.asarray(profile, dtype=complex).ravel()
    Q = np.asarray(mode_profile, dtype=complex).ravel()
    if P.shape != Q.shape:
        raise ValueError("profiles must share a grid")
    keep = np.isfinite(P) & np.isfinite(Q)
    P, Q = P[keep], Q[keep]
    nP, nQ = np.linalg.norm(P), np.linalg.norm(Q)
    if nP == 0 or nQ == 0:
        raise ValueError("zero-norm profile")
    return float(min(abs(np.vdot(Q, P)) / (nP * nQ), 1.0))


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class ModeEnsemble:
    """Eigenmodes of every realization of an ensemble.

    Attributes
    ----------
    gamma, delta : ndarray, shape (R, N)
        Decay rates and frequencies, frequency-ordered per realization.
    superradiant : ndarray of int, shape (R,)
        Column index of the superradiant mode (``-1`` if fully masked).
    overlap : ndarray, shape (R, N)
    vectors : ndarray, shape (R, N, N)
    site : ndarray of int, shape (R, N)
        Generating site of each atom, for site-resolved profiles.
    unit : float
        Decay unit ``G0^2 Re[1/kappa_bar]``.
    """

    gamma: NDArray[np.float64]
    delta: NDArray[np.float64]
    superradiant: NDArray[np.int64]
    overlap: NDArray[np.float64]
    vectors: NDArray[np.complex128]
    site: NDArray[np.int64]
    unit: float

    @property
    def n_realizations(self) -> int:
        return self.gamma.shape[0]

    def _sub_mask(self) -> NDArray[np.bool_]:
        mask = np.ones(self.gamma.shape, bool)
        rows = np.flatnonzero(self.superradiant >= 0)
        mask[rows, self.superradiant[rows]] = False
        return mask

    def superradiant_modes(self) -> tuple[NDArray, NDArray]:
        """Decay rates and frequencies of the superradiant mode per realization."""
        rows = np.flatnonzero(self.superradiant >= 0)
        return self.gamma[rows, self.superradiant[rows]], self.delta[rows, self.superradiant[rows]]

    def subradiant_modes(self) -> tuple[NDArray, NDArray, NDArray]:
        """Subradiant ``(gamma, delta, column)`` arrays of shape ``(R, N-1)``, frequency ranked."""
        rows = np.flatnonzero(self.superradiant >= 0)
        mask = self._sub_mask()[rows]
        n_sub = self.gamma.shape[1] - 1
        cols = np.nonzero(mask)[1].reshape(len(rows), n_sub)
        g = np.take_along_axis(self.gamma[rows], cols, axis=1)
        d = np.take_along_axis(self.delta[rows], cols, axis=1)
        return g, d, cols

    def separable(self, lo: float = 1.0, hi: float = 99.0) -> bool:
        """Whether the frequency-ranked subradiant clusters do not overlap.

        Adjacent ranks are separable when the ``hi`` percentile of the lower
        rank stays below the ``lo`` percentile of the next one.
        """
        _, d, _ = self.subradiant_modes()
        if d.shape[1] < 2:
            return True
        top = np.percentile(d, hi, axis=0)
        bottom = np.percentile(d, lo, axis=0)
        return bool(np.all(top[:-1] < bottom[1:]))

    def mode_profile(self, column_per_realization: NDArray[np.int64], n_sites: int) -> NDArray[np.complex128]:
        """Site-resolved ensemble average of one mode's eigenvector.

        Each realization's vector is first rotated so that its overlap with
        the first realization's vector is real positive; otherwise the
        arbitrary sign from the per-realization phase convention can cancel
        in the average.
        """
        R = self.n_realizations
        v = self.vectors[np.arange(R), :, column_per_realization]  # (R, N)
        prof = np.zeros((R, n_sites), complex)
        np.add.at(prof, (np.repeat(np.arange(R), v.shape[1]), self.site.ravel()), v.ravel())
        ref = prof[0]
        ph = np.einsum("rj,j->r", prof, np.conj(ref))
        ph = np.where(np.abs(ph) > 0, np.abs(ph) / np.where(ph == 0, 1, ph), 1.0)
        return (prof * ph[:, None]).mean(axis=0)


def _mode_chunk(exp: Experiment, start: int, count: int) -> dict:
    batch = exp.batch(start, count)
    f = atom_fields(batch, exp.params)
    lam, vec = eigenmodes_batch(build_linear_system(f, exp.params).M)
    c = cavity_overlap(vec, f.G)
    gamma = -2.0 * lam.real
    sr = _superradiant_index(c, gamma)
    sr = np.where(np.any(f.G != 0, axis=-1), sr, -1)
    return dict(gamma=gamma, delta=lam.imag, superradiant=sr, overlap=c, vectors=vec, site=batch.site)


def ensemble_modes(exp: Experiment) -> ModeEnsemble:
    """Eigenmodes of the low-intensity matrix for every realization of ``exp``."""
    parts = map_chunks(_mode_chunk, exp)
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return ModeEnsemble(unit=decay_unit(exp.params), **cat)


@dataclass
class ModeHistogram:
    """Binned ``(Gamma, delta)`` distributions per mode class and rank.

    ``rows`` holds ``(mode_class, mode_rank, gamma_over_unit, delta_over_unit,
    count)`` records for non-empty bins (bin centres; ``gamma`` bins are
    logarithmic).  ``mode_rank`` is ``-1`` for pooled subradiant modes and for
    the superradiant mode.
    """

    rows: list[tuple[str, int, float, float, int]]
    separable: bool
    modes: ModeEnsemble


def _hist_rows(label: str, rank: int, g: NDArray, d: NDArray, bins: int) -> list:
    g = np.asarray(g).ravel()
    d = np.asarray(d).ravel()
    pos = g > 0
    if not pos.any():
        # all rates vanish: one log bin cannot be built, report Gamma = 0
        counts, dedges = np.histogram(d, bins=bins)
        centres = 0.5 * (dedges[1:] + dedges[:-1])
        return [(label, rank, 0.0, float(c), int(n)) for c, n in zip(centres, counts) if n]
    lg = np.log10(np.where(pos, g, g[pos].min()))
    lo, hi = lg.min(), lg.max()
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    dlo, dhi = d.min(), d.max()
    if dhi - dlo < 1e-300:
        dlo, dhi = dlo - 0.5, dhi + 0.5
    H, ge, de = np.histogram2d(lg, d, bins=bins, range=[[lo, hi], [dlo, dhi]])
    gc = 10 ** (0.5 * (ge[1:] + ge[:-1]))
    dc = 0.5 * (de[1:] + de[:-1])
    out = []
    for i, j in zip(*np.nonzero(H)):
        out.append((label, rank, float(gc[i]), float(dc[j]), int(H[i, j])))
    return out


def ensemble_mode_histogram(exp: Experiment, n_realizations: int | None = None, bins: int = 60) -> ModeHistogram:
    """Histograms of decay rate and frequency for the superradiant and subradiant modes.

    Rates and frequencies are expressed in units of ``G0^2 Re[1/kappa_bar]``.
    Subradiant modes are matched across realizations by frequency rank when
    the ranked clusters do not overlap, and pooled otherwise.
    """
    if n_realizations is not None:
        exp = exp.with_(n_realizations=n_realizations)
    modes = ensemble_modes(exp)
    u = modes.unit
    g_sr, d_sr = modes.superradiant_modes()
    rows = _hist_rows(SUPERRADIANT, -1, g_sr / u, d_sr / u, bins)
    g_sub, d_sub, _ = modes.subradiant_modes()
    sep = modes.separable()
    if g_sub.shape[1] == 0:
        pass
    elif sep:
        for r in range(g_sub.shape[1]):
            rows += _hist_rows(SUBRADIANT, r, g_sub[:, r] / u, d_sub[:, r] / u, bins)
    else:
        rows += _hist_rows(SUBRADIANT, -1, g_sub / u, d_sub / u, bins)
    return ModeHistogram(rows, sep, modes)


def distribution_peak(values: ArrayLike, log: bool = True, grid_points: int = 2048) -> float:
    """Location of the maximum of a Gaussian-KDE density estimate.

    With ``log=True`` the estimate is built for ``log10(values)``, which suits
    rates spread over decades; non-positive values are ignored.
    """
    from scipy.stats import gaussian_kde

    v = np.asarray(values, dtype=float).ravel()
    if log:
        v = np.log10(v[v > 0])
    if v.size < 2:
        raise ValueError("need at least two samples")
    kde = gaussian_kde(v)
    xs = np.linspace(v.min(), v.max(), grid_points)
    peak = xs[np.argmax(kde(xs))]
    return float(10**peak if log else peak)
