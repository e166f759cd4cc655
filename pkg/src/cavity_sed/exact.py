"""Exact steady-state optical response of two stationary atoms.

For two atoms the hierarchy of correlation functions closes at the two-body
level.  The sixteen two-body functions

    F_ijkm(x, x') = < psi_i^+(x) psi_j^+(x') psi_k(x') psi_m(x) >,

with ``i, j, k, m`` in ``{g, e}``, obey linear equations that are local in the
ordered position pair ``(x, x')``.  Because the atoms do not move, each pair
is an independent two-atom problem: ``F_ijkm(x, x')`` equals
``rho_2(x, x')`` times the expectation of ``|i j><m k|`` for distinguishable
atoms pinned at ``x`` (first) and ``x'`` (second).  The equations of motion
are therefore generated mechanically from the two-atom adjoint master
equation with the cavity eliminated (collective coherent exchange and decay
through ``1/kappa_bar``), one 16 x 16 block per ordered pair.  The exchange
relation ``F_ijkm(x, x') = F_jimk(x', x)`` then holds as an identity between
blocks and is checked rather than imposed.

One-body quantities follow from the expectation-value equations for the
polarization ``P(x)`` and the excited density ``rho_ee(x)``, with the
two-body functions entering through quadratures.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import ResonancePoleError
from .model import LatticeConfig, SystemParams, coupling_at
from .observables import SpectrumTable, SweepSpec, SweepVariable
from .tables import write_csv

__all__ = [
    "TUPLES",
    "SpatialGrid",
    "mott_rho2",
    "TwoBodySystem",
    "TwoBodyField",
    "OneBodyField",
    "OracleObservables",
    "assemble_two_body_system",
    "solve_two_body",
    "solve_one_body",
    "marginal_one_body",
    "oracle_observables",
    "exact_point",
    "exact_sweep",
    "low_intensity_hierarchy",
    "factorization_report",
    "pair_generator",
]

_LEVELS = "ge"
#: Labels ``ijkm`` of the two-body functions, in storage order.
TUPLES: tuple[str, ...] = tuple("".join(t) for t in itertools.product(_LEVELS, repeat=4))


def _tuple_to_vec(label: str) -> int:
    """Storage index of ``|i j><m k|`` in the row-major two-atom operator basis."""
    i, j, k, m = (_LEVELS.index(c) for c in label)
    return 4 * (2 * i + j) + (2 * m + k)


_PERM = np.array([_tuple_to_vec(t) for t in TUPLES])  # tuple order -> operator-basis index
_CONJ = np.array([TUPLES.index(t[3] + t[2] + t[1] + t[0]) for t in TUPLES])
_SWAP = np.array([TUPLES.index(t[1] + t[0] + t[3] + t[2]) for t in TUPLES])
_DIAG = np.array([TUPLES.index(t) for t in ("gggg", "geeg", "egge", "eeee")])


# ---------------------------------------------------------------------------
# two-atom operator algebra
# ---------------------------------------------------------------------------


def _op_basis():
    lower = np.array([[0, 1], [0, 0]], complex)  # |g><e|
    pe = np.array([[0, 0], [0, 1]], complex)
    eye2 = np.eye(2)
    eye4 = np.eye(4)
    s = [np.kron(lower, eye2), np.kron(eye2, lower)]
    n = [np.kron(pe, eye2), np.kron(eye2, pe)]

    def left(a):  # O -> a O, row-major vectorization
        return np.kron(a, eye4)

    def right(b):  # O -> O b
        return np.kron(eye4, b.T)

    def comm(h):  # O -> i [h, O]
        return 1j * (left(h) - right(h))

    terms = {
        "D1": comm(-n[0]),
        "D2": comm(-n[1]),
        "W1": comm(-s[0].conj().T),
        "W1c": comm(-s[0]),
        "W2": comm(-s[1].conj().T),
        "W2c": comm(-s[1]),
    }
    for a, b in itertools.product(range(2), repeat=2):
        sd, sa = s[b].conj().T, s[a]
        terms[f"K{a}{b}"] = np.kron(sd, sa.T) - right(sd @ sa)
        terms[f"Kc{a}{b}"] = np.kron(sd, sa.T) - left(sd @ sa)
    return terms, s, n


@lru_cache(maxsize=1)
def _basis_matrix() -> tuple[NDArray[np.complex128], dict]:
    terms, s, n = _op_basis()
    keys = ["D1", "D2", "W1", "W1c", "W2", "W2c"]
    keys += [f"K{a}{b}" for a in range(2) for b in range(2)]
    keys += [f"Kc{a}{b}" for a in range(2) for b in range(2)]
    # transpose each superoperator: d<O_t>/dt = sum_s A_ts <O_s>
    B = np.array([terms[k].T.reshape(256) for k in keys])
    return B, dict(lower=s, excited=n)


def pair_generator(
    D1: NDArray, D2: NDArray, W1: NDArray, W2: NDArray, g1: NDArray, g2: NDArray, k: complex
) -> NDArray[np.complex128]:
    """Equations of motion of the sixteen two-body functions for a batch of pairs.

    Parameters
    ----------
    D1, D2 : ndarray
        Atom-pump detunings at the two positions.
    W1, W2 : ndarray
        Total drive ``g a_F + h`` at the two positions.
    g1, g2 : ndarray
        Cavity couplings at the two positions.
    k : complex
        ``1 / kappa_bar``.

    Returns
    -------
    ndarray, shape (n_pairs, 16, 16)
        ``A`` with ``dF_t/dt = sum_s A[t, s] F_s`` in :data:`TUPLES` order.
    """
    B, _ = _basis_matrix()
    g = (np.asarray(g1, complex), np.asarray(g2, complex))
    cols = [np.asarray(D1, float), np.asarray(D2, float), W1, np.conj(W1), W2, np.conj(W2)]
    cols += [g[b] * np.conj(g[a]) * k for a in range(2) for b in range(2)]
    cols += [g[b] * np.conj(g[a]) * np.conj(k) for a in range(2) for b in range(2)]
    C = np.stack(np.broadcast_arrays(*[np.asarray(c, complex) for c in cols]), axis=-1)
    A = (C @ B).reshape(-1, 16, 16)
    return A[:, _PERM][:, :, _PERM]


def _bkron(a: NDArray, b: NDArray) -> NDArray:
    """Batched Kronecker product of ``(n, 4, 4)`` stacks."""
    return np.einsum("pij,pkl->pikjl", a, b).reshape(a.shape[0], 16, 16)


def _bright_dark_generator(D1, D2, aF, h1, h2, g1, g2, k):
    """Pair generator in the basis ``|gg>, |B>, |D>, |ee>``.

    ``|B> = (g1 |eg> + g2 |ge>)/n`` and ``|D> = (conj(g2) |eg> - conj(g1) |ge>)/n``
    with ``n^2 = |g1|^2 + |g2|^2``.  The collective jump operator
    ``S = conj(g1) s1 + conj(g2) s2`` annihilates ``|D>`` exactly, and all
    couplings of ``|D>`` proportional to ``|g2|^2 - |g1|^2`` are formed
    explicitly instead of through cancellation.  This keeps blocks of two
    atoms with nearly equal coupling moduli, whose near-dark state relaxes
    at a rate of order ``Re(1/kappa_bar) (|g2|^2 - |g1|^2)^2``, accurately
    solvable.

    Returns the transposed generator ``A`` (as in :func:`pair_generator`,
    operator-basis order) and the basis matrix ``V`` whose columns are the
    new states in the site basis.
    """
    npair = len(g1)
    a1, a2 = np.abs(g1) ** 2, np.abs(g2) ** 2
    n2 = a1 + a2
    n = np.sqrt(n2)
    small = n2 == 0
    n = np.where(small, 1.0, n)
    n2 = np.where(small, 1.0, n2)
    # site basis order: gg, ge, eg, ee (index 2*a1 + a2)
    V = np.zeros((npair, 4, 4), complex)
    V[:, 0, 0] = 1
    V[:, 3, 3] = 1
    V[:, 2, 1] = np.where(small, 0, g1 / n)
    V[:, 1, 1] = np.where(small, 1, g2 / n)
    V[:, 2, 2] = np.where(small, 1, np.conj(g2) / n)
    V[:, 1, 2] = np.where(small, 0, -np.conj(g1) / n)
    d21 = a2 - a1
    g12c = np.conj(g1 * g2)
    # jump operator S
    S = np.zeros((npair, 4, 4), complex)
    S[:, 0, 1] = n * ~small
    S[:, 1, 3] = 2 * g12c / n
    S[:, 2, 3] = d21 / n
    # raising part of the drive, sum_j W_j s_j^+ with W_j = g_j a_F + h_j
    W1, W2 = g1 * aF + h1, g2 * aF + h2
    R = np.zeros((npair, 4, 4), complex)
    R[:, 1, 0] = (np.conj(g1) * W1 + np.conj(g2) * W2) / n
    R[:, 2, 0] = (g2 * h1 - g1 * h2) / n
    R[:, 3, 1] = (W1 * g2 + W2 * g1) / n
    R[:, 3, 2] = (aF * d21 + h2 * np.conj(g2) - h1 * np.conj(g1)) / n
    if small.any():
        # uncoupled pair: B = |ge>, D = |eg>
        R[small] = 0
        R[small, 1, 0] = W2[small]
        R[small, 2, 0] = W1[small]
        R[small, 3, 1] = W1[small]
        R[small, 3, 2] = W2[small]
    # detuning part, -(D1 n1 + D2 n2)
    H = np.zeros((npair, 4, 4), complex)
    H[:, 1, 1] = -(D1 * a1 + D2 * a2) / n2
    H[:, 2, 2] = -(D1 * a2 + D2 * a1) / n2
    H[:, 1, 2] = -(D1 - D2) * g12c / n2
    H[:, 2, 1] = np.conj(H[:, 1, 2])
    H[:, 3, 3] = -(D1 + D2)
    if small.any():
        H[small, 1, 1] = -D2[small]
        H[small, 2, 2] = -D1[small]
        H[small, 1, 2] = H[small, 2, 1] = 0
    H = H - R - np.conj(np.swapaxes(R, 1, 2))
    I = np.broadcast_to(np.eye(4), H.shape)
    St = np.swapaxes(S, 1, 2)
    Sd = np.conj(St)
    SdS = Sd @ S
    L = 1j * (_bkron(H, I) - _bkron(I, np.swapaxes(H, 1, 2)))
    jump = _bkron(Sd, St)
    L = L + k * (jump - _bkron(I, np.swapaxes(SdS, 1, 2))) + np.conj(k) * (jump - _bkron(SdS, I))
    return np.swapaxes(L, 1, 2), V


# ---------------------------------------------------------------------------
# grid and pair density
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform quadrature grid.

    Nodes are ``x0 + k h``.  :meth:`for_lattice` chooses ``h`` so that half a
    wavelength is ``(m + 1/3) h`` and offsets the nodes by ``x0 = h/8``.  Two
    distinct nodes then never have couplings of equal modulus through a
    translation by half or one wavelength or a reflection about a mode node.
    Such pairs would carry an exactly dark collective state.
    """

    x: NDArray[np.float64]
    h: float

    @classmethod
    def for_lattice(
        cls, lattice: LatticeConfig, h: float = 0.005, n_widths: float = 5.0, wavelength: float = 1.0
    ) -> "SpatialGrid":
        if not h > 0:
            raise ValueError("grid spacing must be positive")
        c = np.asarray(lattice.site_centers)
        half = 0.5 * wavelength
        m = max(int(np.ceil(half / h)), 1)
        hh = half / (m + 1.0 / 3.0)
        # the on-site density falls as exp(-x^2/L^2); cover n_widths standard deviations
        pad = n_widths * lattice.wannier_width / np.sqrt(2.0)
        lo = int(np.floor((np.min(c) - pad) / hh)) - 1
        hi = int(np.ceil((np.max(c) + pad) / hh)) + 1
        return cls(x=hh / 8 + hh * np.arange(lo, hi + 1), h=hh)

    def __len__(self) -> int:
        return len(self.x)


def mott_rho2(lattice: LatticeConfig, grid: SpatialGrid) -> NDArray[np.float64]:
    """Pair density of one atom on each of two sites.

    ``rho_2(x, x') = [rho1(x) rho2(x') + rho2(x) rho1(x')] / 2`` with the
    on-site densities normalized to one, so the double integral is one.
    """
    if lattice.n_sites != 2 or tuple(lattice.occupancy) != (1, 1):
        raise ValueError("the two-atom pair density needs exactly two sites with one atom each")
    r1 = lattice.site_density(0, grid.x)
    r2 = lattice.site_density(1, grid.x)
    return 0.5 * (np.outer(r1, r2) + np.outer(r2, r1))


# ---------------------------------------------------------------------------
# two-body system
# ---------------------------------------------------------------------------


@dataclass
class TwoBodySystem:
    """Block-diagonal linear system for the two-body functions.

    One 16 x 16 block per ordered grid pair ``(x[ia], x[ib])`` with non
    negligible pair density.  ``A`` acts on the pair expectation values in
    the bright/dark basis ``basis`` (see :func:`_bright_dark_generator`);
    row 0 (the ``gggg`` equation, linearly dependent on the other diagonal
    equations) is replaced by the number-conservation constraint.
    ``generator`` holds the same equations in :data:`TUPLES` order for the
    two-body functions themselves.
    """

    A: NDArray[np.complex128]
    rhs: NDArray[np.complex128]
    ia: NDArray[np.int64]
    ib: NDArray[np.int64]
    rho2: NDArray[np.float64]
    grid: SpatialGrid
    params: SystemParams
    generator: NDArray[np.complex128]
    basis: NDArray[np.complex128]


def _pair_fields(grid: SpatialGrid, params: SystemParams, ia, ib):
    x = grid.x
    g = coupling_at(x, params)
    D = np.asarray(params.detuning(x), float)
    W = g * params.a_free + np.asarray(params.pump(x), complex)
    return D[ia], D[ib], W[ia], W[ib], g[ia], g[ib]


def assemble_two_body_system(
    grid: SpatialGrid, params: SystemParams, rho2: NDArray[np.float64], cutoff: float = 1e-12
) -> TwoBodySystem:
    """Assemble the pair blocks with the conservation constraint.

    Pairs with ``rho_2 < cutoff * max(rho_2)`` are dropped, and so are the
    coincident pairs ``x = x'``: two atoms at one point have a dark
    antisymmetric state and no unique steady state, and the diagonal has
    zero measure in the double integrals.
    """
    rho2 = np.asarray(rho2, float)
    n = len(grid)
    if rho2.shape != (n, n):
        raise ValueError("pair density does not match the grid")
    keep = rho2 > cutoff * rho2.max()
    np.fill_diagonal(keep, False)
    ia, ib = np.nonzero(keep)
    # field-normalized pair correlation: integrates to N (N - 1) = 2
    r = 2.0 * rho2[ia, ib]
    k = params.inv_kappa_bar
    x = grid.x
    g = coupling_at(x, params)
    D = np.asarray(params.detuning(x), float)
    h = np.asarray(params.pump(x), complex)
    A, V = _bright_dark_generator(D[ia], D[ib], params.a_free, h[ia], h[ib], g[ia], g[ib], k)
    gen = pair_generator(*_pair_fields(grid, params, ia, ib), k)
    A[:, 0, :] = 0
    A[:, 0, [0, 5, 10, 15]] = 1
    rhs = np.zeros((len(ia), 16), complex)
    rhs[:, 0] = r
    return TwoBodySystem(A, rhs, ia, ib, r, grid, params, gen, V)


@dataclass
class TwoBodyField:
    """Solved two-body functions on the retained grid pairs.

    ``values[p, t]`` is ``F_t(x[ia[p]], x[ib[p]])`` for tuple ``TUPLES[t]``.
    """

    values: NDArray[np.complex128]
    system: TwoBodySystem

    @property
    def grid(self) -> SpatialGrid:
        return self.system.grid

    def tuple_index(self, label: str) -> int:
        return TUPLES.index(label)

    def on_grid(self, label: str) -> NDArray[np.complex128]:
        """Tuple ``label`` as an ``(n, n)`` array, zero on dropped pairs."""
        n = len(self.grid)
        out = np.zeros((n, n), complex)
        out[self.system.ia, self.system.ib] = self.values[:, self.tuple_index(label)]
        return out

    # invariants ------------------------------------------------------------

    def conservation_error(self) -> float:
        """Largest ``|sum of diagonal tuples - rho_2|`` relative to ``max rho_2``."""
        s = self.values[:, _DIAG].sum(axis=1)
        return float(np.max(np.abs(s - self.system.rho2)) / self.system.rho2.max())

    def hermiticity_error(self) -> float:
        """Largest violation of ``F_ijkm^* = F_mkji`` relative to ``max rho_2``."""
        d = np.conj(self.values) - self.values[:, _CONJ]
        return float(np.max(np.abs(d)) / self.system.rho2.max())

    def exchange_error(self) -> float:
        """Largest violation of ``F_ijkm(x, x') = F_jimk(x', x)`` relative to ``max rho_2``."""
        n = len(self.grid)
        lookup = -np.ones((n, n), np.int64)
        lookup[self.system.ia, self.system.ib] = np.arange(len(self.system.ia))
        partner = lookup[self.system.ib, self.system.ia]
        have = partner >= 0
        d = self.values[have] - self.values[partner[have]][:, _SWAP]
        return float(np.max(np.abs(d)) / self.system.rho2.max()) if d.size else 0.0

    def residual(self) -> float:
        r = np.einsum("pts,ps->pt", self.system.generator, self.values)
        return float(np.max(np.abs(r[:, 1:])) / self.system.rho2.max())

    def slices_to_csv(self, path: str | Path, labels=TUPLES) -> Path:
        """Write ``tuple, x_a, x_b, re, im`` rows for the requested tuples."""
        x = self.grid.x
        ia, ib = self.system.ia, self.system.ib

        def rows():
            for lab in labels:
                t = self.tuple_index(lab)
                for p in range(len(ia)):
                    v = self.values[p, t]
                    yield (lab, x[ia[p]], x[ib[p]], v.real, v.imag)

        return write_csv(path, ["tuple", "x_a", "x_b", "re", "im"], rows())


def solve_two_body(system: TwoBodySystem, tol: float = 1e-8) -> TwoBodyField:
    """Solve every pair block.

    A block counts as singular when the solve fails, produces non-finite
    values, or leaves a relative residual above ``tol``.  Pairs of atoms near
    nodes of the mode relax slowly and have large condition numbers while
    still being accurately solvable, so the residual is the test used.

    Raises
    ------
    ResonancePoleError
        If a block is singular; the pair coordinates are attached.
    """
    A, rhs = system.A, system.rhs
    bad = np.zeros(len(A), bool)
    try:
        vals = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        vals = np.full(rhs.shape, np.nan + 0j)
        for p in range(len(A)):
            try:
                vals[p] = np.linalg.solve(A[p], rhs[p])
            except np.linalg.LinAlgError:
                bad[p] = True
    with np.errstate(invalid="ignore"):
        r = np.einsum("pts,ps->pt", A, vals) - rhs
        scale = np.abs(A).max(axis=(1, 2)) * np.abs(vals).max(axis=1) + np.abs(rhs).max(axis=1)
        bad |= ~np.all(np.isfinite(vals), axis=1) | ~(np.abs(r).max(axis=1) <= tol * scale)
    if not bad.any():
        C = vals.reshape(-1, 4, 4)
        V = system.basis
        C = np.conj(V) @ C @ np.swapaxes(V, 1, 2)
        vals = C.reshape(-1, 16)[:, _PERM]
    if bad.any():
        p = int(np.flatnonzero(bad)[0])
        x = system.grid.x
        raise ResonancePoleError(
            f"two-body block singular at x = {x[system.ia[p]]:.6g}, x' = {x[system.ib[p]]:.6g}",
            x_a=float(x[system.ia[p]]),
            x_b=float(x[system.ib[p]]),
        )
    return TwoBodyField(vals, system)


# ---------------------------------------------------------------------------
# one-body quantities
# ---------------------------------------------------------------------------


@dataclass
class OneBodyField:
    """Polarization ``P(x)``, excited density ``rho_ee(x)`` and density ``rho_1(x)``."""

    x: NDArray[np.float64]
    polarization: NDArray[np.complex128]
    excited: NDArray[np.float64]
    density: NDArray[np.float64]
    h: float


def _marginal(field: TwoBodyField, labels: list[str], weights: NDArray | None = None) -> NDArray[np.complex128]:
    """``sum_labels integral w(x') F_label(x, x') dx'`` as a function of ``x``."""
    s = field.system
    v = field.values[:, [field.tuple_index(l) for l in labels]].sum(axis=1)
    if weights is not None:
        v = v * weights[s.ib]
    out = np.zeros(len(field.grid), complex)
    np.add.at(out, s.ia, v)
    return out * field.grid.h


def marginal_one_body(field: TwoBodyField) -> OneBodyField:
    """One-body quantities as direct marginals of the two-body functions.

    For two atoms ``<psi_i^+(x) psi_m(x)> = sum_j integral F_ijjm(x, x') dx'``.
    """
    P = _marginal(field, ["ggge", "geee"])
    ee = _marginal(field, ["egge", "eeee"]).real
    rho1 = _marginal(field, ["gggg", "geeg", "egge", "eeee"]).real
    return OneBodyField(field.grid.x, P, ee, rho1, field.grid.h)


def solve_one_body(field: TwoBodyField, rho1: NDArray[np.float64] | None = None) -> OneBodyField:
    """Steady state of the one-body equations with two-body inputs.

    At every node the polarization ``P`` (complex) and excited density
    ``rho_ee`` (real) solve a 3 x 3 real linear system; the ground density
    is eliminated with ``rho_gg = rho_1 - rho_ee``.  The two-body functions
    enter through

        I1(x) = integral g*(x') [F_egee(x, x') - F_ggeg(x, x')] dx',
        I2(x) = integral g*(x') F_egeg(x, x') dx'.

    Parameters
    ----------
    field : TwoBodyField
    rho1 : ndarray, optional
        Total one-body density on the grid; by default the marginal of the
        pair density.
    """
    params = field.system.params
    x = field.grid.x
    g = coupling_at(x, params)
    D = np.asarray(params.detuning(x), float)
    W = g * params.a_free + np.asarray(params.pump(x), complex)
    k = params.inv_kappa_bar
    gc = np.conj(g)
    I1 = _marginal(field, ["egee"], gc) - _marginal(field, ["ggeg"], gc)
    I2 = _marginal(field, ["egeg"], gc)
    if rho1 is None:
        rho1 = _marginal(field, ["gggg", "geeg", "egge", "eeee"]).real
    # 0 = (iD - k|g|^2) P - i W (2 ee - rho1) + k g I1
    # 0 = -2 |g|^2 Re(k) ee - 2 Re[k g I2] + 2 Re[i W conj(P)]
    c = 1j * D - k * np.abs(g) ** 2
    n = len(x)
    M = np.zeros((n, 3, 3))
    b = np.zeros((n, 3))
    # unknowns (Re P, Im P, ee)
    M[:, 0, 0], M[:, 0, 1] = c.real, -c.imag
    M[:, 1, 0], M[:, 1, 1] = c.imag, c.real
    M[:, 0, 2], M[:, 1, 2] = (-2j * W).real, (-2j * W).imag
    r0 = -(1j * W * rho1 + k * g * I1)
    b[:, 0], b[:, 1] = r0.real, r0.imag
    # 2 Re[i W conj(P)] = 2 (-Im W Re P + Re W Im P)
    M[:, 2, 0], M[:, 2, 1] = -2 * W.imag, 2 * W.real
    M[:, 2, 2] = -2 * np.abs(g) ** 2 * k.real
    b[:, 2] = 2 * np.real(k * g * I2)
    active = rho1 > 0
    sol = np.zeros((n, 3))
    if active.any():
        sol[active] = np.linalg.solve(M[active], b[active][..., None])[..., 0]
    return OneBodyField(x, sol[:, 0] + 1j * sol[:, 1], sol[:, 2], rho1, field.grid.h)


@dataclass(frozen=True)
class OracleObservables:
    """Cavity moments and saturation from the exact solution."""

    amplitude: complex
    photon_number: float
    saturation: float

    @property
    def coherent(self) -> float:
        return abs(self.amplitude) ** 2

    @property
    def total(self) -> float:
        return self.photon_number

    @property
    def incoherent(self) -> float:
        return self.photon_number - self.coherent


def oracle_observables(field: TwoBodyField, one: OneBodyField, params: SystemParams, n_atoms: int = 2) -> OracleObservables:
    """``<a>``, ``<a^+ a>`` and the mean saturation.

    ``<a> = a_F + (i/kappa_bar) integral g* P`` and

    ``<a^+ a> = |a_F|^2 + 2 Re[a_F^* (i/kappa_bar) integral g* P]
    + |1/kappa_bar|^2 [integral |g|^2 rho_ee + double integral g(x) g*(x') F_egeg(x, x')]``.
    """
    h = one.h
    g = coupling_at(one.x, params)
    k = params.inv_kappa_bar
    aF = params.a_free
    S = np.sum(np.conj(g) * one.polarization) * h
    a = aF + 1j * k * S
    corr = np.sum(np.abs(g) ** 2 * one.excited) * h + np.sum(g * _marginal(field, ["egeg"], np.conj(g))) * h
    nph = abs(aF) ** 2 + 2 * np.real(np.conj(aF) * 1j * k * S) + abs(k) ** 2 * corr.real
    sat = float(np.sum(one.excited) * h / n_atoms)
    return OracleObservables(complex(a), float(nph), sat)


def exact_point(lattice: LatticeConfig, params: SystemParams, grid: SpatialGrid | None = None) -> tuple[OracleObservables, TwoBodyField, OneBodyField]:
    """Solve the two-atom problem at one parameter point."""
    _check_lattice(lattice)
    grid = grid or SpatialGrid.for_lattice(lattice, wavelength=params.wavelength)
    rho2 = mott_rho2(lattice, grid)
    field = solve_two_body(assemble_two_body_system(grid, params, rho2))
    one = solve_one_body(field)
    return oracle_observables(field, one, params), field, one


def _check_lattice(lattice: LatticeConfig) -> None:
    if lattice.n_atoms != 2 or lattice.n_sites != 2:
        raise ValueError(f"the exact solver handles two atoms on two sites, got {lattice.n_atoms} atoms")
    if not all(lattice.coupled_mask):
        raise ValueError("the exact solver assumes both sites couple to the cavity")


def exact_sweep(spec: SweepSpec, lattice: LatticeConfig, params: SystemParams, h: float = 0.005) -> SpectrumTable:
    """Exact spectrum along ``spec`` for two atoms.

    The table has zero standard errors and ``n_eff_realizations = 0``; the
    ``intensity`` mode of ``spec`` is ignored because the solution includes
    saturation exactly.
    """
    _check_lattice(lattice)
    grid = SpatialGrid.for_lattice(lattice, h, wavelength=params.wavelength)
    rho2 = mott_rho2(lattice, grid)
    vals = spec.values
    n = len(vals)
    a = np.zeros(n, complex)
    tot = np.zeros(n)
    sat = np.zeros(n)
    masked = np.zeros(n, bool)
    for i, v in enumerate(vals):
        p = spec.params_at(params, v)
        try:
            field = solve_two_body(assemble_two_body_system(grid, p, rho2))
        except ResonancePoleError:
            a[i], tot[i], sat[i], masked[i] = np.nan, np.nan, np.nan, True
            continue
        obs = oracle_observables(field, solve_one_body(field), p)
        a[i], tot[i], sat[i] = obs.amplitude, obs.photon_number, obs.saturation
    z = np.zeros(n)
    return SpectrumTable(
        sweep_value=vals,
        coherent=np.abs(a) ** 2,
        total=tot,
        saturation=sat,
        se_coherent=z,
        se_total=z.copy(),
        se_saturation=z.copy(),
        n_eff_realizations=np.zeros(n, np.int64),
        masked=masked,
        mean_amplitude=a,
    )


# ---------------------------------------------------------------------------
# low-intensity hierarchy and diagnostics
# ---------------------------------------------------------------------------


def low_intensity_hierarchy(lattice: LatticeConfig, params: SystemParams, grid: SpatialGrid | None = None) -> tuple[complex, NDArray[np.complex128]]:
    """First-order response from the closed two-body low-intensity hierarchy.

    ``P_2(x; x')`` obeys

        0 = [i D(x') - g(x')g*(x')/kappa_bar] P_2(x; x') + i W(x') rho_2(x, x')
            - g(x')g*(x)/kappa_bar P_2(x'; x),

    which couples each ordered pair to its mirror; ``P(x) = integral
    P_2(x'; x) dx'``.  Returns ``(<a>, P)``.
    """
    _check_lattice(lattice)
    grid = grid or SpatialGrid.for_lattice(lattice, wavelength=params.wavelength)
    rho2 = mott_rho2(lattice, grid)
    x = grid.x
    g = coupling_at(x, params)
    D = np.asarray(params.detuning(x), float)
    W = g * params.a_free + np.asarray(params.pump(x), complex)
    k = params.inv_kappa_bar
    # unknowns u = P_2(x_i; x_j) and v = P_2(x_j; x_i) for i < j; coincident
    # points are excluded as in the saturated solver
    iu, ju = np.triu_indices(len(x), k=1)
    keep = rho2[iu, ju] > 1e-12 * rho2.max()
    iu, ju = iu[keep], ju[keep]
    r = 2.0 * rho2[iu, ju]  # field normalization, integral N (N - 1)
    a11 = 1j * D[ju] - k * np.abs(g[ju]) ** 2
    a12 = -k * g[ju] * np.conj(g[iu])
    a22 = 1j * D[iu] - k * np.abs(g[iu]) ** 2
    a21 = -k * g[iu] * np.conj(g[ju])
    b1 = -1j * W[ju] * r
    b2 = -1j * W[iu] * r
    det = a11 * a22 - a12 * a21
    u = (b1 * a22 - a12 * b2) / det
    v = (a11 * b2 - a21 * b1) / det
    P = np.zeros(len(x), complex)
    # u = P_2(x_i; x_j) is the coherence at x_j, v the coherence at x_i
    np.add.at(P, ju, u)
    np.add.at(P, iu, v)
    P *= grid.h
    a = params.a_free + 1j * k * np.sum(np.conj(g) * P) * grid.h
    return complex(a), P


def factorization_report(field: TwoBodyField, one: OneBodyField) -> dict[str, float]:
    """Compare pair coherences with products of one-body quantities.

    For every retained pair, the exact conditional ``F_ggeg / rho_2`` is
    compared with ``(rho_gg(x)/rho_1(x)) (P(x')/rho_1(x'))``.  Returns the
    ``rho_2``-weighted relative L2 discrepancy and the worst pointwise
    discrepancy relative to the largest exact value.
    """
    s = field.system
    rho1 = one.density
    with np.errstate(invalid="ignore", divide="ignore"):
        gg = (rho1 - one.excited) / rho1
        pn = one.polarization / rho1
    exact = field.values[:, field.tuple_index("ggeg")] / s.rho2
    fact = gg[s.ia] * pn[s.ib]
    w = s.rho2
    ok = np.isfinite(fact)
    diff = exact[ok] - fact[ok]
    l2 = np.sqrt(np.sum(w[ok] * np.abs(diff) ** 2) / np.sum(w[ok] * np.abs(exact[ok]) ** 2))
    worst = np.max(np.abs(diff)) / np.max(np.abs(exact[ok]))
    return {"weighted_relative_l2": float(l2), "max_relative": float(worst)}
