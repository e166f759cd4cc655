"""Per-realization solvers for the internal atomic state.

Three solvers live here:

* the low-intensity linear system ``M rho + F = 0``;
* the saturated nonlinear equations for ``rho_ge`` and ``rho_ee`` of every
  atom, either integrated in time or solved for the steady state with a damped
  Newton iteration;
* the adiabatically eliminated cavity amplitude.

Most functions take fields ``(G, D, H)`` (coupling, detuning, transverse pump
per atom) with arbitrary leading batch dimensions, so a whole ensemble can be
processed in one call.  The ``Realization`` based wrappers are thin.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, IntegrationError, ResonancePoleError, StepSizeError
from .model import SystemParams, coupling_at
from .sampling import Realization, RealizationBatch

__all__ = [
    "AtomFields",
    "AtomState",
    "LinearSystem",
    "Trajectory",
    "SteadyState",
    "atom_fields",
    "build_linear_system",
    "steady_state_low_intensity",
    "solve_low_intensity_batch",
    "saturated_rhs",
    "saturated_jacobian",
    "real_jacobian",
    "evolve_saturated",
    "steady_state_saturated",
    "steady_state_saturated_batch",
    "cavity_amplitude",
    "max_rate",
    "COND_CAP",
]

COND_CAP = 1e12
POSITIVITY_TOL = 1e-9

Positions = Union[Realization, RealizationBatch]


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomFields:
    """Per-atom coupling ``G``, detuning ``D`` and transverse pump ``H``.

    Arrays share a shape ``(..., N)``.  Atoms on masked sites have ``G = 0``.
    """

    G: NDArray[np.complex128]
    D: NDArray[np.float64]
    H: NDArray[np.complex128]

    @property
    def n_atoms(self) -> int:
        return self.G.shape[-1]

    def drive(self, params: SystemParams) -> NDArray[np.complex128]:
        """Local drive ``G a_F + H`` seen by each atom."""
        return self.G * params.a_free + self.H


@dataclass(frozen=True)
class AtomState:
    """Internal state of all atoms in one realization (or a batch of them).

    Attributes
    ----------
    rho_ge : ndarray of complex, shape (..., N)
    rho_ee : ndarray of float, shape (..., N)
    """

    rho_ge: NDArray[np.complex128]
    rho_ee: NDArray[np.float64]

    @classmethod
    def ground(cls, n_atoms: int) -> "AtomState":
        return cls(np.zeros(n_atoms, complex), np.zeros(n_atoms))

    def to_real(self) -> NDArray[np.float64]:
        """Stack as ``[Re rho_ge, Im rho_ge, rho_ee]`` along the last axis."""
        return np.concatenate([self.rho_ge.real, self.rho_ge.imag, self.rho_ee], axis=-1)

    @classmethod
    def from_real(cls, y: NDArray[np.float64]) -> "AtomState":
        n = y.shape[-1] // 3
        return cls(y[..., :n] + 1j * y[..., n : 2 * n], np.array(y[..., 2 * n :]))

    def violations(self, tol: float = POSITIVITY_TOL) -> NDArray[np.bool_]:
        """Per-atom flags for states outside the single-atom Bloch ball."""
        n = self.rho_ee
        return (
            (n < -tol)
            | (n > 1 + tol)
            | (np.abs(self.rho_ge) ** 2 > n * (1 - n) + tol)
            | ~np.isfinite(self.rho_ge)
            | ~np.isfinite(n)
        )

    def is_physical(self, tol: float = POSITIVITY_TOL) -> bool:
        return not bool(np.any(self.violations(tol)))

    def saturation(self) -> NDArray[np.float64]:
        """Mean excited population per atom."""
        return self.rho_ee.mean(axis=-1)


@dataclass(frozen=True)
class LinearSystem:
    """Low-intensity response ``M rho + F = 0`` (possibly batched)."""

    M: NDArray[np.complex128]
    F: NDArray[np.complex128]


@dataclass
class Trajectory:
    """Result of :func:`evolve_saturated`."""

    t: NDArray[np.float64]
    y: NDArray[np.float64]  # (3N, n_steps) real stacked states
    final: AtomState
    converged: bool
    bounds_ok: bool


@dataclass
class SteadyState:
    """Saturated steady state with solver bookkeeping."""

    state: AtomState
    residual: float
    method: str
    iterations: int = 0
    bistable: bool = False
    alternate: AtomState | None = None
    stable: bool = True


# ---------------------------------------------------------------------------
# fields and the linear problem
# ---------------------------------------------------------------------------


def atom_fields(realization: Positions, params: SystemParams) -> AtomFields:
    """Evaluate coupling, detuning and pump at each atom."""
    x = realization.positions
    coupled = realization.coupled
    G = np.where(coupled, coupling_at(x, params), 0j)
    D = np.asarray(params.detuning(x), dtype=float)
    H = np.asarray(params.pump(x), dtype=complex)
    if not params.pump_masked_atoms:
        H = np.where(coupled, H, 0j)
    return AtomFields(G, D, H)


def _linear_system(f: AtomFields, params: SystemParams) -> LinearSystem:
    k = params.inv_kappa_bar
    M = -k * f.G[..., :, None] * np.conj(f.G)[..., None, :]
    idx = np.arange(f.n_atoms)
    M[..., idx, idx] += 1j * f.D
    F = 1j * f.drive(params)
    return LinearSystem(M, F)


def build_linear_system(realization: Positions | AtomFields, params: SystemParams) -> LinearSystem:
    """Low-intensity matrix ``M`` and drive vector ``F``.

    ``M_jj = i D_j - |G_j|^2 / kappa_bar``, ``M_jl = -G_j conj(G_l) / kappa_bar``
    and ``F_j = i (G_j a_F + H_j)``.
    """
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    if f.n_atoms < 1:
        raise ValueError("realization has no atoms")
    return _linear_system(f, params)


def _norm1(A: NDArray) -> NDArray[np.float64]:
    return np.abs(A).sum(axis=-2).max(axis=-1)


def solve_low_intensity_batch(
    system: LinearSystem, cond_cap: float = COND_CAP
) -> tuple[NDArray[np.complex128], NDArray[np.bool_]]:
    """Batched ``rho = -M^{-1} F`` with a 1-norm condition estimate.

    Returns the solutions and a boolean ``ok`` array; entries whose
    condition estimate exceeds ``cond_cap`` are set to NaN.
    """
    M, F = system.M, system.F
    with np.errstate(all="ignore"):
        try:
            Minv = np.linalg.inv(M)
            ok = np.ones(M.shape[:-2], bool)
        except np.linalg.LinAlgError:
            Minv = np.empty_like(M)
            ok = np.ones(M.shape[:-2], bool)
            flat_M = M.reshape(-1, *M.shape[-2:])
            flat_inv = Minv.reshape(flat_M.shape)
            flat_ok = ok.reshape(-1)
            for i in range(flat_M.shape[0]):
                try:
                    flat_inv[i] = np.linalg.inv(flat_M[i])
                except np.linalg.LinAlgError:
                    flat_inv[i] = np.nan
                    flat_ok[i] = False
        cond = _norm1(M) * _norm1(Minv)
        ok &= np.isfinite(cond) & (cond <= cond_cap)
        rho = -np.einsum("...jl,...l->...j", Minv, F)
    # an undriven system stays in the ground state even when M is singular
    undriven = ~np.any(F != 0, axis=-1)
    rho = np.where(undriven[..., None], 0j, rho)
    ok |= undriven
    rho = np.where(ok[..., None], rho, np.nan + 0j)
    return rho, ok


def steady_state_low_intensity(system: LinearSystem, cond_cap: float = COND_CAP) -> NDArray[np.complex128]:
    """Solve ``M rho + F = 0`` for a single realization.

    Raises
    ------
    ResonancePoleError
        If the condition estimate of ``M`` exceeds ``cond_cap``.  The
        eigenvalue of smallest modulus is attached to the exception.
    """
    M, F = np.asarray(system.M), np.asarray(system.F)
    if M.ndim != 2:
        raise ValueError("use solve_low_intensity_batch for batched systems")
    rho, ok = solve_low_intensity_batch(LinearSystem(M, F), cond_cap)
    if not ok:
        ev = np.linalg.eigvals(M)
        worst = ev[np.argmin(np.abs(ev))]
        raise ResonancePoleError(
            f"response matrix is singular near eigenvalue {worst:.6g}", eigenvalue=worst, matrix=M
        )
    # one step of iterative refinement keeps the residual at round-off level
    r = M @ rho + F
    rho = rho - np.linalg.solve(M, r)
    return rho


def cavity_amplitude(
    state: AtomState | NDArray[np.complex128],
    realization: Positions | AtomFields,
    params: SystemParams,
) -> complex | NDArray[np.complex128]:
    """Adiabatically eliminated field ``a = a_F + (i/kappa_bar) sum_j conj(G_j) rho_ge_j``."""
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    s = state.rho_ge if isinstance(state, AtomState) else np.asarray(state)
    if s.shape[-1] != f.n_atoms:
        raise ValueError("state and realization sizes differ")
    return params.a_free + 1j * params.inv_kappa_bar * np.sum(np.conj(f.G) * s, axis=-1)


# ---------------------------------------------------------------------------
# saturated equations
# ---------------------------------------------------------------------------


def saturated_rhs(
    s: NDArray[np.complex128],
    n: NDArray[np.float64],
    f: AtomFields,
    params: SystemParams,
) -> tuple[NDArray[np.complex128], NDArray[np.float64]]:
    """Time derivatives of ``rho_ge`` and ``rho_ee``.

    With ``z_j = 2 rho_ee_j - 1``, ``T_j = sum_{l != j} conj(G_l) rho_ge_l`` and
    the local drive ``W_j = G_j a_F + H_j``::

        d rho_ge_j = (i D_j - |G_j|^2/kb) rho_ge_j + G_j z_j T_j / kb - i z_j W_j
        d rho_ee_j = -2 |G_j|^2 Re(1/kb) rho_ee_j
                     - 2 Re[G_j conj(rho_ge_j) T_j / kb]
                     + 2 Re[i G_j conj(rho_ge_j) a_F] - 2 Re[i conj(H_j) rho_ge_j]
    """
    k = params.inv_kappa_bar
    aF = params.a_free
    G, D, H = f.G, f.D, f.H
    g2 = np.abs(G) ** 2
    Gs = np.conj(G) * s
    T = Gs.sum(axis=-1, keepdims=True) - Gs
    z = 2.0 * n - 1.0
    ds = (1j * D - g2 * k) * s + k * G * z * T - 1j * z * (G * aF + H)
    dn = (
        -2.0 * g2 * k.real * n
        - 2.0 * np.real(k * G * np.conj(s) * T)
        + 2.0 * np.real(1j * G * np.conj(s) * aF)
        - 2.0 * np.real(1j * np.conj(H) * s)
    )
    return ds, dn


def saturated_jacobian(
    s: NDArray[np.complex128],
    n: NDArray[np.float64],
    f: AtomFields,
    params: SystemParams,
) -> NDArray[np.complex128]:
    """Analytic Jacobian in the variables ``(rho_ge, rho_eg, rho_ee)``.

    Returns an array of shape ``(..., 3N, 3N)``; rows are the derivatives of
    ``(d rho_ge, d rho_eg, d rho_ee)``.
    """
    k = params.inv_kappa_bar
    aF = params.a_free
    G, D, H = f.G, f.D, f.H
    N = G.shape[-1]
    g2 = np.abs(G) ** 2
    Gs = np.conj(G) * s
    T = Gs.sum(axis=-1, keepdims=True) - Gs
    z = 2.0 * n - 1.0
    W = G * aF + H
    eye = np.eye(N, dtype=bool)

    # d(ds_j)/ds_l
    A = k * (G * z)[..., :, None] * np.conj(G)[..., None, :]
    A = np.where(eye, 0, A)
    A[..., np.arange(N), np.arange(N)] = 1j * D - g2 * k
    # d(ds_j)/dn_j
    C = 2.0 * (k * G * T - 1j * W)
    # d(dn_j)/ds_l
    E = -k * (G * np.conj(s))[..., :, None] * np.conj(G)[..., None, :]
    E = np.where(eye, 0, E)
    E[..., np.arange(N), np.arange(N)] = -np.conj(k) * np.conj(G) * np.conj(T) - 1j * np.conj(W)

    shape = G.shape[:-1] + (3 * N, 3 * N)
    J = np.zeros(shape, dtype=complex)
    diag = np.arange(N)
    J[..., :N, :N] = A
    J[..., N : 2 * N, N : 2 * N] = np.conj(A)
    J[..., diag, 2 * N + diag] = C
    J[..., N + diag, 2 * N + diag] = np.conj(C)
    J[..., 2 * N :, :N] = E
    J[..., 2 * N :, N : 2 * N] = np.conj(E)
    J[..., 2 * N + diag, 2 * N + diag] = -2.0 * g2 * k.real
    return J


def real_jacobian(Jc: NDArray[np.complex128]) -> NDArray[np.float64]:
    """Map a ``(rho_ge, rho_eg, rho_ee)`` Jacobian to ``(Re, Im, rho_ee)`` variables."""
    N = Jc.shape[-1] // 3
    A = Jc[..., :N, :N]
    C = Jc[..., :N, 2 * N :]
    E = Jc[..., 2 * N :, :N]
    Dn = Jc[..., 2 * N :, 2 * N :]
    B = Jc[..., :N, N : 2 * N]
    Ep = Jc[..., 2 * N :, N : 2 * N]
    du = A + B
    dv = 1j * (A - B)
    shape = Jc.shape[:-2] + (3 * N, 3 * N)
    Jr = np.empty(shape)
    Jr[..., :N, :N] = du.real
    Jr[..., :N, N : 2 * N] = dv.real
    Jr[..., :N, 2 * N :] = C.real
    Jr[..., N : 2 * N, :N] = du.imag
    Jr[..., N : 2 * N, N : 2 * N] = dv.imag
    Jr[..., N : 2 * N, 2 * N :] = C.imag
    Jr[..., 2 * N :, :N] = (E + Ep).real
    Jr[..., 2 * N :, N : 2 * N] = (1j * (E - Ep)).real
    Jr[..., 2 * N :, 2 * N :] = Dn.real
    return Jr


def _real_rhs(y: NDArray, f: AtomFields, params: SystemParams) -> NDArray[np.float64]:
    st = AtomState.from_real(y)
    ds, dn = saturated_rhs(st.rho_ge, st.rho_ee, f, params)
    return np.concatenate([ds.real, ds.imag, dn], axis=-1)


def max_rate(f: AtomFields, params: SystemParams) -> float:
    """Largest rate in the saturated equations.

    Uses ``N G0^2 |1/kappa_bar|`` for the collective term, which bounds the
    cavity Lamb shift as well as the emission rate.
    """
    N = f.n_atoms
    rates = [
        float(np.max(np.abs(f.D), initial=0.0)),
        N * params.coupling_amp**2 * abs(params.inv_kappa_bar),
        params.coupling_amp * abs(params.a_free),
        float(np.max(np.abs(f.H), initial=0.0)),
    ]
    return max(rates)


def _rate_scale(f: AtomFields, params: SystemParams) -> NDArray[np.float64]:
    """Per-realization rate used to make residuals dimensionless."""
    k = abs(params.inv_kappa_bar)
    N = f.n_atoms
    g2 = np.abs(f.G) ** 2
    W = np.abs(f.drive(params))
    scale = np.maximum.reduce(
        [np.max(np.abs(f.D), axis=-1), N * k * np.max(g2, axis=-1), np.max(W, axis=-1)]
    )
    return np.maximum(scale, 1e-300)


def evolve_saturated(
    state: AtomState,
    realization: Positions | AtomFields,
    params: SystemParams,
    dt: float,
    t_end: float,
    method: str = "rk45",
    rtol: float = 1e-10,
    atol: float = 1e-13,
    check_step: bool = True,
) -> Trajectory:
    """Integrate the saturated equations from ``state`` up to ``t_end``.

    Parameters
    ----------
    dt : float
        Fixed step for ``method="rk4"``, maximum step for ``"rk45"``.  It must
        satisfy ``dt <= 0.05 / max_rate``.
    method : {"rk45", "rk4"}
        Adaptive Dormand-Prince (``scipy.integrate.solve_ivp``) or fixed-step
        classical Runge-Kutta for bitwise-reproducible runs.

    Raises
    ------
    StepSizeError
        ``dt`` too coarse for the fastest rate.
    IntegrationError
        The solution became non-finite.
    """
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    if f.G.ndim != 1:
        raise ValueError("evolve_saturated handles one realization at a time")
    if not (dt > 0 and t_end >= 0):
        raise ValueError("need dt > 0 and t_end >= 0")
    fastest = max_rate(f, params)
    if check_step and fastest > 0 and dt > 0.05 / fastest:
        raise StepSizeError(
            f"dt={dt:.3g} exceeds 0.05/max_rate={0.05 / fastest:.3g}", max_rate=fastest
        )
    y0 = state.to_real()

    def rhs(_t, y):
        return _real_rhs(y, f, params)

    if method == "rk45":
        sol = solve_ivp(
            rhs, (0.0, t_end), y0, method="RK45", rtol=rtol, atol=atol, max_step=dt, first_step=min(dt, t_end) or None
        )
        if not sol.success:
            raise IntegrationError(sol.message, t=sol.t[-1])
        t, y = sol.t, sol.y
    elif method == "rk4":
        n_steps = int(np.ceil(t_end / dt)) if t_end > 0 else 0
        h = t_end / n_steps if n_steps else 0.0
        y = np.empty((y0.size, n_steps + 1))
        y[:, 0] = y0
        cur = y0.copy()
        for i in range(n_steps):
            k1 = rhs(0, cur)
            k2 = rhs(0, cur + 0.5 * h * k1)
            k3 = rhs(0, cur + 0.5 * h * k2)
            k4 = rhs(0, cur + h * k3)
            cur = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            y[:, i + 1] = cur
        t = np.linspace(0.0, t_end, n_steps + 1)
    else:
        raise ValueError(f"unknown method {method!r}")

    if not np.all(np.isfinite(y)):
        bad = int(np.argmax(~np.all(np.isfinite(y), axis=0)))
        raise IntegrationError("non-finite state during integration", t=float(t[bad]))
    N = f.n_atoms
    pops = y[2 * N :]
    bounds_ok = bool(np.all((pops >= -POSITIVITY_TOL) & (pops <= 1 + POSITIVITY_TOL)))
    final = AtomState.from_real(y[:, -1])
    deriv = rhs(0, y[:, -1])
    converged = bool(np.linalg.norm(deriv) < 1e-9 * max(1.0, np.linalg.norm(y[:, -1])))
    return Trajectory(t, y, final, converged, bounds_ok)


# ---------------------------------------------------------------------------
# saturated steady state
# ---------------------------------------------------------------------------


def _clamped_guess(s_lin: NDArray[np.complex128]) -> AtomState:
    """Project a low-intensity coherence onto a pure single-atom state."""
    s = np.where(np.isfinite(s_lin), s_lin, 0j)
    mag = np.abs(s)
    cap = 0.5 * (1 - 1e-6)
    s = np.where(mag > cap, s * (cap / np.maximum(mag, 1e-300)), s)
    n = 0.5 * (1.0 - np.sqrt(np.maximum(1.0 - 4.0 * np.abs(s) ** 2, 0.0)))
    return AtomState(s, n)


def _newton_batch(
    y: NDArray[np.float64],
    f: AtomFields,
    params: SystemParams,
    tol: float,
    max_iter: int,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.int64]]:
    """Damped Newton on a batch ``(R, 3N)``; returns states, scaled residuals, iterations."""
    y = y.copy()
    scale = _rate_scale(f, params)
    res = np.max(np.abs(_real_rhs(y, f, params)), axis=-1) / scale
    iters = np.zeros(y.shape[0], dtype=np.int64)
    active = res > tol
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        fa = AtomFields(f.G[idx], f.D[idx], f.H[idx])
        ya = y[idx]
        st = AtomState.from_real(ya)
        J = real_jacobian(saturated_jacobian(st.rho_ge, st.rho_ee, fa, params))
        r = _real_rhs(ya, fa, params)
        with np.errstate(all="ignore"):
            # lstsq-free regularisation: tiny Tikhonov shift keeps exactly
            # singular (dark) directions from producing infinities
            shift = 1e-14 * scale[idx][:, None, None] * np.eye(J.shape[-1])
            try:
                step = -np.linalg.solve(J - shift, r[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.empty_like(r)
                for i in range(len(idx)):
                    step[i] = -np.linalg.lstsq(J[i], r[i], rcond=None)[0]
        step = np.where(np.isfinite(step), step, 0.0)
        r0 = res[idx]
        lam = np.ones(len(idx))
        accepted = np.zeros(len(idx), bool)
        y_new = ya.copy()
        res_new = r0.copy()
        for _half in range(12):
            todo = ~accepted
            if not todo.any():
                break
            trial = ya[todo] + lam[todo, None] * step[todo]
            ft = AtomFields(fa.G[todo], fa.D[todo], fa.H[todo])
            rt = np.max(np.abs(_real_rhs(trial, ft, params)), axis=-1) / scale[idx][todo]
            good = np.isfinite(rt) & (rt < (1 - 1e-4 * lam[todo]) * r0[todo])
            t_idx = np.flatnonzero(todo)
            y_new[t_idx[good]] = trial[good]
            res_new[t_idx[good]] = rt[good]
            accepted[t_idx[good]] = True
            lam[t_idx[~good]] *= 0.5
        # rows that could not decrease the residual are stuck; stop them
        y[idx] = y_new
        res[idx] = res_new
        iters[idx] += 1
        stuck = ~accepted
        done = res[idx] <= tol
        active[idx[done | stuck]] = False
    return y, res, iters


def _is_stable(y: NDArray, f: AtomFields, params: SystemParams) -> NDArray[np.bool_]:
    st = AtomState.from_real(y)
    J = real_jacobian(saturated_jacobian(st.rho_ge, st.rho_ee, f, params))
    ev = np.linalg.eigvals(J)
    scale = _rate_scale(f, params)
    return np.max(ev.real, axis=-1) <= 1e-9 * scale


def _subset(f: AtomFields, idx: NDArray) -> AtomFields:
    return AtomFields(f.G[idx], f.D[idx], f.H[idx])


def _scaled_drive(f: AtomFields, params: SystemParams, eps: float) -> tuple[AtomFields, SystemParams]:
    return AtomFields(f.G, f.D, f.H * eps), params.with_(eta=params.eta * eps)


def _accept(y: NDArray, res: NDArray, tol: float) -> NDArray[np.bool_]:
    return (res <= tol) & ~np.any(AtomState.from_real(y).violations(), axis=-1)


def _continue_drive(
    f: AtomFields,
    params: SystemParams,
    tol: float,
    max_iter: int,
    n_steps: int = 12,
    eps0: float = 1e-3,
    max_depth: int = 2,
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Follow the zero-drive branch by scaling every drive from ``eps0`` to one.

    Rows whose Newton step fails at some drive level are retried with the
    interval split geometrically, up to ``max_depth`` times.  Rows still
    failing are returned with ``ok = False``; this happens when the branch
    connected to the ground state folds back before full drive.
    """
    fe, pe = _scaled_drive(f, params, eps0)
    rho, _ = solve_low_intensity_batch(_linear_system(fe, pe))
    y, res, _ = _newton_batch(_clamped_guess(rho).to_real(), fe, pe, tol * 1e-2, max_iter)
    ok = _accept(y, res, tol)

    def step(rows: NDArray, y0: NDArray, e0: float, e1: float, depth: int):
        fs = _subset(f, rows)
        fe, pe = _scaled_drive(fs, params, e1)
        y1, r1, _ = _newton_batch(y0, fe, pe, tol * 1e-2, max_iter)
        good = _accept(y1, r1, tol)
        if depth < max_depth and not good.all():
            bad = np.flatnonzero(~good)
            em = np.sqrt(e0 * e1)
            ym, okm = step(rows[bad], y0[bad], e0, em, depth + 1)
            y2, ok2 = step(rows[bad], ym, em, e1, depth + 1)
            y1[bad] = y2
            good[bad] = okm & ok2
        return y1, good

    levels = np.geomspace(eps0, 1.0, n_steps + 1)
    rows = np.flatnonzero(ok)
    for e0, e1 in zip(levels[:-1], levels[1:]):
        if rows.size == 0:
            break
        y_new, good = step(rows, y[rows], e0, e1, 0)
        y[rows] = y_new
        ok[rows[~good]] = False
        rows = rows[good]
    return y, ok


def _relax_batch(
    f: AtomFields,
    params: SystemParams,
    tol: float = 1e-7,
    max_time: float | None = None,
    y0: NDArray | None = None,
) -> NDArray[np.float64]:
    """Relax a batch from the ground state with vectorized fixed-step RK4.

    The step is the inverse fastest rate, inside the RK4 stability region
    and accurate enough to find the attractor, which Newton then polishes.  Integration stops once every
    row's scaled residual is below ``tol`` or ``max_time`` is reached.
    """
    R, N = f.G.shape
    y = np.zeros((R, 3 * N)) if y0 is None else y0.copy()
    if R == 0:
        return y
    fastest = max(max_rate(_subset(f, np.arange(R)), params), 1e-300)
    h = 1.0 / fastest
    scale = _rate_scale(f, params)
    k = params.inv_kappa_bar
    g2 = np.abs(f.G) ** 2
    slow = 2.0 * k.real * np.min(np.where(g2 > 0, g2, np.inf), axis=-1)
    slow = np.where(np.isfinite(slow), slow, fastest * 1e-6)
    horizon = max_time if max_time is not None else 200.0 / max(float(np.min(slow)), 1e-12 * fastest)
    active = np.ones(R, bool)
    t = 0.0
    check_every = 200
    while t < horizon and active.any():
        idx = np.flatnonzero(active)
        fa = _subset(f, idx)
        cur = y[idx]
        for _ in range(check_every):
            k1 = _real_rhs(cur, fa, params)
            k2 = _real_rhs(cur + 0.5 * h * k1, fa, params)
            k3 = _real_rhs(cur + 0.5 * h * k2, fa, params)
            k4 = _real_rhs(cur + h * k3, fa, params)
            cur = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += check_every * h
        if not np.all(np.isfinite(cur)):
            raise IntegrationError("non-finite state during relaxation", t=t)
        y[idx] = cur
        res = np.max(np.abs(_real_rhs(cur, fa, params)), axis=-1) / scale[idx]
        active[idx[res <= tol]] = False
    return y


def steady_state_saturated_batch(
    fields: AtomFields,
    params: SystemParams,
    tol: float = 1e-10,
    max_iter: int = 100,
    check_stability: bool = True,
) -> tuple[AtomState, NDArray[np.bool_]]:
    """Saturated steady states for a batch of realizations.

    The state is found by continuation in the drive strength from zero, i.e.
    the state reached when the pumps are switched on adiabatically.  Rows
    where that branch ends before full drive, or ends on a linearly unstable
    state, are relaxed in time from the ground state and polished by Newton.

    Returns
    -------
    state : AtomState
    ok : ndarray of bool
        ``False`` where no physical steady state was found.
    """
    single = fields.G.ndim == 1
    f = AtomFields(np.atleast_2d(fields.G), np.atleast_2d(fields.D), np.atleast_2d(fields.H))
    R, N = f.G.shape
    y = np.zeros((R, 3 * N))
    ok = np.zeros(R, bool)
    driven = np.any(f.drive(params) != 0, axis=-1)
    ok[~driven] = True
    rows = np.flatnonzero(driven)
    if rows.size:
        fr = _subset(f, rows)
        yr, okr = _continue_drive(fr, params, tol, 25)
        if check_stability and okr.any():
            gi = np.flatnonzero(okr)
            okr[gi[~_is_stable(yr[gi], _subset(fr, gi), params)]] = False
        bad = np.flatnonzero(~okr)
        if bad.size:
            fb = _subset(fr, bad)
            yb = _relax_batch(fb, params)
            yb, rb, _ = _newton_batch(yb, fb, params, tol * 1e-2, max_iter)
            yr[bad] = yb
            okr[bad] = _accept(yb, rb, tol)
        y[rows] = yr
        ok[rows] = okr
    out = AtomState.from_real(y)
    if single:
        return AtomState(out.rho_ge[0], out.rho_ee[0]), ok
    return out, ok


def steady_state_saturated(
    realization: Positions | AtomFields,
    params: SystemParams,
    tol: float = 1e-10,
    max_iter: int = 100,
    check_bistability: bool = False,
    full_output: bool = False,
) -> AtomState | SteadyState:
    """Steady state of the saturated equations for one realization.

    Damped Newton iterations follow the steady state from zero drive up to
    the configured drive, starting from the low-intensity solution projected
    onto the Bloch ball.  If that branch ends, or ends on an unstable state,
    the realization is relaxed in time from the ground state and polished by
    Newton.  With ``check_bistability`` both routes always run; if they end
    more than ``1e-6`` apart the result is flagged ``bistable`` and carries
    the relaxed state in ``alternate``.

    Residuals are measured in units of the largest rate of the problem.

    Raises
    ------
    ConvergenceError
        Neither route produced a physical steady state.
    """
    f = realization if isinstance(realization, AtomFields) else atom_fields(realization, params)
    if f.G.ndim != 1:
        raise ValueError("use steady_state_saturated_batch for batches")
    fb = AtomFields(f.G[None], f.D[None], f.H[None])
    N = f.n_atoms
    if not np.any(f.drive(params)):
        result = SteadyState(AtomState.ground(N), 0.0, "trivial")
        return result if full_output else result.state

    y, ok = _continue_drive(fb, params, tol, 25)
    stable = bool(ok[0]) and bool(_is_stable(y, fb, params)[0])
    scale = float(_rate_scale(fb, params)[0])

    def residual(yy):
        return float(np.max(np.abs(_real_rhs(yy, fb, params))) / scale)

    result = None
    if stable:
        result = SteadyState(AtomState.from_real(y[0]), residual(y), "continuation")
    if result is None or check_bistability:
        yr = _relax_batch(fb, params)
        yr, rr, it = _newton_batch(yr, fb, params, tol * 1e-2, max_iter)
        relaxed_ok = bool(_accept(yr, rr, tol)[0])
        if result is None:
            if not relaxed_ok:
                raise ConvergenceError(
                    "saturated steady state did not converge", residual=float(rr[0])
                )
            result = SteadyState(AtomState.from_real(yr[0]), float(rr[0]), "relax", int(it[0]))
        elif relaxed_ok:
            gap = float(np.max(np.abs(yr[0] - y[0])))
            if gap > 1e-6:
                result.bistable = True
                result.alternate = AtomState.from_real(yr[0])
                warnings.warn(
                    f"bistability candidate: continuation and relaxation differ by {gap:.3g}",
                    RuntimeWarning,
                    stacklevel=2,
                )
    return result if full_output else result.state
