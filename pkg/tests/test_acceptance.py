"""Acceptance criteria 1-11.

Every test prints exactly one ``CRITERION n: PASS|FAIL ...`` line (shown even
without ``-s``) and then asserts the same condition.  Tolerances are the
stated ones; where a criterion leaves a definition open, the docstring fixes
it before any numbers are looked at.
"""

import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from cavity_sed.dynamics import (
    AtomState,
    atom_fields,
    build_linear_system,
    cavity_amplitude,
    real_jacobian,
    saturated_jacobian,
    saturated_rhs,
    steady_state_low_intensity,
    steady_state_saturated,
)
from cavity_sed.exact import SpatialGrid, exact_point, exact_sweep
from cavity_sed.experiment import Experiment
from cavity_sed.model import (
    ConstantDetuning,
    LatticeConfig,
    LinearDetuning,
    PumpOff,
    RectWindowPump,
    StepDetuning,
    SystemParams,
)
from cavity_sed.modes import distribution_peak, dressed_scan, eigenmodes, ensemble_modes
from cavity_sed.observables import SweepSpec, comb_experiment, find_peaks, sweep_spectrum, transverse_targeting
from cavity_sed.sampling import Realization, draw_ensemble

WR = 1.0 / 342.0  # recoil frequency for kappa = 342 omega_R

# eight-atom Mott insulator of the eigenmode and targeting studies
FIG2_LATTICE = LatticeConfig.regular(8, 0.08)
FIG2_PARAMS = SystemParams(delta_c=100.0, eta=0.0, coupling_amp=0.9, detuning=LinearDetuning(0.0, 1.4e-3))

# two-atom comparison with the exact solution
PAIR_LATTICE = LatticeConfig.regular(2, 0.08)
PAIR_DCA = -100.0


def _pair_params(eta, detuning=None):
    return SystemParams(
        delta_c=-PAIR_DCA, eta=eta, coupling_amp=0.9, detuning=detuning or ConstantDetuning(0.0)
    )


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return _report


def _spacing_spread(positions):
    """``(max - min) / mean`` of adjacent spacings."""
    s = np.diff(np.sort(np.asarray(positions, float)))
    return float((s.max() - s.min()) / s.mean())


# ---------------------------------------------------------------------------


def test_criterion_01_single_atom_analytics(report):
    p = SystemParams(delta_c=-2.0, eta=0.3, coupling_amp=1.1, detuning=ConstantDetuning(0.4))
    r = Realization.pinned([0.13])
    g = 1.1 * np.sin(2 * np.pi * 0.13)
    k = p.inv_kappa_bar
    s_exact = 1j * g * p.a_free / (g**2 * k - 0.4j)
    a_exact = p.a_free + 1j * k * g * s_exact

    def run():
        s = steady_state_low_intensity(build_linear_system(r, p))
        return s, cavity_amplitude(s, r, p)

    s, a = run()
    times = []
    for _ in range(200):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    err = max(abs(s[0] / s_exact - 1), abs(a / a_exact - 1))
    t_ms = 1e3 * float(np.median(times))
    report(1, err < 1e-12 and t_ms < 1.0, f"relative error {err:.2e} (< 1e-12), median runtime {t_ms:.3f} ms (< 1 ms)")


def test_criterion_02_rank_one_spectrum(report):
    p = SystemParams(delta_c=7.0, coupling_amp=0.8, detuning=ConstantDetuning(0.3))
    k = p.inv_kappa_bar
    worst = 0.0
    for n in (2, 8, 32):
        # integer-plus-quarter positions all sit on the same antinode
        r = Realization.pinned(0.25 + np.arange(n))
        lam = np.sort_complex(eigenmodes(build_linear_system(r, p).M).eigenvalues)
        g2 = abs(np.sin(2 * np.pi * 0.25) * 0.8) ** 2
        expect = np.sort_complex(np.array([0.3j - n * g2 * k] + [0.3j] * (n - 1)))
        worst = max(worst, float(np.max(np.abs(lam - expect))))
    report(2, worst < 1e-10, f"max eigenvalue deviation {worst:.2e} over N in (2, 8, 32) (< 1e-10)")


def test_criterion_03_subradiant_darkness(report):
    p = FIG2_PARAMS.with_(detuning=LinearDetuning(0.0, 0.0))
    m = ensemble_modes(Experiment(p, FIG2_LATTICE, n_realizations=1000, seed=3))
    g, _, _ = m.subradiant_modes()
    ratio = float(np.max(g)) / m.unit
    ok = g.shape == (1000, 7) and ratio < 1e-10
    report(3, ok, f"{g.shape[1]} subradiant modes per realization, max Gamma/Gamma_u {ratio:.2e} (< 1e-10)")


def test_criterion_04_fig2_eigenmodes(report):
    """Definitions.

    * clusters: the seven frequency-ranked subradiant modes; separable when the
      99th percentile of one rank lies below the 1st percentile of the next;
      spacing spread is ``(max - min) / mean`` of adjacent median frequencies.
    * ratio: median subradiant rate (all ranks pooled) over median superradiant
      rate; "~1e-3" is read as within one decade, ``1e-4 <= ratio <= 1e-2``.
    * targeted mode: the centermost rank (3 of 0..6).  Decay rates are stored
      as ``-2 Re(lambda)``; the reference value is quoted in the convention
      ``-Re(lambda)``, so the KDE peak is halved before comparison.
    """
    t0 = time.perf_counter()
    m = ensemble_modes(Experiment(FIG2_PARAMS, FIG2_LATTICE, n_realizations=10_000, seed=1))
    wall = time.perf_counter() - t0
    g_sub, d_sub, _ = m.subradiant_modes()
    g_sr, _ = m.superradiant_modes()
    medians = np.median(d_sub, axis=0)
    spread = _spacing_spread(medians)
    ratio = float(np.median(g_sub) / np.median(g_sr))
    peak = 0.5 * distribution_peak(g_sub[:, 3] / m.unit)
    ok = (
        g_sub.shape[1] == 7
        and m.separable()
        and spread < 0.10
        and 1e-4 <= ratio <= 1e-2
        and abs(peak / 8.5e-4 - 1) <= 0.25
        and wall < 600
    )
    report(
        4,
        ok,
        f"separable={m.separable()} clusters={g_sub.shape[1]} spacing spread {spread:.3f} (< 0.10), "
        f"sub/super ratio {ratio:.2e} (1e-4..1e-2), targeted peak {peak:.3e} Gamma_u (8.5e-4 +-25%), "
        f"{wall:.1f} s",
    )


def test_criterion_05_targeting(report):
    """The window is the 5th to 95th percentile of the resonance positions
    ``Delta_0 = -delta_3`` of the targeted (centermost) subradiant mode.
    """
    p = FIG2_PARAMS.with_(pump=RectWindowPump(1.0, -0.5, 0.5))
    exp = Experiment(p, FIG2_LATTICE, n_realizations=2000, seed=2)
    _, d_sub, _ = ensemble_modes(exp).subradiant_modes()
    lo, hi = np.percentile(-d_sub[:, 3], [5, 95])
    res = transverse_targeting(exp, SweepSpec("atom_detuning", lo, hi, 41, delta_ca=-100.0))
    th_sub = res.theta["subradiant_3"]
    th_sr = res.theta["superradiant"]
    ok = bool(np.all(th_sub > 0.9) and np.all(th_sr < 0.1))
    report(
        5,
        ok,
        f"window [{lo / WR:.3f}, {hi / WR:.3f}] omega_R: min Theta_sub {np.min(th_sub):.3f} (> 0.9), "
        f"max Theta_super {np.max(th_sr):.3f} (< 0.1)",
    )


def _low_intensity_z(spec, params, seed):
    ex = exact_sweep(spec, PAIR_LATTICE, params)
    sc = sweep_spectrum(spec, Experiment(params, PAIR_LATTICE, n_realizations=100_000, seed=seed))
    z_tot = np.abs(ex.total - sc.total) / sc.se_total
    z_coh = np.abs(ex.coherent - sc.coherent) / sc.se_coherent
    return float(np.max(z_tot)), float(np.max(z_coh))


def test_criterion_06_low_intensity_equivalence(report):
    """Both scans run at eta = 1e-6 (saturation below 1e-9); total and
    coherent intensities are compared point by point.  The subradiant scan
    uses the 0.5 omega_R step between the two wells and covers the
    ensemble resonance near ``-0.26 omega_R``.
    """
    eta = 1e-6
    sr = SweepSpec("atom_detuning", 2 * WR, 7.5 * WR, 23, delta_ca=PAIR_DCA)
    sub = SweepSpec("atom_detuning", -0.45 * WR, -0.05 * WR, 21, delta_ca=PAIR_DCA)
    z_sr = _low_intensity_z(sr, _pair_params(eta), seed=2)
    z_sub = _low_intensity_z(sub, _pair_params(eta, StepDetuning(0.0, 0.5 * WR)), seed=2)
    ok = max(z_sr) < 3 and max(z_sub) < 3
    report(
        6,
        ok,
        f"max |z| superradiant scan total {z_sr[0]:.2f} coherent {z_sr[1]:.2f}; "
        f"subradiant scan total {z_sub[0]:.2f} coherent {z_sub[1]:.2f} (< 3)",
    )


def test_criterion_07_saturation_ladder(report):
    """Peak saturation: coarse scan of Delta_0 in 0..10 omega_R, then a bounded
    scalar maximization around the best grid point.
    """
    grid = SpatialGrid.for_lattice(PAIR_LATTICE, h=0.01)

    def sat(eta, v):
        p = SystemParams(delta_c=v - PAIR_DCA, eta=eta, coupling_amp=0.9, detuning=ConstantDetuning(v))
        return exact_point(PAIR_LATTICE, p, grid)[0].saturation

    targets = {0.05: 0.2, 0.1: 0.3, 0.2: 0.42, 0.4: 0.47, 1.0: 0.49}
    vs = np.arange(0.0, 10.01, 0.5) * WR
    found = {}
    for eta in targets:
        s = [sat(eta, v) for v in vs]
        i = int(np.argmax(s))
        r = minimize_scalar(
            lambda v: -sat(eta, v),
            bounds=(vs[max(i - 1, 0)], vs[min(i + 1, len(vs) - 1)]),
            method="bounded",
            options={"xatol": 1e-3 * WR},
        )
        found[eta] = max(-r.fun, max(s))
    ok = all(abs(found[e] - targets[e]) <= 0.05 for e in targets)
    report(7, ok, "peak saturations " + ", ".join(f"{e}: {found[e]:.3f} ({targets[e]})" for e in targets) + " (+-0.05)")


def test_criterion_08_quantum_structure(report):
    """Profiles are total intracavity intensity at eta = 0.05 over
    ``Delta_0`` in 2..7.5 omega_R.  Local maxima are interior points
    higher than both neighbours.  The semiclassical spectrum "does not
    reproduce the lower peak" when it has no local maximum below the
    midpoint of the two exact peaks; it "tracks the higher peak" when its
    highest maximum is within 15% of the exact upper peak's FWHM.
    """
    spec = SweepSpec("atom_detuning", 2 * WR, 7.5 * WR, 56, intensity="saturated", delta_ca=PAIR_DCA)
    p = _pair_params(0.05)
    ex = exact_sweep(spec, PAIR_LATTICE, p)
    sc = sweep_spectrum(spec, Experiment(p, PAIR_LATTICE, n_realizations=2000, seed=11))
    x = spec.values / WR
    ex_peaks = find_peaks(x, ex.total, threshold=0.0)
    sc_peaks = find_peaks(x, sc.total, threshold=0.0)
    two = len(ex_peaks) == 2
    if two:
        lower, upper = ex_peaks
        mid = 0.5 * (lower.position + upper.position)
        no_lower = all(q.position > mid for q in sc_peaks)
        main = max(sc_peaks, key=lambda q: q.height)
        mismatch = abs(main.position - upper.position) / upper.width
        detail = (
            f"exact maxima at {lower.position:.2f}, {upper.position:.2f} omega_R (FWHM {upper.width:.2f}); "
            f"semiclassical maxima {[round(q.position, 2) for q in sc_peaks]}; "
            f"lower peak absent={no_lower}; upper mismatch {mismatch:.2f} FWHM (< 0.15)"
        )
        ok = no_lower and mismatch < 0.15
    else:
        ok = False
        detail = f"exact profile has {len(ex_peaks)} local maxima (expected 2)"
    report(8, ok, detail)


def test_criterion_09_comb(report):
    """Teeth are peaks above five times the median intensity; the spacing
    spread is ``(max - min) / mean`` of adjacent tooth spacings; incoherent
    fractions are taken at each sampler's highest peak.
    """
    dca = -2257.92
    p = SystemParams(delta_c=0.0, eta=2.0, coupling_amp=168.0, detuning=ConstantDetuning(dca), pump=PumpOff())
    lat = LatticeConfig.regular(12, 0.02, coupled_mask=(False,) * 3 + (True,) * 6 + (False,) * 3)
    spec = SweepSpec("cavity_detuning", -180.0, 30.0, 841, delta_ca=dca)
    res = comb_experiment(Experiment(p, lat, n_realizations=4000, seed=3), spec)

    def frac(table, peaks):
        i = int(np.argmin(np.abs(table.sweep_value - max(peaks, key=lambda q: q.height).position)))
        return float(table.incoherent[i] / table.total[i])

    n_mi, n_ind = len(res.mi_peaks), len(res.independent_peaks)
    spread = _spacing_spread([q.position for q in res.independent_peaks]) if n_ind >= 3 else np.inf
    coh_ok = all(np.all(t.coherent <= t.total * (1 + 1e-12)) for t in (res.mi, res.independent))
    f_mi = frac(res.mi, res.mi_peaks) if n_mi else np.nan
    f_ind = frac(res.independent, res.independent_peaks) if n_ind else np.nan
    ok = n_mi == 1 and n_ind >= 5 and spread < 0.15 and coh_ok and f_ind > f_mi
    report(
        9,
        ok,
        f"MI peaks {n_mi} (1), independent teeth {n_ind} (>= 5), spacing spread {spread:.3f} (< 0.15), "
        f"coherent<=total {coh_ok}, incoherent fraction independent {f_ind:.3f} vs MI {f_mi:.3f}",
    )


def test_criterion_10_jacobian(report):
    rng = np.random.default_rng(10)
    worst = 0.0
    for trial in range(20):
        n = int(rng.integers(1, 5))
        lat = LatticeConfig.regular(n, 0.08)
        p = SystemParams(
            delta_c=float(rng.uniform(-20, 20)),
            eta=float(rng.uniform(0.1, 3.0)),
            coupling_amp=float(rng.uniform(0.3, 1.5)),
            detuning=ConstantDetuning(float(rng.uniform(-0.5, 0.5))),
        )
        r = draw_ensemble(lat, "mi", 100 + trial, 1)[0]
        f = atom_fields(r, p)
        st = steady_state_saturated(r, p)
        J = real_jacobian(saturated_jacobian(st.rho_ge, st.rho_ee, f, p))
        y0 = st.to_real()

        def F(y):
            s = AtomState.from_real(y)
            ds, dn = saturated_rhs(s.rho_ge, s.rho_ee, f, p)
            return np.concatenate([ds.real, ds.imag, dn])

        eps = 1e-6
        num = np.column_stack([(F(y0 + eps * e) - F(y0 - eps * e)) / (2 * eps) for e in np.eye(y0.size)])
        worst = max(worst, float(np.linalg.norm(num - J) / np.linalg.norm(J)))
    report(10, worst < 1e-6, f"max relative Frobenius error {worst:.2e} over 20 steady states (< 1e-6)")


def test_criterion_11_dressed_scan(report):
    """Splitting: one atom on an antinode at zero detuning, G0 = 10 kappa so
    that the damping correction ``2 sqrt(G0^2 - kappa^2/4)`` is 0.1%.
    Convergence: with ``(kappa, Delta_c)`` scaled by s in (1, 10, 100) and
    the coupling fixed, the atomic dressed eigenvalues approach the
    eigenvalues of M; "quadratic order" means the error falls by at least a
    factor 10^1.8 per decade of s.
    """
    g0 = 10.0
    p = SystemParams(coupling_amp=g0, detuning=ConstantDetuning(0.0))
    dc = np.linspace(-5, 5, 20001)
    lam = dressed_scan(Realization.pinned([0.25]), p, dc)
    split = float(np.min(lam[:, 1].imag - lam[:, 0].imag))
    split_err = abs(split / (2 * g0) - 1)

    r = Realization.pinned([0.1, 0.27, 0.6])
    errs = []
    for s in (1.0, 10.0, 100.0):
        ps = SystemParams(kappa=10.0 * s, delta_c=30.0 * s, coupling_amp=1.0, detuning=LinearDetuning(0.05, 0.2))
        M_eigs = np.sort_complex(eigenmodes(build_linear_system(r, ps).M).eigenvalues)
        dl = dressed_scan(r, ps, [ps.delta_c])[0]
        atomic = np.sort_complex(_atomic_branch(dl, ps))
        errs.append(float(np.max(np.abs(atomic - M_eigs))))
    slopes = -np.diff(np.log10(errs))
    ok = split_err < 0.01 and np.all(slopes >= 1.8)
    report(
        11,
        ok,
        f"minimum splitting {split:.4f} vs 2 G0 = {2 * g0} (rel {split_err:.2e}, < 0.01); "
        f"eigenvalue errors {', '.join(f'{e:.2e}' for e in errs)} (decades per x10: {', '.join(f'{x:.2f}' for x in slopes)})",
    )


def _atomic_branch(lam, params):
    """Drop the dressed eigenvalue closest to the bare cavity pole."""
    cav = complex(-params.kappa, params.delta_c)
    i = int(np.argmin(np.abs(lam - cav)))
    return np.delete(lam, i)
