import numpy as np
import pytest

from cavity_sed.dynamics import build_linear_system
from cavity_sed.experiment import Experiment
from cavity_sed.model import ConstantDetuning, LatticeConfig, LinearDetuning, SystemParams
from cavity_sed.modes import (
    SUBRADIANT,
    SUPERRADIANT,
    cavity_overlap,
    classify_modes,
    distribution_peak,
    dressed_scan,
    eigenmodes,
    ensemble_mode_histogram,
    ensemble_modes,
    fix_phase,
    mode_overlap,
)
from cavity_sed.sampling import Realization


def test_eigenvectors_normalised_and_phase_fixed():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    ms = eigenmodes(M)
    assert np.allclose(np.linalg.norm(ms.vectors, axis=0), 1.0)
    pivots = ms.vectors[np.argmax(np.abs(ms.vectors), axis=0), np.arange(5)]
    assert np.allclose(pivots.imag, 0.0, atol=1e-14) and np.all(pivots.real > 0)
    assert np.all(np.diff(ms.frequency) >= 0)
    assert np.allclose(M @ ms.vectors, ms.vectors * ms.eigenvalues)


def test_fix_phase_idempotent():
    v = fix_phase(np.array([[1j, 2.0], [-3.0, 1j]]))
    assert np.allclose(fix_phase(v), v)


def test_eigenmodes_rejects_bad_input():
    with pytest.raises(ValueError):
        eigenmodes(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        eigenmodes(np.array([[np.nan]]))


def test_single_atom_mode():
    p = SystemParams(delta_c=3.0, coupling_amp=1.2, detuning=ConstantDetuning(0.4))
    r = Realization.pinned([0.2])
    ms = eigenmodes(build_linear_system(r, p).M)
    g2 = (1.2 * np.sin(2 * np.pi * 0.2)) ** 2
    k = p.inv_kappa_bar
    assert ms.decay_rate[0] == pytest.approx(2 * g2 * k.real, rel=1e-12)
    assert ms.frequency[0] == pytest.approx(0.4 - g2 * k.imag, rel=1e-12)


def test_classification_picks_cavity_coupled_mode():
    p = SystemParams(delta_c=10.0, coupling_amp=0.9, detuning=LinearDetuning(0.0, 1e-3))
    r = Realization.pinned([0.24, 0.77, 1.26, 1.73])
    ms = classify_modes(eigenmodes(build_linear_system(r, p).M), r, p)
    sr = ms.superradiant_index
    assert ms.labels.count(SUPERRADIANT) == 1 and ms.labels.count(SUBRADIANT) == 3
    assert sr == int(np.argmax(ms.cavity_overlap))
    assert ms.decay_rate[sr] == pytest.approx(ms.decay_rate.max())


def test_superradiant_label_invariant_under_coupling_scale():
    r = Realization.pinned([0.21, 0.8, 1.23])
    base = SystemParams(delta_c=5.0, coupling_amp=0.5, detuning=LinearDetuning(0.0, 2e-3))
    idx = {
        classify_modes(eigenmodes(build_linear_system(r, base.with_(coupling_amp=g)).M), r, base.with_(coupling_amp=g)).superradiant_index
        for g in (0.5, 1.0, 3.0)
    }
    assert len(idx) == 1


def test_cavity_overlap_bounds():
    rng = np.random.default_rng(2)
    v = fix_phase(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    c = cavity_overlap(v, rng.normal(size=4) + 0j)
    assert np.all((c >= 0) & (c <= 1 + 1e-14))
    assert np.all(cavity_overlap(v, np.zeros(4, complex)) == 0)


def test_dressed_scan_far_detuned_limits():
    p = SystemParams(coupling_amp=0.5, detuning=ConstantDetuning(0.0))
    r = Realization.pinned([0.25])
    lam = dressed_scan(r, p, [-50.0, 50.0])
    # far from resonance the cavity branch sits near Delta_c and the atom near 0
    assert lam[0, 0].imag == pytest.approx(-50.0, abs=0.01)
    assert lam[1, 1].imag == pytest.approx(50.0, abs=0.01)
    assert abs(lam[0, 1].imag) < 0.01


def test_ensemble_modes_subradiant_dark_without_gradient():
    lat = LatticeConfig.regular(4, 0.08)
    p = SystemParams(delta_c=100.0, coupling_amp=0.9, detuning=ConstantDetuning(0.0))
    m = ensemble_modes(Experiment(p, lat, n_realizations=50, seed=1))
    g, _, _ = m.subradiant_modes()
    assert np.max(np.abs(g)) < 1e-10 * m.unit


def test_subradiant_rates_grow_with_gradient():
    lat = LatticeConfig.regular(4, 0.08)
    base = SystemParams(delta_c=100.0, coupling_amp=0.9)
    means = []
    for d1 in np.linspace(0, 4e-4, 5):
        m = ensemble_modes(Experiment(base.with_(detuning=LinearDetuning(0.0, d1)), lat, n_realizations=30, seed=1))
        means.append(m.subradiant_modes()[0].mean())
    assert np.all(np.diff(means) > 0)


def test_histogram_rows_and_counts():
    lat = LatticeConfig.regular(3, 0.08)
    p = SystemParams(delta_c=100.0, coupling_amp=0.9, detuning=LinearDetuning(0.0, 1.4e-3))
    h = ensemble_mode_histogram(Experiment(p, lat, n_realizations=200, seed=1), bins=10)
    sr = sum(r[4] for r in h.rows if r[0] == SUPERRADIANT)
    sub = sum(r[4] for r in h.rows if r[0] == SUBRADIANT)
    assert sr == 200 and sub == 400


def test_mode_overlap_properties():
    a = np.array([1.0, 2.0, np.nan, 3.0])
    assert mode_overlap(a, 2j * a) == pytest.approx(1.0)
    assert mode_overlap([1.0, 0.0], [0.0, 1.0]) == 0.0
    with pytest.raises(ValueError):
        mode_overlap([0.0, 0.0], [1.0, 1.0])


def test_distribution_peak_lognormal():
    rng = np.random.default_rng(3)
    v = 10 ** rng.normal(-3.0, 0.2, size=20000)
    assert np.log10(distribution_peak(v)) == pytest.approx(-3.0, abs=0.05)
