import numpy as np
import pytest

from cavity_sed.exact import (
    TUPLES,
    SpatialGrid,
    assemble_two_body_system,
    exact_point,
    exact_sweep,
    factorization_report,
    low_intensity_hierarchy,
    marginal_one_body,
    mott_rho2,
    pair_generator,
    solve_one_body,
    solve_two_body,
)
from cavity_sed.model import ConstantDetuning, LatticeConfig, SystemParams
from cavity_sed.observables import SweepSpec
from cavity_sed.tables import read_csv

WR = 1.0 / 342.0
LAT = LatticeConfig.regular(2, 0.08)


def _params(eta, d0=4 * WR, dca=-100.0):
    return SystemParams(delta_c=d0 - dca, eta=eta, coupling_amp=0.9, detuning=ConstantDetuning(d0))


@pytest.fixture(scope="module")
def saturated_point():
    p = _params(0.1, 3.0 * WR)
    grid = SpatialGrid.for_lattice(LAT, h=0.01)
    return (p, *exact_point(LAT, p, grid))


def _row(A, label):
    r = A[TUPLES.index(label)]
    return {TUPLES[i]: r[i] for i in np.flatnonzero(np.abs(r) > 1e-14)}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generator_matches_printed_pair_equations(seed):
    rng = np.random.default_rng(seed)
    D1, D2 = rng.normal(size=2)
    W1, W2, g1, g2 = rng.normal(size=4) + 1j * rng.normal(size=4)
    k = complex(*rng.uniform(0.1, 1.0, size=2))
    A = pair_generator(D1, D2, W1, W2, g1, g2, k)[0]
    c1, c2 = np.conj(g1), np.conj(g2)
    two_re = 2 * k.real
    expected_p2 = {
        "ggeg": 1j * D2 - k * abs(g2) ** 2,
        "geee": c1 * g2 * two_re,
        "egee": abs(g1) ** 2 * two_re,
        "ggge": -k * g2 * c1,
        "ggee": 1j * np.conj(W1),
        "geeg": -1j * W2,
        "egeg": -1j * W1,
        "gggg": 1j * W2,
    }
    expected_pp = {
        "gege": 1j * (D1 - D2) - (k * abs(g1) ** 2 + np.conj(k) * abs(g2) ** 2),
        "eeee": g1 * c2 * two_re,
        "egge": -np.conj(k) * g1 * c2,
        "geeg": -k * g1 * c2,
        "geee": 1j * np.conj(W2),
        "ggge": -1j * np.conj(W2),
        "eege": -1j * W1,
        "gegg": 1j * W1,
    }
    for label, expected in (("ggeg", expected_p2), ("gege", expected_pp)):
        got = _row(A, label)
        assert set(got) == set(expected)
        for t, v in expected.items():
            assert got[t] == pytest.approx(v, rel=1e-12, abs=1e-14)


def test_generator_conserves_pair_density():
    rng = np.random.default_rng(4)
    args = [rng.normal(size=5) for _ in range(2)] + [rng.normal(size=5) + 1j * rng.normal(size=5) for _ in range(4)]
    A = pair_generator(*args, 0.2 + 0.5j)
    diag = [TUPLES.index(t) for t in ("gggg", "geeg", "egge", "eeee")]
    # d/dt of the summed pair populations vanishes for any state
    assert np.max(np.abs(A[:, diag, :].sum(axis=1))) < 1e-13


def test_pair_density_normalised():
    grid = SpatialGrid.for_lattice(LAT, h=0.005)
    rho2 = mott_rho2(LAT, grid)
    # the grid is truncated five Wannier widths from each site
    assert rho2.sum() * grid.h**2 == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(rho2, rho2.T)
    with pytest.raises(ValueError):
        mott_rho2(LatticeConfig.regular(3, 0.08), grid)


def test_grid_avoids_equal_coupling_pairs():
    grid = SpatialGrid.for_lattice(LAT, h=0.01)
    g = np.abs(np.sin(2 * np.pi * grid.x))
    d = np.abs(g[:, None] - g[None, :])
    np.fill_diagonal(d, 1.0)
    assert d.min() > 1e-6


def test_invariants(saturated_point):
    _, _, field, _ = saturated_point
    assert field.conservation_error() < 1e-12
    assert field.hermiticity_error() < 1e-12
    assert field.exchange_error() < 1e-12
    assert field.residual() < 1e-10


def test_one_body_solve_matches_marginals(saturated_point):
    _, _, field, one = saturated_point
    marg = marginal_one_body(field)
    scale = np.max(marg.density)
    assert np.max(np.abs(one.polarization - marg.polarization)) < 1e-10 * scale
    assert np.max(np.abs(one.excited - marg.excited)) < 1e-10 * scale


def test_observables_are_physical(saturated_point):
    _, obs, _, one = saturated_point
    assert 0 < obs.saturation < 0.5
    assert obs.coherent <= obs.total * (1 + 1e-12)
    assert np.sum(one.density) * one.h == pytest.approx(2.0, abs=1e-6)
    assert np.all(one.excited >= -1e-14) and np.all(one.excited <= one.density + 1e-14)


def test_low_intensity_limit_matches_hierarchy():
    grid = SpatialGrid.for_lattice(LAT, h=0.01)
    p = _params(1e-7)
    obs, _, one = exact_point(LAT, p, grid)
    a, P = low_intensity_hierarchy(LAT, p, grid)
    assert abs(obs.amplitude - a) < 1e-8 * abs(a)
    assert np.max(np.abs(one.polarization - P)) < 1e-8 * np.max(np.abs(P))
    # position disorder alone already makes part of the light incoherent
    assert 0 < obs.incoherent < obs.total
    weaker = exact_point(LAT, p.with_(eta=5e-8), grid)[0]
    assert weaker.total / obs.total == pytest.approx(0.25, rel=1e-6)


def test_grid_convergence():
    # halving h at a saturated point moves <a> by far less than 1e-4
    p = _params(0.1, 3.0 * WR)
    coarse = exact_point(LAT, p, SpatialGrid.for_lattice(LAT, h=0.005))[0]
    fine = exact_point(LAT, p, SpatialGrid.for_lattice(LAT, h=0.0025))[0]
    assert abs(fine.amplitude - coarse.amplitude) < 1e-4 * abs(fine.amplitude)
    assert fine.saturation == pytest.approx(coarse.saturation, rel=1e-4)


def test_saturation_grows_with_drive():
    grid = SpatialGrid.for_lattice(LAT, h=0.01)
    sats = [exact_point(LAT, _params(eta, 3.0 * WR), grid)[0].saturation for eta in (0.02, 0.1, 0.5)]
    assert sats[0] < sats[1] < sats[2] < 0.5


def test_factorization_report_shape(saturated_point):
    _, _, field, one = saturated_point
    rep = factorization_report(field, one)
    assert set(rep) == {"weighted_relative_l2", "max_relative"}
    assert rep["weighted_relative_l2"] >= 0


def test_exact_sweep_table_and_slices(tmp_path, saturated_point):
    spec = SweepSpec("atom_detuning", 3 * WR, 4 * WR, 2, delta_ca=-100.0)
    t = exact_sweep(spec, LAT, _params(0.1), h=0.01)
    assert not t.masked.any()
    assert np.all(t.se_total == 0) and np.all(t.n_eff_realizations == 0)
    _, obs, field, _ = saturated_point
    assert t.total[0] == pytest.approx(obs.total, rel=1e-10)
    path = field.slices_to_csv(tmp_path / "f.csv", labels=("ggeg",))
    back = read_csv(path)
    assert len(back["re"]) == len(field.system.ia)


def test_lattice_checks():
    with pytest.raises(ValueError):
        exact_point(LatticeConfig.regular(3, 0.08), _params(0.1))
    with pytest.raises(ValueError):
        exact_point(LatticeConfig.regular(2, 0.08, coupled_mask=(True, False)), _params(0.1))


def test_assembly_rejects_mismatched_density():
    grid = SpatialGrid.for_lattice(LAT, h=0.01)
    with pytest.raises(ValueError):
        assemble_two_body_system(grid, _params(0.1), np.ones((3, 3)))


def test_solve_two_body_returns_field_on_grid(saturated_point):
    _, _, field, _ = saturated_point
    F = field.on_grid("gggg")
    assert F.shape == (len(field.grid),) * 2
    assert np.all(np.diag(F) == 0)
    again = solve_two_body(field.system)
    assert np.array_equal(again.values, field.values)
    one = solve_one_body(again)
    assert np.all(np.isfinite(one.polarization))
