import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_sed.config import parse_quantity
from cavity_sed.dynamics import (
    build_linear_system,
    cavity_amplitude,
    steady_state_low_intensity,
    steady_state_saturated,
)
from cavity_sed.exact import TUPLES, pair_generator
from cavity_sed.model import ConstantDetuning, LinearDetuning, SystemParams, UniformPump
from cavity_sed.modes import eigenmodes
from cavity_sed.sampling import Realization

FAST = settings(max_examples=40, deadline=None)

finite = st.floats(-5, 5, allow_nan=False)
positions = st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=6)


def _params(dc, eta, g, d1):
    return SystemParams(delta_c=dc, eta=eta, coupling_amp=g, detuning=LinearDetuning(0.2, d1))


@FAST
@given(positions, finite, st.floats(0.1, 2), st.floats(0.1, 2), finite, st.randoms(use_true_random=False))
def test_amplitude_invariant_under_relabelling(xs, dc, eta, g, d1, rnd):
    p = _params(dc, eta, g, d1)
    r = Realization.pinned(xs)
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    rp = Realization.pinned([xs[i] for i in perm])
    a = cavity_amplitude(steady_state_low_intensity(build_linear_system(r, p)), r, p)
    b = cavity_amplitude(steady_state_low_intensity(build_linear_system(rp, p)), rp, p)
    assert np.isclose(a, b, rtol=1e-9, atol=1e-12)


@FAST
@given(positions, finite, st.floats(0.1, 2), st.floats(0.1, 2))
def test_low_intensity_response_is_linear_in_drive(xs, dc, eta, g):
    p = _params(dc, eta, g, 0.3).with_(pump=UniformPump(0.2j))
    r = Realization.pinned(xs)
    s1 = steady_state_low_intensity(build_linear_system(r, p))
    s2 = steady_state_low_intensity(build_linear_system(r, p.with_(eta=2 * eta, pump=UniformPump(0.4j))))
    assert np.allclose(s2, 2 * s1, rtol=1e-10, atol=1e-14)


@FAST
@given(positions, finite, st.floats(0.1, 2))
def test_decay_rates_non_negative(xs, dc, g):
    # M = i D - k G G^dagger with Re k > 0 has a negative semidefinite Hermitian part
    m = eigenmodes(build_linear_system(Realization.pinned(xs), _params(dc, 0.0, g, 0.4)).M)
    assert np.all(m.decay_rate >= -1e-12 * max(1.0, np.abs(m.eigenvalues).max()))


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=3),
    st.floats(-3, 3),
    st.floats(0.05, 3),
    st.floats(0.2, 1.5),
    st.floats(-0.5, 0.5),
)
def test_saturated_steady_state_inside_bloch_ball(xs, dc, eta, g, d0):
    p = SystemParams(delta_c=dc, eta=eta, coupling_amp=g, detuning=ConstantDetuning(d0))
    s = steady_state_saturated(Realization.pinned(xs), p)
    assert s.is_physical()
    assert np.all(np.abs(s.rho_ge) ** 2 <= s.rho_ee * (1 - s.rho_ee) + 1e-9)


@FAST
@given(st.lists(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False), min_size=6, max_size=6), finite, finite)
def test_pair_generator_conserves_norm(z, d1, d2):
    W1, W2, g1, g2, k0, _ = z
    k = complex(abs(k0.real) + 0.1, k0.imag)
    A = pair_generator(d1, d2, W1, W2, g1, g2, k)[0]
    diag = [TUPLES.index(t) for t in ("gggg", "geeg", "egge", "eeee")]
    assert np.abs(A[diag, :].sum(axis=0)).max() < 1e-12 * max(1.0, np.abs(A).max())


@FAST
@given(st.floats(-1e6, 1e6, allow_nan=False), st.sampled_from(["kappa", "lambda"]))
def test_quantity_round_trip(x, unit):
    assert parse_quantity(f"{x!r} {unit}") == x
