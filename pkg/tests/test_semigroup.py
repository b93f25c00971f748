import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from mildsde.errors import ConfigurationError, DomainError, ShapeError
from mildsde.semigroup import (
    ExpStableSemigroup,
    SpectralField,
    apply,
    convolution_weights,
    heat_semigroup,
    physical_values,
    scalar_semigroup,
)


def test_heat_eigenvalues_and_constants():
    sg = heat_semigroup(4)
    n = np.arange(1, 5)
    np.testing.assert_allclose(sg.modes, -(n**2) * math.pi**2, rtol=1e-15)
    assert sg.M == 1.0 and sg.a == pytest.approx(math.pi**2, rel=1e-15)


def test_first_mode_decays_at_rate_pi_squared():
    sg = heat_semigroup(32)
    out = apply(sg, 0.1, SpectralField.unit(32, 1))
    assert out.norm() == pytest.approx(math.exp(-0.1 * math.pi**2), rel=1e-14)


def test_t_zero_is_identity():
    sg = heat_semigroup(8)
    v = np.random.default_rng(0).normal(size=8)
    np.testing.assert_array_equal(sg.propagate(0.0, v), v)


@settings(max_examples=60, deadline=None)
@given(
    t=st.floats(0, 2), s=st.floats(0, 2),
    seed=st.integers(0, 2**32 - 1),
)
def test_semigroup_law_and_bound(t, s, seed):
    sg = heat_semigroup(32)
    v = np.random.default_rng(seed).normal(size=32)
    v /= np.linalg.norm(v)
    lhs = sg.propagate(t + s, v)
    rhs = sg.propagate(t, sg.propagate(s, v))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)
    assert np.linalg.norm(sg.propagate(t, v)) <= sg.bound(t) * (1 + 1e-12)


def test_batched_propagate_matches_rowwise():
    sg = heat_semigroup(5)
    v = np.random.default_rng(1).normal(size=(3, 5))
    out = sg.propagate(0.3, v)
    for i in range(3):
        np.testing.assert_array_equal(out[i], sg.propagate(0.3, v[i]))


def test_errors():
    sg = heat_semigroup(3)
    with pytest.raises(DomainError):
        sg.propagate(-0.1, np.zeros(3))
    with pytest.raises(ShapeError):
        sg.propagate(0.1, np.zeros(4))
    with pytest.raises(ShapeError):
        apply(sg, 0.1, SpectralField.unit(4))
    with pytest.raises(ConfigurationError):
        scalar_semigroup([-1.0, 0.5])
    with pytest.raises(ConfigurationError):
        ExpStableSemigroup(M=1.0, a=0.0, modes=[-1.0])
    with pytest.raises(ConfigurationError):
        ExpStableSemigroup(M=1.0, a=2.0, modes=[-1.0])
    with pytest.raises(ConfigurationError):
        heat_semigroup(0)


def test_scalar_semigroup_rate():
    sg = scalar_semigroup([-3.0, -1.0])
    assert sg.a == 1.0 and sg.M == 1.0


@pytest.mark.parametrize("lam,dt", [(-1.0, 1e-3), (-math.pi**2, 0.01), (-1000.0, 0.01), (-4.0, 0.5)])
def test_convolution_weights_match_quadrature(lam, dt):
    w = convolution_weights(np.array([lam]), dt)
    drift, _ = quad(lambda s: math.exp(lam * (dt - s)), 0, dt, epsabs=0, epsrel=1e-13)
    var, _ = quad(lambda s: math.exp(2 * lam * (dt - s)), 0, dt, epsabs=0, epsrel=1e-13)
    assert w.decay[0] == pytest.approx(math.exp(lam * dt), rel=1e-15)
    assert w.drift_weight[0] == pytest.approx(drift, rel=1e-12)
    assert w.noise_std[0] == pytest.approx(math.sqrt(var), rel=1e-12)


def test_convolution_weights_continuous_across_series_cutoff():
    lam = np.array([-1.0])
    for dt in (0.99e-8, 1.01e-8):
        w = convolution_weights(lam, dt)
        assert w.drift_weight[0] == pytest.approx(-math.expm1(-dt), rel=1e-14)
        assert w.noise_std[0] ** 2 == pytest.approx(-math.expm1(-2 * dt) / 2, rel=1e-14)


def test_convolution_weights_zero_eigenvalue_limit():
    w = convolution_weights(np.array([0.0]), 0.25)
    assert w.drift_weight[0] == 0.25
    assert w.noise_std[0] == 0.5


def test_convolution_weights_rejects_growth():
    with pytest.raises(ConfigurationError):
        convolution_weights(np.array([1.0]), 0.1)


def test_physical_snapshot_and_parseval():
    x = np.linspace(0, 1, 2001)
    u = physical_values(SpectralField.unit(3, 1).coeffs, x)
    assert u[1000] == pytest.approx(math.sqrt(2), rel=1e-15)
    assert u[0] == 0 and abs(u[-1]) < 1e-15
    c = np.random.default_rng(2).normal(size=6)
    u2, _ = quad(lambda s: physical_values(c, [s])[0] ** 2, 0, 1, limit=200)
    assert math.sqrt(u2) == pytest.approx(SpectralField(c).norm(), rel=1e-10)


def test_spectral_field_is_readonly():
    f = SpectralField([1.0, 2.0])
    with pytest.raises(ValueError):
        f.coeffs[0] = 3.0
    with pytest.raises(ShapeError):
        SpectralField(np.zeros((2, 2)))
