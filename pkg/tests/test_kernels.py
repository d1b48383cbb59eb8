import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from jumpgrid.errors import DomainError, UnsupportedKernelError
from jumpgrid.kernels import (char_exponent, custom_kernel, eval_kernel, kernel_from_spec, phi_kernel,
                              phi_scaling_ratio, power_phi_kernel, stable_kernel, tail_mass, verify_bounds)


def test_eval_examples(cauchy1d):
    assert eval_kernel(cauchy1d, 0.0, 2.0) == 0.25
    assert eval_kernel(cauchy1d, 0.0, 0.5) == 4.0
    k = phi_kernel(1, lambda r: np.asarray(r, float) ** 1.5)
    assert eval_kernel(k, 0.0, 2.0) == pytest.approx(1 / (2 * 2 ** 1.5), rel=1e-14)
    assert eval_kernel(k, 0.0, 2.0) == pytest.approx(0.17677669529663687, rel=1e-14)


def test_eval_diagonal_rejected(cauchy1d):
    with pytest.raises(DomainError):
        eval_kernel(cauchy1d, 1.0, 1.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.sampled_from([0.3, 1.0, 1.7]), st.integers(1, 3))
def test_symmetry_and_sign(x, y, alpha, d):
    if abs(x - y) < 1e-3:
        return
    k = stable_kernel(d, alpha)
    a = np.full(d, x)
    b = np.full(d, y)
    assert eval_kernel(k, a, b) == eval_kernel(k, b, a)
    assert eval_kernel(k, a, b) >= 0
    r = abs(x - y) * math.sqrt(d)
    assert eval_kernel(k, a, b) == pytest.approx(r ** (-d - alpha), rel=1e-12)


def test_verify_bounds(cauchy1d):
    assert verify_bounds(cauchy1d, kappa1=1.0, kappa2=1.0, alpha=1.0, beta=1.0, samples=500).ok
    assert not verify_bounds(cauchy1d, kappa1=1.0, kappa2=0.5, alpha=1.0, beta=1.0, samples=500).ok
    # phi(r) = r lies between r^1.1 and r^0.9 on (0, 1)
    k = phi_kernel(1, lambda r: np.asarray(r, float))
    rep = verify_bounds(k, kappa1=1.0, kappa2=1.0, alpha=1.1, beta=0.9, samples=500, near_only=True)
    assert rep.ok and rep.n_checked == 500


def test_char_exponent_examples(cauchy1d):
    ce = char_exponent(cauchy1d, np.array([0.0, 1.0, 2.0]), method="quad")
    assert ce.psi[0] == 0.0
    assert ce.psi[1] == pytest.approx(math.pi, abs=1e-8)
    assert ce.psi[2] == pytest.approx(2 * math.pi, abs=2e-8)
    assert np.all(ce.quadrature_error <= 1e-8)


def test_char_exponent_independent_oracle():
    # int (1 - cos(xi h)) |h|^{-1-alpha} dh = 2 Gamma(1-alpha) cos(pi alpha / 2) / alpha * |xi|^alpha  (alpha != 1)
    for alpha in (0.5, 1.5):
        c = -2 * math.gamma(-alpha) * math.cos(math.pi * alpha / 2)
        ce = char_exponent(stable_kernel(1, alpha), np.array([1.0]), method="quad")
        assert ce.psi[0] == pytest.approx(c, rel=1e-8)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_psi_homogeneity(alpha):
    xi = np.logspace(-1, 1, 7)
    ce = char_exponent(stable_kernel(1, alpha), xi, method="quad")
    base = ce.psi[3]
    np.testing.assert_allclose(ce.psi, base * (xi / xi[3]) ** alpha, rtol=1e-6)


def test_psi_radial_monotone_2d():
    k = stable_kernel(2, 1.0)
    ce = char_exponent(k, np.array([[0.0, 1.0], [1.0, 0.0], [0.6, 0.8], [0.0, 2.0]]))
    assert ce.psi[0] == pytest.approx(ce.psi[1]) == pytest.approx(ce.psi[2])
    assert ce.psi[3] > ce.psi[0] > 0


def test_psi_phi_kernel_matches_stable():
    a = char_exponent(power_phi_kernel(1, 1.0), np.array([0.5, 1.0, 3.0]), method="quad").psi
    np.testing.assert_allclose(a, math.pi * np.array([0.5, 1.0, 3.0]), rtol=1e-7)


def test_non_radial_unsupported():
    k = custom_kernel(1, pair_fn=lambda x, y: np.ones(np.broadcast(x, y).shape))
    with pytest.raises(UnsupportedKernelError):
        char_exponent(k, np.array([1.0]))


def test_tail_mass_examples(cauchy1d):
    assert tail_mass(cauchy1d, 0.0, 1.0) == pytest.approx(2.0)
    assert tail_mass(cauchy1d, 0.0, 2.0) == pytest.approx(1.0)
    assert tail_mass(cauchy1d, 0.0, 1.0, method="quad") == pytest.approx(2.0, rel=1e-10)
    assert tail_mass(cauchy1d, 0.0, 1e12) < 1e-11
    assert tail_mass(cauchy1d, 0.0, math.inf) == 0.0
    with pytest.raises(DomainError):
        tail_mass(cauchy1d, 0.0, 0.0)


def test_tail_mass_2d_quadrature_oracle():
    k = stable_kernel(2, 1.0)
    ref, _ = integrate.quad(lambda r: 2 * math.pi * r * r ** -3, 1.5, np.inf)
    assert tail_mass(k, np.zeros(2), 1.5) == pytest.approx(ref, rel=1e-10)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_tail_mass_nonincreasing(r1, r2):
    k = stable_kernel(1, 0.7)
    lo, hi = sorted((r1, r2))
    assert tail_mass(k, 0.0, hi) <= tail_mass(k, 0.0, lo)


@pytest.mark.parametrize("r", [0.5, 2.0])
def test_phi_scaling_limit(r):
    phi = lambda s: s ** 1.3  # noqa: E731
    assert abs(phi_scaling_ratio(phi, 1e6, r) - r ** -1.3) < 1e-12


def test_kernel_from_spec():
    k = kernel_from_spec({"kind": "stable", "alpha": 1.2, "amp": 2.0}, 2)
    assert k.alpha == 1.2 and k.amp == 2.0 and k.d == 2
    p = kernel_from_spec({"kind": "phi", "phi_power": 1.0}, 1)
    assert float(p.profile(2.0)) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        stable_kernel(1, 2.0)


def test_verify_bounds_flags_asymmetric_custom_kernel():
    def pair(x, y):
        h = (np.asarray(y) - np.asarray(x))[..., 0]
        return np.abs(h) ** -2.0 * np.where(h > 0, 1.0, 1.5)
    rep = verify_bounds(custom_kernel(1, pair_fn=pair), samples=200)
    assert any(v["which"] == "symmetry" for v in rep.violations)
    assert not any(v["which"] == "symmetry" for v in verify_bounds(stable_kernel(2, 0.7), samples=200).violations)
