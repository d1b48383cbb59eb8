import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from jumpgrid.conductance import ConductanceMatrix, build_cell_averaged
from jumpgrid.errors import DomainError
from jumpgrid.forms import (BallGrid, TruncationParams, continuum_form, discrete_form, form_convergence_sweep,
                            k_jdelta, nested_form_pair, truncated_discrete_form, truncated_generator_apply,
                            truncated_kernel_form)
from jumpgrid.kernels import stable_kernel
from jumpgrid.lattice import LatticeWindow
from jumpgrid.transfer import ContinuumFunction, GridFunction, extend, restrict

# epsilon(hat, hat) for j = |h|^-2: 4 ln 2 on R, and on the torus of side 16 the spectral sum
# (1/L) sum_n pi |xi_n| |hat^(xi_n)|^2 evaluated independently in test_torus_form_oracle
HAT_FORM_R = 4 * math.log(2)
HAT_FORM_TORUS16 = 2.759704461707


def hat(c=0.0, width=1.0):
    return ContinuumFunction.from_callable(
        lambda x: np.maximum(0.0, 1.0 - np.abs(x[..., 0] - c) / width), d=1,
        breakpoints=[[c - width, c, c + width]], support=(c - width, c + width))


def test_torus_form_oracle():
    L = 16.0
    xi = 2 * np.pi * np.arange(1, 4_000_000) / L
    fh = (2 * np.sin(xi / 2) / xi) ** 2
    spectral = 2 * math.fsum(np.pi * xi * fh ** 2) / L
    assert spectral == pytest.approx(HAT_FORM_TORUS16, abs=2e-12)


def test_continuum_form_pinned(cauchy1d):
    r = continuum_form(cauchy1d, hat())
    assert r.value == pytest.approx(HAT_FORM_R, rel=1e-9)
    t = continuum_form(cauchy1d, hat(8.0), window=LatticeWindow(1, 8, 16.0))
    assert t.value == pytest.approx(HAT_FORM_TORUS16, rel=1e-10)
    assert t.quadrature_error < 1e-8


def test_continuum_form_zero(cauchy1d):
    zero = ContinuumFunction.from_callable(lambda x: np.zeros(x.shape[:-1]), d=1, support=(0.0, 0.0))
    assert continuum_form(cauchy1d, zero).value == 0.0


def test_continuum_form_other_alpha():
    # closed form for the hat on R: eps = (1/2) int int (f(x)-f(y))^2 |x-y|^{-1-a} = int J(h) S(h) dh,
    # checked here against a brute-force double quadrature on a tensor grid
    k = stable_kernel(1, 0.5)
    from scipy import integrate
    f = lambda x: max(0.0, 1 - abs(x))  # noqa: E731

    def S(h):
        lo, hi = -1 - h, 1.0
        pts = sorted({p for p in (-1 - h, -h, 1 - h, -1.0, 0.0, 1.0) if lo <= p <= hi})
        return integrate.quad(lambda x: (f(x + h) - f(x)) ** 2, lo, hi, points=pts, epsabs=1e-13)[0]
    near = integrate.quad(lambda h: h ** -1.5 * S(h), 0, 2, points=[1.0], epsabs=1e-12, limit=200)[0]
    far = 2 * (2 / 3) * 2 / 0.5 * 2 ** -0.5 / 2  # h > 2: S = 2 ||f||^2, int_2^inf h^-1.5 = 2 / sqrt 2
    assert continuum_form(k, hat()).value == pytest.approx(near + far, rel=1e-7)


def test_discrete_form_basic():
    w = LatticeWindow(1, 4, 2.0)
    one = GridFunction(w, np.ones(w.n_sites))
    c = ConductanceMatrix.from_pairs(w, [1], [5], [3.0])
    assert discrete_form(c, one).value == 0.0
    ind = np.zeros(w.n_sites)
    ind[1] = 1
    assert discrete_form(c, GridFunction(w, ind)).value == pytest.approx(3.0 * 4.0 ** -2)


def test_discrete_form_window_mismatch(torus8):
    with pytest.raises(DomainError):
        discrete_form(torus8, GridFunction(LatticeWindow(1, 4, 16.0), np.zeros(64)))


@given(hnp.arrays(float, 128, elements=st.floats(-5, 5)), hnp.arrays(float, 128, elements=st.floats(-5, 5)))
def test_parallelogram_and_symmetry(torus8, a, b):
    w = torus8.window
    u, v = GridFunction(w, a), GridFunction(w, b)
    e = lambda x: discrete_form(torus8, GridFunction(w, x)).value  # noqa: E731
    lhs = e(a + b) + e(a - b)
    rhs = 2 * e(a) + 2 * e(b)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))
    assert discrete_form(torus8, u, v).value == pytest.approx(discrete_form(torus8, v, u).value, rel=1e-12, abs=1e-12)
    assert e(a) >= 0


def test_markov_contraction(torus8, rng):
    w = torus8.window
    for _ in range(50):
        u = rng.normal(0.5, 1.0, w.n_sites)
        before = discrete_form(torus8, GridFunction(w, u)).value
        after = discrete_form(torus8, GridFunction(w, np.clip(u, 0.0, 1.0))).value
        assert after <= before


def test_discrete_hat_k8_gap(torus8):
    u = restrict(hat(8.0), torus8.window)
    rel = abs(discrete_form(torus8, u).value - HAT_FORM_TORUS16) / HAT_FORM_TORUS16
    assert rel < 0.30


@pytest.mark.xfail(strict=True, reason="the graph-distance cutoff removes all pairs closer than 4/k; "
                                       "at k=8 the cell-averaged form is 28 % below the target")
def test_discrete_hat_k8_within_two_percent(torus8):
    u = restrict(hat(8.0), torus8.window)
    assert abs(discrete_form(torus8, u).value - HAT_FORM_TORUS16) / HAT_FORM_TORUS16 < 0.02


def test_absorbing_form_counts_killing(cauchy1d):
    from jumpgrid.conductance import build_pointwise, with_pairs_only
    w = LatticeWindow(1, 2, 4.0, "absorbing")
    c = build_pointwise(w, cauchy1d, 50.0)
    u = GridFunction(w, np.ones(w.n_sites))
    assert discrete_form(c, u).value == pytest.approx(float(c.killing().sum() * w.cell_volume))
    assert discrete_form(with_pairs_only(c), u).value == pytest.approx(discrete_form(c, u).value)


def test_form_sweep(cauchy1d):
    zero_target = form_convergence_sweep(
        cauchy1d, ContinuumFunction.from_callable(lambda x: np.ones(x.shape[:-1]), d=1), [4, 8], 8.0,
        truncation_radius=200.0)
    assert all(r.discrete_value == pytest.approx(0.0, abs=1e-12) for r in zero_target)
    rows = form_convergence_sweep(cauchy1d, hat(8.0), [8, 16, 32], 16.0, truncation_radius=2000.0)
    errs = [r.abs_error for r in rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert rows[0].target_value == pytest.approx(HAT_FORM_TORUS16, rel=1e-10)


# -- truncated forms -----------------------------------------------------------
def test_truncation_params():
    with pytest.raises(DomainError):
        TruncationParams(1.0, 1.5).validate()
    with pytest.raises(DomainError):
        TruncationParams(7.0, 0.25).validate(LatticeWindow(1, 4, 16.0))
    TruncationParams(6.0, 0.25).validate(LatticeWindow(1, 4, 16.0))


def test_k_jdelta_examples(cauchy1d):
    assert k_jdelta(cauchy1d, TruncationParams(1.0, 2.0)) == 0.0
    k = k_jdelta(cauchy1d, TruncationParams(1.0, 0.5))
    assert 2.0 <= k < 2.01  # closed form at the centre: 2 (1/0.5 - 1/1) = 2
    ks = [k_jdelta(cauchy1d, TruncationParams(2.0, d)) for d in (0.1, 0.2, 0.5, 1.0, 3.9, 4.0)]
    assert all(b <= a for a, b in zip(ks, ks[1:]))


@pytest.mark.parametrize("delta_pair", [(0.5, 0.25), (0.25, 0.1)])
def test_truncated_continuum_monotone(cauchy1d, delta_pair):
    w = LatticeWindow(1, 8, 16.0)
    f = hat(8.0)
    big, small = delta_pair
    a = continuum_form(cauchy1d, f, TruncationParams(4.0, big), window=w).value
    b = continuum_form(cauchy1d, f, TruncationParams(4.0, small), window=w).value
    c = continuum_form(cauchy1d, f, TruncationParams(5.0, small), window=w).value
    assert a <= b <= c + 1e-12


def test_truncated_discrete_constant_zero(torus8):
    one = GridFunction(torus8.window, np.ones(torus8.window.n_sites))
    assert truncated_discrete_form(torus8, one, TruncationParams(4.0, 0.5)).value == pytest.approx(0.0, abs=1e-14)


def test_truncated_discrete_pair_sum_oracle(cauchy1d):
    # dyadic cells of side h = 1/32 align with B_4 = [4, 12] and delta = 8h, so for two cells whose
    # centres are m h apart the far area {|w - z| > delta} is h^2 (m > 8), h^2 / 2 (m = 8) or 0 (m < 8)
    w = LatticeWindow(1, 32, 16.0, "periodic", "dyadic")
    c = build_cell_averaged(w, cauchy1d, 8, 2000.0)
    g = restrict(hat(8.0), w)
    tr = TruncationParams(4.0, 0.25)
    h = 1 / 32
    x = w.all_coords[:, 0]
    ball = np.nonzero((x > 4.0) & (x < 12.0))[0]
    D = c.to_dense()
    total = 0.0
    for a in ball:
        m = np.abs(ball - a)
        area = np.where(m > 8, h * h, np.where(m == 8, h * h / 2, 0.0))
        total += float(((g.values[a] - g.values[ball]) ** 2 * D[a, ball] * area).sum())
    oracle = 0.5 * total
    val_grid = truncated_discrete_form(c, g, tr).value
    val_cont = truncated_discrete_form(c, extend(g), tr).value
    assert val_grid == pytest.approx(oracle, rel=1e-12)
    assert val_cont == pytest.approx(oracle, rel=1e-12)


def test_truncated_discrete_warning(torus8):
    g = GridFunction(torus8.window, np.zeros(torus8.window.n_sites))
    with pytest.warns(RuntimeWarning):
        r = truncated_discrete_form(torus8, g, TruncationParams(4.0, 0.2))
    assert r.warning


def test_truncated_discrete_form_converges(cauchy1d):
    tr = TruncationParams(4.0, 0.25)
    f = hat(8.0)
    target = continuum_form(cauchy1d, f, tr, window=LatticeWindow(1, 8, 16.0)).value
    errs = []
    for k in (8, 16, 32, 64):
        c = build_cell_averaged(LatticeWindow(1, k, 16.0), cauchy1d, 8, 2000.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            errs.append(abs(truncated_discrete_form(c, f, tr).value - target))
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_generator_constant_and_duality(cauchy1d, torus8):
    tr = TruncationParams(4.0, 0.5)
    grid = BallGrid.uniform(0.0, 4.0, 64)
    Lc = truncated_generator_apply(cauchy1d, np.ones(64), tr, grid=grid)
    assert np.abs(Lc.values).max() < 1e-12 and np.abs(Lc.interval_integrals).max() < 1e-12
    rng = np.random.default_rng(5)
    for _ in range(10):
        u, v = rng.standard_normal(64), rng.standard_normal(64)
        e = truncated_kernel_form(cauchy1d, grid, u, tr, v).value
        assert abs(e + truncated_generator_apply(cauchy1d, v, tr, grid=grid).inner_piecewise(u)) <= 1e-6
    # discrete source on the ball cells
    g = BallGrid.from_window(torus8.window, 4.0)
    u, v = rng.standard_normal(g.n), rng.standard_normal(g.n)
    uu = np.zeros(torus8.window.n_sites)
    vv = np.zeros(torus8.window.n_sites)
    uu[g.parent], vv[g.parent] = u, v
    from jumpgrid.forms import _PairModel, pair_form
    e = pair_form(_PairModel(torus8, g, tr.delta), u, v)
    assert abs(e + truncated_generator_apply(torus8, v, tr).inner_piecewise(u)) <= 1e-6


def _lemma_ratios(kern, u, grid, tr, K):
    e = truncated_kernel_form(kern, grid, u, tr).value
    n2 = float((grid.lengths * u ** 2).sum())
    Lu = truncated_generator_apply(kern, u, tr, grid=grid)
    return e / (K * n2), Lu.norm2() / (K * e)


@given(hnp.arrays(float, 96, elements=st.floats(-3, 3)).filter(lambda a: np.ptp(a) > 1e-3))
def test_lemma_bounds_with_factor_two(cauchy1d, u):
    # Cauchy-Schwarz gives both bounds with 2 K_{j,delta}
    tr = TruncationParams(2.0, 0.25)
    grid = BallGrid.uniform(0.0, 2.0, 96)
    K = k_jdelta(cauchy1d, tr)
    r1, r2 = _lemma_ratios(cauchy1d, u, grid, tr, K)
    assert r1 <= 2.0 + 1e-6 and r2 <= 2.0 + 1e-6


def test_lemma_bounds_random_inputs(cauchy1d):
    tr = TruncationParams(4.0, 0.25)
    grid = BallGrid.uniform(0.0, 4.0, 256)
    K = k_jdelta(cauchy1d, tr)
    rng = np.random.default_rng(8)
    for _ in range(20):
        r1, r2 = _lemma_ratios(cauchy1d, rng.standard_normal(256), grid, tr, K)
        assert r1 <= 1 + 1e-6 and r2 <= 1 + 1e-6


@pytest.mark.xfail(strict=True, reason="with constant K both bounds fail for inputs oscillating on the "
                                       "delta scale; the Cauchy-Schwarz constant is 2K")
def test_lemma_bounds_constant_k_all_inputs(cauchy1d):
    tr = TruncationParams(4.0, 0.25)
    grid = BallGrid.uniform(0.0, 4.0, 512)
    x = 0.5 * (grid.a + grid.b)
    r1, r2 = _lemma_ratios(cauchy1d, np.cos(np.pi * x / 0.3), grid, tr, k_jdelta(cauchy1d, tr))
    assert r1 <= 1 + 1e-6 and r2 <= 1 + 1e-6


def _nested_ratios(cauchy1d):
    rng = np.random.default_rng(0)
    wc = LatticeWindow(1, 4, 8.0, anchor="dyadic")
    cc = build_cell_averaged(wc, cauchy1d, 8, 500.0)
    cf = build_cell_averaged(wc.with_level(8), cauchy1d, 8, 500.0)
    out = []
    for _ in range(20):
        fine, coarse = nested_form_pair(cc, cf, GridFunction(wc, rng.standard_normal(wc.n_sites)))
        out.append(fine / coarse)
    return out


def test_nested_forms_finite(cauchy1d):
    r = _nested_ratios(cauchy1d)
    assert all(math.isfinite(x) and x > 0 for x in r)


@pytest.mark.xfail(strict=True, reason="halving the cutoff distance adds near pairs, so the fine-level "
                                       "form of a lifted coarse function exceeds the coarse form")
def test_nested_forms_monotone(cauchy1d):
    assert max(_nested_ratios(cauchy1d)) <= 1 + 1e-10
