import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumpgrid.conductance import apply_random_field, build_pointwise
from jumpgrid.errors import DomainError
from jumpgrid.kernels import stable_kernel
from jumpgrid.lattice import LatticeWindow
from jumpgrid.rcm import RandomField, field_from_spec, field_value, rcm_experiment, splitmix64, trend_ok
from jumpgrid.transfer import ContinuumFunction


def gauss2d(L, sigma=0.5):
    c = L / 2

    def fn(x):
        dx = (x - c + L / 2) % L - L / 2
        return np.exp(-(dx ** 2).sum(axis=-1) / (2 * sigma ** 2))
    return ContinuumFunction.from_callable(fn, d=2, support=(np.full(2, c - L / 2), np.full(2, c + L / 2)))


def test_splitmix64_reference():
    # first outputs of the reference generator seeded with 0
    assert int(splitmix64(np.uint64(0))) == 0xE220A8397B1DCDAF
    assert int(splitmix64(np.uint64(0x9E3779B97F4A7C15))) == 0x6E789E6AA1B965F4


def test_symmetry_exact():
    f = RandomField("uniform02", 11)
    rng = np.random.default_rng(1)
    a = rng.integers(-10 ** 6, 10 ** 6, size=(100_000, 2))
    b = rng.integers(-10 ** 6, 10 ** 6, size=(100_000, 2))
    b[np.all(a == b, axis=1)] += 1
    assert np.array_equal(f.pair_values(a, b), f.pair_values(b, a))


def test_uniform02_mean():
    f = RandomField("uniform02", 5)
    x = np.arange(10 ** 6)[:, None]
    v = f.pair_values(x, x + 1)
    assert abs(v.mean() - 1.0) <= 3 * (1 / math.sqrt(3)) / 1e3
    assert v.min() >= 0 and v.max() < 2


def test_bernoulli_mix():
    f = RandomField("bernoulli_mix", 9, 0.25)
    x = np.arange(10 ** 6)[:, None]
    v = f.pair_values(x, x + 3)
    assert set(np.unique(v).tolist()) == {0.0, 4.0}
    assert abs((v == 4).mean() - 0.25) <= 3 * math.sqrt(0.1875 / 1e6)
    assert f.variance == pytest.approx(3.0)


def test_bounded():
    f = RandomField("bounded", 2, 1.5)
    x = np.arange(10 ** 5)[:, None]
    v = f.pair_values(x, x + 1)
    assert v.min() >= 0.5 and v.max() <= 1.5 and abs(v.mean() - 1) < 0.01
    assert np.all(RandomField("bounded", 2, 1.0).pair_values(x, x + 1) == 1.0)


def test_domain_errors():
    f = RandomField("uniform02", 1)
    with pytest.raises(DomainError):
        field_value(f, [3, 4], [3, 4])
    for bad in (dict(dist="gamma"), dict(seed=-1), dict(dist="bounded", param=2.5),
                dict(dist="bernoulli_mix", param=0.0)):
        with pytest.raises(DomainError):
            RandomField(**bad)


def test_field_from_spec():
    f = field_from_spec({"dist": "bernoulli_mix", "seed": 3, "param": 0.5})
    assert f == RandomField("bernoulli_mix", 3, 0.5)


@given(st.integers(0, 2 ** 64 - 1), st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_value_depends_only_on_pair(seed, x, y):
    if x == y:
        return
    f = RandomField("uniform02", seed)
    assert field_value(f, [x], [y]) == field_value(f, [y], [x]) == field_value(RandomField("uniform02", seed), [y], [x])


def test_matrices_bit_reproducible():
    w = LatticeWindow(2, 4, 4.0)
    base = build_pointwise(w, stable_kernel(2, 1.0), 2.0)
    a = apply_random_field(base, RandomField("uniform02", 42)).to_dense()
    b = apply_random_field(base, RandomField("uniform02", 42)).to_dense()
    c = apply_random_field(base, RandomField("uniform02", 43)).to_dense()
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()
    assert np.array_equal(a, a.T)


@pytest.fixture(scope="module")
def small_report():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        return rcm_experiment(stable_kernel(2, 1.0), "uniform02", [7, 8], [2, 4], 1.0, 4.0, gauss2d(4.0),
                              truncation_radius=2.0, quad_order=3)


def test_report_shape_and_determinism(small_report):
    assert [(r.seed, r.k) for r in small_report.rows] == [(7, 2), (7, 4), (8, 2), (8, 4)]
    assert not small_report.d1_warning
    again = rcm_experiment(stable_kernel(2, 1.0), "uniform02", [7, 8], [2, 4], 1.0, 4.0, gauss2d(4.0),
                           truncation_radius=2.0, quad_order=3, threads=4)
    assert again.rows == small_report.rows
    a, b = small_report.by_seed(7), small_report.by_seed(8)
    assert [r.random_error for r in a] != [r.random_error for r in b]
    assert [r.deterministic_error for r in a] == [r.deterministic_error for r in b]


def test_degenerate_field_columns_identical():
    rep = rcm_experiment(stable_kernel(2, 1.0), "bounded", [1], [2, 4], 1.0, 4.0, gauss2d(4.0),
                         truncation_radius=2.0, param=1.0, quad_order=3)
    for r in rep.rows:
        assert r.random_error == r.deterministic_error and r.random_vs_deterministic == 0.0


def test_d1_warning():
    f = ContinuumFunction.from_callable(lambda x: np.exp(-(x[..., 0] - 4) ** 2), d=1)
    with pytest.warns(RuntimeWarning, match="subsequences"):
        rep = rcm_experiment(stable_kernel(1, 1.0), "uniform02", 1, [4], 1.0, 8.0, f, truncation_radius=4.0)
    assert rep.d1_warning


def test_csv(tmp_path, small_report):
    p = tmp_path / "r.csv"
    small_report.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,lambda,seed,deterministic_error,random_error,random_vs_deterministic"
    assert len(lines) == 5


def test_trend_ok():
    assert trend_ok([3, 2, 1]) and not trend_ok([3, 3, 1]) and not trend_ok([1, math.nan])
