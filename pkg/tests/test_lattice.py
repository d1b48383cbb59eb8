import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumpgrid.errors import DomainError
from jumpgrid.lattice import LatticeWindow, ag_constants, cell_measure, graph_distance, graph_distance_idx


def test_graph_distance_examples():
    assert graph_distance(LatticeWindow(2, 4, 2.0), (0, 0), (0.25, 0.25)) == 2
    w = LatticeWindow(1, 5, 3.0)
    assert graph_distance(w, (0.4,), (0.4,)) == 0
    assert graph_distance(LatticeWindow(1, 2, 4.0), (0.0,), (3.5,)) == 1


def test_graph_distance_matches_bfs_on_cycle():
    # shortest path on the 8-cycle by breadth-first search
    w = LatticeWindow(1, 2, 4.0)
    n = w.n_per_axis
    for s in range(n):
        dist = {s: 0}
        frontier = [s]
        while frontier:
            nxt = []
            for v in frontier:
                for u in ((v + 1) % n, (v - 1) % n):
                    if u not in dist:
                        dist[u] = dist[v] + 1
                        nxt.append(u)
            frontier = nxt
        for t in range(n):
            assert graph_distance(w, w.coords(s), w.coords(t)) == dist[t]


def test_off_lattice_point_rejected():
    with pytest.raises(DomainError):
        graph_distance(LatticeWindow(1, 4, 2.0), (0.1,), (0.0,))


@pytest.mark.parametrize("d,cut", [(1, 4.0), (2, 8.0), (3, 12.0)])
def test_ag_constants(d, cut):
    ag = ag_constants(LatticeWindow(d, 2, 2.0))
    assert ag.C1 == pytest.approx(1 / math.sqrt(d))
    assert ag.C2 == 1.0
    assert ag.C3 == pytest.approx(math.sqrt(d))
    assert ag.cutoff_threshold == cut


@pytest.mark.parametrize("d", [1, 2])
def test_ag_sandwich_exhaustive(d):
    w = LatticeWindow(d, 2, 3.0, "absorbing")
    n = w.n_sites
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a, b = a.ravel(), b.ravel()
    keep = a != b
    a, b = a[keep], b[keep]
    ag = ag_constants(w)
    rho_k = graph_distance_idx(w, a, b)
    rho = w.euclid(a, b)
    assert np.all(ag.C1 / w.k * rho_k <= rho)
    assert np.all(rho <= ag.C2 / w.k * rho_k)
    # cell diameter
    lo, hi = w.cell_bounds(np.arange(n))
    assert np.all(np.sqrt(((hi - lo) ** 2).sum(axis=1)) <= ag.C3 / w.k + 1e-15)


@pytest.mark.parametrize("d,k", list(itertools.product([1, 2, 3], [2, 4, 8])))
def test_metric_sandwich_random_pairs(d, k):
    w = LatticeWindow(d, k, 4.0 if d < 3 else 2.0)
    rng = np.random.default_rng(d * 100 + k)
    a = rng.integers(0, w.n_sites, 1000)
    b = rng.integers(0, w.n_sites, 1000)
    keep = a != b
    a, b = a[keep], b[keep]
    # squared integer form of (C1/k) rho_k <= rho <= (C2/k) rho_k with C1^2 = 1/d, C2 = 1:
    # exact, so no tolerance is needed even at the equality case of diagonal pairs
    delta = w.index_delta(a, b)
    rho_k = delta.sum(axis=-1)
    k2rho2 = (delta ** 2).sum(axis=-1)
    assert ag_constants(w).C2 == 1.0
    assert np.all(rho_k ** 2 <= d * k2rho2)
    assert np.all(k2rho2 <= rho_k ** 2)


@pytest.mark.parametrize("d,k,m", [(1, 2, 0.5), (2, 4, 0.0625), (3, 1, 1.0)])
def test_cell_measure(d, k, m):
    assert cell_measure(LatticeWindow(d, k, 2.0)) == m


@given(st.integers(1, 3), st.sampled_from([1, 2, 4, 8]), st.sampled_from([1.0, 2.0, 3.0]),
       st.sampled_from(["periodic", "absorbing"]))
def test_partition_volume(d, k, L, topo):
    w = LatticeWindow(d, k, L, topo)
    assert math.isclose(math.fsum([cell_measure(w)] * w.n_sites), L ** d, rel_tol=1e-15)


def test_graph_distance_is_metric_exhaustive():
    for topo in ("periodic", "absorbing"):
        w = LatticeWindow(2, 5, 1.0, topo)
        n = w.n_sites
        idx = np.arange(n)
        D = np.stack([graph_distance_idx(w, np.full(n, i), idx) for i in idx])
        assert np.array_equal(D, D.T)
        assert np.all(np.diag(D) == 0) and np.all(D[~np.eye(n, dtype=bool)] > 0)
        # triangle inequality over all triples
        assert np.all(D[:, None, :] <= D[:, :, None] + D[None, :, :].transpose(0, 2, 1) + 0)


@given(st.integers(0, 63), st.integers(0, 63))
def test_site_roundtrip(i, j):
    w = LatticeWindow(2, 4, 2.0)
    f = w.flat_index([i % 8, j % 8])
    assert int(w.site_of(w.coords(f))) == int(f)


def test_window_validation():
    with pytest.raises(DomainError):
        LatticeWindow(1, 3, 1.5)
    with pytest.raises(DomainError):
        LatticeWindow(0, 1, 1.0)
    with pytest.raises(DomainError):
        LatticeWindow(1, 1, 1.0, "open")


def test_dyadic_cells_nest():
    coarse = LatticeWindow(1, 4, 2.0, anchor="dyadic")
    fine = coarse.with_level(8)
    lo_c, hi_c = coarse.cell_bounds(np.arange(coarse.n_sites))
    lo_f, hi_f = fine.cell_bounds(np.arange(fine.n_sites))
    parent = coarse.cell_of(0.5 * (lo_f + hi_f))
    assert np.all(lo_c[parent] <= lo_f + 1e-15) and np.all(hi_f <= hi_c[parent] + 1e-15)
