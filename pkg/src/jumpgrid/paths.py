"""Trajectories of the lattice chain X^(k) and path-level diagnostics.

Every path owns a counter-based stream: Philox keyed by (seed, path id).
Jump i consumes the doubles 2i (holding time) and 2i+1 (target), so a path
does not depend on how paths are scheduled across threads.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError
from .lattice import LatticeWindow
from .resolvent import GeneratorMatrix
from .transfer import GridFunction

_START_TAG = 1 << 62


def path_rng(seed: int, path_id: int, tag: int = 0) -> np.random.Generator:
    if not (0 <= seed < 1 << 64):
        raise DomainError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=int(seed) | ((int(path_id) | tag) << 64)))


@dataclass
class PathSample:
    """A right-continuous path: ``states[i]`` is held on [jump_times[i-1], jump_times[i]).

    ``coords`` are physical coordinates of the visited states.  ``lifetime``
    is the time a jump left an absorbing window (inf otherwise).
    """
    window: LatticeWindow
    jump_times: np.ndarray
    states: np.ndarray
    T: float
    exited: bool = False
    lifetime: float = math.inf
    seed: int = 0
    path_id: int = 0
    coords: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.jump_times = np.asarray(self.jump_times, dtype=float)
        self.states = np.asarray(self.states, dtype=np.int64)
        if len(self.states) != len(self.jump_times) + 1:
            raise DomainError("a path has one more state than jumps")
        if self.coords is None:
            self.coords = self.window.coords(self.states).reshape(len(self.states), self.window.d)

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def index_at(self, t) -> np.ndarray:
        return np.searchsorted(self.jump_times, t, side="right")

    def state_at(self, t) -> np.ndarray:
        return self.states[self.index_at(t)]

    def alive_at(self, t) -> np.ndarray:
        return np.asarray(t) < self.lifetime


@dataclass(frozen=True)
class CrossingSpec:
    D1: np.ndarray
    D2: np.ndarray
    g_fn: GridFunction
    gap: float


def crossing_spec(w: LatticeWindow, D1, D2, g_fn: GridFunction | None = None, min_gap: float = 0.0) -> CrossingSpec:
    """Site sets D1, D2 (flat indices) and a test function g = 0 on D1, 1 on D2.

    Without ``g_fn`` the test function is rho(x,D1) / (rho(x,D1) + rho(x,D2)).
    """
    D1 = np.unique(np.asarray(D1, dtype=np.int64))
    D2 = np.unique(np.asarray(D2, dtype=np.int64))
    if np.intersect1d(D1, D2).size:
        raise DomainError("D1 and D2 overlap")
    if D1.size == 0 or D2.size == 0:
        raise DomainError("D1 and D2 must be nonempty")
    dist = _set_distance(w, np.arange(w.n_sites), D1), _set_distance(w, np.arange(w.n_sites), D2)
    gap = float(dist[1][D1].min())
    if not gap > min_gap:
        raise DomainError(f"D1 and D2 are {gap} apart, need more than {min_gap}")
    if g_fn is None:
        g_fn = GridFunction(w, dist[0] / (dist[0] + dist[1]))
    if np.any(g_fn.values[D1] != 0) or np.any(g_fn.values[D2] != 1):
        raise DomainError("g_fn must be 0 on D1 and 1 on D2")
    return CrossingSpec(D1, D2, g_fn, gap)


def _set_distance(w: LatticeWindow, sites, S) -> np.ndarray:
    out = np.full(len(sites), np.inf)
    for s in S:
        out = np.minimum(out, w.euclid(sites, np.full(len(sites), s)))
    return out


def sites_in_box(w: LatticeWindow, lo, hi) -> np.ndarray:
    """Sites whose coordinates lie in the closed box [lo, hi]."""
    x = w.all_coords
    lo = np.broadcast_to(np.asarray(lo, float), (w.d,))
    hi = np.broadcast_to(np.asarray(hi, float), (w.d,))
    return np.nonzero(np.all((x >= lo - 1e-12) & (x <= hi + 1e-12), axis=1))[0]


# ---------------------------------------------------------------------------
class _Sampler:
    """Jump tables for one generator: a shared offset law (stencil) or per-site rows."""

    def __init__(self, g: GeneratorMatrix):
        self.g = g
        self.w = g.window
        c = g.source
        mk = self.w.cell_volume
        self.stencil = c is not None and c.translation_invariant and g.backend in ("fft", "conv")
        if self.stencil:
            order = np.lexsort(c.stencil_offsets.T[::-1])
            self.offsets = c.stencil_offsets[order]
            rates = c.stencil_values[order] * mk
            self.total = float(rates.sum())
            self.cdf = np.cumsum(rates) / self.total if self.total > 0 else np.zeros(0)
        else:
            self.lam = g.lam
            if g.backend == "dense":
                self.rowfn = lambda x: (np.nonzero(g.W[x])[0], g.W[x][g.W[x] != 0] * mk)
            elif g.backend == "csr":
                W = g.W

                def rowfn(x):
                    s, e = W.indptr[x], W.indptr[x + 1]
                    return W.indices[s:e], W.data[s:e] * mk
                self.rowfn = rowfn
            else:
                raise DomainError("per-site sampling needs a dense or csr generator")
            self.kill = c.killing() if c is not None else np.zeros(self.w.n_sites)
            self._rows = {}

    @property
    def constant_rate(self) -> bool:
        return self.stencil

    def row(self, x):
        r = self._rows.get(x)
        if r is None:
            tg, rt = self.rowfn(x)
            order = np.argsort(tg, kind="stable")
            tg, rt = tg[order], rt[order]
            cum = np.cumsum(rt)
            total = cum[-1] + self.kill[x] if len(cum) else self.kill[x]
            r = (tg, cum, total)
            self._rows[x] = r
        return r

    def move(self, x_multi: np.ndarray, idx: np.ndarray):
        """Stencil jump by offset ``idx`` from multi-index; returns (multi, inside)."""
        tgt = x_multi + self.offsets[idx]
        n = self.w.n_per_axis
        if self.w.periodic:
            return tgt % n, np.ones(len(tgt), dtype=bool)
        inside = np.all((tgt >= 0) & (tgt < n), axis=-1)
        return tgt, inside


def _sample_stencil(s: _Sampler, x0: int, T: float, rng: np.random.Generator, seed, pid) -> PathSample:
    w = s.w
    if s.total == 0:
        return PathSample(w, [], [x0], T, seed=seed, path_id=pid)
    expect = s.total * T
    block = int(expect + 6 * math.sqrt(expect) + 16)
    times_all, targets_all = [], []
    t = 0.0
    multi = w.multi_index(x0)
    states = [np.asarray(multi)[None, :]]
    exited, life = False, math.inf
    while True:
        u = rng.random(2 * block)
        hold = -np.log1p(-u[0::2]) / s.total
        tt = t + np.cumsum(hold)
        m = int(np.searchsorted(tt, T, side="right"))
        idx = np.searchsorted(s.cdf, u[1::2][:m], side="right")
        idx = np.minimum(idx, len(s.cdf) - 1)
        steps = s.offsets[idx]
        path = multi + np.cumsum(steps, axis=0)
        if w.periodic:
            path %= w.n_per_axis
        else:
            out = ~np.all((path >= 0) & (path < w.n_per_axis), axis=1)
            if out.any():
                first = int(np.argmax(out))
                exited, life = True, float(tt[first])
                times_all.append(tt[:first])
                states.append(path[:first])
                break
        times_all.append(tt[:m])
        states.append(path)
        if m < block:
            break
        t = float(tt[-1])
        multi = path[-1]
    times = np.concatenate(times_all) if times_all else np.zeros(0)
    st = np.concatenate(states, axis=0)
    return PathSample(w, times, w.flat_index(st), T, exited, life, seed, pid)


def _sample_rows(s: _Sampler, x0: int, T: float, rng: np.random.Generator, seed, pid) -> PathSample:
    w = s.w
    t = 0.0
    x = int(x0)
    times, states = [], [x]
    exited, life = False, math.inf
    buf = rng.random(256)
    pos = 0
    while True:
        tg, cum, total = s.row(x)
        if total <= 0:
            break
        if pos + 2 > len(buf):
            buf = np.concatenate([buf[pos:], rng.random(len(buf))])
            pos = 0
        u1, u2 = buf[pos], buf[pos + 1]
        pos += 2
        t += -math.log1p(-u1) / total
        if t > T:
            break
        k = int(np.searchsorted(cum, u2 * total, side="right"))
        if k >= len(tg):
            exited, life = True, t
            break
        x = int(tg[k])
        times.append(t)
        states.append(x)
    return PathSample(w, times, states, T, exited, life, seed, pid)


def sample_path(g: GeneratorMatrix, x0: int, T: float, seed: int, path_id: int = 0) -> PathSample:
    """One trajectory on [0, T] from site ``x0`` (deterministic in (seed, path_id, x0, T))."""
    if not T >= 0:
        raise DomainError("horizon T must be nonnegative")
    s = _Sampler(g)
    rng = path_rng(seed, path_id)
    if s.constant_rate:
        return _sample_stencil(s, int(x0), float(T), rng, seed, path_id)
    return _sample_rows(s, int(x0), float(T), rng, seed, path_id)


def sample_ensemble(g: GeneratorMatrix, n_paths: int, T: float, seed: int, x0=None,
                    initial: GridFunction | None = None, threads: int = 1) -> list[PathSample]:
    """Paths 0..n-1, from ``x0`` or from the law ``initial * m_k`` (normalised)."""
    if (x0 is None) == (initial is None):
        raise DomainError("give exactly one of x0 and initial")
    s = _Sampler(g)
    if initial is not None:
        p = np.asarray(initial.values, dtype=float)
        if np.any(p < 0) or p.sum() <= 0:
            raise DomainError("initial density must be nonnegative and nonzero")
        cdf = np.cumsum(p) / p.sum()
        starts = [int(min(np.searchsorted(cdf, path_rng(seed, i, _START_TAG).random(), side="right"),
                          len(cdf) - 1)) for i in range(n_paths)]
    else:
        starts = [int(x0)] * n_paths
    fn = _sample_stencil if s.constant_rate else _sample_rows

    def one(i):
        return fn(s, starts[i], float(T), path_rng(seed, i), seed, i)

    if threads > 1 and not s.constant_rate:
        # per-site row tables are filled lazily; warm them so threads only read
        for x in range(g.n):
            s.row(x)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, range(n_paths)))
    return [one(i) for i in range(n_paths)]


def scale_path(p: PathSample, k: int, alpha: float) -> PathSample:
    """X^(k)_t = k^-1 X^(1)_{k^alpha t}: times / k^alpha, states / k."""
    w = p.window
    if w.k != 1:
        raise DomainError("scale_path expects a path on the unit lattice")
    if k == 1:
        return p
    w2 = LatticeWindow(w.d, k, w.L / k, w.topology, w.anchor)
    s = k ** alpha
    return PathSample(w2, p.jump_times / s, p.states, p.T / s, p.exited, p.lifetime / s, p.seed, p.path_id)


# ---------------------------------------------------------------------------
def count_crossings(p: PathSample, spec: CrossingSpec) -> int:
    """Completed D1 -> D2 passages: each D1 visit arms, the next D2 visit counts and disarms."""
    n = p.window.n_sites
    lab = np.zeros(n, dtype=np.int8)
    lab[spec.D1] = 1
    lab[spec.D2] = 2
    seq = lab[p.states]
    seq = seq[seq > 0]
    if seq.size < 2:
        return 0
    return int(np.count_nonzero((seq[1:] == 2) & (seq[:-1] == 1)))


def cm_distance(p: PathSample, q: PathSample) -> float:
    """int_0^1 (rho(p_t, q_t) ^ 1) dt; a dead path is at distance 1 from a live one."""
    if p.window.d != q.window.d:
        raise DomainError("paths live in different dimensions")
    grid = np.unique(np.concatenate([[0.0, 1.0], p.jump_times, q.jump_times,
                                     [min(p.lifetime, 1.0), min(q.lifetime, 1.0)]]))
    grid = grid[(grid >= 0) & (grid <= 1)]
    a, b = grid[:-1], grid[1:]
    mid = 0.5 * (a + b)
    xp = p.coords[p.index_at(mid)]
    xq = q.coords[q.index_at(mid)]
    delta = xq - xp
    if p.window.periodic and q.window.periodic and p.window.L == q.window.L:
        delta = p.window.point_delta(xp, xq)
    dist = np.minimum(np.sqrt((delta ** 2).sum(axis=1)), 1.0)
    ap, aq = p.alive_at(mid), q.alive_at(mid)
    dist = np.where(ap & aq, dist, np.where(ap == aq, 0.0, 1.0))
    return float(np.dot(dist, b - a))


@dataclass
class KSResult:
    statistic: float
    pvalue: float
    n_used: int
    excluded_fraction: float


def marginal_values(paths, t: float, coordinate: int = 0, relative: bool = True):
    """Coordinate of X_t (displacement from the start when ``relative``) for surviving paths."""
    vals, dead = [], 0
    for p in paths:
        if not t <= p.T:
            raise DomainError(f"t={t} beyond the path horizon {p.T}")
        if not p.alive_at(t):
            dead += 1
            continue
        x = p.coords[p.index_at(t)]
        if relative:
            x = p.window.point_delta(p.coords[0], x) if p.window.periodic else x - p.coords[0]
        vals.append(x[coordinate])
    return np.asarray(vals), dead


def marginal_ks(paths, t: float, reference, coordinate: int = 0, relative: bool = True) -> KSResult:
    """Two-sided KS statistic of the time-t marginal against a CDF or a reference sample."""
    if len(paths) < 100:
        raise DomainError("marginal_ks needs at least 100 paths")
    vals, dead = marginal_values(paths, t, coordinate, relative)
    if callable(reference):
        res = stats.kstest(vals, reference)
    else:
        res = stats.ks_2samp(vals, np.asarray(reference, dtype=float))
    return KSResult(float(res.statistic), float(res.pvalue), len(vals), dead / len(paths))


@dataclass
class HoldingStats:
    site: int
    n_visits: int
    mean: float
    stderr: float
    expected: float


def holding_time_stats(paths, g: GeneratorMatrix, sites) -> list[HoldingStats]:
    """Completed holding times at each site (the final, censored stay is dropped)."""
    sites = [int(x) for x in sites]
    want = set(sites)
    acc = {x: [] for x in sites}
    for p in paths:
        if p.n_jumps == 0:
            continue
        t = np.concatenate([[0.0], p.jump_times])
        held = np.diff(t)
        st = p.states[:-1]
        # the first stay is a full exponential too (memoryless start)
        for x in want.intersection(np.unique(st).tolist()):
            acc[x].append(held[st == x])
    out = []
    for x in sites:
        h = np.concatenate(acc[x]) if acc[x] else np.zeros(0)
        n = len(h)
        mean = float(h.mean()) if n else math.nan
        se = float(h.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        lam = float(g.lam[x])
        out.append(HoldingStats(x, n, mean, se, 1.0 / lam if lam > 0 else math.inf))
    return out


def occupation_fractions(p: PathSample, T: float | None = None) -> np.ndarray:
    """Fraction of [0, T] spent at each site."""
    T = p.T if T is None else T
    t = np.concatenate([[0.0], p.jump_times[p.jump_times < T], [T]])
    st = p.states[:len(t) - 1]
    return np.bincount(st, weights=np.diff(t), minlength=p.window.n_sites) / T


# ---------------------------------------------------------------------------
def write_paths_csv(paths, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        d = paths[0].window.d if paths else 1
        wr.writerow(["path_id", "jump_index", "time"] + [f"x{i}" for i in range(d)])
        for p in paths:
            times = np.concatenate([[0.0], p.jump_times])
            for i, (tt, x) in enumerate(zip(times, p.coords)):
                wr.writerow([p.path_id, i, "%.17g" % tt] + ["%.17g" % v for v in x])


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
