"""Discrete, continuum and truncated Dirichlet forms, and truncated generators.

The continuum and truncated quantities are one-dimensional: in d = 1 every
double integral over a pair of intervals reduces, through the displacement
h = z - w, to one-dimensional integrals of the kernel, which keeps them
exact up to a single adaptive quadrature.

Truncation balls are centred at x0 = (L/2, ..., L/2), which does not move
with the refinement level.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special

from .conductance import ConductanceMatrix, build_cell_averaged
from .errors import DomainError, UnsupportedKernelError
from .kernels import JumpKernel, tail_mass
from .lattice import LatticeWindow
from .transfer import ContinuumFunction, GridFunction, extend, restrict


@dataclass(frozen=True)
class TruncationParams:
    j: float
    delta: float

    def __post_init__(self):
        if not (self.j > 0 and self.delta > 0):
            raise DomainError("truncation needs j > 0 and delta > 0")

    def validate(self, w: LatticeWindow | None = None):
        if not self.delta < self.j:
            raise DomainError(f"need 0 < delta < j, got delta={self.delta}, j={self.j}")
        if w is not None and self.j + 2 > w.L / 2 + 1e-12:
            raise DomainError(f"ball B_(j+2) with j={self.j} does not fit a window of side {w.L}")


@dataclass
class FormValue:
    value: float
    quadrature_error: float = 0.0
    warning: str | None = None

    def __float__(self):
        return float(self.value)


def ball_center(w: LatticeWindow | None, d: int = 1) -> np.ndarray:
    return np.full(d, 0.0 if w is None else w.L / 2)


# ---------------------------------------------------------------------------
# discrete forms
def discrete_form(c: ConductanceMatrix, u: GridFunction, v: GridFunction | None = None) -> FormValue:
    """(1/2) sum_{x,y} (u(x)-u(y))(v(x)-v(y)) C(x,y) m_k(x) m_k(y).

    On an absorbing window the functions vanish outside, so pairs leaving the
    window contribute u(x) v(x) times the killing rate.
    """
    v = u if v is None else v
    if u.window != c.window or v.window != c.window:
        raise DomainError("grid functions and conductance matrix live on different windows")
    i, j, cv = c.pairs()
    mk = c.window.cell_volume
    du = u.values[i] - u.values[j]
    dv = du if v is u else v.values[i] - v.values[j]
    val = math.fsum(du * dv * cv) * mk * mk
    kill = c.killing()
    if np.any(kill):
        val += math.fsum(u.values * v.values * kill) * mk
    return FormValue(val)


def nested_form_pair(c_coarse: ConductanceMatrix, c_fine: ConductanceMatrix, g: GridFunction):
    """(eps^(fine)(pi_fine E_coarse g), eps^(coarse)(g)) for the monotonicity surrogate."""
    lifted = restrict(extend(g), c_fine.window, 1)
    return discrete_form(c_fine, lifted).value, discrete_form(c_coarse, g).value


# ---------------------------------------------------------------------------
# one-dimensional kernel primitives
def _require_1d(kern: JumpKernel):
    if kern.d != 1:
        raise UnsupportedKernelError("continuum and truncated forms are implemented for d = 1")
    if not kern.radial:
        raise UnsupportedKernelError("continuum forms need a radial kernel")


class _Antiderivatives:
    """Even second antiderivative Phi of j(h) 1{|h| > delta} with Phi(0) = Phi'(0) = 0."""

    def __init__(self, kern: JumpKernel, delta: float):
        _require_1d(kern)
        self.kern = kern
        self.delta = float(delta)
        self.closed = kern.kind == "stable"

    def d1(self, h):
        """Phi'(h) = int_0^h j(t) 1{|t| > delta} dt (odd in h)."""
        h = np.asarray(h, dtype=float)
        a = np.abs(h)
        if self.closed:
            al, A, de = self.kern.alpha, self.kern.amp, self.delta
            with np.errstate(divide="ignore"):
                out = np.where(a > de, A / al * (de ** -al - np.maximum(a, de) ** -al), 0.0)
        else:
            out = np.vectorize(self._num_d1)(a)
        return np.sign(h) * out

    def d0(self, h):
        """Phi(h) (even in h)."""
        a = np.abs(np.asarray(h, dtype=float))
        if self.closed:
            al, A, de = self.kern.alpha, self.kern.amp, self.delta
            x = np.maximum(a, de)
            if abs(al - 1.0) < 1e-14:
                core = (x - de) / de - np.log(x / de)
            else:
                core = de ** -al * (x - de) - (x ** (1 - al) - de ** (1 - al)) / (1 - al)
            return A / al * core
        return np.vectorize(self._num_d0)(a)

    def _num_d1(self, a):
        if a <= self.delta:
            return 0.0
        return integrate.quad(lambda t: self.kern.profile(t), self.delta, a, limit=200)[0]

    def _num_d0(self, a):
        if a <= self.delta:
            return 0.0
        return integrate.quad(self._num_d1, self.delta, a, limit=200)[0]

    def pair_mass(self, a1, b1, a2, b2):
        """int_{[a1,b1]} int_{[a2,b2]} j(z-w) 1{|z-w| > delta} dz dw (broadcasting)."""
        P = self.d0
        return P(b2 - a1) - P(a2 - a1) - P(b2 - b1) + P(a2 - b1)

    def point_mass(self, w, a2, b2):
        """int_{[a2,b2]} j(z-w) 1{|z-w| > delta} dz."""
        return self.d1(b2 - w) - self.d1(a2 - w)


def far_area(a1, b1, a2, b2, delta):
    """Lebesgue measure of {(w,z) in [a1,b1]x[a2,b2] : |z-w| > delta}."""
    l2 = b2 - a2

    def Q(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= 0, 0.0, np.where(s <= l2, 0.5 * s * s, 0.5 * l2 * l2 + l2 * (s - l2)))

    def G(t):
        return Q(b1 + t - a2) - Q(a1 + t - a2)

    full = (b1 - a1) * l2
    return np.maximum(full - (G(delta) - G(-delta)), 0.0)


def far_length(w, a2, b2, delta):
    """Length of [a2,b2] minus (w - delta, w + delta)."""
    lo = np.clip(w - delta, a2, b2)
    hi = np.clip(w + delta, a2, b2)
    return (b2 - a2) - (hi - lo)


# ---------------------------------------------------------------------------
@dataclass
class BallGrid:
    """Intervals [a_s, b_s] covering B_j in d = 1, each tagged with a parent lattice site."""
    a: np.ndarray
    b: np.ndarray
    parent: np.ndarray

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def lengths(self) -> np.ndarray:
        return self.b - self.a

    @classmethod
    def uniform(cls, center: float, j: float, n: int) -> "BallGrid":
        e = center - j + 2 * j * np.arange(n + 1) / n
        return cls(e[:-1], e[1:], np.arange(n))

    @classmethod
    def from_window(cls, w: LatticeWindow, j: float, sub: int = 1) -> "BallGrid":
        if w.d != 1:
            raise UnsupportedKernelError("ball grids are one-dimensional")
        x0 = w.L / 2
        lo_b, hi_b = x0 - j, x0 + j
        sites = np.arange(w.n_sites)
        lo, hi = w.cell_bounds(sites)
        lo, hi = lo[:, 0], hi[:, 0]
        keep = (hi > lo_b + 1e-14) & (lo < hi_b - 1e-14)
        lo, hi, sites = np.maximum(lo[keep], lo_b), np.minimum(hi[keep], hi_b), sites[keep]
        t = np.arange(sub + 1) / sub
        e = lo[:, None] + (hi - lo)[:, None] * t[None, :]
        return cls(e[:, :-1].ravel(), e[:, 1:].ravel(), np.repeat(sites, sub))

    def averages(self, f: ContinuumFunction, quad_order: int = 8) -> np.ndarray:
        g, wg = leggauss(quad_order)
        half = 0.5 * self.lengths
        x = (0.5 * (self.a + self.b))[:, None] + half[:, None] * g[None, :]
        vals = f(x[..., None]).reshape(x.shape)
        return (vals * wg[None, :]).sum(axis=1) * 0.5


class _PairModel:
    """Pair masses P_st and pointwise masses M_t(w) for a discrete or kernel source."""

    def __init__(self, source, grid: BallGrid, delta: float):
        self.grid = grid
        self.delta = delta
        if isinstance(source, ConductanceMatrix):
            self.c = source
            self.anti = None
        else:
            self.c = None
            self.anti = _Antiderivatives(source, delta)

    def block(self, rows: slice) -> np.ndarray:
        g = self.grid
        a1, b1 = g.a[rows, None], g.b[rows, None]
        a2, b2 = g.a[None, :], g.b[None, :]
        if self.anti is not None:
            P = self.anti.pair_mass(a1, b1, a2, b2)
        else:
            C = self.c.lookup(g.parent[rows, None], g.parent[None, :])
            P = C * far_area(a1, b1, a2, b2, self.delta)
        return P

    def point_block(self, w: np.ndarray, parents: np.ndarray) -> np.ndarray:
        g = self.grid
        if self.anti is not None:
            return self.anti.point_mass(w[:, None], g.a[None, :], g.b[None, :])
        C = self.c.lookup(parents[:, None], g.parent[None, :])
        return C * far_length(w[:, None], g.a[None, :], g.b[None, :], self.delta)


def _row_chunks(n: int, budget: int = 1 << 22):
    step = max(1, budget // max(n, 1))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


def pair_form(model: _PairModel, u: np.ndarray, v: np.ndarray | None = None) -> float:
    """(1/2) sum_{s,t} (u_s-u_t)(v_s-v_t) P_st."""
    v = u if v is None else v
    parts = []
    for rows in _row_chunks(model.grid.n):
        P = model.block(rows)
        du = u[rows, None] - u[None, :]
        dv = du if v is u else v[rows, None] - v[None, :]
        parts.append(float((du * dv * P).sum()))
    return 0.5 * math.fsum(parts)


@dataclass
class BallFunction:
    """A function on B_j known at Gauss nodes of each grid interval, plus exact interval integrals."""
    grid: BallGrid
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    interval_integrals: np.ndarray

    def norm2(self) -> float:
        return float((self.weights * self.values ** 2).sum())

    def inner_piecewise(self, u: np.ndarray) -> float:
        return float(np.dot(u, self.interval_integrals))


def _apply(model: _PairModel, u: np.ndarray, quad_order: int) -> BallFunction:
    g = model.grid
    gl, wl = leggauss(quad_order)
    half = 0.5 * g.lengths
    nodes = (0.5 * (g.a + g.b))[:, None] + half[:, None] * gl[None, :]
    weights = half[:, None] * wl[None, :]
    vals = np.empty_like(nodes)
    integ = np.empty(g.n)
    for rows in _row_chunks(g.n * quad_order):
        P = model.block(rows)
        integ[rows] = (P * (u[None, :] - u[rows, None])).sum(axis=1)
        w = nodes[rows].ravel()
        par = np.repeat(g.parent[rows], quad_order)
        M = model.point_block(w, par)
        ur = np.repeat(u[rows], quad_order)
        vals[rows] = ((u[None, :] - ur[:, None]) * M).sum(axis=1).reshape(-1, quad_order)
    return BallFunction(g, nodes, weights, vals, integ)


# ---------------------------------------------------------------------------
def truncated_discrete_form(c: ConductanceMatrix, f, trunc: TruncationParams, sub: int | None = None,
                            quad_order: int = 8) -> FormValue:
    """(1/2) int int_{B_j^2, rho > delta} (f(w)-f(z))^2 C(cell w, cell z) dw dz.

    ``f`` may be a GridFunction or a cellwise ContinuumFunction on the matrix
    window (exact pair sum) or any ContinuumFunction, which is then averaged
    over ``sub`` sub-intervals per cell (default 8).
    """
    w = c.window
    trunc.validate(w)
    warn = None
    if trunc.delta < 2 * math.sqrt(w.d) / w.k:
        warn = "delta below two cell diameters: the cutoff straddles cells"
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    exact = isinstance(f, GridFunction) or (isinstance(f, ContinuumFunction) and f.is_cellwise and f.window == w)
    grid = BallGrid.from_window(w, trunc.j, 1 if exact else (sub or 8))
    if isinstance(f, GridFunction):
        u = f.values[grid.parent]
    elif exact:
        u = f.values[grid.parent]
    else:
        u = grid.averages(f, quad_order)
    model = _PairModel(c, grid, trunc.delta)
    return FormValue(pair_form(model, u), 0.0, warn)


def truncated_generator_apply(source, u, trunc: TruncationParams, grid: BallGrid | None = None,
                              quad_order: int = 8) -> BallFunction:
    """L u(x) = int_{B_j} (u(y)-u(x)) kappa(x,y) 1{rho > delta} dy on B_j.

    ``source`` is a ConductanceMatrix (kappa = C extended to cells) or a
    JumpKernel.  ``u`` holds one value per interval of ``grid`` (piecewise
    constant); for a matrix source the grid defaults to the ball cells.
    """
    if isinstance(source, ConductanceMatrix):
        trunc.validate(source.window)
        grid = grid or BallGrid.from_window(source.window, trunc.j)
    else:
        trunc.validate()
        if grid is None:
            raise DomainError("a kernel source needs an explicit BallGrid")
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n,):
        raise DomainError(f"u needs {grid.n} interval values, got shape {u.shape}")
    return _apply(_PairModel(source, grid, trunc.delta), u, quad_order)


def truncated_kernel_form(kern: JumpKernel, grid: BallGrid, u, trunc: TruncationParams, v=None) -> FormValue:
    """eps_{j,delta}(u, v) for piecewise-constant u, v on ``grid`` (exact up to round-off)."""
    trunc.validate()
    u = np.asarray(u, dtype=float)
    v = None if v is None else np.asarray(v, dtype=float)
    return FormValue(pair_form(_PairModel(kern, grid, trunc.delta), u, v))


def k_jdelta(kern: JumpKernel, trunc: TruncationParams, center: float = 0.0, n_grid: int = 4001) -> float:
    """sup_{x in B_j} int_{B_j} 1{|x-y| > delta} j(x, y) dy, grid sup plus a Lipschitz margin."""
    _require_1d(kern)
    j, de = trunc.j, trunc.delta
    if de >= 2 * j:
        return 0.0
    anti = _Antiderivatives(kern, de)
    x = center + np.linspace(-j, j, n_grid)
    mass = anti.point_mass(x, center - j, center + j)
    # |d mass / dx| <= 2 sup_{|h| >= delta} j(h) = 2 j(delta)
    margin = 2.0 * float(kern.profile(de)) * (x[1] - x[0]) / 2
    return float(mass.max() + margin)


# ---------------------------------------------------------------------------
# continuum forms (d = 1)
def _support(f: ContinuumFunction, w: LatticeWindow | None):
    if f.is_cellwise:
        nz = np.nonzero(f.values)[0]
        if nz.size == 0:
            return None
        lo, _ = f.window.cell_bounds(nz[0])
        _, hi = f.window.cell_bounds(nz[-1])
        return float(lo[0]), float(hi[0])
    if f.support is None:
        if w is not None and w.periodic:
            box_lo = (w.offset - 0.5) / w.k
            return box_lo, box_lo + w.L
        raise DomainError("continuum forms need a compactly supported function (set `support`)")
    lo, hi = float(np.min(f.support[0])), float(np.max(f.support[1]))
    if not hi > lo:
        return None
    if w is not None and not w.periodic:
        box_lo = (w.offset - 0.5) / w.k
        if lo < box_lo or hi > box_lo + w.L:
            raise DomainError("function support leaves the window")
    return lo, hi


def _breaks(f: ContinuumFunction) -> np.ndarray:
    return np.asarray(f.axis_breaks(0), dtype=float)


def periodized_profile(kern: JumpKernel, L: float, n_images: int = 4000):
    """h -> sum_n j(h + nL) on (0, L); Hurwitz zeta closed form for stable kernels."""
    if kern.kind == "stable":
        s = 1.0 + kern.alpha
        c = kern.amp * L ** (-s)
        return lambda h: c * (special.zeta(s, np.asarray(h) / L) + special.zeta(s, 1.0 - np.asarray(h) / L))
    n = np.arange(-n_images, n_images + 1)
    far = tail_mass(kern, np.zeros(1), (n_images + 0.5) * L) / L

    def prof(h):
        h = np.asarray(h, dtype=float)
        return kern.profile(np.abs(h[..., None] + n * L)).sum(axis=-1) + far
    return prof


class _Shift:
    """S(h) = int (f(x+h) - f(x))^2 dx over a range, by composite Gauss on smooth pieces."""

    def __init__(self, f, lo, hi, period=None, order=10, max_piece=0.125):
        self.f, self.lo, self.hi, self.period = f, lo, hi, period
        self.bp = _breaks(f)
        self.g, self.wg = leggauss(order)
        self.max_piece = max_piece

    def _eval(self, x):
        if self.period is not None:
            x = self.lo + np.mod(x - self.lo, self.period)
        return self.f(x[..., None]).reshape(x.shape)

    def __call__(self, h, x_lo=None, x_hi=None):
        x_lo = self.lo if x_lo is None else x_lo
        x_hi = self.hi if x_hi is None else x_hi
        if x_hi <= x_lo:
            return 0.0
        cuts = np.concatenate([[x_lo, x_hi], self.bp, self.bp - h])
        if self.period is not None:
            P = self.period
            cuts = np.concatenate([cuts] + [cuts + m * P for m in (-2, -1, 1, 2)])
        cuts = np.unique(cuts[(cuts >= x_lo) & (cuts <= x_hi)])
        a, b = cuts[:-1], cuts[1:]
        nsub = np.maximum(1, np.ceil((b - a) / self.max_piece)).astype(int)
        starts = np.repeat(a, nsub) + (np.concatenate([np.arange(m) for m in nsub]) *
                                        np.repeat((b - a) / nsub, nsub))
        widths = np.repeat((b - a) / nsub, nsub)
        x = (starts + 0.5 * widths)[:, None] + 0.5 * widths[:, None] * self.g[None, :]
        vals = (self._eval(x + h) - self._eval(x)) ** 2
        return float(((vals * self.wg[None, :]).sum(axis=1) * 0.5 * widths).sum())


def continuum_form(kern: JumpKernel, f: ContinuumFunction, trunc: TruncationParams | None = None,
                   window: LatticeWindow | None = None, epsrel: float = 1e-10) -> FormValue:
    """(1/2) int int (f(x)-f(y))^2 j(x,y) dx dy in d = 1.

    With a periodic ``window`` the form is taken on the torus, with the
    periodised kernel.  With ``trunc`` the integral runs over
    {(x,y) in B_j^2 : |x-y| > delta}, B_j centred at x0 = L/2 (0 without a window).
    """
    _require_1d(kern)
    if f.d != 1:
        raise DomainError("continuum_form is one-dimensional")
    sup = _support(f, window)
    if sup is None:
        return FormValue(0.0, 0.0)
    periodic = window is not None and window.periodic
    J = periodized_profile(kern, window.L) if periodic else kern.profile
    bp = np.concatenate([_breaks(f), list(sup)])
    diffs = np.abs(bp[:, None] - bp[None, :]).ravel()

    if trunc is not None:
        trunc.validate(window)
        x0 = ball_center(window)[0]
        S = _Shift(f, x0 - trunc.j, x0 + trunc.j, window.L if periodic else None)
        lo, hi = trunc.delta, 2 * trunc.j
        cand = np.concatenate([diffs, x0 + trunc.j - bp, bp - x0 + trunc.j])
        pts = sorted({float(p) for p in cand if lo < p < hi})
        val, err = integrate.quad(lambda h: J(h) * S(h, x0 - trunc.j, x0 + trunc.j - h), lo, hi,
                                  points=pts or None, limit=400, epsabs=0.0, epsrel=epsrel)
        return FormValue(val, err)

    width = sup[1] - sup[0]
    if periodic:
        box_lo = (window.offset - 0.5) / window.k
        S = _Shift(f, box_lo, box_lo + window.L, window.L)
        H = window.L / 2
        pts = sorted(p for p in np.concatenate([diffs, window.L - diffs]) if 0 < p < H)
        val, err = integrate.quad(lambda h: J(h) * S(h), 0.0, H, points=pts or None, limit=400,
                                  epsabs=0.0, epsrel=epsrel)
        return FormValue(val, err)
    S = _Shift(f, sup[0] - width, sup[1])
    pts = sorted(p for p in diffs if 0 < p < width)
    val, err = integrate.quad(lambda h: J(h) * S(h, sup[0] - h, sup[1]), 0.0, width, points=pts or None,
                              limit=400, epsabs=0.0, epsrel=epsrel)
    norm2 = S(width + 1.0, sup[0], sup[1])  # = ||f||^2: the shifted copy misses the support
    # for h > width, S(h) = 2 ||f||^2 and int_width^inf j = tail_mass / 2
    tail = tail_mass(kern, np.zeros(1), width) * norm2
    return FormValue(val + tail, err)


# ---------------------------------------------------------------------------
@dataclass
class SweepRow:
    k: int
    discrete_value: float
    target_value: float
    abs_error: float
    quadrature_error: float


def form_convergence_sweep(kern: JumpKernel, f: ContinuumFunction, k_list, L: float,
                           topology: str = "periodic", truncation_radius: float = 2000.0,
                           quad_order: int = 8, anchor: str = "centered",
                           target: FormValue | None = None) -> list[SweepRow]:
    """eps^(k)(pi_k f, pi_k f) on cell-averaged matrices against the continuum form."""
    ks = list(k_list)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise DomainError("k_list must be increasing")
    rows = []
    for k in ks:
        w = LatticeWindow(kern.d, int(k), L, topology, anchor)
        if target is None:
            target = continuum_form(kern, f, window=w)
        c = build_cell_averaged(w, kern, quad_order, truncation_radius)
        u = restrict(f, w, quad_order)
        val = discrete_form(c, u).value
        rows.append(SweepRow(int(k), val, target.value, abs(val - target.value), target.quadrature_error))
    return rows
