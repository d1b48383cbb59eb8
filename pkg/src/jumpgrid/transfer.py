"""Restriction pi_k and extension E_k between the continuum window and V_k.

Continuum integrals are computed on a *segment grid*: every axis of the
window is cut at the cell edges of the target lattice and at the
breakpoints of the integrand, and each segment gets a Gauss-Legendre rule.
Piecewise-constant integrands are therefore integrated exactly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError
from .lattice import LatticeWindow

_CHUNK = 1 << 22


@dataclass
class GridFunction:
    window: LatticeWindow
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.window.n_sites:
            raise DomainError(f"expected {self.window.n_sites} site values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function values must be finite")
        self.values = v

    def inner(self, other: "GridFunction") -> float:
        """<f, g>_k = sum_x f(x) g(x) m_k(x)."""
        if other.window != self.window:
            raise DomainError("grid functions live on different windows")
        return float(np.dot(self.values, other.values) * self.window.cell_volume)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


@dataclass
class ContinuumFunction:
    """A function on the continuum window.

    ``kind`` is ``"callable"`` (closed form), ``"piecewise"`` (constant on the
    cells of ``window``; the image of E_k) or ``"tabulated"`` (constant on a
    fine grid, used as a quadrature proxy).  ``breakpoints`` lists, per axis,
    coordinates where a callable is not smooth.
    """
    d: int
    kind: str
    fn: Callable | None = None
    window: LatticeWindow | None = None
    values: np.ndarray | None = None
    breakpoints: tuple = field(default_factory=tuple)
    support: tuple | None = None

    @classmethod
    def from_callable(cls, fn, d=1, breakpoints=None, support=None):
        bps = tuple(np.sort(np.atleast_1d(np.asarray(b, float))) for b in (breakpoints or [()] * d))
        return cls(d, "callable", fn=fn, breakpoints=bps, support=support)

    @classmethod
    def piecewise(cls, window: LatticeWindow, values, kind="piecewise"):
        v = np.asarray(values, dtype=float).ravel()
        if v.size != window.n_sites:
            raise DomainError(f"expected {window.n_sites} cell values, got {v.size}")
        return cls(window.d, kind, window=window, values=v)

    @classmethod
    def tabulate(cls, fn, w: LatticeWindow, q: int = 4):
        """Fine-grid tabulation at resolution q*k (cell midpoints)."""
        if q < 2:
            raise DomainError("tabulation factor q must be >= 2")
        fine = w.with_level(w.k * q)
        return cls.piecewise(fine, fn(fine.all_coords), kind="tabulated")

    @property
    def is_cellwise(self) -> bool:
        return self.kind in ("piecewise", "tabulated")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.is_cellwise:
            return np.asarray(self.fn(x), dtype=float) * np.ones(x.shape[:-1])
        w = self.window
        out = self.values[w.cell_of(x)]
        if not w.periodic:
            lo, hi = _box(w)
            inside = np.all((x >= lo) & (x < hi), axis=-1)
            out = np.where(inside, out, 0.0)
        return out

    def axis_breaks(self, axis: int) -> np.ndarray:
        if self.is_cellwise:
            return _edges(self.window)
        if self.breakpoints:
            return self.breakpoints[axis]
        return np.zeros(0)


def _box(w: LatticeWindow):
    lo = (w.offset - 0.5) / w.k
    return lo, lo + w.L


def _edges(w: LatticeWindow) -> np.ndarray:
    lo, _ = _box(w)
    return lo + np.arange(w.n_per_axis + 1) / w.k


def _axis_segments(w: LatticeWindow, extra: list[np.ndarray]):
    """Segments (a, b, cell) covering the window box along one axis."""
    lo, hi = _box(w)
    cuts = [_edges(w)]
    for e in extra:
        if e.size == 0:
            continue
        if w.periodic:
            e = lo + np.mod(e - lo, w.L)
        cuts.append(e[(e > lo) & (e < hi)])
    pts = np.unique(np.concatenate(cuts))
    # merge cut points closer than round-off
    keep = np.concatenate([[True], np.diff(pts) > 1e-13 * max(1.0, w.L)])
    pts = pts[keep]
    pts[-1] = hi
    a, b = pts[:-1], pts[1:]
    cell = np.clip(np.floor((0.5 * (a + b) - lo) * w.k).astype(np.int64), 0, w.n_per_axis - 1)
    return a, b, cell


def _segment_rule(w: LatticeWindow, funcs, quad_order: int):
    """Per-axis nodes, weights and owning cell for the common segment grid."""
    g, wg = leggauss(quad_order)
    axes = []
    for ax in range(w.d):
        a, b, cell = _axis_segments(w, [f.axis_breaks(ax) for f in funcs])
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b))[:, None] + half[:, None] * g[None, :]
        wts = half[:, None] * wg[None, :]
        axes.append((nodes.ravel(), wts.ravel(), np.repeat(cell, quad_order)))
    return axes


def _integrate_cells(w: LatticeWindow, integrand, funcs, quad_order: int) -> np.ndarray:
    """Per-cell integrals of ``integrand(x)`` (vectorised over points (m, d))."""
    axes = _segment_rule(w, funcs, quad_order)
    out = np.zeros(w.n_sites)
    if w.d == 1:
        x, wt, c = axes[0]
        vals = integrand(x[:, None])
        return np.bincount(c, wt * vals, minlength=w.n_sites)
    # tensor product; loop over the first axis to bound memory
    rest_nodes = np.stack(np.meshgrid(*[ax[0] for ax in axes[1:]], indexing="ij"), axis=-1).reshape(-1, w.d - 1)
    rest_w = np.prod(np.stack(np.meshgrid(*[ax[1] for ax in axes[1:]], indexing="ij"), axis=-1), axis=-1).ravel()
    rest_c = np.stack(np.meshgrid(*[ax[2] for ax in axes[1:]], indexing="ij"), axis=-1).reshape(-1, w.d - 1)
    x0, w0, c0 = axes[0]
    step = max(1, _CHUNK // max(1, len(rest_w)))
    for s in range(0, len(x0), step):
        xs, ws, cs = x0[s:s + step], w0[s:s + step], c0[s:s + step]
        pts = np.concatenate([np.repeat(xs, len(rest_w))[:, None], np.tile(rest_nodes, (len(xs), 1))], axis=1)
        wt = np.repeat(ws, len(rest_w)) * np.tile(rest_w, len(xs))
        cells = np.concatenate([np.repeat(cs, len(rest_w))[:, None], np.tile(rest_c, (len(xs), 1))], axis=1)
        out += np.bincount(w.flat_index(cells), wt * integrand(pts), minlength=w.n_sites)
    return out


def _order_for(funcs, quad_order):
    # products of cellwise functions are constant on segments: one node suffices
    return 1 if all(f.is_cellwise for f in funcs) else quad_order


def restrict(f: ContinuumFunction, w: LatticeWindow, quad_order: int = 8) -> GridFunction:
    """pi_k f(x) = m_k(x)^-1 int_{U_k(x)} f dm."""
    if f.d != w.d:
        raise DomainError(f"function dimension {f.d} does not match window dimension {w.d}")
    if f.is_cellwise and f.window == w:
        return GridFunction(w, f.values.copy())
    q = _order_for([f], quad_order)
    integrals = _integrate_cells(w, f, [f], q)
    return GridFunction(w, integrals / w.cell_volume)


def extend(g: GridFunction) -> ContinuumFunction:
    """E_k g: constant g(x) on the interior of U_k(x)."""
    return ContinuumFunction.piecewise(g.window, g.values)


def sample(f: ContinuumFunction, w: LatticeWindow) -> GridFunction:
    """Site values f|_{V_k}."""
    return GridFunction(w, f(w.all_coords))


def inner(f: ContinuumFunction, h: ContinuumFunction, w: LatticeWindow, quad_order: int = 8) -> float:
    """<f, h> over the window box of ``w`` on the segment grid of both functions."""
    q = _order_for([f, h], quad_order)
    return float(_integrate_cells(w, lambda x: f(x) * h(x), [f, h], q).sum())


def l2_norm(f: ContinuumFunction, w: LatticeWindow, quad_order: int = 8) -> float:
    return float(np.sqrt(max(inner(f, f, w, quad_order), 0.0)))


def l2_distance(f: ContinuumFunction, h: ContinuumFunction, w: LatticeWindow, quad_order: int = 8) -> float:
    q = _order_for([f, h], quad_order)
    sq = _integrate_cells(w, lambda x: (f(x) - h(x)) ** 2, [f, h], q).sum()
    return float(np.sqrt(max(sq, 0.0)))


def adjointness_defect(f: ContinuumFunction, g: GridFunction, quad_order: int = 8) -> float:
    """|<pi_k f, g>_k - <f, E_k g>|, both sides at the same quadrature order."""
    w = g.window
    if not np.any(g.values):
        return 0.0
    lhs = restrict(f, w, quad_order).inner(g)
    rhs = inner(f, extend(g), w, quad_order)
    return abs(lhs - rhs)


@dataclass
class IdentityErrorCurve:
    k: list
    error: list
    boundary_warning: bool = False


def approx_identity_error(f: ContinuumFunction, k_list, L: float, topology: str = "periodic",
                          anchor: str = "centered", quad_order: int = 8, mode: str = "average") -> IdentityErrorCurve:
    """||E_k pi_k f - f||_2 per k (``mode="sample"`` uses E_k(f|_{V_k}) instead)."""
    if mode not in ("average", "sample"):
        raise DomainError(f"mode must be 'average' or 'sample', got {mode!r}")
    errs = []
    warn = False
    for k in k_list:
        w = LatticeWindow(f.d, int(k), L, topology, anchor)
        if not w.periodic and _touches_boundary(f, w):
            warn = True
        g = restrict(f, w, quad_order) if mode == "average" else sample(f, w)
        errs.append(l2_distance(extend(g), f, w, quad_order))
    if warn:
        warnings.warn("function support touches the absorbing window boundary", RuntimeWarning, stacklevel=2)
    return IdentityErrorCurve(list(k_list), errs, warn)


def _touches_boundary(f: ContinuumFunction, w: LatticeWindow) -> bool:
    lo, hi = _box(w)
    if f.support is not None:
        s_lo, s_hi = np.broadcast_to(f.support[0], (w.d,)), np.broadcast_to(f.support[1], (w.d,))
        return bool(np.any(s_lo <= lo) or np.any(s_hi >= hi))
    # no declared support: probe the boundary layer of cells
    edge = np.zeros(w.shape, dtype=bool)
    for ax in range(w.d):
        sl = [slice(None)] * w.d
        sl[ax] = [0, -1]
        edge[tuple(sl)] = True
    pts = w.all_coords[edge.ravel()]
    return bool(np.any(f(pts) != 0))
