"""Scaled lattice k^-1 Z^d on a finite window, with cube cells and graph metric.

Sites carry integer multi-indices ``i`` with ``0 <= i_j < n`` where
``n = L*k`` sites per axis.  The physical coordinate of a site is
``(i + offset) / k``; ``offset`` is 0 for the ``"centered"`` anchor (sites on
k^-1 Z^d, cells centred on sites) and 1/2 for the ``"dyadic"`` anchor (cells
``[i/k, (i+1)/k]``, which nest under k -> 2k).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError

TOPOLOGIES = ("periodic", "absorbing")
ANCHORS = ("centered", "dyadic")


@dataclass(frozen=True)
class LatticeWindow:
    d: int
    k: int
    L: float
    topology: str = "periodic"
    anchor: str = "centered"
    n_per_axis: int = field(init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d}")
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"refinement level must be a positive integer, got {self.k}")
        if not self.L > 0:
            raise DomainError(f"window side must be positive, got {self.L}")
        if self.topology not in TOPOLOGIES:
            raise DomainError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.anchor not in ANCHORS:
            raise DomainError(f"anchor must be one of {ANCHORS}, got {self.anchor!r}")
        n = self.L * self.k
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise DomainError(f"L={self.L} is not a multiple of 1/k with k={self.k}")
        object.__setattr__(self, "n_per_axis", int(round(n)))

    # -- sizes -----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return (self.n_per_axis,) * self.d

    @property
    def n_sites(self) -> int:
        return self.n_per_axis ** self.d

    @property
    def spacing(self) -> float:
        return 1.0 / self.k

    @property
    def offset(self) -> float:
        return 0.0 if self.anchor == "centered" else 0.5

    @property
    def periodic(self) -> bool:
        return self.topology == "periodic"

    @property
    def cell_volume(self) -> float:
        return float(self.k) ** (-self.d)

    def with_level(self, k: int) -> "LatticeWindow":
        """Same physical window at another refinement level."""
        return LatticeWindow(self.d, k, self.L, self.topology, self.anchor)

    # -- indexing --------------------------------------------------------
    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape)

    def multi_index(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        return np.stack(np.unravel_index(flat, self.shape), axis=-1)

    def coords(self, flat) -> np.ndarray:
        """Physical coordinates of sites given by flat index, shape (..., d)."""
        return (self.multi_index(flat) + self.offset) / self.k

    @cached_property
    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.n_sites))

    @property
    def center_index(self) -> int:
        """Flat index of the site closest to the window centre (the ball centre x0)."""
        return int(self.flat_index(np.full(self.d, self.n_per_axis // 2)))

    @property
    def center(self) -> np.ndarray:
        return self.coords(self.center_index)

    def site_of(self, x) -> np.ndarray:
        """Flat index of the lattice site at coordinate ``x`` (exact match required)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.d:
            raise DomainError(f"expected {self.d}-dimensional coordinates, got shape {x.shape}")
        scaled = x * self.k - self.offset
        idx = np.rint(scaled)
        if np.any(np.abs(scaled - idx) > 1e-9):
            raise DomainError(f"point {x} is not on the lattice 1/{self.k} Z^{self.d}")
        idx = idx.astype(np.int64)
        if self.periodic:
            idx %= self.n_per_axis
        elif np.any((idx < 0) | (idx >= self.n_per_axis)):
            raise DomainError(f"point {x} lies outside the window")
        return self.flat_index(idx)

    def cell_of(self, x) -> np.ndarray:
        """Flat index of the cell containing the points ``x`` (shape (..., d))."""
        x = np.asarray(x, dtype=float)
        idx = np.floor(x * self.k - self.offset + 0.5).astype(np.int64)
        if self.periodic:
            idx %= self.n_per_axis
        else:
            idx = np.clip(idx, 0, self.n_per_axis - 1)
        return self.flat_index(idx)

    def cell_bounds(self, flat) -> tuple[np.ndarray, np.ndarray]:
        c = self.coords(flat)
        h = 0.5 / self.k
        return c - h, c + h

    # -- distances -------------------------------------------------------
    def index_delta(self, a, b) -> np.ndarray:
        """Per-axis absolute index differences (minimal image when periodic)."""
        diff = np.abs(self.multi_index(b) - self.multi_index(a))
        if self.periodic:
            diff = np.minimum(diff, self.n_per_axis - diff)
        return diff

    def euclid(self, a, b) -> np.ndarray:
        """Euclidean (torus when periodic) distance between sites by flat index."""
        return np.sqrt((self.index_delta(a, b) ** 2).sum(axis=-1)) / self.k

    def point_delta(self, x, y) -> np.ndarray:
        """Displacement y - x between arbitrary points, wrapped when periodic."""
        delta = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        if self.periodic:
            delta = (delta + self.L / 2) % self.L - self.L / 2
        return delta


@dataclass(frozen=True)
class AgConstants:
    C1: float
    C2: float
    C3: float
    cutoff_threshold: float


def graph_distance(w: LatticeWindow, x, y) -> int:
    """Nearest-neighbour graph distance between the sites at coordinates x and y."""
    a = w.site_of(x)
    b = w.site_of(y)
    return int(w.index_delta(a, b).sum(axis=-1))


def graph_distance_idx(w: LatticeWindow, a, b) -> np.ndarray:
    return w.index_delta(a, b).sum(axis=-1)


def ag_constants(w: LatticeWindow) -> AgConstants:
    d = w.d
    c1 = 1.0 / math.sqrt(d)
    c3 = math.sqrt(d)
    # 4*C3/C1 = 4d exactly; avoid sqrt round-off in the cutoff comparison
    return AgConstants(C1=c1, C2=1.0, C3=c3, cutoff_threshold=float(4 * d))


def cell_measure(w: LatticeWindow, x=None) -> float:
    """m_k of the cell at x; identical for every site."""
    if x is not None:
        w.site_of(x)
    return w.cell_volume
