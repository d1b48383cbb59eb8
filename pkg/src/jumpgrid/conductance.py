"""Discrete conductances C^(k)(x, y) on a lattice window.

Translation-invariant conductances are held as a *stencil* (offset -> value);
the explicit unordered pair list ``i < j`` is materialised on demand.  On a
periodic window an offset is a residue class mod n per axis and its value is
the sum over all periodic images within ``truncation_radius``, so that the
lattice chain lives on the same torus as the spectral reference.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError
from .kernels import JumpKernel, tail_mass
from .lattice import LatticeWindow, ag_constants

_CHUNK = 1 << 21


@dataclass
class ConductanceMatrix:
    window: LatticeWindow
    truncation_radius: float
    neglected_tail_rate: float
    stencil_offsets: np.ndarray | None = None
    stencil_values: np.ndarray | None = None
    kind: str = "explicit"
    _pairs: tuple | None = field(default=None, repr=False)
    _killing: np.ndarray | None = field(default=None, repr=False)

    # -- construction helpers --------------------------------------------
    @classmethod
    def from_pairs(cls, window, i, j, v, truncation_radius=math.inf, neglected_tail_rate=0.0,
                   kind="explicit", killing=None):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        v = np.asarray(v, dtype=float)
        if np.any(i == j):
            raise DomainError("conductance matrices carry no diagonal entries")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        keep = v > 0
        lo, hi, v = lo[keep], hi[keep], v[keep]
        key = lo * window.n_sites + hi
        order = np.argsort(key, kind="stable")
        key = key[order]
        if key.size and np.any(key[1:] == key[:-1]):
            raise DomainError("duplicate unordered pair in conductance input")
        pairs = (lo[order].astype(np.int32), hi[order].astype(np.int32), v[order])
        return cls(window, truncation_radius, neglected_tail_rate, kind=kind, _pairs=pairs,
                   _killing=None if killing is None else np.asarray(killing, dtype=float))

    @property
    def translation_invariant(self) -> bool:
        return self.stencil_offsets is not None

    # -- pair access -----------------------------------------------------
    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unordered pairs (i < j) with their conductances, sorted by (i, j)."""
        if self._pairs is None:
            self._pairs = self._materialise()
        return self._pairs

    def _materialise(self):
        w = self.window
        n = w.n_per_axis
        multi = w.multi_index(np.arange(w.n_sites))
        out_i, out_j, out_v = [], [], []
        for off, val in zip(self.stencil_offsets, self.stencil_values):
            tgt = multi + off
            if w.periodic:
                tgt %= n
                src = np.arange(w.n_sites)
            else:
                inside = np.all((tgt >= 0) & (tgt < n), axis=1)
                src = np.nonzero(inside)[0]
                tgt = tgt[inside]
            t = w.flat_index(tgt)
            keep = src < t
            out_i.append(src[keep])
            out_j.append(t[keep])
            out_v.append(np.full(int(keep.sum()), val))
        i = np.concatenate(out_i) if out_i else np.zeros(0, np.int64)
        j = np.concatenate(out_j) if out_j else np.zeros(0, np.int64)
        v = np.concatenate(out_v) if out_v else np.zeros(0)
        order = np.lexsort((j, i))
        return i[order].astype(np.int32), j[order].astype(np.int32), v[order]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs()[2])

    def value(self, a: int, b: int) -> float:
        """C(a, b) for flat site indices (0 when no entry is stored)."""
        if a == b:
            return 0.0
        i, j, v = self.pairs()
        lo, hi = min(a, b), max(a, b)
        key = i.astype(np.int64) * self.window.n_sites + j
        pos = np.searchsorted(key, lo * self.window.n_sites + hi)
        if pos < len(key) and key[pos] == lo * self.window.n_sites + hi:
            return float(v[pos])
        return 0.0

    def lookup(self, a, b) -> np.ndarray:
        """Vectorised C(a, b) for arrays of flat site indices (0 on the diagonal)."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        w = self.window
        if self.translation_invariant:
            diff = w.multi_index(b) - w.multi_index(a)
            if w.periodic:
                return self.stencil_array()[tuple(np.moveaxis(diff % w.n_per_axis, -1, 0))]
            r = w.n_per_axis - 1
            dense = self._offset_table()
            return dense[tuple(np.moveaxis(diff + r, -1, 0))]
        i, j, v = self.pairs()
        n = w.n_sites
        key = i.astype(np.int64) * n + j
        q = np.minimum(a, b) * n + np.maximum(a, b)
        pos = np.clip(np.searchsorted(key, q), 0, max(len(key) - 1, 0))
        if len(key) == 0:
            return np.zeros(q.shape)
        return np.where((key[pos] == q) & (a != b), v[pos], 0.0)

    def _offset_table(self):
        if "_otab" not in self.__dict__:
            r = self.window.n_per_axis - 1
            tab = np.zeros((2 * r + 1,) * self.window.d)
            offs = self.stencil_offsets
            inside = np.all(np.abs(offs) <= r, axis=1)
            tab[tuple((offs[inside] + r).T)] = self.stencil_values[inside]
            self._otab = tab
        return self._otab

    def killing(self) -> np.ndarray:
        """Rate of jumps leaving an absorbing window, per site (zeros when periodic)."""
        w = self.window
        if self._killing is not None:
            return self._killing
        if w.periodic or not self.translation_invariant:
            self._killing = np.zeros(w.n_sites)
        else:
            self._killing = _stencil_killing(w, self.stencil_offsets, self.stencil_values)
        return self._killing

    def row_sums(self) -> np.ndarray:
        """sum_y C(x, y) m_k(y) over sites of the window."""
        i, j, v = self.pairs()
        n = self.window.n_sites
        s = np.bincount(i, weights=v, minlength=n) + np.bincount(j, weights=v, minlength=n)
        return s * self.window.cell_volume

    def to_dense(self) -> np.ndarray:
        n = self.window.n_sites
        W = np.zeros((n, n))
        i, j, v = self.pairs()
        W[i, j] = v
        W[j, i] = v
        return W

    def to_csr(self):
        from scipy import sparse
        n = self.window.n_sites
        i, j, v = self.pairs()
        return sparse.csr_matrix((np.concatenate([v, v]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                                 shape=(n, n))

    def stencil_array(self) -> np.ndarray:
        """Dense per-offset-class array (periodic windows only)."""
        if not (self.translation_invariant and self.window.periodic):
            raise DomainError("stencil array needs a translation-invariant periodic matrix")
        if "_sarr" not in self.__dict__:
            arr = np.zeros(self.window.shape)
            arr[tuple(self.stencil_offsets.T)] = self.stencil_values
            self._sarr = arr
        return self._sarr


def _stencil_killing(w: LatticeWindow, offsets, values) -> np.ndarray:
    """Per-site sum of stencil conductances whose target leaves the window, times m_k."""
    from scipy.signal import fftconvolve
    r = int(np.abs(offsets).max()) if len(offsets) else 0
    ker = np.zeros((2 * r + 1,) * w.d)
    ker[tuple((offsets + r).T)] = values
    inside = np.ones(w.shape)
    within = fftconvolve(inside, ker[(slice(None, None, -1),) * w.d], mode="full")
    sl = tuple(slice(r, r + w.n_per_axis) for _ in range(w.d))
    within = within[sl]
    kill = (values.sum() - within) * w.cell_volume
    return np.maximum(kill, 0.0).ravel()


# ---------------------------------------------------------------------------
def _offset_classes(w: LatticeWindow, R: float):
    """Candidate offsets and, per offset, the list of displacement images within radius R.

    Yields (offset (d,), graph distance, displacements (m, d)) in a fixed order.
    """
    n, k, d = w.n_per_axis, w.k, w.d
    if w.periodic:
        nimg = int(math.ceil(R / w.L)) + 1
        img = np.array(np.meshgrid(*([np.arange(-nimg, nimg + 1)] * d), indexing="ij")).reshape(d, -1).T
        classes = np.array(np.meshgrid(*([np.arange(n)] * d), indexing="ij")).reshape(d, -1).T
        for off in classes:
            if not off.any():
                disp = img[np.any(img != 0, axis=1)] * n / k
            else:
                disp = (off + img * n) / k
            disp = disp[np.sqrt((disp ** 2).sum(axis=1)) <= R + 1e-12]
            rho = int(np.minimum(off, n - off).sum())
            if len(disp):
                yield off, rho, disp
    else:
        reach = min(int(math.floor(R * k + 1e-9)), n - 1)
        rng = np.arange(-reach, reach + 1)
        offs = np.array(np.meshgrid(*([rng] * d), indexing="ij")).reshape(d, -1).T
        offs = offs[np.any(offs != 0, axis=1)]
        dist = np.sqrt((offs ** 2).sum(axis=1)) / k
        offs = offs[dist <= R + 1e-12]
        for off in offs:
            yield off, int(np.abs(off).sum()), (off / k)[None, :]


def _cell_pair_rule(d: int, k: int, order: int):
    """Displacements eta - xi and weights of the tensor Gauss rule on U x U (weights sum to 1)."""
    g, wg = leggauss(order)
    g = g / (2 * k)
    wg = wg / 2
    pts = np.array(np.meshgrid(*([g] * d), indexing="ij")).reshape(d, -1).T
    wts = np.prod(np.array(np.meshgrid(*([wg] * d), indexing="ij")).reshape(d, -1), axis=0)
    D = (pts[None, :, :] - pts[:, None, :]).reshape(-1, d)
    W = (wts[None, :] * wts[:, None]).ravel()
    return D, W


def _kernel_on(kern: JumpKernel, disp: np.ndarray) -> np.ndarray:
    r = np.sqrt((disp ** 2).sum(axis=-1))
    if kern.radial:
        return kern.profile(r)
    return kern(np.zeros_like(disp), disp)


def build_pointwise(w: LatticeWindow, kern: JumpKernel, truncation_radius: float,
                    tail_compensation: bool = False) -> ConductanceMatrix:
    """C(x, y) = j(x, y) for every distinct pair within the truncation radius.

    With ``tail_compensation`` (periodic radial kernels only) every offset class
    also receives tail_mass(R) / L^d, the mean of the omitted images; the
    reported neglected rate is unchanged.
    """
    R = float(truncation_radius)
    if not R >= 1.0 / w.k - 1e-12:
        raise DomainError("truncation radius must be at least the lattice spacing 1/k")
    if math.isinf(R) and w.periodic:
        raise DomainError("periodic windows need a finite image-summation radius")
    offs, vals = [], []
    for off, _rho, disp in _offset_classes(w, R):
        offs.append(off)
        vals.append(float(_kernel_on(kern, disp).sum()))
    neglected = tail_mass(kern, np.zeros(w.d), R) if kern.radial else float("nan")
    if tail_compensation:
        if not (w.periodic and kern.radial):
            raise DomainError("tail compensation needs a periodic window and a radial kernel")
        classes = np.array(np.meshgrid(*([np.arange(w.n_per_axis)] * w.d), indexing="ij")).reshape(w.d, -1).T
        classes = classes[np.any(classes != 0, axis=1)]
        table = {tuple(o): v for o, v in zip(offs, vals)}
        extra = neglected / w.L ** w.d
        offs = list(classes)
        vals = [table.get(tuple(o), 0.0) + extra for o in classes]
    return _stencil_matrix(w, offs, vals, R, neglected, "pointwise")


def build_cell_averaged(w: LatticeWindow, kern: JumpKernel, quad_order: int = 8,
                        truncation_radius: float = 8.0) -> ConductanceMatrix:
    """Cell-averaged conductance with the graph-distance cutoff rho_k >= 4 C3 / C1.

    C(x, y) = (m_k(x) m_k(y))^-1 int_{U(x)} int_{U(y)} j(xi, eta), by a tensor
    Gauss-Legendre rule of ``quad_order`` nodes per axis and cell.
    """
    if quad_order < 1:
        raise DomainError("quad_order must be >= 1")
    ag = ag_constants(w)
    R = float(truncation_radius)
    if not R > ag.cutoff_threshold / w.k:
        raise DomainError("truncation radius must exceed the cutoff distance 4d/k")
    D, Wq = _cell_pair_rule(w.d, w.k, quad_order)
    min_sep = 2.0 / w.k  # displacement never drops below rho(x,y)/2 >= 2/k under the cutoff
    offs, vals = [], []
    batch_o, batch_d = [], []

    def flush():
        if not batch_d:
            return
        sizes = [len(b) for b in batch_d]
        allp = np.concatenate(batch_d)
        out = np.empty(len(allp))
        step = max(1, _CHUNK // len(Wq))
        for s in range(0, len(allp), step):
            pts = allp[s:s + step, None, :] + D[None, :, :]
            r = np.sqrt((pts ** 2).sum(axis=-1))
            if np.any(r < min_sep * 0.5):
                raise RuntimeError("kernel singularity inside a cell-averaged pair")
            out[s:s + step] = (_kernel_on(kern, pts) * Wq).sum(axis=1)
        pos = 0
        for o, m in zip(batch_o, sizes):
            offs.append(o)
            vals.append(float(out[pos:pos + m].sum()))
            pos += m
        batch_o.clear()
        batch_d.clear()

    pending = 0
    for off, rho, disp in _offset_classes(w, R):
        if rho < ag.cutoff_threshold:
            continue
        batch_o.append(off)
        batch_d.append(disp)
        pending += len(disp)
        if pending * len(Wq) > 4 * _CHUNK:
            flush()
            pending = 0
    flush()
    neglected = tail_mass(kern, np.zeros(w.d), max(R - math.sqrt(w.d) / w.k, 1e-12)) if kern.radial else float("nan")
    return _stencil_matrix(w, offs, vals, R, neglected, "cell_averaged")


def _stencil_matrix(w, offs, vals, R, neglected, kind):
    offs = np.array(offs, dtype=np.int64).reshape(-1, w.d)
    vals = np.array(vals, dtype=float)
    # o and its mirror -o are summed separately and may differ in the last bit;
    # copy the value of the lexicographically smaller one so C(x,y) = C(y,x) exactly
    mirror = (-offs) % w.n_per_axis if w.periodic else -offs
    table = {tuple(o): v for o, v in zip(offs.tolist(), vals)}
    vals = np.array([table.get(min(tuple(o), tuple(m)), v) for o, m, v in zip(offs.tolist(), mirror.tolist(), vals)])
    keep = vals > 0
    return ConductanceMatrix(w, R, float(neglected), stencil_offsets=offs[keep], stencil_values=vals[keep],
                             kind=kind)


def apply_random_field(base: ConductanceMatrix, field) -> ConductanceMatrix:
    """Multiply each entry by xi on the unscaled pair (k x, k y); zero-weight edges are dropped."""
    w = base.window
    i, j, v = base.pairs()
    xi = field.pair_values(w.multi_index(i), w.multi_index(j))
    killing = None
    if not w.periodic and base.translation_invariant:
        killing = _random_killing(w, base, field)
    out = ConductanceMatrix.from_pairs(w, i, j, v * xi, base.truncation_radius, base.neglected_tail_rate,
                                       kind=base.kind + "+field", killing=killing)
    return out


def _random_killing(w, base, field):
    n = w.n_per_axis
    multi = w.multi_index(np.arange(w.n_sites))
    kill = np.zeros(w.n_sites)
    for off, val in zip(base.stencil_offsets, base.stencil_values):
        tgt = multi + off
        out = ~np.all((tgt >= 0) & (tgt < n), axis=1)
        if out.any():
            kill[out] += val * field.pair_values(multi[out], tgt[out])
    return kill * w.cell_volume


# ---------------------------------------------------------------------------
@dataclass
class ConditionReport:
    a1a_sup: float
    a1b_sup: float
    cons1_sup: float
    local_sums_finite: bool


def check_conditions(c: ConductanceMatrix, ball_radius_j: float) -> ConditionReport:
    """Window estimates of the two local kernel suprema and the conservativeness row sum."""
    w = c.window
    j = float(ball_radius_j)
    if j + 2 > w.L / 2 + 1e-12:
        raise DomainError(f"window of side {w.L} cannot contain the ball B_(j+2) with j={j}")
    n = w.n_sites
    center = w.center_index
    sites = np.arange(n)
    dist0 = w.euclid(np.full(n, center), sites)
    in_ball = dist0 <= j + 1e-12
    outside = dist0 >= j + 2 - 1e-12
    i, jj, v = c.pairs()
    if len(v) == 0:
        return ConditionReport(0.0, 0.0, float(c.killing().max(initial=0.0)), True)
    mk = w.cell_volume
    rho = w.index_delta(i, jj).sum(axis=-1) / w.k
    a = v * np.minimum(rho, 1.0) ** 2 * mk
    a1a_rows = np.bincount(i, a, n) + np.bincount(jj, a, n)
    rows = (np.bincount(i, v, n) + np.bincount(jj, v, n)) * mk + c.killing()
    cross = np.zeros(n)
    m1 = in_ball[jj] & outside[i]
    m2 = in_ball[i] & outside[jj]
    cross += np.bincount(i[m1], v[m1] * mk, n)
    cross += np.bincount(jj[m2], v[m2] * mk, n)
    tail = c.neglected_tail_rate if np.isfinite(c.neglected_tail_rate) else 0.0
    a1a = float(a1a_rows[in_ball].max()) + tail
    a1b = float(cross[outside].max(initial=0.0)) + tail
    cons = float(rows.max()) + tail
    finite = bool(np.all(np.isfinite(rows)))
    return ConditionReport(a1a, a1b, cons, finite)


# ---------------------------------------------------------------------------
_MAGIC = b"JGCM"
_HEADER = struct.Struct("<4sHIIdBBddq")
_TOPO = {"periodic": 0, "absorbing": 1}
_ANCH = {"centered": 0, "dyadic": 1}


def dump(c: ConductanceMatrix, path) -> None:
    """Little-endian binary dump: header then (int64 i, int64 j, float64 C) triples."""
    w = c.window
    i, j, v = c.pairs()
    rec = np.empty(len(v), dtype=[("i", "<i8"), ("j", "<i8"), ("c", "<f8")])
    rec["i"], rec["j"], rec["c"] = i, j, v
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, w.d, w.k, float(w.L), _TOPO[w.topology], _ANCH[w.anchor],
                              float(c.truncation_radius), float(c.neglected_tail_rate), len(v)))
        fh.write(rec.tobytes())


def load(path) -> ConductanceMatrix:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, d, k, L, topo, anch, R, tail, count = _HEADER.unpack(head)
        if magic != _MAGIC or version != 1:
            raise DomainError(f"{path}: not a conductance dump")
        rec = np.frombuffer(fh.read(), dtype=[("i", "<i8"), ("j", "<i8"), ("c", "<f8")], count=count)
    topology = {v: k_ for k_, v in _TOPO.items()}[topo]
    anchor = {v: k_ for k_, v in _ANCH.items()}[anch]
    w = LatticeWindow(d, k, L, topology, anchor)
    return ConductanceMatrix.from_pairs(w, rec["i"], rec["j"], rec["c"], R, tail, kind="loaded")


def with_pairs_only(c: ConductanceMatrix) -> ConductanceMatrix:
    """Copy that forgets the stencil (forces the explicit code paths)."""
    i, j, v = c.pairs()
    return replace(c, stencil_offsets=None, stencil_values=None, _pairs=(i, j, v), _killing=c.killing())
