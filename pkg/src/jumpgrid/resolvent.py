"""Generator A^(k), resolvent and semigroup solves, and the spectral torus reference."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.signal import fftconvolve
from scipy.sparse.linalg import LinearOperator, cg

from .conductance import ConductanceMatrix, build_cell_averaged, build_pointwise
from .errors import DomainError, SolverError
from .kernels import JumpKernel, char_exponent
from .lattice import LatticeWindow
from .transfer import ContinuumFunction, GridFunction, restrict

DENSE_LIMIT = 4096


@dataclass
class GeneratorMatrix:
    """A = m_k W - diag(lambda), with W the symmetric conductance matrix.

    ``backend`` is "dense", "csr", "fft" (circulant; periodic stencil) or
    "conv" (zero-padded convolution; absorbing stencil).  ``lam`` includes
    the killing rate on absorbing windows.
    """
    window: LatticeWindow
    backend: str
    lam: np.ndarray
    W: object = None
    _symbol: np.ndarray | None = field(default=None, repr=False)
    source: ConductanceMatrix | None = field(default=None, repr=False)

    @property
    def max_rate(self) -> float:
        return float(self.lam.max(initial=0.0))

    @property
    def n(self) -> int:
        return self.window.n_sites

    def rates_apply(self, u: np.ndarray) -> np.ndarray:
        """sum_y r(x,y) u(y)."""
        mk = self.window.cell_volume
        if self.backend == "fft":
            shp = self.window.shape
            U = np.fft.rfftn(u.reshape(shp))
            return np.fft.irfftn(U * self._symbol, s=shp, axes=tuple(range(len(shp)))).ravel() * mk
        if self.backend == "conv":
            shp = self.window.shape
            r = (self._symbol.shape[0] - 1) // 2
            # (W u)(x) = sum_o st[o] u(x + o): correlate, i.e. convolve with the flipped stencil
            full = fftconvolve(u.reshape(shp), self._symbol[(slice(None, None, -1),) * self.window.d], mode="full")
            sl = tuple(slice(r, r + n) for n in shp)
            return full[sl].ravel() * mk
        return (self.W @ u) * mk

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.rates_apply(u) - self.lam * u

    def rate_matrix(self) -> np.ndarray:
        """Dense off-diagonal rate matrix (small windows; for tests)."""
        if self.backend == "dense":
            return self.W * self.window.cell_volume
        if self.backend == "csr":
            return self.W.toarray() * self.window.cell_volume
        return np.stack([self.rates_apply(e) for e in np.eye(self.n)], axis=1)

    def to_dense(self) -> np.ndarray:
        return self.rate_matrix() - np.diag(self.lam)


def assemble_generator(c: ConductanceMatrix, backend: str = "auto") -> GeneratorMatrix:
    w = c.window
    n = w.n_sites
    if backend == "auto":
        if n <= DENSE_LIMIT:
            backend = "dense"
        elif c.translation_invariant:
            backend = "fft" if w.periodic else "conv"
        else:
            backend = "csr"
    mk = w.cell_volume
    if backend == "fft":
        if not (c.translation_invariant and w.periodic):
            raise DomainError("the fft backend needs a periodic translation-invariant matrix")
        st = c.stencil_array()
        # circulant acting as (W u)(x) = sum_o st[o] u(x + o); st is symmetric under o -> -o
        sym = np.conj(np.fft.rfftn(st)).real
        lam = np.full(n, math.fsum(c.stencil_values) * mk)
        return GeneratorMatrix(w, "fft", lam, None, sym, c)
    if backend == "conv":
        if not (c.translation_invariant and not w.periodic):
            raise DomainError("the conv backend needs an absorbing translation-invariant matrix")
        offs = c.stencil_offsets
        r = int(np.abs(offs).max()) if len(offs) else 0
        ker = np.zeros((2 * r + 1,) * w.d)
        ker[tuple((offs + r).T)] = c.stencil_values
        # every site loses the same total rate: kept jumps plus jumps leaving the window
        lam = np.full(n, math.fsum(c.stencil_values) * mk)
        return GeneratorMatrix(w, "conv", lam, None, ker, c)
    if backend == "dense":
        W = c.to_dense()
    elif backend == "csr":
        W = c.to_csr()
    else:
        raise DomainError(f"unknown backend {backend!r}")
    lam = c.row_sums() + c.killing()
    return GeneratorMatrix(w, backend, lam, W, source=c)


def _as_values(f, w):
    if isinstance(f, GridFunction):
        if f.window != w:
            raise DomainError("grid function lives on another window")
        return f.values
    v = np.asarray(f, dtype=float).ravel()
    if v.size != w.n_sites:
        raise DomainError(f"expected {w.n_sites} values, got {v.size}")
    return v


@dataclass
class SolveInfo:
    residual: float
    iterations: int


def resolvent_solve(g: GeneratorMatrix, lam: float, f, tol: float = 1e-9, maxiter: int = 10000,
                    info: dict | None = None) -> GridFunction:
    """u = (lam - A)^-1 f by conjugate gradients; relative residual <= tol."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not tol > 0:
        raise DomainError("tol must be positive")
    w = g.window
    b = _as_values(f, w)
    nb = np.linalg.norm(b)
    if nb == 0:
        if info is not None:
            info.update(residual=0.0, iterations=0)
        return GridFunction(w, np.zeros(w.n_sites))
    op = LinearOperator((g.n, g.n), matvec=lambda v: lam * v - g.apply(v), dtype=float)
    diag = lam + g.lam
    pre = LinearOperator((g.n, g.n), matvec=lambda v: v / diag, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    u = b / diag
    rel = math.inf
    rel = np.linalg.norm(op.matvec(u) - b) / nb
    for _ in range(4):  # restart on the true residual if the recursive one drifted
        with np.errstate(invalid="ignore", divide="ignore"):
            u_new, _flag = cg(op, b, x0=u, rtol=tol * 0.5, atol=0.0, maxiter=maxiter, M=pre, callback=cb)
            rel_new = np.linalg.norm(op.matvec(u_new) - b) / nb
        if not np.isfinite(rel_new):
            break  # breakdown below round-off: keep the last finite iterate
        u, rel = u_new, rel_new
        if rel <= tol:
            break
    if info is not None:
        info.update(residual=float(rel), iterations=count[0])
    if not rel <= tol:
        raise SolverError(f"resolvent solve did not reach tol={tol} (residual {rel:.3e})", rel, count[0])
    return GridFunction(w, u)


def semigroup_apply(g: GeneratorMatrix, t: float, f, tol: float = 1e-12, info: dict | None = None) -> GridFunction:
    """T_t f by uniformization, stepping so that Lambda * dt <= 50."""
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    w = g.window
    u = _as_values(f, w).copy()
    Lam = g.max_rate
    if t == 0 or Lam == 0:
        if info is not None:
            info.update(residual=0.0, iterations=0)
        return GridFunction(w, u)
    steps = max(1, int(math.ceil(Lam * t / 50.0)))
    mu = Lam * t / steps
    nmax = int(stats.poisson.isf(tol / steps, mu)) + 1
    weights = stats.poisson.pmf(np.arange(nmax + 1), mu)
    tail = float(stats.poisson.sf(nmax, mu)) * steps
    for _ in range(steps):
        term = u
        acc = weights[0] * term
        for n in range(1, nmax + 1):
            term = term + g.apply(term) / Lam
            acc = acc + weights[n] * term
        u = acc
    if info is not None:
        info.update(residual=tail, iterations=steps * nmax)
    return GridFunction(w, u)


# ---------------------------------------------------------------------------
class SpectralOracle:
    """Fourier multipliers of the continuum generator on the torus [0, L)^d.

    The grid has cells [m h, (m+1) h] with h = 1/(q k_max); cell edges of every
    level k dividing k_max fall on grid edges for both anchors, so lattice
    cells are unions of oracle cells.
    """

    def __init__(self, kern: JumpKernel, L: float, k_max: int, q: int = 4):
        self.kern = kern
        self.d = kern.d
        self.L = float(L)
        self.level = int(q * k_max)
        self.window = LatticeWindow(self.d, self.level, L, "periodic", "dyadic")
        m = self.window.n_per_axis
        freqs = 2 * np.pi * np.fft.fftfreq(m, d=1.0 / self.level)
        grids = np.meshgrid(*([freqs] * self.d), indexing="ij")
        mag = np.sqrt(sum(gg ** 2 for gg in grids))
        uniq, inv = np.unique(mag.ravel(), return_inverse=True)
        ce = char_exponent(kern, uniq)
        psi = np.asarray(ce.psi, dtype=float)
        psi[uniq == 0] = 0.0
        self.psi = psi[inv].reshape(mag.shape)
        self.quadrature_error = float(np.max(np.atleast_1d(ce.quadrature_error)))

    def tabulate(self, f) -> np.ndarray:
        if isinstance(f, ContinuumFunction):
            return f(self.window.all_coords).reshape(self.window.shape)
        return np.asarray(f, dtype=float).reshape(self.window.shape)

    def multiply(self, f, mult) -> ContinuumFunction:
        F = np.fft.fftn(self.tabulate(f))
        out = np.fft.ifftn(F * mult).real
        return ContinuumFunction.piecewise(self.window, out.ravel(), kind="tabulated")

    def generator(self, f) -> ContinuumFunction:
        return self.multiply(f, -self.psi)


def oracle_resolvent(oracle: SpectralOracle, lam: float, f) -> ContinuumFunction:
    if not lam > 0:
        raise DomainError("lambda must be positive")
    return oracle.multiply(f, 1.0 / (lam + oracle.psi))


def oracle_semigroup(oracle: SpectralOracle, t: float, f) -> ContinuumFunction:
    if t < 0:
        raise DomainError("t must be nonnegative")
    return oracle.multiply(f, np.exp(-t * oracle.psi))


def lift_to_oracle(oracle: SpectralOracle, g: GridFunction) -> np.ndarray:
    """E_k g sampled on the oracle cells (exact: lattice cells are unions of oracle cells)."""
    w = g.window
    ratio = oracle.level // w.k
    if oracle.level % w.k:
        raise DomainError(f"level {w.k} does not divide the oracle level {oracle.level}")
    vals = g.values.reshape(w.shape)
    shift = int(round((w.offset - 0.5) * ratio))  # first lattice cell starts at (offset-1/2)/k
    for ax in range(w.d):
        vals = np.repeat(vals, ratio, axis=ax)
        vals = np.roll(vals, shift, axis=ax)
    return vals


def oracle_l2(oracle: SpectralOracle, a: np.ndarray, b: np.ndarray) -> float:
    h = 1.0 / oracle.level
    return float(np.sqrt(((a - b) ** 2).sum() * h ** oracle.d))


# ---------------------------------------------------------------------------
CSV_COLUMNS = ("quantity", "k", "lambda_or_t", "l2_error", "solver_residual", "oracle_error_bound")


@dataclass
class ConvergenceRow:
    quantity: str
    k: int
    lambda_or_t: float
    l2_error: float
    solver_residual: float
    oracle_error_bound: float


@dataclass
class ConvergenceReport:
    rows: list
    f_norm: float

    def errors(self, quantity: str, param: float) -> list:
        return [r.l2_error for r in self.rows if r.quantity == quantity and r.lambda_or_t == param]

    def sup_over_t(self) -> dict:
        out = {}
        for r in self.rows:
            if r.quantity == "semigroup":
                out[r.k] = max(out.get(r.k, 0.0), r.l2_error)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for r in self.rows:
                wr.writerow([r.quantity, r.k, _fmt(r.lambda_or_t), _fmt(r.l2_error), _fmt(r.solver_residual),
                             _fmt(r.oracle_error_bound)])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("refusing to write a non-finite value")
    return "%.17g" % x


def build_matrix(w: LatticeWindow, kern: JumpKernel, construction: str, truncation_radius: float,
                 quad_order: int = 8, tail_compensation: bool = False) -> ConductanceMatrix:
    if construction == "cell_averaged":
        return build_cell_averaged(w, kern, quad_order, truncation_radius)
    if construction == "pointwise":
        return build_pointwise(w, kern, truncation_radius, tail_compensation=tail_compensation)
    raise DomainError(f"unknown construction {construction!r}")


def convergence_experiment(kern: JumpKernel, f: ContinuumFunction, lam_list, t_list, k_list, L: float,
                           construction: str = "cell_averaged", truncation_radius: float = 2000.0,
                           quad_order: int = 8, q: int = 4, tol: float = 1e-9, threads: int = 1,
                           matrix_hook=None, tail_compensation: bool = False) -> ConvergenceReport:
    """Per (k, lambda) and (k, t): ||E_k G pi_k f - G f||_2 and ||E_k T_t pi_k f - T_t f||_2.

    ``matrix_hook(c) -> c`` may transform each matrix (e.g. a random field).
    """
    ks = [int(k) for k in k_list]
    oracle = SpectralOracle(kern, L, max(ks), q)
    coarse = SpectralOracle(kern, L, max(ks), max(1, q // 2)) if q >= 2 else None
    f_tab = oracle.tabulate(f)
    f_norm = oracle_l2(oracle, f_tab, 0.0)
    refs = {}
    for lam in lam_list:
        refs[("resolvent", lam)] = oracle_resolvent(oracle, lam, f_tab)
    for t in t_list:
        refs[("semigroup", t)] = oracle_semigroup(oracle, t, f_tab)
    bounds = {key: _oracle_bound(oracle, coarse, key, f) for key in refs}

    def job(k):
        w = LatticeWindow(kern.d, k, L, "periodic")
        c = build_matrix(w, kern, construction, truncation_radius, quad_order, tail_compensation)
        if matrix_hook is not None:
            c = matrix_hook(c)
        g = assemble_generator(c)
        pf = restrict(f, w, quad_order)
        rows = []
        for lam in lam_list:
            info = {}
            u = resolvent_solve(g, lam, pf, tol, info=info)
            err = oracle_l2(oracle, lift_to_oracle(oracle, u), refs[("resolvent", lam)].values.reshape(oracle.window.shape))
            rows.append(ConvergenceRow("resolvent", k, float(lam), err, info["residual"], bounds[("resolvent", lam)]))
        for t in t_list:
            info = {}
            u = semigroup_apply(g, t, pf, info=info)
            err = oracle_l2(oracle, lift_to_oracle(oracle, u), refs[("semigroup", t)].values.reshape(oracle.window.shape))
            rows.append(ConvergenceRow("semigroup", k, float(t), err, info["residual"], bounds[("semigroup", t)]))
        return rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, ks))
    else:
        parts = [job(k) for k in ks]
    rows = [r for part in parts for r in part]
    order = {"resolvent": 0, "semigroup": 1}
    rows.sort(key=lambda r: (order[r.quantity], r.lambda_or_t, r.k))
    return ConvergenceReport(rows, f_norm)


def _oracle_bound(oracle, coarse, key, f) -> float:
    """Difference between the reference at resolution q and q/2 (a posteriori error estimate)."""
    if coarse is None or coarse.level == oracle.level:
        return 0.0
    quantity, p = key
    fine = (oracle_resolvent(oracle, p, f) if quantity == "resolvent" else oracle_semigroup(oracle, p, f))
    crs = (oracle_resolvent(coarse, p, f) if quantity == "resolvent" else oracle_semigroup(coarse, p, f))
    g = GridFunction(coarse.window, crs.values)
    ratio = oracle.level // coarse.level
    vals = g.values.reshape(coarse.window.shape)
    for ax in range(oracle.d):
        vals = np.repeat(vals, ratio, axis=ax)
    return oracle_l2(oracle, vals, fine.values.reshape(oracle.window.shape))
