"""I.i.d. random conductance fields on unordered pairs of Z^d and the random-media experiment.

A field is never stored: xi(x, y) is a splitmix64 hash of the seed and the
canonically ordered pair, mapped to a uniform and then to the law.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .conductance import apply_random_field, build_pointwise
from .errors import DomainError
from .kernels import JumpKernel
from .lattice import LatticeWindow
from .resolvent import (SpectralOracle, assemble_generator, lift_to_oracle, oracle_l2, oracle_resolvent,
                        resolvent_solve)
from .transfer import ContinuumFunction, restrict

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
DISTRIBUTIONS = ("uniform02", "bounded", "bernoulli_mix")


def splitmix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RandomField:
    """xi on unordered pairs, with E xi = 1 and finite variance.

    ``uniform02``: Uniform[0, 2].  ``bounded`` (param c in [1, 2]):
    Uniform[2 - c, c], so 0 <= xi <= c.  ``bernoulli_mix`` (param p in (0, 1]):
    1/p with probability p, else 0.
    """
    dist: str = "uniform02"
    seed: int = 0
    param: float | None = None

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise DomainError(f"unknown field distribution {self.dist!r}")
        if not (0 <= int(self.seed) < 1 << 64):
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.dist == "bounded" and not (self.param is not None and 1.0 <= self.param <= 2.0):
            raise DomainError("bounded(c) needs 1 <= c <= 2")
        if self.dist == "bernoulli_mix" and not (self.param is not None and 0.0 < self.param <= 1.0):
            raise DomainError("bernoulli_mix(p) needs 0 < p <= 1")

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        if self.dist == "uniform02":
            return 1.0 / 3.0
        if self.dist == "bounded":
            return (2 * self.param - 2) ** 2 / 12.0
        return (1.0 - self.param) / self.param

    @property
    def bound(self) -> float:
        return {"uniform02": 2.0, "bounded": self.param or 0.0}.get(self.dist, 1.0 / (self.param or 1.0))

    def uniforms(self, a, b) -> np.ndarray:
        """Hash uniforms in [0, 1) for pairs of integer points, shape (..., d) each."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.shape != b.shape:
            raise DomainError("pair arrays differ in shape")
        a2 = np.atleast_2d(a)
        b2 = np.atleast_2d(b)
        lt = np.zeros(a2.shape[:-1], dtype=bool)
        eq = np.ones(a2.shape[:-1], dtype=bool)
        for c in range(a2.shape[-1] - 1, -1, -1):
            diff = a2[..., c] != b2[..., c]
            lt = np.where(diff, a2[..., c] < b2[..., c], lt)
            eq &= ~diff
        if np.any(eq):
            raise DomainError("xi is not defined on the diagonal x = y")
        lo = np.where(lt[..., None], a2, b2)
        hi = np.where(lt[..., None], b2, a2)
        h = np.full(lo.shape[:-1], splitmix64(np.uint64(self.seed)), dtype=np.uint64)
        for arr in (lo, hi):
            for c in range(arr.shape[-1]):
                h = splitmix64(h ^ arr[..., c].astype(np.uint64))
        u = (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(a.shape[:-1]) if a.ndim > 1 else u.reshape(a.shape[:-1] or ())

    def pair_values(self, a, b) -> np.ndarray:
        u = self.uniforms(a, b)
        if self.dist == "uniform02":
            return 2.0 * u
        if self.dist == "bounded":
            c = self.param
            return (2.0 - c) + (2.0 * c - 2.0) * u
        p = self.param
        return np.where(u < p, 1.0 / p, 0.0)


def field_value(f: RandomField, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return float(f.pair_values(x, y))


def field_from_spec(spec: dict) -> RandomField:
    spec = dict(spec)
    return RandomField(spec.pop("dist", "uniform02"), int(spec.pop("seed", 0)), spec.pop("param", None))


# ---------------------------------------------------------------------------
@dataclass
class RcmRow:
    k: int
    lam: float
    seed: int
    deterministic_error: float
    random_error: float
    random_vs_deterministic: float


@dataclass
class RcmReport:
    rows: list
    f_norm: float
    d1_warning: bool
    dist: str

    def by_seed(self, seed: int) -> list:
        return [r for r in self.rows if r.seed == seed]

    CSV_COLUMNS = ("k", "lambda", "seed", "deterministic_error", "random_error", "random_vs_deterministic")

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.CSV_COLUMNS)
            for r in self.rows:
                wr.writerow([r.k, "%.17g" % r.lam, r.seed, "%.17g" % r.deterministic_error,
                             "%.17g" % r.random_error, "%.17g" % r.random_vs_deterministic])


def rcm_experiment(kern: JumpKernel, dist: str, seeds, k_list, lam: float, L: float, f: ContinuumFunction,
                   truncation_radius: float = 200.0, param: float | None = None, q: int = 4,
                   quad_order: int = 4, tol: float = 1e-10, threads: int = 1,
                   tail_compensation: bool = True) -> RcmReport:
    """Random-field vs deterministic resolvent errors against the same spectral reference."""
    if isinstance(seeds, (int, np.integer)):
        seeds = [int(seeds)]
    warn = kern.d == 1
    if warn:
        warnings.warn("d = 1: almost-sure convergence is only known along sparse subsequences of k",
                      RuntimeWarning, stacklevel=2)
    ks = [int(k) for k in k_list]
    oracle = SpectralOracle(kern, L, max(ks), q)
    ref = oracle_resolvent(oracle, lam, f).values.reshape(oracle.window.shape)
    f_norm = oracle_l2(oracle, oracle.tabulate(f), 0.0)

    def job(k):
        w = LatticeWindow(kern.d, k, L, "periodic")
        base = build_pointwise(w, kern, truncation_radius, tail_compensation=tail_compensation)
        pf = restrict(f, w, quad_order)
        u_det = lift_to_oracle(oracle, resolvent_solve(assemble_generator(base), lam, pf, tol))
        det_err = oracle_l2(oracle, u_det, ref)
        rows = []
        for s in seeds:
            c = apply_random_field(base, RandomField(dist, int(s), param))
            u = lift_to_oracle(oracle, resolvent_solve(assemble_generator(c), lam, pf, tol))
            rows.append(RcmRow(k, float(lam), int(s), det_err, oracle_l2(oracle, u, ref), oracle_l2(oracle, u, u_det)))
        return rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, ks))
    else:
        parts = [job(k) for k in ks]
    rows = sorted((r for p in parts for r in p), key=lambda r: (r.seed, r.k))
    return RcmReport(rows, f_norm, warn, dist)


def trend_ok(values) -> bool:
    """Strictly decreasing sequence."""
    return all(b < a for a, b in zip(values, values[1:])) and all(math.isfinite(v) for v in values)
