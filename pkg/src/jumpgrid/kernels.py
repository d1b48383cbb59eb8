"""Symmetric jump kernels j(x, y) and their characteristic exponents."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import DomainError, UnsupportedKernelError

KINDS = ("stable", "phi", "custom")

_QUAD_OPTS = dict(limit=400, epsabs=1e-13, epsrel=1e-12)


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class JumpKernel:
    """Translation-invariant symmetric jump kernel.

    ``stable``: j = amp * |x-y|^(-d-alpha).
    ``phi``: j = phi(scale) / (|x-y|^d phi(scale*|x-y|)); ``scale=1`` is the
    plain kernel 1/(r^d phi(r)), larger scales give the level-k conductance
    profile of the rescaled walk.
    ``custom``: user radial profile ``profile_fn(r)`` or a non-radial ``pair_fn(x, y)``.
    """

    kind: str
    d: int
    alpha: float | None = None
    amp: float = 1.0
    phi: Callable | None = None
    phi_scale: float = 1.0
    profile_fn: Callable | None = None
    pair_fn: Callable | None = None
    name: str = ""
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("kernel dimension must be a positive integer")
        if self.kind == "stable":
            if self.alpha is None or not 0 < self.alpha < 2:
                raise DomainError(f"alpha must lie in (0, 2), got {self.alpha}")
            if not self.amp > 0:
                raise DomainError(f"amp must be positive, got {self.amp}")
        if self.kind == "phi" and self.phi is None:
            raise DomainError("phi kernel needs a phi function")
        if self.kind == "custom" and self.profile_fn is None and self.pair_fn is None:
            raise DomainError("custom kernel needs profile_fn or pair_fn")

    @property
    def radial(self) -> bool:
        return self.kind != "custom" or self.profile_fn is not None

    @property
    def homogeneous(self) -> bool:
        return self.kind == "stable"

    def profile(self, r):
        """Radial profile J(r) with j(x, y) = J(|x - y|)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "stable":
            return self.amp * r ** (-self.d - self.alpha)
        if self.kind == "phi":
            s = self.phi_scale
            return self.phi(s) / (r ** self.d * self.phi(s * r))
        if self.profile_fn is None:
            raise UnsupportedKernelError("kernel is not radial")
        return np.asarray(self.profile_fn(r), dtype=float)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.pair_fn is not None and self.profile_fn is None and self.kind == "custom":
            return np.asarray(self.pair_fn(x, y), dtype=float)
        if x.ndim == 0 and y.ndim == 0:
            r = np.abs(y - x)
        else:
            r = np.sqrt(((y - x) ** 2).sum(axis=-1))
        return self.profile(r)

    def rescaled(self, k: float) -> "JumpKernel":
        """Level-k profile phi(k)/(r^d phi(k r)) of a phi kernel."""
        if self.kind != "phi":
            raise UnsupportedKernelError("only phi kernels carry a level scaling")
        return JumpKernel("phi", self.d, alpha=self.alpha, phi=self.phi,
                          phi_scale=self.phi_scale * k, name=self.name, spec=self.spec)


def stable_kernel(d: int, alpha: float, amp: float = 1.0) -> JumpKernel:
    return JumpKernel("stable", d, alpha=alpha, amp=amp, name=f"stable(alpha={alpha}, amp={amp})",
                      spec={"kind": "stable", "alpha": alpha, "amp": amp})


def phi_kernel(d: int, phi: Callable, alpha: float | None = None, name: str = "phi") -> JumpKernel:
    return JumpKernel("phi", d, alpha=alpha, phi=phi, name=name, spec={"kind": "phi", "name": name})


def power_phi_kernel(d: int, power: float) -> JumpKernel:
    """phi(r) = r^power, i.e. the stable kernel with alpha = power written in phi form."""
    return JumpKernel("phi", d, alpha=power, phi=lambda r: np.asarray(r, dtype=float) ** power,
                      name=f"phi(r^{power})",
                      spec={"kind": "phi", "phi_power": power})


def custom_kernel(d: int, profile_fn=None, pair_fn=None, name: str = "custom") -> JumpKernel:
    return JumpKernel("custom", d, profile_fn=profile_fn, pair_fn=pair_fn, name=name,
                      spec={"kind": "custom", "name": name})


def kernel_from_spec(spec: dict, d: int) -> JumpKernel:
    """Build a kernel from its config form, e.g. ``{"kind": "stable", "alpha": 1.0, "amp": 1.0}``."""
    kind = spec.get("kind", "stable")
    if kind == "stable":
        return stable_kernel(d, float(spec["alpha"]), float(spec.get("amp", 1.0)))
    if kind == "phi":
        return power_phi_kernel(d, float(spec["phi_power"]))
    raise DomainError(f"kernel kind {kind!r} cannot be built from a config")


def phi_scaling_ratio(phi: Callable, k: float, r: float) -> float:
    """phi(k) / phi(k r); tends to 1/psi(r) for a regularly varying phi."""
    return float(phi(k) / phi(k * r))


# ---------------------------------------------------------------------------
def eval_kernel(kern: JumpKernel, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.array_equal(x, y):
        raise DomainError("jump kernel is singular on the diagonal x = y")
    return float(kern(x, y))


@dataclass
class BoundsReport:
    n_checked: int
    violations: list
    far_tail_mass: float

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_bounds(kern: JumpKernel, kappa0=None, kappa1=None, kappa2=None, alpha=None, beta=None,
                  samples: int = 1000, seed: int = 0, r_min: float = 1e-3, r_max: float = 10.0,
                  near_only: bool = False) -> BoundsReport:
    """Monte-Carlo check of kappa1 r^{-d-beta} <= j <= kappa2 r^{-d-alpha} (r < 1), j <= kappa0 (r >= 1)
    and j(x, y) = j(y, x)."""
    if samples < 1:
        raise DomainError("samples must be >= 1")
    d = kern.d
    alpha = kern.alpha if alpha is None else alpha
    beta = alpha if beta is None else beta
    rng = np.random.default_rng(seed)
    n_far = 0 if near_only or kappa0 is None else samples // 2
    n_near = samples - n_far
    x = rng.uniform(-5.0, 5.0, size=(samples, d))
    u = rng.standard_normal((samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = np.empty(samples)
    r[:n_near] = np.exp(rng.uniform(math.log(r_min), 0.0, n_near))
    r[n_near:] = np.exp(rng.uniform(0.0, math.log(r_max), n_far))
    y = x + r[:, None] * u
    vals = np.asarray(kern(x, y), dtype=float)
    slack = 1e-12
    violations = []
    for i in range(samples):
        v = vals[i]
        ri = r[i]
        if ri < 1.0:
            if kappa1 is not None:
                lo = kappa1 * ri ** (-d - beta)
                if v < lo * (1 - slack):
                    violations.append(dict(x=x[i].tolist(), y=y[i].tolist(), r=ri, value=v, bound=lo,
                                           which="lower"))
            if kappa2 is not None:
                hi = kappa2 * ri ** (-d - alpha)
                if v > hi * (1 + slack):
                    violations.append(dict(x=x[i].tolist(), y=y[i].tolist(), r=ri, value=v, bound=hi,
                                           which="upper"))
        elif kappa0 is not None and v > kappa0 * (1 + slack):
            violations.append(dict(x=x[i].tolist(), y=y[i].tolist(), r=ri, value=v, bound=kappa0,
                                   which="far"))
    # symmetry j(x, y) = j(y, x) can only be sampled for user kernels
    rev = np.asarray(kern(y, x), dtype=float)
    for i in np.nonzero(np.abs(rev - vals) > slack * np.maximum(np.abs(vals), np.abs(rev)))[0]:
        violations.append(dict(x=x[i].tolist(), y=y[i].tolist(), r=r[i], value=vals[i], bound=rev[i],
                               which="symmetry"))
    far = tail_mass(kern, np.zeros(d), 1.0) if kern.radial else float("nan")
    return BoundsReport(n_checked=samples, violations=violations, far_tail_mass=far)


# ---------------------------------------------------------------------------
def tail_mass(kern: JumpKernel, x, R: float, method: str = "auto") -> float:
    """Mass of j(x, .) outside the ball B(x, R)."""
    if not R > 0:
        raise DomainError(f"radius must be positive, got {R}")
    if math.isinf(R):
        return 0.0
    if not kern.radial:
        raise UnsupportedKernelError("tail mass needs a radial kernel")
    d = kern.d
    if kern.kind == "stable" and method != "quad":
        return sphere_area(d) * kern.amp * R ** (-kern.alpha) / kern.alpha
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda r: float(kern.profile(r)) * r ** (d - 1), R, np.inf, **_QUAD_OPTS)
    if not np.isfinite(val):
        raise DomainError("kernel tail is not integrable")
    return sphere_area(d) * val


def marginal_profile(kern: JumpKernel, t: float) -> float:
    """One-dimensional marginal j1(t) = int_{R^{d-1}} J(sqrt(t^2 + |u|^2)) du."""
    d = kern.d
    if d == 1:
        return float(kern.profile(t))
    c = sphere_area(d - 1)
    if kern.kind == "stable":
        a = kern.alpha
        return c * kern.amp * t ** (-1.0 - a) * 0.5 * special.beta((d - 1) / 2, (1 + a) / 2)

    def inner(v):
        return float(kern.profile(t * math.sqrt(1.0 + v * v))) * v ** (d - 2)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        a, _ = integrate.quad(inner, 0.0, 1.0, **_QUAD_OPTS)
        b, _ = integrate.quad(inner, 1.0, np.inf, **_QUAD_OPTS)
    return c * t ** (d - 1) * (a + b)


def _psi_quad(kern: JumpKernel, s: float) -> tuple[float, float]:
    """psi at |xi| = s by adaptive quadrature, with an absolute error estimate."""
    if s == 0.0:
        return 0.0, 0.0
    j1 = (lambda t: float(kern.profile(t))) if kern.d == 1 else (lambda t: marginal_profile(kern, t))
    a = 1.0 / s
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        # 1 - cos written as 2 sin^2 to keep digits near t = 0
        near, e1 = integrate.quad(lambda t: 2.0 * math.sin(0.5 * s * t) ** 2 * j1(t), 0.0, a,
                                  **_QUAD_OPTS)
        far, e2 = integrate.quad(j1, a, np.inf, **_QUAD_OPTS)
        osc, e3 = integrate.quad(j1, a, np.inf, weight="cos", wvar=s, limlst=200, limit=400,
                                 epsabs=1e-13)
    return 2.0 * (near + far - osc), 2.0 * (e1 + e2 + e3)


@dataclass
class CharExponent:
    freqs: np.ndarray
    psi: np.ndarray
    quadrature_error: np.ndarray

    def __call__(self, xi):
        """Interpolated psi at |xi| (exact rescaling for homogeneous kernels)."""
        return self._interp(np.abs(np.asarray(xi, dtype=float)))

    _interp: Callable = field(default=None, repr=False)


def char_exponent(kern: JumpKernel, freq_grid, method: str = "auto") -> CharExponent:
    """psi(xi) = int (1 - cos(xi . h)) j(h) dh on |xi| values of ``freq_grid``.

    For stable kernels ``method="auto"`` evaluates psi(1) by quadrature and uses
    exact homogeneity; ``method="quad"`` integrates every frequency separately.
    """
    if not kern.radial:
        raise UnsupportedKernelError("characteristic exponent needs a radial kernel")
    grid = np.asarray(freq_grid, dtype=float)
    mags = np.abs(grid) if grid.ndim <= 1 else np.linalg.norm(grid, axis=-1)
    flat = mags.ravel()
    if kern.homogeneous and method != "quad":
        p1, e1 = _psi_quad(kern, 1.0)
        alpha = kern.alpha
        psi = p1 * flat ** alpha
        err = e1 * flat ** alpha
        interp = lambda s: p1 * s ** alpha  # noqa: E731
    else:
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.empty_like(uniq)
        errs = np.empty_like(uniq)
        for i, s in enumerate(uniq):
            vals[i], errs[i] = _psi_quad(kern, float(s))
        psi = vals[inv]
        err = errs[inv]
        pos = uniq > 0
        if pos.sum() >= 2:
            from scipy.interpolate import CubicSpline
            spline = CubicSpline(np.log(uniq[pos]), np.log(np.maximum(vals[pos], 1e-300)))
            lo = uniq[pos][0]

            def interp(s, spline=spline, lo=lo):
                s = np.asarray(s, dtype=float)
                out = np.zeros_like(s)
                m = s > 0
                out[m] = np.exp(spline(np.log(np.maximum(s[m], lo))))
                return out
        else:
            interp = lambda s: np.interp(np.asarray(s, float), uniq, vals)  # noqa: E731
    return CharExponent(freqs=mags, psi=psi.reshape(mags.shape), quadrature_error=err.reshape(mags.shape),
                        _interp=interp)
