"""Experiment runners behind the command line.  Each returns a dict of written files and a summary."""
from __future__ import annotations

import csv
import math
import os
import warnings

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .conductance import check_conditions
from .forms import TruncationParams, continuum_form, discrete_form, form_convergence_sweep, truncated_discrete_form
from .kernels import JumpKernel, char_exponent, kernel_from_spec
from .lattice import LatticeWindow
from .paths import (count_crossings, crossing_spec, holding_time_stats, marginal_ks, sample_ensemble,
                    sites_in_box, write_paths_csv)
from .rcm import rcm_experiment
from .resolvent import ConvergenceReport, assemble_generator, build_matrix, convergence_experiment
from .transfer import (ContinuumFunction, GridFunction, adjointness_defect, extend, l2_norm, restrict)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise FloatingPointError("non-finite value in experiment output")
    return "%.17g" % x


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def make_kernel(cfg: ExperimentConfig) -> JumpKernel:
    return kernel_from_spec(cfg.kernel_spec(), cfg.d)


def make_test_function(cfg: ExperimentConfig) -> ContinuumFunction:
    """Hat, Gaussian or constant centred at (L/2, ..., L/2); Gaussians use the minimal image."""
    tf = cfg.test_function
    L, d = cfg.L, cfg.d
    c = L / 2
    periodic = cfg.topology == "periodic"

    def disp(x):
        dx = x - c
        return (dx + L / 2) % L - L / 2 if periodic else dx

    if tf["kind"] == "constant":
        v = float(tf.get("value", 1.0))
        return ContinuumFunction.from_callable(lambda x: np.full(np.shape(x)[:-1], v), d=d,
                                               support=(np.full(d, c - L / 2), np.full(d, c + L / 2)))
    if tf["kind"] == "hat":
        wdt = float(tf.get("width", 1.0))

        def hat(x):
            r = np.sqrt((disp(np.asarray(x)) ** 2).sum(axis=-1))
            return np.maximum(0.0, 1.0 - r / wdt)
        bps = [[c - wdt, c, c + wdt]] * d if d == 1 else None
        return ContinuumFunction.from_callable(hat, d=d, breakpoints=bps,
                                               support=(np.full(d, c - wdt), np.full(d, c + wdt)))
    sig = float(tf.get("sigma", 0.5))
    half = min(8 * sig, L / 2)

    def gauss(x):
        return np.exp(-(disp(np.asarray(x)) ** 2).sum(axis=-1) / (2 * sig * sig))
    return ContinuumFunction.from_callable(gauss, d=d, support=(np.full(d, c - half), np.full(d, c + half)))


def _window(cfg, k) -> LatticeWindow:
    return LatticeWindow(cfg.d, int(k), cfg.L, cfg.topology, cfg.anchor)


def _matrix(cfg, w, kern):
    return build_matrix(w, kern, cfg.construction, cfg.truncation_radius, cfg.quad_order, cfg.tail_compensation)


# ---------------------------------------------------------------------------
def run_operators(cfg: ExperimentConfig, out: str, threads: int = 1) -> dict:
    kern = make_kernel(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in cfg.k_list:
        w = _window(cfg, k)
        g = GridFunction(w, rng.standard_normal(w.n_sites))
        h = GridFunction(w, rng.standard_normal(w.n_sites))
        ident = float(np.abs(restrict(extend(g), w).values - g.values).max())
        iso = abs(l2_norm(extend(g), w) - g.norm())
        adj = adjointness_defect(extend(h), g)
        excess = -math.inf
        for _ in range(10):
            tab = ContinuumFunction.tabulate(lambda x: rng.standard_normal(x.shape[:-1]), w, 4)
            excess = max(excess, restrict(tab, w).norm() - l2_norm(tab, w))
        c = _matrix(cfg, w, kern)
        gen = assemble_generator(c)
        form_def = 0.0
        for _ in range(5):
            u = rng.standard_normal(w.n_sites)
            lhs = -float(np.dot(u, gen.apply(u))) * w.cell_volume
            form_def = max(form_def, abs(lhs - discrete_form(c, GridFunction(w, u)).value))
        row_sum = float(np.abs(gen.apply(np.ones(w.n_sites))).max()) if w.periodic else 0.0
        rows.append((int(k), ident, iso, adj, excess, form_def, row_sum))
    path = os.path.join(out, "operators.csv")
    write_rows(path, ("k", "identity_defect", "isometry_defect", "adjointness_defect", "contraction_excess",
                      "form_defect", "row_sum_max"), rows)
    return {"files": ["operators.csv"], "summary": {"max_identity_defect": max(r[1] for r in rows)}}


def run_forms(cfg: ExperimentConfig, out: str, threads: int = 1) -> dict:
    kern = make_kernel(cfg)
    f = make_test_function(cfg)
    rows = form_convergence_sweep(kern, f, cfg.k_list, cfg.L, cfg.topology, cfg.truncation_radius,
                                  cfg.quad_order, cfg.anchor)
    write_rows(os.path.join(out, "form_convergence.csv"),
               ("k", "discrete_value", "target_value", "abs_error", "quadrature_error"),
               [(r.k, r.discrete_value, r.target_value, r.abs_error, r.quadrature_error) for r in rows])
    files = ["form_convergence.csv"]
    if cfg.trunc is not None:
        tr = TruncationParams(cfg.trunc["j"], cfg.trunc["delta"])
        w0 = _window(cfg, cfg.k_list[0])
        target = continuum_form(kern, f, tr, window=w0)
        trows = []
        for k in cfg.k_list:
            w = _window(cfg, k)
            c = build_matrix(w, kern, "cell_averaged", cfg.truncation_radius, cfg.quad_order)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                val = truncated_discrete_form(c, f, tr).value
            trows.append((int(k), val, target.value, abs(val - target.value)))
        write_rows(os.path.join(out, "truncated_forms.csv"),
                   ("k", "discrete_value", "target_value", "abs_error"), trows)
        files.append("truncated_forms.csv")
    return {"files": files, "summary": {"errors": [r.abs_error for r in rows]}}


def _write_convergence(rep: ConvergenceReport, path, quantity):
    rows = [(r.quantity, r.k, r.lambda_or_t, r.l2_error, r.solver_residual, r.oracle_error_bound)
            for r in rep.rows if r.quantity == quantity]
    write_rows(path, ("quantity", "k", "lambda_or_t", "l2_error", "solver_residual", "oracle_error_bound"), rows)


def run_mosco(cfg: ExperimentConfig, out: str, threads: int = 1) -> dict:
    kern = make_kernel(cfg)
    f = make_test_function(cfg)
    rep = convergence_experiment(kern, f, cfg.lambda_list, cfg.t_list, cfg.k_list, cfg.L, cfg.construction,
                                 cfg.truncation_radius, cfg.quad_order, tol=cfg.tol, threads=threads,
                                 tail_compensation=cfg.tail_compensation)
    _write_convergence(rep, os.path.join(out, "resolvent_convergence.csv"), "resolvent")
    files = ["resolvent_convergence.csv"]
    if cfg.t_list:
        _write_convergence(rep, os.path.join(out, "semigroup_convergence.csv"), "semigroup")
        files.append("semigroup_convergence.csv")
    sup = rep.sup_over_t()
    return {"files": files, "summary": {"f_norm": rep.f_norm, "semigroup_sup_over_t": {str(k): v for k, v in sup.items()}}}


def reference_marginal(kern: JumpKernel, t: float):
    """CDF of one coordinate of the limit process at time t (symmetric stable law)."""
    if not kern.homogeneous:
        return None
    c = float(char_exponent(kern, np.array([1.0])).psi[0])
    a = kern.alpha
    if abs(a - 1.0) < 1e-12:
        return stats.cauchy(scale=c * t).cdf
    return stats.levy_stable(a, 0.0, scale=(c * t) ** (1.0 / a)).cdf


def run_simulate(cfg: ExperimentConfig, out: str, threads: int = 1) -> dict:
    kern = make_kernel(cfg)
    P = cfg.paths
    T = float(P["T"])
    rows, files = [], []
    for k in cfg.k_list:
        w = _window(cfg, k)
        c = _matrix(cfg, w, kern)
        g = assemble_generator(c)
        x0 = w.center_index if P.get("x0") is None else int(w.site_of(P["x0"]))
        ps = sample_ensemble(g, int(P["n"]), T, cfg.seed, x0=x0, threads=threads)
        ref = reference_marginal(kern, T)
        ks = marginal_ks(ps, T, ref) if (ref is not None and len(ps) >= 100) else None
        hs = holding_time_stats(ps, g, [x0])
        h = hs[0]
        z = abs(h.mean - h.expected) / h.stderr if h.n_visits > 1 and h.stderr > 0 else 0.0
        rows.append((int(k), len(ps), ks.statistic if ks else 0.0, ks.pvalue if ks else 1.0,
                     sum(p.exited for p in ps) / len(ps), float(np.mean([p.n_jumps for p in ps])), z))
        if P.get("export"):
            name = f"paths_k{k}.csv"
            write_paths_csv(ps, os.path.join(out, name))
            files.append(name)
    write_rows(os.path.join(out, "simulate_summary.csv"),
               ("k", "n_paths", "ks_statistic", "ks_pvalue", "exited_fraction", "mean_jumps", "holding_z"), rows)
    return {"files": ["simulate_summary.csv"] + files, "summary": {"ks": [r[2] for r in rows]}}


def run_crossings(cfg: ExperimentConfig, out: str, threads: int = 1) -> dict:
    kern = make_kernel(cfg)
    P, X = cfg.paths, cfg.crossings
    c0 = cfg.L / 2
    rows = []
    for k in cfg.k_list:
        w = _window(cfg, k)
        c = _matrix(cfg, w, kern)
        g = assemble_generator(c)
        D1 = sites_in_box(w, c0 + X["D1"][0], c0 + X["D1"][1])
        D2 = sites_in_box(w, c0 + X["D2"][0], c0 + X["D2"][1])
        spec = crossing_spec(w, D1, D2)
        x = w.all_coords[:, 0]
        wd = float(X.get("initial_width", 1.0))
        bump = np.maximum(0.0, 1.0 - np.abs(x - c0) / wd) ** 2
        phi = bump / (bump.sum() * w.cell_volume)
        ps = sample_ensemble(g, int(P["n"]), float(P["T"]), cfg.seed, initial=GridFunction(w, phi), threads=threads)
        N = np.array([count_crossings(p, spec) for p in ps], dtype=float)
        se = float(N.std(ddof=1) / math.sqrt(len(N))) if len(N) > 1 else 0.0
        bound = 2 * float(phi.max()) * discrete_form(c, spec.g_fn).value
        rows.append((int(k), len(N), float(N.mean()), se, bound, bool(N.mean() <= bound + 3 * se)))
    write_rows(os.path.join(out, "crossings.csv"),
               ("k", "n_paths", "mean_crossings", "stderr", "bound", "within_bound"), rows)
    return {"files": ["crossings.csv"], "summary": {"within_bound": [bool(r[5]) for r in rows]}}


def run_rcm(cfg: ExperimentConfig, out: str, threads: int = 1) -> dict:
    kern = make_kernel(cfg)
    f = make_test_function(cfg)
    fd = cfg.field
    seeds = fd.get("seeds") or [fd.get("seed", cfg.seed)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        rep = rcm_experiment(kern, fd["dist"], seeds, cfg.k_list, cfg.lambda_list[0], cfg.L, f,
                             cfg.truncation_radius, fd.get("param"), quad_order=min(cfg.quad_order, 4),
                             tol=min(cfg.tol, 1e-10), threads=threads, tail_compensation=cfg.tail_compensation)
    rep.write_csv(os.path.join(out, "rcm_convergence.csv"))
    return {"files": ["rcm_convergence.csv"],
            "summary": {"seeds": [int(s) for s in seeds], "d1_warning": rep.d1_warning,
                        "warnings": [str(w.message) for w in caught]}}


RUNNERS = {"operators": run_operators, "forms": run_forms, "mosco": run_mosco, "simulate": run_simulate,
           "crossings": run_crossings, "rcm": run_rcm}


def preflight(cfg: ExperimentConfig) -> tuple[list, list]:
    """Condition estimates at the smallest level; returns (errors, warnings)."""
    errors, warns = [], []
    kern = make_kernel(cfg)
    kmin, kmax = min(cfg.k_list), max(cfg.k_list)
    if cfg.trunc is not None:
        diag = math.sqrt(cfg.d) / kmax
        if cfg.trunc["delta"] < 2 * diag:
            warns.append(f"trunc.delta={cfg.trunc['delta']} is below two cell diagonals ({2 * diag:.4g}) at k={kmax}")
    if cfg.trunc is not None:
        j = cfg.trunc["j"]
        if j + 2 > cfg.L / 2:
            errors.append(f"window of side {cfg.L} cannot contain B_(j+2) for j={j}")
            return errors, warns
    else:
        # no ball requested: use the largest one (up to radius 1) that the window holds
        j = min(1.0, cfg.L / 2 - 2)
        if j <= 0:
            warns.append(f"condition pre-flight skipped: window of side {cfg.L} holds no ball B_(j+2)")
            return errors, warns
    w = _window(cfg, kmin)
    if w.n_sites > 4096:
        warns.append("condition pre-flight skipped: smallest window exceeds 4096 sites")
        return errors, warns
    try:
        rep = check_conditions(_matrix(cfg, w, kern), j)
        rep2 = check_conditions(_matrix(cfg, w.with_level(2 * kmin), kern), j) if w.n_sites * 2 ** cfg.d <= 4096 else None
    except Exception as exc:  # report-only
        warns.append(f"condition pre-flight failed: {exc}")
        return errors, warns
    vals = (rep.a1a_sup, rep.a1b_sup, rep.cons1_sup)
    if not all(math.isfinite(v) for v in vals) or not rep.local_sums_finite:
        warns.append("condition estimates are not finite")
    if rep2 is not None:
        # the row sum only has to be finite per level; the (rho^2 ^ 1)-weighted sum must stay k-uniform
        a, b = rep.a1a_sup, rep2.a1a_sup
        if a > 0 and b / a > 1.5:
            warns.append(f"a1a estimate grows by {b / a:.3g}x from k={kmin} to k={2 * kmin}; may be unbounded")
    return errors, warns
