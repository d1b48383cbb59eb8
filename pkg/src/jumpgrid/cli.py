"""``jumpgrid run <config.json>`` and ``jumpgrid validate <config.json>``.

Exit codes: 0 success, 2 configuration error (the message names the field),
3 numerical failure.  Failures print a JSON error object on stdout.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
import traceback
from datetime import datetime, timezone

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, load_config
from .errors import DomainError, SolverError, UnsupportedKernelError
from .experiments import RUNNERS, preflight

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

TOLERANCES = {
    "resolvent_relative_residual": "config tol (default 1e-9)",
    "semigroup_poisson_tail": 1e-12,
    "cell_quadrature": "Gauss-Legendre, quad_order nodes per axis",
    "continuum_form_epsrel": 1e-10,
}


def _emit_error(kind: str, message: str, out_dir: str | None = None, **extra) -> None:
    payload = {"error": kind, "message": message, **extra}
    print(json.dumps(payload, sort_keys=True))
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "error.json"), "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError:
            pass


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _emit_error("config", str(exc), field=exc.field)
        return EXIT_CONFIG
    except OSError as exc:
        _emit_error("config", f"cannot read config: {exc}", field="<file>")
        return EXIT_CONFIG
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    threads = max(1, int(args.threads))
    t0 = time.perf_counter()
    started = datetime.now(timezone.utc).isoformat()
    try:
        result = RUNNERS[cfg.experiment](cfg, out, threads)
    except (SolverError,) as exc:
        _emit_error("numerical", str(exc), out, residual=exc.residual, iterations=exc.iterations)
        return EXIT_NUMERIC
    except (DomainError, UnsupportedKernelError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        _emit_error("numerical", f"{type(exc).__name__}: {exc}", out, traceback=traceback.format_exc(limit=3))
        return EXIT_NUMERIC
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "config_path": os.path.abspath(args.config),
        "seeds": {"seed": cfg.seed, "field": (cfg.field or {}).get("seeds") or (cfg.field or {}).get("seed")},
        "threads": threads,
        "versions": {"jumpgrid": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "started_utc": started,
        "wall_clock_s": time.perf_counter() - t0,
        "tolerances": TOLERANCES,
        "outputs": result["files"],
        "summary": result["summary"],
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    report = {"errors": [], "warnings": []}
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        report["errors"].append({"field": exc.field, "message": str(exc)})
        print(json.dumps(report, sort_keys=True))
        return EXIT_CONFIG
    except OSError as exc:
        report["errors"].append({"field": "<file>", "message": str(exc)})
        print(json.dumps(report, sort_keys=True))
        return EXIT_CONFIG
    errors, warns = preflight(cfg)
    report["errors"] += [{"field": "trunc.j", "message": e} for e in errors]
    report["warnings"] += warns
    print(json.dumps(report, sort_keys=True))
    return EXIT_CONFIG if report["errors"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpgrid", description="Lattice approximation experiments for symmetric jump processes.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a JSON config")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=1, help="worker thread cap")
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="schema and condition pre-flight for a config")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
