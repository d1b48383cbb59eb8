"""Print error tables with observed rates from the CSVs written by run_all.py.

The rate column is log2(e_k / e_2k) between consecutive levels.
"""
import argparse
import csv
import math
import os
from collections import defaultdict


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _print_curve(title, ks, errs):
    if title:
        print(f"  {title}")
    prev = None
    for k, e in zip(ks, errs):
        rate = "" if prev is None or e <= 0 else f"{math.log2(prev / e):6.2f}"
        print(f"    k={k:>4}  error={e:.4e}  {rate}")
        prev = e


def forms(out):
    p = os.path.join(out, "forms_d1_alpha1", "form_convergence.csv")
    if os.path.exists(p):
        rows = _read(p)
        print("form convergence (hat test function, relative error)")
        _print_curve("", [int(r["k"]) for r in rows],
                     [float(r["abs_error"]) / float(r["target_value"]) for r in rows])


def mosco(out):
    for q in ("resolvent", "semigroup"):
        p = os.path.join(out, "mosco_d1_alpha1", f"{q}_convergence.csv")
        if not os.path.exists(p):
            continue
        by = defaultdict(list)
        for r in _read(p):
            by[float(r["lambda_or_t"])].append((int(r["k"]), float(r["l2_error"])))
        print(f"{q} convergence (L2 error against the spectral reference)")
        for par, kv in sorted(by.items()):
            _print_curve(("lambda" if q == "resolvent" else "t") + f" = {par:g}", *zip(*kv))


def rcm(out):
    p = os.path.join(out, "rcm_d2_uniform", "rcm_convergence.csv")
    if not os.path.exists(p):
        return
    print("random conductance (lambda = 1)")
    print(f"    {'seed':>4} {'k':>4} {'deterministic':>14} {'random':>12} {'ratio':>7}")
    for r in _read(p):
        d, x = float(r["deterministic_error"]), float(r["random_error"])
        print(f"    {r['seed']:>4} {r['k']:>4} {d:14.4e} {x:12.4e} {x / d:7.3f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-root", default="out")
    a = ap.parse_args()
    forms(a.out_root)
    mosco(a.out_root)
    rcm(a.out_root)
