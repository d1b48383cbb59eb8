"""Run every config in configs/ through the CLI and print a one-line status for each.

    python3 scripts/run_all.py [--threads N] [--out-root out]
"""
import argparse
import json
import os
import sys
import time

from jumpgrid.cli import main

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


def run(threads=1, out_root="out", only=None):
    cfg_dir = os.path.join(ROOT, "configs")
    status = 0
    for name in sorted(os.listdir(cfg_dir)):
        if not name.endswith(".json") or (only and only not in name):
            continue
        out = os.path.join(out_root, name[:-5])
        t0 = time.perf_counter()
        code = main(["run", os.path.join(cfg_dir, name), "--out", out, "--threads", str(threads)])
        dt = time.perf_counter() - t0
        summary = ""
        if code == 0:
            with open(os.path.join(out, "manifest.json")) as fh:
                summary = json.dumps(json.load(fh)["summary"], default=str)[:100]
        print(f"{name:28s} exit={code} {dt:6.1f}s  {summary}")
        status = status or code
    return status


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-root", default="out")
    p.add_argument("--only", default=None, help="substring filter on config names")
    a = p.parse_args()
    sys.exit(run(a.threads, a.out_root, a.only))
