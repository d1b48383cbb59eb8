"""Window estimates of the kernel conditions across refinement levels.

Prints the two local suprema and the conservativeness row sum for each k, for
cell-averaged and pointwise conductances of a symmetric stable kernel.
"""
import argparse

from jumpgrid import LatticeWindow, build_cell_averaged, build_pointwise, check_conditions, stable_kernel


def sweep(d, alpha, L, ks, j, radius):
    kern = stable_kernel(d, alpha)
    print(f"d={d} alpha={alpha} L={L} ball j={j}")
    print(f"  {'k':>4} {'construction':>14} {'a1a':>10} {'a1b':>10} {'cons1':>10}")
    for k in ks:
        w = LatticeWindow(d, k, L)
        for name, c in (("cell_averaged", build_cell_averaged(w, kern, 4, radius)),
                        ("pointwise", build_pointwise(w, kern, radius))):
            r = check_conditions(c, j)
            print(f"  {k:>4} {name:>14} {r.a1a_sup:10.4f} {r.a1b_sup:10.4f} {r.cons1_sup:10.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--L", type=float, default=16.0)
    ap.add_argument("--k", type=int, nargs="+", default=[4, 8, 16, 32])
    ap.add_argument("--j", type=float, default=1.0)
    ap.add_argument("--radius", type=float, default=200.0)
    a = ap.parse_args()
    sweep(a.d, a.alpha, a.L, a.k, a.j, a.radius)
