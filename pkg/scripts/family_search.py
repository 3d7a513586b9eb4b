"""Scan a one-parameter family and print the verdict for each member.

Usage::

    python3 scripts/family_search.py trapezium --values 1/2,1,3/2,2,3
    python3 scripts/family_search.py octagon --values 1/10,1/4,1/2,1 --resolution 6
"""
import argparse
import time
from fractions import Fraction

from polystab.cli import _octagon
from polystab.destabilizer import semistability_test, solve_optimal_destabilizer
from polystab.functionals import extremal_affine
from polystab.geometry import interval, trapezium

FAMILIES = {
    "trapezium": trapezium,
    "interval": lambda a: interval(0, 1, (a, 1)),
    "octagon": _octagon,
}


def _fmt(A):
    names = "xyz"
    terms = [f"{g}{names[i]}" for i, g in enumerate(A.gradient) if g]
    return " + ".join(terms + [str(A.constant)])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("family", choices=sorted(FAMILIES))
    p.add_argument("--values", default="1/2,1,2,3")
    p.add_argument("--resolution", type=int, default=None)
    args = p.parse_args(argv)

    print(f"{'value':>8} {'A':>24} {'relative':>18} {'|Phi_h|':>10} {'secs':>6}")
    for raw in args.values.split(","):
        a = Fraction(raw)
        mp = FAMILIES[args.family](a)
        res = args.resolution or (64 if mp.dim == 1 else 8)
        t0 = time.perf_counter()
        A = extremal_affine(mp)
        rel = semistability_test(mp, resolution=res)
        phi = solve_optimal_destabilizer(mp, rel.quad, problem="relative", check=False)
        print(f"{raw:>8} {_fmt(A):>24} {rel.verdict:>18} {phi.norm:10.3e} {time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
