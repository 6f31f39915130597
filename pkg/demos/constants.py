"""Table of the optimal error constants C_{p;alpha,beta} with the known
closed forms alongside.

    python demos/constants.py
"""
import math

from anisomesh.approx import closed_form_constant, constant_C

WEIGHTS = [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (1.0, 4.0)]
PS = [1.0, 1.5, 2.0, 4.0, math.inf]


def main():
    print(f"{'p':>5} {'alpha':>6} {'beta':>6} {'C':>12} {'closed form':>12}")
    for p in PS:
        for a, b in WEIGHTS:
            c = constant_C(p, a, b)
            ref = closed_form_constant(p, a, b)
            ref_s = f"{ref:12.7f}" if ref is not None else f"{'-':>12}"
            print(f"{p:>5g} {a:>6g} {b:>6g} {c:12.7f} {ref_s}")


if __name__ == "__main__":
    main()
