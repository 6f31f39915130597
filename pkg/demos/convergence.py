"""Scaled error N * ||f - s_N|| against its predicted limit for x^2 + y^2
and x^2 + y^2 + x^4.

    python demos/convergence.py
"""
from anisomesh.functions import get_function
from anisomesh.integrate import Weights
from anisomesh.spline import convergence_run

RUNS = [
    ("sum-squares", Weights(2.0, 1.0, 1.0), {}),
    ("sum-squares", Weights(float("inf"), 2.0, 1.0), {}),
    # the default m keeps a single cell at desk-scale N; two cells resolve
    # the varying Hessian
    ("sum-squares-quartic", Weights(2.0, 1.0, 1.0), {"m_override": 2}),
]


def main():
    for name, w, extra in RUNS:
        res = convergence_run(get_function(name), w, [256, 1024, 4096], full_budget=True, **extra)
        print(f"{name} p={w.p:g} alpha={w.alpha:g} beta={w.beta:g}  trend={res.trend}")
        for r in res.rows:
            print(f"  N={r.N:5d} N_actual={r.N_actual:5d} error={r.error:.4e} ratio={r.ratio:.4f}")


if __name__ == "__main__":
    main()
