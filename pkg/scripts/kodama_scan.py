#!/usr/bin/env python3
"""Kodama matching for the engine's order-2 normal form, with the rescaling scan.

Shows the engine and printed coefficient rows side by side and the value of
c2 each route produces.
"""

from nfww.acceptance import engine_kodama_problem
from nfww.kodama import PRINTED_C2, derived_rows, kodama_solve, lambda_scan, printed_rows


def main():
    problem = engine_kodama_problem()
    sol = kodama_solve(problem)
    print(f"b = ({problem.b1}, {problem.b2}, {problem.b3})")
    print(f"a = ({sol.a1}, {sol.a2}, {sol.a3})  c2 = {sol.c2}  residual zero: {sol.residual.is_zero()}")
    print(f"printed c2 = {PRINTED_C2}  match: {sol.printed_c2_match}\n")

    derived = derived_rows(problem.alpha, problem.beta)
    print(f"{'monomial':>8}  {'engine row (a1 a2 a3 b1 b2 b3 | target)':<44} printed row")
    for name, (row, target) in printed_rows().items():
        mine, mine_t = derived[name]
        fmt = lambda r, t: " ".join(str(c) for c in r) + f" | {t}"
        print(f"{name:>8}  {fmt(mine, mine_t):<44} {fmt(row, target)}")

    print("\nrescaling u = lam w:")
    for row in lambda_scan(problem):
        print(f"  lam={row['lambda']:>4}  engine c2={row['engine_c2']:>8}  "
              f"printed formula={row['printed_formula_c2']}")


if __name__ == "__main__":
    main()
