from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import diffpolys, small_fractions
from nfww.acceptance import engine_kodama_problem
from nfww.diffpoly import s
from nfww.kodama import (
    PRINTED_C2,
    KodamaProblem,
    build_TK,
    c2_linear_form,
    evo_commutator,
    forced_c2_check,
    kodama_residual,
    kodama_solve,
    kodama_verify,
    lambda_scan,
    printed_c2_formula,
    prolong,
    prolong_by_substitution,
    rescaled_problem,
)

single_s = diffpolys(fields=("s",), max_order=3, max_degree=3, max_terms=2)


@pytest.fixture(scope="module")
def engine_problem():
    return engine_kodama_problem()


@pytest.fixture(scope="module")
def engine_solution(engine_problem):
    return kodama_solve(engine_problem)


# -- commutator ----------------------------------------------------------------

@given(single_s)
def test_translations_commute_with_everything(X):
    assert evo_commutator(s(1), X).is_zero()


@given(single_s)
def test_commutator_with_itself_vanishes(X):
    assert evo_commutator(X, X).is_zero()


def test_commutator_minimal_pair():
    # d(u u1)[u^2] - d(u^2)[u u1] = u1 u^2 + u (2 u u1) - 2u (u u1)
    assert evo_commutator(s() * s(1), s() ** 2) == s() ** 2 * s(1)


JACOBI_SUITE = [
    (s() ** 2, s(2), s(1) * s()),
    (s(3), s() ** 2 * s(1), s(2) * s()),
    (s(1) ** 2, s() ** 3, s(2)),
]


@pytest.mark.parametrize("triple", JACOBI_SUITE, ids=["t0", "t1", "t2"])
def test_commutator_jacobi(triple):
    A, B, C = triple
    c = evo_commutator
    assert (c(A, c(B, C)) + c(B, c(C, A)) + c(C, c(A, B))).is_zero()


low_s = diffpolys(fields=("s",), max_order=3, max_degree=2, max_terms=2)


@settings(max_examples=25)
@given(low_s, low_s)
def test_two_prolongation_routes_agree(Y, X):
    assert prolong(Y, X) == prolong_by_substitution(Y, X, "s")


# -- solving -------------------------------------------------------------------

def test_no_second_order_needs_no_correction():
    sol = kodama_solve(KodamaProblem(Fraction(-1, 12), Fraction(1, 3), 0, 0, 0))
    assert (sol.a1, sol.a2, sol.a3, sol.c2) == (0, 0, 0, 0)


def test_engine_solution_frozen(engine_problem, engine_solution):
    assert (engine_problem.b1, engine_problem.b2, engine_problem.b3) == (
        Fraction(-5, 24), Fraction(19, 720), Fraction(-1, 64))
    sol = engine_solution
    assert (sol.a1, sol.a2, sol.a3) == (Fraction(13, 24), Fraction(25, 108), Fraction(-11, 36))
    assert sol.c2 == Fraction(19, 360)


def test_engine_solution_closes_exactly(engine_problem, engine_solution):
    assert kodama_verify(engine_problem, engine_solution).is_zero()


def test_perturbed_solution_leaves_residual(engine_problem, engine_solution):
    sol = engine_solution
    assert not kodama_residual(engine_problem, sol.a1 + 1, sol.a2, sol.a3, sol.c2).is_zero()


def test_printed_c2_does_not_close(engine_problem, engine_solution):
    check = forced_c2_check(engine_problem, PRINTED_C2)
    assert not check["closes"]
    assert not engine_solution.printed_c2_match
    assert printed_c2_formula(engine_problem.b1, engine_problem.b2, engine_problem.b3) == Fraction(449, 15560)


def test_c2_records_are_attached(engine_solution):
    labels = [d["equation"] for d in engine_solution.discrepancies]
    assert labels[:2] == ["c2 value", "c2 closed form"]
    assert sum(label.startswith("matching row[") for label in labels) == 4


def test_c2_is_linear_in_b():
    form = c2_linear_form(Fraction(-1, 12), Fraction(1, 3))
    b = (Fraction(2), Fraction(-3, 5), Fraction(7, 4))
    sol = kodama_solve(KodamaProblem(Fraction(-1, 12), Fraction(1, 3), *b))
    assert sol.c2 == sum(form[name]["c2"] * bj for name, bj in zip(("b1", "b2", "b3"), b))
    # only b2 feeds the top-order monomial, and it does so with weight 2
    assert (form["b1"]["c2"], form["b2"]["c2"], form["b3"]["c2"]) == (0, 2, 0)


@settings(max_examples=20)
@given(small_fractions, small_fractions, small_fractions, st.sampled_from([Fraction(1, 4), Fraction(1, 3)]))
def test_random_problems_close(b1, b2, b3, beta):
    problem = KodamaProblem(Fraction(-1, 12), beta, b1, b2, b3)
    sol = kodama_solve(problem)
    assert kodama_verify(problem, sol).is_zero()


def test_mirrored_problem_closes_with_same_coefficients(engine_problem, engine_solution):
    mirror = engine_problem.mirrored()
    sol = kodama_solve(mirror)
    assert kodama_verify(mirror, sol).is_zero()
    assert (sol.a1, sol.a2, sol.a3, sol.c2) == (
        engine_solution.a1, engine_solution.a2, engine_solution.a3, engine_solution.c2)


# -- rescaling scan --------------------------------------------------------------

def test_c2_is_invariant_under_rescaling(engine_problem, engine_solution):
    for lam in (Fraction(1, 2), Fraction(4, 3), Fraction(3)):
        assert kodama_solve(rescaled_problem(engine_problem, lam)).c2 == engine_solution.c2


def test_scan_includes_hierarchy_normalisation(engine_problem):
    rows = lambda_scan(engine_problem)
    assert "4/3" in {row["lambda"] for row in rows}
    assert all(row["engine_residual_zero"] for row in rows)
    assert not any(row["engine_matches_299_389"] for row in rows)


# -- change of variables ------------------------------------------------------------

def test_map_orders(engine_solution):
    tk = build_TK(engine_solution)
    X = engine_solution.generator("s")
    assert tk[1].s == X
    assert tk[2].s == prolong_by_substitution(X, X, "s")
    assert tk[1].r == engine_solution.generator("r")

