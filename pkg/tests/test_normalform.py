import json
from fractions import Fraction

import pytest
from hypothesis import given

from conftest import diffpolys
from nfww.diffpoly import DiffPoly, Functional, r, s
from nfww.normalform import (
    Kind,
    ObstructionError,
    builtin_hamiltonians,
    classify_monomial,
    homological_residual,
    lie_expand,
    normalize_order2,
    obstruction_report,
    poisson_bracket,
    printed_g1,
    printed_z1,
    resonant_split,
    single_field_coefficients,
    solve_homological,
)

LIB = builtin_hamiltonians()


@pytest.fixture(scope="module")
def result():
    return normalize_order2()


def key_of(p):
    return p.items()[0][0]


# -- built-in Hamiltonians --------------------------------------------------

def test_quadratic_hamiltonian():
    assert LIB.H0.density == (r() ** 2 + s() ** 2) / 2


def test_cubic_hamiltonian():
    expected = (-(r(1) ** 2 + s(1) ** 2) / 12 + (r() ** 3 + s() ** 3) / 4 + r(1) * s(1) / 6
                - (r() ** 2 * s() + r() * s() ** 2) / 4)
    assert LIB.H1.density == expected


@pytest.mark.parametrize("field", ["r", "s"])
def test_second_kdv_hamiltonian(field):
    u = r if field == "r" else s
    K2 = builtin_hamiltonians(kdv_field=field).K2.density
    assert K2 == u(2) ** 2 / 2 - Fraction(5, 2) * u(1) ** 2 * u() + Fraction(5, 8) * u() ** 4


# -- resonant split ----------------------------------------------------------

def test_split_of_cubic_hamiltonian():
    Z, W = resonant_split(LIB.H1)
    assert Z.density == printed_z1().density
    assert W.density == r(1) * s(1) / 6 - (r() ** 2 * s() + r() * s() ** 2) / 4


@pytest.mark.parametrize(
    "density, resonant",
    [(r() ** 4, True), (r() * s(), False)],
    ids=["single-field", "mixed"],
)
def test_split_trivial_cases(density, resonant):
    Z, W = resonant_split(Functional(density))
    assert (Z.density, W.density) == ((density, DiffPoly()) if resonant else (DiffPoly(), density))


@given(diffpolys(max_order=3, max_degree=4, max_terms=4))
def test_split_is_a_projection(p):
    Z, W = resonant_split(Functional(p))
    assert Z.density + W.density == p
    Z2, W2 = resonant_split(Z)
    assert Z2.density == Z.density and W2.density.is_zero()


# -- homological equation ----------------------------------------------------

def test_order1_generator_matches_printed_form(result):
    assert result.G1 == printed_g1()


def test_generator_for_rs():
    G = solve_homological(Functional(r() * s()))
    assert G.density == -r(-1) * s() / 2
    assert homological_residual(Functional(r() * s()), G).is_zero()


def test_underflow_density_is_rejected():
    with pytest.raises(ObstructionError):
        solve_homological(Functional(r(1) ** 2 * s(-1)))


@given(diffpolys(max_order=2, max_degree=3, max_terms=3))
def test_solved_generators_satisfy_the_identity(p):
    _, W = resonant_split(Functional(p))
    G = solve_homological(W)
    assert (poisson_bracket(LIB.H0, G) + W).is_zero()


# -- Lie expansion -----------------------------------------------------------

def test_expansion_by_zero_generator():
    out = lie_expand(LIB.H1, Functional(DiffPoly()), 3)
    assert out[0] == LIB.H1 and all(term.is_zero() for term in out[1:])


def test_expansion_first_and_second_terms(result):
    out = lie_expand(LIB.H0, result.G1, 2)
    assert out[1] == -result.W1
    assert out[2] == poisson_bracket(-result.W1, result.G1)


# -- the order-2 pipeline ----------------------------------------------------

def test_zero_perturbation_gives_zero_everything():
    zero = Functional(DiffPoly())
    res = normalize_order2(H1=zero, H2=zero)
    assert all(F.density.is_zero() for F in res.functionals().values())


def test_order1_normal_form_is_exact(result):
    assert result.Z1.density == printed_z1().density


@pytest.mark.parametrize("field", ["r", "s"])
def test_order2_normal_form_coefficients(result, field):
    coeffs = single_field_coefficients(result.Z2, field)
    assert coeffs == {"u*u1^2": Fraction(-5, 24), "u2^2": Fraction(19, 720), "u^4": Fraction(-1, 64)}


def test_all_identities_recorded(result):
    assert result.checks and all(result.checks.values())
    assert {"homological_order1", "homological_order2", "conjugation_eps2"} <= set(result.checks)


def test_normal_forms_are_resonant(result):
    for Z in (result.Z1, result.Z2):
        assert resonant_split(Z)[1].density.is_zero()


def test_order2_generator_is_nonlocal_but_solves(result):
    assert homological_residual(result.W2, result.G2).is_zero()
    assert not result.G2.is_local()


def test_discrepancy_records_present(result):
    labels = {d.equation for d in result.discrepancies}
    assert {"Z1 coefficients", "G1 generator", "Z2 coefficients[r]", "Z2 coefficients[s]"} <= labels
    assert all(d.match for d in result.discrepancies)


def test_result_json_is_canonical(result):
    a = json.dumps(result.to_json(), sort_keys=True)
    b = json.dumps(normalize_order2().to_json(), sort_keys=True)
    assert a == b


# -- order-3 obstruction scan --------------------------------------------------

def test_underflow_probe():
    rec = classify_monomial(Fraction(1), key_of(r(1) ** 2 * s(-1)))
    assert rec.kind == Kind.OBSTRUCTED_ORDER_UNDERFLOW and not rec.solvable


def test_removable_probe_has_witness():
    rec = classify_monomial(Fraction(1), key_of(r(4) * r(1) * s(-1)))
    assert rec.kind == Kind.SOLVABLE and rec.placement == "r"
    assert rec.witness == r(1) * r(3) - r(2) ** 2 / 2


def test_report_covers_each_monomial_once(result):
    rep = obstruction_report(result)
    assert len(rep.records) == len(result.W3_partial.density.items())
    assert sum(rep.counts().values()) == len(rep.records)


def test_report_is_deterministic(result):
    a = json.dumps(obstruction_report(result).to_json(), sort_keys=True)
    b = json.dumps(obstruction_report(result).to_json(), sort_keys=True)
    assert a == b


def test_report_carries_caveat_and_verdict(result):
    rep = obstruction_report(result)
    assert rep.modulo_H3 and rep.caveat
    assert rep.probes["r4*r1*s_{-1}"]["witness_verified"] is True
    assert rep.verdict["r4*r1*s_{-1}"]["class_is_zero"] is True


def test_class_scan_finds_genuine_obstruction(result):
    # frozen engine output: two cubic-times-potential class terms survive
    blocked = obstruction_report(result).verdict["class_scan"]["obstructed_terms"]
    shown = sorted((t["coeff"], t["r_factor"], t["s_factor"]) for t in blocked)
    assert shown == [("-3/16", "r1^3", "s_{-1}"), ("-3/16", "r_{-1}", "s1^3")]
