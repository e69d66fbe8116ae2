import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import diffpolys, monomials
from nfww.diffpoly import (
    DiffPoly,
    Functional,
    NotTotalDerivative,
    OrderUnderflow,
    antiderivative_exact,
    dinv,
    euler,
    functional_equal,
    is_total_derivative,
    jet,
    poisson_bracket,
    r,
    s,
    total_derivative,
    variational_gradient,
)
from nfww.normalform import builtin_hamiltonians, normalize_order2

H0 = Functional((r() ** 2 + s() ** 2) / 2)


# -- arithmetic -------------------------------------------------------------

def test_product_distributes():
    assert (r() + s()) * r(1) == r() * r(1) + s() * r(1)


def test_opposite_terms_cancel():
    p = r(1) ** 2 * Fraction(-1, 12) + r(1) ** 2 * Fraction(1, 12)
    assert p.is_zero() and len(p) == 0


def test_exponents_add():
    assert r() ** 2 * r() ** 2 == r() ** 4


def test_float_coefficients_rejected():
    with pytest.raises(TypeError):
        r() * 0.5


def test_order_minus_two_is_not_a_jet():
    with pytest.raises(OrderUnderflow):
        jet("r", -2)


# -- total derivative and exact antiderivative --------------------------------

@pytest.mark.parametrize(
    "p, expected",
    [
        (r(), r(1)),
        (r() * r(1), r(1) ** 2 + r() * r(2)),
        (r(-1) * s() ** 2, r() * s() ** 2 + 2 * r(-1) * s() * s(1)),
    ],
    ids=["jet-shift", "leibniz", "potential-shift"],
)
def test_total_derivative(p, expected):
    assert total_derivative(p) == expected


@pytest.mark.parametrize(
    "p, expected",
    [
        (r(1) ** 2 + r() * r(2), r() * r(1)),
        (r(4) * r(1), r(1) * r(3) - r(2) ** 2 / 2),
    ],
    ids=["product-rule", "r4-r1"],
)
def test_antiderivative_exact(p, expected):
    assert antiderivative_exact(p) == expected


def test_square_of_first_jet_has_no_antiderivative():
    assert variational_gradient(r(1) ** 2, "r").poly == -2 * r(2)
    # the potential Euler operator is -D of the field gradient
    assert euler(r(1) ** 2, "r") == 2 * r(3)
    with pytest.raises(NotTotalDerivative):
        antiderivative_exact(r(1) ** 2)


def test_potential_has_no_antiderivative():
    with pytest.raises(OrderUnderflow):
        antiderivative_exact(s(-1))


@given(diffpolys(min_order=-1, max_order=3))
def test_antiderivative_inverts_derivative(p):
    dp = total_derivative(p)
    q = antiderivative_exact(dp)
    assert total_derivative(q) == dp


@settings(max_examples=200)
@given(diffpolys(min_order=-1, max_order=4, max_degree=4, max_terms=2))
def test_euler_kills_total_derivatives(p):
    dp = total_derivative(p)
    assert euler(dp, "r").is_zero() and euler(dp, "s").is_zero()


@pytest.mark.parametrize("p", [r(1) ** 2, r() * s(), s() ** 3, r(2) ** 2 * s()])
def test_euler_detects_non_derivatives(p):
    assert not is_total_derivative(p)


@given(diffpolys(), diffpolys())
def test_coefficients_stay_rational(p, q):
    for poly in (p * q, p + q, total_derivative(p), antiderivative_exact(total_derivative(q))):
        assert all(isinstance(c, Fraction) for _, c in poly.items())


# -- gradients ----------------------------------------------------------------

def test_gradient_of_order1_resonant_density():
    g = variational_gradient(Functional(-r(1) ** 2 / 12 + r() ** 3 / 4), "r")
    assert g.poly == r(2) / 6 + r() ** 2 * Fraction(3, 4)


def test_gradient_of_order1_mixed_density():
    W1 = normalize_order2(with_order3=False).W1
    assert variational_gradient(W1, "r").poly == -s(2) / 6 - r() * s() / 2 - s() ** 2 / 4


def test_gradient_of_order1_generator_is_nonlocal():
    G1 = normalize_order2(with_order3=False).G1
    g = variational_gradient(G1, "r")
    assert g.poly == -r() * s(-1) / 4 - dinv(s() ** 2) / 8 - s(1) / 12
    assert not g.is_local()


# -- brackets and functional equality ----------------------------------------

def test_single_field_cubic_commutes_with_h0():
    assert poisson_bracket(H0, Functional(r() ** 3)).is_zero()


def test_homological_identity_order1():
    res = normalize_order2(with_order3=False)
    assert poisson_bracket(H0, res.G1) == -res.W1


@pytest.mark.parametrize(
    "a, b, equal",
    [(r() * s(1), -r(1) * s(), True), (r(1) ** 2, -r() * r(2), True), (r() ** 3, r() ** 2, False)],
    ids=["parts-mixed", "parts-single", "different"],
)
def test_functional_equal(a, b, equal):
    assert functional_equal(Functional(a), Functional(b)) is equal


small = diffpolys(max_order=2, max_degree=3, max_terms=2)


@given(small, small)
def test_bracket_is_skew(f, g):
    F, G = Functional(f), Functional(g)
    assert (poisson_bracket(F, G) + poisson_bracket(G, F)).is_zero()


@given(small, small, small, st.sampled_from([Fraction(2), Fraction(-1, 3)]))
def test_bracket_is_bilinear(f, g, h, c):
    F, G, K = Functional(f), Functional(g), Functional(h)
    lhs = poisson_bracket(F.scale(c) + G, K)
    rhs = poisson_bracket(F, K).scale(c) + poisson_bracket(G, K)
    assert lhs == rhs


JACOBI_SUITE = [
    (r() ** 3, s() ** 2 * r(), r(1) ** 2),
    (r() * s(), r(1) * s(1), s() ** 3),
    (r() ** 2 * s(), s(2) * r(), r(1) * s() ** 2),
    (r(2) ** 2, r() * s() ** 2, s(1) ** 2 * s()),
]


@pytest.mark.parametrize("triple", JACOBI_SUITE, ids=[f"triple{i}" for i in range(len(JACOBI_SUITE))])
def test_jacobi_identity(triple):
    F, G, K = (Functional(p) for p in triple)
    total = (poisson_bracket(F, poisson_bracket(G, K)) + poisson_bracket(G, poisson_bracket(K, F))
             + poisson_bracket(K, poisson_bracket(F, G)))
    assert total.is_zero()


@given(diffpolys(fields=("r",), max_order=3), st.sampled_from(["r", "s"]))
def test_single_field_functionals_commute_with_h0(p, field):
    if field == "s":
        p = p.rename({"r": "s"})
    assert poisson_bracket(H0, Functional(p)).is_zero()


def test_builtin_h0_is_half_l2():
    assert builtin_hamiltonians().H0.density == (r() ** 2 + s() ** 2) / 2


# -- serialisation ------------------------------------------------------------

def test_json_layout():
    data = (r(1) ** 2 * Fraction(-1, 12)).to_json()
    assert data == {"monomials": [{"coeff": {"num": "-1", "den": "12"},
                                   "vars": [{"field": "r", "order": 1, "power": 2}]}]}


@given(diffpolys(min_order=-1))
def test_json_roundtrip_is_exact(p):
    text = json.dumps(p.to_json(), sort_keys=True)
    assert DiffPoly.from_json(json.loads(text)) == p


@given(monomials())
def test_monomials_have_positive_degree(m):
    assert not m.has_constant()
