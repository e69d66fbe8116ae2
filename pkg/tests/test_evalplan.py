import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import diffpolys
from nfww.diffpoly import DiffPoly, EvoField, Functional, dinv, r, s, total_derivative
from nfww.evalplan import (
    EvalPlan,
    PlanBuilder,
    ShapeMismatch,
    compile_field,
    compile_map,
    compile_poly,
    evaluate,
)
from nfww.normalform import builtin_hamiltonians, normalize_order2
from nfww.solver import GridState, build_maps, grid

LIB = builtin_hamiltonians()


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


# -- field plans -----------------------------------------------------------------

def test_transport_field(smooth_state):
    plan = compile_field(EvoField.hamiltonian(LIB.H0))
    fr, fs = evaluate(plan, smooth_state)
    g = smooth_state.grid
    assert np.allclose(fr, -g.derivative(smooth_state.r), atol=1e-13)
    assert np.allclose(fs, g.derivative(smooth_state.s), atol=1e-13)


def test_transport_on_sine():
    L, N = 40.0, 256
    y = grid(L, N).y
    st_ = GridState(L, N, np.sin(np.pi * y / L), np.zeros(N))
    fr, fs = evaluate(compile_field(EvoField.hamiltonian(LIB.H0)), st_)
    assert np.max(np.abs(fr + np.pi / L * np.cos(np.pi * y / L))) < 1e-10
    assert np.max(np.abs(fs)) == 0.0


def test_single_field_kdv_field(smooth_state):
    field = EvoField.hamiltonian(LIB.Hres)
    assert field.r == -r(1) - r(3) / 6 - r() * r(1) * 3 / 2
    fr, _ = evaluate(compile_field(field), smooth_state)
    d = smooth_state.derivative
    u = smooth_state.r
    assert rel(fr, -d(u) - d(u, 3) / 6 - 1.5 * u * d(u)) < 1e-12


def test_zero_field_plan(smooth_state):
    plan = compile_field(EvoField(DiffPoly(), DiffPoly()))
    assert plan.count("zero") == 1
    assert all(np.all(out == 0) for out in evaluate(plan, smooth_state))


def test_common_subexpressions_are_shared():
    b = PlanBuilder()
    first = b.poly(r() * r(1) + r(1) ** 2)
    again = b.poly(r(1) ** 2 + r() * r(1))
    assert first == again
    assert b.deriv(b.deriv(b.input("r"), 1), 2) == b.deriv(b.input("r"), 3)


def test_plan_json_roundtrip(smooth_state):
    plan = compile_field(EvoField.hamiltonian(normalize_order2(with_order3=False).G1))
    again = EvalPlan.from_json(plan.to_json())
    assert again.dumps() == plan.dumps()
    for a, b in zip(evaluate(plan, smooth_state), evaluate(again, smooth_state)):
        assert np.array_equal(a, b)


# -- algebra commutes with compilation ------------------------------------------------

polys = diffpolys(min_order=-1, max_order=3, max_degree=3, max_terms=3)


@given(polys, polys)
def test_compile_is_additive(smooth_state, p, q):
    (a,) = evaluate(compile_poly(p), smooth_state)
    (b,) = evaluate(compile_poly(q), smooth_state)
    total = p + q
    (c,) = evaluate(compile_poly(total), smooth_state) if not total.is_zero() else (np.zeros_like(a),)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    assert np.max(np.abs(c - (a + b))) <= 1e-12 * scale


@given(diffpolys(min_order=0, max_order=3, max_degree=3, max_terms=2))
def test_derivative_node_matches_spectral_derivative(wide_state, p):
    (val,) = evaluate(compile_poly(p), wide_state)
    (dval,) = evaluate(compile_poly(total_derivative(p)), wide_state)
    spectral = wide_state.derivative(val)
    assert np.max(np.abs(dval - spectral)) <= 1e-8 * max(np.max(np.abs(dval)), 1.0)


def test_atom_lowers_to_antiderivative(smooth_state):
    (val,) = evaluate(compile_poly(dinv(s() ** 2)), smooth_state)
    expected = smooth_state.antiderivative(smooth_state.s ** 2)
    assert np.max(np.abs(val - expected)) < 1e-13


# -- maps ------------------------------------------------------------------------------

def test_zero_eps_map_is_identity(smooth_state):
    G1 = normalize_order2(with_order3=False).G1
    m = compile_map({1: EvoField.hamiltonian(G1)}, 0.0)
    fr, fs = evaluate(m.forward, smooth_state)
    assert np.array_equal(fr, smooth_state.r) and np.array_equal(fs, smooth_state.s)
    v = smooth_state.scale(0.5)
    vr, vs = evaluate(m.jacobian_action, smooth_state, v)
    assert np.array_equal(vr, v.r) and np.array_equal(vs, v.s)


def test_order1_map_displacement():
    X = EvoField.hamiltonian(normalize_order2(with_order3=False).G1)
    assert X.r == (r(1) * s(-1) + r() * s()) / 4 + s() ** 2 / 8 + s(2) / 12


@pytest.mark.parametrize("kind", ["nf", "hz"])
def test_jacobian_matches_finite_differences(smooth_state, kind):
    rng = np.random.default_rng(7)
    y = smooth_state.y
    bump = np.exp(-((y - rng.uniform(-5, 5)) ** 2) / 8)
    v = smooth_state.with_fields(bump * np.cos(y / 3), bump * np.sin(y / 2))
    h = 1e-5
    for m in build_maps(0.1, kind):
        jr, js = evaluate(m.jacobian_action, smooth_state, v)
        plus = evaluate(m.forward, smooth_state + v.scale(h))
        minus = evaluate(m.forward, smooth_state - v.scale(h))
        fd = [(p - q) / (2 * h) for p, q in zip(plus, minus)]
        assert rel(jr, fd[0]) < 1e-6 and rel(js, fd[1]) < 1e-6


# -- input validation ----------------------------------------------------------------------

def test_missing_tangent_rejected(smooth_state):
    m = build_maps(0.1, "hz")[0]
    with pytest.raises(ShapeMismatch):
        evaluate(m.jacobian_action, smooth_state)


def test_length_mismatch_rejected(smooth_state):
    plan = compile_field(EvoField.hamiltonian(Functional(r() ** 3)))

    class Broken:
        r = smooth_state.r
        s = smooth_state.s[:-1]
        derivative = smooth_state.derivative
        antiderivative = smooth_state.antiderivative

    with pytest.raises(ShapeMismatch):
        evaluate(plan, Broken())


@given(st.sampled_from(["r", "s"]))
def test_identity_plan(smooth_state, name):
    b = PlanBuilder()
    plan = b.build([b.input("r"), b.input("s")], ["r", "s"])
    out = dict(zip(plan.names, evaluate(plan, smooth_state)))
    assert np.array_equal(out[name], getattr(smooth_state, name))
