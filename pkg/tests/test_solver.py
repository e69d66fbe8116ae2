import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from nfww.solver import (
    MODELS,
    BoundaryDecayViolation,
    CFLViolation,
    GridState,
    NonzeroMean,
    PhysicalParams,
    SimConfig,
    antiderivative_numeric,
    apply_transform,
    build_maps,
    cached_model,
    dump_state,
    evolve,
    fit_slope,
    grid,
    kdv_soliton_width,
    load_state,
    residual_sweep,
    roundtrip_error,
    sech2_pulse,
    to_physical,
    two_soliton_state,
)

L, N = 40.0, 1024


@pytest.fixture(scope="module")
def solitons():
    return two_soliton_state()


# -- antiderivative ----------------------------------------------------------------

def test_antiderivative_undoes_derivative():
    y = grid(L, N).y
    du = -2 * np.tanh(y) / np.cosh(y) ** 2
    assert np.max(np.abs(antiderivative_numeric(du, L) - sech2_pulse(y))) < 1e-8


def test_antiderivative_of_sech2_is_tanh():
    y = grid(L, N).y
    assert np.max(np.abs(antiderivative_numeric(sech2_pulse(y), L) - np.tanh(y))) < 1e-8


def test_trapezoid_variant_is_second_order():
    errs = []
    for n in (256, 512):
        y = grid(L, n).y
        errs.append(np.max(np.abs(antiderivative_numeric(sech2_pulse(y), L, "trapezoid") - np.tanh(y))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_fourier_variant_needs_zero_mean():
    y = grid(L, N).y
    with pytest.raises(NonzeroMean):
        antiderivative_numeric(sech2_pulse(y), L, "fourier")


def test_undecayed_data_warns():
    y = grid(L, N).y
    with pytest.warns(BoundaryDecayViolation):
        antiderivative_numeric(np.ones_like(y), L)


pulses = st.tuples(st.floats(-15, 15), st.floats(0.2, 2.0), st.floats(0.8, 3.0))


@given(pulses, pulses)
def test_antiderivative_is_skew(p, q):
    g = grid(L, N)
    u, v = sech2_pulse(g.y, *p), sech2_pulse(g.y, *q) * np.cos(g.y)
    assert abs(g.inner(g.antiderivative(u), v) + g.inner(u, g.antiderivative(v))) < 1e-8


# -- evolution ------------------------------------------------------------------------

def test_zero_data_stays_zero():
    traj = evolve(GridState.zeros(L, 256), SimConfig(eps=0.1, model="boussinesq", T_final=1.0))
    assert all(s.max_norm() == 0.0 for s in traj.states)


def fitted_soliton(amp, eps):
    """Width and speed making ``amp sech^2(y / w)`` a travelling wave of the compiled flow."""
    model = cached_model("nf", eps, L, N, None, 1)
    g = grid(L, N)

    def mismatch(width):
        u = sech2_pulse(g.y, 0.0, amp, width)
        fr, _ = model.rhs(GridState(L, N, u, np.zeros(N)))
        du = g.derivative(u)
        c = -g.inner(fr, du) / g.inner(du, du)
        return fr + c * du, c

    # smooth least-squares objective; the max-norm is reported at the optimum
    best = minimize_scalar(lambda w: g.inner(*(2 * [mismatch(w)[0]])), bounds=(0.5, 6.0),
                           method="bounded", options={"xatol": 1e-10})
    defect, speed = mismatch(best.x)
    return best.x, speed, float(np.max(np.abs(defect)))


def test_soliton_ansatz_fit_matches_closed_form():
    amp, eps = 0.5, 0.1
    width, speed, res = fitted_soliton(amp, eps)
    assert res < 1e-8
    assert width == pytest.approx(kdv_soliton_width(amp), rel=1e-6)
    assert speed == pytest.approx(1 + eps * amp / 2, rel=1e-8)


def test_soliton_translates_without_distortion():
    amp, eps = 0.5, 0.1
    width, speed, _ = fitted_soliton(amp, eps)
    y = grid(L, N).y
    start = GridState(L, N, sech2_pulse(y, -10.0, amp, width), np.zeros(N))
    traj = evolve(start, SimConfig(eps=eps, model="nf", T_final=20.0, n_out=4, order=1))
    err = max(np.max(np.abs(s.r - sech2_pulse(y, -10.0 + speed * t, amp, width)))
              for t, s in zip(traj.times, traj.states))
    assert err < 1e-4


@pytest.mark.parametrize("model", MODELS)
def test_hamiltonian_is_conserved(solitons, model):
    traj = evolve(solitons, SimConfig(eps=0.1, model=model, T_final=20.0, n_out=10))
    assert traj.energy_drift < 1e-6


def test_normal_form_fields_decouple(solitons):
    lone = solitons.with_fields(solitons.r, np.zeros(N))
    traj = evolve(lone, SimConfig(eps=0.1, model="nf", T_final=20.0, n_out=5))
    assert max(np.max(np.abs(s.s)) for s in traj.states) == 0.0


def test_oversized_step_is_refused(solitons):
    with pytest.raises(CFLViolation):
        evolve(solitons, SimConfig(eps=0.1, model="boussinesq", T_final=1.0, dt=5.0))


def test_refinement_changes_little():
    reports = []
    for n in (1024, 2048):
        state = two_soliton_state(N=n)
        traj = evolve(state, SimConfig(eps=0.1, model="boussinesq", T_final=5.0, n_out=1))
        final = traj.final()
        g = final.grid
        reports.append([math.sqrt(g.inner(final.r, final.r)), math.sqrt(g.inner(final.s, final.s)),
                        traj.energies[-1]])
    assert np.max(np.abs(np.subtract(*reports))) < 1e-8


# -- maps ----------------------------------------------------------------------------------

def test_zero_eps_transform_is_identity(solitons):
    out = apply_transform(solitons, maps=build_maps(0.0, "nf"))
    assert np.array_equal(out.r, solitons.r) and np.array_equal(out.s, solitons.s)


def test_displacement_is_first_order(solitons):
    eps = [0.05, 0.1, 0.2]
    disp = [(apply_transform(solitons, maps=build_maps(e, "nf")) - solitons).max_norm() for e in eps]
    assert fit_slope(eps, disp) == pytest.approx(1.0, abs=0.1)


def test_inverse_maps_invert_to_third_order(solitons):
    eps = [0.05, 0.1, 0.2]
    errs = [roundtrip_error(solitons, e, "hz") for e in eps]
    assert fit_slope(eps, errs) >= 2.7


def test_hz_residual_is_third_order(solitons):
    rep = residual_sweep([0.04, 0.08, 0.16], solitons, "hz", residual_T=0.5, horizon=1.0)
    assert 2.5 <= rep.residual_slope <= 3.5


def test_sweep_is_independent_of_parallelism(solitons):
    kwargs = dict(residual_T=0.25, n_residual=2, horizon=0.25, n_closeness=2)
    serial = residual_sweep([0.04, 0.08, 0.16], solitons, "hz", workers=1, **kwargs).to_json()
    pooled = residual_sweep([0.04, 0.08, 0.16], solitons, "hz", workers=2, **kwargs).to_json()
    for rep in (serial, pooled):
        rep.pop("runtime")
    assert json.dumps(serial, sort_keys=True) == json.dumps(pooled, sort_keys=True)


# -- physical units and I/O ------------------------------------------------------------------

def test_equal_fields_carry_no_velocity():
    y = grid(L, 256).y
    u = sech2_pulse(y)
    prof = to_physical(GridState(L, 256, u, u), PhysicalParams())
    assert np.max(np.abs(prof.psi_x)) == 0.0


def test_opposite_fields_carry_no_elevation():
    y = grid(L, 256).y
    u = sech2_pulse(y)
    prof = to_physical(GridState(L, 256, u, -u), PhysicalParams())
    assert np.max(np.abs(prof.eta)) == 0.0


def test_unit_pulse_elevation():
    y = grid(L, 256).y
    prof = to_physical(GridState(L, 256, sech2_pulse(y), np.zeros(256)), PhysicalParams(0.1, 1.0, 9.81))
    assert np.max(prof.eta) == pytest.approx(0.01, rel=1e-12)


def test_state_dump_roundtrip(tmp_path, solitons):
    dump_state(solitons, tmp_path / "st", {"t": 0.0})
    back = load_state(tmp_path / "st")
    assert np.array_equal(back.r, solitons.r) and np.array_equal(back.s, solitons.s)
    assert json.loads((tmp_path / "st.json").read_text())["dtype"] == "<f8"


def test_trajectory_csv_layout(tmp_path, solitons):
    traj = evolve(solitons, SimConfig(eps=0.1, model="nf", T_final=1.0, n_out=2))
    traj.write_csv(tmp_path / "traj.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0].startswith("# model=nf, eps=0.1, L=40.0, N=1024, dt=")
    assert lines[2] == "t,norm_r,norm_s,hamiltonian"
    assert len(lines) == 3 + 3


def test_decay_check_flags_wide_data():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ok = GridState(L, 256, np.ones(256), np.zeros(256)).check_decay()
    assert not ok and caught
