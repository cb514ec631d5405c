import math
import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[2]))

from freqsynth.errors import ContractViolation, ParameterError
from freqsynth.grid_model import (
    F,
    G,
    L,
    P,
    GridModel,
    GridParams,
    StateVec,
    build_matrices,
    loss_to_w,
    step_loss,
    zero_controller,
)


def test_matrix_entries_match_table_values(uni_params):
    m = build_matrices(uni_params)
    A = m.A
    assert A[F, F] == pytest.approx(-0.125)
    assert A[F, P] == pytest.approx(0.125)
    assert A[G, F] == pytest.approx(-2.0)
    assert A[G, G] == pytest.approx(-0.4)
    assert A[L, F] == pytest.approx(-0.333333, abs=1e-6)
    assert A[L, G] == pytest.approx(0.0166667, abs=1e-7)
    assert A[L, L] == pytest.approx(-0.0833333, abs=1e-7)
    assert A[P, L] == pytest.approx(2.0)
    assert A[P, P] == pytest.approx(-2.0)
    assert np.count_nonzero(A) == 9
    assert m.Bw[F] == pytest.approx(-0.125)
    assert m.B[F] == pytest.approx(3.6 / 8)
    assert np.count_nonzero(m.B) == 1 and np.count_nonzero(m.Bw) == 1


def test_zero_gain_means_no_input_direction(uni_params):
    m = build_matrices(uni_params.without_ev())
    assert not np.any(m.B)


def test_system_matrix_is_hurwitz(bi_params):
    eig = np.linalg.eigvals(build_matrices(bi_params).A)
    assert np.all(eig.real < -1e-9)


@pytest.mark.parametrize("field", ["t_g", "t_t", "t_1", "t_2", "t_ev", "h", "d"])
def test_non_positive_time_constants_rejected(field):
    with pytest.raises(ParameterError):
        GridParams(**{field: 0.0})


def test_negative_counts_and_gains_rejected():
    with pytest.raises(ParameterError):
        GridParams(n_ev=-1)
    with pytest.raises(ParameterError):
        GridParams(k_ev=-0.1)
    with pytest.raises(ParameterError):
        GridParams(deadband_hz=-0.01)
    with pytest.raises(ParameterError):
        GridParams.for_mode("tri")


def test_mode_defaults():
    assert GridParams.for_mode("uni").k_ev == 3.6
    assert GridParams.for_mode("bi").k_ev == 7.2
    assert GridParams.for_mode("bi").p_av == 0.056


def test_default_loss_maps_to_hz_scaled_disturbance(uni_params):
    assert loss_to_w(2000.0, uni_params) == pytest.approx(4.8)
    assert loss_to_w(0.0, uni_params) == 0.0


def test_steady_state_examples(uni_params):
    model = GridModel(uni_params)
    zero = model.steady_state(0.0, 0.0)
    assert np.allclose(zero, 0.0)
    assert zero.absolute_hz() == pytest.approx(50.0)

    no_ev = model.steady_state(0.0, 4.8)
    assert no_ev.f == pytest.approx(-0.8)
    assert no_ev.absolute_hz() == pytest.approx(49.2)

    full = model.steady_state(1.0, 4.8)
    assert full.f == pytest.approx(-0.2)
    assert full.absolute_hz() == pytest.approx(49.8)
    # governor, lead-lag and turbine settle at the droop value
    for v in (full.g, full.l, full.p):
        assert v == pytest.approx(-5.0 * full.f)


def test_f_row_balances_at_equilibrium(bi_params):
    model = GridModel(bi_params)
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = float(rng.uniform(0, 1))
        w = float(rng.uniform(0, 6))
        x = model.steady_state(u, w)
        assert abs(x.p + bi_params.k_ev * u - w - bi_params.d * x.f) < 1e-9


def test_step_keeps_origin_at_rest(bi_model):
    for tau in (0.01, 0.25, 5.0):
        assert np.allclose(bi_model.step(StateVec(), 0.0, 0.0, tau), 0.0)


def test_step_from_steady_state_stays_there(bi_model):
    x_star = bi_model.steady_state(0.4, 4.8)
    x = bi_model.step(x_star, 0.4, 4.8, 100.0)
    assert np.max(np.abs(np.subtract(x, x_star))) < 1e-9


def test_long_step_converges_to_steady_state(bi_model):
    x = bi_model.step(StateVec(), 0.0, 4.8, 1000.0)
    assert np.max(np.abs(np.subtract(x, bi_model.steady_state(0.0, 4.8)))) < 1e-6


def test_exact_and_rk4_agree(bi_model):
    rng = np.random.default_rng(7)
    for _ in range(25):
        x = rng.uniform(-1, 1, size=4)
        u = float(rng.uniform(0, 1))
        w = float(rng.uniform(0, 5))
        exact = np.array(bi_model.step(x, u, w, 0.25, method="exact"))
        rk4 = np.array(bi_model.step(x, u, w, 0.25, method="rk4"))
        assert np.max(np.abs(exact - rk4)) < 1e-6


def test_superposition(bi_model):
    rng = np.random.default_rng(11)
    base = np.array(bi_model.step(np.zeros(4), 0.0, 0.0, 0.25))
    for _ in range(25):
        x1, x2 = rng.uniform(-1, 1, size=(2, 4))
        u1, u2 = rng.uniform(0, 0.5, size=2)
        w1, w2 = rng.uniform(0, 3, size=2)
        both = np.array(bi_model.step(x1 + x2, u1 + u2, w1 + w2, 0.25)) - base
        one = np.array(bi_model.step(x1, u1, w1, 0.25)) - base
        two = np.array(bi_model.step(x2, u2, w2, 0.25)) - base
        assert np.max(np.abs(both - (one + two))) < 1e-9


def test_step_batch_matches_step(bi_model):
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, size=(10, 4))
    u = rng.uniform(0, 1, size=10)
    batch = bi_model.step_batch(X, u, 4.8, 0.25)
    for k in range(10):
        assert np.allclose(batch[k], bi_model.step(X[k], float(u[k]), 4.8, 0.25))


def test_step_rejects_bad_arguments(bi_model):
    with pytest.raises(ContractViolation):
        bi_model.step(StateVec(), 1.5, 0.0, 0.25)
    with pytest.raises(ParameterError):
        bi_model.step(StateVec(), 0.5, 0.0, 0.0)
    with pytest.raises(ParameterError):
        bi_model.step(StateVec(), 0.5, 0.0, 0.25, method="euler")


def test_discretisation_is_cached(bi_model):
    assert bi_model.discretize(0.25) is bi_model.discretize(0.25)


def test_zero_controller_without_loss_gives_flat_trace(bi_model):
    trace = bi_model.simulate(StateVec(), zero_controller, step_loss(0.0), 10.0, 0.25)
    assert len(trace) == 41
    assert np.allclose(trace.x, 0.0)
    assert np.allclose(trace.f_hz, 50.0)
    assert set(trace.phase) == {"none"}


@pytest.mark.parametrize("horizon,tau", [(10.0, 0.25), (1.0, 0.3), (0.25, 0.25), (7.0, 0.01)])
def test_trace_length(bi_model, horizon, tau):
    trace = bi_model.simulate(StateVec(), zero_controller, step_loss(0.0), horizon, tau)
    assert len(trace) == math.floor(horizon / tau + 1e-9) + 1
    assert trace.t[1] - trace.t[0] == pytest.approx(tau)


def test_simulate_rejects_short_horizon(bi_model):
    with pytest.raises(ContractViolation):
        bi_model.simulate(StateVec(), zero_controller, step_loss(0.0), 0.1, 0.25)


def test_simulate_rejects_out_of_range_controller(bi_model):
    with pytest.raises(ContractViolation):
        bi_model.simulate(StateVec(), lambda t, x: 1.2, step_loss(0.0), 1.0, 0.25)


def test_no_ev_step_loss_breaches_containment(uni_params):
    model = GridModel(uni_params.without_ev())
    trace = model.simulate(StateVec(), zero_controller, step_loss(4.8), 120.0, 0.01)
    assert trace.x[:, F].min() <= -0.8
    assert trace.f_hz.min() < 49.2
    # the undershoot recovers towards the steady state
    assert trace.f_hz[-1] == pytest.approx(49.2, abs=0.02)


def test_controller_sees_held_state(bi_model):
    seen = []

    def controller(t, x):
        seen.append((t, x))
        return 0.5

    trace = bi_model.simulate(StateVec(), controller, step_loss(4.8), 1.0, 0.25)
    assert len(seen) == len(trace)
    assert all(isinstance(x, StateVec) for _, x in seen)
    assert np.allclose(trace.u, 0.5)
    assert np.allclose(trace.w, 4.8)
