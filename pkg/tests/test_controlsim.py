import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fingerexo.errors import ParseError, PreconditionError
from fingerexo.controlsim import (MAX_SPEED, PWM_DEAD_ZONE, ActuatorPlant, ControllerGains, ForceController,
                                  PositionController, Scenario, TemperatureFilterState, emg_reference_pipeline,
                                  plant_step, read_emg_csv, settling_time, simulate_force, simulate_position,
                                  temperature_filter_tick)

HEADER = "t," + ",".join(f"ch{i}" for i in range(1, 9))


def test_plant_dead_zone_and_speed():
    plant = ActuatorPlant()
    assert plant.velocity(PWM_DEAD_ZONE) == 0.0
    assert plant.velocity(-30.0) == 0.0
    assert plant.velocity(100.0) == pytest.approx(MAX_SPEED)
    assert plant.velocity(-250.0) == pytest.approx(-MAX_SPEED)
    assert plant.velocity(68.6) == pytest.approx(MAX_SPEED / 2)


def test_plant_respects_stroke():
    plant = ActuatorPlant(position=49.99)
    for _ in range(100):
        plant_step(plant, 100.0)
    assert plant.position == 50.0
    plant = ActuatorPlant(position=0.01)
    plant_step(plant, -100.0)
    assert plant.position == 0.0
    with pytest.raises(PreconditionError):
        plant_step(plant, 50.0, dt=0.0)


def test_position_controller_deadband():
    ctrl = PositionController()
    F_thr, F_cont, out = ctrl.tick(10.1, 10.0)
    assert F_thr == 0.0 and out == pytest.approx(F_cont)
    F_thr, _, _ = PositionController().tick(10.0, 12.0)
    assert F_thr == -40.0


def test_position_integral_is_clamped():
    ctrl = PositionController(ControllerGains(K_P=0.0, K_I=5.0))
    for _ in range(100000):
        _, F_cont, _ = ctrl.tick(50.0, 0.0, dt=1e-3)
    assert F_cont == pytest.approx(100.0)


def test_negative_gain_rejected():
    with pytest.raises(PreconditionError):
        ControllerGains(K_P=-1.0)


@given(st.lists(st.floats(-150, 150), min_size=1, max_size=300))
def test_temperature_filter_bounds(demands):
    state = TemperatureFilterState()
    for d in demands:
        out = temperature_filter_tick(state, d, dt=0.01)
        assert 60.0 <= state.limit <= 90.0
        assert abs(out) <= max(abs(d) if abs(d) < 60.0 else state.limit + 1e-12, 0.0) + 1e-12
        assert out == 0.0 or math.copysign(1, out) == math.copysign(1, d)
        if abs(d) < 60.0:
            assert out == d


def test_temperature_filter_decay_and_recovery():
    state = TemperatureFilterState()
    assert temperature_filter_tick(state, 100.0, dt=0.1) == pytest.approx(87.0)
    for _ in range(20):
        temperature_filter_tick(state, 100.0, dt=0.1)
    assert state.limit == 60.0
    for _ in range(100):
        temperature_filter_tick(state, 10.0, dt=0.1)
    assert state.limit == 90.0


def test_step_response_settles():
    ticks = simulate_position(Scenario(kind="step", amplitude=25.0, duration=5.0))
    assert settling_time(ticks, 2.0) < 3.0
    assert abs(ticks[-1].ref - ticks[-1].pos) < 0.5


def test_ramp_tracking():
    ticks = simulate_position(Scenario(kind="ramp", rate=10.0, ramp_end=45.0, duration=6.0))
    assert max(abs(tk.ref - tk.pos) for tk in ticks if tk.t > 0.5) < 2.0


def test_settling_time_never():
    ticks = simulate_position(Scenario(kind="step", amplitude=25.0, duration=0.1))
    assert settling_time(ticks, 0.01) == math.inf


def test_unknown_reference_kind():
    with pytest.raises(PreconditionError):
        Scenario(kind="sine").reference(0.0)


@pytest.mark.parametrize("push, direction", [(2.0, 1), (-2.0, -1)])
def test_backdrive_follows_user(push, direction):
    log = simulate_force(lambda t, p: 0.0, lambda t, p: push, duration=1.0, start=25.0)
    assert (log["pos"][-1] - 25.0) * direction > 5.0


def test_force_loop_error_decreases():
    # user modeled as a spring around 20 mm, desired reading 1 N
    log = simulate_force(lambda t, p: 1.0, lambda t, p: 0.8 * (20.0 - p), duration=3.0, start=25.0)
    early = np.abs(log["F_e"][:100]).mean()
    late = np.abs(log["F_e"][-500:]).mean()
    assert late < 0.2 * early


def test_stiffer_virtual_wall_penetrates_less():
    def penetration(K):
        log = simulate_force(lambda t, p: K * max(p - 30.0, 0.0), lambda t, p: 3.0, duration=4.0, start=25.0)
        return log["pos"][-1] - 30.0
    soft, stiff = penetration(0.5), penetration(2.0)
    assert soft > stiff > 0
    assert soft == pytest.approx(3.0 / 0.5, rel=0.05)
    assert stiff == pytest.approx(3.0 / 2.0, rel=0.05)


def test_force_controller_zero_desired_is_backdrive():
    ctrl = ForceController(ControllerGains(K_P=8.0, K_I=0.0))
    assert ctrl.tick(0.0, 1.0) == pytest.approx(8.0 + 40.0)
    assert ForceController().tick(0.0, 0.01) == pytest.approx(8.0 * 0.01 + 20.0 * 0.01 * 1e-3)


def test_read_emg_csv_roundtrip():
    text = HEADER + "\n0,1,2,3,4,5,6,7,8\n0.001,1,1,1,1,1,1,1,1\n"
    t, ch = read_emg_csv(text)
    assert t.tolist() == [0.0, 0.001]
    assert ch.shape == (2, 8) and ch[0, 7] == 8.0


@pytest.mark.parametrize("text, row", [
    ("t,a\n0,1\n", 1),
    (HEADER + "\n0,1,2\n", 2),
    (HEADER + "\n0,1,2,3,4,5,6,7,8\n0,1,x,3,4,5,6,7,8\n", 3),
    ("", 0),
])
def test_read_emg_csv_errors(text, row):
    with pytest.raises(ParseError) as exc:
        read_emg_csv(text)
    assert exc.value.row == row


def test_emg_pipeline_scaling():
    rng = np.random.default_rng(3)
    t = np.arange(0, 2, 1e-3)
    envelope = np.where(t > 1.0, 1.0, 0.1)
    ch = rng.normal(size=(len(t), 8)) * envelope[:, None]
    W = np.zeros((8, 3))
    W[0, 0] = W[1, 1] = W[2, 2] = 1.0
    refs = emg_reference_pipeline(t, ch, W)
    assert refs.shape == (len(t), 4)
    assert np.allclose(refs.max(axis=0), 50.0)
    assert refs.min() >= 0.0
    assert np.array_equal(refs[:, 3], refs[:, 2])
    assert refs[t > 1.5, 0].mean() > 3 * refs[(t > 0.5) & (t < 1.0), 0].mean()


def test_emg_pipeline_rejects_bad_shape():
    with pytest.raises(PreconditionError):
        emg_reference_pipeline(np.arange(3.0), np.zeros((3, 7)), np.zeros((7, 3)))
