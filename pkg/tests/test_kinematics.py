import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fingerexo.errors import GeometryDegenerate, ImplausibleLength, InfeasiblePose, NonConvergence, PreconditionError
from fingerexo.geometry import IDX, FingerPose, LoopModel, MeasuredState, load_geometry
from fingerexo.kinematics import (CalibrationResult, SolveOptions, analytic_forward_batch, branch_signs,
                                  calibration_stroke, newton, place_at_calibration, reference_state,
                                  require_plausible, solve_calibration, solve_fk_analytic, solve_fk_batch,
                                  solve_fk_numeric, solve_ik, solve_ik_grid, solve_ik_path, state_residual)

from conftest import LOOSE
from oracle import IK, solve_ik as oracle_ik, wrap

GEOM = load_geometry("index")
poses = st.tuples(st.floats(0.0, 80.0), st.floats(0.0, 90.0))


def test_reference_state_is_consistent(index_geom):
    ref = reference_state(index_geom)
    assert state_residual(index_geom, ref) < 1e-9
    assert ref.pose.degrees() == pytest.approx((40.0, 45.0))


@given(poses)
def test_ik_then_analytic_fk_roundtrip(p):
    state = solve_ik(GEOM, FingerPose.from_degrees(*p), LOOSE)
    back = solve_fk_analytic(GEOM, state.meas)
    assert wrap(back.pose.q_o1 - state.pose.q_o1) == pytest.approx(0.0, abs=1e-9)
    assert wrap(back.pose.q_o2 - state.pose.q_o2) == pytest.approx(0.0, abs=1e-9)
    assert back.passive.c_1 == pytest.approx(state.passive.c_1, abs=1e-8)
    assert back.passive.c_2 == pytest.approx(state.passive.c_2, abs=1e-8)


@given(poses)
def test_ik_residual_and_oracle(p):
    state = solve_ik(GEOM, FingerPose.from_degrees(*p), LOOSE)
    z = state.vector(GEOM.l_LM)
    assert np.max(np.abs(LoopModel(GEOM).residual(z))) < 1e-9
    # an independent root finder started nearby lands on the same solution
    guess = z.copy()
    guess[list(IK)] += 0.02
    zo, ok = oracle_ik(GEOM, z[IDX["q_o1"]], z[IDX["q_o2"]], guess)
    assert ok
    for k in IK:
        assert wrap(zo[k] - z[k]) == pytest.approx(0.0, abs=1e-8)


@given(poses)
def test_numeric_fk_matches_analytic(p):
    state = solve_ik(GEOM, FingerPose.from_degrees(*p), LOOSE)
    a = solve_fk_analytic(GEOM, state.meas).vector(GEOM.l_LM)
    n = solve_fk_numeric(GEOM, state.meas, LOOSE).vector(GEOM.l_LM)
    for name in ("q_o1", "q_o2", "q_K", "q_D", "q_G", "q_N"):
        assert wrap(a[IDX[name]] - n[IDX[name]]) == pytest.approx(0.0, abs=1e-8)
    for name in ("c_1", "c_2"):
        assert a[IDX[name]] == pytest.approx(n[IDX[name]], abs=1e-8)


def test_branch_signs_constant_over_workspace(index_geom):
    grid = solve_ik_grid(index_geom, np.radians(np.arange(0, 81, 5.0)), np.radians(np.arange(0, 91, 5.0)))
    sk, sd = branch_signs(index_geom, grid.states)
    assert np.all(sk == index_geom.branch_K)
    assert np.all(sd == index_geom.branch_D)


def test_pose_outside_box_is_precondition(index_geom):
    with pytest.raises(PreconditionError):
        solve_ik(index_geom, FingerPose.from_degrees(120.0, 10.0))


def test_bounds_violation_reported(index_geom):
    # tightened slider bound that the mid pose exceeds
    opts = SolveOptions(c_1max=5.0)
    with pytest.raises(InfeasiblePose) as exc:
        solve_ik(index_geom, FingerPose.from_degrees(40.0, 45.0), opts)
    assert exc.value.bound == "c_1<=5"


def test_newton_reports_nonconvergence(index_geom):
    z0 = reference_state(index_geom).vector(index_geom.l_LM)
    z0[IDX["q_o1"]] += 0.5
    z, ok, iters, norm = newton(LoopModel(index_geom), z0, ("l_x", "q_B", "q_K", "q_D", "q_G", "q_N", "c_1", "c_2"),
                                SolveOptions(max_iterations=1))
    assert not ok and iters == 1 and norm > 1e-9


def test_fk_outside_sensor_range(index_geom):
    with pytest.raises(PreconditionError):
        solve_fk_numeric(index_geom, MeasuredState(60.0, 4.0))


def test_analytic_fk_names_failing_triangle(index_geom):
    # a stroke far beyond the reach of the actuator triangle
    with pytest.raises(GeometryDegenerate) as exc:
        solve_fk_analytic(index_geom, MeasuredState(500.0, 4.0))
    assert exc.value.triangle == "AKN"


def test_analytic_batch_flags_failures(index_geom):
    z, failed = analytic_forward_batch(index_geom, np.array([10.0, 500.0]), np.array([4.2, 4.2]))
    assert failed[0] == "" and failed[1] == "AKN"


def test_options_validation():
    with pytest.raises(PreconditionError):
        SolveOptions(tolerance=0)
    with pytest.raises(PreconditionError):
        SolveOptions(damping=1.5)


def test_grid_is_fully_converged(index_geom):
    q1 = np.radians(np.arange(0, 81, 10.0))
    q2 = np.radians(np.arange(0, 91, 10.0))
    grid = solve_ik_grid(index_geom, q1, q2)
    assert grid.converged.all()
    assert grid.states.shape == (9, 10, 11)
    assert np.max(grid.residual) < 1e-9
    # stroke grows with flexion of either joint
    lx = grid.column("l_x")
    assert np.all(np.diff(lx, axis=0) > 0) and np.all(np.diff(lx, axis=1) > 0)


def test_empty_grid(index_geom):
    grid = solve_ik_grid(index_geom, np.array([]), np.radians([10.0]))
    assert grid.states.shape == (0, 1, 11)


def test_fk_batch_matches_single(index_geom):
    states = solve_ik_path(index_geom, [FingerPose.from_degrees(a, b) for a, b in ((10, 20), (40, 45), (60, 60))])
    lx = np.array([s.meas.l_x for s in states])
    qb = np.array([s.meas.q_B for s in states])
    z, ok = solve_fk_batch(index_geom, lx, qb)
    assert ok.all()
    for s, row in zip(states, z):
        assert row[IDX["q_o1"]] == pytest.approx(s.pose.q_o1, abs=1e-9)


@pytest.mark.parametrize("true_length", [45.0, 50.0, 55.0])
def test_calibration_recovers_length(index_geom, true_length):
    stroke = calibration_stroke(index_geom)
    meas = place_at_calibration(dataclasses.replace(index_geom, l_LM=true_length), stroke, 40.0).meas
    res = solve_calibration(index_geom, meas, 40.0)
    assert isinstance(res, CalibrationResult)
    assert res.l_LM == pytest.approx(true_length, abs=1e-6)
    assert res.plausible


def test_implausible_length_flagged(index_geom):
    res = CalibrationResult(90.0, 3, 1e-12, False, reference_state(index_geom), "implausible phalanx length")
    with pytest.raises(ImplausibleLength):
        require_plausible(res)


def test_calibration_nonconvergence(index_geom):
    with pytest.raises(NonConvergence):
        solve_calibration(index_geom, MeasuredState(30.0, 4.0), 40.0, SolveOptions(max_iterations=1))
