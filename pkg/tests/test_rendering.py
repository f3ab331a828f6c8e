import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from fingerexo.errors import (DegenerateK, DegeneratePassiveColumn, EmptySeries, PreconditionError,
                              RankDeficientMapping, RankDeficientNonactuated)
from fingerexo.differential import assemble_jacobian
from fingerexo.geometry import FingerPose, load_geometry
from fingerexo.kinematics import solve_ik
from fingerexo.rendering import (RenderSession, RenderTarget, StiffnessOptions, VirtualMapping,
                                 actuator_level_force, behavior_alignment, clamp_desired, displayed_impedance,
                                 estimate_joint_stiffness, feasible_projector, find_nonpassive_standard,
                                 finite_difference_impedance, joint_level_torques, normalized_virtual_impedance,
                                 project_pose, project_torques, random_spd, standard_and_nullspace_force,
                                 subspace_proxy)

from conftest import LOOSE

GEOM = load_geometry("index")
# feasible line tau_2 = 0.6761 tau_1, i.e. j_passive orthogonal to (1, 0.6761)
LINE = (np.array([1.0, 0.0]), np.array([0.6761, -1.0]))
vec2 = st.tuples(st.floats(-10, 10), st.floats(-10, 10)).map(np.array)


def test_clamp_examples():
    assert clamp_desired(20.0, 30.0) == 20.0
    np.testing.assert_allclose(clamp_desired(np.radians([35, 25]), np.radians([30, 30])), np.radians([30, 25]))
    assert clamp_desired(30.0, 30.0) == 30.0
    assert clamp_desired(20.0, 30.0, direction=-1) == 30.0


def test_actuator_level_force():
    assert actuator_level_force(RenderTarget(l_x_lim=30.0, K_ac=2.0), 20.0) == 0.0
    assert actuator_level_force(RenderTarget(l_x_lim=30.0, K_ac=2.0), 33.0) == pytest.approx(-6.0)
    with pytest.raises(PreconditionError):
        actuator_level_force(RenderTarget(mode="joint"), 10.0)


def test_joint_level_torques():
    tau = joint_level_torques(RenderTarget(mode="joint"), np.radians([35.0, 25.0]))
    assert tau[0] == pytest.approx(-100.0 * math.radians(5.0))
    assert tau[1] == 0.0


def test_bad_target():
    with pytest.raises(PreconditionError):
        RenderTarget(mode="wall")
    with pytest.raises(PreconditionError):
        RenderTarget(K_ac=-1.0)


def test_projection_checkpoint():
    res = project_torques(LINE, [-0.36652, -0.19199])
    np.testing.assert_allclose(res.tau_star, [-0.34062, -0.23029], atol=5e-4)
    assert res.F_a == pytest.approx(res.tau_star[0])


def test_feasible_torque_is_fixed_point():
    tau = np.array([-1.0, -0.6761])
    np.testing.assert_allclose(project_torques(LINE, tau).tau_star, tau, atol=1e-12)


@given(vec2)
def test_projection_idempotent_and_feasible(tau):
    once = project_torques(LINE, tau).tau_star
    twice = project_torques(LINE, once).tau_star
    np.testing.assert_allclose(twice, once, atol=1e-12)
    assert abs(LINE[1] @ once) <= 1e-10 * max(np.linalg.norm(once), 1e-300) + 1e-300
    # residual is orthogonal to the feasible line
    assert abs((tau - once) @ np.array([1.0, 0.6761])) < 1e-10 * max(1.0, np.linalg.norm(tau))


def test_projection_minimality_against_samples(rng):
    d = np.array([1.0, 0.6761])
    for _ in range(10):
        tau = rng.normal(size=2)
        star = project_torques(LINE, tau).tau_star
        others = rng.uniform(-5, 5, size=(1000, 1)) * d
        assert np.all(np.linalg.norm(tau - star) <= np.linalg.norm(tau - others, axis=1) + 1e-15)


def test_degenerate_passive_column():
    with pytest.raises(DegeneratePassiveColumn):
        feasible_projector([0.0, 0.0])


def test_projection_on_mechanism(index_geom):
    jac = assemble_jacobian(index_geom, solve_ik(index_geom, FingerPose.from_degrees(40, 45), LOOSE))
    res = project_torques(jac, [-0.36652, -0.19199])
    assert abs(jac.j_passive @ res.tau_star) < 1e-12


def test_pose_projection_synthetic():
    res = project_pose((np.array([1.0, 1.0]), np.array([1.0, -1.0])), np.eye(2), [0.0, 0.0], [2.0, 0.0])
    np.testing.assert_allclose(res.q_star, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(res.tau_star, [1.0, 1.0], atol=1e-12)


def test_pose_projection_matches_constrained_minimiser(rng):
    for _ in range(5):
        jp = rng.normal(size=2)
        Ks = np.diag(rng.uniform(0.5, 3.0, size=2))
        q_o, q_d = rng.normal(size=2), rng.normal(size=2)
        res = project_pose((np.ones(2), jp), Ks, q_o, q_d)
        cons = {"type": "eq", "fun": lambda q: jp @ Ks @ (q - q_o)}
        ref = minimize(lambda q: np.sum((q - q_d) ** 2), q_d, constraints=[cons], method="SLSQP",
                       options={"ftol": 1e-14})
        np.testing.assert_allclose(res.q_star, ref.x, atol=1e-6)
        assert abs(jp @ res.tau_star) <= 1e-10 * np.linalg.norm(res.tau_star) + 1e-15


def test_pose_projection_zero_displacement():
    res = project_pose(LINE, np.eye(2), [0.3, 0.4], [0.3, 0.4])
    np.testing.assert_allclose(res.q_star, [0.3, 0.4])
    np.testing.assert_allclose(res.tau_star, 0.0)


def test_degenerate_k():
    with pytest.raises(DegenerateK):
        project_pose(LINE, np.zeros((2, 2)), [0, 0], [1, 0])


def test_alignment_examples():
    q = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert behavior_alignment(np.array([[2.0, 2.0], [0, 0]]), q)[0] == pytest.approx(1.0)
    assert behavior_alignment(np.array([[-2.0, -2.0], [0, 0]]), q)[0] == pytest.approx(-1.0)
    assert np.isnan(behavior_alignment(np.array([[0.0, 0.0], [0, 0]]), q)[0])
    with pytest.raises(PreconditionError):
        behavior_alignment(q[:1], q[:1])


def test_compliant_user_follows_proxy():
    # damped finger pushed past both joint limits and released; the estimator
    # learns the damping online while the proxy pulls the finger back
    damping = np.array([2.0, 1.5])
    q = np.radians([50.0, 55.0])
    session = RenderSession(RenderTarget(mode="joint"), method="proxy_pose")
    qs, q_stars, last = [], [], None
    for _ in range(60):
        jac = assemble_jacobian(GEOM, solve_ik(GEOM, FingerPose(*q), LOOSE))
        cmd = session.tick(jac, q, *(last or (None, None)))
        assert abs(jac.j_passive @ cmd.tau_star) <= 1e-10 * np.linalg.norm(cmd.tau_star) + 1e-15
        qs.append(q.copy())
        q_stars.append(cmd.q_star)
        qdot = cmd.tau_star / damping
        last = (cmd.tau_star, qdot)
        q = q + 0.05 * qdot
    assert np.all(q > 0)
    assert np.nanmean(behavior_alignment(np.array(q_stars), np.array(qs))) > 0.8
    np.testing.assert_allclose(session.estimator.value, damping, rtol=1e-6)


def test_subspace_examples(rng):
    J = rng.normal(size=(2, 2))
    v = np.array([0.3, -0.2])
    dq, _ = subspace_proxy(VirtualMapping(J, (0,)), J @ v)
    np.testing.assert_allclose(dq, v, atol=1e-12)
    dq, tau = subspace_proxy(VirtualMapping([[1.0], [1.0]], (0,)), [2.0, 0.0])
    assert dq[0] == pytest.approx(1.0) and tau[0] == pytest.approx(1.0)
    _, tau = subspace_proxy(VirtualMapping(J, (0,)), [0.0, 0.0])
    np.testing.assert_allclose(tau, 0.0)


def test_subspace_normal_equations(rng):
    for _ in range(50):
        J = rng.normal(size=(4, 3))
        dx = rng.normal(size=4)
        dq, _ = subspace_proxy(VirtualMapping(J, (0, 2)), dx)
        assert np.linalg.norm(J.T @ (dx - J @ dq)) <= 1e-10 * np.linalg.norm(J.T @ dx)


def test_subspace_rank_deficient():
    with pytest.raises(RankDeficientMapping):
        subspace_proxy(VirtualMapping([[1.0, 2.0], [2.0, 4.0]], (0,)), [1.0, 0.0])


def test_standard_and_nullspace_examples(rng):
    J = np.diag([2.0, 3.0])
    out = standard_and_nullspace_force(VirtualMapping(J, (0,)), [0.5, -1.0])
    np.testing.assert_allclose(out["standard"], out["nullspace"])
    # displacement entirely along the non-actuated column
    out = standard_and_nullspace_force(VirtualMapping(np.eye(2), (0,)), [0.0, 2.0])
    np.testing.assert_allclose(out["nullspace"], 0.0, atol=1e-15)
    # projected force has no component along the non-actuated columns
    J3 = rng.normal(size=(3, 2))
    vm = VirtualMapping(J3, (0,))
    f = vm.Z_x @ rng.normal(size=3)
    P = np.eye(3) - vm.J_n @ np.linalg.solve(vm.J_n.T @ vm.J_n, vm.J_n.T)
    assert abs(vm.J_n.T @ (P @ f)).max() < 1e-12


def test_nullspace_rank_deficient():
    vm = VirtualMapping(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0]]), (0,))
    with pytest.raises(RankDeficientNonactuated):
        standard_and_nullspace_force(vm, [1.0, 1.0])


def test_subspace_passivity_for_random_pd(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        act = tuple(sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)))
        vm = VirtualMapping(rng.normal(size=(2, n)), act, Z_q=random_spd(rng, len(act)))
        rep = displayed_impedance("subspace", vm)
        assert rep.passive and np.max(np.real(rep.eigenvalues)) <= 1e-12


def test_zero_device_impedance():
    vm = VirtualMapping(np.eye(2), (0,), Z_q=np.zeros((1, 1)))
    rep = displayed_impedance("subspace", vm)
    assert rep.passive and np.all(rep.matrix == 0)


def test_standard_method_can_be_active(rng):
    found = find_nonpassive_standard(rng)
    assert found is not None
    vm, rep = found
    assert not rep.passive
    assert np.all(np.diag(vm.Z_x) > 0)
    assert displayed_impedance("subspace", vm).passive


def test_proxy_impedances(index_geom):
    jac = assemble_jacobian(index_geom, solve_ik(index_geom, FingerPose.from_degrees(40, 45), LOOSE))
    Kc = np.diag([100.0, 100.0])
    assert displayed_impedance("proxy_torque", jac, Kc).matrix.shape == (1, 2)
    rep = displayed_impedance("proxy_pose", jac, Kc, K_stiff=np.eye(2))
    assert rep.eigenvalues.shape == (2,)
    with pytest.raises(PreconditionError):
        displayed_impedance("proxy_pose", jac, Kc)
    with pytest.raises(PreconditionError):
        displayed_impedance("magic", jac, Kc)


def test_normalized_virtual_impedance():
    Z = normalized_virtual_impedance([np.array([[3.0], [4.0]]), np.array([[0.0], [5.0]])])
    np.testing.assert_allclose(Z, np.eye(2) / 25.0)
    with pytest.raises(EmptySeries):
        normalized_virtual_impedance([])


def test_finite_difference_impedance():
    out = finite_difference_impedance([0.0, -2.0, -2.0, -5.0], [0.0, 1.0, 1.0, 2.0])
    assert out[0] == -2.0 and np.isnan(out[1]) and out[2] == -3.0


def test_stiffness_from_synthetic_series():
    t = np.arange(0, 1, 1e-3)
    qdot = np.column_stack([np.sin(5 * t) + 1.5, np.cos(3 * t) + 1.2])
    est = estimate_joint_stiffness(5.0 * qdot, qdot)
    np.testing.assert_allclose(np.diag(est.K_stiff), 5.0, atol=1e-6)
    assert not est.low_confidence


def test_stiffness_without_motion_is_guarded():
    est = estimate_joint_stiffness(np.full((100, 2), 50.0), np.zeros((100, 2)))
    np.testing.assert_allclose(np.diag(est.K_stiff), StiffnessOptions().K_max)
    assert est.low_confidence and est.guarded_fraction == 1.0
    with pytest.raises(EmptySeries):
        estimate_joint_stiffness([], [])


@given(st.integers(0, 2 ** 32 - 1))
def test_stiffness_stays_in_clamps_under_noise(seed):
    rng = np.random.default_rng(seed)
    qdot = rng.normal(scale=0.01, size=(200, 2))
    tau = rng.normal(scale=10.0, size=(200, 2))
    est = estimate_joint_stiffness(tau, qdot)
    o = StiffnessOptions()
    assert np.all((np.diag(est.K_stiff) >= o.K_min) & (np.diag(est.K_stiff) <= o.K_max))


def test_session_commands_are_feasible(index_geom):
    jac = assemble_jacobian(index_geom, solve_ik(index_geom, FingerPose.from_degrees(40, 45), LOOSE))
    q = np.radians([40.0, 45.0])
    for method in ("proxy_torque", "proxy_pose"):
        cmd = RenderSession(RenderTarget(mode="joint"), method=method).tick(jac, q)
        assert abs(jac.j_passive @ cmd.tau_star) <= 1e-10 * np.linalg.norm(cmd.tau_star)
        assert cmd.F_a == pytest.approx(jac.j_active @ cmd.tau_star)
    with pytest.raises(PreconditionError):
        RenderSession(RenderTarget(mode="joint"), method="subspace")
