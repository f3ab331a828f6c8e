"""Rendering joint limits with one actuator for two joints.

Compares the torque and pose proxies at a pose beyond both limits, then
contrasts the displayed impedance of the standard, null-space and
subspace methods on a random coupled virtual stiffness.
"""

import numpy as np

from fingerexo.differential import assemble_jacobian
from fingerexo.geometry import FingerPose, load_geometry
from fingerexo.kinematics import SolveOptions, solve_ik
from fingerexo.rendering import (RenderTarget, displayed_impedance, find_nonpassive_standard,
                                 joint_level_torques, project_pose, project_torques)

np.set_printoptions(precision=4, suppress=True)
geom = load_geometry("index")
q = np.radians([45.0, 50.0])
jac = assemble_jacobian(geom, solve_ik(geom, FingerPose(*q), SolveOptions(check_bounds=False)))
target = RenderTarget(mode="joint")
tau_d = joint_level_torques(target, q)
print(f"pose (45, 50) deg, limits (30, 30) deg: desired torques {tau_d} N*mm")
print(f"  unrealisable part j_passive . tau = {jac.j_passive @ tau_d:.3f}")

tp = project_torques(jac, tau_d)
print(f"torque proxy: tau* = {tp.tau_star}, actuator force {tp.F_a:.3f} N")
pp = project_pose(jac, np.eye(2), q, np.radians([30.0, 30.0]))
print(f"pose proxy:   q* = {np.degrees(pp.q_star)} deg, tau* = {pp.tau_star}, actuator force {pp.F_a:.3f} N")

found = find_nonpassive_standard(np.random.default_rng(0))
vm, rep = found
print("\nvirtual stiffness Z_x:\n", vm.Z_x)
for method in ("standard", "nullspace", "subspace"):
    r = rep if method == "standard" else displayed_impedance(method, vm)
    print(f"  {method:>9}: eigenvalues {np.real(r.eigenvalues)} passive={r.passive}")
