"""Force transmission from the single actuator to the two finger joints.

Prints the reduced Jacobian at one pose, the joint torques produced by a
1 N actuator force, and a coarse grasp-stability map over the workspace.
"""

import numpy as np

from fingerexo.differential import assemble_jacobian, grasp_stability_report, torques_from_actuator
from fingerexo.geometry import FingerPose, load_geometry
from fingerexo.kinematics import SolveOptions, solve_ik

geom = load_geometry("index")
state = solve_ik(geom, FingerPose.from_degrees(40, 45), SolveOptions(check_bounds=False))
jac = assemble_jacobian(geom, state)
np.set_printoptions(precision=4, suppress=True)
print("J_A at (40, 45) deg:\n", jac.J_A)
print(f"condition of the passive block: {jac.cond_Cp:.1f}")
tau = torques_from_actuator(jac, 1.0)
print(f"1 N on the actuator -> tau = ({tau.tau_1:.3f}, {tau.tau_2:.3f}) N*mm, ratio {tau.tau_1 / tau.tau_2:.3f}")

step = 10.0
q1 = np.radians(np.arange(0, 81, step))
q2 = np.radians(np.arange(0, 91, step))
report = grasp_stability_report(geom, q1, q2)
print(f"\ntorque ratio tau_1/tau_2 over the workspace ({step:.0f} deg grid), rows MCP, columns PIP")
print("      " + " ".join(f"{b:5.0f}" for b in np.degrees(q2)))
for i, a in enumerate(np.degrees(q1)):
    row = report.rows[i * len(q2):(i + 1) * len(q2)]
    print(f"{a:5.0f} " + " ".join(f"{r.ratio:5.2f}" for r in row))
print(f"same-sign torques at {100 * report.fraction_stable:.0f}% of poses")
