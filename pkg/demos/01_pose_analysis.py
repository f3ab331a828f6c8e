"""Inverse and forward kinematics of the index-finger linkage.

Solves the actuator stroke and instrumented-joint angle for a few finger
poses, then recovers the poses from those two measurements with both the
closed-form and the Newton forward solvers.
"""

import math

from fingerexo.geometry import FingerPose, load_geometry, point_positions
from fingerexo.kinematics import SolveOptions, solve_fk_analytic, solve_fk_numeric, solve_ik

geom = load_geometry("index")
opts = SolveOptions(check_bounds=False)

print(f"index preset, digest {geom.digest()}")
print(f"{'MCP':>5} {'PIP':>5} | {'l_x mm':>8} {'q_B deg':>8} {'c_1 mm':>7} {'c_2 mm':>7} | fk error rad")
for q1, q2 in ((0, 0), (20, 30), (40, 45), (60, 75), (80, 90)):
    state = solve_ik(geom, FingerPose.from_degrees(q1, q2), opts)
    closed = solve_fk_analytic(geom, state.meas)
    newton = solve_fk_numeric(geom, state.meas, opts)
    err = max(abs(closed.pose.q_o1 - state.pose.q_o1), abs(closed.pose.q_o2 - state.pose.q_o2),
              abs(newton.pose.q_o1 - state.pose.q_o1), abs(newton.pose.q_o2 - state.pose.q_o2))
    print(f"{q1:5.0f} {q2:5.0f} | {state.meas.l_x:8.3f} {math.degrees(state.meas.q_B):8.3f} "
          f"{state.passive.c_1:7.3f} {state.passive.c_2:7.3f} | {err:.1e}")

state = solve_ik(geom, FingerPose.from_degrees(40, 45), opts)
print("\njoint positions at (40, 45) deg [mm]:")
for name, p in point_positions(geom, state).items():
    print(f"  {name}: ({p.real:7.2f}, {p.imag:7.2f})")
