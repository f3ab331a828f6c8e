"""Position and force control on the simulated actuator.

Runs a step and a ramp through the position loop, saturates the duty
limiter, and renders a virtual wall with two stiffnesses.
"""

from fingerexo.controlsim import (Scenario, TemperatureFilterState, settling_time, simulate_force,
                                  simulate_position, temperature_filter_tick)

step = simulate_position(Scenario(kind="step", amplitude=25.0, duration=5.0))
print(f"25 mm step: settles within 2 mm after {settling_time(step, 2.0):.3f} s, "
      f"final error {step[-1].ref - step[-1].pos:+.3f} mm")
ramp = simulate_position(Scenario(kind="ramp", rate=10.0, ramp_end=45.0, duration=6.0))
print(f"10 mm/s ramp: worst error after 0.5 s {max(abs(t.ref - t.pos) for t in ramp if t.t > 0.5):.3f} mm")

state = TemperatureFilterState()
outs = [temperature_filter_tick(state, 100.0, dt=0.01) for _ in range(200)]
print(f"\nsustained 100% demand: output {outs[0]:.1f} -> {outs[-1]:.1f}")
for _ in range(300):
    temperature_filter_tick(state, 10.0, dt=0.01)
print(f"after 3 s of low demand the limit is back at {state.limit:.1f}")

print("\nvirtual wall at 30 mm, user pushing with 3 N")
for K in (0.5, 1.0, 2.0):
    log = simulate_force(lambda t, p: K * max(p - 30.0, 0.0), lambda t, p: 3.0, duration=4.0, start=25.0)
    print(f"  K_ac = {K:.1f} N/mm: penetration {log['pos'][-1] - 30.0:.3f} mm (static estimate {3.0 / K:.3f})")
