"""Link-length screening and sensitivity.

Screens the reference optimum, searches a small neighbourhood around it on
a coarse joint grid, and prints the one-at-a-time sensitivity of the two
slider travels to every link length.
"""

from fingerexo.geometry import load_geometry
from fingerexo.linkopt import (OPTIMIZED, OPTIMUM, ConstraintSpec, SearchSpace, exhaustive_search,
                               screen_candidate, screening_rates, sensitivity_scan)

coarse = ConstraintSpec(q_o1_deg=(0.0, 80.0, 10.0), q_o2_deg=(0.0, 90.0, 10.0))
ref = screen_candidate(OPTIMUM["index"])
print(f"reference optimum {OPTIMUM['index']}: feasible={ref.feasible}, mean p={ref.score:.3f}, "
      f"min p={ref.score_min:.3f} over {ref.poses_checked} poses")

space = SearchSpace({k: (v, v + 1, 1) for k, v in zip(OPTIMIZED, OPTIMUM["index"])})
results = exhaustive_search(space, coarse)
print(f"\nneighbourhood search, {space.size()} candidates: {screening_rates(results)}")
for r in results[:5]:
    print(f"  {r.lengths} feasible={r.feasible} p={r.score}")

report = sensitivity_scan(load_geometry("index"))
print(f"\nsensitivity at {report.pose} deg, +-{100 * report.perturbation:.0f}% per length")
for e in sorted(report.entries, key=lambda e: -abs(e.SI_g)):
    print(f"  {e.variable:>3}: SI_c1={e.SI_c1:+.3f} SI_c2={e.SI_c2:+.3f} SI_g={e.SI_g:+.3f}")
