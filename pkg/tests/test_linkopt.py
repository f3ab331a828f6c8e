import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fingerexo.errors import ConfigError
from fingerexo.geometry import FingerPose
from fingerexo.linkopt import (OPTIMIZED, OPTIMUM, SEARCH_RANGES, ConstraintSpec, SearchSpace, candidate_geometry,
                               exhaustive_search, generic_index, screen_candidate, screening_rates,
                               sensitivity_index, sensitivity_scan)

COARSE = ConstraintSpec(q_o1_deg=(0.0, 80.0, 10.0), q_o2_deg=(0.0, 90.0, 10.0))
positive = st.floats(1.0, 100.0)


def test_sensitivity_index_hand_values():
    # relative change 40/100 over relative change 50/100
    assert sensitivity_index(30, 50, 80, 120) == pytest.approx(0.8)
    assert sensitivity_index(30, 50, 120, 80) == pytest.approx(-0.8)
    assert sensitivity_index(30, 50, 7, 7) == 0.0


def test_generic_index_sign_rule():
    assert generic_index(3, 4) == 5.0
    assert generic_index(-3, -4) == 5.0
    assert generic_index(-3, 4) == -5.0
    assert generic_index(0, 4) == 0.0


@given(positive, positive, positive, positive)
def test_generic_index_magnitude(e1, e2, s1, s2):
    if e1 == e2:
        return
    a = sensitivity_index(e1, e2, s1, s2)
    b = sensitivity_index(e1, e2, s2, s1)
    assert a == pytest.approx(-b)
    assert abs(generic_index(a, b)) == pytest.approx(math.hypot(a, b))


def test_sensitivity_scan_with_linear_stub(index_geom):
    def stub(geom, pose):
        L = geom.l_EJ
        return 2 * L + 20, 320 - 3 * L

    geom = index_geom.with_lengths(l_EJ=40.0)
    report = sensitivity_scan(geom, perturbation=0.25, variables={"EJ": "l_EJ"}, outputs=stub)
    (e,) = report.entries
    assert (e.E1, e.E2) == (30.0, 50.0)
    assert e.SI_c1 == 0.8 and e.SI_c2 == -0.6 and e.SI_g == -1.0


def test_sensitivity_scan_real_model(index_geom):
    report = sensitivity_scan(index_geom, FingerPose.from_degrees(40, 45))
    assert not report.missing
    assert len(report.entries) == 11
    si = report.as_dict()
    assert all(np.isfinite(v) for v in si.values())
    assert abs(si["AB"]) < 1e-6


def test_search_space_order_and_size():
    space = SearchSpace({"l_EJ": (39, 40, 1), "l_CI": (16, 16, 1), "l_CD": (9, 10, 1),
                         "l_DE": (40, 40, 1), "l_EF": (27, 27, 1), "l_BC": (43, 43, 1)})
    cands = list(space.candidates())
    assert space.size() == len(cands) == 4
    assert cands == sorted(cands)
    assert cands[0] == (39.0, 16.0, 9.0, 40.0, 27.0, 43.0)


def test_paper_search_ranges_and_optima():
    assert SEARCH_RANGES["index"] == {"l_EJ": (30, 48), "l_CI": (16, 20), "l_CD": (9, 20),
                                      "l_DE": (35, 45), "l_EF": (20, 35), "l_BC": (36, 46)}
    assert SEARCH_RANGES["middle"]["l_DE"] == (40, 55) and SEARCH_RANGES["middle"]["l_EF"] == (15, 30)
    assert SEARCH_RANGES["little"]["l_DE"] == (30, 40)
    assert OPTIMUM["index"] == (39, 16, 9, 40, 27, 43)
    assert OPTIMUM["middle"] == (39, 17, 9, 52, 21, 41)
    assert SearchSpace.for_finger("index").size() == 19 * 5 * 12 * 11 * 16 * 11


def test_bad_search_space():
    with pytest.raises(ValueError):
        SearchSpace({"l_GF": (1, 2, 1)})
    with pytest.raises(ValueError):
        SearchSpace({"l_EJ": (5, 2, 1)})


def test_bad_constraints():
    with pytest.raises(ConfigError):
        ConstraintSpec(c_1max=0)
    with pytest.raises(ConfigError):
        ConstraintSpec(ratio_min=8.0)


def test_candidate_geometry(index_geom):
    g = candidate_geometry(index_geom, (40, 17, 10, 41, 28, 44))
    assert tuple(getattr(g, k) for k in OPTIMIZED) == (40, 17, 10, 41, 28, 44)


def test_optimum_is_feasible_on_full_grid():
    r = screen_candidate(OPTIMUM["index"])
    assert r.feasible and r.violation == ""
    assert r.poses_checked == 81 * 91
    assert r.score > r.score_min > 0


def test_linear_violation_reports_pose():
    r = screen_candidate((48, 20, 20, 45, 35, 46), COARSE)
    assert not r.feasible
    assert r.violation == "linear:c2"
    assert r.violation_pose == (0.0, 0.0)
    assert r.score is None


def test_static_violation_reports_pose():
    r = screen_candidate((30, 16, 9, 35, 20, 36), COARSE)
    assert r.violation == "static:ratio"
    assert r.violation_pose == (0.0, 10.0)


def test_tighter_constraints_only_remove_candidates():
    tight = ConstraintSpec(ratio_max=0.3, q_o1_deg=COARSE.q_o1_deg, q_o2_deg=COARSE.q_o2_deg)
    assert screen_candidate(OPTIMUM["index"], COARSE).feasible
    assert not screen_candidate(OPTIMUM["index"], tight).feasible


def test_exhaustive_search_is_deterministic():
    space = SearchSpace({"l_EJ": (38, 40, 1), "l_CI": (16, 16, 1), "l_CD": (9, 10, 1),
                         "l_DE": (40, 40, 1), "l_EF": (27, 27, 1), "l_BC": (43, 43, 1)})
    serial = exhaustive_search(space, COARSE, workers=1)
    parallel = exhaustive_search(space, COARSE, workers=2)
    assert [r.lengths for r in serial] == [r.lengths for r in parallel]
    assert [r.score for r in serial] == [r.score for r in parallel]
    feasible = [r for r in serial if r.feasible]
    assert [r.score for r in feasible] == sorted((r.score for r in feasible), reverse=True)
    rates = screening_rates(serial)
    assert rates["candidates"] == 6 and rates["feasible"] == len(feasible)


def test_screening_rates_empty():
    rates = screening_rates([])
    assert rates["candidates"] == 0 and math.isnan(rates["linear_fraction"])
