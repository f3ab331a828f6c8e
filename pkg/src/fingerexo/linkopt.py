"""Link-length design: one-at-a-time sensitivity, constraint screening and
exhaustive search for the best force transmission.

A candidate is a set of the six optimised lengths
``(l_EJ, l_CI, l_CD, l_DE, l_EF, l_BC)``; everything else is taken from a
base geometry.  A candidate is feasible when, at every pose of the joint
grid, the stroke and slider travels are within bounds and a unit actuator
force produces MCP/PIP torques whose ratio lies in the allowed band.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .differential import reduced_jacobian_batch, transmission_batch
from .geometry import IDX, FingerPose, MechanismGeometry, load_geometry
from .errors import ConfigError
from .kinematics import SolveOptions, iter_ik_grid, solve_ik

OPTIMIZED = ("l_EJ", "l_CI", "l_CD", "l_DE", "l_EF", "l_BC")

# labels used in reports -> geometry field
SENSITIVITY_VARIABLES = {
    "EJ": "l_EJ", "CI": "l_CI", "KH": "l_KH", "KB": "l_BK", "GH": "l_HG", "EF": "l_EF",
    "ED": "l_DE", "GF": "l_GF", "AB": "l_AB", "CD": "l_CD", "BC": "l_BC",
}

# (min, max) in mm for each finger; step defaults to 1 mm
SEARCH_RANGES = {
    "index": {"l_EJ": (30, 48), "l_CI": (16, 20), "l_CD": (9, 20), "l_DE": (35, 45), "l_EF": (20, 35), "l_BC": (36, 46)},
    "middle": {"l_EJ": (30, 48), "l_CI": (16, 20), "l_CD": (9, 20), "l_DE": (40, 55), "l_EF": (15, 30), "l_BC": (36, 46)},
    "ring": {"l_EJ": (30, 48), "l_CI": (16, 20), "l_CD": (9, 20), "l_DE": (35, 45), "l_EF": (20, 35), "l_BC": (36, 46)},
    "little": {"l_EJ": (30, 48), "l_CI": (16, 20), "l_CD": (9, 20), "l_DE": (30, 40), "l_EF": (20, 35), "l_BC": (36, 46)},
}

OPTIMUM = {
    "index": (39, 16, 9, 40, 27, 43),
    "middle": (39, 17, 9, 52, 21, 41),
    "ring": (39, 16, 10, 38, 29, 42),
    "little": (42, 16, 9, 32, 23, 43),
}


@dataclass(frozen=True)
class SearchSpace:
    ranges: dict            # field -> (min, max, step)

    def __post_init__(self):
        for name, (lo, hi, step) in self.ranges.items():
            if name not in OPTIMIZED:
                raise ValueError(f"{name} is not an optimised length")
            if lo > hi or step <= 0:
                raise ValueError(f"bad range for {name}: {lo}..{hi} step {step}")

    @classmethod
    def for_finger(cls, finger: str, step: float = 1.0) -> "SearchSpace":
        return cls({k: (lo, hi, step) for k, (lo, hi) in SEARCH_RANGES[finger].items()})

    @classmethod
    def around(cls, lengths: Sequence[float], half_width: float, step: float = 1.0) -> "SearchSpace":
        return cls({k: (v - half_width, v + half_width, step) for k, v in zip(OPTIMIZED, lengths)})

    def axis(self, name) -> np.ndarray:
        lo, hi, step = self.ranges[name]
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(n)

    def candidates(self):
        """All length tuples in lexicographic order of ``OPTIMIZED``."""
        axes = [self.axis(k) for k in OPTIMIZED]
        for combo in itertools.product(*axes):
            yield tuple(float(v) for v in combo)

    def size(self) -> int:
        return int(np.prod([len(self.axis(k)) for k in OPTIMIZED]))


@dataclass(frozen=True)
class ConstraintSpec:
    l_max: float = 50.0
    c_1max: float = 50.0
    c_2max: float = 40.0
    ratio_min: float = 0.25
    ratio_max: float = 7.5
    q_o1_deg: tuple = (0.0, 80.0, 1.0)
    q_o2_deg: tuple = (0.0, 90.0, 1.0)

    def __post_init__(self):
        if min(self.l_max, self.c_1max, self.c_2max) <= 0:
            raise ConfigError("bounds must be positive", field="bounds")
        if not self.ratio_min < self.ratio_max:
            raise ConfigError("ratio_min must be below ratio_max", field="ratio_min")

    def grid(self):
        def axis(spec):
            lo, hi, step = spec
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return np.radians(lo + step * np.arange(n))
        return axis(self.q_o1_deg), axis(self.q_o2_deg)


@dataclass
class CandidateResult:
    lengths: tuple
    feasible: bool
    violation: str = ""
    violation_pose: Optional[tuple] = None
    score: Optional[float] = None
    score_min: Optional[float] = None
    poses_checked: int = 0

    def p(self, aggregate: str = "mean"):
        return self.score if aggregate == "mean" else self.score_min


def candidate_geometry(base: MechanismGeometry, lengths: Sequence[float]) -> MechanismGeometry:
    return base.with_lengths(**dict(zip(OPTIMIZED, lengths)))


def screen_candidate(lengths: Sequence[float], cons: ConstraintSpec = ConstraintSpec(),
                     base: Optional[MechanismGeometry] = None, score: bool = True) -> CandidateResult:
    """Check every grid pose, stopping at the first violation.

    Poses are visited MCP-major.  At each pose the stroke and slider limits
    are checked before the torque ratio.  A pose the solver cannot reach
    counts as a violation.
    """
    lengths = tuple(float(v) for v in lengths)
    base = base or load_geometry("index")
    q1, q2 = cons.grid()
    try:
        geom = candidate_geometry(base, lengths)
        rows = iter_ik_grid(geom, q1, q2, SolveOptions(check_bounds=False))
    except Exception as exc:
        return CandidateResult(lengths, False, f"solver:{getattr(exc, 'code', 'error').lower()}")
    p_sum, p_min, checked = 0.0, math.inf, 0
    try:
        for i, Z, ok, _ in rows:
            tau = np.full((len(q2), 2), np.nan)
            if ok.any():
                with np.errstate(all="ignore"):
                    tau[ok] = transmission_batch(reduced_jacobian_batch(geom, Z[ok]))
            with np.errstate(all="ignore"):
                ratio = tau[:, 0] / tau[:, 1]
            lx, c1, c2 = Z[:, IDX["l_x"]], Z[:, IDX["c_1"]], Z[:, IDX["c_2"]]
            tests = (
                ("solver:nonconvergence", ~ok),
                ("linear:l_x", ~((lx >= 0) & (lx <= cons.l_max))),
                ("linear:c1", ~((c1 >= 0) & (c1 <= cons.c_1max))),
                ("linear:c2", ~((c2 >= 0) & (c2 <= cons.c_2max))),
                ("static:ratio", ~((ratio >= cons.ratio_min) & (ratio <= cons.ratio_max))),
            )
            first = None
            for name, bad in tests:
                if bad.any():
                    j = int(np.argmax(bad))
                    if first is None or j < first[1]:
                        first = (name, j)
            if first is not None:
                name, j = first
                # the earliest pose in the row fails the first test in check order
                for tname, bad in tests:
                    if bad[j]:
                        name = tname
                        break
                pose = (math.degrees(q1[i]), math.degrees(q2[j]))
                return CandidateResult(lengths, False, name, pose, poses_checked=checked + j)
            p = np.hypot(tau[:, 0], tau[:, 1])
            p_sum += float(p.sum())
            p_min = min(p_min, float(p.min()))
            checked += len(q2)
    except Exception as exc:
        return CandidateResult(lengths, False, f"solver:{getattr(exc, 'code', 'error').lower()}",
                               poses_checked=checked)
    result = CandidateResult(lengths, True, poses_checked=checked)
    if score:
        result.score = p_sum / checked
        result.score_min = p_min
    return result


def _screen_task(args):
    lengths, cons, base = args
    return screen_candidate(lengths, cons, base)


def exhaustive_search(space: SearchSpace, cons: ConstraintSpec = ConstraintSpec(),
                      base: Optional[MechanismGeometry] = None, workers: int = 1,
                      aggregate: str = "mean", progress: Optional[Callable] = None) -> list:
    """Screen every candidate; feasible ones first, by descending score.

    Ties (and the infeasible tail) are ordered lexicographically by
    lengths, so the output does not depend on ``workers``.
    """
    base = base or load_geometry("index")
    tasks = [(c, cons, base) for c in space.candidates()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_screen_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        results = []
        for k, t in enumerate(tasks):
            results.append(_screen_task(t))
            if progress:
                progress(k + 1, len(tasks))

    def key(r):
        p = r.p(aggregate)
        return (0, -p, r.lengths) if r.feasible else (1, 0.0, r.lengths)
    return sorted(results, key=key)


def screening_rates(results: Sequence[CandidateResult]) -> dict:
    """Fractions eliminated by the linear and then the static constraints."""
    n = len(results)
    linear = sum(r.violation.startswith("linear") for r in results)
    solver = sum(r.violation.startswith("solver") for r in results)
    static = sum(r.violation.startswith("static") for r in results)
    remaining = n - linear - solver
    return {
        "candidates": n,
        "linear_fraction": linear / n if n else math.nan,
        "solver_fraction": solver / n if n else math.nan,
        "static_fraction_of_remaining": static / remaining if remaining else math.nan,
        "feasible": sum(r.feasible for r in results),
    }


# --------------------------------------------------------------- sensitivity

def sensitivity_index(E1: float, E2: float, S1: float, S2: float) -> float:
    """Relative output change over relative input change, both about their means."""
    S_av = 0.5 * (S1 + S2)
    E_av = 0.5 * (E1 + E2)
    if S2 == S1:
        return 0.0
    return ((S2 - S1) / S_av) / ((E2 - E1) / E_av)


def generic_index(si_c1: float, si_c2: float) -> float:
    return float(np.sign(si_c1) * np.sign(si_c2) * math.hypot(si_c1, si_c2))


@dataclass
class SensitivityEntry:
    variable: str
    E1: float
    E2: float
    S1: tuple
    S2: tuple
    SI_c1: float
    SI_c2: float
    SI_g: float


@dataclass
class SensitivityReport:
    pose: tuple
    perturbation: float
    entries: list = field(default_factory=list)
    missing: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {e.variable: e.SI_g for e in self.entries}


def slider_outputs(geom: MechanismGeometry, pose: FingerPose) -> tuple:
    """(c_1, c_2) at a pose, warm-started from the geometry's reference state."""
    state = solve_ik(geom, pose, SolveOptions(check_bounds=False))
    return state.passive.c_1, state.passive.c_2


def sensitivity_scan(geom: MechanismGeometry, pose: FingerPose = FingerPose.from_degrees(40.0, 45.0),
                     perturbation: float = 0.10, variables: Optional[dict] = None,
                     outputs: Callable = slider_outputs) -> SensitivityReport:
    """One-at-a-time sensitivity of the slider travels to each length.

    Each length ``L`` is evaluated at ``(1-perturbation)*L`` and
    ``(1+perturbation)*L`` with all others fixed.  ``outputs`` maps a
    geometry and pose to ``(c_1, c_2)``; it can be replaced by a stub model.
    """
    variables = variables or SENSITIVITY_VARIABLES
    report = SensitivityReport(pose.degrees(), perturbation)
    for label, name in variables.items():
        L = getattr(geom, name)
        E1, E2 = (1 - perturbation) * L, (1 + perturbation) * L
        try:
            S1 = outputs(geom.with_lengths(**{name: E1}), pose)
            S2 = outputs(geom.with_lengths(**{name: E2}), pose)
        except Exception as exc:
            report.missing[label] = getattr(exc, "code", type(exc).__name__)
            continue
        si1 = sensitivity_index(E1, E2, S1[0], S2[0])
        si2 = sensitivity_index(E1, E2, S1[1], S2[1])
        report.entries.append(SensitivityEntry(label, E1, E2, tuple(S1), tuple(S2), si1, si2,
                                               generic_index(si1, si2)))
    return report
