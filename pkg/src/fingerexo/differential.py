"""Differential kinematics, statics and grasp stability.

Differentiating the loop closures gives

    [J_Om; J_Op] dq_fin = [[J_Rm, J_Rp], [J_Cm, J_Cp]] [dq_m; dq_p]

with finger joints ``q_fin = (q_o1, q_o2)``, measured joints
``q_m = (l_x, q_B)`` and passive joints ``q_p = (q_K, q_D, q_G, q_N, c_1, c_2)``.
Eliminating ``dq_p`` leaves the 2x2 map ``dq_fin = J_A dq_m``.

Equation order matters: ``J_Cp`` is only invertible when the two rows kept
on top come from loops 2 and 3, because ``c_1``, ``c_2``, ``q_N`` and ``q_G``
each appear in a single loop.  Loops 2 and 3 are split into the component
across their phalanx (kept on top) and the component along it (bottom,
where the slider enters with coefficient -1).  A plain x/y split would make
``J_Cp`` singular whenever a phalanx is horizontal.  ``J_A`` itself does
not depend on this choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import SingularConstraintBlock, SingularJacobian
from .geometry import IDX, LoopModel, MechanismGeometry, MechanismState
from .kinematics import SolveOptions, solve_ik_grid

TOP_ROWS = (2, 4)              # loop2 across, loop3 across (after rotation)
BOTTOM_ROWS = (0, 1, 3, 5, 6, 7)
FINGER = tuple(IDX[k] for k in ("q_o1", "q_o2"))
MEASURED = tuple(IDX[k] for k in ("l_x", "q_B"))
PASSIVE = tuple(IDX[k] for k in ("q_K", "q_D", "q_G", "q_N", "c_1", "c_2"))
CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class JacobianSet:
    J_Om: np.ndarray
    J_Op: np.ndarray
    J_Rm: np.ndarray
    J_Rp: np.ndarray
    J_Cm: np.ndarray
    J_Cp: np.ndarray
    J_A: np.ndarray
    cond_Cp: float

    @property
    def j_active(self) -> np.ndarray:
        """Torque weights giving the actuator force: F_A = j_active . tau."""
        return self.J_A[:, 0]

    @property
    def j_passive(self) -> np.ndarray:
        """Torque weights giving the instrumented-joint torque; zero for feasible torques."""
        return self.J_A[:, 1]


@dataclass(frozen=True)
class JointTorques:
    tau_1: float
    tau_2: float

    def vector(self) -> np.ndarray:
        return np.array([self.tau_1, self.tau_2])


@dataclass(frozen=True)
class ActuatorWrench:
    F_A: float
    tau_B: float


def phalanx_rows(jac_full: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Rotate the loop 2 and loop 3 rows into (across, along) the phalanx.

    Rows 2/4 become the across components, rows 3/5 the along components.
    """
    J = np.array(jac_full, dtype=float, copy=True)
    z = np.asarray(z, dtype=float)
    q1 = z[..., IDX["q_o1"]]
    for row, phi in ((2, q1), (4, q1 + z[..., IDX["q_o2"]])):
        c, s = np.cos(phi)[..., None], np.sin(phi)[..., None]
        rx, ry = J[..., row, :].copy(), J[..., row + 1, :].copy()
        J[..., row, :] = rx * s + ry * c
        J[..., row + 1, :] = rx * c - ry * s
    return J


def partition(jac_full: np.ndarray, z: Optional[np.ndarray] = None) -> dict:
    """Split the 8x11 loop partials into the six named blocks.

    With the state ``z`` the loop 2 and 3 rows are first rotated by
    :func:`phalanx_rows`; without it the raw x/y rows are used.
    """
    top = np.asarray(TOP_ROWS)
    bot = np.asarray(BOTTOM_ROWS)
    fin, mea, pas = list(FINGER), list(MEASURED), list(PASSIVE)
    J = np.asarray(jac_full) if z is None else phalanx_rows(jac_full, z)
    return {
        "J_Om": J[..., top, :][..., fin],
        "J_Op": J[..., bot, :][..., fin],
        "J_Rm": -J[..., top, :][..., mea],
        "J_Rp": -J[..., top, :][..., pas],
        "J_Cm": -J[..., bot, :][..., mea],
        "J_Cp": -J[..., bot, :][..., pas],
    }


def reduce_blocks(b: dict, fully_actuated: bool = False) -> np.ndarray:
    """J_A = [J_Om - J_Rp J_Cp^-1 J_Op]^-1 [J_Rm - J_Rp J_Cp^-1 J_Cm]."""
    if fully_actuated:
        return np.linalg.solve(b["J_Om"], b["J_Rm"])
    X = np.linalg.solve(b["J_Cp"], np.concatenate([b["J_Op"], b["J_Cm"]], axis=-1))
    lhs = b["J_Om"] - b["J_Rp"] @ X[..., :2]
    rhs = b["J_Rm"] - b["J_Rp"] @ X[..., 2:]
    return np.linalg.solve(lhs, rhs)


def assemble_jacobian(geom: MechanismGeometry, state: MechanismState,
                      condition_limit: float = CONDITION_LIMIT, numeric: bool = False) -> JacobianSet:
    """Analytic partition and reduced map at a consistent state."""
    model = LoopModel(geom)
    z = state.vector(geom.l_LM)
    if numeric:
        from .kinematics import numeric_jacobian
        jac = numeric_jacobian(model, z)
    else:
        jac = model.jacobian(z)
    b = partition(jac, z)
    cond = float(np.linalg.cond(b["J_Cp"]))
    if not np.isfinite(cond) or cond > condition_limit:
        raise SingularConstraintBlock(f"passive constraint block is singular (condition {cond:.3g}) "
                                      f"at pose {state.pose.degrees()} deg", condition=cond,
                                      pose=state.pose.degrees())
    try:
        J_A = reduce_blocks(b)
    except np.linalg.LinAlgError:
        raise SingularJacobian(f"reduced map singular at pose {state.pose.degrees()} deg") from None
    return JacobianSet(J_A=J_A, cond_Cp=cond, **b)


def reduced_jacobian_batch(geom: MechanismGeometry, z: np.ndarray) -> np.ndarray:
    """J_A for an array of consistent state vectors, shape (..., 2, 2)."""
    b = partition(LoopModel(geom).jacobian(z), z)
    return reduce_blocks(b)


def torques_from_actuator(jac: JacobianSet, F_A: float) -> JointTorques:
    """Finger torques produced by an actuator force with the instrumented joint free."""
    if abs(np.linalg.det(jac.J_A)) < 1e-14:
        raise SingularJacobian("J_A is singular")
    tau = np.linalg.solve(jac.J_A.T, np.array([F_A, 0.0]))
    return JointTorques(float(tau[0]), float(tau[1]))


def actuator_from_torques(jac: JacobianSet, tau: JointTorques) -> ActuatorWrench:
    """(F_A, tau_B) = J_A^T tau.  A nonzero tau_B means tau is not realisable."""
    w = jac.J_A.T @ tau.vector()
    return ActuatorWrench(float(w[0]), float(w[1]))


def transmission_batch(J_A: np.ndarray, F_A: float = 1.0) -> np.ndarray:
    """Joint torques J_A^-T (F_A, 0) for a stack of reduced maps, shape (..., 2)."""
    rhs = np.broadcast_to(np.array([F_A, 0.0]), J_A.shape[:-1])
    return np.linalg.solve(np.swapaxes(J_A, -1, -2), rhs[..., None])[..., 0]


@dataclass
class GraspRow:
    q_o1_deg: float
    q_o2_deg: float
    tau_1: float
    tau_2: float
    ratio: float
    same_sign: bool
    error: str = ""


@dataclass
class GraspReport:
    rows: list

    @property
    def fraction_stable(self) -> float:
        if not self.rows:
            return float("nan")
        return sum(r.same_sign for r in self.rows) / len(self.rows)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r.same_sign]


def grasp_stability_report(geom: MechanismGeometry, q_o1: Sequence[float], q_o2: Sequence[float],
                           F_A: float = 1.0, opts: SolveOptions = SolveOptions(check_bounds=False)
                           ) -> GraspReport:
    """Joint torques for a unit actuator force over a joint grid (radians).

    A cell whose pose cannot be solved is reported with its error and
    counted as not stable; the scan always completes.
    """
    q_o1 = np.asarray(q_o1, dtype=float)
    q_o2 = np.asarray(q_o2, dtype=float)
    if q_o1.size == 0 or q_o2.size == 0:
        return GraspReport([])
    try:
        grid = solve_ik_grid(geom, q_o1, q_o2, opts)
        states, ok = grid.states, grid.converged
        error = "NON_CONVERGENCE"
    except Exception as exc:  # mechanism cannot even be assembled
        states = np.full((len(q_o1), len(q_o2), len(IDX)), np.nan)
        ok = np.zeros((len(q_o1), len(q_o2)), dtype=bool)
        error = getattr(exc, "code", type(exc).__name__)
    tau = np.full(ok.shape + (2,), np.nan)
    if ok.any():
        with np.errstate(all="ignore"):
            try:
                tau[ok] = transmission_batch(reduced_jacobian_batch(geom, states[ok]), F_A)
            except np.linalg.LinAlgError:
                for idx in zip(*np.nonzero(ok)):
                    try:
                        tau[idx] = transmission_batch(reduced_jacobian_batch(geom, states[idx]), F_A)
                    except np.linalg.LinAlgError:
                        ok[idx] = False
    rows = []
    for i, a in enumerate(q_o1):
        for j, b in enumerate(q_o2):
            t1, t2 = tau[i, j]
            if ok[i, j]:
                ratio = t1 / t2 if t2 != 0 else math.copysign(math.inf, t1)
                rows.append(GraspRow(math.degrees(a), math.degrees(b), float(t1), float(t2), float(ratio),
                                     bool(t1 * t2 > 0)))
            else:
                rows.append(GraspRow(math.degrees(a), math.degrees(b), math.nan, math.nan, math.nan,
                                     False, error))
    return GraspReport(rows)
