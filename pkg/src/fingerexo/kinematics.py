"""Pose analysis: inverse, forward (numeric and closed form) and calibration.

All solvers share one damped Newton iteration over the eight scalar loop
equations.  They differ only in which eight of the eleven state entries are
unknown:

========== ===============================================================
inverse    l_x, q_B, q_K, q_D, q_G, q_N, c_1, c_2   (finger pose given)
forward    q_o1, q_o2, q_K, q_D, q_G, q_N, c_1, c_2 (l_x, q_B given)
calibrate  q_o1, q_o2, l_LM, c_1, q_D, q_G, q_K, q_N (l_x, q_B, c_2 given)
========== ===============================================================

The Newton core works on batches of state vectors so that whole rows of a
joint grid can be marched together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import (AmbiguousBranch, GeometryDegenerate, ImplausibleLength, InfeasiblePose,
                     NonConvergence, PreconditionError)
from .geometry import (IDX, N_VARS, FingerPose, LoopModel, MechanismGeometry, MechanismState,
                       MeasuredState, wrap_angle, wrap_positive)

IK_UNKNOWNS = ("l_x", "q_B", "q_K", "q_D", "q_G", "q_N", "c_1", "c_2")
FK_UNKNOWNS = ("q_o1", "q_o2", "q_K", "q_D", "q_G", "q_N", "c_1", "c_2")
CALIBRATION_UNKNOWNS = ("q_o1", "q_o2", "l_LM", "c_1", "q_D", "q_G", "q_K", "q_N")
# used to place the user at the calibration pose in simulation
CALIBRATION_POSE_UNKNOWNS = ("q_o1", "q_o2", "q_B", "c_1", "q_D", "q_G", "q_K", "q_N")

REFERENCE_POSE_DEG = (40.0, 45.0)
ACOS_EPS = 1e-12


@dataclass(frozen=True)
class SolveOptions:
    tolerance: float = 1e-9
    max_iterations: int = 100
    damping: float = 1.0
    warm_start: Optional[MechanismState] = None
    analytic_partials: bool = True
    # natural joint box (rad) and slack allowed when policing branches
    q_o1_max: float = math.radians(80.0)
    q_o2_max: float = math.radians(90.0)
    box_margin: float = math.radians(10.0)
    l_max: float = 50.0
    c_1max: float = 50.0
    c_2max: float = 40.0
    check_bounds: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise PreconditionError("tolerance must be positive")
        if self.max_iterations < 1:
            raise PreconditionError("max_iterations must be at least 1")
        if not 0 < self.damping <= 1:
            raise PreconditionError("damping must lie in (0, 1]")


@dataclass
class CalibrationResult:
    l_LM: float
    iterations: int
    residual: float
    plausible: bool
    state: MechanismState
    warning: str = ""


@dataclass
class GridSolution:
    """States over a joint grid, shape (n1, n2, 11), with a convergence mask."""
    q_o1: np.ndarray
    q_o2: np.ndarray
    states: np.ndarray
    converged: np.ndarray
    residual: np.ndarray = field(default=None)

    def column(self, name):
        return self.states[..., IDX[name]]


# ----------------------------------------------------------------- Newton core

def numeric_jacobian(model: LoopModel, z: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference partials of the residual, shape (..., 8, 11)."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape[:-1] + (8, N_VARS))
    for k in range(N_VARS):
        dz = np.zeros(N_VARS)
        dz[k] = step
        out[..., :, k] = (model.residual(z + dz) - model.residual(z - dz)) / (2 * step)
    return out


def newton(model: LoopModel, z0, unknowns: Sequence[str], opts: SolveOptions):
    """Damped Newton on a batch of states.

    Returns ``(z, converged, iterations, residual_norm)``; arrays follow the
    batch shape of ``z0``.  The step is halved for a sample whenever it would
    increase that sample's residual.
    """
    unk = [IDX[name] for name in unknowns]
    z = np.array(z0, dtype=float, copy=True)
    scalar = z.ndim == 1
    z = np.atleast_2d(z)
    n = z.shape[0]
    iters = np.zeros(n, dtype=int)
    r = model.residual(z)
    norm = np.max(np.abs(r), axis=-1)
    active = norm >= opts.tolerance
    for _ in range(opts.max_iterations):
        if not active.any():
            break
        za = z[active]
        ra = r[active]
        jac = model.jacobian(za) if opts.analytic_partials else numeric_jacobian(model, za)
        try:
            dx = np.linalg.solve(jac[..., unk], ra[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dx = np.stack([np.linalg.lstsq(j[:, unk], rr, rcond=None)[0] for j, rr in zip(jac, ra)])
        lam = np.full(len(za), opts.damping)
        base = norm[active]
        for _halving in range(30):
            trial = za.copy()
            trial[:, unk] -= lam[:, None] * dx
            rt = model.residual(trial)
            nt = np.max(np.abs(rt), axis=-1)
            worse = ~(nt < base) & (nt >= opts.tolerance)
            if not worse.any() or lam.min() < 1e-8:
                break
            lam = np.where(worse, lam * 0.5, lam)
        idx = np.flatnonzero(active)
        z[idx] = trial
        r[idx] = rt
        norm[idx] = nt
        iters[idx] += 1
        active = ~(norm < opts.tolerance) & np.isfinite(norm)
        active &= iters < opts.max_iterations
    converged = norm < opts.tolerance
    if scalar:
        return z[0], bool(converged[0]), int(iters[0]), float(norm[0])
    return z, converged, iters, norm


# ------------------------------------------------------------ branch policing

def branch_signs(geom: MechanismGeometry, z) -> tuple:
    """Orientation signs of the two assembly triangles used by the closed form.

    ``K``: side of ``A`` relative to the base line ``K->N``.  ``D``: side of
    ``F`` relative to ``D->G``.
    """
    z = np.asarray(z, dtype=float)
    qK, qB, qD = z[..., IDX["q_K"]], z[..., IDX["q_B"]], z[..., IDX["q_D"]]
    K = geom.pos_K
    N = geom.pos_N
    B = K + geom.l_BK * np.exp(1j * qK)
    body = np.exp(1j * (qK + qB))
    A = B + geom.pos_A * body
    D = B + geom.pos_D * body
    G = K + geom.pos_G * np.exp(1j * qK)
    F = D + geom.pos_F * np.exp(1j * qD)
    sk = np.sign(((A - K) * np.conj(N - K)).imag)
    sd = np.sign(((F - D) * np.conj(G - D)).imag)
    return sk, sd


def _branch_ok(geom, z):
    sk, sd = branch_signs(geom, z)
    return (sk == geom.branch_K) & (sd == geom.branch_D)


def _sliders_ok(z):
    """Both slider offsets on the physical side of their phalanx."""
    return bool(np.all(z[..., IDX["c_1"]] >= -1e-9) and np.all(z[..., IDX["c_2"]] >= -1e-9))


def _normalize(z):
    z = np.array(z, dtype=float, copy=True)
    for name in ("q_K", "q_D", "q_G", "q_N"):
        z[..., IDX[name]] = wrap_angle(z[..., IDX[name]])
    z[..., IDX["q_B"]] = wrap_positive(z[..., IDX["q_B"]])
    return z


# --------------------------------------------------------- closed-form forward

def _acos_checked(arg, triangle):
    arg = np.asarray(arg, dtype=float)
    bad = ~(np.abs(arg) <= 1 + ACOS_EPS)
    return np.arccos(np.clip(arg, -1.0, 1.0)), bad


def analytic_forward_batch(geom: MechanismGeometry, l_x, q_B):
    """Closed-form forward kinematics for arrays of measurements.

    Returns ``(z, failed)`` where ``failed`` names the first degenerate
    triangle per sample (empty string when fine).
    """
    l_x = np.asarray(l_x, dtype=float)
    q_B = np.asarray(q_B, dtype=float)
    shape = np.broadcast(l_x, q_B).shape
    l_x = np.broadcast_to(l_x, shape)
    q_B = np.broadcast_to(q_B, shape)
    failed = np.full(shape, "", dtype=object)

    def mark(bad, name):
        failed[(failed == "") & bad] = name

    # A seen from K in the rocker frame: triangle A-B-K with the angle q_B at B
    wA = geom.l_BK + geom.pos_A * np.exp(1j * q_B)
    l_AK = np.abs(wA)
    l_AN = geom.l_act + l_x
    mark(~(l_AN > 0), "AKN")
    cos_k = (l_AK ** 2 + geom.l_KN ** 2 - l_AN ** 2) / (2 * l_AK * geom.l_KN)
    alpha, bad = _acos_checked(cos_k, "AKN")
    mark(bad, "AKN")
    q_K = geom.q_KN + geom.branch_K * alpha - np.angle(wA)
    K = geom.pos_K
    N = geom.pos_N
    eK = np.exp(1j * q_K)
    A = K + eK * wA
    q_N = np.angle(A - N)
    B = K + geom.l_BK * eK
    body = np.exp(1j * (q_K + q_B))
    D = B + geom.pos_D * body
    I = B + geom.pos_I * body
    G = K + geom.pos_G * eK
    # triangle D-G-F: F on the distal body at |pos_F| from D and l_GF from G
    l_DG = np.abs(G - D)
    l_DF = abs(geom.pos_F)
    cos_d = (l_DG ** 2 + l_DF ** 2 - geom.l_GF ** 2) / (2 * l_DG * l_DF)
    beta, bad = _acos_checked(cos_d, "DGF")
    mark(bad, "DGF")
    dir_F = np.angle(G - D) + geom.branch_D * beta
    q_D = dir_F if geom.pos_F > 0 else dir_F + math.pi
    F = D + geom.pos_F * np.exp(1j * q_D)
    q_G = np.angle(F - G)
    # proximal slider: I = L + (c_1 + i h_I) u1, so c_1 = sqrt(|LI|^2 - h_I^2)
    l_LI = np.abs(I)
    c1_sq = l_LI ** 2 - geom.h_I ** 2
    mark(~(c1_sq >= -ACOS_EPS), "L-I-Ip")
    c_1 = np.sqrt(np.maximum(c1_sq, 0.0))
    q_o1 = np.arctan2(geom.h_I, c_1) - np.angle(I)
    # middle slider: J = M + (c_2 + i h_J) u2
    J = D + geom.pos_J * np.exp(1j * q_D)
    M = geom.l_LM * np.exp(-1j * q_o1)
    l_MJ = np.abs(J - M)
    c2_sq = l_MJ ** 2 - geom.h_J ** 2
    mark(~(c2_sq >= -ACOS_EPS), "M-J-Jp")
    c_2 = np.sqrt(np.maximum(c2_sq, 0.0))
    q_o12 = np.arctan2(geom.h_J, c_2) - np.angle(J - M)
    q_o2 = wrap_angle(q_o12 - q_o1)

    z = np.empty(shape + (N_VARS,))
    z[..., IDX["l_x"]] = l_x
    z[..., IDX["q_B"]] = q_B
    z[..., IDX["q_o1"]] = wrap_angle(q_o1)
    z[..., IDX["q_o2"]] = q_o2
    z[..., IDX["q_K"]] = q_K
    z[..., IDX["q_D"]] = q_D
    z[..., IDX["q_G"]] = q_G
    z[..., IDX["q_N"]] = q_N
    z[..., IDX["c_1"]] = c_1
    z[..., IDX["c_2"]] = c_2
    z[..., IDX["l_LM"]] = geom.l_LM
    return _normalize(z), failed


def solve_fk_analytic(geom: MechanismGeometry, meas: MeasuredState) -> MechanismState:
    """Closed-form forward kinematics using the cosine theorem.

    Raises :class:`GeometryDegenerate` naming the triangle whose sides
    violate the triangle inequality.
    """
    z, failed = analytic_forward_batch(geom, meas.l_x, meas.q_B)
    if failed[()]:
        raise GeometryDegenerate(f"triangle {failed[()]} cannot close for l_x={meas.l_x:.6g} mm, "
                                 f"q_B={math.degrees(meas.q_B):.6g} deg", triangle=failed[()])
    return MechanismState.from_vector(z)


# -------------------------------------------------------------- reference state

@lru_cache(maxsize=64)
def reference_state(geom: MechanismGeometry) -> MechanismState:
    """Consistent state at the mid-range pose, used as the default guess.

    Found by scanning the closed form over the measurement space, then
    polished with Newton on the inverse unknowns.  Memoised per geometry
    (the result is immutable).
    """
    target = FingerPose.from_degrees(*REFERENCE_POSE_DEG)
    z = _scan_for_pose(geom, target)
    model = LoopModel(geom)
    z[IDX["q_o1"]], z[IDX["q_o2"]] = target.q_o1, target.q_o2
    z, ok, _, norm = newton(model, z, IK_UNKNOWNS, SolveOptions())
    if not ok:
        raise NonConvergence("could not assemble the mechanism at the reference pose", residual=norm)
    return MechanismState.from_vector(_normalize(z))


def _scan_for_pose(geom, pose, l_range=(-30.0, 80.0), n_l=111, n_b=361):
    """Measurement pair whose closed-form pose is nearest ``pose``."""
    lx = np.linspace(*l_range, n_l)
    qb = np.linspace(0, 2 * math.pi, n_b, endpoint=False)
    LX, QB = np.meshgrid(lx, qb, indexing="ij")
    with np.errstate(invalid="ignore", divide="ignore"):
        z, failed = analytic_forward_batch(geom, LX, QB)
    err = np.hypot(wrap_angle(z[..., IDX["q_o1"]] - pose.q_o1), wrap_angle(z[..., IDX["q_o2"]] - pose.q_o2))
    err = np.where(failed == "", err, np.inf)
    err = np.where(np.isfinite(err), err, np.inf)
    k = np.unravel_index(np.argmin(err), err.shape)
    if not np.isfinite(err[k]):
        raise GeometryDegenerate("mechanism cannot be assembled anywhere in the measurement range",
                                 triangle="AKN")
    return z[k].copy()


# ------------------------------------------------------------------ solvers

def _check_bounds(state: MechanismState, opts: SolveOptions):
    m, p = state.meas, state.passive
    checks = (("l_x>=0", m.l_x >= -1e-9), (f"l_x<={opts.l_max:g}", m.l_x <= opts.l_max + 1e-9),
              ("c_1>=0", p.c_1 >= -1e-9), (f"c_1<={opts.c_1max:g}", p.c_1 <= opts.c_1max + 1e-9),
              ("c_2>=0", p.c_2 >= -1e-9), (f"c_2<={opts.c_2max:g}", p.c_2 <= opts.c_2max + 1e-9))
    for name, ok in checks:
        if not ok:
            raise InfeasiblePose(f"pose violates bound {name}", bound=name, state=state)


def _pose_in_box(q1, q2, opts: SolveOptions):
    m = opts.box_margin
    return (-m <= q1 <= opts.q_o1_max + m) and (-m <= q2 <= opts.q_o2_max + m)


def solve_ik(geom: MechanismGeometry, pose: FingerPose, opts: SolveOptions = SolveOptions()) -> MechanismState:
    """Actuator stroke, instrumented joint and passive joints for a finger pose."""
    if not _pose_in_box(pose.q_o1, pose.q_o2, opts):
        raise PreconditionError(f"pose {pose.degrees()} deg outside the feasibility box")
    model = LoopModel(geom)
    start = opts.warm_start or reference_state(geom)
    z0 = start.vector(geom.l_LM)
    z0[IDX["q_o1"]], z0[IDX["q_o2"]] = pose.q_o1, pose.q_o2
    z, ok, iters, norm = newton(model, z0, IK_UNKNOWNS, opts)
    if not (ok and _branch_ok(geom, z) and _sliders_ok(z)):
        # restart from the closed-form pose nearest the target
        z0 = _scan_for_pose(geom, pose)
        z0[IDX["q_o1"]], z0[IDX["q_o2"]] = pose.q_o1, pose.q_o2
        z, ok, iters, norm = newton(model, z0, IK_UNKNOWNS, opts)
    if not ok:
        raise NonConvergence(f"inverse kinematics did not converge at {pose.degrees()} deg "
                             f"(residual {norm:.3g} mm)", residual=norm, iterations=iters)
    state = MechanismState.from_vector(_normalize(z))
    if not _branch_ok(geom, z):
        raise AmbiguousBranch("inverse kinematics converged to a mirrored assembly", state=state)
    if opts.check_bounds:
        _check_bounds(state, opts)
    return state


def solve_fk_numeric(geom: MechanismGeometry, meas: MeasuredState,
                     opts: SolveOptions = SolveOptions()) -> MechanismState:
    """Finger pose and passive joints from the two measurements."""
    if not meas.in_range(opts.l_max):
        raise PreconditionError(f"measurement l_x={meas.l_x:g} mm, q_B={math.degrees(meas.q_B):g} deg "
                                "outside the sensor range")
    model = LoopModel(geom)
    start = opts.warm_start or reference_state(geom)
    z0 = start.vector(geom.l_LM)
    z0[IDX["l_x"]], z0[IDX["q_B"]] = meas.l_x, meas.q_B
    z, ok, iters, norm = newton(model, z0, FK_UNKNOWNS, opts)
    if not (ok and _branch_ok(geom, z) and _sliders_ok(z)):
        # march the measurements from the start state to keep the assembly branch
        z = start.vector(geom.l_LM)
        path = np.linspace([z[IDX["l_x"]], z[IDX["q_B"]]], [meas.l_x, meas.q_B], 21)[1:]
        for lx, qb in path:
            z[IDX["l_x"]], z[IDX["q_B"]] = lx, qb
            z, ok, iters, norm = newton(model, z, FK_UNKNOWNS, opts)
            if not ok:
                break
    if not ok:
        raise NonConvergence(f"forward kinematics did not converge (residual {norm:.3g} mm)",
                             residual=norm, iterations=iters)
    z = _normalize(z)
    state = MechanismState.from_vector(z)
    if not (_pose_in_box(state.pose.q_o1, state.pose.q_o2, opts) and _branch_ok(geom, z)
            and state.passive.c_1 >= 0 and state.passive.c_2 >= 0):
        raise AmbiguousBranch(f"forward kinematics converged outside the natural joint box "
                              f"({state.pose.degrees()} deg)", state=state)
    return state


def solve_calibration(geom: MechanismGeometry, meas: MeasuredState, c_2_fixed: float,
                      opts: SolveOptions = SolveOptions()) -> CalibrationResult:
    """Estimate the proximal phalanx length with the middle slider held fixed.

    ``geom.l_LM`` is used only as the starting guess.  An estimate outside
    [25, 80] mm is returned with ``plausible=False``.
    """
    model = LoopModel(geom)
    start = opts.warm_start or calibration_start(geom)
    z0 = start.vector(geom.l_LM)
    z0[IDX["l_x"]], z0[IDX["q_B"]], z0[IDX["c_2"]] = meas.l_x, meas.q_B, c_2_fixed
    z, ok, iters, norm = newton(model, z0, CALIBRATION_UNKNOWNS, opts)
    if not ok:
        raise NonConvergence(f"calibration did not converge (residual {norm:.3g} mm)",
                             residual=norm, iterations=iters)
    l_LM = float(z[IDX["l_LM"]])
    plausible = 25.0 <= l_LM <= 80.0
    warning = "" if plausible else f"implausible phalanx length {l_LM:.3f} mm"
    return CalibrationResult(l_LM, iters, norm, plausible, MechanismState.from_vector(_normalize(z)), warning)


def require_plausible(result: CalibrationResult) -> CalibrationResult:
    if not result.plausible:
        raise ImplausibleLength(result.warning)
    return result


@lru_cache(maxsize=64)
def calibration_start(geom: MechanismGeometry, c_2max: float = 40.0) -> MechanismState:
    """Nominal-geometry state at the calibration pose (initial guess)."""
    stroke = calibration_stroke(geom)
    return place_at_calibration(geom, stroke, c_2max)


@lru_cache(maxsize=64)
def calibration_stroke(geom: MechanismGeometry, c_2max: float = 40.0) -> float:
    """Actuator stroke held during calibration.

    Taken as the stroke at which the middle slider of the nominal geometry
    reaches ``c_2max`` along the closing trajectory (both joints flexing
    together from extension).  Falls back to the stroke at the far corner of
    the joint box when the slider never reaches its limit there.
    """
    opts = SolveOptions(check_bounds=False, box_margin=math.radians(30.0))
    state = reference_state(geom)
    best = None
    prev = None
    for t in np.linspace(0.0, 1.0, 101):
        pose = FingerPose(t * math.radians(80.0), t * math.radians(90.0))
        state = solve_ik(geom, pose, replace(opts, warm_start=state))
        c2 = state.passive.c_2
        if prev is not None and (prev[0] - c_2max) * (c2 - c_2max) <= 0:
            # linear interpolation of the stroke at the crossing
            w = (c_2max - prev[0]) / (c2 - prev[0]) if c2 != prev[0] else 0.0
            best = prev[1] + w * (state.meas.l_x - prev[1])
            break
        prev = (c2, state.meas.l_x)
    if best is None:
        best = state.meas.l_x
    return float(best)


def place_at_calibration(geom: MechanismGeometry, stroke: float, c_2: float,
                         opts: SolveOptions = SolveOptions()) -> MechanismState:
    """State of a hand with this geometry when the actuator is at ``stroke``
    and the middle slider is at ``c_2`` (used to synthesise calibration data)."""
    model = LoopModel(geom)
    ref = reference_state(geom)
    z0 = ref.vector(geom.l_LM)
    best = None
    # march the stroke from the reference value to keep Newton on its branch
    for s in np.linspace(z0[IDX["l_x"]], stroke, 21):
        z0[IDX["l_x"]] = s
        target_c2 = ref.passive.c_2 + (c_2 - ref.passive.c_2) * (s - ref.meas.l_x) / (stroke - ref.meas.l_x) \
            if stroke != ref.meas.l_x else c_2
        z0[IDX["c_2"]] = target_c2
        z0, ok, iters, norm = newton(model, z0, CALIBRATION_POSE_UNKNOWNS, opts)
        if not ok:
            raise NonConvergence("cannot place the finger at the calibration pose", residual=norm,
                                 iterations=iters)
        best = z0
    return MechanismState.from_vector(_normalize(best))


# ------------------------------------------------------------ grids and paths

def iter_ik_grid(geom: MechanismGeometry, q_o1, q_o2, opts: SolveOptions = SolveOptions(),
                 start: Optional[MechanismState] = None, max_step: float = math.radians(2.0)):
    """Yield ``(i, states, converged, residual)`` for each grid row ``q_o1[i]``.

    The first row is marched along ``q_o2`` from the starting state; later
    rows advance all ``q_o2`` samples together along ``q_o1``, each step
    warm-started from the previous row.  Steps larger than ``max_step`` are
    subdivided.  Once a sample fails, it stays marked as failed.
    """
    q_o1 = np.asarray(q_o1, dtype=float)
    q_o2 = np.asarray(q_o2, dtype=float)
    if len(q_o1) == 0 or len(q_o2) == 0:
        return
    model = LoopModel(geom)
    state = start or reference_state(geom)
    z = state.vector(geom.l_LM)

    def march(z, col, a, b):
        n = max(1, int(math.ceil(abs(b - a) / max_step - 1e-9)))
        ok = np.ones(z.shape[:-1], dtype=bool)
        norm = np.zeros(z.shape[:-1])
        for t in np.linspace(a, b, n + 1)[1:]:
            z = z.copy()
            z[..., col] = t
            z, ok_t, _, norm = newton(model, z, IK_UNKNOWNS, opts)
            ok = ok & ok_t
        return z, ok, norm

    z, _, _ = march(z, IDX["q_o1"], z[IDX["q_o1"]], q_o1[0])
    z, _, _ = march(z, IDX["q_o2"], z[IDX["q_o2"]], q_o2[0])
    col = [z]
    okcol = [bool(np.max(np.abs(model.residual(z))) < opts.tolerance)]
    for a, b in zip(q_o2[:-1], q_o2[1:]):
        z, ok, _ = march(z, IDX["q_o2"], a, b)
        col.append(z)
        okcol.append(bool(ok) and okcol[-1])
    Z = np.array(col)
    Z[:, IDX["q_o2"]] = q_o2
    ok_rows = np.array(okcol)
    Zn = _normalize(Z)
    yield 0, Zn, ok_rows & _branch_ok(geom, Zn), np.max(np.abs(model.residual(Z)), axis=-1)
    for i in range(1, len(q_o1)):
        Z, ok, norm = march(Z, IDX["q_o1"], q_o1[i - 1], q_o1[i])
        ok_rows = ok_rows & ok
        Zn = _normalize(Z)
        yield i, Zn, ok_rows & _branch_ok(geom, Zn), norm


def solve_ik_grid(geom: MechanismGeometry, q_o1: np.ndarray, q_o2: np.ndarray,
                  opts: SolveOptions = SolveOptions(), start: Optional[MechanismState] = None,
                  max_step: float = math.radians(2.0)) -> GridSolution:
    """Inverse kinematics over a rectangular joint grid by continuation."""
    q_o1 = np.asarray(q_o1, dtype=float)
    q_o2 = np.asarray(q_o2, dtype=float)
    out = np.full((len(q_o1), len(q_o2), N_VARS), np.nan)
    conv = np.zeros((len(q_o1), len(q_o2)), dtype=bool)
    norms = np.full((len(q_o1), len(q_o2)), np.inf)
    for i, Z, ok, norm in iter_ik_grid(geom, q_o1, q_o2, opts, start, max_step):
        out[i], conv[i], norms[i] = Z, ok, norm
    return GridSolution(q_o1, q_o2, out, conv, norms)


def solve_fk_batch(geom: MechanismGeometry, l_x, q_B, opts: SolveOptions = SolveOptions(),
                   start: Optional[MechanismState] = None):
    """Numeric forward kinematics for many measurements from one start state.

    Returns ``(states, ok)``; ``ok`` is False for samples that failed to
    converge or landed outside the natural joint box.
    """
    l_x = np.atleast_1d(np.asarray(l_x, dtype=float))
    q_B = np.atleast_1d(np.asarray(q_B, dtype=float))
    start = start or reference_state(geom)
    z0 = np.tile(start.vector(geom.l_LM), (len(l_x), 1))
    z0[:, IDX["l_x"]] = l_x
    z0[:, IDX["q_B"]] = q_B
    z, conv, _, _ = newton(LoopModel(geom), z0, FK_UNKNOWNS, opts)
    z = _normalize(z)
    m = opts.box_margin
    in_box = ((z[:, IDX["q_o1"]] >= -m) & (z[:, IDX["q_o1"]] <= opts.q_o1_max + m)
              & (z[:, IDX["q_o2"]] >= -m) & (z[:, IDX["q_o2"]] <= opts.q_o2_max + m))
    return z, conv & in_box & _branch_ok(geom, z)


def solve_ik_path(geom: MechanismGeometry, poses: Sequence[FingerPose],
                  opts: SolveOptions = SolveOptions()) -> list:
    """Inverse kinematics along a trajectory, warm-starting each sample."""
    states = []
    prev = opts.warm_start
    for pose in poses:
        prev = solve_ik(geom, pose, replace(opts, warm_start=prev))
        states.append(prev)
    return states


def solve_fk_path(geom: MechanismGeometry, meas: Sequence[MeasuredState],
                  opts: SolveOptions = SolveOptions()) -> list:
    states = []
    prev = opts.warm_start
    for m in meas:
        prev = solve_fk_numeric(geom, m, replace(opts, warm_start=prev))
        states.append(prev)
    return states


def state_residual(geom: MechanismGeometry, state: MechanismState) -> float:
    return float(np.max(np.abs(LoopModel(geom).residual(state.vector(geom.l_LM)))))
