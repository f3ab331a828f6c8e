"""Haptic rendering for a mechanism with fewer actuators than finger joints.

Only torques on the line ``j_passive . tau = 0`` can be produced by the
single actuator.  The strategies here turn a desired interaction into a
realisable one:

* actuator-level and joint-level virtual limits (clamped targets),
* torque projection onto the feasible line (proxy torque),
* pose projection under an estimated joint stiffness (proxy pose),
* the linearised subspace proxy for a general device-to-virtual map,
  next to the standard Jacobian-transpose and null-space variants.

Displayed-impedance audits return the theoretical matrix of each method,
ignoring the change of the Jacobian with the configuration, and a
finite-difference estimate over a log that exposes that omission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (DegenerateK, DegeneratePassiveColumn, EmptySeries, PreconditionError,
                     RankDeficientMapping, RankDeficientNonactuated)

PASSIVITY_TOL = 1e-12
_DEGENERATE = 1e-12


# --------------------------------------------------------- virtual limits

@dataclass(frozen=True)
class RenderTarget:
    mode: str = "actuator"                          # actuator | joint
    l_x_lim: float = 30.0                           # mm
    K_ac: float = 1.0                               # N/mm
    q_lim: tuple = (math.radians(30.0), math.radians(30.0))
    K_cont: tuple = (100.0, 100.0)                  # diagonal, N*mm/rad
    direction: int = 1                              # penetration where value exceeds the limit

    def __post_init__(self):
        if self.mode not in ("actuator", "joint"):
            raise PreconditionError(f"unknown render mode {self.mode!r}")
        if self.K_ac < 0 or min(self.K_cont) < 0:
            raise PreconditionError("stiffnesses must be non-negative")
        if self.direction not in (1, -1):
            raise PreconditionError("direction must be +1 or -1")

    @property
    def K_cont_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.K_cont, dtype=float))


def clamp_desired(value, limit, direction: int = 1):
    """Desired value under a virtual limit: the actual value until the
    limit is crossed, the limit beyond it.  Works elementwise."""
    value = np.asarray(value, dtype=float)
    limit = np.asarray(limit, dtype=float)
    out = np.minimum(value, limit) if direction > 0 else np.maximum(value, limit)
    return float(out) if out.ndim == 0 else out


def actuator_level_force(target: RenderTarget, l_x: float) -> float:
    """Spring force on the stroke, zero inside the limit and never pushing
    further into it."""
    if target.mode != "actuator":
        raise PreconditionError("actuator-level force needs an actuator-mode target")
    desired = clamp_desired(l_x, target.l_x_lim, target.direction)
    F = target.K_ac * (desired - l_x)
    F = min(F, 0.0) if target.direction > 0 else max(F, 0.0)
    return F + 0.0   # drop negative zero


def joint_level_torques(target: RenderTarget, q) -> np.ndarray:
    """Desired joint torques from the clamped joint pose and contact stiffness."""
    if target.mode != "joint":
        raise PreconditionError("joint-level torques need a joint-mode target")
    q = np.asarray(q, dtype=float)
    q_d = clamp_desired(q, target.q_lim, target.direction)
    return target.K_cont_matrix @ (q_d - q) + 0.0


# ----------------------------------------------------- proxy strategies

def _columns(jac) -> tuple:
    """(j_active, j_passive) from a JacobianSet or an explicit pair."""
    if hasattr(jac, "j_active"):
        return np.asarray(jac.j_active, dtype=float), np.asarray(jac.j_passive, dtype=float)
    a, p = jac
    return np.asarray(a, dtype=float), np.asarray(p, dtype=float)


@dataclass(frozen=True)
class ProxyTorque:
    tau_star: np.ndarray
    F_a: float


@dataclass(frozen=True)
class ProxyPose:
    q_star: np.ndarray
    tau_star: np.ndarray
    F_a: float


def feasible_projector(j_passive) -> np.ndarray:
    """I - J_p (J_p^T J_p)^-1 J_p^T for a single passive column."""
    jp = np.asarray(j_passive, dtype=float).reshape(-1, 1)
    nrm = (jp.T @ jp).item()
    if nrm < _DEGENERATE:
        raise DegeneratePassiveColumn("passive column is numerically zero")
    return np.eye(len(jp)) - jp @ jp.T / nrm


def project_torques(jac, tau) -> ProxyTorque:
    """Closest realisable torques (Euclidean) and the actuator force."""
    ja, jp = _columns(jac)
    tau = np.asarray(tau.vector() if hasattr(tau, "vector") else tau, dtype=float)
    tau_star = feasible_projector(jp) @ tau
    return ProxyTorque(tau_star, float(ja @ tau_star))


def project_pose(jac, K_stiff, q_o, q_d) -> ProxyPose:
    """Closest pose to ``q_d`` whose spring torques about ``q_o`` are realisable.

    With ``K = K_stiff J_p`` the proxy is ``q_d - K (K^T K)^-1 K^T (q_d - q_o)``;
    torques follow the spring law ``K_stiff (q* - q_o)``.
    """
    ja, jp = _columns(jac)
    Ks = np.asarray(K_stiff, dtype=float)
    q_o = np.asarray(q_o.vector() if hasattr(q_o, "vector") else q_o, dtype=float)
    q_d = np.asarray(q_d.vector() if hasattr(q_d, "vector") else q_d, dtype=float)
    K = (Ks @ jp).reshape(-1, 1)
    KtK = (K.T @ K).item()
    if KtK < _DEGENERATE:
        raise DegenerateK("stiffness-weighted passive column is numerically zero")
    d = q_d - q_o
    q_star = q_d - (K @ (K.T @ d)).ravel() / KtK
    tau_star = Ks @ (q_star - q_o)
    return ProxyPose(q_star, tau_star, float(ja @ tau_star))


def behavior_alignment(q_star_series, q_series) -> np.ndarray:
    """Cosine between the proxy offset and the next step of the finger.

    Entry ``k`` compares ``q*_k - q_k`` with ``q_{k+1} - q_k``; samples
    where either vector vanishes are NaN.
    """
    qs = np.asarray(q_star_series, dtype=float)
    q = np.asarray(q_series, dtype=float)
    if len(q) < 2 or qs.shape != q.shape:
        raise PreconditionError("need two aligned series of length >= 2")
    off = qs[:-1] - q[:-1]
    step = np.diff(q, axis=0)
    n1 = np.linalg.norm(off, axis=-1)
    n2 = np.linalg.norm(step, axis=-1)
    out = np.full(len(step), np.nan)
    ok = (n1 > _DEGENERATE) & (n2 > _DEGENERATE)
    out[ok] = np.einsum("ij,ij->i", off[ok], step[ok]) / (n1[ok] * n2[ok])
    return out


# --------------------------------------------------- stiffness estimation

@dataclass(frozen=True)
class StiffnessOptions:
    epsilon: float = 1e-3        # rad/s, velocity guard
    K_min: float = 1.0
    K_max: float = 1e4
    half_life: float = 0.05      # s
    dt: float = 1e-3

    def __post_init__(self):
        if not (0 < self.K_min <= self.K_max) or self.epsilon <= 0 or self.half_life <= 0 or self.dt <= 0:
            raise PreconditionError("invalid stiffness-estimation options")


@dataclass
class StiffnessEstimate:
    K_stiff: np.ndarray
    guarded_fraction: float = 0.0
    low_confidence: bool = False
    samples: int = 0


class StiffnessEstimator:
    """Per-joint ratio of torque to velocity, guarded, smoothed and clamped."""

    def __init__(self, n: int = 2, options: StiffnessOptions = StiffnessOptions()):
        self.options = options
        self.alpha = 1.0 - 2.0 ** (-options.dt / options.half_life)
        self.value: Optional[np.ndarray] = None
        self.guarded = 0
        self.count = 0
        self.n = n

    def update(self, tau, qdot) -> np.ndarray:
        o = self.options
        tau = np.asarray(tau, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
        small = np.abs(qdot) < o.epsilon
        safe = np.where(small, np.where(qdot < 0, -o.epsilon, o.epsilon), qdot)
        raw = np.clip(tau / safe, o.K_min, o.K_max)
        self.value = raw if self.value is None else self.value + self.alpha * (raw - self.value)
        self.value = np.clip(self.value, o.K_min, o.K_max)
        self.guarded += int(small.any())
        self.count += 1
        return self.value

    def estimate(self) -> StiffnessEstimate:
        if self.value is None:
            raise EmptySeries("no samples")
        frac = self.guarded / self.count
        return StiffnessEstimate(np.diag(self.value), frac, frac > 0.5, self.count)


def estimate_joint_stiffness(torque_series, velocity_series,
                             options: StiffnessOptions = StiffnessOptions()) -> StiffnessEstimate:
    tau = np.atleast_2d(np.asarray(torque_series, dtype=float))
    qd = np.atleast_2d(np.asarray(velocity_series, dtype=float))
    if tau.size == 0 or qd.size == 0:
        raise EmptySeries("empty torque or velocity series")
    if tau.shape != qd.shape:
        raise PreconditionError("torque and velocity series must be aligned")
    est = StiffnessEstimator(tau.shape[1], options)
    for t, v in zip(tau, qd):
        est.update(t, v)
    return est.estimate()


# ------------------------------------------------------ subspace proxy

@dataclass
class VirtualMapping:
    """Linearised map from device coordinates to virtual coordinates.

    ``actuated`` lists the device coordinates driven by motors; ``Z_q``
    acts on those coordinates, ``Z_x`` on the virtual ones.
    """
    J: np.ndarray
    actuated: tuple
    Z_q: Optional[np.ndarray] = None
    Z_x: Optional[np.ndarray] = None

    def __post_init__(self):
        self.J = np.atleast_2d(np.asarray(self.J, dtype=float))
        m, n = self.J.shape
        if m < 1 or n < 1:
            raise PreconditionError("J must be at least 1 x 1")
        self.actuated = tuple(int(i) for i in self.actuated)
        if not self.actuated or len(set(self.actuated)) != len(self.actuated) or \
                not all(0 <= i < n for i in self.actuated):
            raise PreconditionError("actuated must be distinct device indices")
        na = len(self.actuated)
        self.Z_q = np.eye(na) if self.Z_q is None else np.atleast_2d(np.asarray(self.Z_q, dtype=float))
        self.Z_x = np.eye(m) if self.Z_x is None else np.atleast_2d(np.asarray(self.Z_x, dtype=float))
        if self.Z_q.shape != (na, na) or self.Z_x.shape != (m, m):
            raise PreconditionError("impedance shapes do not match the mapping")

    @property
    def S(self) -> np.ndarray:
        S = np.zeros((len(self.actuated), self.J.shape[1]))
        S[np.arange(len(self.actuated)), self.actuated] = 1.0
        return S

    @property
    def nonactuated(self) -> tuple:
        return tuple(i for i in range(self.J.shape[1]) if i not in self.actuated)

    @property
    def J_a(self) -> np.ndarray:
        return self.J[:, list(self.actuated)]

    @property
    def J_n(self) -> np.ndarray:
        return self.J[:, list(self.nonactuated)]


def normalized_virtual_impedance(J_a_series) -> np.ndarray:
    """Identity virtual stiffness scaled by the squared mean norm of J_a."""
    norms = [np.linalg.norm(np.asarray(Ja, dtype=float)) for Ja in J_a_series]
    if not norms:
        raise EmptySeries("no Jacobians supplied")
    avg = float(np.mean(norms))
    if avg <= 0:
        raise RankDeficientMapping("actuated Jacobian vanishes along the log")
    m = np.atleast_2d(np.asarray(J_a_series[0])).shape[0]
    return np.eye(m) / avg ** 2


def subspace_proxy(vmap: VirtualMapping, delta_x) -> tuple:
    """Least-squares device displacement for a virtual one, and actuator forces."""
    J = vmap.J
    dx = np.asarray(delta_x, dtype=float)
    JtJ = J.T @ J
    if np.linalg.matrix_rank(JtJ) < JtJ.shape[0]:
        raise RankDeficientMapping("J^T J is singular")
    dq = np.linalg.solve(JtJ, J.T @ dx)
    return dq, vmap.Z_q @ (vmap.S @ dq)


def _nullspace_projector(J_n: np.ndarray) -> np.ndarray:
    m = J_n.shape[0]
    if J_n.shape[1] == 0:
        return np.eye(m)
    G = J_n.T @ J_n
    if np.linalg.matrix_rank(G) < G.shape[0]:
        raise RankDeficientNonactuated("J_n^T J_n is singular")
    return np.eye(m) - J_n @ np.linalg.solve(G, J_n.T)


def standard_and_nullspace_force(vmap: VirtualMapping, delta_x) -> dict:
    dx = np.asarray(delta_x, dtype=float)
    f = vmap.Z_x @ dx
    return {"standard": vmap.J_a.T @ f,
            "nullspace": vmap.J_a.T @ (_nullspace_projector(vmap.J_n) @ f)}


@dataclass(frozen=True)
class ImpedanceReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    passive: bool


def _report(M: np.ndarray, tol: float = PASSIVITY_TOL) -> ImpedanceReport:
    M = np.atleast_2d(M)
    if M.shape[0] == M.shape[1]:
        ev = np.linalg.eigvals(M)
        ev = ev.real if np.allclose(ev.imag, 0.0) else ev
        passive = bool(np.all(np.real(ev) <= tol))
    else:
        # a single actuator row: the entries are the stiffness felt per joint
        ev = M.ravel()
        passive = bool(np.all(ev <= tol))
    return ImpedanceReport(M, ev, passive)


def displayed_impedance(method: str, source, impedance=None, K_stiff=None,
                        tol: float = PASSIVITY_TOL) -> ImpedanceReport:
    """Theoretical displayed impedance of a rendering method.

    ``standard``, ``nullspace`` and ``subspace`` take a :class:`VirtualMapping`.
    ``proxy_torque`` and ``proxy_pose`` take the mechanism columns (a
    JacobianSet or ``(j_active, j_passive)``) and the contact stiffness as
    ``impedance``; ``proxy_pose`` also needs ``K_stiff``.
    """
    if method in ("standard", "nullspace", "subspace"):
        vm = source
        if method == "subspace":
            return _report(-vm.S.T @ vm.Z_q @ vm.S, tol)
        inner = vm.Z_x if method == "standard" else _nullspace_projector(vm.J_n) @ vm.Z_x
        return _report(-vm.S.T @ vm.J_a.T @ inner @ vm.J, tol)
    ja, jp = _columns(source)
    Kc = np.atleast_2d(np.asarray(impedance, dtype=float))
    if method == "proxy_torque":
        return _report(-(ja @ feasible_projector(jp) @ Kc).reshape(1, -1), tol)
    if method == "proxy_pose":
        if K_stiff is None:
            raise PreconditionError("proxy_pose needs K_stiff")
        K = (np.asarray(K_stiff, dtype=float) @ jp).reshape(-1, 1)
        KtK = (K.T @ K).item()
        if KtK < _DEGENERATE:
            raise DegenerateK("stiffness-weighted passive column is numerically zero")
        P = np.eye(len(K)) - K @ K.T / KtK
        return _report(-(ja @ Kc @ P).reshape(1, -1), tol)
    raise PreconditionError(f"unknown method {method!r}")


def finite_difference_impedance(force_series, q_series, min_step: float = 1e-9) -> np.ndarray:
    """Frame-to-frame ratio of actuator-force change to actuated-coordinate change.

    Frames where the coordinate barely moves are NaN.
    """
    f = np.asarray(force_series, dtype=float)
    q = np.asarray(q_series, dtype=float)
    if len(f) < 2 or f.shape != q.shape:
        raise PreconditionError("need two aligned series of length >= 2")
    df, dq = np.diff(f), np.diff(q)
    out = np.full(len(df), np.nan)
    ok = np.abs(dq) > min_step
    out[ok] = df[ok] / dq[ok]
    return out


def random_spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * 1e-3 * np.eye(n))


def find_nonpassive_standard(rng: np.random.Generator, m: int = 2, n: int = 2, actuated=(0,),
                             tries: int = 10000) -> Optional[tuple]:
    """Search a coupled virtual stiffness for which the standard method is active.

    Candidates have positive diagonal stiffness and random symmetric
    coupling.  Returns ``(vmap, report)`` for the first case with a
    positive eigenvalue, or ``None``.
    """
    for _ in range(tries):
        J = rng.normal(size=(m, n))
        d = rng.uniform(0.1, 2.0, size=m)
        C = rng.normal(scale=2.0, size=(m, m))
        Z_x = np.diag(d) + (C + C.T) / 2 * (1 - np.eye(m))
        vm = VirtualMapping(J, actuated, Z_x=Z_x)
        rep = displayed_impedance("standard", vm)
        if np.max(np.real(rep.eigenvalues)) > 1e-6:
            return vm, rep
    return None


# --------------------------------------------------------- session

@dataclass
class RenderCommand:
    tau_desired: np.ndarray
    q_star: Optional[np.ndarray]
    tau_star: np.ndarray
    F_a: float
    impedance: ImpedanceReport


@dataclass
class RenderSession:
    """Per-tick joint-limit rendering; owns the stiffness estimator state."""
    target: RenderTarget
    method: str = "proxy_torque"                  # proxy_torque | proxy_pose
    options: StiffnessOptions = field(default_factory=StiffnessOptions)
    estimator: Optional[StiffnessEstimator] = None

    def __post_init__(self):
        if self.method not in ("proxy_torque", "proxy_pose"):
            raise PreconditionError(f"unknown session method {self.method!r}")
        self.estimator = self.estimator or StiffnessEstimator(2, self.options)

    def tick(self, jac, q, tau_user=None, qdot=None) -> RenderCommand:
        q = np.asarray(q, dtype=float)
        tau_d = joint_level_torques(self.target, q)
        Kc = self.target.K_cont_matrix
        if self.method == "proxy_torque":
            res = project_torques(jac, tau_d)
            rep = displayed_impedance("proxy_torque", jac, Kc)
            return RenderCommand(tau_d, None, res.tau_star, res.F_a, rep)
        if tau_user is not None and qdot is not None:
            self.estimator.update(np.abs(tau_user), np.abs(qdot))
        K_stiff = np.diag(self.estimator.value) if self.estimator.value is not None else np.eye(2)
        q_d = clamp_desired(q, self.target.q_lim, self.target.direction)
        res = project_pose(jac, K_stiff, q, q_d)
        rep = displayed_impedance("proxy_pose", jac, Kc, K_stiff=K_stiff)
        return RenderCommand(tau_d, res.q_star, res.tau_star, res.F_a, rep)
