"""Mechanism geometry, state containers and the four loop-closure residuals.

Conventions
-----------
All lengths are millimetres and all angles radians inside the library; the
configuration file stores angles in degrees.  The metacarpophalangeal (MCP)
joint ``L`` is the origin, the extended finger points along +x and the back
of the hand faces +y.  Flexion is positive, so a phalanx at flexion ``q``
points along ``exp(-1j*q)``.

Every rigid body of the linkage keeps its points on one straight axis.  A
point's place on that axis is a signed distance from the body's reference
joint, and the ``side_*`` fields choose on which side of its neighbour a
point sits.  The bodies are

* rocker, pivoting on the base at ``K`` with absolute angle ``q_K``:
  carries ``B`` at ``l_BK``, ``H`` at ``side_KH*l_KH`` and ``G`` a further
  ``side_HG*l_HG`` from ``H``;
* coupler, jointed to the rocker at ``B`` with relative angle ``q_B`` (the
  instrumented joint, absolute angle ``q_K + q_B``): ``A`` at ``-l_AB``,
  ``C`` at ``l_BC``, the proximal slider ``I`` at ``l_BC + side_CI*l_CI``
  and ``D`` at ``l_BC + side_CD*l_CD``;
* distal body, jointed at ``D`` with absolute angle ``q_D``: ``E`` at
  ``l_DE``, the middle-phalanx slider ``J`` at ``l_DE + side_EJ*l_EJ`` and
  ``F`` at ``l_DE + side_EF*l_EF``;
* link ``GF`` with absolute angle ``q_G``;
* linear actuator from base point ``N`` to ``A`` with length ``l_act + l_x``
  and absolute angle ``q_N``.

The sliders run along the phalanges: ``I = L + (c_1 + 1j*h_I)*u1`` and
``J = M + (c_2 + 1j*h_J)*u2`` where ``u1, u2`` are the phalanx unit vectors,
``M = L + l_LM*u1`` is the PIP joint and ``h_I, h_J`` are pad heights.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import math
import warnings
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

VARIABLES = ("l_x", "q_B", "q_o1", "q_o2", "q_K", "q_D", "q_G", "q_N", "c_1", "c_2", "l_LM")
IDX = {name: i for i, name in enumerate(VARIABLES)}
N_VARS = len(VARIABLES)

RESIDUAL_LABELS = ("loop1_x", "loop1_y", "loop2_x", "loop2_y",
                   "loop3_x", "loop3_y", "loop4_x", "loop4_y")

# Variables entering each loop.  Used by tests and by the dependence audit.
LOOP_DEPENDENCE = {
    1: frozenset({"l_x", "q_B", "q_K", "q_N"}),
    2: frozenset({"q_B", "q_K", "c_1", "q_o1"}),
    3: frozenset({"q_B", "q_K", "q_D", "c_2", "q_o1", "q_o2", "l_LM"}),
    4: frozenset({"q_B", "q_K", "q_D", "q_G"}),
}

PRESETS = ("index", "middle", "ring", "little")

_LENGTH_FIELDS = ("l_AB", "l_BK", "l_BC", "l_CI", "l_CD", "l_DE", "l_EJ", "l_EF",
                  "l_KH", "l_HG", "l_GF", "l_KN", "l_LK", "l_act", "l_LM")
_SIDE_FIELDS = ("side_CI", "side_CD", "side_EJ", "side_EF", "side_KH", "side_HG",
                "branch_K", "branch_D")
# distances between points of one rigid body; accepted in files as a cross-check
_DERIVED_DISTANCES = ("l_AD", "l_BD")
# alternative config key -> canonical field
_ALIASES = {"l_KB": "l_BK", "l_ED": "l_DE", "l_GH": "l_HG", "l_HK": "l_KH",
            "l_FG": "l_GF", "l_BA": "l_AB", "l_CB": "l_BC", "l_IC": "l_CI",
            "l_DC": "l_CD", "l_JE": "l_EJ", "l_FE": "l_EF", "l_ML": "l_LM"}


class GeometryConsistencyWarning(UserWarning):
    """A listed distance disagrees with the one implied by the layout."""


@dataclass(frozen=True)
class MechanismGeometry:
    """Constant dimensions of one finger component.

    The six optimised lengths are ``l_EJ, l_CI, l_CD, l_DE, l_EF, l_BC``.
    Distances between non-adjacent points (``l_BD``, ``l_FD`` ...) are
    available as properties.
    """

    l_AB: float
    l_BK: float
    l_BC: float
    l_CI: float
    l_CD: float
    l_DE: float
    l_EJ: float
    l_EF: float
    l_KH: float
    l_HG: float
    l_GF: float
    l_KN: float
    q_KN: float
    l_LK: float
    q_LK: float
    l_act: float
    l_LM: float
    h_I: float = 0.0
    h_J: float = 0.0
    side_CI: int = 1
    side_CD: int = -1
    side_EJ: int = 1
    side_EF: int = -1
    side_KH: int = -1
    side_HG: int = 1
    branch_K: int = 1
    branch_D: int = 1

    def __post_init__(self):
        for name in _LENGTH_FIELDS:
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value)) or value <= 0:
                raise ConfigError(f"{name} must be a strictly positive length, got {value!r}", field=name)
        for name in ("q_KN", "q_LK", "h_I", "h_J"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}", field=name)
        for name in _SIDE_FIELDS:
            if getattr(self, name) not in (1, -1):
                raise ConfigError(f"{name} must be +1 or -1", field=name)
        # coincident points would make a body axis undefined
        for name in ("pos_I", "pos_D", "pos_J", "pos_F", "pos_G"):
            if abs(getattr(self, name)) < 1e-9:
                raise ConfigError(f"degenerate layout: {name} coincides with its body joint", field=name)

    # signed positions along each body axis
    @property
    def pos_A(self) -> float:
        return -self.l_AB

    @property
    def pos_I(self) -> float:
        return self.l_BC + self.side_CI * self.l_CI

    @property
    def pos_D(self) -> float:
        return self.l_BC + self.side_CD * self.l_CD

    @property
    def pos_H(self) -> float:
        return self.side_KH * self.l_KH

    @property
    def pos_G(self) -> float:
        return self.pos_H + self.side_HG * self.l_HG

    @property
    def pos_J(self) -> float:
        return self.l_DE + self.side_EJ * self.l_EJ

    @property
    def pos_F(self) -> float:
        return self.l_DE + self.side_EF * self.l_EF

    # distances between points of the same body
    @property
    def l_BD(self) -> float:
        return abs(self.pos_D)

    @property
    def l_AD(self) -> float:
        return abs(self.pos_D - self.pos_A)

    @property
    def l_BI(self) -> float:
        return abs(self.pos_I)

    @property
    def l_DI(self) -> float:
        return abs(self.pos_I - self.pos_D)

    @property
    def l_BH(self) -> float:
        return abs(self.l_BK - self.pos_H)

    @property
    def l_GK(self) -> float:
        return abs(self.pos_G)

    @property
    def l_BG(self) -> float:
        return abs(self.l_BK - self.pos_G)

    @property
    def l_FD(self) -> float:
        return abs(self.pos_F)

    @property
    def l_DF(self) -> float:
        return self.l_FD

    @property
    def l_DJ(self) -> float:
        return abs(self.pos_J)

    @property
    def l_ED(self) -> float:
        return self.l_DE

    @property
    def l_GH(self) -> float:
        return self.l_HG

    @property
    def l_KB(self) -> float:
        return self.l_BK

    @property
    def pos_K(self) -> complex:
        return complex(self.l_LK * math.cos(self.q_LK), self.l_LK * math.sin(self.q_LK))

    @property
    def pos_N(self) -> complex:
        return self.pos_K + complex(self.l_KN * math.cos(self.q_KN), self.l_KN * math.sin(self.q_KN))

    def optimized_lengths(self) -> tuple:
        return (self.l_EJ, self.l_CI, self.l_CD, self.l_DE, self.l_EF, self.l_BC)

    def with_lengths(self, **changes) -> "MechanismGeometry":
        changes = {_ALIASES.get(k, k): v for k, v in changes.items()}
        return replace(self, **changes)

    def digest(self) -> str:
        """Short stable hash of all parameters, used in output headers."""
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def as_config(self) -> dict:
        """Effective values in file units, grouped by config section."""
        links = {k: getattr(self, k) for k in ("l_AB", "l_BK", "l_BC", "l_CI", "l_CD", "l_DE",
                                               "l_EJ", "l_EF", "l_KH", "l_HG", "l_GF")}
        base = {"l_KN": self.l_KN, "q_KN": _exact_degrees(self.q_KN), "l_LK": self.l_LK,
                "q_LK": _exact_degrees(self.q_LK), "l_act": self.l_act}
        finger = {"l_LM": self.l_LM, "h_I": self.h_I, "h_J": self.h_J}
        layout = {k: getattr(self, k) for k in _SIDE_FIELDS}
        return {"links": links, "base": base, "finger": finger, "layout": layout}


def _exact_degrees(angle: float) -> float:
    """Shortest degree value that converts back to exactly ``angle``."""
    deg = math.degrees(angle)
    for digits in range(18):
        short = round(deg, digits)
        if math.radians(short) == angle:
            return short
    for cand in (deg, math.nextafter(deg, math.inf), math.nextafter(deg, -math.inf)):
        if math.radians(cand) == angle:
            return cand
    return deg


@dataclass(frozen=True)
class FingerPose:
    q_o1: float
    q_o2: float

    @classmethod
    def from_degrees(cls, mcp: float, pip: float) -> "FingerPose":
        return cls(math.radians(mcp), math.radians(pip))

    def degrees(self) -> tuple:
        return (math.degrees(self.q_o1), math.degrees(self.q_o2))

    def in_box(self, q_o1_max: float, q_o2_max: float, margin: float = 0.0) -> bool:
        return (-margin <= self.q_o1 <= q_o1_max + margin) and (-margin <= self.q_o2 <= q_o2_max + margin)


@dataclass(frozen=True)
class MeasuredState:
    l_x: float
    q_B: float

    def in_range(self, l_max: float = 50.0, q_B_max: float = math.radians(330.0)) -> bool:
        return 0.0 <= self.l_x <= l_max and 0.0 <= self.q_B <= q_B_max


@dataclass(frozen=True)
class PassiveState:
    q_K: float
    q_D: float
    q_G: float
    q_N: float
    c_1: float
    c_2: float

    def within_sliders(self, c_1max: float = 50.0, c_2max: float = 40.0) -> bool:
        return 0.0 <= self.c_1 <= c_1max and 0.0 <= self.c_2 <= c_2max


@dataclass(frozen=True)
class MechanismState:
    pose: FingerPose
    meas: MeasuredState
    passive: PassiveState

    def vector(self, l_LM: float) -> np.ndarray:
        return state_vector(self.pose, self.meas, self.passive, l_LM)

    @classmethod
    def from_vector(cls, z) -> "MechanismState":
        z = [float(v) for v in z]
        return cls(FingerPose(z[2], z[3]), MeasuredState(z[0], z[1]),
                   PassiveState(z[4], z[5], z[6], z[7], z[8], z[9]))


def state_vector(pose: FingerPose, meas: MeasuredState, passive: PassiveState, l_LM: float) -> np.ndarray:
    return np.array([meas.l_x, meas.q_B, pose.q_o1, pose.q_o2, passive.q_K, passive.q_D,
                     passive.q_G, passive.q_N, passive.c_1, passive.c_2, l_LM], dtype=float)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)


def wrap_positive(a):
    """Wrap to [0, 2*pi)."""
    return np.mod(np.asarray(a, dtype=float), 2 * np.pi)


class LoopModel:
    """Compiled exponential-form loop equations for one geometry.

    Each loop is a sum of terms ``length * exp(1j*angle)``.  A term's length is
    a constant, optionally multiplied by one state variable, and its angle is
    a linear combination of state variables plus a constant.  Residuals and
    their analytic partial derivatives are evaluated for a batch of state
    vectors of shape ``(..., 11)``.
    """

    def __init__(self, geom: MechanismGeometry):
        self.geom = geom
        terms = []   # (loop, coefficient, length variable or None, {var: k}, offset)
        g = geom
        qK = {"q_K": 1.0}
        qBody = {"q_K": 1.0, "q_B": 1.0}
        qD = {"q_D": 1.0}
        u1 = {"q_o1": -1.0}
        u2 = {"q_o1": -1.0, "q_o2": -1.0}
        half = math.pi / 2

        # loop 1: N -> A -> B -> K -> N
        terms += [(1, g.l_act, None, {"q_N": 1.0}, 0.0),
                  (1, 1.0, "l_x", {"q_N": 1.0}, 0.0),
                  (1, -g.pos_A, None, qBody, 0.0),
                  (1, -g.l_BK, None, qK, 0.0),
                  (1, g.l_KN, None, {}, g.q_KN)]
        # loop 2: K -> B -> I -> L -> K
        terms += [(2, g.l_BK, None, qK, 0.0),
                  (2, g.pos_I, None, qBody, 0.0),
                  (2, -1.0, "c_1", u1, 0.0),
                  (2, -g.h_I, None, u1, half),
                  (2, g.l_LK, None, {}, g.q_LK)]
        # loop 3: K -> B -> D -> J -> M -> L -> K
        terms += [(3, g.l_BK, None, qK, 0.0),
                  (3, g.pos_D, None, qBody, 0.0),
                  (3, g.pos_J, None, qD, 0.0),
                  (3, -1.0, "c_2", u2, 0.0),
                  (3, -g.h_J, None, u2, half),
                  (3, -1.0, "l_LM", u1, 0.0),
                  (3, g.l_LK, None, {}, g.q_LK)]
        # loop 4: B -> G -> F -> D -> B
        terms += [(4, g.pos_G - g.l_BK, None, qK, 0.0),
                  (4, g.l_GF, None, {"q_G": 1.0}, 0.0),
                  (4, -g.pos_F, None, qD, 0.0),
                  (4, -g.pos_D, None, qBody, 0.0)]
        # drop zero-length terms (pad heights default to zero)
        terms = [t for t in terms if t[1] != 0.0]

        n = len(terms)
        self.coef = np.array([t[1] for t in terms])
        self.len_onehot = np.zeros((n, N_VARS))
        self.has_len = np.zeros(n, dtype=bool)
        self.len_index = np.zeros(n, dtype=int)
        self.ang = np.zeros((n, N_VARS))
        self.offset = np.array([t[4] for t in terms])
        self.loop_matrix = np.zeros((n, 4))
        for i, (loop, _, lv, ang, _) in enumerate(terms):
            self.loop_matrix[i, loop - 1] = 1.0
            if lv is not None:
                self.has_len[i] = True
                self.len_index[i] = IDX[lv]
                self.len_onehot[i, IDX[lv]] = 1.0
            for var, k in ang.items():
                self.ang[i, IDX[var]] = k

    def _terms(self, z):
        theta = z @ self.ang.T + self.offset
        lengths = np.where(self.has_len, np.take(z, self.len_index, axis=-1), 1.0) * self.coef
        rot = np.exp(1j * theta)
        return rot, lengths * rot

    def residual(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        _, v = self._terms(z)
        c = v @ self.loop_matrix
        out = np.empty(z.shape[:-1] + (8,))
        out[..., 0::2] = c.real
        out[..., 1::2] = c.imag
        return out

    def jacobian(self, z) -> np.ndarray:
        """Partial derivatives d(residual)/d(state), shape (..., 8, 11)."""
        z = np.asarray(z, dtype=float)
        rot, v = self._terms(z)
        d = (rot * self.coef)[..., :, None] * self.len_onehot + 1j * v[..., :, None] * self.ang
        dc = np.einsum("...tk,tl->...lk", d, self.loop_matrix)
        out = np.empty(z.shape[:-1] + (8, N_VARS))
        out[..., 0::2, :] = dc.real
        out[..., 1::2, :] = dc.imag
        return out


def loop_residuals(geom: MechanismGeometry, pose: FingerPose, meas: MeasuredState,
                   passive: PassiveState) -> np.ndarray:
    """X and Y components of the four loop closures (mm).

    Order: loop1 x, loop1 y, loop2 x, loop2 y, ... loop4 y.
    """
    return LoopModel(geom).residual(state_vector(pose, meas, passive, geom.l_LM))


def point_positions(geom: MechanismGeometry, state: MechanismState) -> dict:
    """Ground-frame positions (complex, mm) of every named point."""
    p, m, s = state.pose, state.meas, state.passive
    e = lambda a: complex(math.cos(a), math.sin(a))
    L = 0j
    K = geom.pos_K
    N = geom.pos_N
    B = K + geom.l_BK * e(s.q_K)
    body = e(s.q_K + m.q_B)
    A = B + geom.pos_A * body
    C = B + geom.l_BC * body
    I = B + geom.pos_I * body
    D = B + geom.pos_D * body
    H = K + geom.pos_H * e(s.q_K)
    G = K + geom.pos_G * e(s.q_K)
    E = D + geom.l_DE * e(s.q_D)
    J = D + geom.pos_J * e(s.q_D)
    F = D + geom.pos_F * e(s.q_D)
    u1 = e(-p.q_o1)
    M = L + geom.l_LM * u1
    return {"L": L, "K": K, "N": N, "A": A, "B": B, "C": C, "I": I, "D": D,
            "H": H, "G": G, "E": E, "J": J, "F": F, "M": M}


# ---------------------------------------------------------------- config I/O

def _parse_number(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not a number: {raw!r}", field=key) from None


def load_geometry(source) -> MechanismGeometry:
    """Read a geometry document.

    ``source`` may be a path, the document text, a mapping of sections, or a
    preset name (``index``, ``middle``, ``ring``, ``little``).  Sections
    ``[links]``, ``[base]``, ``[finger]`` and the optional ``[layout]`` are
    read; missing base, finger and layout entries fall back to the index
    preset.  Angles are in degrees.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if isinstance(source, dict):
        parser.read_dict({sec: {k: str(v) for k, v in vals.items()} for sec, vals in source.items()})
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "[" not in source):
        name = str(source)
        if name in PRESETS:
            text = resources.files("fingerexo.data").joinpath(f"{name}.ini").read_text()
        else:
            path = Path(name)
            if not path.is_file():
                raise ConfigError(f"geometry file not found: {name}", field="config")
            text = path.read_text()
        _read_text(parser, text)
    else:
        _read_text(parser, source)

    defaults = _default_entries() if not (isinstance(source, str) and source == "index") else {}
    values = {}
    seen = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            canonical = _ALIASES.get(key, key)
            value = _parse_number(section, key, raw)
            if canonical in ("q_KN", "q_LK"):
                value = math.radians(value)
            if canonical in seen and not math.isclose(values[canonical], value, rel_tol=1e-9, abs_tol=1e-12):
                raise ConfigError(f"{key} disagrees with {seen[canonical]} ({value} vs {values[canonical]})",
                                  field=key)
            seen[canonical] = key
            values[canonical] = value

    required = ("l_AB", "l_BK", "l_BC", "l_CI", "l_CD", "l_DE", "l_EJ", "l_EF", "l_KH", "l_HG", "l_GF")
    for name in required:
        if name not in values:
            raise ConfigError(f"missing required length {name}", field=name)
    # distances fixed by the layout may be listed for cross-checking only
    checks = {k: values.pop(k) for k in _DERIVED_DISTANCES if k in values}
    known = {f.name for f in fields(MechanismGeometry)}
    for name in values:
        if name not in known:
            raise ConfigError(f"unknown key {name}", field=name)
    for name, value in defaults.items():
        values.setdefault(name, value)
    for name in _SIDE_FIELDS:
        if name in values:
            values[name] = int(values[name])
    for name in required:
        if values[name] <= 0:
            raise ConfigError(f"{name} must be strictly positive, got {values[name]}", field=name)
    geom = MechanismGeometry(**values)
    for name, given in checks.items():
        implied = getattr(geom, name)
        if not math.isclose(given, implied, rel_tol=1e-6, abs_tol=1e-6):
            warnings.warn(f"{name} = {given} does not match the layout ({implied:.6g}); the layout value is used",
                          GeometryConsistencyWarning, stacklevel=2)
    return geom


def _read_text(parser, text):
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse geometry document: {exc}", field="config") from None


def _default_entries():
    """Base, finger and layout entries of the index preset."""
    g = load_geometry("index")
    return {k: getattr(g, k) for k in ("l_KN", "q_KN", "l_LK", "q_LK", "l_act", "l_LM",
                                       "h_I", "h_J") + _SIDE_FIELDS}


def dump_geometry(geom: MechanismGeometry) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, vals in geom.as_config().items():
        parser[section] = {k: repr(float(v)) if not isinstance(v, int) else str(v) for k, v in vals.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------- anthropometrics

@dataclass(frozen=True)
class FingerDimensions:
    finger: str
    web_height: float
    proximal: float
    proximal_sd: float
    middle: float
    middle_sd: float
    distal: float
    distal_sd: float
    ratio_middle_distal: float
    ratio_proximal_distal: float
    rom_mcp: float
    rom_mcp_sd: float
    rom_pip: float
    rom_pip_sd: float
    rom_dip: float
    rom_dip_sd: float


class AnthropometricTable:
    """Read-only finger size and range-of-motion table (mm, degrees)."""

    VERSION = "1"

    def __init__(self, rows):
        self._rows = {r.finger: r for r in rows}

    @classmethod
    def load(cls) -> "AnthropometricTable":
        text = resources.files("fingerexo.data").joinpath("anthropometrics.csv").read_text()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = []
        for rec in csv.DictReader(lines):
            finger = rec.pop("finger")
            rows.append(FingerDimensions(finger, **{k: float(v) for k, v in rec.items()}))
        return cls(rows)

    def __getitem__(self, finger: str) -> FingerDimensions:
        return self._rows[finger]

    def __iter__(self):
        return iter(self._rows.values())

    def fingers(self):
        return tuple(self._rows)
